//! A small differentiable next-token scorer with hand-written gradients.
//!
//! Each prediction step sees the previous token and a bag of context tokens:
//!
//! ```text
//! h0     = prev_emb[prev] + mean(ctx_emb[c] for c in ctx)
//! h(l+1) = h(l) + tanh(W_l h(l) + b_l)        for each block l
//! logits = out_w h(L) + out_b
//! ```
//!
//! Left-to-right: the context is the token prefix. Seq-to-seq: the context
//! is the encoder input (mask replaced by the sentinel) and the decoder
//! starts from the sentinel. The final block is the "last layer"; the
//! embeddings and the output head are never part of it.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tokenizer::{WordTokenizer, BOS, SENTINEL};
use crate::backend::{
    BackendError, ModelFamily, ParamSelection, Runtime, SpanScore, TrainConfig, TrainReceipt, TrainScope,
    TrainingInstance,
};
use crate::text::split_at_mask;

const STATE_MAGIC: &[u8; 8] = b"EKPTINY1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyConfig {
    pub family: ModelFamily,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default)]
    pub init_seed: u64,
}

fn default_hidden() -> usize {
    16
}

fn default_layers() -> usize {
    2
}

impl TinyConfig {
    pub fn new(family: ModelFamily) -> Self {
        Self {
            family,
            hidden: default_hidden(),
            layers: default_layers(),
            init_seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
struct Layout {
    vocab: usize,
    hidden: usize,
    prev_emb: Range<usize>,
    ctx_emb: Range<usize>,
    blocks: Vec<(Range<usize>, Range<usize>)>,
    out_w: Range<usize>,
    out_b: Range<usize>,
}

impl Layout {
    fn new(vocab: usize, hidden: usize, layers: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let prev_emb = take(vocab * hidden);
        let ctx_emb = take(vocab * hidden);
        let blocks = (0..layers).map(|_| (take(hidden * hidden), take(hidden))).collect();
        let out_w = take(vocab * hidden);
        let out_b = take(vocab);
        Self {
            vocab,
            hidden,
            prev_emb,
            ctx_emb,
            blocks,
            out_w,
            out_b,
        }
    }

    fn total(&self) -> usize {
        self.out_b.end
    }

    fn last_layer(&self) -> Range<usize> {
        let (w, b) = self.blocks.last().expect("at least one block");
        w.start..b.end
    }
}

/// One prediction: `target` given `prev` and a bag of `ctx` tokens.
#[derive(Clone, Debug)]
struct Step {
    ctx: Vec<u32>,
    prev: u32,
    target: u32,
}

#[derive(Clone, Debug)]
pub struct TinyTrainableModel {
    config: TinyConfig,
    tokenizer: WordTokenizer,
    layout: Layout,
    params: Vec<f64>,
}

impl TinyTrainableModel {
    pub fn new(config: TinyConfig, tokenizer: WordTokenizer) -> Result<Self, BackendError> {
        if config.hidden == 0 || config.layers == 0 {
            return Err(BackendError::BadConfig(
                "hidden size and layer count must be positive".into(),
            ));
        }
        for reserved in [BOS, SENTINEL] {
            if tokenizer.id(reserved).is_none() {
                return Err(BackendError::BadConfig(format!("vocabulary lacks '{reserved}'")));
            }
        }
        let layout = Layout::new(tokenizer.len(), config.hidden, config.layers);
        let mut params = vec![0.0; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let w_scale = 1.0 / (config.hidden as f64).sqrt();
        for i in layout.prev_emb.clone().chain(layout.ctx_emb.clone()) {
            params[i] = rng.gen_range(-0.5..0.5);
        }
        for (w, _) in &layout.blocks {
            for i in w.clone() {
                params[i] = rng.gen_range(-w_scale..w_scale);
            }
        }
        for i in layout.out_w.clone() {
            params[i] = rng.gen_range(-0.1..0.1);
        }
        Ok(Self {
            config,
            tokenizer,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &TinyConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &WordTokenizer {
        &self.tokenizer
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Index range of the final block's parameters.
    pub fn last_layer_range(&self) -> Range<usize> {
        self.layout.last_layer()
    }

    fn id(&self, token: &str) -> u32 {
        self.tokenizer.id(token).expect("reserved token present")
    }

    fn instance_steps(&self, inst: &TrainingInstance) -> Result<Vec<Step>, BackendError> {
        match inst.family {
            ModelFamily::LeftToRight => {
                let tokens = self.tokenizer.encode(&inst.input_text)?;
                if tokens.is_empty() {
                    return Err(BackendError::NoTokens(inst.input_text.clone()));
                }
                Ok(self.continuation_steps(&[], &tokens))
            }
            ModelFamily::SeqToSeq => {
                let enc = self.tokenizer.encode(&inst.input_text)?;
                let target = self.tokenizer.encode(&inst.target_text)?;
                if target.is_empty() {
                    return Err(BackendError::NoTokens(inst.target_text.clone()));
                }
                Ok(self.decoder_steps(&enc, &target))
            }
        }
    }

    fn continuation_steps(&self, prefix: &[u32], tokens: &[u32]) -> Vec<Step> {
        let mut seen = prefix.to_vec();
        let mut steps = Vec::with_capacity(tokens.len());
        for &t in tokens {
            steps.push(Step {
                ctx: seen.clone(),
                prev: seen.last().copied().unwrap_or_else(|| self.id(BOS)),
                target: t,
            });
            seen.push(t);
        }
        steps
    }

    fn decoder_steps(&self, enc: &[u32], target: &[u32]) -> Vec<Step> {
        let mut prev = self.id(SENTINEL);
        target
            .iter()
            .map(|&t| {
                let s = Step {
                    ctx: enc.to_vec(),
                    prev,
                    target: t,
                };
                prev = t;
                s
            })
            .collect()
    }

    fn span_steps(&self, probe: &str, span: &str) -> Result<Vec<Step>, BackendError> {
        let (left, _) = split_at_mask(probe).ok_or(BackendError::BadMask(crate::text::mask_count(probe)))?;
        let span_ids = self.tokenizer.encode(span)?;
        if span_ids.is_empty() {
            return Err(BackendError::NoTokens(span.to_string()));
        }
        Ok(match self.config.family {
            ModelFamily::LeftToRight => {
                let prefix = self.tokenizer.encode(left)?;
                self.continuation_steps(&prefix, &span_ids)
            }
            ModelFamily::SeqToSeq => {
                let enc = self.tokenizer.encode(probe)?;
                self.decoder_steps(&enc, &span_ids)
            }
        })
    }

    /// Negative log-likelihood of one step, accumulating its gradient into
    /// `grad` (scaled by `weight`) when given.
    fn step(&self, params: &[f64], step: &Step, grad: Option<(&mut [f64], f64)>) -> f64 {
        let d = self.layout.hidden;
        let v = self.layout.vocab;
        let l = &self.layout;

        let mut h = vec![0.0; d];
        let prev_row = l.prev_emb.start + step.prev as usize * d;
        h.copy_from_slice(&params[prev_row..prev_row + d]);
        let ctx_scale = if step.ctx.is_empty() {
            0.0
        } else {
            1.0 / step.ctx.len() as f64
        };
        for &c in &step.ctx {
            let row = l.ctx_emb.start + c as usize * d;
            for k in 0..d {
                h[k] += ctx_scale * params[row + k];
            }
        }

        // Keep each block's input and activation for the backward pass.
        let mut inputs = Vec::with_capacity(l.blocks.len());
        let mut acts = Vec::with_capacity(l.blocks.len());
        for (w, b) in &l.blocks {
            let mut a = vec![0.0; d];
            for i in 0..d {
                let row = &params[w.start + i * d..w.start + (i + 1) * d];
                let z: f64 = params[b.start + i] + row.iter().zip(&h).map(|(x, y)| x * y).sum::<f64>();
                a[i] = z.tanh();
            }
            inputs.push(h.clone());
            for i in 0..d {
                h[i] += a[i];
            }
            acts.push(a);
        }

        let mut logits = vec![0.0; v];
        for (j, logit) in logits.iter_mut().enumerate() {
            let row = &params[l.out_w.start + j * d..l.out_w.start + (j + 1) * d];
            *logit = params[l.out_b.start + j] + row.iter().zip(&h).map(|(x, y)| x * y).sum::<f64>();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        let nll = log_z - logits[step.target as usize];

        let Some((grad, weight)) = grad else {
            return nll;
        };

        // d nll / d logits = softmax - onehot
        let mut g_logits: Vec<f64> = logits.iter().map(|z| (z - log_z).exp() * weight).collect();
        g_logits[step.target as usize] -= weight;

        let mut g_h = vec![0.0; d];
        for (j, &g) in g_logits.iter().enumerate() {
            grad[l.out_b.start + j] += g;
            let row = l.out_w.start + j * d;
            for k in 0..d {
                grad[row + k] += g * h[k];
                g_h[k] += g * params[row + k];
            }
        }

        for (idx, (w, b)) in l.blocks.iter().enumerate().rev() {
            let a = &acts[idx];
            let input = &inputs[idx];
            let g_z: Vec<f64> = (0..d).map(|i| g_h[i] * (1.0 - a[i] * a[i])).collect();
            let mut g_in = g_h.clone();
            for i in 0..d {
                grad[b.start + i] += g_z[i];
                let row = w.start + i * d;
                for k in 0..d {
                    grad[row + k] += g_z[i] * input[k];
                    g_in[k] += g_z[i] * params[row + k];
                }
            }
            g_h = g_in;
        }

        for k in 0..d {
            grad[prev_row + k] += g_h[k];
        }
        for &c in &step.ctx {
            let row = l.ctx_emb.start + c as usize * d;
            for k in 0..d {
                grad[row + k] += ctx_scale * g_h[k];
            }
        }
        nll
    }

    fn mean_loss(&self, params: &[f64], steps: &[Step], mut grad: Option<&mut [f64]>) -> f64 {
        let weight = 1.0 / steps.len() as f64;
        let mut total = 0.0;
        for s in steps {
            total += self.step(params, s, grad.as_deref_mut().map(|g| (g, weight)));
        }
        total * weight
    }

    /// Mean per-token loss of an instance and its gradient.
    pub fn loss_and_gradient(&self, inst: &TrainingInstance) -> Result<(f64, Vec<f64>), BackendError> {
        let steps = self.instance_steps(inst)?;
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.mean_loss(&self.params, &steps, Some(&mut grad));
        if !loss.is_finite() {
            return Err(BackendError::NonFinite(format!("loss {loss}")));
        }
        Ok((loss, grad))
    }

    pub fn loss(&self, inst: &TrainingInstance) -> Result<f64, BackendError> {
        let steps = self.instance_steps(inst)?;
        let loss = self.mean_loss(&self.params, &steps, None);
        if !loss.is_finite() {
            return Err(BackendError::NonFinite(format!("loss {loss}")));
        }
        Ok(loss)
    }

    fn loss_at(&self, params: &[f64], steps: &[Step]) -> f64 {
        self.mean_loss(params, steps, None)
    }
}

/// Worst disagreement between the analytic gradient and central finite
/// differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub worst_parameter: usize,
    pub parameters_checked: usize,
}

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor so parameters with vanishing gradients do not turn
/// rounding noise into huge relative errors.
pub const FD_FLOOR: f64 = 1e-6;

/// Compare the analytic gradient of `inst`'s loss against central finite
/// differences over every parameter. Leaves the model unchanged.
pub fn gradient_check(model: &TinyTrainableModel, inst: &TrainingInstance) -> Result<GradientCheck, BackendError> {
    let (_, analytic) = model.loss_and_gradient(inst)?;
    let steps = model.instance_steps(inst)?;
    let mut params = model.params.clone();
    let mut worst = (0.0f64, 0usize);
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + FD_STEP;
        let up = model.loss_at(&params, &steps);
        params[i] = orig - FD_STEP;
        let down = model.loss_at(&params, &steps);
        params[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(BackendError::NonFinite(format!("loss while perturbing parameter {i}")));
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(GradientCheck {
        max_relative_error: worst.0,
        worst_parameter: worst.1,
        parameters_checked: params.len(),
    })
}

impl Runtime for TinyTrainableModel {
    fn family(&self) -> ModelFamily {
        self.config.family
    }

    fn runtime_id(&self) -> String {
        let family = match self.config.family {
            ModelFamily::LeftToRight => "l2r",
            ModelFamily::SeqToSeq => "s2s",
        };
        format!(
            "tiny:{family}:v{}:d{}:l{}:s{}:{}",
            self.layout.vocab,
            self.config.hidden,
            self.config.layers,
            self.config.init_seed,
            self.tokenizer.digest()
        )
    }

    fn tokenizer_id(&self) -> String {
        format!("words:{}", self.tokenizer.digest())
    }

    fn score_span(&self, probe: &str, span: &str) -> Result<SpanScore, BackendError> {
        let steps = self.span_steps(probe, span)?;
        let nlls = steps.iter().map(|s| self.step(&self.params, s, None)).collect();
        SpanScore::new(nlls)
    }

    fn train(&mut self, instances: &[TrainingInstance], config: &TrainConfig) -> Result<TrainReceipt, BackendError> {
        let mut receipt = TrainReceipt::default();
        if config.epochs == 0 || instances.is_empty() {
            return Ok(receipt);
        }
        let steps: Vec<Vec<Step>> = instances
            .iter()
            .map(|i| self.instance_steps(i))
            .collect::<Result<_, _>>()?;
        let before = self.params.clone();
        let scope = match config.scope {
            TrainScope::Full => 0..self.params.len(),
            TrainScope::LastLayer => self.layout.last_layer(),
        };
        let mut grad = vec![0.0; self.params.len()];
        for _ in 0..config.epochs {
            let mut epoch_loss = 0.0;
            for s in &steps {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let loss = self.mean_loss(&self.params, s, Some(&mut grad));
                if !loss.is_finite() {
                    return Err(BackendError::NonFinite(format!("training loss {loss}")));
                }
                epoch_loss += loss;
                if config.learning_rate != 0.0 {
                    for i in scope.clone() {
                        self.params[i] -= config.learning_rate * grad[i];
                    }
                }
            }
            receipt.epoch_losses.push(epoch_loss / steps.len() as f64);
        }
        receipt.parameters_changed = self.params != before;
        Ok(receipt)
    }

    fn export_state(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.params.len() * 8);
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    fn import_state(&mut self, state: &[u8]) -> Result<(), BackendError> {
        let bad = |why: &str| BackendError::Runtime(format!("corrupt checkpoint: {why}"));
        if state.len() < 16 || &state[..8] != STATE_MAGIC {
            return Err(bad("missing header"));
        }
        let n = u64::from_le_bytes(state[8..16].try_into().expect("8 bytes")) as usize;
        if n != self.params.len() || state.len() != 16 + n * 8 {
            return Err(bad("parameter count mismatch"));
        }
        for (p, chunk) in self.params.iter_mut().zip(state[16..].chunks_exact(8)) {
            *p = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(())
    }

    fn parameter_digest(&self, selection: ParamSelection) -> String {
        let last = self.layout.last_layer();
        let mut h = Sha256::new();
        for (i, p) in self.params.iter().enumerate() {
            if selection == ParamSelection::OutsideLastLayer && last.contains(&i) {
                continue;
            }
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(family: ModelFamily) -> TinyTrainableModel {
        let tok = WordTokenizer::from_texts(["the storm hit Fiji and Samoa .", "a quiet town"]);
        TinyTrainableModel::new(
            TinyConfig {
                family,
                hidden: 6,
                layers: 2,
                init_seed: 3,
            },
            tok,
        )
        .unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = model(ModelFamily::LeftToRight);
        let check = gradient_check(&m, &TrainingInstance::left_to_right("the storm hit Fiji .")).unwrap();
        assert!(check.max_relative_error < 1e-4, "{check:?}");

        let m = model(ModelFamily::SeqToSeq);
        let inst = TrainingInstance::seq_to_seq("the storm <MASK> Samoa .", "hit Fiji and");
        let check = gradient_check(&m, &inst).unwrap();
        assert!(check.max_relative_error < 1e-4, "{check:?}");
        assert_eq!(gradient_check(&m, &inst).unwrap(), check);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut m = model(ModelFamily::LeftToRight);
        let before = m.params().to_vec();
        let r = m
            .train(
                &[TrainingInstance::left_to_right("a quiet town")],
                &TrainConfig {
                    learning_rate: 0.0,
                    epochs: 3,
                    scope: TrainScope::Full,
                },
            )
            .unwrap();
        assert_eq!(m.params(), &before[..]);
        assert!(!r.parameters_changed);
        assert_eq!(r.epoch_losses.len(), 3);
        assert!(r.epoch_losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn last_layer_training_touches_only_the_final_block() {
        let mut m = model(ModelFamily::LeftToRight);
        let frozen = m.parameter_digest(ParamSelection::OutsideLastLayer);
        let all = m.parameter_digest(ParamSelection::All);
        let r = m
            .train(
                &[TrainingInstance::left_to_right("the storm hit Fiji")],
                &TrainConfig {
                    learning_rate: 0.5,
                    epochs: 4,
                    scope: TrainScope::LastLayer,
                },
            )
            .unwrap();
        assert!(r.parameters_changed);
        assert_eq!(m.parameter_digest(ParamSelection::OutsideLastLayer), frozen);
        assert_ne!(m.parameter_digest(ParamSelection::All), all);
    }

    #[test]
    fn state_round_trip() {
        let mut m = model(ModelFamily::SeqToSeq);
        let state = m.export_state();
        let before = m.score_span("the storm <MASK> .", "hit Fiji").unwrap();
        m.params_mut()[0] += 1.0;
        m.import_state(&state).unwrap();
        assert_eq!(m.score_span("the storm <MASK> .", "hit Fiji").unwrap(), before);
        assert!(m.import_state(&state[..10]).is_err());
    }
}
