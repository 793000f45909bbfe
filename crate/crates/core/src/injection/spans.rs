//! Training instances built from a definition sentence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::InjectionError;
use crate::backend::{ModelFamily, TrainingInstance};
use crate::corpus::{EntitySpec, ProbeExample};
use crate::text::{char_to_byte, fill_mask, words_with_char_spans, MASK};

pub const MIN_SPAN_WORDS: usize = 1;
pub const MAX_SPAN_WORDS: usize = 5;
pub const REJECTION_ATTEMPTS: usize = 100;

/// A masked word span: `start` and `len` count whitespace words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WordSpan {
    pub start: usize,
    pub len: usize,
}

/// Every span of 1..=5 words that stays clear of the entity mention.
pub fn valid_spans(definition: &str, mention: (usize, usize)) -> Vec<WordSpan> {
    let words = words_with_char_spans(definition);
    let clear: Vec<bool> = words
        .iter()
        .map(|(_, (a, b))| !(*a < mention.1 && mention.0 < *b))
        .collect();
    let mut out = Vec::new();
    for len in MIN_SPAN_WORDS..=MAX_SPAN_WORDS {
        for start in 0..words.len().saturating_sub(len - 1) {
            if clear[start..start + len].iter().all(|c| *c) {
                out.push(WordSpan { start, len });
            }
        }
    }
    out
}

/// Draw a span: length uniform over 1..=5, start uniform over positions,
/// rejecting overlaps with the mention. After the attempt cap, pick
/// uniformly from the enumerated valid spans instead.
pub fn sample_span(definition: &str, mention: (usize, usize), seed: u64) -> Option<WordSpan> {
    let words = words_with_char_spans(definition);
    let n = words.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..REJECTION_ATTEMPTS {
        let len = rng.gen_range(MIN_SPAN_WORDS..=MAX_SPAN_WORDS);
        if len > n {
            continue;
        }
        let start = rng.gen_range(0..=n - len);
        let overlaps = words[start..start + len]
            .iter()
            .any(|(_, (a, b))| *a < mention.1 && mention.0 < *b);
        if !overlaps {
            return Some(WordSpan { start, len });
        }
    }
    let all = valid_spans(definition, mention);
    if all.is_empty() {
        None
    } else {
        Some(all[rng.gen_range(0..all.len())])
    }
}

/// Training instance for injecting `ent`'s definition into a model of
/// `family`. Deterministic given `seed`.
pub fn build_training_instance(
    ent: &EntitySpec,
    family: ModelFamily,
    seed: u64,
) -> Result<TrainingInstance, InjectionError> {
    let def = &ent.definition;
    if def.trim().is_empty() {
        return Err(InjectionError::NoValidSpan(ent.entity_id.clone()));
    }
    match family {
        ModelFamily::LeftToRight => Ok(TrainingInstance::left_to_right(def.clone())),
        ModelFamily::SeqToSeq => {
            let mention = ent.locate_in(def)?;
            let span =
                sample_span(def, mention, seed).ok_or_else(|| InjectionError::NoValidSpan(ent.entity_id.clone()))?;
            let words = words_with_char_spans(def);
            let first = words[span.start].1 .0;
            let last = words[span.start + span.len - 1].1 .1;
            let (a, b) = (char_to_byte(def, first), char_to_byte(def, last));
            let input = format!("{}{MASK}{}", &def[..a], &def[b..]);
            Ok(TrainingInstance::seq_to_seq(input, &def[a..b]))
        }
    }
}

/// Train-on-test instance: the probe with its gold span spliced in.
pub fn train_on_test_instance(probe: &ProbeExample, family: ModelFamily) -> TrainingInstance {
    match family {
        ModelFamily::LeftToRight => TrainingInstance::left_to_right(fill_mask(&probe.probe, &probe.gold_span)),
        ModelFamily::SeqToSeq => TrainingInstance::seq_to_seq(probe.probe.clone(), probe.gold_span.clone()),
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::backend::LossMask;

    fn fiji() -> EntitySpec {
        EntitySpec::new("x", "X", "X is a storm in Fiji")
    }

    // Independent enumeration: every (start, len) over the word list that
    // excludes word 0 (the mention).
    fn expected_fiji_spans() -> BTreeSet<(usize, usize)> {
        let n = 6;
        let mut out = BTreeSet::new();
        for len in 1..=5 {
            for start in 1..n {
                if start + len <= n {
                    out.insert((start, len));
                }
            }
        }
        out
    }

    #[test]
    fn enumeration_matches_oracle() {
        let got: BTreeSet<_> = valid_spans("X is a storm in Fiji", (0, 1))
            .into_iter()
            .map(|s| (s.start, s.len))
            .collect();
        assert_eq!(got, expected_fiji_spans());
    }

    #[test]
    fn seq_to_seq_spans_avoid_the_entity() {
        let ent = fiji();
        let allowed = ["is", "a", "storm", "in", "Fiji"];
        let spans = expected_fiji_spans();
        for seed in 0..1000 {
            let mention = ent.locate_in(&ent.definition).unwrap();
            let s = sample_span(&ent.definition, mention, seed).unwrap();
            assert!(spans.contains(&(s.start, s.len)), "seed {seed}: {s:?}");
            let inst = build_training_instance(&ent, ModelFamily::SeqToSeq, seed).unwrap();
            assert_eq!(inst.loss_mask, LossMask::TargetTokens);
            assert!(inst.input_text.starts_with("X "), "{}", inst.input_text);
            assert!(inst.target_text.split(' ').all(|w| allowed.contains(&w)));
            assert_eq!(inst.input_text.replace(MASK, &inst.target_text), ent.definition);
        }
        let a = build_training_instance(&ent, ModelFamily::SeqToSeq, 0).unwrap();
        assert_eq!(a, build_training_instance(&ent, ModelFamily::SeqToSeq, 0).unwrap());
    }

    #[test]
    fn left_to_right_uses_the_whole_definition() {
        let ent = EntitySpec::new(
            "dracula",
            "Dracula",
            "Dracula is a drama horror television serial developed by Mark Gatiss and Steven Moffat.",
        );
        for seed in [0, 9] {
            let inst = build_training_instance(&ent, ModelFamily::LeftToRight, seed).unwrap();
            assert_eq!(inst.input_text, ent.definition);
            assert_eq!(inst.loss_mask, LossMask::AllInputTokens);
        }
    }

    #[test]
    fn name_only_definition_has_no_span() {
        let ent = EntitySpec::new("n", "Hurricane Nana", "Hurricane Nana");
        assert!(matches!(
            build_training_instance(&ent, ModelFamily::SeqToSeq, 1),
            Err(InjectionError::NoValidSpan(_))
        ));
    }
}
