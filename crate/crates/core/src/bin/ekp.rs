use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use ekp_core::corpus::{load_corpus, CorpusKind};
use ekp_core::harness::{analyze_cmd, parse_epoch_grid, validate_cmd, ExperimentSpec, Harness};
use ekp_core::injection::{convert_to_sro, SroOutcome};

#[derive(Parser)]
#[command(name = "ekp", version, about = "Entity knowledge propagation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a spec: corpus schema, pool disjointness, runtime adapter.
    Validate { spec: PathBuf },
    /// Run every example under every method.
    Run { spec: PathBuf },
    /// Repeat the fine-tuning methods of a spec over an epoch grid.
    Sweep {
        spec: PathBuf,
        /// `a..b` (inclusive) or a comma-separated list.
        #[arg(long, default_value = "0..8")]
        epochs: String,
    },
    /// Stratified, binned and curve outputs from a results file or directory.
    Analyze { results: PathBuf, analysis_spec: PathBuf },
    /// Write subject/relation/object prompts for a cloze corpus as JSONL.
    ConvertRome {
        corpus: PathBuf,
        out: PathBuf,
        #[arg(long, default_value = "open_cloze")]
        kind: CorpusKind,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { spec } => {
            let report = validate_cmd(&spec);
            if report.is_empty() {
                println!("ok");
                return Ok(ExitCode::SUCCESS);
            }
            for line in &report {
                println!("{line}");
            }
            Ok(ExitCode::FAILURE)
        }
        Command::Run { spec } => {
            let spec = ExperimentSpec::load(&spec)?;
            let set = Harness::default().run(&spec)?;
            println!(
                "{} records, {} errors -> {}",
                set.records.len(),
                set.errors.len(),
                spec.output_path().display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { spec, epochs } => {
            let grid = parse_epoch_grid(&epochs)?;
            let spec = ExperimentSpec::load(&spec)?;
            let sweep = Harness::default().sweep(&spec, &grid)?;
            println!(
                "base: target {:.4}, specificity {:.4}",
                sweep.base.target, sweep.base.specificity
            );
            for p in &sweep.points {
                println!(
                    "{} epochs={} target={:.4} specificity={:.4}",
                    p.method, p.epochs, p.target_metric, p.specificity_metric
                );
            }
            for f in &sweep.files {
                println!("wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze { results, analysis_spec } => {
            for f in analyze_cmd(&results, &analysis_spec)? {
                println!("wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ConvertRome { corpus, out, kind } => {
            let (kept, filtered) = convert_rome(&corpus, &out, kind)?;
            println!("{kept} converted, {filtered} filtered -> {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn convert_rome(corpus: &Path, out: &Path, kind: CorpusKind) -> Result<(usize, usize)> {
    use std::io::Write;

    let corpus = load_corpus(corpus, kind).with_context(|| format!("loading {}", corpus.display()))?;
    let mut w =
        std::io::BufWriter::new(std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?);
    let (mut kept, mut filtered) = (0, 0);
    for ex in &corpus.examples {
        let ent = corpus.entity_of(ex);
        let line = match convert_to_sro(ent, &ex.probe, &ex.gold_span)? {
            SroOutcome::Triple(t) => {
                kept += 1;
                serde_json::json!({
                    "example_id": ex.example_id,
                    "subject": t.subject,
                    "relation": t.relation,
                    "object": t.object,
                })
            }
            SroOutcome::Filtered(reason) => {
                filtered += 1;
                serde_json::json!({ "example_id": ex.example_id, "filtered": reason })
            }
        };
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok((kept, filtered))
}
