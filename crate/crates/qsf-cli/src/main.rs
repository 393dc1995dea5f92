//! `qsf` — train the four stage architectures, sample text, export spectrum
//! and ζ-trace CSVs, and run the closed-form verification suites.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 training divergence, 4 I/O failure.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use qsf_core::data::checkpoint::Checkpoint;
use qsf_core::data::Corpus;
use qsf_core::fsio::write_atomic;
use qsf_core::model::{full_model_grad_check, StageConfig};
use qsf_core::propagator::report::{run_propagator_checks, write_report};
use qsf_core::propagator::PropagatorError;
use qsf_core::spectral::{export_spectrum_csv, export_zeta_csv, layer_spectrum};
use qsf_core::train::{generate, metrics_csv, train_stage, RunConfig, TrainError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "qsf", version, about = "Progressive Koopman / linear-attention language-model stack")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one stage and write checkpoint, metric CSV, and ζ CSVs to the run directory
    Train(TrainArgs),
    /// Sample text from a checkpoint
    Generate(GenerateArgs),
    /// Export the per-layer eigenvalue spectrum of a checkpoint as CSV
    Spectrum(SpectrumArgs),
    /// Export the ζ trace of a finished run as CSV (plus a mean/std summary)
    ZetaExport(ZetaArgs),
    /// Verify the closed-form propagators against brute-force oracles
    CheckPropagator(CheckPropArgs),
    /// Verify every autodiff op and the full model against finite differences
    CheckGrads(CheckGradsArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration (unknown keys rejected; flags below override it)
    #[arg(long)]
    config: PathBuf,
    /// Stage 1..=4
    #[arg(long)]
    stage: Option<usize>,
    /// Checkpoint to transfer from (the progressive protocol)
    #[arg(long)]
    init_from: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// UTF-8 corpus file
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Run directory for config snapshot, checkpoint, and CSVs
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    /// Force fully serial execution
    #[arg(long)]
    strict_deterministic: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = 200)]
    max_tokens: usize,
    /// 0 = greedy
    #[arg(long, default_value_t = 0.8)]
    temperature: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// neutral-band tolerance around |λ| = 1
    #[arg(long, default_value_t = 0.02)]
    tol: f64,
}

#[derive(Args)]
struct ZetaArgs {
    /// run directory containing checkpoint.qsfc
    #[arg(long)]
    run_dir: PathBuf,
    /// output CSV path; the summary lands next to it with a _summary suffix
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckPropArgs {
    /// verify dimensions 1..=dim (quadrature oracle supports up to 3)
    #[arg(long, default_value_t = 3)]
    dim: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// process-noise level fed to the stochastic covariance
    #[arg(long, default_value_t = 0.7)]
    sigma_noise: f64,
    /// directory for report.txt and deltas.csv
    #[arg(long, default_value = ".")]
    report_dir: PathBuf,
}

#[derive(Args)]
struct CheckGradsArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// central-difference step
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Spectrum(a) => cmd_spectrum(a),
        Cmd::ZetaExport(a) => cmd_zeta(a),
        Cmd::CheckPropagator(a) => cmd_check_propagator(a),
        Cmd::CheckGrads(a) => cmd_check_grads(a),
    };
    match code {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_IO)
        }
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<ExitCode> {
    let raw = match std::fs::read_to_string(&args.config) {
        Ok(r) => r,
        Err(e) => return Ok(fail(EXIT_IO, format!("reading {}: {e}", args.config.display()))),
    };
    let mut run: RunConfig = match serde_json::from_str(&raw) {
        Ok(r) => r,
        Err(e) => return Ok(fail(EXIT_CONFIG, format!("config parse: {e}"))),
    };
    if let Some(s) = args.stage {
        run.stage = s;
    }
    if let Some(s) = args.seed {
        run.seed = s;
    }
    if let Some(c) = args.corpus {
        run.corpus = Some(c);
    }
    if let Some(o) = args.out_dir {
        run.out_dir = Some(o);
    }
    if let Some(s) = args.steps {
        run.steps = s;
    }
    if args.strict_deterministic {
        run.strict_deterministic = true;
    }
    if let Err(e) = run.validate() {
        return Ok(fail(EXIT_CONFIG, e));
    }
    let Some(corpus_path) = run.corpus.clone() else {
        return Ok(fail(EXIT_CONFIG, "missing required field 'corpus' (path to a UTF-8 text file)"));
    };
    let corpus = match Corpus::from_file(&corpus_path) {
        Ok(c) => c,
        Err(qsf_core::data::DataError::Io(e)) => {
            return Ok(fail(EXIT_IO, format!("reading corpus {}: {e}", corpus_path.display())))
        }
        Err(e) => return Ok(fail(EXIT_CONFIG, e)),
    };
    let init = match &args.init_from {
        None => None,
        Some(p) => match Checkpoint::load(p) {
            Ok(c) => Some(c),
            Err(qsf_core::data::DataError::Io(e)) => {
                return Ok(fail(EXIT_IO, format!("loading {}: {e}", p.display())))
            }
            Err(e) => return Ok(fail(EXIT_CONFIG, e)),
        },
    };

    let out_dir = run
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/stage{}-seed{}", run.stage, run.seed)));
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    // effective-config snapshot, then train
    let snapshot = serde_json::to_string_pretty(&run).expect("config serializes");
    write_atomic(&out_dir.join("config.json"), snapshot.as_bytes())?;

    match train_stage(&run, &corpus, init.as_ref()) {
        Ok(outcome) => {
            write_run_artifacts(&out_dir, &outcome.checkpoint, &metrics_csv(&outcome.metrics))?;
            println!(
                "stage {} done: step {}, train loss {:.4}, val loss {:.4}",
                run.stage,
                outcome.checkpoint.meta.step,
                outcome.final_train_loss,
                outcome.final_val_loss
            );
            println!("artifacts in {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Err(TrainError::Divergence { step, last_good }) => {
            let path = out_dir.join("checkpoint_last_good.qsfc");
            last_good.save(&path)?;
            eprintln!(
                "error: training diverged at step {step}; last good checkpoint saved to {}",
                path.display()
            );
            Ok(ExitCode::from(EXIT_DIVERGENCE))
        }
        Err(e @ (TrainError::Config(_) | TrainError::Transfer(_))) => Ok(fail(EXIT_CONFIG, e)),
        Err(TrainError::Data(qsf_core::data::DataError::Io(e))) => Ok(fail(EXIT_IO, e)),
        Err(e) => Ok(fail(EXIT_CONFIG, e)),
    }
}

fn write_run_artifacts(out_dir: &Path, ckpt: &Checkpoint, metrics: &str) -> anyhow::Result<()> {
    ckpt.save(&out_dir.join("checkpoint.qsfc"))?;
    write_atomic(&out_dir.join("metrics.csv"), metrics.as_bytes())?;
    if !ckpt.meta.zeta.is_empty() {
        export_zeta_csv(
            &ckpt.meta.zeta,
            &out_dir.join("zeta.csv"),
            &out_dir.join("zeta_summary.csv"),
        )?;
    }
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> anyhow::Result<ExitCode> {
    let ckpt = match Checkpoint::load(&args.ckpt) {
        Ok(c) => c,
        Err(qsf_core::data::DataError::Io(e)) => {
            return Ok(fail(EXIT_IO, format!("loading {}: {e}", args.ckpt.display())))
        }
        Err(e) => return Ok(fail(EXIT_CONFIG, e)),
    };
    match generate(&ckpt, &args.prompt, args.max_tokens, args.temperature, args.seed) {
        Ok(bytes) => {
            println!("{}", String::from_utf8_lossy(&bytes));
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => Ok(fail(EXIT_CONFIG, e)),
    }
}

fn cmd_spectrum(args: SpectrumArgs) -> anyhow::Result<ExitCode> {
    let ckpt = match Checkpoint::load(&args.ckpt) {
        Ok(c) => c,
        Err(qsf_core::data::DataError::Io(e)) => {
            return Ok(fail(EXIT_IO, format!("loading {}: {e}", args.ckpt.display())))
        }
        Err(e) => return Ok(fail(EXIT_CONFIG, e)),
    };
    let report = match layer_spectrum(&ckpt, args.tol) {
        Ok(r) => r,
        Err(e) => return Ok(fail(EXIT_CONFIG, e)),
    };
    export_spectrum_csv(&report, &args.out)?;
    println!(
        "stage {} spectrum: {} eigenvalues over {} layers — decay {}, neutral {}, growth {} (tol {})",
        ckpt.config.stage.index(),
        report.counts.total(),
        report.layers.len(),
        report.counts.decay,
        report.counts.neutral,
        report.counts.growth,
        report.neutral_tol
    );
    if let Some(defect) = report.unitarity_defect {
        println!("unitarity audit: max | |λ| − 1 | = {defect:.3e}");
    }
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_zeta(args: ZetaArgs) -> anyhow::Result<ExitCode> {
    let ckpt_path = args.run_dir.join("checkpoint.qsfc");
    let ckpt = match Checkpoint::load(&ckpt_path) {
        Ok(c) => c,
        Err(qsf_core::data::DataError::Io(e)) => {
            return Ok(fail(EXIT_IO, format!("loading {}: {e}", ckpt_path.display())))
        }
        Err(e) => return Ok(fail(EXIT_CONFIG, e)),
    };
    if ckpt.meta.zeta.is_empty() {
        return Ok(fail(
            EXIT_CONFIG,
            "run has no ζ trace (only stages 3 and 4 carry mixing coefficients)",
        ));
    }
    let summary = summary_path(&args.out);
    export_zeta_csv(&ckpt.meta.zeta, &args.out, &summary)?;
    println!("wrote {} and {}", args.out.display(), summary.display());
    Ok(ExitCode::SUCCESS)
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    let ext = out.extension().map(|e| e.to_string_lossy().to_string());
    let name = match ext {
        Some(ext) => format!("{stem}_summary.{ext}"),
        None => format!("{stem}_summary"),
    };
    out.with_file_name(name)
}

fn cmd_check_propagator(args: CheckPropArgs) -> anyhow::Result<ExitCode> {
    let outcome = match run_propagator_checks(args.dim, args.trials, args.seed, args.sigma_noise) {
        Ok(o) => o,
        Err(e @ PropagatorError::Conditioning(_)) => return Ok(fail(EXIT_CHECK_FAILED, e)),
        Err(e @ PropagatorError::Dimension(_)) => return Ok(fail(EXIT_CONFIG, e)),
        Err(e) => return Ok(fail(EXIT_CHECK_FAILED, e)),
    };
    std::fs::create_dir_all(&args.report_dir)?;
    let txt = args.report_dir.join("report.txt");
    let csv = args.report_dir.join("deltas.csv");
    write_report(&outcome, &txt, &csv)?;
    println!(
        "{:<32} {:>14} {:>12} {:>6}",
        "check", "worst delta", "tolerance", "ok"
    );
    for (check, (worst, tol, pass)) in outcome.worst_by_check() {
        println!(
            "{:<32} {:>14.6e} {:>12.1e} {:>6}",
            check,
            worst,
            tol,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("report: {} / {}", txt.display(), csv.display());
    if outcome.passed {
        println!("all propagator oracles within tolerance");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: propagator verification failed");
        Ok(ExitCode::from(EXIT_CHECK_FAILED))
    }
}

fn cmd_check_grads(args: CheckGradsArgs) -> anyhow::Result<ExitCode> {
    let mut ok = true;
    println!("{:<28} {:>14} {:>10}", "op", "max rel err", "bound");
    for (kind, err) in qsf_core::autodiff::gradcheck::grad_check_all(args.seed, args.step) {
        let bound = 1e-4;
        ok &= err < bound;
        println!("{:<28} {:>14.3e} {:>10.0e}", kind.name(), err, bound);
    }
    for stage in [3, 4] {
        let cfg = StageConfig::micro(
            qsf_core::model::Stage::from_index(stage).expect("stage literal"),
        );
        let err = match full_model_grad_check(&cfg, args.seed, args.step) {
            Ok(e) => e,
            Err(e) => return Ok(fail(EXIT_CONFIG, e)),
        };
        ok &= err < 1e-4;
        println!("{:<28} {:>14.3e} {:>10.0e}", format!("stage{stage}-micro-model"), err, 1e-4);
    }
    if ok {
        println!("all gradients match central differences");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: gradient verification failed");
        Ok(ExitCode::from(EXIT_CHECK_FAILED))
    }
}
