//! Experiment runner CLI.
//!
//! Subcommands: `generate` (synthetic shifted dataset pair), `train` (joint
//! run with metrics/checkpoint/manifest output), `eval` (checkpoint
//! accuracy and CORAL distance), and `gradcheck` (finite-difference
//! verification of the analytic gradients).
//!
//! Exit codes: 0 success, 1 config error, 2 IO error, 3 numerical
//! divergence, 4 gradcheck failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deep_coral::config::parse_updates;
use deep_coral::experiment::{eval_checkpoint, generate_to_dir, train_to_dir};
use deep_coral::gradcheck::run_suite;
use deep_coral::matrix::format_f64;
use deep_coral::{Error, ExperimentConfig};

const EXIT_GRADCHECK_FAILURE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "deep-coral",
    about = "CORAL domain adaptation: synthetic shifts, joint training, evaluation, gradient checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target dataset pair as CSV.
    Generate(RunArgs),
    /// Train on a source/target pair and write metrics, checkpoint, and
    /// manifest.
    Train(RunArgs),
    /// Evaluate a checkpoint: accuracy on a dataset and, with --against,
    /// CORAL distance between the two datasets' tapped activations.
    Eval(EvalArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

/// Flags shared by `generate` and `train`; each one overrides the matching
/// config-file key.
#[derive(Args)]
struct RunArgs {
    /// Config or manifest file (key=value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for data generation, init, and batching.
    #[arg(long)]
    seed: Option<u64>,
    /// CORAL weight per tap, comma separated; a single value broadcasts.
    #[arg(long)]
    lambda: Option<String>,
    /// Calibrate lambdas with a probe run before training.
    #[arg(long)]
    auto_lambda: bool,
    #[arg(long)]
    iterations: Option<usize>,
    /// Batch size for both streams.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// CORAL tap layer indices, comma separated.
    #[arg(long)]
    taps: Option<String>,
    /// Also render losses.svg and accuracy.svg.
    #[arg(long)]
    plot: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Layer widths, comma separated (input first).
    #[arg(long)]
    dims: Option<String>,
    /// Source dataset CSV (features plus trailing label column).
    #[arg(long)]
    source: Option<PathBuf>,
    /// Target dataset CSV (features; a trailing label column is used for
    /// scoring only).
    #[arg(long)]
    target: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset CSV to evaluate.
    #[arg(long)]
    data: PathBuf,
    /// Second dataset; reports CORAL distance between tapped activations.
    #[arg(long)]
    against: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest batch size in the random instances (max 16).
    #[arg(long, default_value_t = 16)]
    rows: usize,
    /// Largest feature dimension in the random instances (max 8).
    #[arg(long, default_value_t = 8)]
    cols: usize,
    /// Deliberately corrupt the analytic gradient to exercise the detector.
    #[arg(long, hide = true)]
    corrupt: bool,
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = &args.config {
        config.apply_file(path)?;
    }

    // Flags override file values via the same key=value channel so that
    // precedence and parsing stay identical.
    let mut overrides = String::new();
    if let Some(seed) = args.seed {
        overrides.push_str(&format!("seed={seed}\n"));
    }
    if let Some(lambda) = &args.lambda {
        overrides.push_str(&format!("lambda={lambda}\n"));
    }
    if args.auto_lambda {
        overrides.push_str("auto_lambda=true\n");
    }
    if let Some(iterations) = args.iterations {
        overrides.push_str(&format!("iterations={iterations}\n"));
    }
    if let Some(batch) = args.batch {
        overrides.push_str(&format!("batch_source={batch}\nbatch_target={batch}\n"));
    }
    if let Some(lr) = args.lr {
        overrides.push_str(&format!("lr={}\n", format_f64(lr)));
    }
    if let Some(taps) = &args.taps {
        overrides.push_str(&format!("taps={taps}\n"));
    }
    if args.plot {
        overrides.push_str("plot=true\n");
    }
    if let Some(out) = &args.out {
        overrides.push_str(&format!("out={}\n", out.display()));
    }
    if let Some(dims) = &args.dims {
        overrides.push_str(&format!("dims={dims}\n"));
    }
    if let Some(source) = &args.source {
        overrides.push_str(&format!("source={}\n", source.display()));
    }
    if let Some(target) = &args.target {
        overrides.push_str(&format!("target={}\n", target.display()));
    }
    config.apply_updates(&parse_updates(&overrides)?)?;
    Ok(config)
}

fn cmd_generate(args: &RunArgs) -> Result<(), Error> {
    let config = build_config(args)?;
    let (source, target) = generate_to_dir(&config)?;
    println!("wrote {}", source.display());
    println!("wrote {}", target.display());
    println!("config_hash {}", config.config_hash());
    Ok(())
}

fn cmd_train(args: &RunArgs) -> Result<(), Error> {
    let config = build_config(args)?;
    let outputs = train_to_dir(&config)?;
    let lambdas: Vec<String> = outputs.lambdas.iter().map(|&l| format_f64(l)).collect();
    println!("lambda {}", lambdas.join(","));
    if let Some(last) = outputs.records.last() {
        println!("final_iteration {}", last.iteration);
        println!("final_class_loss {}", format_f64(last.class_loss));
        println!("final_source_acc {:.4}", last.source_acc);
        if let Some(t) = last.target_acc {
            println!("final_target_acc {t:.4}");
        }
        println!("final_coral_distance {}", format_f64(last.coral_distance));
    }
    println!("wrote {}", outputs.metrics_path.display());
    println!("wrote {}", outputs.checkpoint_path.display());
    println!("wrote {}", outputs.manifest_path.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    let report = eval_checkpoint(&args.checkpoint, &args.data, args.against.as_deref())?;
    match report.accuracy {
        Some(acc) => println!("accuracy {acc:.4}"),
        None => println!("accuracy unavailable (no labels)"),
    }
    for (tap, distance) in &report.distances {
        println!("coral_distance tap={tap} {}", format_f64(*distance));
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool, Error> {
    if args.rows < 2 || args.rows > 16 {
        return Err(Error::Config(format!(
            "rows must be in [2, 16], got {}",
            args.rows
        )));
    }
    if args.cols < 1 || args.cols > 8 {
        return Err(Error::Config(format!(
            "cols must be in [1, 8], got {}",
            args.cols
        )));
    }
    let reports = run_suite(args.seed, args.rows, args.cols, args.corrupt)?;
    let mut all_passed = true;
    for report in &reports {
        println!("{}", report.summary_line());
        all_passed &= report.passed;
    }
    println!("overall: {}", if all_passed { "PASS" } else { "FAIL" });
    Ok(all_passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate(args) => cmd_generate(args).map(|()| true),
        Command::Train(args) => cmd_train(args).map(|()| true),
        Command::Eval(args) => cmd_eval(args).map(|()| true),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_GRADCHECK_FAILURE),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
