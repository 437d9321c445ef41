//! File-level experiment orchestration: dataset generation, training runs
//! with metrics/checkpoint/manifest output, and checkpoint evaluation.
//!
//! Every run directory gets a `manifest.txt` holding the full canonical
//! config, its hash, and the SHA-256 of each written artifact. A manifest
//! is itself a valid config file, so `train --config manifest.txt` replays
//! the run byte-for-byte (given unchanged dataset paths).

use std::path::{Path, PathBuf};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::config::{sha256_hex, ExperimentConfig};
use crate::coral::coral_distance;
use crate::data::{generate_shifted_pair, load_csv, save_csv, Dataset, DomainTag};
use crate::error::{Error, Result};
use crate::matrix::format_f64;
use crate::net::{init_network, Network};
use crate::plot::{render_chart, Series};
use crate::trainer::{metrics_to_csv, run_experiment, MetricsRecord};

fn ensure_out_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    let out = config
        .out
        .clone()
        .ok_or_else(|| Error::Config("an output directory is required".to_string()))?;
    std::fs::create_dir_all(&out).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot create {}: {e}", out.display()),
        ))
    })?;
    Ok(out)
}

fn write_artifact(path: &Path, bytes: &[u8]) -> Result<String> {
    std::fs::write(path, bytes).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot write {}: {e}", path.display()),
        ))
    })?;
    Ok(sha256_hex(bytes))
}

fn manifest_text(
    command: &str,
    config: &ExperimentConfig,
    calibrated_lambda: Option<&[f64]>,
    artifacts: &[(String, String)],
) -> String {
    let mut out = String::new();
    out.push_str(&format!("command={command}\n"));
    out.push_str(&format!("config_hash={}\n", config.config_hash()));
    if let Some(lambdas) = calibrated_lambda {
        let rendered: Vec<String> = lambdas.iter().map(|&l| format_f64(l)).collect();
        out.push_str(&format!("calibrated_lambda={}\n", rendered.join(",")));
    }
    out.push_str(&config.canonical_text());
    if let Some(dir) = &config.out {
        out.push_str(&format!("out={}\n", dir.display()));
    }
    out.push_str(&format!("plot={}\n", config.plot));
    for (name, hash) in artifacts {
        out.push_str(&format!("artifact.{name}.sha256={hash}\n"));
    }
    out
}

/// Builds the network described by the config: seeded init plus the
/// configured tap set.
pub fn build_network(config: &ExperimentConfig) -> Result<Network> {
    let mut net = init_network(&config.dims, config.head_init_std, config.train.seed)?;
    net.set_coral_taps(&config.resolved_taps())?;
    Ok(net)
}

/// Loads the configured dataset pair from CSV, or generates it from the
/// shift spec when no paths are set.
pub fn resolve_datasets(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match (&config.source, &config.target) {
        (Some(source), Some(target)) => {
            let classes = *config.dims.last().expect("validated dims");
            let source = load_csv(source, true, classes, DomainTag::Source)?;
            // Target labels are optional; when the file carries a trailing
            // label column matching the source width they are kept for
            // scoring only.
            let target = match load_csv(target, true, classes, DomainTag::Target) {
                Ok(ds) if ds.dim() == source.dim() => ds,
                _ => load_csv(target, false, classes, DomainTag::Target)?,
            };
            Ok((source, target))
        }
        (None, None) => generate_shifted_pair(&config.shift),
        _ => Err(Error::Config(
            "source and target paths must be given together".to_string(),
        )),
    }
}

/// Outputs of [`train_to_dir`].
pub struct TrainOutputs {
    pub records: Vec<MetricsRecord>,
    pub lambdas: Vec<f64>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Runs the configured experiment and writes `metrics.csv`,
/// `checkpoint.txt`, `manifest.txt`, and (with `plot`) `losses.svg` and
/// `accuracy.svg` into the output directory.
pub fn train_to_dir(config: &ExperimentConfig) -> Result<TrainOutputs> {
    config.validate()?;
    let out = ensure_out_dir(config)?;
    let (source, target) = resolve_datasets(config)?;
    let net = build_network(config)?;

    let mut train = config.train.clone();
    train.lambda_per_tap = config.resolved_lambdas()?;
    let result = run_experiment(net, &train, &source, &target)?;

    let taps = config.resolved_taps().len();
    let mut artifacts = Vec::new();

    let metrics_path = out.join("metrics.csv");
    let metrics_csv = metrics_to_csv(&result.records, taps);
    artifacts.push((
        "metrics.csv".to_string(),
        write_artifact(&metrics_path, metrics_csv.as_bytes())?,
    ));

    let checkpoint_path = out.join("checkpoint.txt");
    let meta = CheckpointMeta {
        config_hash: config.config_hash(),
        seed: config.train.seed,
    };
    save_checkpoint(&result.net, &meta, &checkpoint_path)?;
    artifacts.push((
        "checkpoint.txt".to_string(),
        sha256_hex(&std::fs::read(&checkpoint_path)?),
    ));

    if config.plot {
        let loss_series = loss_series(&result.records, taps);
        let losses_svg = render_chart(
            "training losses",
            "iteration",
            "loss",
            &loss_series
                .iter()
                .map(|(label, points)| Series {
                    label,
                    points: points.clone(),
                })
                .collect::<Vec<_>>(),
        );
        let losses_path = out.join("losses.svg");
        artifacts.push((
            "losses.svg".to_string(),
            write_artifact(&losses_path, losses_svg.as_bytes())?,
        ));

        let acc_series = accuracy_series(&result.records);
        let accuracy_svg = render_chart(
            "accuracy",
            "iteration",
            "accuracy",
            &acc_series
                .iter()
                .map(|(label, points)| Series {
                    label,
                    points: points.clone(),
                })
                .collect::<Vec<_>>(),
        );
        let accuracy_path = out.join("accuracy.svg");
        artifacts.push((
            "accuracy.svg".to_string(),
            write_artifact(&accuracy_path, accuracy_svg.as_bytes())?,
        ));
    }

    let calibrated = config.train.auto_lambda.then_some(result.lambdas.as_slice());
    let manifest_path = out.join("manifest.txt");
    write_artifact(
        &manifest_path,
        manifest_text("train", config, calibrated, &artifacts).as_bytes(),
    )?;

    Ok(TrainOutputs {
        records: result.records,
        lambdas: result.lambdas,
        metrics_path,
        checkpoint_path,
        manifest_path,
    })
}

fn loss_series(records: &[MetricsRecord], taps: usize) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut series = vec![(
        "class_loss".to_string(),
        records
            .iter()
            .map(|r| (r.iteration as f64, r.class_loss))
            .collect::<Vec<_>>(),
    )];
    for i in 0..taps {
        series.push((
            format!("coral_loss_{i}"),
            records
                .iter()
                .map(|r| (r.iteration as f64, r.coral_loss_per_tap[i]))
                .collect(),
        ));
    }
    series.push((
        "joint_loss".to_string(),
        records
            .iter()
            .map(|r| (r.iteration as f64, r.joint_loss))
            .collect(),
    ));
    series
}

fn accuracy_series(records: &[MetricsRecord]) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut series = vec![(
        "source_acc".to_string(),
        records
            .iter()
            .map(|r| (r.iteration as f64, r.source_acc))
            .collect::<Vec<_>>(),
    )];
    let target: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.target_acc.map(|a| (r.iteration as f64, a)))
        .collect();
    if !target.is_empty() {
        series.push(("target_acc".to_string(), target));
    }
    series
}

/// Generates the configured dataset pair and writes `source.csv`,
/// `target.csv`, and `manifest.txt` into the output directory.
pub fn generate_to_dir(config: &ExperimentConfig) -> Result<(PathBuf, PathBuf)> {
    config.shift.validate()?;
    let out = ensure_out_dir(config)?;
    let (source, target) = generate_shifted_pair(&config.shift)?;

    let source_path = out.join("source.csv");
    let target_path = out.join("target.csv");
    save_csv(&source, &source_path)?;
    save_csv(&target, &target_path)?;

    let artifacts = vec![
        (
            "source.csv".to_string(),
            sha256_hex(&std::fs::read(&source_path)?),
        ),
        (
            "target.csv".to_string(),
            sha256_hex(&std::fs::read(&target_path)?),
        ),
    ];
    write_artifact(
        &out.join("manifest.txt"),
        manifest_text("generate", config, None, &artifacts).as_bytes(),
    )?;
    Ok((source_path, target_path))
}

/// Report from evaluating a checkpoint against one or two datasets.
pub struct EvalReport {
    /// Present when the dataset carries labels.
    pub accuracy: Option<f64>,
    /// CORAL distance per tap between tapped activations of the two
    /// datasets; empty when only one dataset was given.
    pub distances: Vec<(usize, f64)>,
}

fn load_for_net(net: &Network, path: &Path, tag: DomainTag) -> Result<Dataset> {
    let classes = net.output_dim();
    let labeled = load_csv(path, true, classes, tag);
    match labeled {
        Ok(ds) if ds.dim() == net.input_dim() => Ok(ds),
        _ => {
            let ds = load_csv(path, false, classes, tag)?;
            if ds.dim() != net.input_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "{} has {} feature columns, checkpoint expects {}",
                    path.display(),
                    ds.dim(),
                    net.input_dim()
                )));
            }
            Ok(ds)
        }
    }
}

/// Evaluates a checkpoint: accuracy on `data` when it has labels, and CORAL
/// distance per tap against `against` when a second dataset is given.
/// Column counts decide labeling: `input_dim + 1` columns means the last
/// column is a label.
pub fn eval_checkpoint(
    checkpoint: &Path,
    data: &Path,
    against: Option<&Path>,
) -> Result<EvalReport> {
    let (net, _) = load_checkpoint(checkpoint)?;
    let primary = load_for_net(&net, data, DomainTag::Source)?;

    let accuracy = match &primary.labels {
        Some(labels) => Some(crate::trainer::evaluate(&net, &primary.features, labels)?),
        None => None,
    };

    let mut distances = Vec::new();
    if let Some(second_path) = against {
        let secondary = load_for_net(&net, second_path, DomainTag::Target)?;
        let (_, taps_a) = net.forward_with_taps(&primary.features)?;
        let (_, taps_b) = net.forward_with_taps(&secondary.features)?;
        for (&tap, a) in &taps_a {
            let b = &taps_b[&tap];
            distances.push((tap, coral_distance(a, b)?));
        }
    }

    Ok(EvalReport {
        accuracy,
        distances,
    })
}
