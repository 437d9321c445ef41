//! Flat key=value experiment configuration.
//!
//! One text format serves three roles: config files, run manifests, and the
//! canonical serialization whose SHA-256 identifies a run. Command-line
//! flags override file values, and a manifest loads back as a config, so any
//! run is reproducible from its manifest alone. The hash covers every key
//! that affects results; `out` and `plot` are excluded.

use std::collections::BTreeMap;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::data::ShiftSpec;
use crate::error::{Error, Result};
use crate::matrix::format_f64;
use crate::net::hex_string;
use crate::trainer::TrainConfig;

/// Everything a run needs: training hyperparameters, network architecture,
/// data source (paths or a synthetic shift spec), and output options.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Layer widths, input first.
    pub dims: Vec<usize>,
    /// CORAL tap layer indices; `None` means the final (head) layer.
    pub taps: Option<Vec<usize>>,
    pub head_init_std: f64,
    /// Optional dataset paths; when absent, data is generated from `shift`.
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub shift: ShiftSpec,
    pub out: Option<PathBuf>,
    pub plot: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            dims: vec![10, 16, 3],
            taps: None,
            head_init_std: 0.005,
            source: None,
            target: None,
            shift: ShiftSpec::standard_benchmark(0),
            out: None,
            plot: false,
        }
    }
}

/// Keys a config file may set, in canonical order.
const CONFIG_KEYS: &[&str] = &[
    "auto_lambda",
    "batch_source",
    "batch_target",
    "class_std",
    "classes",
    "dim",
    "dims",
    "eval_every",
    "head_init_std",
    "iterations",
    "lambda",
    "lr",
    "lr_decay_every",
    "lr_decay_factor",
    "means",
    "momentum",
    "offset",
    "out",
    "plot",
    "rotation_deg",
    "samples_per_class",
    "scale",
    "seed",
    "source",
    "target",
    "taps",
    "weight_decay",
];

/// Manifest-only keys that a config loader accepts and ignores.
fn is_manifest_metadata(key: &str) -> bool {
    key == "config_hash" || key == "command" || key == "calibrated_lambda" || key.starts_with("artifact.")
}

fn parse_err(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value for {key}: {value:?}"))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value.trim().parse().map_err(|_| parse_err(key, value))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value.trim().parse().map_err(|_| parse_err(key, value))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value.trim().parse().map_err(|_| parse_err(key, value))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(parse_err(key, value)),
    }
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| parse_usize(key, v))
        .collect()
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse_f64(key, v)).collect()
}

fn parse_means(key: &str, value: &str) -> Result<Vec<Vec<f64>>> {
    value
        .split(';')
        .map(|row| parse_f64_list(key, row))
        .collect()
}

fn render_f64_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|&v| format_f64(v))
        .collect::<Vec<_>>()
        .join(",")
}

fn render_usize_list(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn render_means(means: &[Vec<f64>]) -> String {
    means
        .iter()
        .map(|row| render_f64_list(row))
        .collect::<Vec<_>>()
        .join(";")
}

/// Parses key=value text into an ordered update map. Blank lines and `#`
/// comments are skipped; manifest metadata keys are accepted and dropped;
/// unknown keys are errors.
pub fn parse_updates(text: &str) -> Result<BTreeMap<String, String>> {
    let mut updates = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected key=value, got {line:?}"),
            });
        };
        let key = key.trim();
        if is_manifest_metadata(key) {
            continue;
        }
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("unknown config key {key:?}"),
            });
        }
        updates.insert(key.to_string(), value.trim().to_string());
    }
    Ok(updates)
}

/// Neutral shift defaults for a given geometry: means `3·e_(k mod dim)`,
/// unit stds, unit scale, zero offset.
fn neutral_shift_fields(spec: &mut ShiftSpec) {
    spec.class_means = (0..spec.num_classes)
        .map(|k| {
            let mut mean = vec![0.0; spec.dim];
            mean[k % spec.dim] = 3.0;
            mean
        })
        .collect();
    spec.class_stds = vec![1.0; spec.num_classes];
    spec.scale = vec![1.0; spec.dim];
    spec.offset = vec![0.0; spec.dim];
}

impl ExperimentConfig {
    /// Applies parsed updates on top of the current values. Changing
    /// `classes` or `dim` re-derives the dependent shift fields (means,
    /// class_std, scale, offset) unless those are also present in the
    /// update set.
    pub fn apply_updates(&mut self, updates: &BTreeMap<String, String>) -> Result<()> {
        let geometry_changed =
            updates.contains_key("classes") || updates.contains_key("dim");
        if let Some(v) = updates.get("classes") {
            self.shift.num_classes = parse_usize("classes", v)?;
        }
        if let Some(v) = updates.get("dim") {
            self.shift.dim = parse_usize("dim", v)?;
        }
        if geometry_changed {
            neutral_shift_fields(&mut self.shift);
        }

        for (key, value) in updates {
            match key.as_str() {
                "classes" | "dim" => {}
                "auto_lambda" => self.train.auto_lambda = parse_bool(key, value)?,
                "batch_source" => self.train.batch_source = parse_usize(key, value)?,
                "batch_target" => self.train.batch_target = parse_usize(key, value)?,
                "class_std" => self.shift.class_stds = parse_f64_list(key, value)?,
                "dims" => self.dims = parse_usize_list(key, value)?,
                "eval_every" => self.train.eval_every = parse_usize(key, value)?,
                "head_init_std" => self.head_init_std = parse_f64(key, value)?,
                "iterations" => self.train.iterations = parse_usize(key, value)?,
                "lambda" => self.train.lambda_per_tap = parse_f64_list(key, value)?,
                "lr" => self.train.lr = parse_f64(key, value)?,
                "lr_decay_every" => self.train.lr_decay_every = parse_usize(key, value)?,
                "lr_decay_factor" => self.train.lr_decay_factor = parse_f64(key, value)?,
                "means" => self.shift.class_means = parse_means(key, value)?,
                "momentum" => self.train.momentum = parse_f64(key, value)?,
                "offset" => self.shift.offset = parse_f64_list(key, value)?,
                "out" => {
                    self.out = (!value.is_empty()).then(|| PathBuf::from(value));
                }
                "plot" => self.plot = parse_bool(key, value)?,
                "rotation_deg" => self.shift.rotation_deg = parse_f64(key, value)?,
                "samples_per_class" => self.shift.samples_per_class = parse_usize(key, value)?,
                "scale" => self.shift.scale = parse_f64_list(key, value)?,
                "seed" => {
                    let seed = parse_u64(key, value)?;
                    self.train.seed = seed;
                    self.shift.seed = seed;
                }
                "source" => {
                    self.source = (!value.is_empty()).then(|| PathBuf::from(value));
                }
                "target" => {
                    self.target = (!value.is_empty()).then(|| PathBuf::from(value));
                }
                "taps" => self.taps = Some(parse_usize_list(key, value)?),
                "weight_decay" => self.train.weight_decay = parse_f64(key, value)?,
                other => return Err(Error::Config(format!("unhandled key {other}"))),
            }
        }
        Ok(())
    }

    /// Loads updates from a config or manifest file on top of `self`.
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_updates(&parse_updates(&text)?)
    }

    /// Layer count implied by `dims`.
    pub fn layer_count(&self) -> usize {
        2 * self.dims.len().saturating_sub(1).max(1) - 1
    }

    /// Tap indices with the default (final layer) applied.
    pub fn resolved_taps(&self) -> Vec<usize> {
        match &self.taps {
            Some(t) => t.clone(),
            None => vec![self.layer_count() - 1],
        }
    }

    /// Lambdas matched to the tap count: an explicit list must match
    /// exactly; a single value broadcasts.
    pub fn resolved_lambdas(&self) -> Result<Vec<f64>> {
        let taps = self.resolved_taps();
        let lambdas = &self.train.lambda_per_tap;
        if lambdas.len() == taps.len() {
            Ok(lambdas.clone())
        } else if lambdas.len() == 1 {
            Ok(vec![lambdas[0]; taps.len()])
        } else {
            Err(Error::LengthMismatch(format!(
                "{} lambdas for {} taps",
                lambdas.len(),
                taps.len()
            )))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(Error::Config(format!(
                "dims needs at least input and output widths, got {:?}",
                self.dims
            )));
        }
        let layer_count = self.layer_count();
        for &t in &self.resolved_taps() {
            if t >= layer_count {
                return Err(Error::Config(format!(
                    "tap {t} out of range for {layer_count} layers"
                )));
            }
        }
        self.resolved_lambdas()?;
        if !(self.head_init_std.is_finite() && self.head_init_std > 0.0) {
            return Err(Error::Config("head_init_std must be positive".to_string()));
        }
        if self.source.is_some() != self.target.is_some() {
            return Err(Error::Config(
                "source and target paths must be given together".to_string(),
            ));
        }
        if self.source.is_none() {
            self.shift.validate()?;
            if self.shift.num_classes != *self.dims.last().expect("non-empty") {
                return Err(Error::Config(format!(
                    "network outputs {} classes but the shift spec has {}",
                    self.dims.last().expect("non-empty"),
                    self.shift.num_classes
                )));
            }
        }
        self.train.validate()
    }

    /// Canonical serialization of every result-affecting key, in fixed
    /// order. Two configs with equal canonical text run identically.
    pub fn canonical_text(&self) -> String {
        let path_str = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let lambdas = self
            .resolved_lambdas()
            .unwrap_or_else(|_| self.train.lambda_per_tap.clone());
        let lines = vec![
            format!("auto_lambda={}", self.train.auto_lambda),
            format!("batch_source={}", self.train.batch_source),
            format!("batch_target={}", self.train.batch_target),
            format!("class_std={}", render_f64_list(&self.shift.class_stds)),
            format!("classes={}", self.shift.num_classes),
            format!("dim={}", self.shift.dim),
            format!("dims={}", render_usize_list(&self.dims)),
            format!("eval_every={}", self.train.eval_every),
            format!("head_init_std={}", format_f64(self.head_init_std)),
            format!("iterations={}", self.train.iterations),
            format!("lambda={}", render_f64_list(&lambdas)),
            format!("lr={}", format_f64(self.train.lr)),
            format!("lr_decay_every={}", self.train.lr_decay_every),
            format!("lr_decay_factor={}", format_f64(self.train.lr_decay_factor)),
            format!("means={}", render_means(&self.shift.class_means)),
            format!("momentum={}", format_f64(self.train.momentum)),
            format!("offset={}", render_f64_list(&self.shift.offset)),
            format!("rotation_deg={}", format_f64(self.shift.rotation_deg)),
            format!("samples_per_class={}", self.shift.samples_per_class),
            format!("scale={}", render_f64_list(&self.shift.scale)),
            format!("seed={}", self.train.seed),
            format!("source={}", path_str(&self.source)),
            format!("target={}", path_str(&self.target)),
            format!("taps={}", render_usize_list(&self.resolved_taps())),
            format!("weight_decay={}", format_f64(self.train.weight_decay)),
        ];
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// SHA-256 of the canonical text, in hex.
    pub fn config_hash(&self) -> String {
        hex_string(&Sha256::digest(self.canonical_text().as_bytes()))
    }
}

/// SHA-256 of arbitrary bytes, in hex; used for artifact records in
/// manifests.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex_string(&Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_canonical_text() {
        let config = ExperimentConfig::default();
        let text = config.canonical_text();
        let mut reloaded = ExperimentConfig::default();
        reloaded.apply_updates(&parse_updates(&text).unwrap()).unwrap();
        // Defaults become explicit on reload; the canonical form and hash
        // must still agree exactly.
        assert_eq!(reloaded.canonical_text(), text);
        assert_eq!(reloaded.config_hash(), config.config_hash());
        assert_eq!(reloaded.shift, config.shift);
        assert_eq!(reloaded.train, config.train);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        match parse_updates("seed=1\nbogus=2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_metadata_keys_are_ignored() {
        let text = "seed=5\nconfig_hash=gone\ncommand=train\nartifact.metrics.csv.sha256=00\ncalibrated_lambda=3\n";
        let updates = parse_updates(text).unwrap();
        assert_eq!(updates.len(), 1);
        let mut config = ExperimentConfig::default();
        config.apply_updates(&updates).unwrap();
        assert_eq!(config.train.seed, 5);
        assert_eq!(config.shift.seed, 5);
    }

    #[test]
    fn geometry_change_rederives_shift_fields() {
        let mut config = ExperimentConfig::default();
        config
            .apply_updates(&parse_updates("dim=4\nclasses=2\ndims=4,6,2\n").unwrap())
            .unwrap();
        assert_eq!(config.shift.scale, vec![1.0; 4]);
        assert_eq!(config.shift.offset, vec![0.0; 4]);
        assert_eq!(config.shift.class_means.len(), 2);
        assert_eq!(config.shift.class_means[1][1], 3.0);
        config.validate().unwrap();

        // Explicit values survive a geometry change in the same update set.
        let mut config = ExperimentConfig::default();
        config
            .apply_updates(
                &parse_updates("dim=4\nclasses=2\ndims=4,6,2\nscale=1,1,1,5\n").unwrap(),
            )
            .unwrap();
        assert_eq!(config.shift.scale, vec![1.0, 1.0, 1.0, 5.0]);
    }

    #[test]
    fn taps_default_to_head_layer() {
        let config = ExperimentConfig::default();
        assert_eq!(config.resolved_taps(), vec![2]);
        let two = ExperimentConfig {
            dims: vec![10, 3],
            ..ExperimentConfig::default()
        };
        assert_eq!(two.resolved_taps(), vec![0]);
    }

    #[test]
    fn single_lambda_broadcasts_over_taps() {
        let mut config = ExperimentConfig {
            taps: Some(vec![0, 2]),
            ..ExperimentConfig::default()
        };
        assert_eq!(config.resolved_lambdas().unwrap(), vec![1.0, 1.0]);
        config.train.lambda_per_tap = vec![0.5, 2.0];
        assert_eq!(config.resolved_lambdas().unwrap(), vec![0.5, 2.0]);
        config.train.lambda_per_tap = vec![0.5, 2.0, 3.0];
        assert!(config.resolved_lambdas().is_err());
    }

    #[test]
    fn hash_ignores_out_and_plot() {
        let base = ExperimentConfig::default();
        let mut other = base.clone();
        other.out = Some(PathBuf::from("elsewhere"));
        other.plot = true;
        assert_eq!(base.config_hash(), other.config_hash());
        let mut changed = base.clone();
        changed.train.seed = 99;
        changed.shift.seed = 99;
        assert_ne!(base.config_hash(), changed.config_hash());
    }

    #[test]
    fn validate_catches_mismatches() {
        let config = ExperimentConfig {
            taps: Some(vec![9]),
            ..ExperimentConfig::default()
        };
        assert!(config.validate().is_err());

        let config = ExperimentConfig {
            dims: vec![10, 16, 4],
            ..ExperimentConfig::default()
        };
        assert!(config.validate().is_err());

        let config = ExperimentConfig {
            source: Some(PathBuf::from("only-source.csv")),
            ..ExperimentConfig::default()
        };
        assert!(config.validate().is_err());
    }
}
