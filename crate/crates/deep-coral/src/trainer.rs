//! Dual-stream joint training: classification loss on the labeled source
//! stream plus weighted CORAL losses between source and target activations
//! at every tapped layer, all through one shared-parameter network.
//!
//! The training loop is sequential and single-writer over the network.
//! Target labels, when present on a dataset, are consulted only to report
//! target accuracy; they never influence an update.

use std::collections::BTreeMap;

use crate::coral::{coral_grad, coral_loss};
use crate::data::{BatchIterator, Dataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{class_loss_and_grad, LabelBatch, Network, Velocity};

/// Lower clamp for calibrated lambda values.
pub const LAMBDA_MIN: f64 = 1e-3;
/// Upper clamp for calibrated lambda values.
pub const LAMBDA_MAX: f64 = 1e4;
/// Fraction of the iteration budget spent on the calibration probe.
pub const PROBE_FRACTION: f64 = 0.1;

/// All training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// One weight per CORAL tap, each >= 0.
    pub lambda_per_tap: Vec<f64>,
    /// When set, a probe run picks the lambdas before the real run.
    pub auto_lambda: bool,
    pub batch_source: usize,
    pub batch_target: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiply the learning rate by `lr_decay_factor` every this many
    /// iterations; 0 disables decay.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub iterations: usize,
    /// Emit a full metrics record every this many iterations.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_per_tap: vec![1.0],
            auto_lambda: false,
            batch_source: 128,
            batch_target: 128,
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_every: 0,
            lr_decay_factor: 0.1,
            iterations: 600,
            eval_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".to_string()));
        }
        if self.batch_source < 2 || self.batch_target < 2 {
            return Err(Error::BatchTooSmall {
                batch: self.batch_source.min(self.batch_target),
            });
        }
        if self.lambda_per_tap.iter().any(|&l| !(l.is_finite() && l >= 0.0)) {
            return Err(Error::Config(
                "every lambda must be finite and >= 0".to_string(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".to_string()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".to_string()));
        }
        Ok(())
    }

    /// Learning rate in effect at 0-based iteration `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        if self.lr_decay_every == 0 {
            return self.lr;
        }
        let drops = (t / self.lr_decay_every) as i32;
        self.lr * self.lr_decay_factor.powi(drops)
    }
}

/// One source batch (features and labels) paired with one target batch
/// (features only) for a single step.
#[derive(Debug, Clone)]
pub struct DomainBatch {
    pub source: Matrix,
    pub source_labels: LabelBatch,
    pub target: Matrix,
}

/// Per-evaluation snapshot of the quantities worth plotting.
///
/// In a run log, the loss fields are training batch losses averaged over
/// the steps since the previous record, which is what smoothed loss curves
/// show; the accuracies and the CORAL distance are full-dataset
/// diagnostics. A record returned directly by [`train_step`] holds that
/// single step's batch values.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub class_loss: f64,
    pub coral_loss_per_tap: Vec<f64>,
    pub joint_loss: f64,
    pub source_acc: f64,
    /// Absent when no scoring labels are available for the target domain.
    pub target_acc: Option<f64>,
    /// CORAL distance at the last tap, recorded whether or not the loss is
    /// switched on; it never influences updates.
    pub coral_distance: f64,
}

/// The joint objective: `class_loss + Σ lambda_i * coral_loss_i`.
pub fn joint_loss(class_loss: f64, coral_losses: &[f64], lambdas: &[f64]) -> Result<f64> {
    if coral_losses.len() != lambdas.len() {
        return Err(Error::LengthMismatch(format!(
            "{} coral losses but {} lambdas",
            coral_losses.len(),
            lambdas.len()
        )));
    }
    Ok(class_loss
        + coral_losses
            .iter()
            .zip(lambdas)
            .map(|(c, l)| l * c)
            .sum::<f64>())
}

/// Fraction of rows whose argmax logit equals the label. Ties resolve to
/// the lowest class index.
pub fn evaluate(net: &Network, features: &Matrix, labels: &LabelBatch) -> Result<f64> {
    if labels.len() != features.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            features.rows()
        )));
    }
    let pass = net.forward(features)?;
    Ok(accuracy_from_logits(pass.logits(), labels))
}

fn accuracy_from_logits(logits: &Matrix, labels: &LabelBatch) -> f64 {
    let mut correct = 0usize;
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == labels.get(i) {
            correct += 1;
        }
    }
    correct as f64 / logits.rows() as f64
}

/// Runs one joint step: forwards both streams through the same parameters,
/// computes the classification loss on the source stream and a CORAL loss
/// at every tap, backpropagates the sum, and applies one SGD update.
/// The returned record reflects the state *before* the update. Taps whose
/// lambda is exactly zero contribute metrics but no gradient.
pub fn train_step(
    net: &mut Network,
    velocity: &mut Velocity,
    batch: &DomainBatch,
    config: &TrainConfig,
    lambdas: &[f64],
    iteration: usize,
) -> Result<MetricsRecord> {
    let taps: Vec<usize> = net.coral_taps().iter().copied().collect();
    if lambdas.len() != taps.len() {
        return Err(Error::LengthMismatch(format!(
            "{} lambdas for {} coral taps",
            lambdas.len(),
            taps.len()
        )));
    }
    if batch.source.rows() < 2 || batch.target.rows() < 2 {
        return Err(Error::DegenerateBatch(
            "both streams need at least 2 rows per step".to_string(),
        ));
    }

    // Both streams read the same parameters; the digest comparison guards
    // the shared-parameter invariant in debug builds.
    #[cfg(debug_assertions)]
    let digest_before_source = net.param_digest();
    let source_pass = net.forward(&batch.source)?;
    #[cfg(debug_assertions)]
    debug_assert_eq!(digest_before_source, net.param_digest());
    let target_pass = net.forward(&batch.target)?;

    let (class_loss, grad_logits) = class_loss_and_grad(source_pass.logits(), &batch.source_labels)?;

    let mut coral_losses = Vec::with_capacity(taps.len());
    let mut source_tap_grads: BTreeMap<usize, Matrix> = BTreeMap::new();
    let mut target_tap_grads: BTreeMap<usize, Matrix> = BTreeMap::new();
    for (&tap, &lambda) in taps.iter().zip(lambdas) {
        let a_s = source_pass.layer_output(tap).expect("valid tap");
        let a_t = target_pass.layer_output(tap).expect("valid tap");
        coral_losses.push(coral_loss(a_s, a_t)?);
        if lambda > 0.0 {
            let grad = coral_grad(a_s, a_t)?;
            source_tap_grads.insert(tap, grad.grad_source.scale(lambda));
            target_tap_grads.insert(tap, grad.grad_target.scale(lambda));
        }
    }

    let joint = joint_loss(class_loss, &coral_losses, lambdas)?;
    if !joint.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite joint loss at iteration {iteration}"
        )));
    }

    let record = MetricsRecord {
        iteration,
        class_loss,
        coral_loss_per_tap: coral_losses.clone(),
        joint_loss: joint,
        source_acc: accuracy_from_logits(source_pass.logits(), &batch.source_labels),
        target_acc: None,
        coral_distance: coral_losses.last().copied().unwrap_or(f64::NAN),
    };

    let mut grads = net.backward(&source_pass, &grad_logits, &source_tap_grads)?;
    if !target_tap_grads.is_empty() {
        let zero_logits = Matrix::zeros(batch.target.rows(), net.output_dim());
        let target_grads = net.backward(&target_pass, &zero_logits, &target_tap_grads)?;
        grads.add_in_place(&target_grads)?;
    }

    net.sgd_step(
        &grads,
        velocity,
        config.lr_at(iteration),
        config.momentum,
        config.weight_decay,
    )?;
    Ok(record)
}

/// Mean of the loss fields over a window of step records. Accuracy and
/// distance fields are left for the caller.
fn mean_losses(window: &[MetricsRecord]) -> (f64, Vec<f64>, f64) {
    let n = window.len().max(1) as f64;
    let class = window.iter().map(|r| r.class_loss).sum::<f64>() / n;
    let taps = window.first().map_or(0, |r| r.coral_loss_per_tap.len());
    let corals: Vec<f64> = (0..taps)
        .map(|i| window.iter().map(|r| r.coral_loss_per_tap[i]).sum::<f64>() / n)
        .collect();
    let joint = window.iter().map(|r| r.joint_loss).sum::<f64>() / n;
    (class, corals, joint)
}

/// Combines a window's mean batch losses with full-dataset accuracies and
/// the full-dataset CORAL distance at the last tap, all at the network's
/// current parameters.
fn eval_record(
    net: &Network,
    source: &Dataset,
    target: &Dataset,
    step: &MetricsRecord,
    iteration: usize,
) -> Result<MetricsRecord> {
    let source_pass = net.forward(&source.features)?;
    let target_pass = net.forward(&target.features)?;
    let labels = source
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config("source dataset has no labels".to_string()))?;

    let coral_distance = match net.coral_taps().iter().next_back() {
        Some(&tap) => coral_loss(
            source_pass.layer_output(tap).expect("valid tap"),
            target_pass.layer_output(tap).expect("valid tap"),
        )?,
        None => f64::NAN,
    };

    Ok(MetricsRecord {
        iteration,
        class_loss: step.class_loss,
        coral_loss_per_tap: step.coral_loss_per_tap.clone(),
        joint_loss: step.joint_loss,
        source_acc: accuracy_from_logits(source_pass.logits(), labels),
        target_acc: target
            .labels
            .as_ref()
            .map(|l| accuracy_from_logits(target_pass.logits(), l)),
        coral_distance,
    })
}

fn epochs_needed(iterations: usize, batch: usize, n: usize) -> usize {
    (iterations * batch).div_ceil(n) + 1
}

fn validate_run_inputs(net: &Network, config: &TrainConfig, source: &Dataset, target: &Dataset) -> Result<()> {
    config.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Config("datasets must be non-empty".to_string()));
    }
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "source dim {} != target dim {}",
            source.dim(),
            target.dim()
        )));
    }
    if source.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "data dim {} != network input dim {}",
            source.dim(),
            net.input_dim()
        )));
    }
    if source.labels.is_none() {
        return Err(Error::Config(
            "source dataset must carry labels".to_string(),
        ));
    }
    if source.num_classes != net.output_dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} classes but network outputs {}",
            source.num_classes,
            net.output_dim()
        )));
    }
    Ok(())
}

/// Runs `iterations` steps, optionally logging an evaluation record every
/// `eval_every` iterations and after the final one. Logged and returned
/// loss values are means of the per-step batch losses over the window
/// since the previous record, which is what smoothed training curves
/// show; batch CORAL losses carry an irreducible sampling floor that a
/// single full-dataset evaluation would hide. Returns the trailing-window
/// mean record (accuracy fields unset).
fn training_loop(
    net: &mut Network,
    config: &TrainConfig,
    lambdas: &[f64],
    source: &Dataset,
    target: &Dataset,
    iterations: usize,
    records: Option<&mut Vec<MetricsRecord>>,
) -> Result<MetricsRecord> {
    let labels = source.labels.as_ref().expect("validated");
    let mut velocity = Velocity::zeros(net);
    let mut src_batches = BatchIterator::new(
        source.len(),
        config.batch_source,
        config.seed.wrapping_add(1),
        epochs_needed(iterations, config.batch_source, source.len()),
    )?;
    let mut tgt_batches = BatchIterator::new(
        target.len(),
        config.batch_target,
        config.seed.wrapping_add(2),
        epochs_needed(iterations, config.batch_target, target.len()),
    )?;

    let mut log = records;
    let mut window: Vec<MetricsRecord> = Vec::new();
    for t in 0..iterations {
        let src_idx = src_batches.next().expect("enough epochs");
        let tgt_idx = tgt_batches.next().expect("enough epochs");
        let batch = DomainBatch {
            source: source.features.select_rows(&src_idx)?,
            source_labels: labels.select(&src_idx),
            target: target.features.select_rows(&tgt_idx)?,
        };
        let step = train_step(net, &mut velocity, &batch, config, lambdas, t)?;
        if !step.joint_loss.is_finite() || !step.class_loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss at iteration {t}"
            )));
        }
        window.push(step);
        if window.len() > config.eval_every {
            window.remove(0);
        }
        if let Some(records) = log.as_mut() {
            if (t + 1) % config.eval_every == 0 || t + 1 == iterations {
                let since_last = (t + 1) % config.eval_every;
                let span = if since_last == 0 {
                    config.eval_every
                } else {
                    since_last
                }
                .min(window.len());
                let (class, corals, joint) = mean_losses(&window[window.len() - span..]);
                let mean_step = MetricsRecord {
                    iteration: t + 1,
                    class_loss: class,
                    coral_loss_per_tap: corals,
                    joint_loss: joint,
                    source_acc: f64::NAN,
                    target_acc: None,
                    coral_distance: f64::NAN,
                };
                records.push(eval_record(net, source, target, &mean_step, t + 1)?);
            }
        }
    }
    if window.is_empty() {
        return Err(Error::Config("iterations must be at least 1".to_string()));
    }
    let (class, corals, joint) = mean_losses(&window);
    Ok(MetricsRecord {
        iteration: iterations,
        class_loss: class,
        coral_loss_per_tap: corals,
        joint_loss: joint,
        source_acc: f64::NAN,
        target_acc: None,
        coral_distance: f64::NAN,
    })
}

/// Picks the per-tap lambdas by running a short probe (10% of the iteration
/// budget, at least one step) with the configured initial lambdas on a clone
/// of the network, then setting each lambda to the ratio of the probe's
/// final batch classification loss to its final batch CORAL loss, clamped
/// to `[1e-3, 1e4]`. Heuristic: it targets the regime where the two loss
/// curves end up at the same scale.
pub fn calibrate_lambda(
    net: &Network,
    source: &Dataset,
    target: &Dataset,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    validate_run_inputs(net, config, source, target)?;
    let probe_iterations = ((config.iterations as f64 * PROBE_FRACTION) as usize).max(1);
    let mut probe_net = net.clone();
    let probe_end = training_loop(
        &mut probe_net,
        config,
        &config.lambda_per_tap,
        source,
        target,
        probe_iterations,
        None,
    )
    .map_err(|e| match e {
        Error::Divergence(msg) | Error::NonFinite(msg) => Error::ProbeDiverged(msg),
        other => other,
    })?;

    if !probe_end.class_loss.is_finite()
        || probe_end.coral_loss_per_tap.iter().any(|c| !c.is_finite())
    {
        return Err(Error::ProbeDiverged(
            "probe ended with non-finite losses".to_string(),
        ));
    }

    Ok(probe_end
        .coral_loss_per_tap
        .iter()
        .map(|&c| (probe_end.class_loss / c).clamp(LAMBDA_MIN, LAMBDA_MAX))
        .collect())
}

/// Result of a full experiment run.
#[derive(Debug)]
pub struct ExperimentResult {
    pub records: Vec<MetricsRecord>,
    pub net: Network,
    /// The lambdas actually used (calibrated when `auto_lambda` is set).
    pub lambdas: Vec<f64>,
}

/// Trains `net` on the labeled source and unlabeled target datasets with
/// seeded shuffled batching, emitting a full metrics record every
/// `eval_every` iterations and after the final one. Target labels, when
/// present, are used for the reported target accuracy only.
pub fn run_experiment(
    mut net: Network,
    config: &TrainConfig,
    source: &Dataset,
    target: &Dataset,
) -> Result<ExperimentResult> {
    validate_run_inputs(&net, config, source, target)?;
    let lambdas = if config.auto_lambda {
        calibrate_lambda(&net, source, target, config)?
    } else {
        config.lambda_per_tap.clone()
    };

    let mut records = Vec::new();
    training_loop(
        &mut net,
        config,
        &lambdas,
        source,
        target,
        config.iterations,
        Some(&mut records),
    )?;
    Ok(ExperimentResult {
        records,
        net,
        lambdas,
    })
}

/// Supervised reference run: identical source batching and update arithmetic
/// with the CORAL path absent. A dual-stream run with every lambda at zero
/// lands on bit-identical parameters.
pub fn run_source_only(mut net: Network, config: &TrainConfig, source: &Dataset) -> Result<Network> {
    config.validate()?;
    if source.is_empty() {
        return Err(Error::Config("dataset must be non-empty".to_string()));
    }
    let labels = source
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config("source dataset must carry labels".to_string()))?;

    let mut velocity = Velocity::zeros(&net);
    let mut src_batches = BatchIterator::new(
        source.len(),
        config.batch_source,
        config.seed.wrapping_add(1),
        epochs_needed(config.iterations, config.batch_source, source.len()),
    )?;
    for t in 0..config.iterations {
        let idx = src_batches.next().expect("enough epochs");
        let features = source.features.select_rows(&idx)?;
        let batch_labels = labels.select(&idx);
        let pass = net.forward(&features)?;
        let (loss, grad_logits) = class_loss_and_grad(pass.logits(), &batch_labels)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss at iteration {t}"
            )));
        }
        let grads = net.backward(&pass, &grad_logits, &BTreeMap::new())?;
        net.sgd_step(
            &grads,
            &mut velocity,
            config.lr_at(t),
            config.momentum,
            config.weight_decay,
        )?;
    }
    Ok(net)
}

/// Canonical CSV header for a metrics log with `taps` CORAL columns.
pub fn metrics_csv_header(taps: usize) -> String {
    let mut cols = vec!["iteration".to_string(), "class_loss".to_string()];
    for i in 0..taps {
        cols.push(format!("coral_loss_{i}"));
    }
    cols.extend(
        ["joint_loss", "source_acc", "target_acc", "coral_distance"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

/// Renders records as CSV in full-precision decimal.
pub fn metrics_to_csv(records: &[MetricsRecord], taps: usize) -> String {
    use crate::matrix::format_f64;
    let mut out = metrics_csv_header(taps);
    out.push('\n');
    for r in records {
        let mut fields = vec![r.iteration.to_string(), format_f64(r.class_loss)];
        for i in 0..taps {
            fields.push(format_f64(r.coral_loss_per_tap.get(i).copied().unwrap_or(f64::NAN)));
        }
        fields.push(format_f64(r.joint_loss));
        fields.push(format_f64(r.source_acc));
        fields.push(format_f64(r.target_acc.unwrap_or(f64::NAN)));
        fields.push(format_f64(r.coral_distance));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
