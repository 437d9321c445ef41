//! Central-finite-difference verification of every analytic gradient in the
//! crate: the CORAL gradient with respect to both feature matrices, the
//! softmax cross-entropy gradient, and the end-to-end parameter gradient of
//! the joint objective through a small network.
//!
//! These checks back both the test suite and the `gradcheck` CLI command.

use std::collections::BTreeMap;

use rand::Rng;

use crate::coral::{coral_grad, coral_loss};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::net::{class_loss_and_grad, init_network, seeded_rng, LabelBatch, Network};
use crate::trainer::joint_loss;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub components: usize,
    pub passed: bool,
}

impl CheckReport {
    pub fn summary_line(&self) -> String {
        format!(
            "{:<28} components={:<5} max_abs_err={:.3e} max_rel_err={:.3e} {}",
            self.name,
            self.components,
            self.max_abs_err,
            self.max_rel_err,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Central difference of a scalar function at `x`, one component at a time.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let original = probe[i];
        probe[i] = original + step;
        let plus = f(&probe);
        probe[i] = original - step;
        let minus = f(&probe);
        probe[i] = original;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Compares analytic and numeric gradients under a mixed tolerance: a
/// component passes when `|a - n| <= max(abs_tol, rel_tol * max(|a|, |n|))`.
fn compare(
    name: &str,
    analytic: &[f64],
    numeric: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> CheckReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut passed = true;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let abs = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel = if scale > 0.0 { abs / scale } else { 0.0 };
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
        if abs > abs_tol.max(rel_tol * scale) {
            passed = false;
        }
    }
    CheckReport {
        name: name.to_string(),
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        components: analytic.len(),
        passed,
    }
}

fn random_features(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    Matrix::new(rows, cols, data).expect("valid shape")
}

/// Checks the analytic CORAL gradient against central differences on
/// `instances` random batch pairs with `2 <= n <= max_rows` and
/// `1 <= d <= max_cols`. `corrupt` deliberately perturbs the analytic
/// gradient so failure detection itself can be exercised.
pub fn check_coral_gradient(
    seed: u64,
    instances: usize,
    max_rows: usize,
    max_cols: usize,
    corrupt: bool,
) -> Result<CheckReport> {
    let mut rng = seeded_rng(seed, 17);
    let mut analytic_all = Vec::new();
    let mut numeric_all = Vec::new();

    for _ in 0..instances {
        let d = rng.random_range(1..=max_cols);
        let n_s = rng.random_range(2..=max_rows);
        let n_t = rng.random_range(2..=max_rows);
        let source = random_features(&mut rng, n_s, d);
        let target = random_features(&mut rng, n_t, d);

        let grad = coral_grad(&source, &target)?;
        let mut analytic = grad.grad_source.data().to_vec();
        analytic.extend_from_slice(grad.grad_target.data());
        if corrupt {
            analytic[0] += 1e-2;
        }

        let split = n_s * d;
        let mut flat = source.data().to_vec();
        flat.extend_from_slice(target.data());
        let mut f = |x: &[f64]| {
            let s = Matrix::new(n_s, d, x[..split].to_vec()).expect("shape");
            let t = Matrix::new(n_t, d, x[split..].to_vec()).expect("shape");
            coral_loss(&s, &t).expect("valid inputs")
        };
        let numeric = central_difference(&mut f, &flat, FD_STEP);

        analytic_all.extend(analytic);
        numeric_all.extend(numeric);
    }

    Ok(compare(
        "coral-gradient",
        &analytic_all,
        &numeric_all,
        1e-7,
        1e-5,
    ))
}

/// Checks the softmax cross-entropy gradient on one random logits batch.
pub fn check_class_gradient(seed: u64) -> Result<CheckReport> {
    let mut rng = seeded_rng(seed, 18);
    let (rows, classes) = (8, 5);
    let logits = random_features(&mut rng, rows, classes);
    let labels = LabelBatch::new((0..rows).map(|_| rng.random_range(0..classes)).collect());

    let (_, grad) = class_loss_and_grad(&logits, &labels)?;
    let mut f = |x: &[f64]| {
        let l = Matrix::new(rows, classes, x.to_vec()).expect("shape");
        class_loss_and_grad(&l, &labels).expect("valid labels").0
    };
    let numeric = central_difference(&mut f, logits.data(), FD_STEP);

    Ok(compare(
        "class-loss-gradient",
        grad.data(),
        &numeric,
        1e-9,
        1e-6,
    ))
}

fn joint_scalar(
    net: &Network,
    source: &Matrix,
    labels: &LabelBatch,
    target: &Matrix,
    lambda: f64,
) -> f64 {
    let source_pass = net.forward(source).expect("valid input");
    let (class, _) = class_loss_and_grad(source_pass.logits(), labels).expect("valid labels");
    let taps: Vec<usize> = net.coral_taps().iter().copied().collect();
    let target_pass = net.forward(target).expect("valid input");
    let corals: Vec<f64> = taps
        .iter()
        .map(|&tap| {
            coral_loss(
                source_pass.layer_output(tap).expect("tap"),
                target_pass.layer_output(tap).expect("tap"),
            )
            .expect("valid batches")
        })
        .collect();
    let lambdas = vec![lambda; corals.len()];
    joint_loss(class, &corals, &lambdas).expect("lengths match")
}

/// Checks the parameter gradient of `class + lambda * coral` through a
/// two-layer network against central differences of the scalar objective.
pub fn check_joint_gradient(seed: u64, lambda: f64) -> Result<CheckReport> {
    let mut rng = seeded_rng(seed, 19);
    let (in_dim, hidden, classes) = (4, 6, 3);
    let (n_s, n_t) = (6, 8);
    let mut net = init_network(&[in_dim, hidden, classes], 0.05, seed)?;
    // Nudge parameters off their init so ReLU kinks sit away from zero.
    let mut params = net.params_flat();
    for v in &mut params {
        *v += rng.random_range(-0.25..0.25);
    }
    net.set_params_flat(&params)?;

    let source = random_features(&mut rng, n_s, in_dim);
    let target = random_features(&mut rng, n_t, in_dim);
    let labels = LabelBatch::new((0..n_s).map(|_| rng.random_range(0..classes)).collect());

    // Analytic path: classification gradient plus lambda-scaled CORAL
    // gradients injected at the taps of both streams.
    let source_pass = net.forward(&source)?;
    let target_pass = net.forward(&target)?;
    let (_, grad_logits) = class_loss_and_grad(source_pass.logits(), &labels)?;
    let taps: Vec<usize> = net.coral_taps().iter().copied().collect();
    let mut source_taps = BTreeMap::new();
    let mut target_taps = BTreeMap::new();
    if lambda > 0.0 {
        for &tap in &taps {
            let grad = coral_grad(
                source_pass.layer_output(tap).expect("tap"),
                target_pass.layer_output(tap).expect("tap"),
            )?;
            source_taps.insert(tap, grad.grad_source.scale(lambda));
            target_taps.insert(tap, grad.grad_target.scale(lambda));
        }
    }
    let mut grads = net.backward(&source_pass, &grad_logits, &source_taps)?;
    if !target_taps.is_empty() {
        let zero = Matrix::zeros(n_t, classes);
        grads.add_in_place(&net.backward(&target_pass, &zero, &target_taps)?)?;
    }
    let analytic = net.grads_flat(&grads);

    let base = net.clone();
    let mut f = |x: &[f64]| {
        let mut probe = base.clone();
        probe.set_params_flat(x).expect("same length");
        joint_scalar(&probe, &source, &labels, &target, lambda)
    };
    let numeric = central_difference(&mut f, &net.params_flat(), FD_STEP);

    Ok(compare(
        &format!("joint-gradient(lambda={lambda})"),
        &analytic,
        &numeric,
        1e-7,
        1e-4,
    ))
}

/// The full verification suite run by the CLI: CORAL gradients on random
/// instances, the classification gradient, and the joint parameter gradient
/// at lambda 0, 0.5, and 10.
pub fn run_suite(seed: u64, max_rows: usize, max_cols: usize, corrupt: bool) -> Result<Vec<CheckReport>> {
    let mut reports = vec![
        check_coral_gradient(seed, 50, max_rows, max_cols, corrupt)?,
        check_class_gradient(seed)?,
    ];
    for lambda in [0.0, 0.5, 10.0] {
        reports.push(check_joint_gradient(seed, lambda)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_matches_simple_polynomial() {
        let mut f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let grad = central_difference(&mut f, &[2.0, 5.0], 1e-5);
        assert!((grad[0] - 4.0).abs() < 1e-8);
        assert!((grad[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn coral_gradient_suite_passes() {
        let report = check_coral_gradient(0, 50, 16, 8, false).unwrap();
        assert!(report.passed, "{}", report.summary_line());
        assert!(report.max_rel_err < 1e-5);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let report = check_coral_gradient(0, 5, 8, 4, true).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn class_gradient_passes() {
        let report = check_class_gradient(3).unwrap();
        assert!(report.passed, "{}", report.summary_line());
    }

    #[test]
    fn joint_gradient_passes_for_all_lambdas() {
        for lambda in [0.0, 0.5, 10.0] {
            let report = check_joint_gradient(1, lambda).unwrap();
            assert!(report.passed, "{}", report.summary_line());
        }
    }

    #[test]
    fn suite_reports_are_deterministic() {
        let a: Vec<String> = run_suite(9, 12, 6, false)
            .unwrap()
            .iter()
            .map(|r| r.summary_line())
            .collect();
        let b: Vec<String> = run_suite(9, 12, 6, false)
            .unwrap()
            .iter()
            .map(|r| r.summary_line())
            .collect();
        assert_eq!(a, b);
    }
}
