//! Feed-forward classification network with explicit forward and backward
//! passes.
//!
//! The architecture is a chain of affine layers with ReLU between them; the
//! final affine layer produces logits and acts as the classification head.
//! Any layer's post-activation output can be tapped so a CORAL penalty can be
//! attached to it; by default the tap sits on the logits, mirroring a
//! last-classification-layer attachment.
//!
//! The forward pass is pure: it returns a [`ForwardPass`] holding every
//! intermediate activation, and [`Network::backward`] consumes that record.
//! A network plus its [`Velocity`] is single-writer during training; forward
//! evaluation on a frozen network is safe from concurrent readers.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Learning-rate multiplier for the classification head, which trains from
/// scratch while earlier layers move slowly.
pub const HEAD_LR_MULTIPLIER: f64 = 10.0;

/// Stream id for network initialization draws (see [`seeded_rng`]).
pub const STREAM_NET_INIT: u64 = 2;

/// ChaCha8 generator for `seed` on an independent stream. Every random
/// draw in the crate goes through this so runs are reproducible at the
/// sequence level across platforms.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Integer class indices for one batch, one per example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelBatch {
    labels: Vec<usize>,
}

impl LabelBatch {
    pub fn new(labels: Vec<usize>) -> Self {
        LabelBatch { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    /// Sub-batch in the given index order.
    pub fn select(&self, indices: &[usize]) -> LabelBatch {
        LabelBatch::new(indices.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Affine layer parameters. Weights are `in_dim x out_dim`, row-major, so a
/// batch `X` maps to `X · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub lr_multiplier: f64,
}

impl AffineLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// One network layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Affine(AffineLayer),
    Relu,
}

/// Weight and bias gradients for one affine layer.
#[derive(Debug, Clone)]
pub struct AffineGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Parameter gradients, aligned with the network's layer list (`None` at
/// non-parametric layers).
#[derive(Debug, Clone)]
pub struct Gradients {
    pub per_layer: Vec<Option<AffineGrad>>,
}

impl Gradients {
    /// Entry-wise sum with another gradient set of identical structure.
    pub fn add_in_place(&mut self, other: &Gradients) -> Result<()> {
        if self.per_layer.len() != other.per_layer.len() {
            return Err(Error::LengthMismatch(
                "gradient layer counts differ".to_string(),
            ));
        }
        for (a, b) in self.per_layer.iter_mut().zip(&other.per_layer) {
            match (a, b) {
                (Some(ga), Some(gb)) => {
                    ga.weights.add_in_place(&gb.weights)?;
                    for (x, y) in ga.bias.iter_mut().zip(&gb.bias) {
                        *x += y;
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(Error::LengthMismatch(
                        "gradient structures differ".to_string(),
                    ))
                }
            }
        }
        Ok(())
    }
}

/// Momentum state, one buffer per affine layer.
#[derive(Debug, Clone)]
pub struct Velocity {
    per_layer: Vec<Option<AffineGrad>>,
}

impl Velocity {
    /// Zero-initialized momentum buffers matching `net`.
    pub fn zeros(net: &Network) -> Velocity {
        let per_layer = net
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Affine(a) => Some(AffineGrad {
                    weights: Matrix::zeros(a.in_dim(), a.out_dim()),
                    bias: vec![0.0; a.out_dim()],
                }),
                Layer::Relu => None,
            })
            .collect();
        Velocity { per_layer }
    }
}

/// Activation record from one forward pass: `activations[0]` is the input
/// batch and `activations[i + 1]` is the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    activations: Vec<Matrix>,
}

impl ForwardPass {
    /// Output of the final layer.
    pub fn logits(&self) -> &Matrix {
        self.activations.last().expect("non-empty forward pass")
    }

    /// Post-activation output of layer `index`.
    pub fn layer_output(&self, index: usize) -> Option<&Matrix> {
        self.activations.get(index + 1)
    }

    pub fn input(&self) -> &Matrix {
        &self.activations[0]
    }
}

/// The network: an ordered layer list plus the set of layer indices whose
/// outputs feed CORAL losses.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    coral_taps: BTreeSet<usize>,
}

/// Builds a network from a chain of layer widths: one affine layer per
/// consecutive dim pair with ReLU in between, no nonlinearity after the
/// last (head) layer.
///
/// Hidden layers use fan-in scaled uniform init `U(-1/sqrt(in), 1/sqrt(in))`;
/// the head draws from `N(0, head_init_std^2)` and gets a 10x learning-rate
/// multiplier. Biases start at zero. The default CORAL tap is the head
/// output (the logits). Identical seeds give bit-identical networks.
pub fn init_network(layer_dims: &[usize], head_init_std: f64, seed: u64) -> Result<Network> {
    if layer_dims.len() < 2 {
        return Err(Error::BadArchitecture(format!(
            "need at least input and output dims, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::BadArchitecture(format!(
            "layer dims must be positive, got {layer_dims:?}"
        )));
    }
    if !(head_init_std.is_finite() && head_init_std > 0.0) {
        return Err(Error::BadArchitecture(format!(
            "head_init_std must be positive, got {head_init_std}"
        )));
    }

    let mut rng = seeded_rng(seed, STREAM_NET_INIT);
    let head_dist = Normal::new(0.0, head_init_std).expect("positive std");
    let mut layers = Vec::new();
    let num_affine = layer_dims.len() - 1;

    for l in 0..num_affine {
        let (in_dim, out_dim) = (layer_dims[l], layer_dims[l + 1]);
        let is_head = l == num_affine - 1;
        let mut data = Vec::with_capacity(in_dim * out_dim);
        if is_head {
            for _ in 0..in_dim * out_dim {
                data.push(head_dist.sample(&mut rng));
            }
        } else {
            let bound = 1.0 / (in_dim as f64).sqrt();
            for _ in 0..in_dim * out_dim {
                data.push(rng.random_range(-bound..bound));
            }
        }
        layers.push(Layer::Affine(AffineLayer {
            weights: Matrix::new(in_dim, out_dim, data)?,
            bias: vec![0.0; out_dim],
            lr_multiplier: if is_head { HEAD_LR_MULTIPLIER } else { 1.0 },
        }));
        if !is_head {
            layers.push(Layer::Relu);
        }
    }

    let mut coral_taps = BTreeSet::new();
    coral_taps.insert(layers.len() - 1);
    Ok(Network { layers, coral_taps })
}

impl Network {
    /// Assembles a network from explicit layers and a tap set, validating
    /// that the first and last layers are affine (the last is the
    /// classification head), that affine shapes chain, and that taps are in
    /// range.
    pub fn from_parts(layers: Vec<Layer>, taps: &[usize]) -> Result<Network> {
        if layers.is_empty() {
            return Err(Error::BadArchitecture("network has no layers".to_string()));
        }
        if !matches!(layers.first(), Some(Layer::Affine(_)))
            || !matches!(layers.last(), Some(Layer::Affine(_)))
        {
            return Err(Error::BadArchitecture(
                "first and last layers must be affine".to_string(),
            ));
        }
        let mut width = None;
        for (i, layer) in layers.iter().enumerate() {
            if let Layer::Affine(a) = layer {
                if let Some(w) = width {
                    if a.in_dim() != w {
                        return Err(Error::BadArchitecture(format!(
                            "layer {i} expects {} inputs, previous layer produces {w}",
                            a.in_dim()
                        )));
                    }
                }
                if a.bias.len() != a.out_dim() {
                    return Err(Error::BadArchitecture(format!(
                        "layer {i} bias length {} does not match width {}",
                        a.bias.len(),
                        a.out_dim()
                    )));
                }
                if !(a.lr_multiplier.is_finite() && a.lr_multiplier > 0.0) {
                    return Err(Error::BadArchitecture(format!(
                        "layer {i} lr_multiplier must be positive"
                    )));
                }
                width = Some(a.out_dim());
            }
        }
        let mut net = Network {
            layers,
            coral_taps: BTreeSet::new(),
        };
        net.set_coral_taps(taps)?;
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn coral_taps(&self) -> &BTreeSet<usize> {
        &self.coral_taps
    }

    /// Replaces the CORAL tap set. Indices must address existing layers.
    pub fn set_coral_taps(&mut self, taps: &[usize]) -> Result<()> {
        let mut set = BTreeSet::new();
        for &t in taps {
            if t >= self.layers.len() {
                return Err(Error::BadArchitecture(format!(
                    "coral tap {t} out of range for {} layers",
                    self.layers.len()
                )));
            }
            set.insert(t);
        }
        self.coral_taps = set;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match &self.layers[0] {
            Layer::Affine(a) => a.in_dim(),
            Layer::Relu => unreachable!("first layer is always affine"),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Affine(a) => Some(a.out_dim()),
                Layer::Relu => None,
            })
            .expect("at least one affine layer")
    }

    pub fn layer_mut(&mut self, index: usize) -> Option<&mut Layer> {
        self.layers.get_mut(index)
    }

    /// Runs the batch through every layer, recording all activations.
    pub fn forward(&self, input: &Matrix) -> Result<ForwardPass> {
        if input.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} features, network expects {}",
                input.cols(),
                self.input_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for layer in &self.layers {
            let prev = activations.last().expect("non-empty");
            let next = match layer {
                Layer::Affine(a) => {
                    let mut out = prev.matmul(&a.weights)?;
                    for i in 0..out.rows() {
                        for (v, b) in out.data_mut()[i * a.out_dim()..(i + 1) * a.out_dim()]
                            .iter_mut()
                            .zip(&a.bias)
                        {
                            *v += b;
                        }
                    }
                    out
                }
                Layer::Relu => {
                    let mut out = prev.clone();
                    for v in out.data_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    out
                }
            };
            activations.push(next);
        }
        Ok(ForwardPass { activations })
    }

    /// Convenience wrapper returning the logits plus the activation matrix
    /// at every CORAL tap.
    pub fn forward_with_taps(&self, input: &Matrix) -> Result<(Matrix, BTreeMap<usize, Matrix>)> {
        let pass = self.forward(input)?;
        let taps = self
            .coral_taps
            .iter()
            .map(|&i| (i, pass.layer_output(i).expect("valid tap").clone()))
            .collect();
        Ok((pass.logits().clone(), taps))
    }

    fn check_pass(&self, pass: &ForwardPass) -> Result<()> {
        if pass.activations.len() != self.layers.len() + 1 {
            return Err(Error::StaleForward(format!(
                "forward pass has {} activations, network has {} layers",
                pass.activations.len(),
                self.layers.len()
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let in_ok = match layer {
                Layer::Affine(a) => pass.activations[i].cols() == a.in_dim(),
                Layer::Relu => pass.activations[i].cols() == pass.activations[i + 1].cols(),
            };
            if !in_ok || pass.activations[i].rows() != pass.activations[i + 1].rows() {
                return Err(Error::StaleForward(format!(
                    "activation shapes do not match the network at layer {i}"
                )));
            }
        }
        Ok(())
    }

    /// Backpropagates through the recorded pass. `grad_logits` is the loss
    /// gradient at the final output; `tap_grads` carries extra gradients
    /// injected at tapped layer outputs (already scaled by their weights).
    /// Contributions arriving at shared layers sum.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad_logits: &Matrix,
        tap_grads: &BTreeMap<usize, Matrix>,
    ) -> Result<Gradients> {
        self.check_pass(pass)?;
        let logits = pass.logits();
        if grad_logits.rows() != logits.rows() || grad_logits.cols() != logits.cols() {
            return Err(Error::StaleForward(format!(
                "grad_logits is {}x{}, logits are {}x{}",
                grad_logits.rows(),
                grad_logits.cols(),
                logits.rows(),
                logits.cols()
            )));
        }
        for (&i, g) in tap_grads {
            let out = pass.layer_output(i).ok_or_else(|| {
                Error::StaleForward(format!("tap gradient at invalid layer {i}"))
            })?;
            if g.rows() != out.rows() || g.cols() != out.cols() {
                return Err(Error::StaleForward(format!(
                    "tap gradient at layer {i} is {}x{}, activation is {}x{}",
                    g.rows(),
                    g.cols(),
                    out.rows(),
                    out.cols()
                )));
            }
        }

        let num_layers = self.layers.len();
        let mut per_layer: Vec<Option<AffineGrad>> = vec![None; num_layers];
        let mut upstream = grad_logits.clone();
        if let Some(t) = tap_grads.get(&(num_layers - 1)) {
            upstream.add_in_place(t)?;
        }

        for i in (0..num_layers).rev() {
            let input = &pass.activations[i];
            match &self.layers[i] {
                Layer::Affine(a) => {
                    let grad_w = input.transpose().matmul(&upstream)?;
                    let grad_b = upstream.col_sums();
                    per_layer[i] = Some(AffineGrad {
                        weights: grad_w,
                        bias: grad_b,
                    });
                    upstream = upstream.matmul(&a.weights.transpose())?;
                }
                Layer::Relu => {
                    let mut g = upstream;
                    for (v, &x) in g.data_mut().iter_mut().zip(input.data()) {
                        if x <= 0.0 {
                            *v = 0.0;
                        }
                    }
                    upstream = g;
                }
            }
            if i > 0 {
                if let Some(t) = tap_grads.get(&(i - 1)) {
                    upstream.add_in_place(t)?;
                }
            }
        }

        Ok(Gradients { per_layer })
    }

    /// One SGD-with-momentum update:
    /// `v <- momentum * v - lr * lr_multiplier * (grad + weight_decay * param)`
    /// then `param <- param + v`. Weight decay applies to weights only, not
    /// biases. Fails if any updated value is non-finite; the network state
    /// is unspecified after such a failure and training must abort.
    pub fn sgd_step(
        &mut self,
        grads: &Gradients,
        velocity: &mut Velocity,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {weight_decay}"
            )));
        }
        if grads.per_layer.len() != self.layers.len()
            || velocity.per_layer.len() != self.layers.len()
        {
            return Err(Error::LengthMismatch(
                "gradient or velocity structure does not match the network".to_string(),
            ));
        }

        let mut all_finite = true;
        for ((layer, grad), vel) in self
            .layers
            .iter_mut()
            .zip(&grads.per_layer)
            .zip(&mut velocity.per_layer)
        {
            let Layer::Affine(a) = layer else { continue };
            let (Some(g), Some(v)) = (grad, vel) else {
                return Err(Error::LengthMismatch(
                    "missing gradient or velocity for an affine layer".to_string(),
                ));
            };
            if g.weights.rows() != a.in_dim() || g.weights.cols() != a.out_dim() {
                return Err(Error::DimensionMismatch(
                    "gradient shape does not match layer weights".to_string(),
                ));
            }
            let step = lr * a.lr_multiplier;
            for ((w, vw), gw) in a
                .weights
                .data_mut()
                .iter_mut()
                .zip(v.weights.data_mut())
                .zip(g.weights.data())
            {
                *vw = momentum * *vw - step * (gw + weight_decay * *w);
                *w += *vw;
                all_finite &= w.is_finite();
            }
            for ((b, vb), gb) in a.bias.iter_mut().zip(&mut v.bias).zip(&g.bias) {
                *vb = momentum * *vb - step * gb;
                *b += *vb;
                all_finite &= b.is_finite();
            }
        }

        if !all_finite {
            return Err(Error::NonFinite(
                "parameter update produced a non-finite value".to_string(),
            ));
        }
        Ok(())
    }

    /// All parameters flattened in layer order (weights row-major, then
    /// bias, per affine layer).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Layer::Affine(a) = layer {
                out.extend_from_slice(a.weights.data());
                out.extend_from_slice(&a.bias);
            }
        }
        out
    }

    /// Writes a flat parameter vector back (inverse of [`params_flat`]).
    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        let mut offset = 0;
        for layer in &mut self.layers {
            if let Layer::Affine(a) = layer {
                let w_len = a.weights.data().len();
                let b_len = a.bias.len();
                if offset + w_len + b_len > params.len() {
                    return Err(Error::LengthMismatch(
                        "flat parameter vector too short".to_string(),
                    ));
                }
                a.weights
                    .data_mut()
                    .copy_from_slice(&params[offset..offset + w_len]);
                offset += w_len;
                a.bias.copy_from_slice(&params[offset..offset + b_len]);
                offset += b_len;
            }
        }
        if offset != params.len() {
            return Err(Error::LengthMismatch(
                "flat parameter vector too long".to_string(),
            ));
        }
        Ok(())
    }

    /// Flattens gradients in the same order as [`params_flat`].
    pub fn grads_flat(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for g in grads.per_layer.iter().flatten() {
            out.extend_from_slice(g.weights.data());
            out.extend_from_slice(&g.bias);
        }
        out
    }

    /// SHA-256 over the exact parameter bits, layer structure, and tap set.
    /// Two networks share a digest iff their checkpoints are byte-identical.
    pub fn param_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for &t in &self.coral_taps {
            hasher.update(t.to_le_bytes());
        }
        for layer in &self.layers {
            match layer {
                Layer::Affine(a) => {
                    hasher.update(b"affine");
                    hasher.update(a.in_dim().to_le_bytes());
                    hasher.update(a.out_dim().to_le_bytes());
                    hasher.update(a.lr_multiplier.to_le_bytes());
                    for &v in a.weights.data() {
                        hasher.update(v.to_le_bytes());
                    }
                    for &v in &a.bias {
                        hasher.update(v.to_le_bytes());
                    }
                }
                Layer::Relu => hasher.update(b"relu"),
            }
        }
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Row-wise softmax with max-logit subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    let cols = logits.cols();
    for i in 0..logits.rows() {
        let row = &mut out.data_mut()[i * cols..(i + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean softmax cross-entropy over the batch plus its gradient with respect
/// to the logits, `(softmax - one_hot) / n`.
pub fn class_loss_and_grad(logits: &Matrix, labels: &LabelBatch) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    let classes = logits.cols();
    for (i, &y) in labels.as_slice().iter().enumerate() {
        if y >= classes {
            return Err(Error::BadLabel(format!(
                "label {y} at row {i} out of range for {classes} classes"
            )));
        }
    }

    let n = logits.rows() as f64;
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += lse - row[labels.get(i)];
    }
    loss /= n;

    for i in 0..grad.rows() {
        *grad.at_mut(i, labels.get(i)) -= 1.0;
    }
    let grad = grad.scale(1.0 / n);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_net(dim: usize) -> Network {
        let mut net = init_network(&[dim, dim], 0.005, 0).unwrap();
        if let Some(Layer::Affine(a)) = net.layer_mut(0) {
            let mut eye = Matrix::zeros(dim, dim);
            for i in 0..dim {
                *eye.at_mut(i, i) = 1.0;
            }
            a.weights = eye;
            a.bias = vec![0.0; dim];
        }
        net
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_network(&[2, 31], 0.005, 7).unwrap();
        let b = init_network(&[2, 31], 0.005, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.param_digest(), b.param_digest());
        let c = init_network(&[2, 31], 0.005, 8).unwrap();
        assert_ne!(a.param_digest(), c.param_digest());
    }

    #[test]
    fn head_gets_tenfold_lr_multiplier() {
        let net = init_network(&[2, 31], 0.005, 7).unwrap();
        let Layer::Affine(head) = &net.layers()[net.num_layers() - 1] else {
            panic!("head must be affine");
        };
        assert_eq!(head.lr_multiplier, 10.0);

        let deep = init_network(&[4, 8, 3], 0.005, 0).unwrap();
        let Layer::Affine(first) = &deep.layers()[0] else {
            panic!()
        };
        assert_eq!(first.lr_multiplier, 1.0);
    }

    #[test]
    fn init_shapes_chain() {
        let net = init_network(&[4, 8, 3], 0.005, 0).unwrap();
        let affine_shapes: Vec<(usize, usize)> = net
            .layers()
            .iter()
            .filter_map(|l| match l {
                Layer::Affine(a) => Some((a.in_dim(), a.out_dim())),
                Layer::Relu => None,
            })
            .collect();
        assert_eq!(affine_shapes, vec![(4, 8), (8, 3)]);
        assert!(init_network(&[4], 0.005, 0).is_err());
        assert!(init_network(&[4, 0, 3], 0.005, 0).is_err());
        assert!(init_network(&[4, 3], 0.0, 0).is_err());
    }

    #[test]
    fn forward_identity_and_relu() {
        let net = identity_net(2);
        let x = Matrix::from_rows(&[vec![-1.0, 2.0], vec![0.5, -0.25]]).unwrap();
        let pass = net.forward(&x).unwrap();
        assert_eq!(pass.logits(), &x);

        let mut relu_net = init_network(&[2, 2, 2], 0.005, 0).unwrap();
        if let Some(Layer::Affine(a)) = relu_net.layer_mut(0) {
            let mut eye = Matrix::zeros(2, 2);
            *eye.at_mut(0, 0) = 1.0;
            *eye.at_mut(1, 1) = 1.0;
            a.weights = eye;
        }
        let pass = relu_net.forward(&Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(pass.layer_output(1).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn forward_taps_have_contract_shape() {
        let mut net = init_network(&[3, 5, 2], 0.005, 1).unwrap();
        net.set_coral_taps(&[0]).unwrap();
        let x = Matrix::zeros(4, 3);
        let (logits, taps) = net.forward_with_taps(&x).unwrap();
        assert_eq!(logits.rows(), 4);
        assert_eq!(taps.len(), 1);
        let tap0 = &taps[&0];
        assert_eq!((tap0.rows(), tap0.cols()), (4, 5));
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let net = init_network(&[3, 2], 0.005, 0).unwrap();
        assert!(matches!(
            net.forward(&Matrix::zeros(2, 4)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn class_loss_uniform_logits_is_ln_k() {
        let logits = Matrix::zeros(6, 5);
        let labels = LabelBatch::new(vec![0, 1, 2, 3, 4, 0]);
        let (loss, _) = class_loss_and_grad(&logits, &labels).unwrap();
        assert!((loss - (5.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn class_loss_saturated_logit_is_tiny() {
        let mut logits = Matrix::zeros(1, 4);
        *logits.at_mut(0, 2) = 20.0;
        let labels = LabelBatch::new(vec![2]);
        let (loss, _) = class_loss_and_grad(&logits, &labels).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn class_loss_rejects_bad_labels() {
        let logits = Matrix::zeros(2, 3);
        assert!(matches!(
            class_loss_and_grad(&logits, &LabelBatch::new(vec![0, 3])),
            Err(Error::BadLabel(_))
        ));
        assert!(matches!(
            class_loss_and_grad(&logits, &LabelBatch::new(vec![0])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits =
            Matrix::from_rows(&[vec![1.0, -2.0, 300.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let probs = softmax(&logits);
        for i in 0..probs.rows() {
            let sum: f64 = probs.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_without_taps_matches_pure_classification() {
        let net = init_network(&[3, 4, 2], 0.005, 3).unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -1.0, 0.7], vec![1.0, 0.2, -0.5]]).unwrap();
        let pass = net.forward(&x).unwrap();
        let labels = LabelBatch::new(vec![0, 1]);
        let (_, grad_logits) = class_loss_and_grad(pass.logits(), &labels).unwrap();
        let g1 = net.backward(&pass, &grad_logits, &BTreeMap::new()).unwrap();
        let g2 = net.backward(&pass, &grad_logits, &BTreeMap::new()).unwrap();
        // Same inputs, same gradients; and every affine layer got one.
        for (a, b) in g1.per_layer.iter().zip(&g2.per_layer) {
            match (a, b) {
                (Some(ga), Some(gb)) => assert_eq!(ga.weights, gb.weights),
                (None, None) => {}
                _ => panic!("structure mismatch"),
            }
        }
    }

    #[test]
    fn backward_zero_logit_grad_uses_only_tap_path() {
        let net = init_network(&[3, 4, 2], 0.005, 3).unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -1.0, 0.7], vec![1.0, 0.2, -0.5]]).unwrap();
        let pass = net.forward(&x).unwrap();
        let zero = Matrix::zeros(2, 2);
        let mut taps = BTreeMap::new();
        taps.insert(0usize, Matrix::from_rows(&[vec![1.0; 4], vec![-1.0; 4]]).unwrap());
        let g = net.backward(&pass, &zero, &taps).unwrap();
        // The head sees zero upstream gradient, so its weight grad is zero;
        // the first layer's gradient is driven purely by the tap.
        let head = g.per_layer[2].as_ref().unwrap();
        assert!(head.weights.data().iter().all(|&v| v == 0.0));
        let first = g.per_layer[0].as_ref().unwrap();
        assert!(first.weights.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn backward_rejects_mismatched_pass() {
        let net = init_network(&[3, 2], 0.005, 0).unwrap();
        let other = init_network(&[4, 2], 0.005, 0).unwrap();
        let pass = other.forward(&Matrix::zeros(2, 4)).unwrap();
        let grad = Matrix::zeros(2, 2);
        assert!(matches!(
            net.backward(&pass, &grad, &BTreeMap::new()),
            Err(Error::StaleForward(_))
        ));

        let pass = net.forward(&Matrix::zeros(2, 3)).unwrap();
        let bad_grad = Matrix::zeros(3, 2);
        assert!(matches!(
            net.backward(&pass, &bad_grad, &BTreeMap::new()),
            Err(Error::StaleForward(_))
        ));
    }

    #[test]
    fn sgd_plain_step_subtracts_scaled_gradient() {
        let mut net = identity_net(2);
        let mut vel = Velocity::zeros(&net);
        let before = net.params_flat();
        let grads = Gradients {
            per_layer: vec![Some(AffineGrad {
                weights: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap(),
                bias: vec![0.5, -0.5],
            })],
        };
        // identity_net's single layer is the head: lr multiplier 10.
        net.sgd_step(&grads, &mut vel, 0.01, 0.0, 0.0).unwrap();
        let after = net.params_flat();
        assert!((before[0] - 0.1 - after[0]).abs() < 1e-15);
        assert!((before[3] - 0.2 - after[3]).abs() < 1e-15);
        assert!((before[4] - 0.05 - after[4]).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_gradient_is_fixed_point() {
        let mut net = init_network(&[3, 2], 0.005, 5).unwrap();
        let mut vel = Velocity::zeros(&net);
        let before = net.params_flat();
        let grads = Gradients {
            per_layer: vec![Some(AffineGrad {
                weights: Matrix::zeros(3, 2),
                bias: vec![0.0; 2],
            })],
        };
        net.sgd_step(&grads, &mut vel, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(before, net.params_flat());
    }

    #[test]
    fn sgd_two_momentum_steps_unroll() {
        // v1 = -lr g, v2 = 0.9 v1 - lr g, total = -lr g (1 + 1.9).
        let mut net = init_network(&[2, 2], 0.005, 5).unwrap();
        if let Some(Layer::Affine(a)) = net.layer_mut(0) {
            a.lr_multiplier = 1.0;
        }
        let mut vel = Velocity::zeros(&net);
        let before = net.params_flat();
        let g = 0.3;
        let grads = Gradients {
            per_layer: vec![Some(AffineGrad {
                weights: Matrix::new(2, 2, vec![g; 4]).unwrap(),
                bias: vec![g; 2],
            })],
        };
        let lr = 0.05;
        net.sgd_step(&grads, &mut vel, lr, 0.9, 0.0).unwrap();
        net.sgd_step(&grads, &mut vel, lr, 0.9, 0.0).unwrap();
        let after = net.params_flat();
        for (b, a) in before.iter().zip(&after) {
            assert!((b - a - lr * g * 2.9).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_doubling_lr_multiplier_doubles_update() {
        let base = init_network(&[3, 4, 2], 0.005, 9).unwrap();
        let x = Matrix::from_rows(&[vec![0.2, 0.4, -0.1], vec![-0.3, 0.9, 0.5]]).unwrap();
        let labels = LabelBatch::new(vec![1, 0]);

        let run = |mult: f64| {
            let mut net = base.clone();
            if let Some(Layer::Affine(a)) = net.layer_mut(0) {
                a.lr_multiplier = mult;
            }
            let pass = net.forward(&x).unwrap();
            let (_, grad_logits) = class_loss_and_grad(pass.logits(), &labels).unwrap();
            let grads = net.backward(&pass, &grad_logits, &BTreeMap::new()).unwrap();
            let before = net.params_flat();
            let mut vel = Velocity::zeros(&net);
            net.sgd_step(&grads, &mut vel, 0.01, 0.0, 0.0).unwrap();
            let after = net.params_flat();
            before
                .iter()
                .zip(after)
                .map(|(b, a)| b - a)
                .collect::<Vec<f64>>()
        };

        let d1 = run(1.0);
        let d2 = run(2.0);
        let first_layer_params = 3 * 4 + 4;
        for i in 0..first_layer_params {
            assert!((2.0 * d1[i] - d2[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_detects_nonfinite_update() {
        let mut net = init_network(&[2, 2], 0.005, 0).unwrap();
        let mut vel = Velocity::zeros(&net);
        let grads = Gradients {
            per_layer: vec![Some(AffineGrad {
                weights: Matrix::new(2, 2, vec![f64::INFINITY; 4]).unwrap(),
                bias: vec![0.0; 2],
            })],
        };
        assert!(matches!(
            net.sgd_step(&grads, &mut vel, 0.1, 0.0, 0.0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn params_flat_round_trip() {
        let mut net = init_network(&[3, 4, 2], 0.005, 2).unwrap();
        let params = net.params_flat();
        let mut shifted = params.clone();
        for v in &mut shifted {
            *v += 1.0;
        }
        net.set_params_flat(&shifted).unwrap();
        assert_eq!(net.params_flat(), shifted);
        assert!(net.set_params_flat(&shifted[1..]).is_err());
    }

    #[test]
    fn forward_leaves_digest_unchanged() {
        let net = init_network(&[3, 4, 2], 0.005, 2).unwrap();
        let before = net.param_digest();
        let _ = net.forward(&Matrix::zeros(5, 3)).unwrap();
        let _ = net.forward(&Matrix::zeros(2, 3)).unwrap();
        assert_eq!(before, net.param_digest());
    }
}
