//! Synthetic domain-shift data, CSV ingestion, and deterministic batching.
//!
//! The generator draws class-conditional Gaussians for the source domain and
//! pushes fresh draws from the same class structure through an affine
//! transform (rotate in the first two dims, scale per dim, offset per dim)
//! for the target domain. Target labels are kept for scoring only; training
//! never reads them. Normal variates come from the ziggurat sampler over a
//! ChaCha8 stream, so a seed pins the byte-exact output on every platform.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::{format_f64, parse_csv_fields, Matrix};
use crate::net::{seeded_rng, LabelBatch};

/// Stream id for dataset generation draws.
pub const STREAM_DATA: u64 = 1;
/// Stream id for batch shuffling draws.
pub const STREAM_BATCH: u64 = 3;

/// Which side of the shift a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainTag {
    Source,
    Target,
}

/// A feature matrix with optional labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Option<LabelBatch>,
    pub domain_tag: DomainTag,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Option<LabelBatch>,
        domain_tag: DomainTag,
        num_classes: usize,
    ) -> Result<Self> {
        if !features.is_finite() {
            return Err(Error::NonFinite(
                "dataset features contain a non-finite entry".to_string(),
            ));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} rows",
                    l.len(),
                    features.rows()
                )));
            }
            if let Some(&bad) = l.as_slice().iter().find(|&&y| y >= num_classes) {
                return Err(Error::BadLabel(format!(
                    "label {bad} out of range for {num_classes} classes"
                )));
            }
        }
        Ok(Dataset {
            features,
            labels,
            domain_tag,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Same dataset with the label column dropped.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            features: self.features.clone(),
            labels: None,
            domain_tag: self.domain_tag,
            num_classes: self.num_classes,
        }
    }
}

/// Specification of a synthetic source/target pair: class-conditional
/// Gaussians plus the affine transform that produces the target domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// One mean vector per class, each of length `dim`.
    pub class_means: Vec<Vec<f64>>,
    /// Isotropic standard deviation per class.
    pub class_stds: Vec<f64>,
    /// Rotation angle in degrees, applied in the (0, 1) plane.
    pub rotation_deg: f64,
    /// Per-dimension scale applied after rotation.
    pub scale: Vec<f64>,
    /// Per-dimension offset applied last.
    pub offset: Vec<f64>,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl ShiftSpec {
    /// The fixed desk-scale benchmark: 3 classes in 10 dims, unit-variance
    /// blobs with means `3·e_k`, target transform = 30° rotation in dims
    /// (0, 1), scale 2 in dim 2, offset 1 in dim 3, 300 samples per class
    /// per domain.
    pub fn standard_benchmark(seed: u64) -> ShiftSpec {
        let dim = 10;
        let num_classes = 3;
        let mut class_means = vec![vec![0.0; dim]; num_classes];
        for (k, mean) in class_means.iter_mut().enumerate() {
            mean[k] = 3.0;
        }
        let mut scale = vec![1.0; dim];
        scale[2] = 2.0;
        let mut offset = vec![0.0; dim];
        offset[3] = 1.0;
        ShiftSpec {
            num_classes,
            dim,
            class_means,
            class_stds: vec![1.0; num_classes],
            rotation_deg: 30.0,
            scale,
            offset,
            samples_per_class: 300,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::BadSpec(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.dim == 0 {
            return Err(Error::BadSpec("dim must be positive".to_string()));
        }
        if self.rotation_deg != 0.0 && self.dim < 2 {
            return Err(Error::BadSpec(
                "rotation needs at least 2 dims".to_string(),
            ));
        }
        if self.samples_per_class < 2 {
            return Err(Error::BadSpec(format!(
                "need at least 2 samples per class, got {}",
                self.samples_per_class
            )));
        }
        if self.class_means.len() != self.num_classes {
            return Err(Error::BadSpec(format!(
                "{} mean vectors for {} classes",
                self.class_means.len(),
                self.num_classes
            )));
        }
        if self.class_means.iter().any(|m| m.len() != self.dim) {
            return Err(Error::BadSpec(
                "every class mean must have `dim` entries".to_string(),
            ));
        }
        if self.class_stds.len() != self.num_classes {
            return Err(Error::BadSpec(format!(
                "{} class stds for {} classes",
                self.class_stds.len(),
                self.num_classes
            )));
        }
        if self.class_stds.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::BadSpec("class stds must be positive".to_string()));
        }
        if self.scale.len() != self.dim || self.offset.len() != self.dim {
            return Err(Error::BadSpec(
                "scale and offset must have `dim` entries".to_string(),
            ));
        }
        if self.scale.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::BadSpec("scale factors must be positive".to_string()));
        }
        let finite = self
            .class_means
            .iter()
            .flatten()
            .chain(&self.class_stds)
            .chain(&self.scale)
            .chain(&self.offset)
            .all(|v| v.is_finite())
            && self.rotation_deg.is_finite();
        if !finite {
            return Err(Error::BadSpec("spec contains non-finite values".to_string()));
        }
        Ok(())
    }

    /// Applies the target transform to one point: rotate in (0, 1), scale,
    /// then offset.
    pub fn transform(&self, point: &mut [f64]) {
        if self.rotation_deg != 0.0 {
            let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
            let (x0, x1) = (point[0], point[1]);
            point[0] = cos * x0 - sin * x1;
            point[1] = sin * x0 + cos * x1;
        }
        for ((p, &s), &o) in point.iter_mut().zip(&self.scale).zip(&self.offset) {
            *p = *p * s + o;
        }
    }
}

fn sample_class_point(
    rng: &mut ChaCha8Rng,
    mean: &[f64],
    std: f64,
    buffer: &mut Vec<f64>,
) {
    for &m in mean {
        let z: f64 = StandardNormal.sample(rng);
        buffer.push(m + std * z);
    }
}

/// Draws the source/target dataset pair described by `spec`. Rows are
/// ordered class by class, so each class contributes exactly
/// `samples_per_class` rows per domain. Target labels are retained for
/// scoring only.
pub fn generate_shifted_pair(spec: &ShiftSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed, STREAM_DATA);
    let n = spec.num_classes * spec.samples_per_class;

    let mut source_data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..spec.num_classes {
        for _ in 0..spec.samples_per_class {
            sample_class_point(
                &mut rng,
                &spec.class_means[class],
                spec.class_stds[class],
                &mut source_data,
            );
            labels.push(class);
        }
    }

    let mut target_data = Vec::with_capacity(n * spec.dim);
    for class in 0..spec.num_classes {
        for _ in 0..spec.samples_per_class {
            let start = target_data.len();
            sample_class_point(
                &mut rng,
                &spec.class_means[class],
                spec.class_stds[class],
                &mut target_data,
            );
            spec.transform(&mut target_data[start..]);
        }
    }

    let source = Dataset::new(
        Matrix::new(n, spec.dim, source_data)?,
        Some(LabelBatch::new(labels.clone())),
        DomainTag::Source,
        spec.num_classes,
    )?;
    let target = Dataset::new(
        Matrix::new(n, spec.dim, target_data)?,
        Some(LabelBatch::new(labels)),
        DomainTag::Target,
        spec.num_classes,
    )?;
    Ok((source, target))
}

/// Loads a dataset from CSV: numeric columns, optionally a trailing integer
/// label column, no header. Row order is preserved exactly.
pub fn load_csv(
    path: &Path,
    has_labels: bool,
    num_classes: usize,
    domain_tag: DomainTag,
) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut width = None;

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = parse_csv_fields(line, line_no)?;
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {w} columns, got {}", fields.len()),
                });
            }
            _ => {}
        }
        if has_labels {
            let raw = fields.pop().ok_or(Error::Parse {
                line: line_no,
                message: "missing label column".to_string(),
            })?;
            if raw.fract() != 0.0 || raw < 0.0 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("label must be a non-negative integer, got {raw}"),
                });
            }
            let label = raw as i64;
            if label as usize >= num_classes {
                return Err(Error::LabelOutOfRange {
                    line: line_no,
                    label,
                    num_classes,
                });
            }
            labels.push(label as usize);
            if fields.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "row has a label but no features".to_string(),
                });
            }
        }
        rows.push(fields);
    }

    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: format!("no data rows in {}", path.display()),
        });
    }
    let features = Matrix::from_rows(&rows)?;
    Dataset::new(
        features,
        has_labels.then(|| LabelBatch::new(labels)),
        domain_tag,
        num_classes,
    )
}

/// Renders a dataset as CSV (inverse of [`load_csv`]).
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    for i in 0..ds.len() {
        let mut first = true;
        for &v in ds.features.row(i) {
            if !first {
                out.push(',');
            }
            out.push_str(&format_f64(v));
            first = false;
        }
        if let Some(labels) = &ds.labels {
            out.push(',');
            out.push_str(&labels.get(i).to_string());
        }
        out.push('\n');
    }
    out
}

/// Writes a dataset to `path` as CSV.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_csv(ds))?;
    Ok(())
}

/// Deterministic mini-batch index stream.
///
/// Each epoch is a fresh seeded permutation of `0..n`. A batch that would
/// run past the end of an epoch is completed with the head of the next
/// epoch's permutation, so every yielded batch has exactly `batch` rows.
/// The stream ends once `epochs` permutations are consumed; a trailing
/// partial batch at that point is dropped.
pub struct BatchIterator {
    n: usize,
    batch: usize,
    epochs: usize,
    rng: ChaCha8Rng,
    current: Vec<usize>,
    pos: usize,
    epochs_started: usize,
}

impl BatchIterator {
    pub fn new(n: usize, batch: usize, seed: u64, epochs: usize) -> Result<Self> {
        if batch < 2 {
            return Err(Error::BatchTooSmall { batch });
        }
        if batch > n {
            return Err(Error::BatchTooLarge { batch, len: n });
        }
        Ok(BatchIterator {
            n,
            batch,
            epochs,
            rng: seeded_rng(seed, STREAM_BATCH),
            current: Vec::new(),
            pos: 0,
            epochs_started: 0,
        })
    }

    /// Number of full batches the stream will yield.
    pub fn total_batches(&self) -> usize {
        self.n * self.epochs / self.batch
    }

    fn refill(&mut self) -> bool {
        if self.epochs_started == self.epochs {
            return false;
        }
        let mut perm: Vec<usize> = (0..self.n).collect();
        perm.shuffle(&mut self.rng);
        self.current = perm;
        self.pos = 0;
        self.epochs_started += 1;
        true
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.current.len() && !self.refill() {
                return None;
            }
            let take = (self.batch - out.len()).min(self.current.len() - self.pos);
            out.extend_from_slice(&self.current[self.pos..self.pos + take]);
            self.pos += take;
        }
        Some(out)
    }
}
