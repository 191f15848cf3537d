//! Procedural multi-task datasets with clean ground truth: class-conditional
//! Gaussian blobs and tiny pattern images. Every sample carries one discrete
//! label and one correlated continuous label (the class anchors live in the
//! continuous label space, so the two tasks inform each other). Train labels
//! are corrupted per a [`NoiseConfig`]; test labels are never corrupted.

mod format;

pub use format::{load_dataset, save_dataset};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noisegen::{corrupt_continuous, corrupt_discrete, uniform_flip_matrix};
use crate::rng::stream_rng;

/// Which procedural generator produced the features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Gaussian clusters in `input_dim` dimensions.
    Blobs { input_dim: usize },
    /// Noisy binary template images of `side x side`, flattened.
    Patterns { side: usize },
}

impl GeneratorKind {
    pub fn input_dim(&self) -> usize {
        match self {
            GeneratorKind::Blobs { input_dim } => *input_dim,
            GeneratorKind::Patterns { side } => side * side,
        }
    }
}

/// Full recipe for one dataset; generation is a pure function of this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub generator: GeneratorKind,
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
    pub continuous_dim: usize,
    /// One anchor per class in `[-1, 1]^d`; the clean continuous label is the
    /// class anchor plus Gaussian jitter.
    pub class_anchors: Vec<Vec<f64>>,
    pub anchor_jitter: f64,
    /// Within-class feature spread for blobs (ignored by patterns).
    pub blob_spread: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// Blob defaults: 4 well-separated classes in 16 dimensions with a
    /// 2-dimensional continuous label.
    pub fn blobs_default(seed: u64) -> Self {
        DatasetSpec {
            generator: GeneratorKind::Blobs { input_dim: 16 },
            n_train: 512,
            n_test: 2000,
            classes: 4,
            continuous_dim: 2,
            class_anchors: default_anchors(4, 2),
            anchor_jitter: 0.1,
            blob_spread: 1.0,
            seed,
        }
    }

    /// Pattern defaults: 10 template classes on 16x16 images.
    pub fn patterns_default(seed: u64) -> Self {
        DatasetSpec {
            generator: GeneratorKind::Patterns { side: 16 },
            n_train: 1024,
            n_test: 2000,
            classes: 10,
            continuous_dim: 2,
            class_anchors: default_anchors(10, 2),
            anchor_jitter: 0.1,
            blob_spread: 1.0,
            seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.generator.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        if self.continuous_dim < 1 {
            return Err(Error::InvalidConfig("continuous_dim must be >= 1".into()));
        }
        if self.n_train < self.classes || self.n_test < self.classes {
            return Err(Error::InvalidConfig(
                "n_train and n_test must each be >= the class count".into(),
            ));
        }
        match self.generator {
            GeneratorKind::Blobs { input_dim } => {
                if input_dim == 0 {
                    return Err(Error::InvalidConfig(
                        "cannot place blob centers in 0 dimensions".into(),
                    ));
                }
                if input_dim == 1 && self.classes > 8 {
                    return Err(Error::InvalidConfig(
                        "cannot place more than 8 separated centers on a line".into(),
                    ));
                }
            }
            GeneratorKind::Patterns { side } => {
                if side < 8 {
                    return Err(Error::InvalidConfig("pattern side must be >= 8".into()));
                }
                if self.classes > PATTERN_TEMPLATES {
                    return Err(Error::InvalidConfig(format!(
                        "only {PATTERN_TEMPLATES} pattern templates available, asked for {}",
                        self.classes
                    )));
                }
            }
        }
        if self.class_anchors.len() != self.classes {
            return Err(Error::InvalidConfig(format!(
                "{} anchors for {} classes",
                self.class_anchors.len(),
                self.classes
            )));
        }
        for a in &self.class_anchors {
            if a.len() != self.continuous_dim {
                return Err(Error::InvalidConfig("anchor dimension mismatch".into()));
            }
            if a.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::InvalidConfig("anchors must lie in [-1, 1]^d".into()));
            }
        }
        if !(self.anchor_jitter > 0.0) || !(self.blob_spread > 0.0) {
            return Err(Error::InvalidConfig(
                "anchor_jitter and blob_spread must be positive".into(),
            ));
        }
        // The continuous label must carry class information: anchors stay
        // at least 4 jitter sigmas apart.
        for i in 0..self.classes {
            for j in (i + 1)..self.classes {
                let d2: f64 = self.class_anchors[i]
                    .iter()
                    .zip(&self.class_anchors[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d2.sqrt() < 4.0 * self.anchor_jitter {
                    return Err(Error::InvalidConfig(format!(
                        "anchors {i} and {j} are {:.4} apart, need >= {:.4}",
                        d2.sqrt(),
                        4.0 * self.anchor_jitter
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-task corruption recipe; one rate per independent noisy label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Flip rate of each discrete noisy label set.
    pub discrete_rates: Vec<f64>,
    /// Outlier replacement rate of each continuous noisy label set.
    pub continuous_rates: Vec<f64>,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.discrete_rates.is_empty() || self.continuous_rates.is_empty() {
            return Err(Error::InvalidConfig(
                "each task needs at least one noisy label set".into(),
            ));
        }
        for r in self.discrete_rates.iter().chain(&self.continuous_rates) {
            if !(0.0..1.0).contains(r) {
                return Err(Error::InvalidConfig(format!(
                    "noise rate {r} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// One split of a dataset. `features` is `n x input_dim` row-major; noisy
/// labels exist per set on the train split and are empty on the test split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub n: usize,
    pub features: Vec<f64>,
    pub discrete_clean: Vec<usize>,
    /// `n x continuous_dim` row-major.
    pub continuous_clean: Vec<f64>,
    pub discrete_noisy: Vec<Vec<usize>>,
    pub discrete_flip_mask: Vec<Vec<bool>>,
    pub continuous_noisy: Vec<Vec<f64>>,
    pub continuous_outlier_mask: Vec<Vec<bool>>,
}

impl Split {
    pub fn feature_row(&self, i: usize, dim: usize) -> &[f64] {
        &self.features[i * dim..(i + 1) * dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub noise: NoiseConfig,
    pub train: Split,
    pub test: Split,
    /// Global feature range, used as the decoder output range.
    pub feature_lo: f64,
    pub feature_hi: f64,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    /// Realized (not nominal) flip fraction of each discrete noisy set.
    pub fn realized_discrete_rates(&self) -> Vec<f64> {
        self.train
            .discrete_flip_mask
            .iter()
            .map(|m| m.iter().filter(|f| **f).count() as f64 / m.len().max(1) as f64)
            .collect()
    }

    pub fn realized_continuous_rates(&self) -> Vec<f64> {
        self.train
            .continuous_outlier_mask
            .iter()
            .map(|m| m.iter().filter(|f| **f).count() as f64 / m.len().max(1) as f64)
            .collect()
    }
}

/// Evenly spread class anchors: on a radius-0.8 circle in the first two
/// dimensions when `dim >= 2`, evenly spaced on a line for `dim == 1`.
pub fn default_anchors(classes: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let mut a = vec![0.0; dim];
            if dim == 1 {
                a[0] = -0.9 + 1.8 * c as f64 / (classes - 1).max(1) as f64;
            } else {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
                a[0] = 0.8 * angle.cos();
                a[1] = 0.8 * angle.sin();
            }
            a
        })
        .collect()
}

/// Blob centers: on a circle in the first two feature dimensions scaled so
/// adjacent centers sit 6 spread-sigmas apart, or on a line for 1-d inputs.
fn blob_centers(spec: &DatasetSpec) -> Vec<Vec<f64>> {
    let dim = spec.input_dim();
    let k = spec.classes;
    let sep = 6.0 * spec.blob_spread;
    (0..k)
        .map(|c| {
            let mut center = vec![0.0; dim];
            if dim == 1 {
                center[0] = sep * c as f64 - sep * (k - 1) as f64 / 2.0;
            } else {
                let radius = sep / (2.0 * (std::f64::consts::PI / k as f64).sin());
                let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                center[0] = radius * angle.cos();
                center[1] = radius * angle.sin();
            }
            center
        })
        .collect()
}

const PATTERN_TEMPLATES: usize = 10;
const PATTERN_PIXEL_NOISE: f64 = 0.1;

/// Binary template for pattern class `c` (stripes, checkers, bands, blocks).
pub fn pattern_template(c: usize, side: usize) -> Vec<f64> {
    let q = (side / 8).max(1);
    let mut img = vec![0.0; side * side];
    for r in 0..side {
        for col in 0..side {
            let on = match c {
                0 => r % 4 < 2,
                1 => col % 4 < 2,
                2 => (r / 4 + col / 4) % 2 == 0,
                3 => r.abs_diff(col) <= q,
                4 => (r + col).abs_diff(side - 1) <= q,
                5 => r < side / 2 && col < side / 2,
                6 => r.min(col).min(side - 1 - r).min(side - 1 - col) < q,
                7 => r.abs_diff(side / 2) < q || col.abs_diff(side / 2) < q,
                8 => r % 8 < 3 && col % 8 < 3,
                9 => r >= side / 2 && col >= side / 2,
                _ => unreachable!("validated against PATTERN_TEMPLATES"),
            };
            if on {
                img[r * side + col] = 1.0;
            }
        }
    }
    img
}

fn gen_split(spec: &DatasetSpec, which: &str) -> Split {
    let n = if which == "train" {
        spec.n_train
    } else {
        spec.n_test
    };
    let dim = spec.input_dim();
    let mut class_rng = stream_rng(spec.seed, &format!("class-{which}"));
    let mut feat_rng = stream_rng(spec.seed, &format!("feat-{which}"));
    let mut cont_rng = stream_rng(spec.seed, &format!("cont-{which}"));

    let mut features = Vec::with_capacity(n * dim);
    let mut discrete = Vec::with_capacity(n);
    let mut continuous = Vec::with_capacity(n * spec.continuous_dim);

    let centers = match spec.generator {
        GeneratorKind::Blobs { .. } => blob_centers(spec),
        GeneratorKind::Patterns { side } => (0..spec.classes)
            .map(|c| pattern_template(c, side))
            .collect(),
    };

    for _ in 0..n {
        let c = class_rng.random_range(0..spec.classes);
        discrete.push(c);
        match spec.generator {
            GeneratorKind::Blobs { .. } => {
                for &center in &centers[c] {
                    let eps: f64 = StandardNormal.sample(&mut feat_rng);
                    features.push(center + spec.blob_spread * eps);
                }
            }
            GeneratorKind::Patterns { .. } => {
                for &pixel in &centers[c] {
                    let eps: f64 = StandardNormal.sample(&mut feat_rng);
                    features.push((pixel + PATTERN_PIXEL_NOISE * eps).clamp(0.0, 1.0));
                }
            }
        }
        for &anchor in &spec.class_anchors[c] {
            let eps: f64 = StandardNormal.sample(&mut cont_rng);
            continuous.push((anchor + spec.anchor_jitter * eps).clamp(-1.0, 1.0));
        }
    }

    Split {
        n,
        features,
        discrete_clean: discrete,
        continuous_clean: continuous,
        ..Split::default()
    }
}

/// Generate a dataset: disjoint train/test draws, then corrupt the train
/// labels per the noise config. Pure in `(spec, noise)`.
pub fn generate(spec: &DatasetSpec, noise: &NoiseConfig) -> Result<Dataset> {
    spec.validate()?;
    noise.validate()?;

    let mut train = gen_split(spec, "train");
    let test = gen_split(spec, "test");

    for (s, &rate) in noise.discrete_rates.iter().enumerate() {
        let matrix = uniform_flip_matrix(spec.classes, rate)?;
        let mut rng = stream_rng(noise.seed, &format!("discrete-set{s}"));
        let (noisy, mask) = corrupt_discrete(&train.discrete_clean, &matrix, &mut rng)?;
        train.discrete_noisy.push(noisy);
        train.discrete_flip_mask.push(mask);
    }
    for (s, &rate) in noise.continuous_rates.iter().enumerate() {
        let mut rng = stream_rng(noise.seed, &format!("continuous-set{s}"));
        let (noisy, mask) =
            corrupt_continuous(&train.continuous_clean, spec.continuous_dim, rate, &mut rng)?;
        train.continuous_noisy.push(noisy);
        train.continuous_outlier_mask.push(mask);
    }

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in train.features.iter().chain(&test.features) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }

    Ok(Dataset {
        spec: spec.clone(),
        noise: noise.clone(),
        train,
        test,
        feature_lo: lo,
        feature_hi: hi,
    })
}
