//! Synthetic corpora: Gaussian class blobs for classification, a Markov
//! token source for next-token prediction, and label corruption.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adapters::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Inputs with observed (possibly corrupted) and clean labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub clean_labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::ConfigInvalid(format!(
                "{} labels for {} rows",
                labels.len(),
                inputs.rows()
            )));
        }
        if labels.iter().any(|&l| l >= num_classes) {
            return Err(Error::ConfigInvalid("label out of range".into()));
        }
        Ok(Self {
            inputs,
            clean_labels: labels.clone(),
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch_count(&self, batch_size: usize) -> usize {
        let n = self.len().div_ceil(batch_size);
        if n > 1 && self.len() % batch_size == 1 {
            n - 1
        } else {
            n
        }
    }

    /// Row indices split into minibatches after a seeded shuffle. A trailing
    /// single-row batch is folded into the one before it.
    pub fn shuffled_batches<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let mut out: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
        if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
            let tail = out.pop().unwrap_or_default();
            if let Some(prev) = out.last_mut() {
                prev.extend(tail);
            }
        }
        out
    }

    pub fn batch(&self, idx: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.inputs.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn class_histogram(&self, labels: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in labels {
            h[l] += 1;
        }
        h
    }

    pub fn flipped_count(&self) -> usize {
        self.labels
            .iter()
            .zip(&self.clean_labels)
            .filter(|(a, b)| a != b)
            .count()
    }

    fn label_column(labels: &[usize]) -> Matrix {
        Matrix::from_fn(labels.len(), 1, |i, _| labels[i] as f64)
    }

    /// Tensors `inputs`, `labels`, `clean_labels` (`n x 1`) and `num_classes` (`1 x 1`).
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push("inputs", self.inputs.clone());
        c.push("labels", Self::label_column(&self.labels));
        c.push("clean_labels", Self::label_column(&self.clean_labels));
        c.push("num_classes", Matrix::scalar(self.num_classes as f64));
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let inputs = c.require("inputs")?.clone();
        let num_classes = c.require("num_classes")?.item();
        let to_labels = |m: &Matrix| -> Result<Vec<usize>> {
            if m.cols() != 1 || m.rows() != inputs.rows() {
                return Err(Error::Format(format!("label tensor has shape {:?}", m.shape())));
            }
            m.as_slice()
                .iter()
                .map(|&x| {
                    if x >= 0.0 && x.fract() == 0.0 && x < num_classes {
                        Ok(x as usize)
                    } else {
                        Err(Error::Format(format!("invalid label {x}")))
                    }
                })
                .collect()
        };
        let labels = to_labels(c.require("labels")?)?;
        let clean_labels = match c.get("clean_labels") {
            Some(m) => to_labels(m)?,
            None => labels.clone(),
        };
        if !(num_classes >= 1.0 && num_classes.fract() == 0.0) {
            return Err(Error::Format(format!("invalid num_classes {num_classes}")));
        }
        Ok(Self {
            inputs,
            labels,
            clean_labels,
            num_classes: num_classes as usize,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Label noise and class imbalance applied to a clean dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionSpec {
    /// Fraction of labels flipped to a uniformly chosen wrong class.
    pub label_noise_rate: f64,
    /// Majority to minority class size ratio.
    pub imbalance_ratio: f64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            label_noise_rate: 0.0,
            imbalance_ratio: 1.0,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.label_noise_rate) {
            return Err(Error::ConfigInvalid(format!(
                "label_noise_rate must lie in [0, 1), got {}",
                self.label_noise_rate
            )));
        }
        if !(self.imbalance_ratio >= 1.0 && self.imbalance_ratio.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "imbalance_ratio must be >= 1, got {}",
                self.imbalance_ratio
            )));
        }
        Ok(())
    }
}

/// Subsamples classes geometrically (class 0 keeps everything, the last class
/// keeps `1/ratio`), then flips exactly `round(rate · n)` labels.
pub fn make_corrupted_dataset(base: &Dataset, spec: &CorruptionSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = base.num_classes;

    let mut data = base.clone();
    if spec.imbalance_ratio > 1.0 && c > 1 {
        let counts = base.class_histogram(&base.clean_labels);
        let keep: Vec<usize> = counts
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let f = spec.imbalance_ratio.powf(-(k as f64) / (c - 1) as f64);
                ((n as f64 * f).round() as usize).clamp(n.min(1), n)
            })
            .collect();
        let mut seen = vec![0; c];
        let rows: Vec<usize> = (0..base.len())
            .filter(|&i| {
                let k = base.clean_labels[i];
                seen[k] += 1;
                seen[k] <= keep[k]
            })
            .collect();
        data = Dataset {
            inputs: base.inputs.select_rows(&rows),
            labels: rows.iter().map(|&i| base.labels[i]).collect(),
            clean_labels: rows.iter().map(|&i| base.clean_labels[i]).collect(),
            num_classes: c,
        };
    }

    let n = data.len();
    let flips = (spec.label_noise_rate * n as f64).round() as usize;
    if flips > 0 && c > 1 {
        let mut chosen = index::sample(&mut rng, n, flips).into_vec();
        chosen.sort_unstable();
        for i in chosen {
            let clean = data.clean_labels[i];
            let mut wrong = rng.random_range(0..c - 1);
            if wrong >= clean {
                wrong += 1;
            }
            data.labels[i] = wrong;
        }
    }
    Ok(data)
}

/// Distribution shift applied to evaluation features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Shift {
    /// Norm of the fixed mean offset.
    pub offset: f64,
    /// Multiplier on the within-class noise standard deviation.
    pub scale: f64,
}

impl Default for Shift {
    fn default() -> Self {
        Self {
            offset: 1.5,
            scale: 1.5,
        }
    }
}

/// Gaussian class blobs in `dim` dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobTask {
    pub means: Vec<Vec<f64>>,
    pub noise: f64,
    offset_dir: Vec<f64>,
}

impl BlobTask {
    /// Class means drawn from `N(0, separation²)` per coordinate.
    pub fn new(dim: usize, classes: usize, separation: f64, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = (0..classes).map(|_| gaussian_vec(dim, separation, &mut rng)).collect();
        let mut dir = gaussian_vec(dim, 1.0, &mut rng);
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x /= norm);
        Self {
            means,
            noise,
            offset_dir: dir,
        }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    /// Same task with every class mean moved by `N(0, amount²)` per coordinate.
    pub fn drifted(&self, amount: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = self
            .means
            .iter()
            .map(|m| {
                let d = gaussian_vec(m.len(), amount, &mut rng);
                m.iter().zip(d).map(|(a, b)| a + b).collect()
            })
            .collect();
        Self {
            means,
            noise: self.noise,
            offset_dir: self.offset_dir.clone(),
        }
    }

    /// `n` balanced samples (labels cycle through the classes).
    pub fn sample(&self, n: usize, shift: Option<&Shift>, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dim, c) = (self.dim(), self.classes());
        let (offset, scale) = shift.map_or((0.0, 1.0), |s| (s.offset, s.scale));
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let mut inputs = Matrix::zeros(n, dim);
        for (i, &l) in labels.iter().enumerate() {
            for (j, x) in inputs.row_mut(i).iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = self.means[l][j] + self.noise * scale * z + offset * self.offset_dir[j];
            }
        }
        Dataset {
            inputs,
            clean_labels: labels.clone(),
            labels,
            num_classes: c,
        }
    }
}

fn gaussian_vec<R: Rng + ?Sized>(n: usize, std: f64, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

/// First-order Markov token source with peaked transition rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovTask {
    pub transitions: Matrix,
    pub seq_len: usize,
}

impl MarkovTask {
    /// Rows are `softmax(temperature · z)` with `z ~ N(0, 1)`.
    pub fn new(vocab: usize, seq_len: usize, temperature: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Matrix::random_normal(vocab, vocab, temperature, &mut rng);
        Self {
            transitions: crate::autodiff::softmax_rows_value(&logits),
            seq_len,
        }
    }

    pub fn vocab(&self) -> usize {
        self.transitions.rows()
    }

    /// Log-transitions perturbed by `N(0, amount²)` and renormalized.
    pub fn drifted(&self, amount: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = self.vocab();
        let noise = Matrix::random_normal(v, v, amount, &mut rng);
        let logits = Matrix::from_fn(v, v, |i, j| self.transitions[(i, j)].ln() + noise[(i, j)]);
        Self {
            transitions: crate::autodiff::softmax_rows_value(&logits),
            seq_len: self.seq_len,
        }
    }

    /// Transitions mixed with the uniform distribution.
    pub fn shifted(&self, mix: f64) -> Self {
        let u = 1.0 / self.vocab() as f64;
        Self {
            transitions: self.transitions.map(|p| (1.0 - mix) * p + mix * u),
            seq_len: self.seq_len,
        }
    }

    /// `n_seq` sequences flattened into teacher-forced pairs: one-hot current
    /// token as input, next token as label.
    pub fn sample(&self, n_seq: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = self.vocab();
        let per = self.seq_len - 1;
        let mut inputs = Matrix::zeros(n_seq * per, v);
        let mut labels = Vec::with_capacity(n_seq * per);
        for s in 0..n_seq {
            let mut tok = rng.random_range(0..v);
            for t in 0..per {
                let next = sample_categorical(self.transitions.row(tok), &mut rng);
                inputs[(s * per + t, tok)] = 1.0;
                labels.push(next);
                tok = next;
            }
        }
        Dataset {
            inputs,
            clean_labels: labels.clone(),
            labels,
            num_classes: v,
        }
    }
}

fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}
