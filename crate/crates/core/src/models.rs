//! Desk-scale host networks whose linear layers can carry adapters.
//!
//! Both hosts are stacks of affine layers:
//!
//! * classifier: `in -> hidden... -> classes`, ReLU between layers;
//! * tiny LM: one-hot token `-> embed (V x d) -> d x d -> d x d -> unembed (d x V)`,
//!   predicting the next token from the current one under teacher forcing.
//!
//! Hidden layers are the adapter sites. A [`ModelPair`] holds the frozen
//! pretrained network next to the trainable copy being fine-tuned.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::checkpoint::{read_sidecar, write_sidecar, Checkpoint};
use crate::adapters::{
    adapter_forward_tape, default_sigma, lora_init, pissa_init, AdapterKind, AdapterPair,
};
use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::trainloop::{AdamW, Dataset, OptimConfig, Schedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        classes: usize,
    },
    TinyLm {
        vocab: usize,
        d_model: usize,
        context_len: usize,
    },
}

impl Architecture {
    /// 32 -> 64 -> 64 -> `classes`.
    pub fn default_mlp(classes: usize) -> Self {
        Architecture::Mlp {
            input_dim: 32,
            hidden: vec![64, 64],
            classes,
        }
    }

    /// V = 32, d = 32, context 16.
    pub fn default_tiny_lm() -> Self {
        Architecture::TinyLm {
            vocab: 32,
            d_model: 32,
            context_len: 16,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Architecture::Mlp { input_dim, .. } => *input_dim,
            Architecture::TinyLm { vocab, .. } => *vocab,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Architecture::Mlp { classes, .. } => *classes,
            Architecture::TinyLm { vocab, .. } => *vocab,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Architecture::Mlp {
                input_dim,
                hidden,
                classes,
            } => *input_dim > 0 && *classes >= 2 && hidden.iter().all(|&h| h > 0),
            Architecture::TinyLm {
                vocab,
                d_model,
                context_len,
            } => *vocab >= 2 && *d_model > 0 && *context_len >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("invalid architecture {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Weight {
    Dense(Matrix),
    Adapter(AdapterPair),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Weight,
    pub bias: Option<Matrix>,
    pub activation: Activation,
    /// Whether fine-tuning may place an adapter here.
    pub adapter_site: bool,
}

impl Layer {
    /// Effective `in x out` weight.
    pub fn effective_weight(&self) -> Matrix {
        match &self.weight {
            Weight::Dense(w) => w.clone(),
            Weight::Adapter(p) => p.merge(),
        }
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = match &self.weight {
            Weight::Dense(w) => x.matmul(w)?,
            Weight::Adapter(p) => p.forward(x)?,
        };
        if let Some(b) = &self.bias {
            for i in 0..y.rows() {
                for (o, &bj) in y.row_mut(i).iter_mut().zip(b.as_slice()) {
                    *o += bj;
                }
            }
        }
        if self.activation == Activation::Relu {
            y = y.map(|v| v.max(0.0));
        }
        Ok(y)
    }
}

/// Which weights receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    /// Every dense weight and bias (pretraining, full fine-tuning).
    All,
    /// Only adapter factors `a` and `b`.
    AdaptersOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    arch: Architecture,
    layers: Vec<Layer>,
    trainable: Trainable,
}

fn he_normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::random_normal(rows, cols, (2.0 / rows as f64).sqrt(), rng)
}

impl Network {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = match &arch {
            Architecture::Mlp {
                input_dim,
                hidden,
                classes,
            } => {
                let mut dims = vec![*input_dim];
                dims.extend(hidden);
                dims.push(*classes);
                let last = dims.len() - 2;
                dims.windows(2)
                    .enumerate()
                    .map(|(i, w)| Layer {
                        weight: Weight::Dense(he_normal(w[0], w[1], &mut rng)),
                        bias: Some(Matrix::zeros(1, w[1])),
                        activation: if i == last {
                            Activation::Identity
                        } else {
                            Activation::Relu
                        },
                        adapter_site: i != last,
                    })
                    .collect()
            }
            Architecture::TinyLm { vocab, d_model, .. } => {
                let (v, d) = (*vocab, *d_model);
                let embed = Layer {
                    weight: Weight::Dense(Matrix::random_normal(v, d, 1.0, &mut rng)),
                    bias: None,
                    activation: Activation::Identity,
                    adapter_site: false,
                };
                let hidden = |rng: &mut ChaCha8Rng| Layer {
                    weight: Weight::Dense(he_normal(d, d, rng)),
                    bias: Some(Matrix::zeros(1, d)),
                    activation: Activation::Relu,
                    adapter_site: true,
                };
                let h1 = hidden(&mut rng);
                let h2 = hidden(&mut rng);
                let unembed = Layer {
                    weight: Weight::Dense(Matrix::random_normal(d, v, (1.0 / d as f64).sqrt(), &mut rng)),
                    bias: None,
                    activation: Activation::Identity,
                    adapter_site: false,
                };
                vec![embed, h1, h2, unembed]
            }
        };
        Ok(Self {
            arch,
            layers,
            trainable: Trainable::All,
        })
    }

    pub fn mlp_classifier(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        Self::new(
            Architecture::Mlp {
                input_dim,
                hidden: hidden.to_vec(),
                classes,
            },
            seed,
        )
    }

    pub fn tiny_lm(vocab: usize, d_model: usize, context_len: usize, seed: u64) -> Result<Self> {
        Self::new(
            Architecture::TinyLm {
                vocab,
                d_model,
                context_len,
            },
            seed,
        )
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn trainable(&self) -> Trainable {
        self.trainable
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim()
    }

    /// Copy with every adapter site wrapped in a fresh adapter. LoRA layers
    /// draw `a` from `seed + layer index`.
    pub fn with_adapters(&self, spec: &AdapterSpec) -> Result<Self> {
        let mut out = self.clone();
        for (i, layer) in out.layers.iter_mut().enumerate() {
            if !layer.adapter_site {
                continue;
            }
            let w = layer.effective_weight();
            let pair = match spec.kind {
                AdapterKind::Lora => lora_init(&w, spec.rank, spec.sigma_or_default(), spec.seed + i as u64)?,
                AdapterKind::Pissa => pissa_init(&w, spec.rank)?,
            };
            let alpha = spec.alpha.unwrap_or(spec.rank as f64);
            layer.weight = Weight::Adapter(pair.with_alpha(alpha));
        }
        out.trainable = Trainable::AdaptersOnly;
        Ok(out)
    }

    /// Copy with every adapter folded back into a dense weight.
    pub fn merged(&self) -> Self {
        let mut out = self.clone();
        for layer in &mut out.layers {
            if let Weight::Adapter(p) = &layer.weight {
                layer.weight = Weight::Dense(p.merge());
            }
        }
        out.trainable = Trainable::All;
        out
    }

    /// Trainable tensors in a fixed order shared with [`Network::params_mut`]
    /// and [`Network::forward_tape`].
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match (&layer.weight, self.trainable) {
                (Weight::Adapter(p), _) => {
                    out.push(&p.a);
                    out.push(&p.b);
                }
                (Weight::Dense(w), Trainable::All) => {
                    out.push(w);
                    if let Some(b) = &layer.bias {
                        out.push(b);
                    }
                }
                (Weight::Dense(_), Trainable::AdaptersOnly) => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let trainable = self.trainable;
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match (&mut layer.weight, trainable) {
                (Weight::Adapter(p), _) => {
                    out.push(&mut p.a);
                    out.push(&mut p.b);
                }
                (Weight::Dense(w), Trainable::All) => {
                    out.push(w);
                    if let Some(b) = &mut layer.bias {
                        out.push(b);
                    }
                }
                (Weight::Dense(_), Trainable::AdaptersOnly) => {}
            }
        }
        out
    }

    pub fn trainable_count(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    /// Every weight and bias of the underlying model, adapters merged.
    pub fn total_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let (r, c) = match &l.weight {
                    Weight::Dense(w) => w.shape(),
                    Weight::Adapter(p) => p.base().shape(),
                };
                r * c + l.bias.as_ref().map_or(0, Matrix::len)
            })
            .sum()
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.arch.input_dim() {
            return Err(shape_err(
                "forward",
                format!("input has {} columns, model expects {}", input.cols(), self.arch.input_dim()),
            ));
        }
        Ok(())
    }

    /// Logits without recording anything.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.apply(&x)?;
        }
        Ok(x)
    }

    /// Logits on `tape`; returns the logits node and the parameter nodes in
    /// [`Network::params`] order.
    pub fn forward_tape(&self, tape: &mut Tape, input: &Matrix) -> Result<(Var, Vec<Var>)> {
        self.check_input(input)?;
        let all = self.trainable == Trainable::All;
        let mut params = Vec::new();
        let mut x = tape.constant(input.clone());
        for layer in &self.layers {
            let mut y = match &layer.weight {
                Weight::Dense(w) => {
                    let wv = if all {
                        let v = tape.param(w.clone());
                        params.push(v);
                        v
                    } else {
                        tape.constant(w.clone())
                    };
                    tape.matmul(x, wv)?
                }
                Weight::Adapter(p) => {
                    let base = tape.constant(p.base().clone());
                    let a = tape.param(p.a.clone());
                    let b = tape.param(p.b.clone());
                    params.push(a);
                    params.push(b);
                    adapter_forward_tape(tape, x, base, a, b, p.scale())?
                }
            };
            if let Some(bias) = &layer.bias {
                let is_param = all && matches!(layer.weight, Weight::Dense(_));
                let bv = if is_param {
                    let v = tape.param(bias.clone());
                    params.push(v);
                    v
                } else {
                    tape.constant(bias.clone())
                };
                y = tape.add_row_bias(y, bv)?;
            }
            if layer.activation == Activation::Relu {
                y = tape.relu(y);
            }
            x = y;
        }
        Ok((x, params))
    }

    /// Frozen tensors (dense weights outside the trainable set, adapter bases, biases).
    pub fn frozen_checksum(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for layer in &self.layers {
            match &layer.weight {
                Weight::Dense(w) => w.checksum().hash(&mut h),
                Weight::Adapter(p) => p.base().checksum().hash(&mut h),
            }
            if let Some(b) = &layer.bias {
                b.checksum().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match &layer.weight {
                Weight::Dense(w) => c.push(format!("layer{i}.weight"), w.clone()),
                Weight::Adapter(p) => {
                    c.push(format!("layer{i}.a"), p.a.clone());
                    c.push(format!("layer{i}.b"), p.b.clone());
                    c.push(format!("layer{i}.base"), p.base().clone());
                }
            }
            if let Some(b) = &layer.bias {
                c.push(format!("layer{i}.bias"), b.clone());
            }
        }
        c
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &ModelMeta) -> Result<()> {
        self.checkpoint().save(path.as_ref())?;
        write_sidecar(path, meta)
    }

    /// Rebuilds a network from a checkpoint written by [`Network::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, ModelMeta)> {
        let path = path.as_ref();
        let ckpt = Checkpoint::load(path)?;
        let meta: ModelMeta = read_sidecar(path)?;
        let net = Self::from_checkpoint(&ckpt, &meta)?;
        Ok((net, meta))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, meta: &ModelMeta) -> Result<Self> {
        let mut net = Self::new(meta.architecture.clone(), 0)?;
        let alpha = meta.alpha;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let shape = match &layer.weight {
                Weight::Dense(w) => w.shape(),
                Weight::Adapter(p) => p.base().shape(),
            };
            if let Some(w) = ckpt.get(&format!("layer{i}.weight")) {
                if w.shape() != shape {
                    return Err(Error::Format(format!("layer{i}.weight has shape {:?}", w.shape())));
                }
                layer.weight = Weight::Dense(w.clone());
            } else {
                let kind = match meta.kind {
                    ModelKind::Lora => AdapterKind::Lora,
                    ModelKind::Pissa => AdapterKind::Pissa,
                    ModelKind::Full => {
                        return Err(Error::Format(format!("missing layer{i}.weight")));
                    }
                };
                let base = ckpt.require(&format!("layer{i}.base"))?.clone();
                if base.shape() != shape {
                    return Err(Error::Format(format!("layer{i}.base has shape {:?}", base.shape())));
                }
                let pair = AdapterPair::from_parts(
                    ckpt.require(&format!("layer{i}.a"))?.clone(),
                    ckpt.require(&format!("layer{i}.b"))?.clone(),
                    base,
                    kind,
                    alpha,
                )?;
                layer.weight = Weight::Adapter(pair);
            }
            if let Some(b) = &mut layer.bias {
                let stored = ckpt.require(&format!("layer{i}.bias"))?;
                if stored.shape() != b.shape() {
                    return Err(Error::Format(format!("layer{i}.bias has shape {:?}", stored.shape())));
                }
                *b = stored.clone();
            }
        }
        net.trainable = if meta.kind == ModelKind::Full {
            Trainable::All
        } else {
            Trainable::AdaptersOnly
        };
        Ok(net)
    }
}

/// How adapters are attached by [`Network::with_adapters`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterSpec {
    pub kind: AdapterKind,
    pub rank: usize,
    /// LoRA `a` standard deviation; `1/√r` when absent.
    pub sigma: Option<f64>,
    /// Scale numerator; `r` when absent (scale 1).
    pub alpha: Option<f64>,
    pub seed: u64,
}

impl AdapterSpec {
    pub fn sigma_or_default(&self) -> f64 {
        self.sigma.unwrap_or_else(|| default_sigma(self.rank))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Full,
    Lora,
    Pissa,
}

/// Sidecar for model checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub r: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub seed: u64,
    pub architecture: Architecture,
}

/// Frozen pretrained reference next to the network being fine-tuned.
#[derive(Clone, Debug)]
pub struct ModelPair {
    pretrained: Network,
    pub finetuned: Network,
    reference_checksum: u64,
}

/// Outputs of [`ModelPair::forward_pair`] on one batch.
#[derive(Clone, Debug)]
pub struct PairOutputs {
    /// Pretrained logits, recorded as a constant.
    pub reference: Var,
    /// Fine-tuned logits.
    pub logits: Var,
    /// Fine-tuned parameter nodes in [`Network::params`] order.
    pub params: Vec<Var>,
}

impl ModelPair {
    pub fn new(pretrained: Network, finetuned: Network) -> Result<Self> {
        if pretrained.architecture() != finetuned.architecture() {
            return Err(Error::ConfigInvalid("model pair architectures differ".into()));
        }
        let reference_checksum = pretrained.checksum_all();
        Ok(Self {
            pretrained,
            finetuned,
            reference_checksum,
        })
    }

    pub fn pretrained(&self) -> &Network {
        &self.pretrained
    }

    /// Whether the pretrained weights still hash to their value at pairing time.
    pub fn reference_intact(&self) -> bool {
        self.pretrained.checksum_all() == self.reference_checksum
    }

    pub fn reference_checksum(&self) -> u64 {
        self.reference_checksum
    }

    pub fn forward_pair(&self, tape: &mut Tape, input: &Matrix) -> Result<PairOutputs> {
        let reference = self.pretrained.forward(input)?;
        let reference = tape.constant(reference);
        let (logits, params) = self.finetuned.forward_tape(tape, input)?;
        Ok(PairOutputs {
            reference,
            logits,
            params,
        })
    }
}

impl Network {
    /// Hash of every tensor, trainable or not.
    pub fn checksum_all(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (name, m) in self.checkpoint().tensors() {
            name.hash(&mut h);
            m.checksum().hash(&mut h);
        }
        h.finish()
    }
}

/// Full-parameter training with cross-entropy on clean labels.
///
/// Minibatches are drawn from a shuffle seeded by `seed`; AdamW with a
/// constant learning rate after warmup.
pub fn pretrain(
    model: &mut Network,
    data: &Dataset,
    epochs: usize,
    seed: u64,
    optim: &OptimConfig,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::ConfigInvalid("pretraining dataset is empty".into()));
    }
    if epochs == 0 {
        return Ok(());
    }
    let saved = model.trainable;
    model.trainable = Trainable::All;
    let cfg = OptimConfig {
        schedule: Schedule::Constant,
        ..optim.clone()
    };
    let batches = data.batch_count(cfg.batch_size);
    let total = epochs * batches;
    let mut opt = AdamW::new(&model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut step = 0;
    for _ in 0..epochs {
        for idx in data.shuffled_batches(cfg.batch_size, &mut rng) {
            let (x, y) = data.batch(&idx);
            let mut tape = Tape::new();
            let (logits, params) = model.forward_tape(&mut tape, &x)?;
            let loss = tape.cross_entropy(logits, &y)?;
            let grads = tape.backward(loss)?;
            let g: Vec<Matrix> = params
                .iter()
                .map(|&p| {
                    let (r, c) = tape.value(p).shape();
                    grads.get_or_zeros(p, r, c)
                })
                .collect();
            let lr = cfg.lr_at(step, total);
            opt.step(&mut model.params_mut(), &g, &cfg, lr)?;
            step += 1;
        }
    }
    model.trainable = saved;
    Ok(())
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| argmax(logits.row(i)) == l)
        .count();
    hits as f64 / labels.len() as f64
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_mlp() -> Network {
        Network::mlp_classifier(6, &[8, 8], 3, 11).unwrap()
    }

    #[test]
    fn adapter_param_count() {
        let net = Network::new(Architecture::default_mlp(4), 0).unwrap();
        let spec = AdapterSpec {
            kind: AdapterKind::Lora,
            rank: 8,
            sigma: None,
            alpha: None,
            seed: 5,
        };
        let ft = net.with_adapters(&spec).unwrap();
        assert_eq!(ft.trainable_count(), 8 * (32 + 64) + 8 * (64 + 64));
        assert_eq!(ft.total_count(), net.total_count());
        assert_eq!(net.trainable_count(), net.total_count());
    }

    #[test]
    fn tape_and_plain_forward_agree_bitwise() {
        let net = small_mlp();
        let x = Matrix::from_fn(5, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let plain = net.forward(&x).unwrap();
        let mut tape = Tape::new();
        let (logits, params) = net.forward_tape(&mut tape, &x).unwrap();
        assert_eq!(tape.value(logits), &plain);
        assert_eq!(params.len(), net.params().len());
    }

    #[test]
    fn lora_and_pissa_preserve_outputs_at_init() {
        let net = small_mlp();
        let x = Matrix::from_fn(4, 6, |i, j| (i as f64 - j as f64) * 0.37);
        let base = net.forward(&x).unwrap();
        for kind in [AdapterKind::Lora, AdapterKind::Pissa] {
            let ft = net
                .with_adapters(&AdapterSpec {
                    kind,
                    rank: 2,
                    sigma: None,
                    alpha: None,
                    seed: 1,
                })
                .unwrap();
            let out = ft.forward(&x).unwrap();
            assert!(out.sub(&base).unwrap().max_abs() < 1e-9, "{kind}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = small_mlp()
            .with_adapters(&AdapterSpec {
                kind: AdapterKind::Pissa,
                rank: 3,
                sigma: None,
                alpha: None,
                seed: 0,
            })
            .unwrap();
        let meta = ModelMeta {
            kind: ModelKind::Pissa,
            r: 3,
            sigma: 0.0,
            alpha: 3.0,
            seed: 0,
            architecture: net.architecture().clone(),
        };
        let back = Network::from_checkpoint(&net.checkpoint(), &meta).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn input_shape_is_checked() {
        assert!(matches!(
            small_mlp().forward(&Matrix::zeros(2, 5)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn tiny_lm_layout() {
        let lm = Network::new(Architecture::default_tiny_lm(), 3).unwrap();
        assert_eq!(lm.layers().len(), 4);
        let sites: Vec<bool> = lm.layers().iter().map(|l| l.adapter_site).collect();
        assert_eq!(sites, vec![false, true, true, false]);
        let ft = lm
            .with_adapters(&AdapterSpec {
                kind: AdapterKind::Lora,
                rank: 4,
                sigma: None,
                alpha: None,
                seed: 0,
            })
            .unwrap();
        assert_eq!(ft.trainable_count(), 2 * 4 * 64);
    }
}
