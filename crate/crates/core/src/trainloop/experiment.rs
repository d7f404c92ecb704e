//! Comparative fine-tuning runs: pretrain on clean data, attach adapters,
//! fine-tune on corrupted data, evaluate in-domain and under shift.

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{make_corrupted_dataset, BlobTask, CorruptionSpec, Dataset, MarkovTask, Shift};
use super::optim::{AdamW, OptimConfig};
use crate::adapters::AdapterKind;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{accuracy, pretrain, AdapterSpec, Architecture, ModelPair, Network};
use crate::regularizers::{objective_nlg, objective_nlu, RegConfig, TaskMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FullFt,
    Lora,
    Pissa,
    BaLora,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FullFt, Method::Lora, Method::Pissa, Method::BaLora];

    pub fn name(self) -> &'static str {
        match self {
            Method::FullFt => "full_ft",
            Method::Lora => "lora",
            Method::Pissa => "pissa",
            Method::BaLora => "ba_lora",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Host network; the default classifier or tiny LM for the task mode.
    pub architecture: Option<Architecture>,
    /// Adapter rank; 8 for the classifier, 4 for the tiny LM.
    pub rank: Option<usize>,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    /// Adapter initialization used under the regularized objective.
    pub balora_init: AdapterKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: None,
            rank: None,
            alpha: None,
            sigma: None,
            balora_init: AdapterKind::Pissa,
        }
    }
}

/// Sizes count samples for classification and sequences for generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub pretrain_size: usize,
    pub finetune_size: usize,
    pub test_size: usize,
    pub separation: f64,
    pub noise: f64,
    /// Per-coordinate standard deviation of the pretrain-to-finetune drift.
    pub drift: f64,
    pub shift: Shift,
    pub temperature: f64,
    /// Uniform mixing weight of the shifted token source.
    pub ood_mix: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            pretrain_size: 2000,
            finetune_size: 1000,
            test_size: 1000,
            separation: 1.0,
            noise: 1.0,
            drift: 0.5,
            shift: Shift::default(),
            temperature: 2.0,
            ood_mix: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-2,
            batch_size: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Pretrained network to start from instead of pretraining.
    pub checkpoint_in: Option<PathBuf>,
    /// Directory receiving one fine-tuned checkpoint per method (first seed).
    pub checkpoint_out: Option<PathBuf>,
    /// Report path; `.json` and `.csv` are written side by side.
    pub report_out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task_mode: TaskMode,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    pub optim: OptimConfig,
    /// Regularizer weights; the task mode's defaults when absent.
    pub reg: Option<RegConfig>,
    pub corruption: CorruptionSpec,
    pub methods: Vec<Method>,
    /// First seed; seed `i` of the run is `seed + i`.
    pub seed: u64,
    pub seeds: usize,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task_mode: TaskMode::Nlu,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            pretrain: PretrainConfig::default(),
            optim: OptimConfig::default(),
            reg: None,
            corruption: CorruptionSpec::default(),
            methods: Method::ALL.to_vec(),
            seed: 0,
            seeds: 1,
            paths: PathsConfig::default(),
        }
    }
}

const CLASSES: usize = 4;

impl ExperimentConfig {
    /// Strict JSON parse; unknown keys are errors.
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Copy with every optional field filled in.
    pub fn resolve(&self) -> Result<Self> {
        let mut out = self.clone();
        let arch = out.model.architecture.get_or_insert_with(|| match self.task_mode {
            TaskMode::Nlu => Architecture::default_mlp(CLASSES),
            TaskMode::Nlg => Architecture::default_tiny_lm(),
        });
        let arch_ok = matches!(
            (self.task_mode, &*arch),
            (TaskMode::Nlu, Architecture::Mlp { .. }) | (TaskMode::Nlg, Architecture::TinyLm { .. })
        );
        if !arch_ok {
            return Err(Error::ConfigInvalid(format!(
                "architecture {arch:?} does not fit task_mode {:?}",
                self.task_mode
            )));
        }
        let rank = *out.model.rank.get_or_insert(match self.task_mode {
            TaskMode::Nlu => 8,
            TaskMode::Nlg => 4,
        });
        out.model.alpha.get_or_insert(rank as f64);
        out.model.sigma.get_or_insert(crate::adapters::default_sigma(rank.max(1)));
        let reg = out.reg.get_or_insert_with(|| RegConfig::defaults_for(self.task_mode));
        if reg.task_mode != self.task_mode {
            return Err(Error::ConfigInvalid("reg.task_mode differs from task_mode".into()));
        }
        out.validate()?;
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if self.seeds == 0 {
            return bad("seeds must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        if self.model.rank == Some(0) {
            return bad("rank must be at least 1");
        }
        let d = &self.data;
        if d.finetune_size < 2 || d.test_size == 0 || (d.pretrain_size == 0 && self.pretrain.epochs > 0) {
            return bad("dataset sizes too small");
        }
        if !(d.noise >= 0.0 && d.drift >= 0.0 && d.separation >= 0.0) {
            return bad("separation, noise and drift must be >= 0");
        }
        if !(0.0..=1.0).contains(&d.ood_mix) {
            return bad("ood_mix must lie in [0, 1]");
        }
        if self.pretrain.batch_size == 0 || self.pretrain.lr.is_nan() || self.pretrain.lr < 0.0 {
            return bad("invalid pretrain settings");
        }
        self.optim.validate()?;
        self.corruption.validate()?;
        if let Some(r) = &self.reg {
            r.validate()?;
        }
        Ok(())
    }

    fn arch(&self) -> &Architecture {
        self.model.architecture.as_ref().expect("resolved config")
    }

    fn reg(&self) -> &RegConfig {
        self.reg.as_ref().expect("resolved config")
    }

    pub fn adapter_spec(&self, kind: AdapterKind, seed: u64) -> AdapterSpec {
        AdapterSpec {
            kind,
            rank: self.model.rank.unwrap_or(8),
            sigma: self.model.sigma,
            alpha: self.model.alpha,
            seed,
        }
    }
}

/// Component seeds derived from one run seed by fixed offsets.
#[derive(Clone, Copy, Debug)]
pub struct SeedPlan {
    pub task: u64,
    pub init: u64,
    pub pretrain_shuffle: u64,
    pub pretrain_data: u64,
    pub drift: u64,
    pub finetune_data: u64,
    pub id_test: u64,
    pub ood_test: u64,
    pub corruption: u64,
    pub adapter: u64,
    pub finetune_shuffle: u64,
}

impl SeedPlan {
    pub fn new(seed: u64, corruption_seed: u64) -> Self {
        let s = seed.wrapping_mul(1000);
        Self {
            task: s,
            init: s + 1,
            pretrain_shuffle: s + 2,
            pretrain_data: s + 3,
            drift: s + 4,
            finetune_data: s + 5,
            id_test: s + 6,
            ood_test: s + 7,
            corruption: corruption_seed.wrapping_add(s + 8),
            adapter: s + 9,
            finetune_shuffle: s + 10,
        }
    }
}

/// Everything a seed needs before fine-tuning starts.
#[derive(Clone, Debug)]
pub struct SeedSetup {
    pub seed: u64,
    pub plan: SeedPlan,
    pub pretrained: Network,
    pub finetune: Dataset,
    pub id_test: Dataset,
    pub ood_test: Dataset,
}

/// Clean pretraining data, corrupted fine-tuning data and the two clean
/// evaluation sets for one seed.
#[derive(Clone, Debug)]
pub struct Corpora {
    pub pretrain: Dataset,
    pub finetune: Dataset,
    pub id_test: Dataset,
    pub ood_test: Dataset,
}

pub fn build_corpora(cfg: &ExperimentConfig, plan: &SeedPlan) -> Result<Corpora> {
    let d = &cfg.data;
    let (pretrain, ft_clean, id_test, ood_test) = match cfg.arch() {
        Architecture::Mlp {
            input_dim, classes, ..
        } => {
            let task = BlobTask::new(*input_dim, *classes, d.separation, d.noise, plan.task);
            let ft_task = task.drifted(d.drift, plan.drift);
            (
                task.sample(d.pretrain_size, None, plan.pretrain_data),
                ft_task.sample(d.finetune_size, None, plan.finetune_data),
                ft_task.sample(d.test_size, None, plan.id_test),
                ft_task.sample(d.test_size, Some(&d.shift), plan.ood_test),
            )
        }
        Architecture::TinyLm {
            vocab, context_len, ..
        } => {
            let task = MarkovTask::new(*vocab, *context_len, d.temperature, plan.task);
            let ft_task = task.drifted(d.drift, plan.drift);
            (
                task.sample(d.pretrain_size, plan.pretrain_data),
                ft_task.sample(d.finetune_size, plan.finetune_data),
                ft_task.sample(d.test_size, plan.id_test),
                ft_task.shifted(d.ood_mix).sample(d.test_size, plan.ood_test),
            )
        }
    };
    let corruption = CorruptionSpec {
        seed: plan.corruption,
        ..cfg.corruption.clone()
    };
    Ok(Corpora {
        finetune: make_corrupted_dataset(&ft_clean, &corruption)?,
        pretrain,
        id_test,
        ood_test,
    })
}

/// Builds the corpora and the pretrained network for one seed of a resolved
/// config. `pretrained` replaces pretraining when given.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64, pretrained: Option<&Network>) -> Result<SeedSetup> {
    let plan = SeedPlan::new(seed, cfg.corruption.seed);
    let corpora = build_corpora(cfg, &plan)?;
    let pretrained = match pretrained {
        Some(net) => {
            if net.architecture() != cfg.arch() {
                return Err(Error::ConfigInvalid("loaded checkpoint architecture differs from config".into()));
            }
            net.merged()
        }
        None => {
            let mut net = Network::new(cfg.arch().clone(), plan.init)?;
            let optim = OptimConfig {
                lr: cfg.pretrain.lr,
                batch_size: cfg.pretrain.batch_size,
                warmup_ratio: 0.0,
                ..OptimConfig::default()
            };
            pretrain(&mut net, &corpora.pretrain, cfg.pretrain.epochs, plan.pretrain_shuffle, &optim)?;
            net
        }
    };
    Ok(SeedSetup {
        seed,
        plan,
        pretrained,
        finetune: corpora.finetune,
        id_test: corpora.id_test,
        ood_test: corpora.ood_test,
    })
}

/// Fine-tuned network for `method` paired with the frozen reference.
pub fn build_pair(cfg: &ExperimentConfig, method: Method, pretrained: &Network, adapter_seed: u64) -> Result<ModelPair> {
    let finetuned = match method {
        Method::FullFt => pretrained.clone(),
        Method::Lora => pretrained.with_adapters(&cfg.adapter_spec(AdapterKind::Lora, adapter_seed))?,
        Method::Pissa => pretrained.with_adapters(&cfg.adapter_spec(AdapterKind::Pissa, adapter_seed))?,
        Method::BaLora => pretrained.with_adapters(&cfg.adapter_spec(cfg.model.balora_init, adapter_seed))?,
    };
    ModelPair::new(pretrained.clone(), finetuned)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineTuneStats {
    pub steps: usize,
    /// Mean objective over the last epoch.
    pub final_loss: f64,
    /// Mean task loss over the last epoch.
    pub final_task_loss: f64,
}

/// One objective evaluation on a batch.
pub struct StepLoss {
    pub total: Var,
    pub task: Var,
}

/// Builds the training objective on `tape`: cross-entropy, plus the
/// regularizers of `reg` when given.
pub fn batch_objective(
    tape: &mut Tape,
    pair: &ModelPair,
    x: &Matrix,
    y: &[usize],
    reg: Option<&RegConfig>,
) -> Result<(StepLoss, Vec<Var>)> {
    let Some(reg) = reg else {
        let (logits, params) = pair.finetuned.forward_tape(tape, x)?;
        let task = tape.cross_entropy(logits, y)?;
        return Ok((StepLoss { total: task, task }, params));
    };
    let out = pair.forward_pair(tape, x)?;
    let task = tape.cross_entropy(out.logits, y)?;
    let obj = match reg.task_mode {
        TaskMode::Nlu => objective_nlu(tape, task, out.reference, out.logits, reg)?,
        TaskMode::Nlg => {
            let p_p = tape.softmax_rows(out.reference);
            let p_f = tape.softmax_rows(out.logits);
            objective_nlg(tape, task, p_p, p_f, out.logits, reg)?
        }
    };
    Ok((
        StepLoss {
            total: obj.total,
            task,
        },
        out.params,
    ))
}

/// Minibatch AdamW on the fine-tuned side of `pair`. `observer` sees the
/// network after every update.
pub fn fine_tune(
    pair: &mut ModelPair,
    data: &Dataset,
    reg: Option<&RegConfig>,
    optim: &OptimConfig,
    shuffle_seed: u64,
    mut observer: impl FnMut(usize, &Network),
) -> Result<FineTuneStats> {
    optim.validate()?;
    if data.len() < 2 {
        return Err(Error::TooFewSamples(data.len()));
    }
    let total = optim.epochs * data.batch_count(optim.batch_size);
    let mut opt = AdamW::new(&pair.finetuned.params());
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut step = 0;
    let (mut last_total, mut last_task) = (f64::NAN, f64::NAN);
    for _ in 0..optim.epochs {
        let (mut sum_total, mut sum_task, mut n) = (0.0, 0.0, 0usize);
        for idx in data.shuffled_batches(optim.batch_size, &mut rng) {
            let (x, y) = data.batch(&idx);
            let mut tape = Tape::new();
            let (loss, params) = batch_objective(&mut tape, pair, &x, &y, reg)?;
            let grads = tape.backward(loss.total)?;
            let g: Vec<Matrix> = params
                .iter()
                .map(|&p| {
                    let (r, c) = tape.value(p).shape();
                    grads.get_or_zeros(p, r, c)
                })
                .collect();
            let lr = optim.lr_at(step, total);
            opt.step(&mut pair.finetuned.params_mut(), &g, optim, lr)?;
            step += 1;
            sum_total += tape.scalar(loss.total);
            sum_task += tape.scalar(loss.task);
            n += 1;
            observer(step, &pair.finetuned);
        }
        last_total = sum_total / n as f64;
        last_task = sum_task / n as f64;
    }
    if !(last_total.is_finite() || optim.epochs == 0) {
        return Err(Error::NonFinite);
    }
    Ok(FineTuneStats {
        steps: step,
        final_loss: last_total,
        final_task_loss: last_task,
    })
}

/// Mean cross-entropy of `logits` against `labels`.
pub fn mean_cross_entropy(logits: &Matrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[l];
    }
    total / labels.len().max(1) as f64
}

/// Accuracy and perplexity on clean labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub perplexity: f64,
}

pub fn evaluate_network(net: &Network, data: &Dataset) -> Result<EvalMetrics> {
    let logits = net.forward(&data.inputs)?;
    Ok(EvalMetrics {
        accuracy: accuracy(&logits, &data.clean_labels),
        perplexity: mean_cross_entropy(&logits, &data.clean_labels).exp(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub method: Method,
    pub seed: u64,
    pub id_accuracy: f64,
    pub ood_accuracy: f64,
    pub id_perplexity: f64,
    pub ood_perplexity: f64,
    pub final_loss: f64,
    pub final_task_loss: f64,
    pub steps: usize,
    pub trainable_params: usize,
    pub total_params: usize,
    pub reference_intact: bool,
    /// Kept out of the JSON report so repeated runs serialize identically.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

/// Aggregate over seeds for one method at the configured corruption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub label_noise_rate: f64,
    pub imbalance_ratio: f64,
    pub seeds: usize,
    pub id_accuracy: MeanStd,
    pub ood_accuracy: MeanStd,
    pub id_perplexity: MeanStd,
    pub ood_perplexity: MeanStd,
    pub final_loss: MeanStd,
    pub trainable_params: usize,
    pub total_params: usize,
    pub trainable_fraction: f64,
    #[serde(skip)]
    pub mean_wall_time_secs: f64,
}

/// Seed-paired differences `ba_lora − baseline`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedGap {
    pub baseline: Method,
    pub id_gap: MeanStd,
    pub ood_gap: MeanStd,
    /// Seeds where the regularized run's OOD accuracy is at least the baseline's.
    pub ood_not_worse: usize,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub effective_config: ExperimentConfig,
    pub records: Vec<SeedRecord>,
    pub cells: Vec<CellSummary>,
    pub paired_gaps: Vec<PairedGap>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per method x corruption cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,label_noise_rate,imbalance_ratio,seeds,id_acc_mean,id_acc_std,ood_acc_mean,ood_acc_std,\
             id_ppl_mean,ood_ppl_mean,final_loss_mean,trainable_params,total_params,wall_time_secs\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:.3}\n",
                c.method,
                c.label_noise_rate,
                c.imbalance_ratio,
                c.seeds,
                c.id_accuracy.mean,
                c.id_accuracy.std,
                c.ood_accuracy.mean,
                c.ood_accuracy.std,
                c.id_perplexity.mean,
                c.ood_perplexity.mean,
                c.final_loss.mean,
                c.trainable_params,
                c.total_params,
                c.mean_wall_time_secs,
            ));
        }
        out
    }

    pub fn cell(&self, method: Method) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.method == method)
    }

    pub fn gap_vs(&self, baseline: Method) -> Option<&PairedGap> {
        self.paired_gaps.iter().find(|g| g.baseline == baseline)
    }
}

/// Per-seed outcome with the fine-tuned networks, in method order.
pub struct SeedOutcome {
    pub records: Vec<SeedRecord>,
    pub networks: Vec<(Method, Network)>,
}

/// Runs every method of a resolved config on one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, pretrained: Option<&Network>) -> Result<SeedOutcome> {
    let setup = prepare_seed(cfg, seed, pretrained)?;
    let mut records = Vec::new();
    let mut networks = Vec::new();
    for &method in &cfg.methods {
        let started = Instant::now();
        let mut pair = build_pair(cfg, method, &setup.pretrained, setup.plan.adapter)?;
        let reg = (method == Method::BaLora).then(|| cfg.reg());
        let stats = fine_tune(&mut pair, &setup.finetune, reg, &cfg.optim, setup.plan.finetune_shuffle, |_, _| {})?;
        let id = evaluate_network(&pair.finetuned, &setup.id_test)?;
        let ood = evaluate_network(&pair.finetuned, &setup.ood_test)?;
        records.push(SeedRecord {
            method,
            seed,
            id_accuracy: id.accuracy,
            ood_accuracy: ood.accuracy,
            id_perplexity: id.perplexity,
            ood_perplexity: ood.perplexity,
            final_loss: stats.final_loss,
            final_task_loss: stats.final_task_loss,
            steps: stats.steps,
            trainable_params: pair.finetuned.trainable_count(),
            total_params: pair.finetuned.total_count(),
            reference_intact: pair.reference_intact(),
            wall_time_secs: started.elapsed().as_secs_f64(),
        });
        networks.push((method, pair.finetuned));
    }
    Ok(SeedOutcome { records, networks })
}

/// Thread pool honoring `BALORA_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("BALORA_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::ConfigInvalid(format!("BALORA_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(Error::ConfigInvalid("BALORA_THREADS must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::ConfigInvalid(e.to_string()))
}

/// Report plus the first seed's fine-tuned networks.
pub fn run_experiment_with_models(cfg: &ExperimentConfig) -> Result<(MetricsReport, Vec<(Method, Network)>)> {
    let cfg = cfg.resolve()?;
    let loaded = match &cfg.paths.checkpoint_in {
        Some(path) => Some(Network::load(path)?.0),
        None => None,
    };
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|i| cfg.seed + i).collect();
    let pool = thread_pool()?;
    let outcomes: Vec<SeedOutcome> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| run_seed(&cfg, s, loaded.as_ref()))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut outcomes = outcomes.into_iter();
    let first = outcomes.next().expect("at least one seed");
    let networks = first.networks;
    let mut records = first.records;
    for o in outcomes {
        records.extend(o.records);
    }
    let report = summarize(cfg, records);
    Ok((report, networks))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    run_experiment_with_models(cfg).map(|(r, _)| r)
}

fn summarize(cfg: ExperimentConfig, records: Vec<SeedRecord>) -> MetricsReport {
    let of = |m: Method| -> Vec<&SeedRecord> { records.iter().filter(|r| r.method == m).collect() };
    let stat = |rs: &[&SeedRecord], f: fn(&SeedRecord) -> f64| MeanStd::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
    let cells = cfg
        .methods
        .iter()
        .map(|&m| {
            let rs = of(m);
            let (trainable, total) = (rs[0].trainable_params, rs[0].total_params);
            CellSummary {
                method: m,
                label_noise_rate: cfg.corruption.label_noise_rate,
                imbalance_ratio: cfg.corruption.imbalance_ratio,
                seeds: rs.len(),
                id_accuracy: stat(&rs, |r| r.id_accuracy),
                ood_accuracy: stat(&rs, |r| r.ood_accuracy),
                id_perplexity: stat(&rs, |r| r.id_perplexity),
                ood_perplexity: stat(&rs, |r| r.ood_perplexity),
                final_loss: stat(&rs, |r| r.final_loss),
                trainable_params: trainable,
                total_params: total,
                trainable_fraction: trainable as f64 / total as f64,
                mean_wall_time_secs: rs.iter().map(|r| r.wall_time_secs).sum::<f64>() / rs.len() as f64,
            }
        })
        .collect();
    let mut paired_gaps = Vec::new();
    if cfg.methods.contains(&Method::BaLora) {
        let ba = of(Method::BaLora);
        for &m in cfg.methods.iter().filter(|&&m| m != Method::BaLora) {
            let base = of(m);
            let id: Vec<f64> = ba.iter().zip(&base).map(|(a, b)| a.id_accuracy - b.id_accuracy).collect();
            let ood: Vec<f64> = ba.iter().zip(&base).map(|(a, b)| a.ood_accuracy - b.ood_accuracy).collect();
            paired_gaps.push(PairedGap {
                baseline: m,
                id_gap: MeanStd::of(&id),
                ood_gap: MeanStd::of(&ood),
                ood_not_worse: ood.iter().filter(|&&g| g >= 0.0).count(),
                seeds: ood.len(),
            });
        }
    }
    MetricsReport {
        effective_config: cfg,
        records,
        cells,
        paired_gaps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            model: ModelConfig {
                architecture: Some(Architecture::Mlp {
                    input_dim: 6,
                    hidden: vec![8],
                    classes: 3,
                }),
                rank: Some(2),
                ..ModelConfig::default()
            },
            data: DataConfig {
                pretrain_size: 60,
                finetune_size: 40,
                test_size: 30,
                ..DataConfig::default()
            },
            pretrain: PretrainConfig {
                epochs: 2,
                ..PretrainConfig::default()
            },
            optim: OptimConfig {
                lr: 1e-2,
                batch_size: 16,
                epochs: 1,
                ..OptimConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn resolve_fills_defaults() {
        let r = ExperimentConfig::default().resolve().unwrap();
        assert_eq!(r.model.rank, Some(8));
        assert_eq!(r.model.alpha, Some(8.0));
        assert_eq!(r.reg, Some(RegConfig::nlu()));
        assert_eq!(r.model.architecture, Some(Architecture::default_mlp(CLASSES)));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"seeds": 1, "lambda_2": 0.1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"reg": {"lambda1": 0, "lambda2": 0, "lambda3": 0, "k_frac": 0.3, "alpha": 0.1, "task_mode": "nlu", "extra": 1}}"#).is_err());
    }

    #[test]
    fn mismatched_architecture_rejected() {
        let cfg = ExperimentConfig {
            task_mode: TaskMode::Nlg,
            model: tiny().model,
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.resolve(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn tiny_run_is_deterministic() {
        let cfg = tiny();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.cells.len(), 4);
        assert_eq!(a.paired_gaps.len(), 3);
        assert!(a.records.iter().all(|r| r.reference_intact));
        assert_eq!(a.to_csv().lines().count(), 5);
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[5.0]).std, 0.0);
    }
}
