use std::path::{Path, PathBuf};
use std::process::ExitCode;

use balora::adapters::checkpoint::{save_adapter, Checkpoint};
use balora::adapters::{default_sigma, lora_init, pissa_init, quant_error, AdapterKind, Nf4Codebook};
use balora::gradcheck::{gradient_suite, THRESHOLD};
use balora::linalg::{svd, Matrix};
use balora::models::{ModelKind, ModelMeta, Network};
use balora::trainloop::{
    build_corpora, evaluate_network, run_experiment_with_models, ExperimentConfig, Method, SeedPlan,
};
use balora::Error;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "balora", version, about = "Low-rank adapter surgery and regularized fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Lora,
    Pissa,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Pretrain,
    Finetune,
    Id,
    Ood,
}

#[derive(Subcommand)]
enum Command {
    /// Split a weight matrix into a frozen base and an adapter pair.
    InitAdapter {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        /// Tensor to read; the first one in the file by default.
        #[arg(long)]
        tensor: Option<String>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a comparative fine-tuning experiment from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Finite-difference check of every regularizer and objective.
    GradCheck {
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// NF4 quantization error of a matrix and of its PiSSA residual.
    QuantError {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        tensor: Option<String>,
    },
    /// Accuracy and perplexity of a saved network on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write one of a config's corpora (seed `--seed`) as a dataset file.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(Error::Format(_) | Error::Json(_) | Error::ConfigInvalid(_) | Error::NonFinite) => 2,
            Failure::Core(Error::RankTooLarge { .. } | Error::TooFewSamples(_)) => 3,
            Failure::Core(_) | Failure::Check(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Check(s) => f.write_str(s),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::InitAdapter {
            weights,
            rank,
            kind,
            out,
            tensor,
            sigma,
            seed,
        } => init_adapter(&weights, rank, kind, &out, tensor.as_deref(), sigma, seed),
        Command::Train { config } => train(&config),
        Command::GradCheck { trials, seed } => grad_check(trials, seed),
        Command::QuantError { weights, rank, tensor } => quant(&weights, rank, tensor.as_deref()),
        Command::Eval { checkpoint, data } => eval(&checkpoint, &data),
        Command::GenData {
            config,
            split,
            out,
            seed,
        } => gen_data(&config, split, &out, seed),
    }
}

fn load_matrix(path: &Path, tensor: Option<&str>) -> Result<Matrix, Failure> {
    let ckpt = Checkpoint::load(path)?;
    let m = match tensor {
        Some(name) => ckpt.require(name)?,
        None => match ckpt.tensors().first() {
            Some((_, m)) => m,
            None => return Err(Error::Format(format!("{} holds no tensors", path.display())).into()),
        },
    };
    Ok(m.clone())
}

fn summary(s: &[f64]) -> String {
    match (s.first(), s.last()) {
        (Some(hi), Some(lo)) => format!(
            "count {} max {hi:.6e} min {lo:.6e} sum {:.6e}",
            s.len(),
            s.iter().sum::<f64>()
        ),
        _ => "empty".into(),
    }
}

fn init_adapter(
    weights: &Path,
    rank: usize,
    kind: Kind,
    out: &Path,
    tensor: Option<&str>,
    sigma: Option<f64>,
    seed: u64,
) -> Result<(), Failure> {
    let w = load_matrix(weights, tensor)?;
    let (pair, sigma) = match kind {
        Kind::Lora => {
            let sigma = sigma.unwrap_or_else(|| default_sigma(rank.max(1)));
            (lora_init(&w, rank, sigma, seed)?, sigma)
        }
        Kind::Pissa => (pissa_init(&w, rank)?, 0.0),
    };
    let merged = pair.merge();
    let rel = merged.sub(&w)?.frobenius_norm() / w.frobenius_norm().max(f64::MIN_POSITIVE);
    let ab = pair.a.matmul(&pair.b)?.frobenius_norm();
    save_adapter(out, &pair, sigma, seed)?;
    println!("kind: {}", pair.kind());
    println!("shape: {}x{}", w.rows(), w.cols());
    println!("rank: {rank}");
    println!("reconstruction_error: {rel:.3e}");
    println!("ab_frobenius: {ab:.6e}");
    if pair.kind() == AdapterKind::Pissa {
        let res = svd(pair.base())?;
        println!("residual_spectrum: {}", summary(&res.s[..res.s.len() - rank]));
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn train(config: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config).map_err(Error::from)?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let dir = config.parent().unwrap_or(Path::new("."));
    cfg.paths
        .report_out
        .get_or_insert_with(|| dir.join(format!("{stem}-report.json")));
    cfg.paths
        .checkpoint_out
        .get_or_insert_with(|| dir.join(format!("{stem}-checkpoints")));
    let (report, networks) = run_experiment_with_models(&cfg)?;
    let eff = &report.effective_config;

    let json_path = eff.paths.report_out.clone().unwrap_or_default();
    std::fs::write(&json_path, report.to_json()?).map_err(Error::from)?;
    let csv_path = json_path.with_extension("csv");
    std::fs::write(&csv_path, report.to_csv()).map_err(Error::from)?;

    let ckpt_dir = eff.paths.checkpoint_out.clone().unwrap_or_default();
    std::fs::create_dir_all(&ckpt_dir).map_err(Error::from)?;
    for (method, net) in &networks {
        let kind = match method {
            Method::FullFt => ModelKind::Full,
            Method::Lora => ModelKind::Lora,
            Method::Pissa => ModelKind::Pissa,
            Method::BaLora => match eff.model.balora_init {
                AdapterKind::Lora => ModelKind::Lora,
                AdapterKind::Pissa => ModelKind::Pissa,
            },
        };
        let meta = ModelMeta {
            kind,
            r: eff.model.rank.unwrap_or(0),
            sigma: eff.model.sigma.unwrap_or(0.0),
            alpha: eff.model.alpha.unwrap_or(0.0),
            seed: eff.seed,
            architecture: net.architecture().clone(),
        };
        net.save(ckpt_dir.join(format!("{method}.balr")), &meta)?;
    }

    for c in &report.cells {
        println!(
            "{:<8} id {:.4} ± {:.4}  ood {:.4} ± {:.4}  loss {:.4}  params {}/{}",
            c.method.name(),
            c.id_accuracy.mean,
            c.id_accuracy.std,
            c.ood_accuracy.mean,
            c.ood_accuracy.std,
            c.final_loss.mean,
            c.trainable_params,
            c.total_params
        );
    }
    for g in &report.paired_gaps {
        println!(
            "ba_lora - {:<8} id {:+.4}  ood {:+.4}  ({}/{} seeds not worse)",
            g.baseline.name(),
            g.id_gap.mean,
            g.ood_gap.mean,
            g.ood_not_worse,
            g.seeds
        );
    }
    println!("report: {} {}", json_path.display(), csv_path.display());
    println!("checkpoints: {}", ckpt_dir.display());
    Ok(())
}

fn grad_check(trials: usize, seed: u64) -> Result<(), Failure> {
    if trials == 0 {
        return Err(Error::ConfigInvalid("--trials must be at least 1".into()).into());
    }
    let rows = gradient_suite(trials, seed)?;
    println!("{:<16} {:>6} {:>12}  status", "loss", "points", "worst");
    for r in &rows {
        println!(
            "{:<16} {:>6} {:>12.3e}  {}",
            r.name,
            r.points,
            r.worst,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "{} exceeded relative error {THRESHOLD:e}",
            failed.join(", ")
        )))
    }
}

fn quant(weights: &Path, rank: usize, tensor: Option<&str>) -> Result<(), Failure> {
    let w = load_matrix(weights, tensor)?;
    let cb = Nf4Codebook::default();
    let pair = pissa_init(&w, rank)?;
    let e_w = quant_error(&w, &cb)?;
    let e_res = quant_error(pair.base(), &cb)?;
    println!("{:<12} {:>14}", "matrix", "nuclear_error");
    println!("{:<12} {:>14.6e}", "W", e_w);
    println!("{:<12} {:>14.6e}", "W_res", e_res);
    println!("ratio {:.6}", e_res / e_w);
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path) -> Result<(), Failure> {
    let (net, _) = Network::load(checkpoint)?;
    let ds = balora::trainloop::Dataset::load(data)?;
    let m = evaluate_network(&net, &ds)?;
    println!("rows: {}", ds.len());
    println!("accuracy: {:.6}", m.accuracy);
    println!("perplexity: {:.6}", m.perplexity);
    Ok(())
}

fn gen_data(config: &Path, split: Split, out: &Path, seed: u64) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config).map_err(Error::from)?;
    let cfg = ExperimentConfig::from_json(&text)?.resolve()?;
    let c = build_corpora(&cfg, &SeedPlan::new(seed, cfg.corruption.seed))?;
    let ds = match split {
        Split::Pretrain => c.pretrain,
        Split::Finetune => c.finetune,
        Split::Id => c.id_test,
        Split::Ood => c.ood_test,
    };
    ds.save(out)?;
    println!("wrote {} rows to {}", ds.len(), out.display());
    Ok(())
}
