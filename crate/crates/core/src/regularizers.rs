//! Bias-aware regularizers and the composite fine-tuning objectives.
//!
//! Every loss is assembled from [`Tape`] primitives so it contributes exact
//! gradients. Reference-model inputs (`f_p`, `p_p`) are expected to be tape
//! constants.
//!
//! | family      | classification (NLU)              | generation (NLG)                      |
//! |-------------|-----------------------------------|---------------------------------------|
//! | consistency | MSE of row-normalized logits      | `KL(P_p ‖ P_f)`, row mean             |
//! | diversity   | off-diagonal covariance energy    | token entropy (sign configurable)     |
//! | spectrum    | `-Σ_{i≤k} σ_i / Σ σ`              | same plus `α·Var(σ_1..σ_k)` inside    |

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::linalg::NORM_EPS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Nlu,
    Nlg,
}

/// How the entropy term enters the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropySign {
    /// `+H`: minimizing the objective lowers entropy.
    PaperLiteral,
    /// `-H`: minimizing the objective raises entropy.
    #[default]
    EntropyMaximizing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Fraction of `min(rows, cols)` singular values counted as "top".
    pub k_frac: f64,
    /// Weight of the top-k variance term in the generation spectrum loss.
    pub alpha: f64,
    #[serde(default)]
    pub entropy_sign: EntropySign,
    pub task_mode: TaskMode,
}

impl RegConfig {
    /// `k = 0.3`, `λ = (1e-4, 4e-4, 1e-4)`.
    pub fn nlu() -> Self {
        Self {
            lambda1: 1e-4,
            lambda2: 4e-4,
            lambda3: 1e-4,
            k_frac: 0.3,
            alpha: 0.1,
            entropy_sign: EntropySign::EntropyMaximizing,
            task_mode: TaskMode::Nlu,
        }
    }

    /// `k = 0.3`, `λ = (1e-4, 3e-4, 1e-4)`.
    pub fn nlg() -> Self {
        Self {
            lambda2: 3e-4,
            task_mode: TaskMode::Nlg,
            ..Self::nlu()
        }
    }

    pub fn defaults_for(mode: TaskMode) -> Self {
        match mode {
            TaskMode::Nlu => Self::nlu(),
            TaskMode::Nlg => Self::nlg(),
        }
    }

    pub fn with_lambdas(mut self, l1: f64, l2: f64, l3: f64) -> Self {
        self.lambda1 = l1;
        self.lambda2 = l2;
        self.lambda3 = l3;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::ConfigInvalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.k_frac > 0.0 && self.k_frac <= 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "k_frac must lie in (0, 1], got {}",
                self.k_frac
            )));
        }
        if !self.alpha.is_finite() {
            return Err(Error::ConfigInvalid("alpha must be finite".into()));
        }
        Ok(())
    }

    /// `max(1, round(k_frac · p))` for a matrix with `p = min(rows, cols)`.
    pub fn k_count(&self, p: usize) -> usize {
        ((self.k_frac * p as f64).round() as usize).clamp(1, p.max(1))
    }
}

fn require_same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb {
        return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
    }
    Ok(())
}

/// `‖rownorm(F_p) − rownorm(F_f)‖²_F / B`.
pub fn cr_nlu(tape: &mut Tape, f_p: Var, f_f: Var) -> Result<Var> {
    require_same_shape(tape, "cr_nlu", f_p, f_f)?;
    let width = tape.value(f_f).cols() as f64;
    let np = tape.l2_normalize_rows(f_p, NORM_EPS);
    let nf = tape.l2_normalize_rows(f_f, NORM_EPS);
    let mse = tape.mse(np, nf)?;
    Ok(tape.scale(mse, width))
}

/// `(1/D) Σ_{i≠j} C(F_f)_ij²` with `C` the sample covariance of the rows.
pub fn dr_nlu(tape: &mut Tape, f_f: Var) -> Result<Var> {
    let d = tape.value(f_f).cols() as f64;
    let c = tape.covariance(f_f)?;
    let off = tape.offdiag_sq_sum(c)?;
    Ok(tape.scale(off, 1.0 / d))
}

/// `-( Σ_{i≤k} σ_i / Σ_j σ_j + alpha · Var(σ_1..σ_k) )`.
///
/// With `alpha = 0` this is the classification spectrum loss; a singleton
/// top set has zero variance.
pub fn spectral_mass_loss(tape: &mut Tape, f: Var, k_count: usize, alpha: f64) -> Result<Var> {
    let s = tape.svd_values(f)?;
    let p = tape.value(s).cols();
    if tape.value(s).as_slice().iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let k = k_count.clamp(1, p);
    let top = tape.slice_cols(s, 0, k)?;
    let top_sum = tape.sum(top);
    let total = tape.sum(s);
    let mut inner = tape.div(top_sum, total)?;
    if alpha != 0.0 && k >= 2 {
        let var = tape.variance(top);
        let weighted = tape.scale(var, alpha);
        inner = tape.add(inner, weighted)?;
    }
    Ok(tape.neg(inner))
}

pub fn svdr_nlu(tape: &mut Tape, f_f: Var, cfg: &RegConfig) -> Result<Var> {
    let (r, c) = tape.value(f_f).shape();
    spectral_mass_loss(tape, f_f, cfg.k_count(r.min(c)), 0.0)
}

/// Row-mean `KL(P_p ‖ P_f)`.
pub fn cr_nlg(tape: &mut Tape, p_p: Var, p_f: Var) -> Result<Var> {
    let kl = tape.kl_rows(p_p, p_f)?;
    Ok(tape.mean(kl))
}

/// Row-mean entropy of `P_f`, signed per [`EntropySign`].
pub fn dr_nlg(tape: &mut Tape, p_f: Var, cfg: &RegConfig) -> Result<Var> {
    let h = tape.entropy_rows(p_f)?;
    let mean = tape.mean(h);
    Ok(match cfg.entropy_sign {
        EntropySign::PaperLiteral => mean,
        EntropySign::EntropyMaximizing => tape.neg(mean),
    })
}

pub fn svdr_nlg(tape: &mut Tape, f_f: Var, cfg: &RegConfig) -> Result<Var> {
    let (r, c) = tape.value(f_f).shape();
    spectral_mass_loss(tape, f_f, cfg.k_count(r.min(c)), cfg.alpha)
}

/// Composite objective and its weighted pieces. Terms with zero weight are
/// not evaluated and show up as `None`.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: Var,
    pub task: Var,
    pub consistency: Option<Var>,
    pub diversity: Option<Var>,
    pub spectral: Option<Var>,
}

fn weighted_sum(tape: &mut Tape, task: Var, terms: [(f64, Option<Var>); 3]) -> Result<Var> {
    let mut total = task;
    for (lambda, term) in terms {
        if let Some(t) = term {
            let w = tape.scale(t, lambda);
            total = tape.add(total, w)?;
        }
    }
    Ok(total)
}

fn expect_mode(cfg: &RegConfig, mode: TaskMode) -> Result<()> {
    cfg.validate()?;
    if cfg.task_mode != mode {
        return Err(Error::ConfigInvalid(format!(
            "objective for {mode:?} called with task_mode {:?}",
            cfg.task_mode
        )));
    }
    Ok(())
}

/// `L + λ1·cr_nlu + λ2·dr_nlu + λ3·svdr_nlu`.
pub fn objective_nlu(
    tape: &mut Tape,
    task_loss: Var,
    f_p: Var,
    f_f: Var,
    cfg: &RegConfig,
) -> Result<Objective> {
    expect_mode(cfg, TaskMode::Nlu)?;
    let consistency = (cfg.lambda1 != 0.0).then(|| cr_nlu(tape, f_p, f_f)).transpose()?;
    let diversity = (cfg.lambda2 != 0.0).then(|| dr_nlu(tape, f_f)).transpose()?;
    let spectral = (cfg.lambda3 != 0.0).then(|| svdr_nlu(tape, f_f, cfg)).transpose()?;
    let total = weighted_sum(
        tape,
        task_loss,
        [
            (cfg.lambda1, consistency),
            (cfg.lambda2, diversity),
            (cfg.lambda3, spectral),
        ],
    )?;
    Ok(Objective {
        total,
        task: task_loss,
        consistency,
        diversity,
        spectral,
    })
}

/// `L + λ1·cr_nlg + λ2·dr_nlg + λ3·svdr_nlg`.
pub fn objective_nlg(
    tape: &mut Tape,
    task_loss: Var,
    p_p: Var,
    p_f: Var,
    f_f: Var,
    cfg: &RegConfig,
) -> Result<Objective> {
    expect_mode(cfg, TaskMode::Nlg)?;
    let consistency = (cfg.lambda1 != 0.0).then(|| cr_nlg(tape, p_p, p_f)).transpose()?;
    let diversity = (cfg.lambda2 != 0.0).then(|| dr_nlg(tape, p_f, cfg)).transpose()?;
    let spectral = (cfg.lambda3 != 0.0).then(|| svdr_nlg(tape, f_f, cfg)).transpose()?;
    let total = weighted_sum(
        tape,
        task_loss,
        [
            (cfg.lambda1, consistency),
            (cfg.lambda2, diversity),
            (cfg.lambda3, spectral),
        ],
    )?;
    Ok(Objective {
        total,
        task: task_loss,
        consistency,
        diversity,
        spectral,
    })
}

/// Evaluates a loss built on a throwaway tape.
pub fn evaluate(build: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = build(&mut tape)?;
    Ok(tape.scalar(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn rows(r: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(r).unwrap()
    }

    fn with_k(k_frac: f64, alpha: f64) -> RegConfig {
        RegConfig {
            k_frac,
            alpha,
            ..RegConfig::nlg()
        }
    }

    #[test]
    fn defaults() {
        let nlu = RegConfig::nlu();
        assert_eq!((nlu.lambda1, nlu.lambda2, nlu.lambda3, nlu.k_frac), (1e-4, 4e-4, 1e-4, 0.3));
        let nlg = RegConfig::nlg();
        assert_eq!((nlg.lambda1, nlg.lambda2, nlg.lambda3, nlg.k_frac), (1e-4, 3e-4, 1e-4, 0.3));
        assert_eq!(nlg.entropy_sign, EntropySign::EntropyMaximizing);
    }

    #[test]
    fn k_count_rounding() {
        let c = RegConfig::nlu();
        assert_eq!(c.k_count(1), 1);
        assert_eq!(c.k_count(3), 1);
        assert_eq!(c.k_count(4), 1);
        assert_eq!(c.k_count(5), 2);
        assert_eq!(c.k_count(10), 3);
    }

    #[test]
    fn cr_nlu_values() {
        let v = evaluate(|t| {
            let p = t.constant(rows(&[vec![1.0, 0.0]]));
            let f = t.constant(rows(&[vec![0.0, 1.0]]));
            cr_nlu(t, p, f)
        })
        .unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        let fp = rows(&[vec![1.0, -2.0, 0.5], vec![0.3, 0.3, 4.0]]);
        let v = evaluate(|t| {
            let p = t.constant(fp.clone());
            let f = t.constant(fp.scale(3.7));
            cr_nlu(t, p, f)
        })
        .unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn dr_nlu_values() {
        let v = evaluate(|t| {
            let f = t.constant(rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
            dr_nlu(t, f)
        })
        .unwrap();
        assert!((v - 0.25).abs() < 1e-12);
        let v = evaluate(|t| {
            let f = t.constant(rows(&vec![vec![1.0, 2.0, 3.0]; 5]));
            dr_nlu(t, f)
        })
        .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn svdr_values() {
        let svd_loss = |m: Matrix, cfg: RegConfig, nlg: bool| {
            evaluate(|t| {
                let f = t.constant(m);
                if nlg {
                    svdr_nlg(t, f, &cfg)
                } else {
                    svdr_nlu(t, f, &cfg)
                }
            })
            .unwrap()
        };
        let d321 = Matrix::from_diag(&[3.0, 2.0, 1.0]);
        assert!((svd_loss(d321.clone(), RegConfig::nlu(), false) + 0.5).abs() < 1e-12);
        assert!((svd_loss(d321, with_k(0.3, 0.7), true) + 0.5).abs() < 1e-12);
        assert!((svd_loss(Matrix::identity(4), with_k(0.5, 0.0), false) + 0.5).abs() < 1e-12);
        assert!((svd_loss(Matrix::from_diag(&[2.0, 2.0]), with_k(1.0, 0.1), true) + 1.0).abs() < 1e-12);
        assert!((svd_loss(Matrix::from_diag(&[3.0, 1.0]), with_k(1.0, 0.1), true) + 1.1).abs() < 1e-12);
        let rank1 = Matrix::from_fn(4, 3, |i, j| (i as f64 + 1.0) * (2.0 - j as f64));
        assert!((svd_loss(rank1, with_k(1.0, 0.0), false) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn svdr_of_zero_matrix_errors() {
        let r = evaluate(|t| {
            let f = t.constant(Matrix::zeros(3, 3));
            svdr_nlu(t, f, &RegConfig::nlu())
        });
        assert!(matches!(r, Err(Error::ZeroMatrix)));
    }

    #[test]
    fn nlg_closed_forms() {
        let v = evaluate(|t| {
            let p = t.constant(rows(&[vec![0.5, 0.5]]));
            let q = t.constant(rows(&[vec![0.25, 0.75]]));
            cr_nlg(t, p, q)
        })
        .unwrap();
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.143841).abs() < 1e-6);

        let literal = RegConfig {
            entropy_sign: EntropySign::PaperLiteral,
            ..RegConfig::nlg()
        };
        let h = |cfg: RegConfig, p: Matrix| {
            evaluate(|t| {
                let p = t.constant(p);
                dr_nlg(t, p, &cfg)
            })
            .unwrap()
        };
        assert!((h(literal.clone(), rows(&[vec![0.25; 4]])) - 4f64.ln()).abs() < 1e-12);
        assert!((h(RegConfig::nlg(), rows(&[vec![0.25; 4]])) + 4f64.ln()).abs() < 1e-12);
        assert_eq!(h(literal, rows(&[vec![0.0, 1.0, 0.0]])), 0.0);
    }

    #[test]
    fn objective_degenerate_weights() {
        let fp = rows(&[vec![1.0, 0.2], vec![0.1, -1.0], vec![0.5, 0.5]]);
        let ff = rows(&[vec![0.9, 0.3], vec![0.0, -1.2], vec![0.7, 0.1]]);
        let mut t = Tape::new();
        let p = t.constant(fp);
        let f = t.param(ff);
        let task = t.cross_entropy(f, &[0, 1, 0]).unwrap();
        let cfg = RegConfig::nlu().with_lambdas(0.0, 0.0, 0.0);
        let o = objective_nlu(&mut t, task, p, f, &cfg).unwrap();
        assert_eq!(o.total, task);
        assert!(o.consistency.is_none());
    }

    #[test]
    fn objective_rejects_wrong_mode() {
        let mut t = Tape::new();
        let f = t.param(Matrix::identity(2));
        let task = t.sum(f);
        assert!(matches!(
            objective_nlu(&mut t, task, f, f, &RegConfig::nlg()),
            Err(Error::ConfigInvalid(_))
        ));
        let bad = RegConfig {
            lambda2: -1.0,
            ..RegConfig::nlu()
        };
        assert!(matches!(
            objective_nlu(&mut t, task, f, f, &bad),
            Err(Error::ConfigInvalid(_))
        ));
    }
}
