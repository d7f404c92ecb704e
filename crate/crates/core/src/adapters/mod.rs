//! Low-rank adapters: LoRA and PiSSA construction, forward, merge, and the
//! NF4 quantization-error metric.
//!
//! An [`AdapterPair`] carries a frozen base matrix (`m x n`) and the trainable
//! factors `a` (`m x r`) and `b` (`r x n`). The effective weight is
//! `base + (alpha / r) · a · b`, but the forward pass never forms it:
//! `Y = X·base + ((X·a)·b)·scale`.

pub mod checkpoint;
mod nf4;

pub use nf4::{nf4_quantize, quant_error, Nf4Codebook, NF4_LEVELS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{svd, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Lora,
    Pissa,
}

impl std::fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AdapterKind::Lora => "lora",
            AdapterKind::Pissa => "pissa",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterPair {
    pub a: Matrix,
    pub b: Matrix,
    base: Matrix,
    rank: usize,
    kind: AdapterKind,
    alpha: f64,
}

/// LoRA's default standard deviation for `a`: `1/√r`.
pub fn default_sigma(rank: usize) -> f64 {
    1.0 / (rank as f64).sqrt()
}

fn check_rank(w: &Matrix, rank: usize) -> Result<()> {
    let max = w.rows().min(w.cols());
    if rank == 0 {
        return Err(Error::ConfigInvalid("adapter rank must be at least 1".into()));
    }
    if rank > max {
        return Err(Error::RankTooLarge { rank, max });
    }
    Ok(())
}

/// LoRA pair on top of `w`: `a ~ N(0, sigma²)` from `seed`, `b = 0`.
pub fn lora_init(w: &Matrix, rank: usize, sigma: f64, seed: u64) -> Result<AdapterPair> {
    check_rank(w, rank)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::ConfigInvalid(format!("sigma must be positive, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(AdapterPair {
        a: Matrix::random_normal(w.rows(), rank, sigma, &mut rng),
        b: Matrix::zeros(rank, w.cols()),
        base: w.clone(),
        rank,
        kind: AdapterKind::Lora,
        alpha: rank as f64,
    })
}

/// PiSSA pair: the top-`rank` singular triplets move into `a`, `b` (split as
/// `U·√S` and `√S·Vᵀ`) and the remaining spectrum stays frozen in `base`.
pub fn pissa_init(w: &Matrix, rank: usize) -> Result<AdapterPair> {
    check_rank(w, rank)?;
    let f = svd(w)?;
    let (m, n) = w.shape();
    let root: Vec<f64> = f.s[..rank].iter().map(|s| s.sqrt()).collect();
    let a = Matrix::from_fn(m, rank, |i, k| f.u[(i, k)] * root[k]);
    let b = Matrix::from_fn(rank, n, |k, j| root[k] * f.v[(j, k)]);
    let base = f.reconstruct_range(rank, f.s.len());
    Ok(AdapterPair {
        a,
        b,
        base,
        rank,
        kind: AdapterKind::Pissa,
        alpha: rank as f64,
    })
}

impl AdapterPair {
    /// Reassembles a pair from stored parts.
    pub fn from_parts(
        a: Matrix,
        b: Matrix,
        base: Matrix,
        kind: AdapterKind,
        alpha: f64,
    ) -> Result<Self> {
        let rank = a.cols();
        if a.rows() != base.rows() || b.cols() != base.cols() || b.rows() != rank {
            return Err(shape_err(
                "adapter",
                format!(
                    "a {:?}, b {:?}, base {:?}",
                    a.shape(),
                    b.shape(),
                    base.shape()
                ),
            ));
        }
        check_rank(&base, rank)?;
        Ok(Self {
            a,
            b,
            base,
            rank,
            kind,
            alpha,
        })
    }

    /// Sets the LoRA `alpha`; the update is scaled by `alpha / r`.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn base(&self) -> &Matrix {
        &self.base
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn kind(&self) -> AdapterKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn in_dim(&self) -> usize {
        self.base.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.base.cols()
    }

    pub fn trainable_count(&self) -> usize {
        self.rank * (self.base.rows() + self.base.cols())
    }

    /// `base + scale · a · b`.
    pub fn merge(&self) -> Matrix {
        let mut w = self.base.clone();
        w.axpy(self.scale(), &self.a.matmul_unchecked(&self.b));
        w
    }

    /// `X·base + ((X·a)·b)·scale`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(shape_err(
                "adapter_forward",
                format!("input {:?} for {}x{} adapter", x.shape(), self.in_dim(), self.out_dim()),
            ));
        }
        let mut y = x.matmul_unchecked(&self.base);
        let low = x.matmul_unchecked(&self.a).matmul_unchecked(&self.b);
        y.axpy(self.scale(), &low);
        Ok(y)
    }
}

pub fn adapter_forward(x: &Matrix, p: &AdapterPair) -> Result<Matrix> {
    p.forward(x)
}

pub fn merge(p: &AdapterPair) -> Matrix {
    p.merge()
}

/// Records `X·base + ((X·a)·b)·scale` on a tape.
pub fn adapter_forward_tape(
    tape: &mut Tape,
    x: Var,
    base: Var,
    a: Var,
    b: Var,
    scale: f64,
) -> Result<Var> {
    let frozen = tape.matmul(x, base)?;
    let down = tape.matmul(x, a)?;
    let mut low = tape.matmul(down, b)?;
    if scale != 1.0 {
        low = tape.scale(low, scale);
    }
    tape.add(frozen, low)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn lora_rank_bounds() {
        let w = Matrix::filled(4, 3, 1.0);
        assert!(lora_init(&w, 3, 0.5, 1).is_ok());
        assert!(matches!(
            lora_init(&w, 4, 0.5, 1),
            Err(Error::RankTooLarge { rank: 4, max: 3 })
        ));
        assert!(matches!(pissa_init(&w, 4), Err(Error::RankTooLarge { .. })));
    }

    #[test]
    fn lora_is_deterministic_and_starts_at_zero() {
        let w = Matrix::from_fn(5, 6, |i, j| (i as f64) - (j as f64) * 0.3);
        let p = lora_init(&w, 2, default_sigma(2), 42).unwrap();
        let q = lora_init(&w, 2, default_sigma(2), 42).unwrap();
        assert_eq!(p.a, q.a);
        assert_eq!(p.b, Matrix::zeros(2, 6));
        assert_eq!(p.merge(), w);
        let x = Matrix::from_fn(3, 5, |i, j| (i * j) as f64 + 0.5);
        assert_eq!(p.forward(&x).unwrap(), x.matmul(&w).unwrap());
    }

    #[test]
    fn pissa_on_diagonal() {
        let w = Matrix::from_diag(&[3.0, 2.0, 1.0]);
        let p = pissa_init(&w, 1).unwrap();
        let ab = p.a.matmul(&p.b).unwrap();
        let mut expected = Matrix::zeros(3, 3);
        expected[(0, 0)] = 3.0;
        assert!(ab.sub(&expected).unwrap().max_abs() < 1e-15);
        assert_eq!(p.base(), &Matrix::from_diag(&[0.0, 2.0, 1.0]));
    }

    #[test]
    fn pissa_full_rank_leaves_empty_residual() {
        let w = Matrix::from_fn(4, 3, |i, j| ((i + 1) * (j + 2)) as f64 + (i as f64).sin());
        let p = pissa_init(&w, 3).unwrap();
        assert!(p.base().max_abs() < 1e-10);
        assert!(rel_err(&p.merge(), &w) < 1e-10);
    }

    #[test]
    fn identity_input_returns_merged_weight() {
        let w = Matrix::from_fn(3, 4, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5));
        let p = pissa_init(&w, 2).unwrap();
        let y = p.forward(&Matrix::identity(3)).unwrap();
        assert!(rel_err(&y, &p.merge()) < 1e-14);
    }

    #[test]
    fn forward_checks_shape() {
        let p = lora_init(&Matrix::zeros(3, 3), 1, 1.0, 0).unwrap();
        assert!(matches!(
            p.forward(&Matrix::zeros(2, 4)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn alpha_scales_update() {
        let w = Matrix::zeros(2, 2);
        let mut p = lora_init(&w, 1, 1.0, 3).unwrap().with_alpha(2.0);
        p.b = Matrix::filled(1, 2, 1.0);
        let merged = p.merge();
        let plain = p.a.matmul(&p.b).unwrap();
        assert_eq!(merged, plain.scale(2.0));
    }
}
