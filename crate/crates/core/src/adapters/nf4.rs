use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nuclear_norm, Matrix};

/// The 16 NormalFloat-4 levels: quantiles of a standard normal rescaled to
/// `[-1, 1]`, with an exact zero.
pub const NF4_LEVELS: [f64; 16] = [
    -1.0,
    -0.6961928009986877,
    -0.5250730514526367,
    -0.39491748809814453,
    -0.28444138169288635,
    -0.18477343022823334,
    -0.09105003625154495,
    0.0,
    0.07958029955625534,
    0.16093020141124725,
    0.24611230194568634,
    0.33791524171829224,
    0.44070982933044434,
    0.5626170039176941,
    0.7229568362236023,
    1.0,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nf4Codebook {
    levels: Vec<f64>,
    block_size: usize,
}

impl Default for Nf4Codebook {
    fn default() -> Self {
        Self {
            levels: NF4_LEVELS.to_vec(),
            block_size: 64,
        }
    }
}

impl Nf4Codebook {
    pub fn with_block_size(block_size: usize) -> Result<Self> {
        Self::new(NF4_LEVELS.to_vec(), block_size)
    }

    pub fn new(levels: Vec<f64>, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::ConfigInvalid("block_size must be at least 1".into()));
        }
        let ok = levels.len() == 16
            && levels[0] == -1.0
            && levels[15] == 1.0
            && levels.windows(2).all(|w| w[0] < w[1])
            && levels.contains(&0.0);
        if !ok {
            return Err(Error::ConfigInvalid(
                "codebook needs 16 increasing levels from -1 to 1 including 0".into(),
            ));
        }
        Ok(Self { levels, block_size })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Nearest level to `x` (in `[-1, 1]`), ties going to the lower level.
    pub fn snap(&self, x: f64) -> f64 {
        let hi = self.levels.partition_point(|&l| l < x);
        if hi == 0 {
            return self.levels[0];
        }
        if hi == self.levels.len() {
            return self.levels[hi - 1];
        }
        let (lo_v, hi_v) = (self.levels[hi - 1], self.levels[hi]);
        if x - lo_v <= hi_v - x {
            lo_v
        } else {
            hi_v
        }
    }
}

/// Blockwise absmax NF4 round trip over row-major blocks; returns the
/// dequantized matrix.
pub fn nf4_quantize(w: &Matrix, cb: &Nf4Codebook) -> Matrix {
    let mut out = w.clone();
    for block in out.as_mut_slice().chunks_mut(cb.block_size) {
        let absmax = block.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if absmax == 0.0 {
            continue;
        }
        for x in block.iter_mut() {
            *x = cb.snap(*x / absmax) * absmax;
        }
    }
    out
}

/// `‖W − nf4(W)‖_*`.
pub fn quant_error(w: &Matrix, cb: &Nf4Codebook) -> Result<f64> {
    let q = nf4_quantize(w, cb);
    nuclear_norm(&w.sub(&q)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codebook_invariants() {
        let cb = Nf4Codebook::default();
        assert_eq!(cb.levels().len(), 16);
        assert_eq!(cb.block_size(), 64);
        assert!(Nf4Codebook::with_block_size(0).is_err());
        assert!(Nf4Codebook::new(vec![0.0; 16], 4).is_err());
    }

    #[test]
    fn snap_ties_go_low() {
        let cb = Nf4Codebook::default();
        let mid = (NF4_LEVELS[7] + NF4_LEVELS[8]) / 2.0;
        assert_eq!(cb.snap(mid), NF4_LEVELS[7]);
        assert_eq!(cb.snap(1.0), 1.0);
        assert_eq!(cb.snap(-1.0), -1.0);
    }

    #[test]
    fn zero_and_absmax_entries_are_exact() {
        let cb = Nf4Codebook::with_block_size(3).unwrap();
        assert_eq!(nf4_quantize(&Matrix::zeros(2, 3), &cb), Matrix::zeros(2, 3));
        let w = Matrix::from_rows(&[vec![0.3, -2.5, 1.0], vec![7.0, 0.0, -1.0]]).unwrap();
        let q = nf4_quantize(&w, &cb);
        assert_eq!(q[(0, 1)], -2.5);
        assert_eq!(q[(1, 0)], 7.0);
        assert_eq!(q[(1, 1)], 0.0);
    }

    #[test]
    fn grid_matrix_has_zero_error() {
        let cb = Nf4Codebook::with_block_size(16).unwrap();
        let w = Matrix::from_vec(4, 4, NF4_LEVELS.iter().map(|l| l * 2.5).collect()).unwrap();
        assert_eq!(nf4_quantize(&w, &cb), w);
        assert_eq!(quant_error(&w, &cb).unwrap(), 0.0);
    }
}
