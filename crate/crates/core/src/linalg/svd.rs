//! One-sided (Hestenes) Jacobi singular value decomposition.
//!
//! The input is reduced to the tall case (`rows >= cols`); wide inputs are
//! factored through their transpose. Column pairs are rotated until every
//! pair is orthogonal to a relative tolerance, after which the column norms
//! are the singular values. Output ordering and signs are canonical, so the
//! same input always produces bit-identical factors.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Upper bound on full Jacobi sweeps before giving up.
pub const MAX_SWEEPS: usize = 60;
/// Pair (i, j) counts as orthogonal once `|<a_i, a_j>| <= TOL * |a_i| |a_j|`.
pub const TOL: f64 = 1e-12;
/// Columns with norm below this fraction of the input norm count as zero.
const NEGLIGIBLE: f64 = 1e-14;

/// Thin SVD `M = U diag(s) Vᵀ` with `p = min(rows, cols)` components.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdFactors {
    /// `rows x p`, orthonormal columns.
    pub u: Matrix,
    /// Descending, non-negative.
    pub s: Vec<f64>,
    /// `cols x p`, orthonormal columns.
    pub v: Matrix,
}

impl SvdFactors {
    /// `U[:, range] diag(s[range]) V[:, range]ᵀ`.
    pub fn reconstruct_range(&self, start: usize, end: usize) -> Matrix {
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(m, n);
        for k in start..end {
            let sk = self.s[k];
            if sk == 0.0 {
                continue;
            }
            for i in 0..m {
                let a = self.u[(i, k)] * sk;
                if a == 0.0 {
                    continue;
                }
                let row = out.row_mut(i);
                for (j, o) in row.iter_mut().enumerate() {
                    *o += a * self.v[(j, k)];
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_range(0, self.s.len())
    }

    /// Smallest gap between adjacent singular values, `inf` for a single value.
    pub fn min_gap(&self) -> f64 {
        self.s
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn svd(m: &Matrix) -> Result<SvdFactors> {
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidDimensions {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let (u_cols, s, v_cols) = if m.rows() >= m.cols() {
        tall_svd(m)?
    } else {
        let (u, s, v) = tall_svd(&m.transpose())?;
        (v, s, u)
    };
    let mut u_cols = u_cols;
    let mut v_cols = v_cols;
    for (u, v) in u_cols.iter_mut().zip(v_cols.iter_mut()) {
        let lead = u
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, &x)| {
                if x.abs() > bv {
                    (i, x.abs())
                } else {
                    (bi, bv)
                }
            })
            .0;
        if u[lead] < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(SvdFactors {
        u: from_columns(m.rows(), &u_cols),
        s,
        v: from_columns(m.cols(), &v_cols),
    })
}

/// Sum of singular values.
pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    Ok(svd(m)?.s.iter().sum())
}

type Columns = Vec<Vec<f64>>;

fn tall_svd(m: &Matrix) -> Result<(Columns, Vec<f64>, Columns)> {
    let (rows, n) = m.shape();
    let mut a: Columns = (0..n).map(|j| m.column(j)).collect();
    let mut v: Columns = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    // columns this small are rounding noise; rotating them never settles
    let floor = (NEGLIGIBLE * m.frobenius_norm()).powi(2);
    let mut converged = n == 1;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = dot(&a[i], &a[i]);
                let beta = dot(&a[j], &a[j]);
                let gamma = dot(&a[i], &a[j]);
                if gamma == 0.0 || alpha <= floor || beta <= floor || gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = c * t;
                rotate(&mut a, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let norms: Vec<f64> = a.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal values keep column order
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let mut u_out: Columns = Vec::with_capacity(n);
    let mut s_out = Vec::with_capacity(n);
    let mut v_out = Vec::with_capacity(n);
    for &k in &order {
        let sigma = norms[k];
        let mut candidate = None;
        if sigma > 0.0 {
            let mut w: Vec<f64> = a[k].iter().map(|x| x / sigma).collect();
            let residual = orthogonalize(&mut w, &u_out);
            if residual > 1e-3 {
                w.iter_mut().for_each(|x| *x /= residual);
                candidate = Some(w);
            }
        }
        let u = candidate.unwrap_or_else(|| complete_basis(rows, &u_out));
        u_out.push(u);
        s_out.push(sigma);
        v_out.push(v[k].clone());
    }
    Ok((u_out, s_out, v_out))
}

fn rotate(cols: &mut Columns, i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    let (ci, cj) = (&mut lo[i], &mut hi[0]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Two passes of modified Gram-Schmidt; returns the residual norm.
fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let proj = dot(w, b);
            for (x, y) in w.iter_mut().zip(b) {
                *x -= proj * y;
            }
        }
    }
    dot(w, w).sqrt()
}

/// Unit vector orthogonal to `basis`, chosen deterministically from the
/// standard basis vector with the largest residual.
fn complete_basis(dim: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in 0..dim {
        let mut e = vec![0.0; dim];
        e[k] = 1.0;
        let r = orthogonalize(&mut e, basis);
        if best.as_ref().is_none_or(|(br, _)| r > *br + 1e-12) {
            best = Some((r, e));
        }
    }
    let (r, mut e) = best.expect("dim >= 1");
    e.iter_mut().for_each(|x| *x /= r);
    e
}

fn from_columns(rows: usize, cols: &[Vec<f64>]) -> Matrix {
    Matrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}
