use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Default row-norm guard for [`l2_normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

/// Column means as a `1 x cols` matrix.
pub fn column_means(f: &Matrix) -> Matrix {
    let mut mean = Matrix::zeros(1, f.cols());
    for i in 0..f.rows() {
        for (m, &x) in mean.as_mut_slice().iter_mut().zip(f.row(i)) {
            *m += x;
        }
    }
    mean.scale(1.0 / f.rows() as f64)
}

/// Sample covariance of the rows of `f` (`cols x cols`, unbiased `1/(M-1)`).
pub fn covariance(f: &Matrix) -> Result<Matrix> {
    let m = f.rows();
    if m < 2 {
        return Err(Error::TooFewSamples(m));
    }
    let centered = center_columns(f);
    Ok(scaled_gram(&centered, 1.0 / (m - 1) as f64))
}

pub(crate) fn center_columns(f: &Matrix) -> Matrix {
    let mean = column_means(f);
    let mut c = f.clone();
    for i in 0..c.rows() {
        for (x, &mu) in c.row_mut(i).iter_mut().zip(mean.as_slice()) {
            *x -= mu;
        }
    }
    c
}

/// `c · XᵀX`, filled from the upper triangle so the result is exactly symmetric.
fn scaled_gram(x: &Matrix, c: f64) -> Matrix {
    let d = x.cols();
    let mut g = Matrix::zeros(d, d);
    for r in 0..x.rows() {
        let row = x.row(r);
        for i in 0..d {
            let xi = row[i];
            for j in i..d {
                g[(i, j)] += xi * row[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = g[(i, j)] * c;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Scales every row to unit L2 norm; rows with norm below `eps` pass through.
pub fn l2_normalize_rows(f: &Matrix, eps: f64) -> Matrix {
    let mut out = f.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm >= eps {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    out
}

pub(crate) fn row_norms(f: &Matrix) -> Vec<f64> {
    (0..f.rows())
        .map(|i| f.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_of_identical_rows_is_zero() {
        let f = Matrix::from_rows(&vec![vec![1.0, 2.0, 3.0]; 4]).unwrap();
        assert_eq!(covariance(&f).unwrap(), Matrix::zeros(3, 3));
    }

    #[test]
    fn covariance_of_two_basis_rows() {
        let f = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let expected = Matrix::from_rows(&[vec![0.5, -0.5], vec![-0.5, 0.5]]).unwrap();
        assert_eq!(covariance(&f).unwrap(), expected);
    }

    #[test]
    fn covariance_needs_two_rows() {
        let f = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(covariance(&f), Err(Error::TooFewSamples(1))));
    }

    #[test]
    fn normalize_rows() {
        let f = Matrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let n = l2_normalize_rows(&f, NORM_EPS);
        assert_eq!(n.row(0), &[0.6, 0.8]);
        assert_eq!(n.row(1), &[0.0, 0.0]);
        assert_eq!(n.row(2), &[1.0, 0.0]);
    }
}
