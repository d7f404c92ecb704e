use super::{Diagnostic, Op, Tape, Var, DISTRIBUTION_TOL, PROB_FLOOR, SPECTRAL_GAP_FLAG};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{self, center_columns, row_norms, Matrix};

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0)
}

fn in_clamp_range(p: f64) -> bool {
    p > PROB_FLOOR && p <= 1.0
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_distribution(op: &'static str, p: &Matrix) -> Result<()> {
    for i in 0..p.rows() {
        let row = p.row(i);
        if let Some(&bad) = row.iter().find(|&&x| x < -PROB_FLOOR || !x.is_finite()) {
            return Err(Error::DomainError {
                op,
                detail: format!("log of {bad} in row {i}"),
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOL {
            return Err(Error::NotDistribution { row: i, sum });
        }
    }
    Ok(())
}

fn softmax_row(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        z += *d;
    }
    dst.iter_mut().for_each(|d| *d /= z);
}

fn log_softmax_row(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + src.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = s - lse;
    }
}

pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        softmax_row(x.row(i), out.row_mut(i));
    }
    out
}

impl Tape {
    fn unary(&mut self, op: Op, input: Var, value: Matrix) -> Var {
        let needs = self.needs(input);
        self.push(op, value, needs)
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, value: Matrix) -> Var {
        let needs = self.needs(a) || self.needs(b);
        self.push(op, value, needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(Op::Matmul(a, b), a, b, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.binary(Op::Add(a, b), a, b, value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.binary(Op::Sub(a, b), a, b, value))
    }

    /// `x + 1·bias` with `bias` a `1 x cols` row.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err(
                "add_row_bias",
                format!("{:?} + {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for (o, &b) in value.row_mut(i).iter_mut().zip(bv.as_slice()) {
                *o += b;
            }
        }
        Ok(self.binary(Op::AddRowBias(x, bias), x, bias, value))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).scale(c);
        self.unary(Op::Scale(x, c), x, value)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.unary(Op::Relu(x), x, value)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let value = softmax_rows(self.value(x));
        self.unary(Op::SoftmaxRows(x), x, value)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut value = Matrix::zeros(xv.rows(), xv.cols());
        for i in 0..xv.rows() {
            log_softmax_row(xv.row(i), value.row_mut(i));
        }
        self.unary(Op::LogSoftmaxRows(x), x, value)
    }

    /// Mean negative log-likelihood of integer `labels` under row-softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if labels.len() != lv.rows() {
            return Err(shape_err(
                "cross_entropy",
                format!("{} labels for {} rows", labels.len(), lv.rows()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= lv.cols()) {
            return Err(shape_err(
                "cross_entropy",
                format!("label {bad} out of range for {} classes", lv.cols()),
            ));
        }
        let mut logp = vec![0.0; lv.cols()];
        let mut total = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            log_softmax_row(lv.row(i), &mut logp);
            total -= logp[l];
        }
        let probs = softmax_rows(lv);
        let value = Matrix::scalar(total / labels.len() as f64);
        Ok(self.unary(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            logits,
            value,
        ))
    }

    /// Mean over all entries of `(a - b)²`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mse", av, bv)?;
        let n = av.len() as f64;
        let s: f64 = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.binary(Op::Mse(a, b), a, b, Matrix::scalar(s / n)))
    }

    /// Per-row `KL(p ‖ q)` as a `rows x 1` column.
    pub fn kl_rows(&mut self, p: Var, q: Var) -> Result<Var> {
        let (pv, qv) = (self.value(p), self.value(q));
        same_shape("kl_rows", pv, qv)?;
        check_distribution("kl_rows", pv)?;
        check_distribution("kl_rows", qv)?;
        let value = Matrix::from_fn(pv.rows(), 1, |i, _| {
            pv.row(i)
                .iter()
                .zip(qv.row(i))
                .map(|(&pi, &qi)| pi * (clamp_prob(pi).ln() - clamp_prob(qi).ln()))
                .sum()
        });
        Ok(self.binary(Op::KlRows(p, q), p, q, value))
    }

    /// Per-row Shannon entropy as a `rows x 1` column.
    pub fn entropy_rows(&mut self, p: Var) -> Result<Var> {
        let pv = self.value(p);
        check_distribution("entropy_rows", pv)?;
        let value = Matrix::from_fn(pv.rows(), 1, |i, _| {
            -pv.row(i).iter().map(|&pi| pi * clamp_prob(pi).ln()).sum::<f64>()
        });
        Ok(self.unary(Op::EntropyRows(p), p, value))
    }

    pub fn l2_normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let norms = row_norms(xv);
        let value = linalg::l2_normalize_rows(xv, eps);
        self.unary(Op::L2NormalizeRows { input: x, norms, eps }, x, value)
    }

    pub fn covariance(&mut self, x: Var) -> Result<Var> {
        let value = linalg::covariance(self.value(x))?;
        Ok(self.unary(Op::Covariance(x), x, value))
    }

    /// `Σ_{i≠j} c_ij²` of a square matrix.
    pub fn offdiag_sq_sum(&mut self, c: Var) -> Result<Var> {
        let cv = self.value(c);
        if cv.rows() != cv.cols() {
            return Err(shape_err("offdiag_sq_sum", format!("{:?} is not square", cv.shape())));
        }
        let mut s = 0.0;
        for i in 0..cv.rows() {
            for j in 0..cv.cols() {
                if i != j {
                    s += cv[(i, j)] * cv[(i, j)];
                }
            }
        }
        Ok(self.unary(Op::OffdiagSqSum(c), c, Matrix::scalar(s)))
    }

    /// Singular values of `m`, descending, as a `1 x min(rows, cols)` row.
    pub fn svd_values(&mut self, m: Var) -> Result<Var> {
        let factors = linalg::svd(self.value(m))?;
        let value = Matrix::from_vec(1, factors.s.len(), factors.s.clone())?;
        let gap = factors.min_gap();
        let id = self.len();
        if gap < SPECTRAL_GAP_FLAG {
            self.diagnostics.push(Diagnostic::NearDegenerateSpectrum { node: id, min_gap: gap });
        }
        Ok(self.unary(
            Op::SvdValues {
                input: m,
                factors: Box::new(factors),
            },
            m,
            value,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        self.unary(Op::Sum(x), x, value)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Matrix::scalar(xv.sum() / xv.len() as f64);
        self.unary(Op::Mean(x), x, value)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start >= end || end > xv.cols() {
            return Err(shape_err(
                "slice_cols",
                format!("{start}..{end} of {} columns", xv.cols()),
            ));
        }
        let value = xv.slice_cols(start, end);
        Ok(self.unary(Op::SliceCols(x, start), x, value))
    }

    /// Quotient of two 1x1 nodes.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != (1, 1) || bv.shape() != (1, 1) {
            return Err(shape_err("div", format!("{:?} / {:?}", av.shape(), bv.shape())));
        }
        let d = bv.item();
        if d == 0.0 {
            return Err(Error::DomainError {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let value = Matrix::scalar(av.item() / d);
        Ok(self.binary(Op::Div(a, b), a, b, value))
    }

    /// Population variance over all entries.
    pub fn variance(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.len() as f64;
        let mu = xv.sum() / n;
        let v = xv.as_slice().iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
        self.unary(Op::Variance(x), x, Matrix::scalar(v))
    }

    /// Pushes the upstream gradient `g` of node `id` into its inputs.
    pub(crate) fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[id];
        let mut acc = |v: Var, delta: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.matmul_t(self.value(*b)));
                }
                if self.needs(*b) {
                    acc(*b, self.value(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::AddRowBias(x, b) => {
                acc(*x, g.clone());
                if self.needs(*b) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &v) in gb.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(*b, gb);
                }
            }
            Op::Scale(x, c) => acc(*x, g.scale(*c)),
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = g
                    .as_slice()
                    .iter()
                    .zip(xv.as_slice())
                    .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                acc(*x, Matrix::from_raw(g.rows(), g.cols(), data));
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut out = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let inner = linalg::dot(yr, gr);
                    for (o, (&yi, &gi)) in out.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yi * (gi - inner);
                    }
                }
                acc(*x, out);
            }
            Op::LogSoftmaxRows(x) => {
                let y = &node.value;
                let mut out = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let gsum: f64 = g.row(i).iter().sum();
                    for (o, (&yi, &gi)) in out.row_mut(i).iter_mut().zip(y.row(i).iter().zip(g.row(i))) {
                        *o = gi - yi.exp() * gsum;
                    }
                }
                acc(*x, out);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = g.item() / labels.len() as f64;
                let mut out = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    out[(i, l)] -= 1.0;
                }
                acc(*logits, out.scale(c));
            }
            Op::Mse(a, b) => {
                let diff = self.value(*a).sub(self.value(*b)).expect("shapes checked");
                let ga = diff.scale(2.0 * g.item() / diff.len() as f64);
                if self.needs(*b) {
                    acc(*b, ga.scale(-1.0));
                }
                acc(*a, ga);
            }
            Op::KlRows(p, q) => {
                let (pv, qv) = (self.value(*p), self.value(*q));
                if self.needs(*p) {
                    let gp = Matrix::from_fn(pv.rows(), pv.cols(), |i, j| {
                        let (pi, qi) = (pv[(i, j)], qv[(i, j)]);
                        let d = if in_clamp_range(pi) { 1.0 } else { 0.0 };
                        g[(i, 0)] * (clamp_prob(pi).ln() - clamp_prob(qi).ln() + d)
                    });
                    acc(*p, gp);
                }
                if self.needs(*q) {
                    let gq = Matrix::from_fn(qv.rows(), qv.cols(), |i, j| {
                        let qi = qv[(i, j)];
                        if in_clamp_range(qi) {
                            -g[(i, 0)] * pv[(i, j)] / qi
                        } else {
                            0.0
                        }
                    });
                    acc(*q, gq);
                }
            }
            Op::EntropyRows(p) => {
                let pv = self.value(*p);
                let gp = Matrix::from_fn(pv.rows(), pv.cols(), |i, j| {
                    let pi = pv[(i, j)];
                    let d = if in_clamp_range(pi) { 1.0 } else { 0.0 };
                    -g[(i, 0)] * (clamp_prob(pi).ln() + d)
                });
                acc(*p, gp);
            }
            Op::L2NormalizeRows { input, norms, eps } => {
                let y = &node.value;
                let mut out = g.clone();
                for (i, &n) in norms.iter().enumerate() {
                    if n < *eps {
                        continue;
                    }
                    let inner = linalg::dot(y.row(i), g.row(i));
                    for (o, &yi) in out.row_mut(i).iter_mut().zip(y.row(i)) {
                        *o = (*o - yi * inner) / n;
                    }
                }
                acc(*input, out);
            }
            Op::Covariance(x) => {
                let xv = self.value(*x);
                let centered = center_columns(xv);
                let sym = g.add(&g.transpose()).expect("square");
                // centered columns sum to zero, so the centering projection is a no-op here
                let out = centered.matmul_unchecked(&sym).scale(1.0 / (xv.rows() - 1) as f64);
                acc(*x, out);
            }
            Op::OffdiagSqSum(c) => {
                let cv = self.value(*c);
                let s = 2.0 * g.item();
                let out = Matrix::from_fn(cv.rows(), cv.cols(), |i, j| if i == j { 0.0 } else { s * cv[(i, j)] });
                acc(*c, out);
            }
            Op::SvdValues { input, factors } => {
                let weighted = crate::linalg::SvdFactors {
                    u: factors.u.clone(),
                    s: g.as_slice().to_vec(),
                    v: factors.v.clone(),
                };
                acc(*input, weighted.reconstruct());
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                acc(*x, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(x) => {
                let (r, c) = self.value(*x).shape();
                acc(*x, Matrix::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.value(*x).shape();
                let mut out = Matrix::zeros(r, c);
                for i in 0..r {
                    for (j, &v) in g.row(i).iter().enumerate() {
                        out[(i, start + j)] = v;
                    }
                }
                acc(*x, out);
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a).item(), self.value(*b).item());
                acc(*a, Matrix::scalar(g.item() / bv));
                acc(*b, Matrix::scalar(-g.item() * av / (bv * bv)));
            }
            Op::Variance(x) => {
                let xv = self.value(*x);
                let n = xv.len() as f64;
                let mu = xv.sum() / n;
                acc(*x, xv.map(|v| 2.0 * g.item() * (v - mu) / n));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(m(&[vec![0.0, 0.0]]));
        let y = t.softmax_rows(x);
        assert_eq!(t.value(y).row(0), &[0.5, 0.5]);
    }

    #[test]
    fn kl_of_identical_rows_is_zero() {
        let mut t = Tape::new();
        let p = t.constant(m(&[vec![0.2, 0.3, 0.5], vec![1.0, 0.0, 0.0]]));
        let k = t.kl_rows(p, p).unwrap();
        assert_eq!(t.value(k).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn svd_values_of_diagonal() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_diag(&[3.0, 2.0, 1.0]));
        let s = t.svd_values(x).unwrap();
        assert_eq!(t.value(s).as_slice(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_fn(2, 3, |i, j| (i + j) as f64));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn top_singular_value_gradient_of_diagonal() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_diag(&[3.0, 2.0, 1.0]));
        let s = t.svd_values(x).unwrap();
        let top = t.slice_cols(s, 0, 1).unwrap();
        let l = t.sum(top);
        let g = t.backward(l).unwrap();
        let mut e1 = Matrix::zeros(3, 3);
        e1[(0, 0)] = 1.0;
        assert_eq!(g.get(x).unwrap(), &e1);
    }

    #[test]
    fn backward_needs_scalar() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(Error::NotScalarLoss { rows: 2, cols: 2 })));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let w = t.param(Matrix::filled(2, 2, 1.0));
        let c = t.constant(Matrix::filled(2, 2, 2.0));
        let y = t.matmul(c, w).unwrap();
        let l = t.sum(y);
        let g = t.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(w).is_some());
    }

    #[test]
    fn shape_and_domain_errors() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(2, 3));
        assert!(matches!(t.matmul(a, b), Err(Error::ShapeMismatch { .. })));
        let bad = t.constant(m(&[vec![0.7, 0.7]]));
        assert!(matches!(t.entropy_rows(bad), Err(Error::NotDistribution { .. })));
        let neg = t.constant(m(&[vec![1.5, -0.5]]));
        assert!(matches!(t.entropy_rows(neg), Err(Error::DomainError { .. })));
        assert!(matches!(t.cross_entropy(a, &[0, 3]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn degenerate_spectrum_is_flagged() {
        let mut t = Tape::new();
        let x = t.param(Matrix::identity(3));
        t.svd_values(x).unwrap();
        assert_eq!(t.diagnostics().len(), 1);
    }

    #[test]
    fn cross_entropy_matches_log_softmax() {
        let mut t = Tape::new();
        let x = t.constant(m(&[vec![1.0, 2.0, 0.5], vec![-1.0, 0.0, 3.0]]));
        let ce = t.cross_entropy(x, &[1, 2]).unwrap();
        let ls = t.log_softmax_rows(x);
        let expected = -(t.value(ls)[(0, 1)] + t.value(ls)[(1, 2)]) / 2.0;
        assert!((t.scalar(ce) - expected).abs() < 1e-15);
    }
}
