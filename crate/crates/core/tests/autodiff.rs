use balora::autodiff::{grad_check, Tape, Var};
use balora::linalg::{svd, Matrix};
use balora::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SMOOTH: f64 = 1e-6;
const ROUGH: f64 = 1e-4;

fn check(name: &str, tol: f64, spectral: bool, build: impl Fn(&mut Tape, Var) -> Result<Var>) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    let mut tested = 0;
    while tested < 10 {
        let x = Matrix::random_normal(6, 4, 1.0, &mut rng);
        if spectral && svd(&x).unwrap().min_gap() < 1e-2 {
            continue;
        }
        let r = grad_check(&build, &x, 1e-5).unwrap();
        assert!(r.max_rel_error < tol, "{name}: {r:?}");
        tested += 1;
    }
}

fn weights(rows: usize, cols: usize, seed: u64) -> Matrix {
    Matrix::random_normal(rows, cols, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn smooth_primitives() {
    let w = weights(4, 3, 1);
    let t6 = weights(6, 4, 2);
    let probs = balora::autodiff::softmax_rows_value(&weights(6, 4, 3));
    check("matmul", SMOOTH, false, |t, x| {
        let c = t.constant(w.clone());
        let y = t.matmul(x, c)?;
        let y2 = t.matmul(x, c)?;
        let z = t.add(y, y2)?;
        let z = t.relu(z);
        let sq = t.mse(z, y)?;
        Ok(sq)
    });
    check("sub_scale_mean", SMOOTH, false, |t, x| {
        let c = t.constant(t6.clone());
        let d = t.sub(x, c)?;
        let s = t.scale(d, -2.5);
        let m = t.mse(s, c)?;
        let mean = t.mean(x);
        t.add(m, mean)
    });
    check("bias", SMOOTH, false, |t, x| {
        let b = t.constant(Matrix::from_rows(&[vec![0.1, -0.2, 0.3, 0.4]]).unwrap());
        let y = t.add_row_bias(x, b)?;
        let c = t.constant(t6.clone());
        t.mse(y, c)
    });
    check("softmax", SMOOTH, false, |t, x| {
        let p = t.softmax_rows(x);
        let c = t.constant(t6.clone());
        t.mse(p, c)
    });
    check("log_softmax", SMOOTH, false, |t, x| {
        let p = t.log_softmax_rows(x);
        let c = t.constant(t6.clone());
        t.mse(p, c)
    });
    check("cross_entropy", SMOOTH, false, |t, x| t.cross_entropy(x, &[0, 1, 2, 3, 0, 1]));
    check("kl", SMOOTH, false, |t, x| {
        let q = t.softmax_rows(x);
        let p = t.constant(probs.clone());
        let k = t.kl_rows(p, q)?;
        Ok(t.mean(k))
    });
    check("entropy", SMOOTH, false, |t, x| {
        let q = t.softmax_rows(x);
        let h = t.entropy_rows(q)?;
        Ok(t.sum(h))
    });
    check("normalize", SMOOTH, false, |t, x| {
        let n = t.l2_normalize_rows(x, 1e-12);
        let c = t.constant(t6.clone());
        t.mse(n, c)
    });
    check("covariance", SMOOTH, false, |t, x| {
        let c = t.covariance(x)?;
        t.offdiag_sq_sum(c)
    });
    check("variance_div", SMOOTH, false, |t, x| {
        let s = t.slice_cols(x, 1, 3)?;
        let v = t.variance(s);
        let m = t.sum(x);
        let sq = t.mse(x, x)?;
        let one = t.constant(Matrix::scalar(3.0));
        let denom = t.add(sq, one)?;
        let q = t.div(m, denom)?;
        t.add(v, q)
    });
}

#[test]
fn spectral_primitive() {
    check("svd_values", ROUGH, true, |t, x| {
        let s = t.svd_values(x)?;
        let top = t.slice_cols(s, 0, 2)?;
        let a = t.sum(top);
        let total = t.sum(s);
        let r = t.div(a, total)?;
        let v = t.variance(s);
        t.add(r, v)
    });
}

#[test]
fn backward_is_linear_in_the_loss() {
    let x0 = weights(5, 3, 4);
    let target = weights(5, 3, 5);
    let grad_of = |which: u8| {
        let mut t = Tape::new();
        let x = t.param(x0.clone());
        let c = t.constant(target.clone());
        let a = t.mse(x, c).unwrap();
        let p = t.softmax_rows(x);
        let h = t.entropy_rows(p).unwrap();
        let b = t.sum(h);
        let loss = match which {
            0 => a,
            1 => b,
            _ => t.add(a, b).unwrap(),
        };
        t.backward(loss).unwrap().get(x).unwrap().clone()
    };
    let sum = grad_of(0).add(&grad_of(1)).unwrap();
    assert!(grad_of(2).sub(&sum).unwrap().max_abs() < 1e-12);
}
