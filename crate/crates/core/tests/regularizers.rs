use balora::autodiff::{softmax_rows_value, Tape, Var};
use balora::linalg::{svd, Matrix};
use balora::regularizers::*;
use proptest::prelude::*;

fn eval(build: impl FnOnce(&mut Tape) -> balora::Result<Var>) -> f64 {
    evaluate(build).unwrap()
}

fn rows(r: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(r).unwrap()
}

fn mat(r: usize, c: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
}

fn cr(a: &Matrix, b: &Matrix) -> f64 {
    eval(|t| {
        let (x, y) = (t.constant(a.clone()), t.constant(b.clone()));
        cr_nlu(t, x, y)
    })
}

fn dr(a: &Matrix) -> f64 {
    eval(|t| {
        let x = t.constant(a.clone());
        dr_nlu(t, x)
    })
}

fn spec(a: &Matrix, k: usize, alpha: f64) -> f64 {
    eval(|t| {
        let x = t.constant(a.clone());
        spectral_mass_loss(t, x, k, alpha)
    })
}

#[test]
fn closed_forms() {
    // each row normalizes to itself; squared distance 2 per row, one row
    assert!((cr(&rows(&[vec![1.0, 0.0]]), &rows(&[vec![0.0, 1.0]])) - 2.0).abs() < 1e-12);
    // covariance [[.5,-.5],[-.5,.5]]: off-diagonal energy .5 over D = 2
    assert!((dr(&rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])) - 0.25).abs() < 1e-12);
    // 3 / (3 + 2 + 1)
    let d = Matrix::from_diag(&[3.0, 2.0, 1.0]);
    assert!((spec(&d, 1, 0.0) + 0.5).abs() < 1e-12);
    // 4/4 plus 0.1 · population variance of {3, 1}
    assert!((spec(&Matrix::from_diag(&[3.0, 1.0]), 2, 0.1) + 1.1).abs() < 1e-12);
    let kl = eval(|t| {
        let p = t.constant(rows(&[vec![0.5, 0.5]]));
        let q = t.constant(rows(&[vec![0.25, 0.75]]));
        cr_nlg(t, p, q)
    });
    let oracle = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
    assert!((kl - oracle).abs() < 1e-12);
    assert!((kl - 0.143841).abs() < 1e-6);
    let literal = RegConfig {
        entropy_sign: EntropySign::PaperLiteral,
        ..RegConfig::nlg()
    };
    let h = eval(|t| {
        let p = t.constant(Matrix::filled(1, 4, 0.25));
        dr_nlg(t, p, &literal)
    });
    assert!((h - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn zero_weights_leave_the_task_loss() {
    let logits = rows(&[vec![1.0, -2.0, 0.5], vec![0.3, 0.1, 2.0], vec![-1.0, 0.0, 1.0]]);
    let reference = rows(&[vec![0.5, 0.5, 0.1], vec![2.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
    let mut t = Tape::new();
    let x = t.param(logits.clone());
    let r = t.constant(reference.clone());
    let task = t.cross_entropy(x, &[0, 2, 1]).unwrap();
    let o = objective_nlu(&mut t, task, r, x, &RegConfig::nlu().with_lambdas(0.0, 0.0, 0.0)).unwrap();
    assert_eq!(o.total, o.task);
    assert!(o.consistency.is_none() && o.diversity.is_none() && o.spectral.is_none());
    let (pp, pf) = (t.softmax_rows(r), t.softmax_rows(x));
    let o = objective_nlg(&mut t, task, pp, pf, x, &RegConfig::nlg().with_lambdas(0.0, 0.0, 0.0)).unwrap();
    assert_eq!(o.total, task);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn consistency_nlu_properties(a in mat(5, 3), b in mat(5, 3), s in prop::collection::vec(0.1f64..10.0, 5)) {
        let v = cr(&a, &b);
        prop_assert!(v >= 0.0);
        prop_assert!(cr(&a, &a) < 1e-24);
        let scaled = Matrix::from_fn(5, 3, |i, j| a[(i, j)] * s[i]);
        prop_assert!((cr(&scaled, &b) - v).abs() < 1e-10);
    }

    #[test]
    fn diversity_nlu_properties(a in mat(6, 4), shift in prop::collection::vec(-5.0f64..5.0, 4)) {
        let v = dr(&a);
        prop_assert!(v >= 0.0);
        let moved = Matrix::from_fn(6, 4, |i, j| a[(i, j)] + shift[j]);
        prop_assert!((dr(&moved) - v).abs() <= 1e-9 * v.max(1.0));
    }

    #[test]
    fn spectral_nlu_properties(a in mat(6, 4), c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
        prop_assume!(a.frobenius_norm() > 1e-6);
        let cfg = RegConfig::nlu();
        let k = cfg.k_count(4);
        let v = eval(|t| { let x = t.constant(a.clone()); svdr_nlu(t, x, &cfg) });
        prop_assert!((-1.0 - 1e-12..0.0).contains(&v));
        let rank = svd(&a).unwrap().s.iter().filter(|&&s| s > 1e-9).count();
        if rank > k {
            prop_assert!(v > -1.0 + 1e-12);
        }
        let w = eval(|t| { let x = t.constant(a.scale(c)); svdr_nlu(t, x, &cfg) });
        prop_assert!((v - w).abs() < 1e-12);
        let g = eval(|t| {
            let x = t.constant(a.clone());
            svdr_nlg(t, x, &RegConfig { alpha: 0.0, ..RegConfig::nlg() })
        });
        prop_assert!((g - v).abs() < 1e-12);
    }

    #[test]
    fn nlg_properties(a in mat(4, 5), b in mat(4, 5)) {
        let (p, q) = (softmax_rows_value(&a), softmax_rows_value(&b));
        let kl = eval(|t| { let (x, y) = (t.constant(p.clone()), t.constant(q.clone())); cr_nlg(t, x, y) });
        prop_assert!(kl >= -1e-15);
        let literal = RegConfig { entropy_sign: EntropySign::PaperLiteral, ..RegConfig::nlg() };
        let h = eval(|t| { let x = t.constant(p.clone()); dr_nlg(t, x, &literal) });
        prop_assert!(h >= 0.0 && h <= 5f64.ln() + 1e-12);
        let neg = eval(|t| { let x = t.constant(p.clone()); dr_nlg(t, x, &RegConfig::nlg()) });
        prop_assert_eq!(neg, -h);
    }
}

#[test]
fn rank_at_most_k_gives_minus_one() {
    let low = Matrix::from_fn(6, 4, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5));
    assert!((spec(&low, 1, 0.0) + 1.0).abs() < 1e-12);
}
