//! Finite-difference verification of every regularizer and both composite
//! objectives at random points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix};
use crate::regularizers::{
    cr_nlg, cr_nlu, dr_nlg, dr_nlu, objective_nlg, objective_nlu, svdr_nlg, svdr_nlu, RegConfig,
};

pub const THRESHOLD: f64 = 1e-4;
pub const STEP: f64 = 1e-5;
/// Points whose adjacent singular values are closer than this are redrawn
/// for losses that differentiate through the spectrum.
pub const GAP_FILTER: f64 = 1e-2;

const ROWS: usize = 8;
const COLS: usize = 5;
const MAX_DRAWS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckRow {
    pub name: &'static str,
    pub points: usize,
    pub worst: f64,
    pub passed: bool,
}

type Builder = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

struct Case {
    name: &'static str,
    spectral: bool,
    build: Builder,
}

fn min_gap(m: &Matrix) -> Result<f64> {
    let f = svd(m)?;
    Ok(f.min_gap().min(*f.s.last().unwrap_or(&0.0)))
}

fn cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let f_p = Matrix::random_normal(ROWS, COLS, 1.0, rng);
    let p_logits = Matrix::random_normal(ROWS, COLS, 1.0, rng);
    let labels: Vec<usize> = (0..ROWS).map(|_| rng.random_range(0..COLS)).collect();
    let nlu = RegConfig::nlu().with_lambdas(0.5, 0.3, 0.2);
    let nlg = RegConfig::nlg().with_lambdas(0.5, 0.3, 0.2);
    let k2 = RegConfig {
        k_frac: 0.4,
        ..RegConfig::nlg()
    };

    let fp = f_p.clone();
    let pl = p_logits.clone();
    let pl2 = p_logits;
    let fp2 = f_p;
    let (l1, l2) = (labels.clone(), labels);
    let (c_svdr_nlu, c_nlu) = (RegConfig::nlu(), nlu);
    vec![
        Case {
            name: "cr_nlu",
            spectral: false,
            build: Box::new(move |t, x| {
                let c = t.constant(fp.clone());
                cr_nlu(t, c, x)
            }),
        },
        Case {
            name: "dr_nlu",
            spectral: false,
            build: Box::new(dr_nlu),
        },
        Case {
            name: "svdr_nlu",
            spectral: true,
            build: Box::new(move |t, x| svdr_nlu(t, x, &c_svdr_nlu)),
        },
        Case {
            name: "cr_nlg",
            spectral: false,
            build: Box::new(move |t, x| {
                let c = t.constant(pl.clone());
                let p_p = t.softmax_rows(c);
                let p_f = t.softmax_rows(x);
                cr_nlg(t, p_p, p_f)
            }),
        },
        Case {
            name: "dr_nlg",
            spectral: false,
            build: Box::new(move |t, x| {
                let p_f = t.softmax_rows(x);
                dr_nlg(t, p_f, &RegConfig::nlg())
            }),
        },
        Case {
            name: "svdr_nlg",
            spectral: true,
            build: Box::new(move |t, x| svdr_nlg(t, x, &k2)),
        },
        Case {
            name: "objective_nlu",
            spectral: true,
            build: Box::new(move |t, x| {
                let task = t.cross_entropy(x, &l1)?;
                let c = t.constant(fp2.clone());
                Ok(objective_nlu(t, task, c, x, &c_nlu)?.total)
            }),
        },
        Case {
            name: "objective_nlg",
            spectral: true,
            build: Box::new(move |t, x| {
                let task = t.cross_entropy(x, &l2)?;
                let c = t.constant(pl2.clone());
                let p_p = t.softmax_rows(c);
                let p_f = t.softmax_rows(x);
                Ok(objective_nlg(t, task, p_p, p_f, x, &nlg)?.total)
            }),
        },
    ]
}

/// Runs every case at `points` random points drawn from `seed`.
pub fn gradient_suite(points: usize, seed: u64) -> Result<Vec<GradCheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for case in cases(&mut rng) {
        let mut worst = 0.0f64;
        let mut tested = 0;
        let mut draws = 0;
        while tested < points {
            draws += 1;
            if draws > MAX_DRAWS {
                return Err(Error::DomainError {
                    op: "gradient_suite",
                    detail: format!("{}: no non-degenerate point found", case.name),
                });
            }
            let x = Matrix::random_normal(ROWS, COLS, 1.0, &mut rng);
            if case.spectral && min_gap(&x)? < GAP_FILTER {
                continue;
            }
            let r = grad_check(&case.build, &x, STEP)?;
            worst = worst.max(r.max_rel_error);
            tested += 1;
        }
        rows.push(GradCheckRow {
            name: case.name,
            points: tested,
            worst,
            passed: worst < THRESHOLD,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_two_points() {
        let rows = gradient_suite(2, 7).unwrap();
        assert_eq!(rows.len(), 8);
        for r in rows {
            assert!(r.passed, "{r:?}");
        }
    }
}
