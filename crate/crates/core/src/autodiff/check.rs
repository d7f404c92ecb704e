use super::{Tape, Var};
use crate::error::Result;
use crate::linalg::Matrix;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |numeric|)` over all entries.
    pub max_rel_error: f64,
    /// The graph passed through a near-degenerate singular spectrum.
    pub flagged: bool,
}

/// Checks the gradient of `loss_builder` at `point` against central
/// differences with the given `step`.
///
/// `loss_builder` receives a fresh tape and the parameter node holding the
/// (possibly perturbed) point and must return a 1x1 loss node.
pub fn grad_check<F>(loss_builder: F, point: &Matrix, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    debug_assert!((1e-7..=1e-3).contains(&step), "step outside [1e-7, 1e-3]");
    let eval = |x: &Matrix| -> Result<f64> {
        let mut tape = Tape::new();
        let p = tape.param(x.clone());
        let loss = loss_builder(&mut tape, p)?;
        Ok(tape.scalar(loss))
    };

    let mut tape = Tape::new();
    let p = tape.param(point.clone());
    let loss = loss_builder(&mut tape, p)?;
    let analytic = tape
        .backward(loss)?
        .get_or_zeros(p, point.rows(), point.cols());
    let flagged = !tape.diagnostics().is_empty();

    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for k in 0..point.len() {
        let x0 = point.as_slice()[k];
        probe.as_mut_slice()[k] = x0 + step;
        let up = eval(&probe)?;
        probe.as_mut_slice()[k] = x0 - step;
        let down = eval(&probe)?;
        probe.as_mut_slice()[k] = x0;
        let numeric = (up - down) / (2.0 * step);
        let err = (analytic.as_slice()[k] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(GradCheck {
        max_rel_error: worst,
        flagged,
    })
}
