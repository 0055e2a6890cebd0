//! Finite-difference verification of tape gradients.
//!
//! Runs in f64 only: central differences with step `h` need ~11 digits of
//! headroom to certify a 1e-4 relative tolerance.

use super::{Param, Tape, TensorRef};
use crate::error::{CoreError, Result};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over every checked element.
    pub max_rel_err: f64,
    /// Parameter and flat element index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    /// Number of elements compared.
    pub checked: usize,
}

/// Compares tape gradients against central finite differences.
///
/// `build` must construct the forward pass from the parameters' *current*
/// values and return the tape plus a scalar loss; it is invoked once for
/// the analytic pass and twice per parameter element for the numeric pass.
/// Relative error uses the denominator `max(|analytic|, |numeric|, floor)`.
pub fn check_gradients<F>(
    params: &[Param<f64>],
    mut build: F,
    h: f64,
    denom_floor: f64,
) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<(Tape<f64>, TensorRef)>,
{
    for p in params {
        p.borrow_mut().take_grad();
    }
    let (tape, loss) = build()?;
    let base = tape.value(loss)[0];
    if !base.is_finite() {
        return Err(CoreError::NonFinite {
            context: "gradient check loss".into(),
        });
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| {
            p.borrow()
                .grad()
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        #[allow(clippy::needless_range_loop)] // e also indexes the param data being nudged
        for e in 0..p.numel() {
            let orig = p.borrow().data()[e];

            p.borrow_mut().data_mut()[e] = orig + h;
            let (tape, loss) = build()?;
            let lp = tape.value(loss)[0];

            p.borrow_mut().data_mut()[e] = orig - h;
            let (tape, loss) = build()?;
            let lm = tape.value(loss)[0];

            p.borrow_mut().data_mut()[e] = orig;

            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[pi][e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(denom_floor);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((p.name().to_string(), e));
            }
        }
    }
    for p in params {
        p.borrow_mut().take_grad();
    }
    Ok(report)
}
