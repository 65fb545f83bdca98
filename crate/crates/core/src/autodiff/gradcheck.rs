//! Central finite-difference verification of analytic gradients.

use ndarray::Array2;

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (parameter index, row, col) of the worst entry.
    pub worst: (usize, usize, usize),
    pub tolerance: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Relative error with a floor so exactly-zero pairs compare equal and
/// noise below 1e-6 magnitude does not dominate.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

/// Compare `analytic` gradients against central finite differences of
/// `loss` at `params`. The loss is re-evaluated 2x per scalar entry;
/// keep parameter counts small.
pub fn finite_diff_check<F>(
    loss: F,
    params: &[Array2<f64>],
    analytic: &[Array2<f64>],
    step: f64,
    tolerance: f64,
) -> FdReport
where
    F: Fn(&[Array2<f64>]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let mut work: Vec<Array2<f64>> = params.to_vec();
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut worst = (0, 0, 0);

    for pi in 0..params.len() {
        let (rows, cols) = params[pi].dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = work[pi][(r, c)];
                work[pi][(r, c)] = orig + step;
                let up = loss(&work);
                work[pi][(r, c)] = orig - step;
                let down = loss(&work);
                work[pi][(r, c)] = orig;
                let numeric = (up - down) / (2.0 * step);
                let a = analytic[pi][(r, c)];
                let rel = rel_err(a, numeric);
                if rel > max_rel {
                    max_rel = rel;
                    worst = (pi, r, c);
                }
                max_abs = max_abs.max((a - numeric).abs());
            }
        }
    }

    FdReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        worst,
        tolerance,
    }
}
