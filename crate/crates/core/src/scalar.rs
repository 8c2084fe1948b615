//! Derivative-free minimization of a convex function on `(0, ∞)`.
//!
//! Exponential bracketing from a starting point, then golden-section search on
//! the bracket. Every evaluation is recorded so callers can dump the trace.

use crate::error::{DrFreeError, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy)]
pub struct ScalarOptions {
    /// First point probed by the bracketing phase.
    pub start: f64,
    /// Absolute tolerance on the minimizer.
    pub x_tol: f64,
    /// Bracketing stops shrinking toward zero below this abscissa.
    pub x_floor: f64,
    /// Bracketing gives up growing above this abscissa.
    pub x_ceiling: f64,
    pub max_iter: usize,
}

impl Default for ScalarOptions {
    fn default() -> Self {
        Self {
            start: 1.0,
            x_tol: 1e-6,
            x_floor: 1e-12,
            x_ceiling: 1e15,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScalarMinimum {
    pub x: f64,
    pub fx: f64,
    /// Every `(x, f(x))` pair evaluated, in order.
    pub trace: Vec<(f64, f64)>,
}

/// Minimizes `f` over `(0, ∞)` assuming convexity.
///
/// When `f` keeps decreasing toward zero the returned minimizer is the
/// smallest probed abscissa (`x_floor` scale); callers compare against the
/// `x = 0` limit themselves.
pub fn minimize_positive<F>(mut f: F, opts: &ScalarOptions) -> Result<ScalarMinimum>
where
    F: FnMut(f64) -> f64,
{
    let mut trace = Vec::new();
    let mut eval = |x: f64, trace: &mut Vec<(f64, f64)>| {
        let fx = f(x);
        trace.push((x, fx));
        fx
    };

    let mut mid = opts.start;
    let mut f_mid = eval(mid, &mut trace);
    if !f_mid.is_finite() {
        // The start may sit where the objective overflows; walk right first.
        let mut found = false;
        let mut x = mid;
        while x < opts.x_ceiling {
            x *= 2.0;
            let fx = eval(x, &mut trace);
            if fx.is_finite() {
                mid = x;
                f_mid = fx;
                found = true;
                break;
            }
        }
        if !found {
            return Err(DrFreeError::SolverFailure("objective never finite while bracketing".into()));
        }
    }

    let mut right = 2.0 * mid;
    let mut f_right = eval(right, &mut trace);
    let (lo, hi);
    if f_right < f_mid {
        // Descend to the right until the objective turns up.
        let mut left;
        loop {
            left = mid;
            mid = right;
            f_mid = f_right;
            right = 2.0 * mid;
            if right > opts.x_ceiling {
                return Err(DrFreeError::SolverFailure(format!(
                    "objective still decreasing at {right:e}"
                )));
            }
            f_right = eval(right, &mut trace);
            if !(f_right < f_mid) {
                break;
            }
        }
        lo = left;
        hi = right;
    } else {
        // Descend to the left toward zero.
        let mut left = 0.5 * mid;
        let mut f_left = eval(left, &mut trace);
        while f_left < f_mid {
            right = mid;
            mid = left;
            f_mid = f_left;
            left = 0.5 * mid;
            if left < opts.x_floor {
                let (x, fx) = trace
                    .iter()
                    .copied()
                    .filter(|(_, v)| v.is_finite())
                    .fold((mid, f_mid), |best, p| if p.1 < best.1 { p } else { best });
                return Ok(ScalarMinimum { x, fx, trace });
            }
            f_left = eval(left, &mut trace);
        }
        lo = left;
        hi = right;
    }

    let (x, fx) = golden_section(|x| eval(x, &mut trace), lo, hi, opts.x_tol, opts.max_iter);
    // The bracketing mid-point can beat the golden-section estimate when the
    // function is flat to machine precision.
    let (x, fx) = if f_mid < fx { (mid, f_mid) } else { (x, fx) };
    Ok(ScalarMinimum { x, fx, trace })
}

/// Golden-section search on `[a, b]`; returns `(x_min, f_min)`.
pub fn golden_section<F>(mut f: F, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut iter = 0;
    while (b - a) > tol && (b - a) > 1e-14 * b.abs() && iter < max_iter {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
        iter += 1;
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_minimum() {
        let m = minimize_positive(|x| (x - 3.7).powi(2) + 1.0, &ScalarOptions::default()).unwrap();
        assert!((m.x - 3.7).abs() < 1e-6);
        assert!((m.fx - 1.0).abs() < 1e-10);
    }

    #[test]
    fn finds_small_minimum() {
        let m = minimize_positive(|x| x + 1e-6 / x, &ScalarOptions::default()).unwrap();
        assert!((m.x - 1e-3).abs() < 1e-6, "{}", m.x);
    }

    #[test]
    fn monotone_increasing_runs_to_floor() {
        let m = minimize_positive(|x| 2.0 + x, &ScalarOptions::default()).unwrap();
        assert!(m.x < 1e-11);
        assert!((m.fx - 2.0).abs() < 1e-10);
    }

    #[test]
    fn decreasing_forever_fails() {
        let r = minimize_positive(|x| -x, &ScalarOptions::default());
        assert!(matches!(r, Err(DrFreeError::SolverFailure(_))));
    }

    #[test]
    fn large_minimizer() {
        let m = minimize_positive(|x| (x.ln() - 20.0).powi(2), &ScalarOptions::default()).unwrap();
        assert!((m.x.ln() - 20.0).abs() < 1e-4);
    }
}
