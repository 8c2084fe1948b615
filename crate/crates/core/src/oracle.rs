//! Brute-force primal evaluation of the inner maximization on small supports.
//!
//! Maximizes `KL(p || q_x) + E_p[cost]` over `{p : KL(p || p_hat) <= eta}` by
//! enumerating a barycentric grid on the simplex. The objective is convex in
//! `p`, so its maximum over the (convex) feasible set sits on the set's
//! boundary. Each grid point `g` therefore defines a ray `p_hat + t (g - p_hat)`
//! that is followed to the last feasible `t` before the objective is
//! evaluated, which places every candidate on the feasible boundary instead of
//! leaving it up to one grid cell inside. The best grid direction is then
//! polished by a sequence of finer local grids around it.
//!
//! This module does not share any code with the scalar dual.

use serde::{Deserialize, Serialize};

use crate::densities::DiscreteDensity;
use crate::error::{DrFreeError, Result};
use crate::rng::Rng;

pub const MAX_ORACLE_SUPPORT: usize = 4;
pub const MIN_RESOLUTION: usize = 100;
/// Local zoom levels run after the full grid pass.
pub const REFINE_LEVELS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleValue {
    /// Best objective found at the requested resolution.
    pub value: f64,
    /// Improvement contributed by the last zoom level, an estimate of the
    /// remaining discretization error.
    pub grid_error: f64,
}

fn kl_vec(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        if *pi > 0.0 {
            if *qi <= 0.0 {
                return f64::INFINITY;
            }
            s += pi * (pi / qi).ln();
        }
    }
    s
}

fn objective(p: &[f64], q: &[f64], cost: &[f64]) -> f64 {
    kl_vec(p, q) + p.iter().zip(cost).map(|(a, b)| a * b).sum::<f64>()
}

/// Largest `t in [0, 1]` with `KL(hat + t d || hat) <= eta`.
fn frontier_t(hat: &[f64], g: &[f64], eta: f64, buf: &mut [f64]) -> f64 {
    let at = |t: f64, buf: &mut [f64]| {
        for i in 0..hat.len() {
            buf[i] = (hat[i] + t * (g[i] - hat[i])).max(0.0);
        }
        kl_vec(buf, hat)
    };
    if at(1.0, buf) <= eta {
        return 1.0;
    }
    // KL along the ray is convex, zero at t = 0 and increasing.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        if hi - lo <= 1e-15 {
            break;
        }
        // Newton step from the right end, safeguarded by bisection.
        let mut deriv = 0.0;
        let k = at(hi, buf);
        for i in 0..hat.len() {
            let d = g[i] - hat[i];
            if buf[i] > 0.0 {
                deriv += d * (buf[i] / hat[i]).ln();
            } else if d != 0.0 {
                deriv = f64::NAN;
                break;
            }
        }
        let mut next = if deriv.is_finite() && deriv > 0.0 && k.is_finite() {
            hi - (k - eta) / deriv
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let kn = at(next, buf);
        if kn <= eta {
            lo = next;
            if eta - kn < 1e-14 {
                break;
            }
        } else {
            hi = next;
        }
    }
    lo
}

/// Objective at the feasible-boundary point on the ray toward grid point `g`.
fn ray_value(hat: &[f64], q: &[f64], cost: &[f64], eta: f64, g: &[f64], p: &mut [f64], buf: &mut [f64]) -> f64 {
    let n = hat.len();
    let t = frontier_t(hat, g, eta, buf);
    for i in 0..n {
        p[i] = (hat[i] + t * (g[i] - hat[i])).max(0.0);
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    if kl_vec(p, hat) <= eta + 1e-12 {
        objective(p, q, cost)
    } else {
        f64::NEG_INFINITY
    }
}

/// Best objective over the barycentric grid, and the grid point achieving it.
fn grid_max(hat: &[f64], q: &[f64], cost: &[f64], eta: f64, resolution: usize) -> (f64, Vec<f64>) {
    let n = hat.len();
    let mut best = (objective(hat, q, cost), hat.to_vec());
    let mut counts = vec![0usize; n];
    let mut g = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut buf = vec![0.0; n];
    let r = resolution as f64;

    // Enumerate compositions of `resolution` into n non-negative parts.
    fn visit(idx: usize, remaining: usize, counts: &mut [usize], f: &mut dyn FnMut(&[usize])) {
        if idx == counts.len() - 1 {
            counts[idx] = remaining;
            f(counts);
            return;
        }
        for k in 0..=remaining {
            counts[idx] = k;
            visit(idx + 1, remaining - k, counts, f);
        }
    }

    visit(0, resolution, &mut counts, &mut |c: &[usize]| {
        for i in 0..n {
            g[i] = c[i] as f64 / r;
        }
        let f = ray_value(hat, q, cost, eta, &g, &mut p, &mut buf);
        if f > best.0 {
            best = (f, g.clone());
        }
    });
    best
}

/// Zooms a local grid of `(2K+1)^(n-1)` points around `center`, shrinking the
/// spacing by `K/2` per level. Returns the value after every level.
fn refine(
    hat: &[f64],
    q: &[f64],
    cost: &[f64],
    eta: f64,
    mut best: (f64, Vec<f64>),
    mut step: f64,
    levels: usize,
) -> Vec<f64> {
    const K: i64 = 4;
    let n = hat.len();
    let mut p = vec![0.0; n];
    let mut buf = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut history = Vec::with_capacity(levels);
    let side = (2 * K + 1) as usize;
    let total = side.pow((n - 1) as u32);
    for _ in 0..levels {
        let center = best.1.clone();
        for idx in 0..total {
            let mut rem = idx;
            let mut head = 0.0;
            let mut ok = true;
            for i in 0..n - 1 {
                let k = (rem % side) as i64 - K;
                rem /= side;
                g[i] = center[i] + k as f64 * step;
                if g[i] < 0.0 {
                    ok = false;
                    break;
                }
                head += g[i];
            }
            if !ok || head > 1.0 {
                continue;
            }
            g[n - 1] = 1.0 - head;
            let f = ray_value(hat, q, cost, eta, &g, &mut p, &mut buf);
            if f > best.0 {
                best = (f, g.clone());
            }
        }
        history.push(best.0);
        step *= 2.0 / K as f64;
    }
    history
}

/// Brute-force `max KL(p || q_x) + E_p[cost]` subject to `KL(p || hat_p) <= eta`.
///
/// `hat_p` and `q_x` must share the same support (in the same order) and
/// `cost` is indexed by that support.
pub fn oracle_inner_max(
    hat_p: &DiscreteDensity,
    q_x: &DiscreteDensity,
    cost: &[f64],
    eta: f64,
    resolution: usize,
) -> Result<OracleValue> {
    let n = hat_p.len();
    if n > MAX_ORACLE_SUPPORT {
        return Err(DrFreeError::SupportTooLarge { max: MAX_ORACLE_SUPPORT, got: n });
    }
    if resolution < MIN_RESOLUTION {
        return Err(DrFreeError::InvalidArgument(format!(
            "resolution must be at least {MIN_RESOLUTION}, got {resolution}"
        )));
    }
    if q_x.support() != hat_p.support() || cost.len() != n {
        return Err(DrFreeError::InvalidArgument(
            "oracle needs hat_p, q_x and cost on one common support".into(),
        ));
    }
    if !(eta >= 0.0) {
        return Err(DrFreeError::InvalidArgument(format!("radius must be >= 0, got {eta}")));
    }
    let hat = hat_p.probs();
    let q = q_x.probs();
    if hat.iter().zip(q).any(|(h, qq)| *h > 0.0 && *qq <= 0.0) {
        return Err(DrFreeError::AbsoluteContinuityViolation { index: 0, p: 0.0 });
    }
    let coarse = grid_max(hat, q, cost, eta, resolution);
    let history = refine(hat, q, cost, eta, coarse, 1.0 / resolution as f64, REFINE_LEVELS);
    let value = history[REFINE_LEVELS - 1];
    let previous = history[REFINE_LEVELS - 2];
    Ok(OracleValue { value, grid_error: value - previous })
}

/// A random inner problem on a small discrete support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteInstance {
    pub hat_p: DiscreteDensity,
    pub q_x: DiscreteDensity,
    pub cost: Vec<f64>,
    pub eta: f64,
}

fn random_simplex(n: usize, rng: &mut Rng) -> Vec<f64> {
    // Dirichlet(1, ..., 1) via normalized exponentials.
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.uniform()).ln()).collect();
    let s: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let head: f64 = p[..n - 1].iter().sum();
    p[n - 1] = 1.0 - head;
    p
}

impl DiscreteInstance {
    /// Support 2 to 4, costs uniform in `[0, cost_max]`, radius uniform in `[eta_lo, eta_hi]`.
    pub fn random(rng: &mut Rng, cost_max: f64, eta_lo: f64, eta_hi: f64) -> Self {
        let n = 2 + rng.below(3);
        let hat = random_simplex(n, rng);
        let q = random_simplex(n, rng);
        let cost = (0..n).map(|_| cost_max * rng.uniform()).collect();
        let eta = eta_lo + rng.uniform() * (eta_hi - eta_lo);
        Self {
            hat_p: DiscreteDensity::on_indices(hat).expect("random simplex is valid"),
            q_x: DiscreteDensity::on_indices(q).expect("random simplex is valid"),
            cost,
            eta,
        }
    }

    /// Cost as a function on the support points `[i]`.
    pub fn cost_fn(&self) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
        move |x: &[f64]| self.cost[x[0] as usize]
    }
}
