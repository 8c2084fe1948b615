//! Cost of ambiguity: the worst-case free energy over a KL ball.
//!
//! For a fixed state-action pair the inner maximization
//!
//! ```text
//! max_p  KL(p || q_x) + E_p[c]   s.t.  KL(p || p_hat) <= eta
//! ```
//!
//! equals `eta + v`, where `v` is the minimum over `alpha >= 0` of the convex
//! scalar function
//!
//! ```text
//! V(alpha) = alpha * ln E_{p_hat}[ (p_hat e^c / q_x)^(1/alpha) ] + alpha * eta,   alpha > 0
//! V(0)     = M = sup_{x in supp p_hat} ln(p_hat(x) e^c(x) / q_x(x))
//! ```
//!
//! Expectations under a discrete `p_hat` are exact sums over its support. For
//! Gaussian `p_hat` they are Monte-Carlo means over `n_samples` draws taken
//! once per call, so `V` is a deterministic convex function for the duration of
//! a solve. `M` is then the maximum over those draws, a lower estimate of the
//! supremum.

use serde::{Deserialize, Serialize};

use crate::densities::{kl_discrete, kl_gaussian, lse_weighted, Density, DiscreteDensity, Point};
use crate::error::{DrFreeError, Result};
use crate::rng::Rng;
use crate::scalar::{minimize_positive, ScalarOptions};

/// Default Monte-Carlo sample count per state-action evaluation.
pub const DEFAULT_SAMPLES: usize = 50;
/// Default clip on the ambiguity radius.
pub const DEFAULT_ETA_MAX: f64 = 100.0;
/// Exponent arguments are clamped to `[-EXP_CLAMP, EXP_CLAMP]` after the max shift.
pub const EXP_CLAMP: f64 = 700.0;
/// Replacement for probabilities that underflow to exactly zero.
pub const UNDERFLOW_FLOOR: f64 = 1e-10;
/// `M` and the interior minimum closer than this count as a tie (`AtZero`).
pub const BRANCH_TIE_TOL: f64 = 1e-10;

/// State/action dependent ambiguity radius with a clip.
#[derive(Clone)]
pub struct AmbiguitySpec {
    radius_fn: std::sync::Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
    pub eta_max: f64,
}

impl std::fmt::Debug for AmbiguitySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AmbiguitySpec").field("eta_max", &self.eta_max).finish_non_exhaustive()
    }
}

impl AmbiguitySpec {
    pub fn new<F>(radius_fn: F, eta_max: f64) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { radius_fn: std::sync::Arc::new(radius_fn), eta_max }
    }

    pub fn constant(eta: f64) -> Self {
        Self::new(move |_, _| eta, f64::INFINITY)
    }

    /// Clipped radius at `(x, u)`.
    pub fn eta(&self, x: &[f64], u: &[f64]) -> f64 {
        (self.radius_fn)(x, u).min(self.eta_max)
    }

    /// Radius `scale * eta(x, u)`; the clip is applied before scaling.
    pub fn scaled(&self, scale: f64) -> Self {
        let inner = self.clone();
        Self::new(move |x, u| scale * inner.eta(x, u), f64::INFINITY)
    }
}

/// The inner problem at one fixed state-action pair.
pub struct InnerProblem<'a> {
    pub hat_p: Density,
    pub q_x: Density,
    /// Total cost `c̄ = state cost + cost-to-go`, non-negative and bounded.
    pub total_cost: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    pub eta: f64,
    pub n_samples: usize,
}

impl std::fmt::Debug for InnerProblem<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InnerProblem")
            .field("hat_p", &self.hat_p)
            .field("q_x", &self.q_x)
            .field("eta", &self.eta)
            .field("n_samples", &self.n_samples)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    AtZero,
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityCost {
    pub v: f64,
    pub alpha_star: f64,
    pub m_value: f64,
    pub branch: Branch,
}

/// Normalized worst-case likelihood ratio at the evaluation points.
#[derive(Debug, Clone)]
pub struct LikelihoodRatio {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    /// Exact worst-case model `r * p_hat` for discrete `p_hat`.
    pub worst_case: Option<DiscreteDensity>,
}

impl LikelihoodRatio {
    /// Mean of the ratio under `p_hat` (exact for discrete, empirical otherwise).
    pub fn mean(&self, base: &[f64]) -> f64 {
        self.weights.iter().zip(base).map(|(r, w)| r * w).sum()
    }
}

/// Diagnostic record of one dual solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualDump {
    pub eta: f64,
    pub m: f64,
    pub alpha_star: f64,
    pub v: f64,
    pub branch: Branch,
    pub alpha_trace: Vec<[f64; 2]>,
}

/// The sampled (or enumerated) quantities every dual evaluation needs.
///
/// `log_ratio[i] = ln p_hat(x_i) - ln q_x(x_i)` and `cost[i] = c̄(x_i)` at
/// points `x_i` carrying base weights `base[i]` that sum to one.
#[derive(Debug, Clone)]
pub struct DualObjective {
    pub points: Vec<Point>,
    pub base: Vec<f64>,
    pub log_ratio: Vec<f64>,
    pub cost: Vec<f64>,
    pub exact: bool,
    z: Vec<f64>,
    z_max: f64,
}

impl InnerProblem<'_> {
    fn check(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(DrFreeError::InvalidArgument(format!("radius must be finite and >= 0, got {}", self.eta)));
        }
        if self.n_samples == 0 {
            return Err(DrFreeError::InvalidArgument("n_samples must be at least 1".into()));
        }
        if self.hat_p.dim() != self.q_x.dim() {
            return Err(DrFreeError::DimensionMismatch { expected: self.q_x.dim(), got: self.hat_p.dim() });
        }
        Ok(())
    }

    /// Draws (or enumerates) the evaluation points once.
    pub fn prepare(&self, rng: &mut Rng) -> Result<DualObjective> {
        self.check()?;
        let (points, base, exact) = match &self.hat_p {
            Density::Discrete(d) => {
                let (pts, w): (Vec<_>, Vec<_>) = d
                    .support()
                    .iter()
                    .zip(d.probs())
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(s, p)| (s.clone(), *p))
                    .unzip();
                (pts, w, true)
            }
            Density::Gaussian(g) => {
                let n = self.n_samples;
                let pts: Vec<Point> = (0..n).map(|_| g.sample_one(rng)).collect();
                (pts, vec![1.0 / n as f64; n], false)
            }
        };
        let mut log_ratio = Vec::with_capacity(points.len());
        let mut cost = Vec::with_capacity(points.len());
        for (i, x) in points.iter().enumerate() {
            let lr = self.hat_p.log_density(x)? - self.q_x.log_density(x)?;
            if !lr.is_finite() {
                return Err(DrFreeError::NonFiniteRatio { index: i });
            }
            let c = (self.total_cost)(x);
            if !c.is_finite() || c < 0.0 {
                return Err(DrFreeError::InvalidArgument(format!(
                    "total cost must be finite and non-negative, got {c} at sample {i}"
                )));
            }
            log_ratio.push(lr);
            cost.push(c);
        }
        Ok(DualObjective::new(points, base, log_ratio, cost, exact))
    }

    /// `η → 0` limit of `v`: `KL(p_hat || q_x) + E_{p_hat}[c̄]`.
    ///
    /// Gaussian pairs use the closed-form KL; the cost expectation is a
    /// Monte-Carlo mean over the same draws the dual would use. Discrete inputs
    /// are exact.
    pub fn zero_radius_limit(&self, rng: &mut Rng) -> Result<f64> {
        let obj = self.prepare(rng)?;
        match (&self.hat_p, &self.q_x) {
            (Density::Gaussian(p), Density::Gaussian(q)) => Ok(kl_gaussian(p, q)? + obj.expected_cost()),
            (Density::Discrete(p), Density::Discrete(q)) => Ok(kl_discrete(p, q)? + obj.expected_cost()),
            _ => Ok(obj.expected_log_ratio() + obj.expected_cost()),
        }
    }
}

impl DualObjective {
    pub fn new(points: Vec<Point>, base: Vec<f64>, log_ratio: Vec<f64>, cost: Vec<f64>, exact: bool) -> Self {
        let z: Vec<f64> = log_ratio.iter().zip(&cost).map(|(l, c)| l + c).collect();
        let z_max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { points, base, log_ratio, cost, exact, z, z_max }
    }

    /// `M`: the largest `ln(p_hat e^c̄ / q_x)` over the evaluation points.
    pub fn m_value(&self) -> f64 {
        self.z_max
    }

    pub fn expected_cost(&self) -> f64 {
        self.base.iter().zip(&self.cost).map(|(w, c)| w * c).sum()
    }

    pub fn expected_log_ratio(&self) -> f64 {
        self.base.iter().zip(&self.log_ratio).map(|(w, l)| w * l).sum()
    }

    /// Scaled exponents `(z_i - M) / alpha`, clamped from below.
    fn shifted(&self, alpha: f64) -> impl Iterator<Item = f64> + '_ {
        self.z.iter().map(move |z| ((z - self.z_max) / alpha).clamp(-EXP_CLAMP, EXP_CLAMP))
    }

    /// `ln E[exp((z - M)/alpha)]`, always `<= 0`.
    fn log_mean_shifted(&self, alpha: f64) -> f64 {
        let s: f64 = self.shifted(alpha).zip(&self.base).map(|(e, w)| w * e.exp()).sum();
        s.ln()
    }

    /// `V(alpha)` for `alpha > 0`.
    pub fn v_alpha(&self, alpha: f64, eta: f64) -> f64 {
        self.z_max + alpha * self.log_mean_shifted(alpha) + alpha * eta
    }

    /// Minimizes `V` over `alpha >= 0` and compares against the `alpha = 0` branch.
    pub fn minimize(&self, eta: f64) -> Result<(AmbiguityCost, Vec<(f64, f64)>)> {
        let m = self.m_value();
        let opts = ScalarOptions::default();
        let found = minimize_positive(|a| self.v_alpha(a, eta), &opts)?;
        if !found.fx.is_finite() {
            return Err(DrFreeError::SolverFailure(format!("non-finite dual value {}", found.fx)));
        }
        let cost = if m <= found.fx + BRANCH_TIE_TOL {
            AmbiguityCost { v: m, alpha_star: 0.0, m_value: m, branch: Branch::AtZero }
        } else {
            AmbiguityCost { v: found.fx, alpha_star: found.x, m_value: m, branch: Branch::Interior }
        };
        Ok((cost, found.trace))
    }

    /// Normalized ratio `r ∝ exp(z / alpha)` with `E_base[r] = 1`.
    pub fn ratio(&self, alpha: f64) -> Result<Vec<f64>> {
        if !(alpha > 0.0) {
            return Err(DrFreeError::ZeroBranch);
        }
        let log_norm = lse_weighted(&self.shifted(alpha).collect::<Vec<_>>(), &self.base);
        Ok(self.shifted(alpha).map(|e| (e - log_norm).exp()).collect())
    }
}

/// `V(alpha)` evaluated on a fresh draw from `rng`.
pub fn eval_v_alpha(prob: &InnerProblem<'_>, alpha: f64, rng: &mut Rng) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(DrFreeError::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
    }
    Ok(prob.prepare(rng)?.v_alpha(alpha, prob.eta))
}

pub fn compute_m(prob: &InnerProblem<'_>, rng: &mut Rng) -> Result<f64> {
    Ok(prob.prepare(rng)?.m_value())
}

/// `v = min{M, min_{alpha > 0} V(alpha)}` on a single draw reused for every alpha.
pub fn cost_of_ambiguity(prob: &InnerProblem<'_>, rng: &mut Rng) -> Result<AmbiguityCost> {
    Ok(solve_with_trace(prob, rng)?.0)
}

/// As [`cost_of_ambiguity`], also returning the diagnostic dump.
pub fn solve_with_trace(prob: &InnerProblem<'_>, rng: &mut Rng) -> Result<(AmbiguityCost, DualDump)> {
    let obj = prob.prepare(rng)?;
    let (cost, trace) = obj.minimize(prob.eta)?;
    let dump = DualDump {
        eta: prob.eta,
        m: cost.m_value,
        alpha_star: cost.alpha_star,
        v: cost.v,
        branch: cost.branch,
        alpha_trace: trace.into_iter().map(|(a, v)| [a, v]).collect(),
    };
    Ok((cost, dump))
}

/// Worst-case likelihood ratio at a given `alpha > 0`.
pub fn worst_case_ratio(prob: &InnerProblem<'_>, alpha: f64, rng: &mut Rng) -> Result<LikelihoodRatio> {
    let obj = prob.prepare(rng)?;
    worst_case_from(prob, &obj, alpha)
}

/// Worst-case ratio at the optimal `alpha*`; `ZeroBranch` when the optimum is at zero.
pub fn worst_case_at_optimum(prob: &InnerProblem<'_>, rng: &mut Rng) -> Result<(AmbiguityCost, LikelihoodRatio)> {
    let obj = prob.prepare(rng)?;
    let (cost, _) = obj.minimize(prob.eta)?;
    if cost.branch == Branch::AtZero {
        return Err(DrFreeError::ZeroBranch);
    }
    Ok((cost, worst_case_from(prob, &obj, cost.alpha_star)?))
}

fn worst_case_from(prob: &InnerProblem<'_>, obj: &DualObjective, alpha: f64) -> Result<LikelihoodRatio> {
    let weights = obj.ratio(alpha)?;
    let worst_case = match &prob.hat_p {
        Density::Discrete(d) => {
            let mut probs = vec![0.0; d.len()];
            let mut k = 0;
            for (i, p) in d.probs().iter().enumerate() {
                if *p > 0.0 {
                    probs[i] = weights[k] * p;
                    k += 1;
                }
            }
            let total: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= total);
            Some(DiscreteDensity::new(d.support().to_vec(), probs)?)
        }
        Density::Gaussian(_) => None,
    };
    Ok(LikelihoodRatio { points: obj.points.clone(), weights, worst_case })
}

pub fn zero_radius_limit(prob: &InnerProblem<'_>, rng: &mut Rng) -> Result<f64> {
    prob.zero_radius_limit(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::GaussianDensity;

    fn disc(p: Vec<f64>) -> Density {
        DiscreteDensity::on_indices(p).unwrap().into()
    }

    fn problem<'a>(hat: Density, q: Density, cost: &'a (dyn Fn(&[f64]) -> f64 + Sync), eta: f64) -> InnerProblem<'a> {
        InnerProblem { hat_p: hat, q_x: q, total_cost: cost, eta, n_samples: DEFAULT_SAMPLES }
    }

    #[test]
    fn constant_ratio_is_linear() {
        let one = |_: &[f64]| 1.0;
        let u = disc(vec![0.25; 4]);
        let prob = problem(u.clone(), u, &one, 0.5);
        let v = eval_v_alpha(&prob, 2.0, &mut Rng::new(0)).unwrap();
        assert!((v - 2.0).abs() < 1e-12);

        let zero = |_: &[f64]| 0.0;
        let g: Density = GaussianDensity::isotropic(vec![0.0, 0.0], 0.1).unwrap().into();
        let prob = problem(g.clone(), g, &zero, 0.3);
        for alpha in [0.1, 1.0, 7.5] {
            let v = eval_v_alpha(&prob, alpha, &mut Rng::new(3)).unwrap();
            assert!((v - 0.3 * alpha).abs() < 1e-12);
        }
    }

    #[test]
    fn v_alpha_blows_up() {
        let cost = |x: &[f64]| x[0];
        let prob = problem(disc(vec![0.2, 0.5, 0.3]), disc(vec![0.4, 0.4, 0.2]), &cost, 0.1);
        let v = eval_v_alpha(&prob, 1e6, &mut Rng::new(0)).unwrap();
        assert!(v > 1e5);
        assert!(eval_v_alpha(&prob, 0.0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn m_examples() {
        let zero = |_: &[f64]| 0.0;
        let one = |_: &[f64]| 1.0;
        let u = disc(vec![1.0 / 3.0, 1.0 / 3.0, 1.0 - 2.0 / 3.0]);
        assert_eq!(compute_m(&problem(u.clone(), u.clone(), &zero, 0.1), &mut Rng::new(0)).unwrap(), 0.0);
        assert!((compute_m(&problem(u.clone(), u, &one, 0.1), &mut Rng::new(0)).unwrap() - 1.0).abs() < 1e-15);
        let m = compute_m(&problem(disc(vec![0.8, 0.2]), disc(vec![0.5, 0.5]), &zero, 0.1), &mut Rng::new(0)).unwrap();
        assert!((m - (0.8f64 / 0.5).ln()).abs() < 1e-12);
        assert!((m - 0.470004).abs() < 1e-6);
    }

    #[test]
    fn support_violation_is_non_finite_ratio() {
        let zero = |_: &[f64]| 0.0;
        let prob = problem(disc(vec![0.5, 0.5]), disc(vec![1.0, 0.0]), &zero, 0.1);
        assert!(matches!(compute_m(&prob, &mut Rng::new(0)), Err(DrFreeError::NonFiniteRatio { index: 1 })));
    }

    #[test]
    fn cost_of_ambiguity_trivial_cases() {
        let zero = |_: &[f64]| 0.0;
        let one = |_: &[f64]| 1.0;
        let u = disc(vec![0.5, 0.5]);
        let c = cost_of_ambiguity(&problem(u.clone(), u.clone(), &zero, 0.3), &mut Rng::new(0)).unwrap();
        assert_eq!(c.branch, Branch::AtZero);
        assert!(c.v.abs() < 1e-12);
        let c = cost_of_ambiguity(&problem(u.clone(), u, &one, 0.5), &mut Rng::new(0)).unwrap();
        assert_eq!(c.branch, Branch::AtZero);
        assert!((c.v - 1.0).abs() < 1e-12);
        assert_eq!(c.alpha_star, 0.0);
    }

    #[test]
    fn worst_case_constant_ratio_is_trained_model() {
        let two = |_: &[f64]| 2.0;
        let u = disc(vec![0.2, 0.3, 0.5]);
        let lr = worst_case_ratio(&problem(u.clone(), u, &two, 0.2), 0.7, &mut Rng::new(0)).unwrap();
        assert!(lr.weights.iter().all(|w| (w - 1.0).abs() < 1e-12));
        let zero = |_: &[f64]| 0.0;
        let g: Density = GaussianDensity::isotropic(vec![0.0], 1.0).unwrap().into();
        let prob = problem(g, GaussianDensity::isotropic(vec![0.5], 2.0).unwrap().into(), &zero, 0.2);
        assert!(matches!(worst_case_ratio(&prob, 0.0, &mut Rng::new(0)), Err(DrFreeError::ZeroBranch)));
        let lr = worst_case_ratio(&prob, 0.4, &mut Rng::new(0)).unwrap();
        let mean = lr.weights.iter().sum::<f64>() / lr.weights.len() as f64;
        assert!((mean - 1.0).abs() < 1e-6);
        assert!(lr.worst_case.is_none());
    }

    #[test]
    fn worst_case_on_frontier() {
        let cost = |x: &[f64]| [0.3, 1.7, 0.9][x[0] as usize];
        let hat = DiscreteDensity::on_indices(vec![0.5, 0.3, 0.2]).unwrap();
        let prob = problem(hat.clone().into(), disc(vec![0.3, 0.3, 0.4]), &cost, 0.1);
        let (c, lr) = worst_case_at_optimum(&prob, &mut Rng::new(0)).unwrap();
        assert_eq!(c.branch, Branch::Interior);
        assert!((lr.mean(hat.probs()) - 1.0).abs() < 1e-9);
        let kl = kl_discrete(lr.worst_case.as_ref().unwrap(), &hat).unwrap();
        assert!((kl - 0.1).abs() < 3e-2, "kl {kl}");
    }

    #[test]
    fn dump_serializes() {
        let cost = |x: &[f64]| x[0];
        let prob = problem(disc(vec![0.6, 0.4]), disc(vec![0.5, 0.5]), &cost, 0.05);
        let (_, dump) = solve_with_trace(&prob, &mut Rng::new(0)).unwrap();
        let json = serde_json::to_value(&dump).unwrap();
        for key in ["eta", "m", "alpha_star", "v", "branch", "alpha_trace"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert!(!dump.alpha_trace.is_empty());
    }
}
