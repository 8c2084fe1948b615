//! Cost reconstruction from observed state-action pairs.
//!
//! The policy exponent is modelled as `Σ w_i φ_i(x, u) + Σ v_i γ_i(u)` with
//! state-action features `φ_i(x, u) = E_{p_hat(.|x,u)}[φ̃_i(X)]`, and the weights
//! are fitted by minimizing the negative log-likelihood
//!
//! ```text
//! Σ_k [ -s(x_k, u_k) + ln Σ_u q_u(u) exp(s(x_k, u)) ]
//! ```
//!
//! which is convex in `(w, v)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities::{lse_weighted, Point};
use crate::error::{DrFreeError, Result};
use crate::navsim::{StepRecord, Workspace};
use crate::policy::{ActionGrid, ModelFn, Policy};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    /// Bumps per axis.
    pub counts: [usize; 2],
    pub x_bounds: [f64; 2],
    pub y_bounds: [f64; 2],
    /// Monte-Carlo draws from `p_hat` per feature evaluation.
    pub n_samples: usize,
    /// Action features `γ_i`, one row of grid values per feature.
    pub action_features: Vec<Vec<f64>>,
}

impl Default for BasisConfig {
    fn default() -> Self {
        let ws = Workspace::default();
        Self { counts: [4, 4], x_bounds: ws.x_bounds, y_bounds: ws.y_bounds, n_samples: 50, action_features: Vec::new() }
    }
}

/// Isotropic Gaussian bumps at the cell centres of a rectangular lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBasis {
    pub centers: Vec<[f64; 2]>,
    pub width: f64,
    pub n_samples: usize,
    pub action_features: Vec<Vec<f64>>,
}

impl FeatureBasis {
    /// Bump width is the larger of the two lattice spacings.
    pub fn new(cfg: &BasisConfig) -> Result<Self> {
        let [nx, ny] = cfg.counts;
        if nx == 0 || ny == 0 || cfg.n_samples == 0 {
            return Err(DrFreeError::InvalidArgument("basis needs positive counts and samples".into()));
        }
        if !(cfg.x_bounds[0] < cfg.x_bounds[1] && cfg.y_bounds[0] < cfg.y_bounds[1]) {
            return Err(DrFreeError::InvalidArgument("basis bounds must be ordered".into()));
        }
        let hx = (cfg.x_bounds[1] - cfg.x_bounds[0]) / nx as f64;
        let hy = (cfg.y_bounds[1] - cfg.y_bounds[0]) / ny as f64;
        let mut centers = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                centers.push([cfg.x_bounds[0] + (i as f64 + 0.5) * hx, cfg.y_bounds[0] + (j as f64 + 0.5) * hy]);
            }
        }
        if cfg.action_features.iter().any(|r| r.iter().any(|g| !g.is_finite())) {
            return Err(DrFreeError::InvalidArgument("action features must be finite".into()));
        }
        Ok(Self { centers, width: hx.max(hy), n_samples: cfg.n_samples, action_features: cfg.action_features.clone() })
    }

    /// `F`, the number of state features.
    pub fn n_state(&self) -> usize {
        self.centers.len()
    }

    /// `G`, the number of action features.
    pub fn n_action(&self) -> usize {
        self.action_features.len()
    }

    /// Bump values `φ̃_i(x)`.
    pub fn bumps(&self, x: &[f64]) -> Vec<f64> {
        let s = 2.0 * self.width * self.width;
        self.centers.iter().map(|c| (-((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / s).exp()).collect()
    }

    /// `φ_i(x, u)` for every grid action, one row per action. Every action
    /// reuses the same random stream.
    pub fn state_action_features(&self, model: &ModelFn, x: &[f64], grid: &ActionGrid, rng: &Rng) -> Vec<Vec<f64>> {
        grid.actions()
            .iter()
            .map(|u| {
                let d = model(x, u);
                let mut r = rng.clone();
                let mut acc = vec![0.0; self.n_state()];
                for _ in 0..self.n_samples {
                    let y = d.sample_one(&mut r);
                    for (a, b) in acc.iter_mut().zip(self.bumps(&y)) {
                        *a += b;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= self.n_samples as f64);
                acc
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub state: Point,
    /// Index into the action grid.
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstrations {
    pub grid: ActionGrid,
    pub pairs: Vec<Demonstration>,
}

impl Demonstrations {
    pub fn new(grid: ActionGrid, pairs: Vec<Demonstration>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(DrFreeError::EmptyInput);
        }
        if pairs.iter().any(|d| d.action >= grid.len()) {
            return Err(DrFreeError::GridMismatch);
        }
        Ok(Self { grid, pairs })
    }

    /// State-action pairs of logged episode steps; every logged input must be a grid action.
    pub fn from_records(grid: ActionGrid, records: &[StepRecord]) -> Result<Self> {
        let pairs = records
            .iter()
            .map(|r| {
                let action = grid.index_of(&[r.u_x, r.u_y]).ok_or(DrFreeError::GridMismatch)?;
                Ok(Demonstration { state: vec![r.x, r.y], action })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, pairs)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

impl Weights {
    pub fn zeros(f: usize, g: usize) -> Self {
        Self { w: vec![0.0; f], v: vec![0.0; g] }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.w.iter().chain(&self.v).copied().collect()
    }

    pub fn from_flat(flat: &[f64], f: usize) -> Self {
        Self { w: flat[..f].to_vec(), v: flat[f..].to_vec() }
    }

    pub fn inf_norm(&self) -> f64 {
        self.w.iter().chain(&self.v).fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Features of every demonstration, evaluated once.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    /// `phi[k][u][i]`.
    pub phi: Vec<Vec<Vec<f64>>>,
    /// `gamma[i][u]`.
    pub gamma: Vec<Vec<f64>>,
    pub chosen: Vec<usize>,
    pub prior: Vec<f64>,
    pub grid: ActionGrid,
}

impl FeatureTable {
    /// Demonstration `k` draws its feature samples from `rng.split(k)`.
    pub fn build(demos: &Demonstrations, basis: &FeatureBasis, model: &ModelFn, q_u: &Policy, rng: &Rng) -> Result<Self> {
        let phi = demos
            .pairs
            .par_iter()
            .enumerate()
            .map(|(k, d)| basis.state_action_features(model, &d.state, &demos.grid, &rng.split(k as u64)))
            .collect();
        Self::from_parts(phi, basis.action_features.clone(), demos.pairs.iter().map(|d| d.action).collect(), q_u, &demos.grid)
    }

    pub fn from_parts(
        phi: Vec<Vec<Vec<f64>>>,
        gamma: Vec<Vec<f64>>,
        chosen: Vec<usize>,
        q_u: &Policy,
        grid: &ActionGrid,
    ) -> Result<Self> {
        if q_u.grid() != grid {
            return Err(DrFreeError::GridMismatch);
        }
        if phi.is_empty() || phi.len() != chosen.len() {
            return Err(DrFreeError::EmptyInput);
        }
        let n = grid.len();
        let f = phi[0].first().map_or(0, Vec::len);
        if phi.iter().any(|rows| rows.len() != n || rows.iter().any(|r| r.len() != f))
            || gamma.iter().any(|g| g.len() != n)
            || chosen.iter().any(|&c| c >= n)
        {
            return Err(DrFreeError::GridMismatch);
        }
        if phi.iter().flatten().flatten().any(|x| !x.is_finite()) {
            return Err(DrFreeError::InvalidArgument("features must be finite".into()));
        }
        Ok(Self { phi, gamma, chosen, prior: q_u.probs().to_vec(), grid: grid.clone() })
    }

    pub fn n_state(&self) -> usize {
        self.phi[0][0].len()
    }

    pub fn n_action(&self) -> usize {
        self.gamma.len()
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    fn check(&self, weights: &Weights) -> Result<()> {
        if weights.w.len() != self.n_state() || weights.v.len() != self.n_action() {
            return Err(DrFreeError::DimensionMismatch {
                expected: self.n_state() + self.n_action(),
                got: weights.w.len() + weights.v.len(),
            });
        }
        Ok(())
    }

    /// Exponents `s(x_k, u)` for every grid action.
    fn scores(&self, weights: &Weights, k: usize) -> Vec<f64> {
        self.phi[k]
            .iter()
            .enumerate()
            .map(|(u, row)| {
                let a: f64 = row.iter().zip(&weights.w).map(|(p, w)| p * w).sum();
                let b: f64 = self.gamma.iter().zip(&weights.v).map(|(g, v)| g[u] * v).sum();
                a + b
            })
            .collect()
    }

    /// Fitted policy `π_w(. | x_k)`.
    pub fn policy(&self, weights: &Weights, k: usize) -> Result<Policy> {
        self.check(weights)?;
        let s = self.scores(weights, k);
        let z = lse_weighted(&s, &self.prior);
        let probs: Vec<f64> = s.iter().zip(&self.prior).map(|(s, q)| if *q > 0.0 { q * (s - z).exp() } else { 0.0 }).collect();
        let total: f64 = probs.iter().sum();
        Policy::new(self.grid.clone(), probs.iter().map(|p| p / total).collect())
    }

    fn term(&self, weights: &Weights, k: usize) -> (f64, Vec<f64>) {
        let s = self.scores(weights, k);
        let z = lse_weighted(&s, &self.prior);
        let c = self.chosen[k];
        let mut grad = vec![0.0; self.n_state() + self.n_action()];
        for (u, (su, q)) in s.iter().zip(&self.prior).enumerate() {
            if *q <= 0.0 {
                continue;
            }
            let p = q * (su - z).exp();
            for (i, g) in self.phi[k][u].iter().enumerate() {
                grad[i] += p * g;
            }
            for (j, g) in self.gamma.iter().enumerate() {
                grad[self.n_state() + j] += p * g[u];
            }
        }
        for (i, g) in self.phi[k][c].iter().enumerate() {
            grad[i] -= g;
        }
        for (j, g) in self.gamma.iter().enumerate() {
            grad[self.n_state() + j] -= g[c];
        }
        (z - s[c], grad)
    }

    /// Per-demonstration terms in parallel, reduced in demonstration order.
    fn value_and_gradient(&self, weights: &Weights) -> Result<(f64, Vec<f64>)> {
        self.check(weights)?;
        let terms: Vec<(f64, Vec<f64>)> = (0..self.len()).into_par_iter().map(|k| self.term(weights, k)).collect();
        let mut value = 0.0;
        let mut grad = vec![0.0; self.n_state() + self.n_action()];
        for (v, g) in terms {
            value += v;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok((value, grad))
    }
}

/// Negative log-likelihood with the constant `ln q_u(u_k)` terms dropped.
pub fn nll(weights: &Weights, table: &FeatureTable) -> Result<f64> {
    Ok(table.value_and_gradient(weights)?.0)
}

pub fn nll_gradient(weights: &Weights, table: &FeatureTable) -> Result<Weights> {
    let g = table.value_and_gradient(weights)?.1;
    Ok(Weights::from_flat(&g, table.n_state()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Stop once the gradient ∞-norm is at most this.
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { max_iterations: 2000, tolerance: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub weights: Weights,
    pub nll: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Iteration cap reached with the gradient above ten times the tolerance.
    pub non_convergence: bool,
    /// Objective after every accepted step, starting from the initial weights.
    pub history: Vec<f64>,
}

/// Gradient descent from zero with step `1 / (1 + k)`. A step that would raise
/// the objective is rejected and the next, shorter one is tried from the same
/// point.
pub fn fit_cost(table: &FeatureTable, cfg: &FitConfig) -> Result<FitResult> {
    if !(cfg.tolerance > 0.0) {
        return Err(DrFreeError::InvalidArgument("tolerance must be positive".into()));
    }
    let f = table.n_state();
    let mut x = vec![0.0; f + table.n_action()];
    let (mut value, mut grad) = table.value_and_gradient(&Weights::from_flat(&x, f))?;
    let mut history = vec![value];
    let norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut k = 0;
    while k < cfg.max_iterations && norm(&grad) > cfg.tolerance {
        let step = 1.0 / (1.0 + k as f64);
        let trial: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
        let (tv, tg) = table.value_and_gradient(&Weights::from_flat(&trial, f))?;
        if tv <= value {
            x = trial;
            value = tv;
            grad = tg;
            history.push(value);
        }
        k += 1;
    }
    let gradient_norm = norm(&grad);
    let converged = gradient_norm <= cfg.tolerance;
    let non_convergence = !converged && gradient_norm > 10.0 * cfg.tolerance;
    if non_convergence {
        log::warn!("belief fit stopped after {k} iterations with gradient norm {gradient_norm:.3e}");
    }
    Ok(FitResult { weights: Weights::from_flat(&x, f), nll: value, gradient_norm, iterations: k, converged, non_convergence, history })
}

/// `-Σ w_i φ̃_i(x)`.
pub fn reconstructed_cost(weights: &Weights, basis: &FeatureBasis, x: &[f64]) -> f64 {
    -basis.bumps(x).iter().zip(&weights.w).map(|(p, w)| p * w).sum::<f64>()
}

/// Mean `KL(π_a || π_b)` over the demonstration states.
pub fn mean_policy_kl(a: &Weights, b: &Weights, table: &FeatureTable) -> Result<f64> {
    let kls = (0..table.len())
        .into_par_iter()
        .map(|k| crate::policy::policy_kl(&table.policy(a, k)?, &table.policy(b, k)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(kls.iter().sum::<f64>() / kls.len() as f64)
}

/// Row-major `(x, y)` lattice with `x` fastest.
pub fn lattice_points(x_bounds: [f64; 2], y_bounds: [f64; 2], nx: usize, ny: usize) -> Vec<[f64; 2]> {
    let at = |b: [f64; 2], i: usize, n: usize| if n > 1 { b[0] + (b[1] - b[0]) * i as f64 / (n - 1) as f64 } else { 0.5 * (b[0] + b[1]) };
    (0..ny).flat_map(|j| (0..nx).map(move |i| [at(x_bounds, i, nx), at(y_bounds, j, ny)])).collect()
}

/// Writes `x,y,value` rows of the reconstructed cost.
pub fn write_cost_csv<W: Write>(weights: &Weights, basis: &FeatureBasis, points: &[[f64; 2]], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "value"])?;
    for p in points {
        w.serialize((p[0], p[1], reconstructed_cost(weights, basis, p)))?;
    }
    w.flush()
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}
