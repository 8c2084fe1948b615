//! Soft-max policies over a discrete action grid.
//!
//! The robust policy weights every grid action by
//! `q_u(u) exp(-eta(x, u) - v(x, u) - c_u(u))`, where `v` is the cost of
//! ambiguity of the trained model at `(x, u)`. The ambiguity-unaware baseline
//! replaces `eta + v` with `KL(p_hat || q_x) + E_{p_hat}[c̄]`, which is the
//! zero-radius limit of the same quantity.

use std::io::Write;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{cost_of_ambiguity, AmbiguityCost, AmbiguitySpec, InnerProblem, DEFAULT_SAMPLES, UNDERFLOW_FLOOR};
use crate::densities::{inverse_cdf, kl_discrete, lse_weighted, Density, DiscreteDensity, Point};
use crate::error::{DrFreeError, Result};
use crate::rng::Rng;

/// Tolerance on `Σ probs = 1` for a policy.
pub const POLICY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    actions: Vec<Point>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
}

impl Default for ActionGrid {
    /// 5×5 over `[-0.5, 0.5]²`.
    fn default() -> Self {
        Self::uniform(vec![-0.5, -0.5], vec![0.5, 0.5], vec![5, 5]).expect("valid default grid")
    }
}

impl ActionGrid {
    /// Tensor grid with `counts[d]` equispaced values on `[lo[d], hi[d]]`.
    ///
    /// Actions are ordered lexicographically with the last axis varying fastest.
    pub fn uniform(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let d = lo.len();
        if d == 0 || hi.len() != d || counts.len() != d {
            return Err(DrFreeError::InvalidArgument("grid bounds and counts must share one non-zero dimension".into()));
        }
        if counts.contains(&0) {
            return Err(DrFreeError::EmptyInput);
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(DrFreeError::InvalidArgument("grid bounds must be finite and ordered".into()));
        }
        let axis = |k: usize, i: usize| {
            if counts[k] == 1 {
                0.5 * (lo[k] + hi[k])
            } else {
                lo[k] + (hi[k] - lo[k]) * i as f64 / (counts[k] - 1) as f64
            }
        };
        let total: usize = counts.iter().product();
        let mut actions = Vec::with_capacity(total);
        for mut idx in 0..total {
            let mut a = vec![0.0; d];
            for k in (0..d).rev() {
                a[k] = axis(k, idx % counts[k]);
                idx /= counts[k];
            }
            actions.push(a);
        }
        Ok(Self { actions, lo, hi, counts })
    }

    pub fn actions(&self) -> &[Point] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    /// Index of the grid action within `1e-9` of `u`.
    pub fn index_of(&self, u: &[f64]) -> Option<usize> {
        self.actions
            .iter()
            .position(|a| a.len() == u.len() && a.iter().zip(u).all(|(x, y)| (x - y).abs() <= 1e-9))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    grid: ActionGrid,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(grid: ActionGrid, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != grid.len() {
            return Err(DrFreeError::DimensionMismatch { expected: grid.len(), got: probs.len() });
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DrFreeError::InvalidDensity("negative or non-finite policy weight".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > POLICY_TOL {
            return Err(DrFreeError::InvalidDensity(format!("policy sums to {s}")));
        }
        Ok(Self { grid, probs })
    }

    pub fn uniform(grid: ActionGrid) -> Self {
        let n = grid.len();
        Self { grid, probs: vec![1.0 / n as f64; n] }
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Index of the most probable action (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Policy as a density over grid indices.
    pub fn as_density(&self) -> DiscreteDensity {
        let support = (0..self.probs.len()).map(|i| vec![i as f64]).collect();
        DiscreteDensity::new(support, self.probs.clone()).expect("policy invariants imply a valid density")
    }

    /// Writes `u_x,u_y,prob` rows (one column per action coordinate) with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self.grid.actions.first().map_or(0, Vec::len);
        let mut header: Vec<String> = match dim {
            2 => vec!["u_x".into(), "u_y".into()],
            _ => (0..dim).map(|k| format!("u_{k}")).collect(),
        };
        header.push("prob".into());
        w.write_record(&header)?;
        for (a, p) in self.grid.actions.iter().zip(&self.probs) {
            // Debug formatting switches to exponent notation for tiny weights.
            let mut row: Vec<String> = a.iter().map(|v| format!("{v:?}")).collect();
            row.push(format!("{p:?}"));
            w.write_record(&row)?;
        }
        w.flush()
    }
}

/// Normalizes log-weights, keeping zero-prior actions at zero and flooring
/// weights that underflow to exactly zero.
fn softmax(log_w: &[f64], failed: &[bool], prior: &[f64]) -> Vec<f64> {
    let live: Vec<f64> = failed.iter().zip(prior).map(|(f, q)| if !*f && *q > 0.0 { 1.0 } else { 0.0 }).collect();
    let norm = lse_weighted(log_w, &live);
    let mut probs = Vec::with_capacity(log_w.len());
    let mut floored = false;
    for i in 0..log_w.len() {
        let p = if prior[i] <= 0.0 {
            0.0
        } else if failed[i] || !norm.is_finite() {
            floored = true;
            UNDERFLOW_FLOOR
        } else {
            let p = (log_w[i] - norm).exp();
            if p == 0.0 {
                floored = true;
                UNDERFLOW_FLOOR
            } else {
                p
            }
        };
        probs.push(p);
    }
    if floored {
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= s);
    }
    probs
}

pub type ModelFn = Arc<dyn Fn(&[f64], &[f64]) -> Density + Send + Sync>;
pub type CostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Problem data shared by the robust and the unaware policies.
#[derive(Clone)]
pub struct PolicyEngine {
    pub grid: ActionGrid,
    /// `p_hat(· | x, u)`.
    pub trained_model: ModelFn,
    /// `q_x(· | x, u)`.
    pub generative_state: ModelFn,
    /// `q_u` over the grid.
    pub generative_action: Vec<f64>,
    pub ambiguity: AmbiguitySpec,
    pub state_cost: CostFn,
    pub action_cost: CostFn,
    pub horizon: usize,
    pub n_samples: usize,
}

impl std::fmt::Debug for PolicyEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PolicyEngine")
            .field("grid", &self.grid.counts)
            .field("ambiguity", &self.ambiguity)
            .field("horizon", &self.horizon)
            .field("n_samples", &self.n_samples)
            .finish_non_exhaustive()
    }
}

/// Per-action quantities behind a policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActionTerms {
    pub eta: f64,
    /// Cost of ambiguity, or the zero-radius limit when `eta = 0`.
    pub v: f64,
    /// Dual solution; `None` on the zero-radius route or on failure.
    pub dual: Option<AmbiguityCost>,
    /// `ln q_u - eta - v - c_u`.
    pub log_weight: f64,
    pub failed: bool,
}

#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub policy: Policy,
    pub terms: Vec<ActionTerms>,
}

/// Which exponent to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Drfree,
    Unaware,
}

impl std::str::FromStr for Engine {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "drfree" => Ok(Engine::Drfree),
            "unaware" => Ok(Engine::Unaware),
            other => Err(format!("unknown engine {other:?}, expected drfree or unaware")),
        }
    }
}

impl PolicyEngine {
    /// Engine with uniform `q_u`, zero action cost, horizon 1 and the default sample count.
    pub fn new(
        grid: ActionGrid,
        trained_model: ModelFn,
        generative_state: ModelFn,
        ambiguity: AmbiguitySpec,
        state_cost: CostFn,
    ) -> Self {
        let n = grid.len();
        Self {
            grid,
            trained_model,
            generative_state,
            generative_action: vec![1.0 / n as f64; n],
            ambiguity,
            state_cost,
            action_cost: Arc::new(|_| 0.0),
            horizon: 1,
            n_samples: DEFAULT_SAMPLES,
        }
    }

    pub fn with_radius_scale(mut self, scale: f64) -> Self {
        self.ambiguity = self.ambiguity.scaled(scale);
        self
    }

    pub fn with_grid(mut self, grid: ActionGrid) -> Self {
        let n = grid.len();
        self.grid = grid;
        self.generative_action = vec![1.0 / n as f64; n];
        self
    }

    fn check(&self) -> Result<()> {
        if self.generative_action.len() != self.grid.len() {
            return Err(DrFreeError::DimensionMismatch { expected: self.grid.len(), got: self.generative_action.len() });
        }
        let s: f64 = self.generative_action.iter().sum();
        if self.generative_action.iter().any(|q| !(*q >= 0.0)) || (s - 1.0).abs() > POLICY_TOL {
            return Err(DrFreeError::InvalidDensity("action prior is not a distribution over the grid".into()));
        }
        if self.horizon == 0 {
            return Err(DrFreeError::InvalidArgument("horizon must be at least 1".into()));
        }
        Ok(())
    }

    /// Per-action terms for either engine. Action `i` draws from `rng.split(i)`.
    pub fn evaluate(&self, engine: Engine, x: &[f64], cost_to_go: Option<&CostToGoTable>, rng: &Rng) -> Result<PolicyEvaluation> {
        self.check()?;
        let outside: Mutex<Option<(f64, f64)>> = Mutex::new(None);
        let total_cost = |y: &[f64]| -> f64 {
            let c = (self.state_cost)(y);
            match cost_to_go {
                None => c,
                Some(t) => match t.value(y) {
                    Ok(h) => c + h,
                    Err(_) => {
                        let mut o = outside.lock().expect("lock poisoned");
                        o.get_or_insert((y[0], y.get(1).copied().unwrap_or(0.0)));
                        c
                    }
                },
            }
        };

        let mut terms = Vec::with_capacity(self.grid.len());
        for (i, u) in self.grid.actions.iter().enumerate() {
            let mut r = rng.split(i as u64);
            let eta = match engine {
                Engine::Drfree => self.ambiguity.eta(x, u),
                Engine::Unaware => 0.0,
            };
            if !(eta >= 0.0) {
                return Err(DrFreeError::InvalidArgument(format!("radius must be >= 0, got {eta} at action {i}")));
            }
            let prob = InnerProblem {
                hat_p: (self.trained_model)(x, u),
                q_x: (self.generative_state)(x, u),
                total_cost: &total_cost,
                eta,
                n_samples: self.n_samples,
            };
            // At zero radius the robust exponent and the unaware one coincide.
            let solved = if eta == 0.0 {
                prob.zero_radius_limit(&mut r).map(|v| (v, None))
            } else {
                cost_of_ambiguity(&prob, &mut r).map(|c| (c.v, Some(c)))
            };
            if let Some((qx, qy)) = *outside.lock().expect("lock poisoned") {
                return Err(DrFreeError::LatticeTooCoarse { x: qx, y: qy });
            }
            let cu = (self.action_cost)(u);
            let ln_q = self.generative_action[i].ln();
            match solved {
                Ok((v, dual)) => terms.push(ActionTerms { eta, v, dual, log_weight: ln_q - eta - v - cu, failed: false }),
                Err(DrFreeError::SolverFailure(msg)) => {
                    log::warn!("dual solve failed at action {i} ({u:?}): {msg}; weight set to {UNDERFLOW_FLOOR}");
                    terms.push(ActionTerms { eta, v: f64::NAN, dual: None, log_weight: f64::NEG_INFINITY, failed: true });
                }
                Err(e) => return Err(e),
            }
        }
        if terms.iter().all(|t| t.failed) {
            return Err(DrFreeError::SolverFailure("dual failed for every action".into()));
        }
        let log_w: Vec<f64> = terms.iter().map(|t| t.log_weight).collect();
        let failed: Vec<bool> = terms.iter().map(|t| t.failed).collect();
        let probs = softmax(&log_w, &failed, &self.generative_action);
        Ok(PolicyEvaluation { policy: Policy { grid: self.grid.clone(), probs }, terms })
    }
}

/// Robust soft-max policy at `x`.
pub fn drfree_policy(engine: &PolicyEngine, x: &[f64], cost_to_go: Option<&CostToGoTable>, rng: &Rng) -> Result<Policy> {
    Ok(engine.evaluate(Engine::Drfree, x, cost_to_go, rng)?.policy)
}

/// Ambiguity-unaware policy `∝ q_u exp(-KL(p_hat || q_x) - E_{p_hat}[c̄] - c_u)`.
pub fn unaware_policy(engine: &PolicyEngine, x: &[f64], cost_to_go: Option<&CostToGoTable>, rng: &Rng) -> Result<Policy> {
    Ok(engine.evaluate(Engine::Unaware, x, cost_to_go, rng)?.policy)
}

/// `∝ q_u exp(-eta)`, the large-radius limit of the robust policy.
pub fn eta_only_policy(engine: &PolicyEngine, x: &[f64]) -> Result<Policy> {
    engine.check()?;
    let log_w: Vec<f64> = engine
        .grid
        .actions
        .iter()
        .zip(&engine.generative_action)
        .map(|(u, q)| q.ln() - engine.ambiguity.eta(x, u))
        .collect();
    let failed = vec![false; log_w.len()];
    Ok(Policy { grid: engine.grid.clone(), probs: softmax(&log_w, &failed, &engine.generative_action) })
}

/// Every action whose probability is within a relative `tol` of the maximum.
pub fn argmax_set(p: &Policy, tol: f64) -> Vec<usize> {
    let top = p.probs[p.argmax()];
    (0..p.probs.len()).filter(|&i| p.probs[i] >= top * (1.0 - tol)).collect()
}

/// `-ln Σ_u q_u exp(-eta - v - c_u)`, the smallest achievable free energy at `x`.
pub fn optimal_cost(engine: &PolicyEngine, x: &[f64], cost_to_go: Option<&CostToGoTable>, rng: &Rng) -> Result<f64> {
    optimal_cost_for(engine, Engine::Drfree, x, cost_to_go, rng)
}

pub fn optimal_cost_for(
    engine: &PolicyEngine,
    which: Engine,
    x: &[f64],
    cost_to_go: Option<&CostToGoTable>,
    rng: &Rng,
) -> Result<f64> {
    let eval = engine.evaluate(which, x, cost_to_go, rng)?;
    if let Some(i) = eval.terms.iter().position(|t| t.failed) {
        return Err(DrFreeError::SolverFailure(format!("dual failed at action {i}")));
    }
    let log_w: Vec<f64> = eval.terms.iter().map(|t| t.log_weight).collect();
    Ok(-lse_weighted(&log_w, &vec![1.0; log_w.len()]))
}

/// Rectangular lattice over a 2-d state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub nx: usize,
    pub ny: usize,
}

impl Lattice {
    pub fn new(lo: [f64; 2], hi: [f64; 2], nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(DrFreeError::InvalidArgument("lattice needs at least 2 nodes per axis".into()));
        }
        if !(lo[0] < hi[0] && lo[1] < hi[1]) {
            return Err(DrFreeError::InvalidArgument("lattice bounds must be ordered".into()));
        }
        Ok(Self { lo, hi, nx, ny })
    }

    /// Node `(i, j)`; `i` runs along x.
    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.lo[0] + (self.hi[0] - self.lo[0]) * i as f64 / (self.nx - 1) as f64,
            self.lo[1] + (self.hi[1] - self.lo[1]) * j as f64 / (self.ny - 1) as f64,
        ]
    }

    /// All nodes, x fastest.
    pub fn nodes(&self) -> Vec<[f64; 2]> {
        (0..self.ny).flat_map(|j| (0..self.nx).map(move |i| (i, j))).map(|(i, j)| self.node(i, j)).collect()
    }
}

/// `ĉ` on a lattice, bilinearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostToGoTable {
    pub stage: usize,
    pub lattice: Lattice,
    /// Node values, x fastest.
    pub values: Vec<f64>,
}

impl CostToGoTable {
    pub fn zeros(stage: usize, lattice: Lattice) -> Self {
        let n = lattice.nx * lattice.ny;
        Self { stage, lattice, values: vec![0.0; n] }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let l = &self.lattice;
        let (px, py) = (x[0], x[1]);
        let eps = 1e-12;
        if !(px >= l.lo[0] - eps && px <= l.hi[0] + eps && py >= l.lo[1] - eps && py <= l.hi[1] + eps) {
            return Err(DrFreeError::LatticeTooCoarse { x: px, y: py });
        }
        let fx = ((px - l.lo[0]) / (l.hi[0] - l.lo[0]) * (l.nx - 1) as f64).clamp(0.0, (l.nx - 1) as f64);
        let fy = ((py - l.lo[1]) / (l.hi[1] - l.lo[1]) * (l.ny - 1) as f64).clamp(0.0, (l.ny - 1) as f64);
        let i = (fx.floor() as usize).min(l.nx - 2);
        let j = (fy.floor() as usize).min(l.ny - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let at = |i: usize, j: usize| self.values[j * l.nx + i];
        Ok((1.0 - tx) * (1.0 - ty) * at(i, j)
            + tx * (1.0 - ty) * at(i + 1, j)
            + (1.0 - tx) * ty * at(i, j + 1)
            + tx * ty * at(i + 1, j + 1))
    }
}

/// Backward recursion for the cost-to-go.
///
/// Entry `k - 1` holds `ĉ_{k+1|k}`, the table used by the stage-`k` policy;
/// the last entry is the terminal zero table. Node `n` at stage `k` draws from
/// `rng.split(k).split(n)`.
pub fn build_cost_to_go(engine: &PolicyEngine, lattice: &Lattice, rng: &Rng) -> Result<Vec<CostToGoTable>> {
    let n = engine.horizon;
    if n == 0 {
        return Err(DrFreeError::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut tables = vec![CostToGoTable::zeros(n, lattice.clone())];
    for k in (1..n).rev() {
        let next = tables.last().expect("non-empty");
        let stage_rng = rng.split(k as u64 + 1);
        let values = lattice
            .nodes()
            .par_iter()
            .enumerate()
            .map(|(idx, node)| optimal_cost(engine, node, Some(next), &stage_rng.split(idx as u64)))
            .collect::<Result<Vec<f64>>>()?;
        tables.push(CostToGoTable { stage: k, lattice: lattice.clone(), values });
    }
    tables.reverse();
    Ok(tables)
}

/// Inverse-CDF draw over the grid ordering.
pub fn sample_action(p: &Policy, rng: &mut Rng) -> (usize, Point) {
    let i = inverse_cdf(&p.probs, rng.uniform());
    (i, p.grid.actions[i].clone())
}

/// `KL(p || q)` over a shared grid.
pub fn policy_kl(p: &Policy, q: &Policy) -> Result<f64> {
    if p.grid != q.grid {
        return Err(DrFreeError::GridMismatch);
    }
    kl_discrete(&p.as_density(), &q.as_density())
}

/// Policy snapshot for JSON export.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyDump<'a> {
    pub state: &'a [f64],
    pub engine: Engine,
    pub config_hash: &'a str,
    pub actions: &'a [Point],
    pub probs: &'a [f64],
}

impl Policy {
    pub fn dump<'a>(&'a self, state: &'a [f64], engine: Engine, config_hash: &'a str) -> PolicyDump<'a> {
        PolicyDump { state, engine, config_hash, actions: &self.grid.actions, probs: &self.probs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::GaussianDensity;

    fn gaussian_engine(grid: ActionGrid, eta: f64) -> PolicyEngine {
        let trained: ModelFn = Arc::new(|x: &[f64], u: &[f64]| {
            GaussianDensity::isotropic(vec![x[0] + 0.1 * u[0], x[1] + 0.1 * u[1]], 0.01).unwrap().into()
        });
        let gen: ModelFn = Arc::new(|_: &[f64], _: &[f64]| GaussianDensity::isotropic(vec![0.0, 0.0], 0.02).unwrap().into());
        let cost: CostFn = Arc::new(|y: &[f64]| y[0] * y[0] + y[1] * y[1]);
        PolicyEngine::new(grid, trained, gen, AmbiguitySpec::constant(eta), cost)
    }

    fn constant_engine(eta: f64) -> PolicyEngine {
        let g: ModelFn = Arc::new(|_: &[f64], _: &[f64]| GaussianDensity::isotropic(vec![0.0, 0.0], 1.0).unwrap().into());
        PolicyEngine::new(ActionGrid::default(), g.clone(), g, AmbiguitySpec::constant(eta), Arc::new(|_| 0.0))
    }

    #[test]
    fn default_grid_layout() {
        let g = ActionGrid::default();
        assert_eq!(g.len(), 25);
        assert_eq!(g.actions()[0], vec![-0.5, -0.5]);
        assert_eq!(g.actions()[1], vec![-0.5, -0.25]);
        assert_eq!(g.actions()[24], vec![0.5, 0.5]);
        assert_eq!(g.index_of(&[0.0, 0.25]), Some(13));
    }

    #[test]
    fn symmetric_problem_gives_uniform_policy() {
        let e = constant_engine(0.4);
        let p = drfree_policy(&e, &[0.0, 0.0], None, &Rng::new(1)).unwrap();
        for q in p.probs() {
            assert!((q - 0.04).abs() < 1e-12);
        }
        let u = unaware_policy(&e, &[0.0, 0.0], None, &Rng::new(1)).unwrap();
        assert!(policy_kl(&u, &Policy::uniform(ActionGrid::default())).unwrap() < 1e-12);
    }

    /// Three-point trained and generative models whose masses move with the action.
    fn discrete_engine(eta: f64) -> PolicyEngine {
        let trained: ModelFn = Arc::new(|x: &[f64], u: &[f64]| {
            let a = 1.0 + (u[0] + 0.3 * x[0]).exp();
            let b = 1.0 + (u[1] - 0.2 * x[1]).exp();
            let z = a + b + 1.0;
            DiscreteDensity::on_indices(vec![a / z, b / z, 1.0 / z]).unwrap().into()
        });
        let gen: ModelFn = Arc::new(|_: &[f64], _: &[f64]| DiscreteDensity::on_indices(vec![0.5, 0.3, 0.2]).unwrap().into());
        let cost: CostFn = Arc::new(|y: &[f64]| [0.4, 1.5, 0.1][y[0] as usize]);
        PolicyEngine::new(ActionGrid::default(), trained, gen, AmbiguitySpec::constant(eta), cost)
    }

    #[test]
    fn tiny_radius_matches_unaware() {
        let e = discrete_engine(1e-6);
        let x = [0.3, -0.2];
        let p = drfree_policy(&e, &x, None, &Rng::new(5)).unwrap();
        let u = unaware_policy(&e, &x, None, &Rng::new(5)).unwrap();
        let tv: f64 = p.probs().iter().zip(u.probs()).map(|(a, b)| (a - b).abs()).sum::<f64>() * 0.5;
        assert!(tv < 1e-3, "tv = {tv}");
    }

    #[test]
    fn zero_scale_is_exactly_unaware() {
        let e = gaussian_engine(ActionGrid::default(), 0.7).with_radius_scale(0.0);
        let x = [0.3, -0.2];
        let p = drfree_policy(&e, &x, None, &Rng::new(5)).unwrap();
        let u = unaware_policy(&e, &x, None, &Rng::new(5)).unwrap();
        assert_eq!(p.probs(), u.probs());
    }

    #[test]
    fn unaware_prefers_low_divergence_action() {
        // Action 0 reproduces the generative model; the others sit 20 nats away.
        let grid = ActionGrid::uniform(vec![0.0], vec![4.0], vec![5]).unwrap();
        let tail = (-20.0f64).exp();
        let q = DiscreteDensity::on_indices(vec![tail, 1.0 - tail]).unwrap();
        let far = DiscreteDensity::on_indices(vec![1.0, 0.0]).unwrap();
        let q2 = q.clone();
        let trained: ModelFn = Arc::new(move |_: &[f64], u: &[f64]| if u[0] == 0.0 { q2.clone().into() } else { far.clone().into() });
        let gen: ModelFn = Arc::new(move |_: &[f64], _: &[f64]| q.clone().into());
        let e = PolicyEngine::new(grid, trained, gen, AmbiguitySpec::constant(0.1), Arc::new(|_| 0.0));
        let p = unaware_policy(&e, &[0.0], None, &Rng::new(0)).unwrap();
        assert!(p.probs()[0] >= 1.0 - 1e-8, "{:?}", p.probs());
    }

    #[test]
    fn large_radius_argmax_follows_eta() {
        // Radii of at least 1e3 that differ across actions; v and c_u stay small.
        let grid = ActionGrid::default();
        let spec = AmbiguitySpec::new(|_, u: &[f64]| 1000.0 + 40.0 * (u[0] - 0.25).abs() + 20.0 * (u[1] + 0.5).abs(), f64::INFINITY);
        let mut e = gaussian_engine(grid, 0.0);
        e.ambiguity = spec.clone();
        let p = drfree_policy(&e, &[0.1, 0.1], None, &Rng::new(2)).unwrap();
        let expect = (0..25)
            .min_by(|a, b| spec.eta(&[], &e.grid.actions()[*a]).total_cmp(&spec.eta(&[], &e.grid.actions()[*b])))
            .unwrap();
        assert_eq!(p.argmax(), expect);
    }

    #[test]
    fn lower_radius_gets_more_mass() {
        let spec = AmbiguitySpec::new(|_, u: &[f64]| if u[0] < 0.0 { 0.2 } else { 0.5 }, 100.0);
        let mut e = constant_engine(0.0);
        e.ambiguity = spec;
        let p = drfree_policy(&e, &[0.0, 0.0], None, &Rng::new(3)).unwrap();
        assert!(p.probs()[0] > p.probs()[24]);
    }

    #[test]
    fn optimal_cost_identities() {
        // No complexity and no cost: -ln Σ q_u exp(-eta) with eta -> 0.
        let e = constant_engine(1e-9);
        let c = optimal_cost(&e, &[0.0, 0.0], None, &Rng::new(0)).unwrap();
        assert!(c.abs() < 1e-6, "{c}");
        // Constant exponents: every action pays eta + v = 0.4 + 0 here.
        let e = constant_engine(0.4);
        let c = optimal_cost(&e, &[0.0, 0.0], None, &Rng::new(0)).unwrap();
        assert!((c - 0.4).abs() < 1e-9, "{c}");
    }

    #[test]
    fn ambiguity_never_helps() {
        let mut rng = Rng::new(11);
        for _ in 0..20 {
            let x = [rng.uniform() - 0.5, rng.uniform() - 0.5];
            let small = optimal_cost(&gaussian_engine(ActionGrid::default(), 1e-6), &x, None, &Rng::new(4)).unwrap();
            let big = optimal_cost(&gaussian_engine(ActionGrid::default(), 0.5), &x, None, &Rng::new(4)).unwrap();
            assert!(big > small + 1e-6, "{small} vs {big}");
        }
    }

    #[test]
    fn horizon_one_is_zero_table() {
        let e = gaussian_engine(ActionGrid::default(), 0.3);
        let lat = Lattice::new([-1.0, -1.0], [1.0, 1.0], 5, 5).unwrap();
        let t = build_cost_to_go(&e, &lat, &Rng::new(0)).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t[0].values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_cost_propagates() {
        let g: ModelFn = Arc::new(|_: &[f64], _: &[f64]| GaussianDensity::isotropic(vec![0.0, 0.0], 0.01).unwrap().into());
        let mut e = PolicyEngine::new(ActionGrid::default(), g.clone(), g, AmbiguitySpec::constant(1e-6), Arc::new(|_| 0.0));
        e.horizon = 2;
        let lat = Lattice::new([-1.0, -1.0], [1.0, 1.0], 5, 5).unwrap();
        let t = build_cost_to_go(&e, &lat, &Rng::new(0)).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t[0].values.iter().all(|v| v.abs() < 1e-3), "{:?}", t[0].values);
        assert!(t[1].values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn generic_cost_to_go_is_non_negative() {
        let mut e = gaussian_engine(ActionGrid::default(), 0.2);
        // Contracting model so that samples from boundary nodes stay on the lattice.
        e.trained_model = Arc::new(|x: &[f64], u: &[f64]| {
            GaussianDensity::isotropic(vec![0.5 * x[0] + 0.1 * u[0], 0.5 * x[1] + 0.1 * u[1]], 0.01).unwrap().into()
        });
        e.horizon = 2;
        let lat = Lattice::new([-3.0, -3.0], [3.0, 3.0], 7, 7).unwrap();
        let t = build_cost_to_go(&e, &lat, &Rng::new(0)).unwrap();
        assert!(t[0].values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn lattice_query_outside_hull_fails() {
        let mut e = gaussian_engine(ActionGrid::default(), 0.2);
        e.horizon = 2;
        let lat = Lattice::new([-0.1, -0.1], [0.1, 0.1], 3, 3).unwrap();
        assert!(matches!(build_cost_to_go(&e, &lat, &Rng::new(0)), Err(DrFreeError::LatticeTooCoarse { .. })));
    }

    #[test]
    fn bilinear_is_exact_on_affine_data() {
        let lat = Lattice::new([0.0, 0.0], [2.0, 1.0], 3, 2).unwrap();
        let values = lat.nodes().iter().map(|n| 1.0 + 2.0 * n[0] - n[1]).collect();
        let t = CostToGoTable { stage: 1, lattice: lat, values };
        for x in [[0.3, 0.7], [1.9, 0.1], [2.0, 1.0]] {
            assert!((t.value(&x).unwrap() - (1.0 + 2.0 * x[0] - x[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_and_kl() {
        let grid = ActionGrid::default();
        let mut probs = vec![0.0; 25];
        probs[7] = 1.0;
        let p = Policy::new(grid.clone(), probs).unwrap();
        let mut rng = Rng::new(9);
        for _ in 0..20 {
            assert_eq!(sample_action(&p, &mut rng).0, 7);
        }
        let u = Policy::uniform(grid.clone());
        let mut counts = [0usize; 25];
        for _ in 0..10_000 {
            counts[sample_action(&u, &mut rng).0] += 1;
        }
        assert!(counts.iter().all(|c| (*c as f64 / 1e4 - 0.04).abs() < 0.02));
        assert!((policy_kl(&p, &u).unwrap() - 25f64.ln()).abs() < 1e-12);
        assert!(matches!(policy_kl(&u, &p), Err(DrFreeError::AbsoluteContinuityViolation { .. })));
        let other = Policy::uniform(ActionGrid::uniform(vec![0.0], vec![1.0], vec![25]).unwrap());
        assert!(matches!(policy_kl(&u, &other), Err(DrFreeError::GridMismatch)));
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let mut buf = Vec::new();
        Policy::uniform(ActionGrid::default()).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("u_x,u_y,prob\n"));
        assert_eq!(text.lines().count(), 26);
    }
}
