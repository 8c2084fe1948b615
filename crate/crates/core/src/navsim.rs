//! Planar navigation benchmark.
//!
//! A point robot moves under `x' ~ N(x + u dt, Σ)` inside a rectangular
//! workspace. The agent only knows a biased trained model
//! `N(x + u dt + β x, Σ̂)`; its generative model is a tight Gaussian at the goal
//! and its ambiguity radius is `KL(q_x || p_hat)`, clipped, which grows with
//! the distance of the predicted position from the goal.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{AmbiguitySpec, DEFAULT_ETA_MAX, DEFAULT_SAMPLES};
use crate::densities::{kl_gaussian, GaussianDensity};
use crate::error::{DrFreeError, Result};
use crate::policy::{build_cost_to_go, sample_action, ActionGrid, CostToGoTable, Engine, Lattice, PolicyEngine};
use crate::rng::Rng;

/// Radius substituted when the divergence is exactly zero.
pub const DEGENERATE_RADIUS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Rescale the input vector to the speed limit.
    Norm,
    /// Clamp each coordinate to the speed limit.
    PerAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workspace {
    pub x_bounds: [f64; 2],
    pub y_bounds: [f64; 2],
    pub dt: f64,
    pub speed_clip: f64,
    pub clip_mode: ClipMode,
}

impl Default for Workspace {
    fn default() -> Self {
        Self { x_bounds: [-1.5, 1.5], y_bounds: [-1.0, 1.0], dt: 0.033, speed_clip: 0.2, clip_mode: ClipMode::Norm }
    }
}

impl Workspace {
    pub fn contains(&self, x: &[f64]) -> bool {
        x[0] >= self.x_bounds[0] && x[0] <= self.x_bounds[1] && x[1] >= self.y_bounds[0] && x[1] <= self.y_bounds[1]
    }

    pub fn clamp(&self, x: [f64; 2]) -> [f64; 2] {
        [x[0].clamp(self.x_bounds[0], self.x_bounds[1]), x[1].clamp(self.y_bounds[0], self.y_bounds[1])]
    }

    /// Distance to the nearest wall (non-negative inside).
    pub fn wall_distance(&self, x: &[f64]) -> f64 {
        (x[0] - self.x_bounds[0])
            .min(self.x_bounds[1] - x[0])
            .min(x[1] - self.y_bounds[0])
            .min(self.y_bounds[1] - x[1])
    }

    /// The input the platform actually applies.
    pub fn clip(&self, u: &[f64]) -> [f64; 2] {
        match self.clip_mode {
            ClipMode::Norm => {
                let n = u[0].hypot(u[1]);
                if n > self.speed_clip {
                    [u[0] * self.speed_clip / n, u[1] * self.speed_clip / n]
                } else {
                    [u[0], u[1]]
                }
            }
            ClipMode::PerAxis => [u[0].clamp(-self.speed_clip, self.speed_clip), u[1].clamp(-self.speed_clip, self.speed_clip)],
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.x_bounds[0] < self.x_bounds[1] && self.y_bounds[0] < self.y_bounds[1]) {
            return Err(DrFreeError::InvalidArgument("workspace bounds must be ordered".into()));
        }
        if !(self.dt > 0.0 && self.speed_clip > 0.0) {
            return Err(DrFreeError::InvalidArgument("dt and speed_clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSpec {
    pub goal: [f64; 2],
    pub goal_weight: f64,
    pub obstacles: Vec<[f64; 2]>,
    /// Isotropic variance of each obstacle Gaussian.
    pub obstacle_var: f64,
    pub obstacle_weight: f64,
    pub boundary_sigma: f64,
    pub boundary_weight: f64,
    /// Wall coordinates the boundary bumps sit on.
    pub boundary_x: [f64; 2],
    pub boundary_y: [f64; 2],
}

impl Default for CostSpec {
    fn default() -> Self {
        Self {
            goal: [0.0, 0.0],
            goal_weight: 50.0,
            obstacles: vec![[-0.6, -0.35], [-0.6, 0.35], [0.6, -0.35], [0.6, 0.35], [0.0, -0.5], [0.0, 0.5]],
            obstacle_var: 0.025,
            obstacle_weight: 20.0,
            boundary_sigma: 0.02,
            boundary_weight: 5.0,
            boundary_x: [-1.5, 1.5],
            boundary_y: [-1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedModelSpec {
    pub stage: usize,
    /// Coefficient of the position-proportional bias.
    pub beta: f64,
    pub cov: [[f64; 2]; 2],
}

impl Default for TrainedModelSpec {
    fn default() -> Self {
        Self { stage: 1, beta: 0.1, cov: TRUE_COV }
    }
}

/// Covariance of the true one-step transition.
pub const TRUE_COV: [[f64; 2]; 2] = [[0.001, 0.0002], [0.0002, 0.001]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadiusSpec {
    /// Isotropic variance of the generative state model around the goal.
    pub generative_var: f64,
    /// Clip on `KL(q_x || p_hat)`; `None` disables it.
    pub eta_max: Option<f64>,
    /// Multiplier applied after the clip.
    pub scale: f64,
}

impl Default for RadiusSpec {
    fn default() -> Self {
        Self { generative_var: 1e-4, eta_max: Some(DEFAULT_ETA_MAX), scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub success: f64,
    pub collision: f64,
    pub boundary: f64,
    pub max_steps: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { success: 0.08, collision: 0.12, boundary: 0.02, max_steps: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub workspace: Workspace,
    pub cost: CostSpec,
    pub true_cov: [[f64; 2]; 2],
    pub stages: Vec<TrainedModelSpec>,
    /// `stage` field of the trained model in use.
    pub active_stage: usize,
    pub radius: RadiusSpec,
    pub thresholds: Thresholds,
    pub starts: Vec<[f64; 2]>,
    pub n_samples: usize,
    pub horizon: usize,
    /// Cost-to-go lattice size, used when `horizon > 1`.
    pub lattice: [usize; 2],
    /// Extra margin of the lattice beyond the workspace (trained-model samples
    /// can land outside the walls).
    pub lattice_margin: f64,
    /// Trained model equal to the true one (no ambiguity).
    pub exact_model: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            workspace: Workspace::default(),
            cost: CostSpec::default(),
            true_cov: TRUE_COV,
            stages: vec![
                TrainedModelSpec { stage: 1, beta: 0.1, cov: [[0.004, 0.0], [0.0, 0.004]] },
                TrainedModelSpec { stage: 2, beta: 0.1, cov: [[0.002, 0.0002], [0.0002, 0.002]] },
                TrainedModelSpec { stage: 3, beta: 0.1, cov: TRUE_COV },
            ],
            active_stage: 3,
            radius: RadiusSpec::default(),
            thresholds: Thresholds::default(),
            starts: default_starts(),
            n_samples: DEFAULT_SAMPLES,
            horizon: 1,
            lattice: [31, 21],
            lattice_margin: 0.5,
            exact_model: false,
        }
    }
}

/// Twelve starts spread along the edges of the default workspace.
pub fn default_starts() -> Vec<[f64; 2]> {
    vec![
        [1.2, 0.75],
        [-1.2, 0.75],
        [1.2, -0.75],
        [-1.2, -0.75],
        [0.0, 0.85],
        [0.0, -0.85],
        [1.3, 0.0],
        [-1.3, 0.0],
        [0.6, 0.85],
        [-0.6, 0.85],
        [0.6, -0.85],
        [-0.6, -0.85],
    ]
}

impl EnvConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| DrFreeError::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.workspace.check()?;
        let c = &self.cost;
        if !(c.goal_weight > 0.0 && c.obstacle_weight > 0.0 && c.boundary_weight > 0.0) {
            return Err(DrFreeError::InvalidArgument("cost weights must be positive".into()));
        }
        if !(c.obstacle_var > 0.0 && c.boundary_sigma > 0.0) {
            return Err(DrFreeError::InvalidArgument("obstacle variance and boundary sigma must be positive".into()));
        }
        if c.obstacles.iter().any(|o| !self.workspace.contains(o)) || !self.workspace.contains(&c.goal) {
            return Err(DrFreeError::InvalidArgument("goal and obstacle centers must lie in the workspace".into()));
        }
        GaussianDensity::new(vec![0.0, 0.0], to_rows(&self.true_cov))?;
        for s in &self.stages {
            GaussianDensity::new(vec![0.0, 0.0], to_rows(&s.cov))?;
            if !s.beta.is_finite() {
                return Err(DrFreeError::InvalidArgument("beta must be finite".into()));
            }
        }
        self.trained_spec()?;
        let r = &self.radius;
        if !(r.generative_var > 0.0) || !(r.scale >= 0.0) || r.eta_max.is_some_and(|m| !(m > 0.0)) {
            return Err(DrFreeError::InvalidArgument("radius settings out of range".into()));
        }
        if self.n_samples == 0 || self.horizon == 0 || self.thresholds.max_steps == 0 {
            return Err(DrFreeError::InvalidArgument("n_samples, horizon and max_steps must be at least 1".into()));
        }
        if self.starts.iter().any(|s| !self.workspace.contains(s)) {
            return Err(DrFreeError::InvalidArgument("every start must lie in the workspace".into()));
        }
        Ok(())
    }

    /// Trained model in use: the active stage, or the true model when `exact_model` is set.
    pub fn trained_spec(&self) -> Result<TrainedModelSpec> {
        if self.exact_model {
            return Ok(TrainedModelSpec { stage: 0, beta: 0.0, cov: self.true_cov });
        }
        self.stages
            .iter()
            .find(|s| s.stage == self.active_stage)
            .cloned()
            .ok_or_else(|| DrFreeError::InvalidArgument(format!("no trained-model stage {}", self.active_stage)))
    }

    pub fn generative_state(&self) -> GaussianDensity {
        GaussianDensity::isotropic(self.cost.goal.to_vec(), self.radius.generative_var).expect("validated variance")
    }

    /// Policy engine for this environment with the configured radius scale.
    pub fn engine(&self) -> Result<PolicyEngine> {
        self.validate()?;
        let spec = self.trained_spec()?;
        let ws = self.workspace.clone();
        let cost = self.cost.clone();
        let q_x = self.generative_state();
        let trained = {
            let (spec, ws) = (spec.clone(), ws.clone());
            Arc::new(move |x: &[f64], u: &[f64]| trained_model(x, u, &spec, &ws).into())
        };
        let gen = {
            let q = q_x.clone();
            Arc::new(move |_: &[f64], _: &[f64]| q.clone().into())
        };
        let radius_fn = {
            let (spec, ws, q) = (spec, ws, q_x);
            move |x: &[f64], u: &[f64]| match radius(x, u, &spec, &ws, &q, None) {
                Ok(eta) => eta,
                Err(_) => DEGENERATE_RADIUS,
            }
        };
        let ambiguity = AmbiguitySpec::new(radius_fn, self.radius.eta_max.unwrap_or(f64::INFINITY)).scaled(self.radius.scale);
        let state_cost = Arc::new(move |x: &[f64]| state_cost(x, &cost));
        let mut engine = PolicyEngine::new(ActionGrid::default(), trained, gen, ambiguity, state_cost);
        engine.n_samples = self.n_samples;
        engine.horizon = self.horizon;
        Ok(engine)
    }

    pub fn cost_to_go_lattice(&self) -> Result<Lattice> {
        let (ws, m) = (&self.workspace, self.lattice_margin);
        Lattice::new(
            [ws.x_bounds[0] - m, ws.y_bounds[0] - m],
            [ws.x_bounds[1] + m, ws.y_bounds[1] + m],
            self.lattice[0],
            self.lattice[1],
        )
    }

    /// Sha-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        crate::provenance::config_hash(self)
    }
}

fn to_rows(c: &[[f64; 2]; 2]) -> Vec<Vec<f64>> {
    c.iter().map(|r| r.to_vec()).collect()
}

/// True transition density `N(x + clip(u) dt, Σ)`.
pub fn true_model(x: &[f64], u: &[f64], ws: &Workspace, cov: &[[f64; 2]; 2]) -> GaussianDensity {
    let v = ws.clip(u);
    GaussianDensity::new(vec![x[0] + v[0] * ws.dt, x[1] + v[1] * ws.dt], to_rows(cov)).expect("validated covariance")
}

/// One step of the true dynamics, clamped to the workspace.
pub fn true_step(x: &[f64], u: &[f64], ws: &Workspace, cov: &[[f64; 2]; 2], rng: &mut Rng) -> [f64; 2] {
    let next = true_model(x, u, ws, cov).sample_one(rng);
    ws.clamp([next[0], next[1]])
}

/// Biased trained model `N(x + clip(u) dt + β x, Σ̂)`.
pub fn trained_model(x: &[f64], u: &[f64], spec: &TrainedModelSpec, ws: &Workspace) -> GaussianDensity {
    let v = ws.clip(u);
    let mean = vec![x[0] + v[0] * ws.dt + spec.beta * x[0], x[1] + v[1] * ws.dt + spec.beta * x[1]];
    GaussianDensity::new(mean, to_rows(&spec.cov)).expect("validated covariance")
}

/// `w_g |x - x_d|² + w_o Σ N(x; o_i, s I) + w_b b(x)`.
pub fn state_cost(x: &[f64], spec: &CostSpec) -> f64 {
    let d2 = (x[0] - spec.goal[0]).powi(2) + (x[1] - spec.goal[1]).powi(2);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * spec.obstacle_var);
    let obstacles: f64 = spec
        .obstacles
        .iter()
        .map(|o| norm * (-((x[0] - o[0]).powi(2) + (x[1] - o[1]).powi(2)) / (2.0 * spec.obstacle_var)).exp())
        .sum();
    spec.goal_weight * d2 + spec.obstacle_weight * obstacles + spec.boundary_weight * boundary_penalty(x, spec)
}

/// Gaussian bumps centred on the four walls.
fn boundary_penalty(x: &[f64], spec: &CostSpec) -> f64 {
    let sigma = spec.boundary_sigma;
    let bump = |d: f64| (-0.5 * (d / sigma).powi(2)).exp();
    let s: f64 = (0..2).map(|j| bump(x[0] - spec.boundary_x[j]) + bump(x[1] - spec.boundary_y[j])).sum();
    s / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// `min(KL(q_x || p_hat(x, u)), eta_max)`; `DegenerateRadius` when it is zero.
pub fn radius(
    x: &[f64],
    u: &[f64],
    spec: &TrainedModelSpec,
    ws: &Workspace,
    q_x: &GaussianDensity,
    eta_max: Option<f64>,
) -> Result<f64> {
    let kl = kl_gaussian(q_x, &trained_model(x, u, spec, ws))?;
    let eta = eta_max.map_or(kl, |m| kl.min(m));
    if eta == 0.0 {
        return Err(DrFreeError::DegenerateRadius);
    }
    Ok(eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Obstacle,
    Boundary,
    Timeout,
}

/// One control step: the state the action was chosen at, the grid action and
/// the quantities behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub x: f64,
    pub y: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub eta: f64,
    pub kl_true_trained: f64,
    pub v: f64,
    pub state_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub start_index: usize,
    pub start: [f64; 2],
    pub seed: u64,
    pub engine: Engine,
    pub steps: usize,
    pub success: bool,
    pub outcome: Outcome,
    pub final_state: [f64; 2],
    pub mean_step_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub summary: EpisodeSummary,
    pub records: Vec<StepRecord>,
}

impl EpisodeLog {
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.records.is_empty() {
            w.write_record(["k", "x", "y", "u_x", "u_y", "eta", "kl_true_trained", "v", "state_cost"])?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> std::io::Result<Vec<StepRecord>> {
        let mut r = csv::Reader::from_reader(input);
        r.deserialize().collect::<std::result::Result<Vec<StepRecord>, _>>().map_err(std::io::Error::other)
    }
}

fn terminal(x: &[f64], cfg: &EnvConfig) -> Option<Outcome> {
    let t = &cfg.thresholds;
    let near = |c: &[f64; 2], r: f64| (x[0] - c[0]).hypot(x[1] - c[1]) <= r;
    if cfg.cost.obstacles.iter().any(|o| near(o, t.collision)) {
        Some(Outcome::Obstacle)
    } else if cfg.workspace.wall_distance(x) <= t.boundary {
        Some(Outcome::Boundary)
    } else if near(&cfg.cost.goal, t.success) {
        Some(Outcome::Success)
    } else {
        None
    }
}

/// Closed-loop rollout. Step `k` draws its policy from `rng.split(k).split(0)`
/// and its action and transition noise from `rng.split(k).split(1)`.
pub fn run_episode(
    engine: &PolicyEngine,
    which: Engine,
    cfg: &EnvConfig,
    cost_to_go: Option<&CostToGoTable>,
    start_index: usize,
    x0: [f64; 2],
    seed: u64,
) -> Result<EpisodeLog> {
    let rng = Rng::new(seed).split(start_index as u64);
    let spec = cfg.trained_spec()?;
    let mut x = x0;
    let mut records = Vec::new();
    let mut outcome = terminal(&x, cfg);
    let mut seconds = 0.0;
    while outcome.is_none() && records.len() < cfg.thresholds.max_steps {
        let k = records.len();
        let step_rng = rng.split(k as u64);
        let started = std::time::Instant::now();
        let eval = engine.evaluate(which, &x, cost_to_go, &step_rng.split(0))?;
        seconds += started.elapsed().as_secs_f64();
        let mut r = step_rng.split(1);
        let (i, u) = sample_action(&eval.policy, &mut r);
        let kl = kl_gaussian(&true_model(&x, &u, &cfg.workspace, &cfg.true_cov), &trained_model(&x, &u, &spec, &cfg.workspace))?;
        records.push(StepRecord {
            k,
            x: x[0],
            y: x[1],
            u_x: u[0],
            u_y: u[1],
            eta: eval.terms[i].eta,
            kl_true_trained: kl,
            v: eval.terms[i].v,
            state_cost: state_cost(&x, &cfg.cost),
        });
        x = true_step(&x, &u, &cfg.workspace, &cfg.true_cov, &mut r);
        outcome = terminal(&x, cfg);
    }
    let outcome = outcome.unwrap_or(Outcome::Timeout);
    let steps = records.len();
    Ok(EpisodeLog {
        summary: EpisodeSummary {
            start_index,
            start: x0,
            seed,
            engine: which,
            steps,
            success: outcome == Outcome::Success,
            outcome,
            final_state: x,
            mean_step_seconds: if steps > 0 { seconds / steps as f64 } else { 0.0 },
        },
        records,
    })
}

/// Every `(start, seed)` episode, run in parallel and ordered by start index then seed.
pub fn run_batch(cfg: &EnvConfig, which: Engine, starts: &[[f64; 2]], seeds: &[u64]) -> Result<Vec<EpisodeLog>> {
    let engine = cfg.engine()?;
    let tables = if engine.horizon > 1 {
        Some(build_cost_to_go(&engine, &cfg.cost_to_go_lattice()?, &Rng::new(seeds.first().copied().unwrap_or(0)))?)
    } else {
        None
    };
    let table = tables.as_ref().map(|t| &t[0]);
    let jobs: Vec<(usize, u64)> = (0..starts.len()).flat_map(|i| seeds.iter().map(move |s| (i, *s))).collect();
    jobs.par_iter().map(|&(i, s)| run_episode(&engine, which, cfg, table, i, starts[i], s)).collect()
}

pub fn success_rate(logs: &[EpisodeLog]) -> f64 {
    if logs.is_empty() {
        return 0.0;
    }
    logs.iter().filter(|l| l.summary.success).count() as f64 / logs.len() as f64
}

/// True iff `KL(p_true || p_hat) <= eta` at every logged step.
pub fn radius_containment(log: &EpisodeLog) -> bool {
    log.records.iter().all(|r| r.kl_true_trained <= r.eta)
}

/// Does the segment from `a` to `b` pass within `r` of `c`?
pub fn segment_passes_near(a: [f64; 2], b: [f64; 2], c: [f64; 2], r: f64) -> bool {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 == 0.0 { 0.0 } else { (((c[0] - a[0]) * d[0] + (c[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) };
    let p = [a[0] + t * d[0], a[1] + t * d[1]];
    (p[0] - c[0]).hypot(p[1] - c[1]) <= r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn true_step_mean_and_clip() {
        let ws = Workspace::default();
        let m = true_model(&[0.0, 0.0], &[0.1, 0.1], &ws, &TRUE_COV);
        assert!((m.mean()[0] - 0.0033).abs() < 1e-12 && (m.mean()[1] - 0.0033).abs() < 1e-12);
        assert_eq!(ws.clip(&[0.5, 0.0]), [0.2, 0.0]);
        let c = ws.clip(&[0.5, 0.5]);
        assert!((c[0].hypot(c[1]) - 0.2).abs() < 1e-12 && (c[0] - c[1]).abs() < 1e-15);
        let per_axis = Workspace { clip_mode: ClipMode::PerAxis, ..Workspace::default() };
        assert_eq!(per_axis.clip(&[0.5, -0.5]), [0.2, -0.2]);
    }

    #[test]
    fn true_step_covariance() {
        let ws = Workspace::default();
        let mut rng = Rng::new(3);
        let n = 10_000;
        let xs: Vec<[f64; 2]> = (0..n).map(|_| true_step(&[0.0, 0.0], &[0.0, 0.0], &ws, &TRUE_COV, &mut rng)).collect();
        let mean = [xs.iter().map(|x| x[0]).sum::<f64>() / n as f64, xs.iter().map(|x| x[1]).sum::<f64>() / n as f64];
        for a in 0..2 {
            for b in 0..2 {
                let c = xs.iter().map(|x| (x[a] - mean[a]) * (x[b] - mean[b])).sum::<f64>() / (n - 1) as f64;
                assert!((c - TRUE_COV[a][b]).abs() <= 0.2 * TRUE_COV[a][b], "{a}{b}: {c}");
            }
        }
    }

    #[test]
    fn trained_model_bias() {
        let ws = Workspace::default();
        let spec = TrainedModelSpec::default();
        assert_eq!(trained_model(&[0.0, 0.0], &[0.1, 0.1], &spec, &ws).mean(), true_model(&[0.0, 0.0], &[0.1, 0.1], &ws, &TRUE_COV).mean());
        let m = trained_model(&[1.0, 1.0], &[0.0, 0.0], &spec, &ws);
        assert!((m.mean()[0] - 1.1).abs() < 1e-12 && (m.mean()[1] - 1.1).abs() < 1e-12);
        let kl_at = |r: f64| kl_gaussian(&true_model(&[r, r], &[0.0, 0.0], &ws, &TRUE_COV), &trained_model(&[r, r], &[0.0, 0.0], &spec, &ws)).unwrap();
        let mut last = -1.0;
        for r in [0.0, 0.1, 0.3, 0.6, 0.9] {
            let k = kl_at(r);
            assert!(k > last);
            last = k;
        }
    }

    #[test]
    fn cost_values() {
        let far = CostSpec { goal: [0.0, 0.0], obstacles: vec![[1.0, 0.6]], ..CostSpec::default() };
        assert!(state_cost(&[0.0, 0.0], &far) <= 1e-3);
        let spec = CostSpec::default();
        let at = state_cost(&spec.obstacles[0], &spec);
        let peak = 20.0 / (2.0 * std::f64::consts::PI * 0.025);
        assert!((peak - 127.32).abs() < 0.01);
        assert!(at >= peak);
        // Mirror symmetry of the default layout about both axes.
        for p in [[0.3, 0.2], [1.1, -0.7], [-0.4, 0.55]] {
            let c = state_cost(&p, &spec);
            assert!((c - state_cost(&[-p[0], p[1]], &spec)).abs() < 1e-9);
            assert!((c - state_cost(&[p[0], -p[1]], &spec)).abs() < 1e-9);
        }
    }

    #[test]
    fn radius_behaviour() {
        let ws = Workspace::default();
        let spec = TrainedModelSpec::default();
        let q = GaussianDensity::isotropic(vec![0.0, 0.0], 1e-4).unwrap();
        assert_eq!(radius(&[1.4, 0.9], &[0.0, 0.0], &spec, &ws, &q, Some(100.0)).unwrap(), 100.0);
        let exact = TrainedModelSpec { stage: 0, beta: 0.0, cov: [[1e-4, 0.0], [0.0, 1e-4]] };
        assert_eq!(radius(&[0.0, 0.0], &[0.0, 0.0], &exact, &ws, &q, Some(100.0)), Err(DrFreeError::DegenerateRadius));
        let mut last = f64::INFINITY;
        for t in 0..=20 {
            let s = 1.0 - t as f64 / 20.0;
            let eta = radius(&[-1.4 * s, -0.9 * s], &[0.0, 0.0], &spec, &ws, &q, None).unwrap();
            assert!(eta <= last);
            last = eta;
        }
    }

    #[test]
    fn episode_starting_at_goal() {
        let cfg = EnvConfig::default();
        let log = run_episode(&cfg.engine().unwrap(), Engine::Drfree, &cfg, None, 0, cfg.cost.goal, 1).unwrap();
        assert_eq!(log.summary.steps, 0);
        assert!(log.summary.success);
        assert!(radius_containment(&log));
    }

    #[test]
    fn episodes_are_deterministic_and_stay_inside() {
        let mut cfg = EnvConfig::default();
        cfg.thresholds.max_steps = 60;
        let e = cfg.engine().unwrap();
        let a = run_episode(&e, Engine::Drfree, &cfg, None, 2, [0.9, 0.6], 5).unwrap();
        let b = run_episode(&e, Engine::Drfree, &cfg, None, 2, [0.9, 0.6], 5).unwrap();
        assert_eq!(a.records, b.records);
        for r in &a.records {
            assert!(cfg.workspace.contains(&[r.x, r.y]));
            assert!(r.eta > 0.0 && r.eta <= 100.0);
        }
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(EpisodeLog::read_csv(&buf[..]).unwrap(), a.records);
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg = EnvConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(EnvConfig::from_json(&text).unwrap(), cfg);
        let partial = EnvConfig::from_json(r#"{"horizon": 2}"#).unwrap();
        assert_eq!(partial.horizon, 2);
        assert!(EnvConfig::from_json(r#"{"horizon": 0}"#).is_err());
        assert!(EnvConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert_eq!(cfg.hash(), EnvConfig::default().hash());
    }

    #[test]
    fn segment_distance() {
        assert!(segment_passes_near([0.0, 0.85], [0.0, 0.0], [0.0, 0.5], 0.1));
        assert!(!segment_passes_near([1.3, 0.0], [0.0, 0.0], [0.6, 0.35], 0.1));
        assert!(!segment_passes_near([1.0, 0.0], [2.0, 0.0], [0.0, 0.0], 0.1));
    }

    #[test]
    fn success_rate_counts() {
        let mut cfg = EnvConfig::default();
        cfg.thresholds.max_steps = 1;
        let e = cfg.engine().unwrap();
        let ok = run_episode(&e, Engine::Drfree, &cfg, None, 0, cfg.cost.goal, 1).unwrap();
        assert_eq!(success_rate(&[ok.clone(), ok.clone()]), 1.0);
        let crash = run_episode(&e, Engine::Drfree, &cfg, None, 0, cfg.cost.obstacles[0], 1).unwrap();
        assert_eq!(crash.summary.outcome, Outcome::Obstacle);
        assert_eq!(success_rate(&[crash]), 0.0);
    }
}
