use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use drfree_core::belief::{
    fit_cost, lattice_points, mean_policy_kl, pearson, reconstructed_cost, write_cost_csv, BasisConfig, Demonstrations,
    FeatureBasis, FeatureTable, FitConfig, FitResult, Weights,
};
use drfree_core::navsim::{run_batch, state_cost, EnvConfig, EpisodeLog, Outcome, StepRecord};
use drfree_core::policy::{argmax_set, eta_only_policy, policy_kl, ActionGrid, Engine, Policy};
use drfree_core::provenance::{config_hash, Sidecar};
use drfree_core::verify::{drfree_dual, verify_dual, InstanceCheck};
use drfree_core::{DrFreeError, Rng};
use serde::Serialize;

use crate::config::Experiment;

pub type CmdResult = std::result::Result<(), CmdError>;

#[derive(Debug)]
pub enum CmdError {
    Invalid(anyhow::Error),
    Failed(anyhow::Error),
}

impl CmdError {
    pub fn code(&self) -> i32 {
        match self {
            CmdError::Invalid(_) => 2,
            CmdError::Failed(_) => 1,
        }
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Invalid(e) | CmdError::Failed(e) => write!(f, "{e:#}"),
        }
    }
}

pub fn invalid(e: impl Into<anyhow::Error>) -> CmdError {
    CmdError::Invalid(e.into())
}

pub fn failed(e: impl Into<anyhow::Error>) -> CmdError {
    CmdError::Failed(e.into())
}

/// Core errors caused by the input map to status 2, the rest to status 1.
fn core(e: DrFreeError) -> CmdError {
    match e {
        DrFreeError::InvalidArgument(_)
        | DrFreeError::ProbeOutsideWorkspace { .. }
        | DrFreeError::GridMismatch
        | DrFreeError::EmptyInput
        | DrFreeError::DimensionMismatch { .. } => invalid(e),
        _ => failed(e),
    }
}

fn create_dir(dir: &Path) -> Result<(), CmdError> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(failed)
}

/// Writes a table through `fill` and its `<file>.json` sidecar.
fn write_table(path: &Path, hash: &str, fill: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CmdError> {
    let io = |e: std::io::Error| failed(anyhow!(e).context(format!("writing {}", path.display())));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    fill(&mut w).map_err(io)?;
    w.flush().map_err(io)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    write_json(&sidecar_path(path), &Sidecar::new(hash.to_string(), name))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CmdError> {
    let text = serde_json::to_string_pretty(value).map_err(failed)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display())).map_err(failed)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CmdError> {
    println!("{}", serde_json::to_string_pretty(value).map_err(failed)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct EpisodeLine {
    start_index: usize,
    start: [f64; 2],
    seed: u64,
    outcome: Outcome,
    steps: usize,
    final_state: [f64; 2],
}

#[derive(Debug, Serialize)]
struct RunSummary {
    engine: Engine,
    radius_scale: f64,
    episodes: usize,
    successes: usize,
    success_rate: f64,
    outcomes: BTreeMap<String, usize>,
    config_hash: String,
    runs: Vec<EpisodeLine>,
}

fn summarize(exp: &Experiment, logs: &[EpisodeLog]) -> RunSummary {
    let mut outcomes = BTreeMap::new();
    for l in logs {
        let key = serde_json::to_value(l.summary.outcome).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        *outcomes.entry(key).or_insert(0) += 1;
    }
    let successes = logs.iter().filter(|l| l.summary.success).count();
    RunSummary {
        engine: exp.engine,
        radius_scale: exp.env.radius.scale,
        episodes: logs.len(),
        successes,
        success_rate: successes as f64 / logs.len().max(1) as f64,
        outcomes,
        config_hash: exp.hash(),
        runs: logs
            .iter()
            .map(|l| EpisodeLine {
                start_index: l.summary.start_index,
                start: l.summary.start,
                seed: l.summary.seed,
                outcome: l.summary.outcome,
                steps: l.summary.steps,
                final_state: l.summary.final_state,
            })
            .collect(),
    }
}

fn report_timing(logs: &[EpisodeLog]) {
    let (t, n) = logs.iter().fold((0.0, 0usize), |(t, n), l| (t + l.summary.mean_step_seconds * l.summary.steps as f64, n + l.summary.steps));
    if n > 0 {
        log::info!("mean policy time per step: {:.3} ms", 1e3 * t / n as f64);
    }
}

pub fn run(exp: &Experiment) -> CmdResult {
    let logs = run_batch(&exp.env, exp.engine, &exp.env.starts, &exp.seeds).map_err(core)?;
    report_timing(&logs);
    let dir = exp.out.join("episodes");
    create_dir(&dir)?;
    let hash = exp.hash();
    for l in &logs {
        let path = dir.join(format!("start{:02}_seed{}.csv", l.summary.start_index, l.summary.seed));
        write_table(&path, &hash, |w| l.write_csv(w))?;
    }
    let summary = summarize(exp, &logs);
    write_json(&exp.out.join("summary.json"), &summary)?;
    print_json(&summary)
}

/// Interior probe lattice, 6 by 4, kept 0.2 away from the walls.
pub fn probe_states(env: &EnvConfig) -> Vec<[f64; 2]> {
    let ws = &env.workspace;
    lattice_points([ws.x_bounds[0] + 0.2, ws.x_bounds[1] - 0.2], [ws.y_bounds[0] + 0.2, ws.y_bounds[1] - 0.2], 6, 4)
}

#[derive(Debug, Serialize)]
struct SweepRow {
    scale: f64,
    mean_kl: f64,
    success_rate: Option<f64>,
    argmax_agreement: f64,
}

pub fn sweep_radius(exp: &Experiment, scales: &[f64], skip_episodes: bool) -> CmdResult {
    if scales.is_empty() || scales.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(invalid(anyhow!("scales must be a non-empty list of finite values >= 0")));
    }
    let probes = probe_states(&exp.env);
    let root = Rng::new(exp.seeds[0]);
    let mut rows = Vec::new();
    for &scale in scales {
        let mut env = exp.env.clone();
        env.radius.scale = scale;
        let engine = env.engine().map_err(core)?;
        let mut kl = 0.0;
        let mut agree = 0;
        for (i, x) in probes.iter().enumerate() {
            let rng = root.split(i as u64);
            let p = engine.evaluate(Engine::Drfree, x, None, &rng).map_err(core)?.policy;
            let u = engine.evaluate(Engine::Unaware, x, None, &rng).map_err(core)?.policy;
            kl += policy_kl(&p, &u).map_err(core)?;
            if argmax_set(&eta_only_policy(&engine, x).map_err(core)?, 1e-9).contains(&p.argmax()) {
                agree += 1;
            }
        }
        let success_rate = if skip_episodes {
            None
        } else {
            let logs = run_batch(&env, Engine::Drfree, &env.starts, &exp.seeds).map_err(core)?;
            report_timing(&logs);
            Some(drfree_core::navsim::success_rate(&logs))
        };
        let row = SweepRow { scale, mean_kl: kl / probes.len() as f64, success_rate, argmax_agreement: agree as f64 / probes.len() as f64 };
        log::info!("{row:?}");
        rows.push(row);
    }
    create_dir(&exp.out)?;
    let hash = config_hash(&(exp.hash(), scales));
    write_table(&exp.out.join("sweep_radius.csv"), &hash, |w| {
        let mut c = csv::Writer::from_writer(w);
        for r in &rows {
            c.serialize(r)?;
        }
        c.flush()
    })?;
    print_json(&rows)
}

pub const HEATMAP_SIDE: usize = 50;

pub fn heatmap(exp: &Experiment, probe: [f64; 2]) -> CmdResult {
    if !exp.env.workspace.contains(&probe) {
        return Err(core(DrFreeError::ProbeOutsideWorkspace { x: probe[0], y: probe[1] }));
    }
    let base = ActionGrid::default();
    let (lo, hi) = base.bounds();
    let grid = ActionGrid::uniform(lo.to_vec(), hi.to_vec(), vec![HEATMAP_SIDE, HEATMAP_SIDE]).map_err(core)?;
    let engine = exp.env.engine().map_err(core)?.with_grid(grid);
    let policy = engine.evaluate(exp.engine, &probe, None, &Rng::new(exp.seeds[0])).map_err(core)?.policy;
    create_dir(&exp.out)?;
    let hash = config_hash(&(exp.hash(), probe));
    let name = format!("heatmap_{}.csv", serde_json::to_value(exp.engine).map_err(failed)?.as_str().unwrap_or("policy"));
    write_table(&exp.out.join(&name), &hash, |w| policy.write_csv(w))?;
    #[derive(Serialize)]
    struct HeatmapSummary<'a> {
        file: &'a str,
        probe: [f64; 2],
        engine: Engine,
        radius_scale: f64,
        rows: usize,
        total: f64,
        argmax: &'a [f64],
    }
    print_json(&HeatmapSummary {
        file: &name,
        probe,
        engine: exp.engine,
        radius_scale: exp.env.radius.scale,
        rows: policy.probs().len(),
        total: policy.probs().iter().sum(),
        argmax: &policy.grid().actions()[policy.argmax()],
    })
}

/// Deliberate defects for checking that the verifier notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    FlipSign,
}

pub fn verify(n: usize, seed: u64, out: &Path, fault: Option<Fault>) -> CmdResult {
    if n == 0 {
        return Err(invalid(anyhow!("--instances must be at least 1")));
    }
    let report = match fault {
        None => verify_dual(n, seed, &drfree_dual),
        Some(Fault::FlipSign) => verify_dual(n, seed, &|i| drfree_dual(i).map(|(v, b)| (-v, b))),
    }
    .map_err(core)?;
    log::info!("verified {} instances in {:.2} s", report.instances, report.seconds);
    #[derive(Serialize)]
    struct VerifySummary<'a> {
        instances: usize,
        seed: u64,
        max_discrepancy: f64,
        failures: usize,
        violations: Vec<&'a InstanceCheck>,
    }
    let summary = VerifySummary {
        instances: report.instances,
        seed,
        max_discrepancy: report.max_discrepancy,
        failures: report.failures,
        violations: report.violations().collect(),
    };
    print_json(&summary)?;
    if report.passed() {
        Ok(())
    } else {
        create_dir(out)?;
        let path = out.join("verify_violations.json");
        write_json(&path, &summary.violations)?;
        Err(failed(anyhow!("{} of {} instances exceed the tolerance; see {}", report.failures, n, path.display())))
    }
}

fn read_records(path: &Path) -> Result<Vec<StepRecord>, CmdError> {
    let files = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))
            .map_err(failed)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut records = Vec::new();
    for f in files {
        let file = File::open(&f).with_context(|| format!("opening {}", f.display())).map_err(failed)?;
        records.extend(EpisodeLog::read_csv(file).with_context(|| format!("parsing {}", f.display())).map_err(invalid)?);
    }
    Ok(records)
}

#[derive(Debug, Serialize)]
struct ReconstructSummary {
    demonstrations: usize,
    nll: f64,
    gradient_norm: f64,
    iterations: usize,
    converged: bool,
    non_convergence: bool,
    warning: Option<String>,
    policy_kl: Option<f64>,
    pearson_state_cost: f64,
}

pub fn reconstruct(exp: &Experiment, demos: &Path, basis: Option<&Path>, true_weights: Option<&Path>) -> CmdResult {
    let records = read_records(demos)?;
    if records.is_empty() {
        return Err(invalid(anyhow!("no demonstrations in {}", demos.display())));
    }
    let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let basis_cfg: BasisConfig = match basis {
        Some(p) => serde_json::from_str(&read(p).map_err(invalid)?).with_context(|| format!("parsing {}", p.display())).map_err(invalid)?,
        None => BasisConfig::default(),
    };
    let truth: Option<Weights> = match true_weights {
        Some(p) => Some(serde_json::from_str(&read(p).map_err(invalid)?).with_context(|| format!("parsing {}", p.display())).map_err(invalid)?),
        None => None,
    };
    let basis = FeatureBasis::new(&basis_cfg).map_err(core)?;
    let engine = exp.env.engine().map_err(core)?;
    let demos = Demonstrations::from_records(engine.grid.clone(), &records).map_err(core)?;
    let prior = Policy::new(engine.grid.clone(), engine.generative_action.clone()).map_err(core)?;
    let table = FeatureTable::build(&demos, &basis, &engine.trained_model, &prior, &Rng::new(exp.seeds[0])).map_err(core)?;
    let fit: FitResult = fit_cost(&table, &FitConfig::default()).map_err(core)?;
    let policy_kl = match &truth {
        Some(w) => Some(mean_policy_kl(&fit.weights, w, &table).map_err(core)?),
        None => None,
    };

    let ws = &exp.env.workspace;
    let points = lattice_points(ws.x_bounds, ws.y_bounds, 31, 21);
    let rec: Vec<f64> = points.iter().map(|p| reconstructed_cost(&fit.weights, &basis, p)).collect();
    let truth_cost: Vec<f64> = points.iter().map(|p| state_cost(p, &exp.env.cost)).collect();

    create_dir(&exp.out)?;
    let hash = config_hash(&(exp.hash(), &basis_cfg, demos.len()));
    write_json(&exp.out.join("weights.json"), &fit.weights)?;
    write_json(&sidecar_path(&exp.out.join("weights.json")), &Sidecar::new(hash.clone(), "weights.json"))?;
    write_table(&exp.out.join("reconstructed_cost.csv"), &hash, |w| write_cost_csv(&fit.weights, &basis, &points, w))?;

    let warning = fit.non_convergence.then(|| {
        format!("fit did not converge: gradient norm {:.3e} after {} iterations", fit.gradient_norm, fit.iterations)
    });
    print_json(&ReconstructSummary {
        demonstrations: demos.len(),
        nll: fit.nll,
        gradient_norm: fit.gradient_norm,
        iterations: fit.iterations,
        converged: fit.converged,
        non_convergence: fit.non_convergence,
        warning: warning.clone(),
        policy_kl,
        pearson_state_cost: pearson(&rec, &truth_cost),
    })?;
    match warning {
        Some(w) => Err(failed(anyhow!(w))),
        None => Ok(()),
    }
}
