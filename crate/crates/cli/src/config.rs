use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use drfree_core::navsim::EnvConfig;
use drfree_core::policy::Engine;
use serde::{Deserialize, Serialize};

/// Environment given inline or as a path relative to the experiment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvSource {
    Path(PathBuf),
    Inline(Box<EnvConfig>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: Option<EnvSource>,
    pub engine: Engine,
    pub radius_scale: f64,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    /// Overrides the environment's start list.
    pub starts: Option<Vec<[f64; 2]>>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            environment: None,
            engine: Engine::Drfree,
            radius_scale: 1.0,
            horizon: 1,
            seeds: vec![0, 1, 2],
            starts: None,
            out: PathBuf::from("out"),
        }
    }
}

/// A resolved experiment: everything needed to run, with the environment loaded.
#[derive(Debug, Clone, Serialize)]
pub struct Experiment {
    pub env: EnvConfig,
    pub engine: Engine,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Experiment {
    pub fn hash(&self) -> String {
        drfree_core::provenance::config_hash(&(&self.env, self.engine, &self.seeds))
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub engine: Option<Engine>,
    pub radius_scale: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
}

pub fn load(path: Option<&Path>, o: &Overrides) -> anyhow::Result<Experiment> {
    let (mut cfg, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let cfg: ExperimentConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (ExperimentConfig::default(), PathBuf::new()),
    };
    if let Some(e) = o.engine {
        cfg.engine = e;
    }
    if let Some(s) = o.radius_scale {
        cfg.radius_scale = s;
    }
    if let Some(s) = &o.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    if cfg.seeds.is_empty() {
        bail!("seeds must be a non-empty list");
    }
    if !(cfg.radius_scale >= 0.0) || !cfg.radius_scale.is_finite() {
        bail!("radius_scale must be finite and >= 0, got {}", cfg.radius_scale);
    }
    if cfg.horizon == 0 {
        bail!("horizon must be at least 1");
    }
    let mut env = match cfg.environment {
        None => EnvConfig::default(),
        Some(EnvSource::Inline(env)) => *env,
        Some(EnvSource::Path(p)) => {
            let p = base.join(p);
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            EnvConfig::from_json(&text).with_context(|| format!("parsing {}", p.display()))?
        }
    };
    env.radius.scale = cfg.radius_scale;
    env.horizon = cfg.horizon;
    if let Some(s) = cfg.starts {
        env.starts = s;
    }
    env.validate()?;
    Ok(Experiment { env, engine: cfg.engine, seeds: cfg.seeds, out: cfg.out })
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',').filter(|p| !p.trim().is_empty()).map(|p| p.trim().parse::<T>().map_err(|e| format!("{p:?}: {e}"))).collect()
}

pub fn parse_point(s: &str) -> Result<[f64; 2], String> {
    match parse_list::<f64>(s)?.as_slice() {
        [x, y] => Ok([*x, *y]),
        _ => Err(format!("expected \"x,y\", got {s:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_and_points() {
        assert_eq!(parse_list::<u64>("0,1, 2").unwrap(), vec![0, 1, 2]);
        assert!(parse_list::<u64>("").unwrap().is_empty());
        assert_eq!(parse_point("-0.5,-0.5").unwrap(), [-0.5, -0.5]);
        assert!(parse_point("1").is_err());
    }

    #[test]
    fn empty_seeds_rejected() {
        let o = Overrides { seeds: Some(Vec::new()), ..Default::default() };
        assert!(load(None, &o).is_err());
    }

    #[test]
    fn overrides_apply() {
        let o = Overrides { radius_scale: Some(0.5), engine: Some(Engine::Unaware), ..Default::default() };
        let e = load(None, &o).unwrap();
        assert_eq!(e.env.radius.scale, 0.5);
        assert_eq!(e.engine, Engine::Unaware);
    }
}
