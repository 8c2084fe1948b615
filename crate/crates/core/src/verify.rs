//! Scalar dual against the brute-force primal on random discrete instances.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{cost_of_ambiguity, Branch, InnerProblem};
use crate::error::{DrFreeError, Result};
use crate::oracle::{oracle_inner_max, DiscreteInstance};
use crate::rng::Rng;

/// Absolute tolerance on `|oracle - (eta + v)|`, on top of the oracle's grid error.
pub const DUAL_TOL: f64 = 2e-3;
pub const VERIFY_RESOLUTION: usize = 100;

/// What the checked side returns for an instance: `eta + v` and the branch taken.
pub type DualFn = dyn Fn(&DiscreteInstance) -> Result<(f64, Branch)> + Sync;

/// `eta + v` from the scalar dual.
pub fn drfree_dual(inst: &DiscreteInstance) -> Result<(f64, Branch)> {
    let cost = inst.cost_fn();
    let prob = InnerProblem {
        hat_p: inst.hat_p.clone().into(),
        q_x: inst.q_x.clone().into(),
        total_cost: &cost,
        eta: inst.eta,
        n_samples: 1,
    };
    let c = cost_of_ambiguity(&prob, &mut Rng::new(0))?;
    Ok((inst.eta + c.v, c.branch))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceCheck {
    pub index: usize,
    pub instance: DiscreteInstance,
    pub dual: f64,
    pub oracle: f64,
    pub grid_error: f64,
    pub discrepancy: f64,
    pub branch: Branch,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub instances: usize,
    pub seed: u64,
    pub max_discrepancy: f64,
    pub failures: usize,
    pub seconds: f64,
    pub checks: Vec<InstanceCheck>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn violations(&self) -> impl Iterator<Item = &InstanceCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Instance `i` is drawn from `Rng::new(seed).split(i)` with support 2 to 4,
/// costs in `[0, 3]` and radius in `[0.01, 1]`.
pub fn random_instances(n: usize, seed: u64) -> Vec<DiscreteInstance> {
    let root = Rng::new(seed);
    (0..n).map(|i| DiscreteInstance::random(&mut root.split(i as u64), 3.0, 0.01, 1.0)).collect()
}

pub fn verify_dual(n: usize, seed: u64, dual: &DualFn) -> Result<VerifyReport> {
    if n == 0 {
        return Err(DrFreeError::InvalidArgument("at least one instance is required".into()));
    }
    let started = Instant::now();
    let checks = random_instances(n, seed)
        .into_par_iter()
        .enumerate()
        .map(|(index, instance)| {
            let (value, branch) = dual(&instance)?;
            let o = oracle_inner_max(&instance.hat_p, &instance.q_x, &instance.cost, instance.eta, VERIFY_RESOLUTION)?;
            let discrepancy = (o.value - value).abs();
            let pass = discrepancy <= DUAL_TOL + o.grid_error.abs();
            Ok(InstanceCheck { index, instance, dual: value, oracle: o.value, grid_error: o.grid_error, discrepancy, branch, pass })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_discrepancy = checks.iter().fold(0.0f64, |m, c| m.max(c.discrepancy));
    let failures = checks.iter().filter(|c| !c.pass).count();
    Ok(VerifyReport { instances: n, seed, max_discrepancy, failures, seconds: started.elapsed().as_secs_f64(), checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_are_reproducible() {
        let a = random_instances(5, 3);
        let b = random_instances(5, 3);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.iter().all(|i| (0.01..=1.0).contains(&i.eta) && i.cost.iter().all(|c| (0.0..=3.0).contains(c))));
    }

    #[test]
    fn flipped_sign_is_detected() {
        let bad = |inst: &DiscreteInstance| drfree_dual(inst).map(|(v, b)| (-v, b));
        let r = verify_dual(10, 1, &bad).unwrap();
        assert!(!r.passed());
        assert_eq!(r.failures, r.violations().count());
    }

    #[test]
    fn interior_instances_agree() {
        let r = verify_dual(30, 11, &drfree_dual).unwrap();
        for c in r.checks.iter().filter(|c| c.branch == Branch::Interior) {
            assert!(c.pass, "{c:?}");
        }
    }

    #[test]
    fn zero_instances_rejected() {
        assert!(verify_dual(0, 1, &drfree_dual).is_err());
    }
}
