//! Discrete and Gaussian densities, KL divergences and log-sum-exp.
//!
//! Discrete densities store probabilities directly; log-space is only entered
//! inside [`kl_discrete`] and [`log_sum_exp`]. Gaussian densities keep their
//! Cholesky factor so that `log_pdf` and sampling never refactor.

use serde::{Deserialize, Serialize};

use crate::error::{DrFreeError, Result};
use crate::rng::Rng;

pub type Point = Vec<f64>;

/// Tolerance on the probability simplex.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Smallest accepted Cholesky pivot.
pub const PIVOT_TOL: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDiscrete")]
pub struct DiscreteDensity {
    support: Vec<Point>,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDiscrete {
    support: Vec<Point>,
    probs: Vec<f64>,
}

impl TryFrom<RawDiscrete> for DiscreteDensity {
    type Error = DrFreeError;
    fn try_from(raw: RawDiscrete) -> Result<Self> {
        DiscreteDensity::new(raw.support, raw.probs)
    }
}

impl DiscreteDensity {
    pub fn new(support: Vec<Point>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(DrFreeError::EmptyInput);
        }
        if support.len() != probs.len() {
            return Err(DrFreeError::DimensionMismatch {
                expected: support.len(),
                got: probs.len(),
            });
        }
        let dim = support[0].len();
        for p in &support {
            if p.len() != dim {
                return Err(DrFreeError::DimensionMismatch { expected: dim, got: p.len() });
            }
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DrFreeError::InvalidDensity("negative or non-finite probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(DrFreeError::InvalidDensity(format!("probabilities sum to {total}")));
        }
        for i in 0..support.len() {
            for j in (i + 1)..support.len() {
                if support[i] == support[j] {
                    return Err(DrFreeError::InvalidDensity(format!(
                        "support points {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(Self { support, probs })
    }

    /// Density on the integer points `0, 1, ..., n-1` of the real line.
    pub fn on_indices(probs: Vec<f64>) -> Result<Self> {
        let support = (0..probs.len()).map(|i| vec![i as f64]).collect();
        Self::new(support, probs)
    }

    pub fn uniform(support: Vec<Point>) -> Result<Self> {
        let n = support.len();
        if n == 0 {
            return Err(DrFreeError::EmptyInput);
        }
        let probs = vec![1.0 / n as f64; n];
        // 1/n summed n times may miss 1 by a few ulps; fix the last entry.
        let mut probs = probs;
        let head: f64 = probs[..n - 1].iter().sum();
        probs[n - 1] = 1.0 - head;
        Self::new(support, probs)
    }

    pub fn support(&self) -> &[Point] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    /// Index of `point` in the support, if present.
    pub fn index_of(&self, point: &[f64]) -> Option<usize> {
        self.support.iter().position(|s| s.as_slice() == point)
    }

    /// Probability mass at `point` (0 when outside the support).
    pub fn prob_at(&self, point: &[f64]) -> f64 {
        self.index_of(point).map_or(0.0, |i| self.probs[i])
    }

    pub fn sample_one(&self, rng: &mut Rng) -> Point {
        self.support[self.sample_index(rng)].clone()
    }

    /// Inverse-CDF draw of a support index.
    pub fn sample_index(&self, rng: &mut Rng) -> usize {
        inverse_cdf(&self.probs, rng.uniform())
    }
}

/// Inverse CDF on a probability vector; zero-mass entries are never returned.
pub(crate) fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Multivariate normal with a cached lower Cholesky factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawGaussian", into = "RawGaussian")]
pub struct GaussianDensity {
    mean: Point,
    cov: Vec<Vec<f64>>,
    chol: Vec<Vec<f64>>,
    log_det: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGaussian {
    mean: Point,
    cov: Vec<Vec<f64>>,
}

impl TryFrom<RawGaussian> for GaussianDensity {
    type Error = DrFreeError;
    fn try_from(raw: RawGaussian) -> Result<Self> {
        GaussianDensity::new(raw.mean, raw.cov)
    }
}

impl From<GaussianDensity> for RawGaussian {
    fn from(g: GaussianDensity) -> Self {
        RawGaussian { mean: g.mean, cov: g.cov }
    }
}

impl PartialEq for GaussianDensity {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl GaussianDensity {
    pub fn new(mean: Point, cov: Vec<Vec<f64>>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(DrFreeError::EmptyInput);
        }
        if cov.len() != n {
            return Err(DrFreeError::DimensionMismatch { expected: n, got: cov.len() });
        }
        for row in &cov {
            if row.len() != n {
                return Err(DrFreeError::DimensionMismatch { expected: n, got: row.len() });
            }
        }
        if mean.iter().chain(cov.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(DrFreeError::InvalidDensity("non-finite parameter".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (cov[i][j] - cov[j][i]).abs() > 1e-12 {
                    return Err(DrFreeError::InvalidDensity("covariance is not symmetric".into()));
                }
            }
        }
        let chol = cholesky(&cov)?;
        let log_det = 2.0 * (0..n).map(|i| chol[i][i].ln()).sum::<f64>();
        Ok(Self { mean, cov, chol, log_det })
    }

    /// Isotropic Gaussian `N(mean, var * I)`.
    pub fn isotropic(mean: Point, var: f64) -> Result<Self> {
        let n = mean.len();
        let cov = (0..n)
            .map(|i| (0..n).map(|j| if i == j { var } else { 0.0 }).collect())
            .collect();
        Self::new(mean, cov)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[Vec<f64>] {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Same covariance, new mean.
    pub fn with_mean(&self, mean: Point) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(DrFreeError::DimensionMismatch { expected: self.dim(), got: mean.len() });
        }
        Ok(Self { mean, ..self.clone() })
    }

    /// Solves `L y = b` for the lower Cholesky factor.
    fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.chol[i][k] * y[k];
            }
            y[i] = s / self.chol[i][i];
        }
        y
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        self.forward_solve(&diff).iter().map(|v| v * v).sum()
    }

    /// `Σ^{-1}` via two triangular solves per column.
    fn inverse(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut inv = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let y = self.forward_solve(&e);
            // back-solve L^T x = y
            let mut x = vec![0.0; n];
            for i in (0..n).rev() {
                let mut s = y[i];
                for k in (i + 1)..n {
                    s -= self.chol[k][i] * x[k];
                }
                x[i] = s / self.chol[i][i];
            }
            for i in 0..n {
                inv[i][j] = x[i];
            }
        }
        inv
    }

    pub fn sample_one(&self, rng: &mut Rng) -> Point {
        let n = self.dim();
        let z: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        (0..n)
            .map(|i| self.mean[i] + (0..=i).map(|k| self.chol[i][k] * z[k]).sum::<f64>())
            .collect()
    }
}

/// Lower Cholesky factor; fails when a pivot drops below [`PIVOT_TOL`].
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > PIVOT_TOL) {
                    return Err(DrFreeError::NonPositiveDefinite);
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Either kind of density, serialized with a `"type"` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Density {
    Gaussian(GaussianDensity),
    Discrete(DiscreteDensity),
}

impl Density {
    pub fn dim(&self) -> usize {
        match self {
            Density::Gaussian(g) => g.dim(),
            Density::Discrete(d) => d.dim(),
        }
    }

    pub fn sample_one(&self, rng: &mut Rng) -> Point {
        match self {
            Density::Gaussian(g) => g.sample_one(rng),
            Density::Discrete(d) => d.sample_one(rng),
        }
    }

    /// Log-density (Gaussian) or log-mass (discrete) at `x`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        match self {
            Density::Gaussian(g) => log_pdf(g, x),
            Density::Discrete(d) => {
                if x.len() != d.dim() {
                    return Err(DrFreeError::DimensionMismatch { expected: d.dim(), got: x.len() });
                }
                Ok(d.prob_at(x).ln())
            }
        }
    }
}

impl From<GaussianDensity> for Density {
    fn from(g: GaussianDensity) -> Self {
        Density::Gaussian(g)
    }
}

impl From<DiscreteDensity> for Density {
    fn from(d: DiscreteDensity) -> Self {
        Density::Discrete(d)
    }
}

/// `Σ p ln(p/q)` with `0 ln 0 = 0`.
pub fn kl_discrete(p: &DiscreteDensity, q: &DiscreteDensity) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(DrFreeError::DimensionMismatch { expected: q.dim(), got: p.dim() });
    }
    let same_support = p.support == q.support;
    let mut kl = 0.0;
    for (i, &pi) in p.probs.iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        let qi = if same_support { q.probs[i] } else { q.prob_at(&p.support[i]) };
        if qi <= 0.0 {
            return Err(DrFreeError::AbsoluteContinuityViolation { index: i, p: pi });
        }
        kl += pi * (pi / qi).ln();
    }
    // Rounding can leave a tiny negative residue when p == q.
    Ok(kl.max(0.0))
}

/// Closed-form `KL(p || q)` between Gaussians.
pub fn kl_gaussian(p: &GaussianDensity, q: &GaussianDensity) -> Result<f64> {
    let n = p.dim();
    if q.dim() != n {
        return Err(DrFreeError::DimensionMismatch { expected: n, got: q.dim() });
    }
    let q_inv = q.inverse();
    let mut trace = 0.0;
    for i in 0..n {
        for k in 0..n {
            trace += q_inv[i][k] * p.cov[k][i];
        }
    }
    let quad = q.mahalanobis_sq(&p.mean);
    let kl = 0.5 * (trace + quad - n as f64 + q.log_det - p.log_det);
    Ok(kl.max(0.0))
}

/// Exact Gaussian log-density.
pub fn log_pdf(d: &GaussianDensity, x: &[f64]) -> Result<f64> {
    if x.len() != d.dim() {
        return Err(DrFreeError::DimensionMismatch { expected: d.dim(), got: x.len() });
    }
    Ok(-0.5 * (d.dim() as f64 * LN_2PI + d.log_det + d.mahalanobis_sq(x)))
}

/// `n` i.i.d. draws from `d`.
pub fn sample(d: &Density, rng: &mut Rng, n: usize) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(DrFreeError::InvalidArgument("sample count must be at least 1".into()));
    }
    Ok((0..n).map(|_| d.sample_one(rng)).collect())
}

/// `ln Σ w_i exp(v_i)` with max-subtraction.
pub fn log_sum_exp(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(DrFreeError::EmptyInput);
    }
    if values.len() != weights.len() {
        return Err(DrFreeError::DimensionMismatch { expected: values.len(), got: weights.len() });
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(DrFreeError::InvalidArgument("log_sum_exp weights must be non-negative".into()));
    }
    Ok(lse_weighted(values, weights))
}

/// Unchecked weighted log-sum-exp; zero-weight terms are skipped.
pub(crate) fn lse_weighted(values: &[f64], weights: &[f64]) -> f64 {
    let max = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, w)| w * (v - max).exp())
        .sum();
    max + s.ln()
}

/// Unweighted `ln Σ exp(v_i)`.
pub fn log_sum_exp_plain(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(DrFreeError::EmptyInput);
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Ok(max);
    }
    Ok(max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn kl_discrete_examples() {
        let u = DiscreteDensity::uniform((0..4).map(|i| vec![i as f64]).collect()).unwrap();
        assert_eq!(kl_discrete(&u, &u).unwrap(), 0.0);

        let p = DiscreteDensity::on_indices(vec![1.0, 0.0]).unwrap();
        let q = DiscreteDensity::on_indices(vec![0.5, 0.5]).unwrap();
        assert!(close(kl_discrete(&p, &q).unwrap(), std::f64::consts::LN_2, 1e-12));

        let err = kl_discrete(&q, &p).unwrap_err();
        assert!(matches!(err, DrFreeError::AbsoluteContinuityViolation { index: 1, .. }));
    }

    #[test]
    fn kl_discrete_subset_support() {
        let p = DiscreteDensity::new(vec![vec![2.0]], vec![1.0]).unwrap();
        let q = DiscreteDensity::on_indices(vec![0.25, 0.25, 0.5]).unwrap();
        assert!(close(kl_discrete(&p, &q).unwrap(), 2f64.ln(), 1e-12));
        let outside = DiscreteDensity::new(vec![vec![9.0]], vec![1.0]).unwrap();
        assert!(kl_discrete(&outside, &q).is_err());
    }

    #[test]
    fn kl_gaussian_examples() {
        let i2 = GaussianDensity::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(kl_gaussian(&i2, &i2).unwrap(), 0.0);

        let p = GaussianDensity::isotropic(vec![1.0], 1.0).unwrap();
        let q = GaussianDensity::isotropic(vec![0.0], 1.0).unwrap();
        assert!(close(kl_gaussian(&p, &q).unwrap(), 0.5, 1e-12));

        let p = GaussianDensity::isotropic(vec![0.0], 2.0).unwrap();
        let expected = 0.5 * (2.0 - 1.0 - 2f64.ln());
        assert!(close(kl_gaussian(&p, &q).unwrap(), expected, 1e-12));
        assert!(close(expected, 0.153426, 1e-6));
    }

    #[test]
    fn kl_gaussian_errors() {
        let a = GaussianDensity::isotropic(vec![0.0], 1.0).unwrap();
        let b = GaussianDensity::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        assert!(matches!(kl_gaussian(&a, &b), Err(DrFreeError::DimensionMismatch { .. })));
        let bad = GaussianDensity::new(vec![0.0, 0.0], vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(bad.unwrap_err(), DrFreeError::NonPositiveDefinite);
        let asym = GaussianDensity::new(vec![0.0, 0.0], vec![vec![1.0, 0.1], vec![0.0, 1.0]]);
        assert!(matches!(asym, Err(DrFreeError::InvalidDensity(_))));
    }

    #[test]
    fn log_pdf_examples() {
        let g = GaussianDensity::isotropic(vec![0.0], 1.0).unwrap();
        assert!(close(log_pdf(&g, &[0.0]).unwrap(), -0.5 * (2.0 * std::f64::consts::PI).ln(), 1e-12));
        assert!(close(log_pdf(&g, &[0.0]).unwrap(), -0.918939, 1e-6));

        let cov = vec![vec![0.001, 0.0002], vec![0.0002, 0.001]];
        let mu = vec![0.3, -0.2];
        let g = GaussianDensity::new(mu.clone(), cov.clone()).unwrap();
        let det: f64 = 0.001 * 0.001 - 0.0002 * 0.0002;
        let at_mean = -0.5 * ((2.0 * std::f64::consts::PI).powi(2) * det).ln();
        assert!(close(log_pdf(&g, &mu).unwrap(), at_mean, 1e-10));

        let centered = GaussianDensity::new(vec![0.0, 0.0], cov).unwrap();
        let delta = [0.01, -0.03];
        let shifted = [mu[0] + delta[0], mu[1] + delta[1]];
        assert!(close(log_pdf(&g, &shifted).unwrap(), log_pdf(&centered, &delta).unwrap(), 1e-10));
        assert!(log_pdf(&g, &[0.0]).is_err());
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!(close(log_sum_exp(&[0.0, 0.0], &[0.5, 0.5]).unwrap(), 0.0, 1e-15));
        let big = log_sum_exp(&[1000.0, 1000.0], &[1.0, 1.0]).unwrap();
        assert!(close(big, 1000.0 + std::f64::consts::LN_2, 1e-10));
        assert_eq!(log_sum_exp(&[3.7], &[1.0]).unwrap(), 3.7);
        assert_eq!(log_sum_exp(&[], &[]).unwrap_err(), DrFreeError::EmptyInput);
        assert!(log_sum_exp(&[1.0], &[1.0, 2.0]).is_err());
        assert!(close(log_sum_exp(&[-700.0, -700.0], &[1.0, 1.0]).unwrap(), -700.0 + 2f64.ln(), 1e-10));
    }

    #[test]
    fn sampling_examples() {
        let d: Density = DiscreteDensity::on_indices(vec![1.0, 0.0]).unwrap().into();
        let mut rng = Rng::new(1);
        let pts = sample(&d, &mut rng, 5).unwrap();
        assert!(pts.iter().all(|p| p == &vec![0.0]));
        assert!(sample(&d, &mut rng, 0).is_err());

        let g: Density = GaussianDensity::isotropic(vec![0.0, 0.0], 1.0).unwrap().into();
        let a = sample(&g, &mut Rng::new(42), 10_000).unwrap();
        let b = sample(&g, &mut Rng::new(42), 10_000).unwrap();
        assert_eq!(a, b);
        for c in 0..2 {
            let mean = a.iter().map(|p| p[c]).sum::<f64>() / a.len() as f64;
            assert!(mean.abs() < 0.05, "coordinate {c} mean {mean}");
        }
    }

    #[test]
    fn density_json_shapes() {
        let g: Density = GaussianDensity::isotropic(vec![1.0, 2.0], 0.5).unwrap().into();
        let json = serde_json::to_value(&g).unwrap();
        assert_eq!(json["type"], "gaussian");
        assert_eq!(json["cov"][1][1], 0.5);
        let back: Density = serde_json::from_value(json).unwrap();
        assert_eq!(back, g);

        let text = r#"{"type":"discrete","support":[[0.0],[1.0]],"probs":[0.25,0.75]}"#;
        let d: Density = serde_json::from_str(text).unwrap();
        assert!(matches!(d, Density::Discrete(ref dd) if dd.probs() == [0.25, 0.75]));
        let bad = r#"{"type":"discrete","support":[[0.0],[1.0]],"probs":[0.5,0.75]}"#;
        assert!(serde_json::from_str::<Density>(bad).is_err());
    }

    #[test]
    fn discrete_rejects_duplicate_support() {
        let r = DiscreteDensity::new(vec![vec![1.0], vec![1.0]], vec![0.5, 0.5]);
        assert!(matches!(r, Err(DrFreeError::InvalidDensity(_))));
    }
}
