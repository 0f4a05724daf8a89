//! Mixture-of-finite-mixtures prior mathematics.
//!
//! The prior on the cluster count is the shifted Poisson `K − 1 ~ Poisson(ψ)`.
//! Given `K`, weights are `Dir(ν, …, ν)`; with `ν = 1` this is exactly the
//! law of the exponential stick-breaking construction in
//! [`stick_breaking_sample`].

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::tensor::Direction;

/// Maximum number of series terms summed by [`log_vn`].
pub const VN_SERIES_CAP: usize = 5_000;
const VN_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfmConfig {
    /// Symmetric Dirichlet parameter of the urn scheme.
    pub dirichlet_gamma: f64,
    /// Symmetric Dirichlet parameter of the weights in the hierarchical model.
    pub nu: f64,
    /// Rate of the stick-breaking exponentials; `K − 1 ~ Poisson(psi)`.
    pub psi: f64,
    /// Length of the truncated weight vector.
    pub truncation_t: usize,
}

impl Default for MfmConfig {
    fn default() -> Self {
        MfmConfig {
            dirichlet_gamma: 1.0,
            nu: 1.0,
            psi: 1.0,
            truncation_t: 15,
        }
    }
}

impl MfmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("mfm.{name} must be positive, got {v}")))
            }
        };
        positive("dirichlet_gamma", self.dirichlet_gamma)?;
        positive("nu", self.nu)?;
        positive("psi", self.psi)?;
        if self.truncation_t < 2 {
            return Err(Error::Config(format!(
                "mfm.truncation_t must be at least 2, got {}",
                self.truncation_t
            )));
        }
        Ok(())
    }
}

/// `log p(K = k)` under `K − 1 ~ Poisson(psi)`.
pub fn k_prior_log_pmf(k: usize, cfg: &MfmConfig) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidArgument("cluster count must be at least 1".into()));
    }
    let m = (k - 1) as u64;
    Ok(-cfg.psi + m as f64 * cfg.psi.ln() - ln_factorial(m))
}

fn log_falling(k: usize, t: usize) -> f64 {
    // k (k-1) ... (k-t+1), zero when t > k
    ln_factorial(k as u64) - ln_factorial((k - t) as u64)
}

fn log_rising(x: f64, n: usize) -> f64 {
    ln_gamma(x + n as f64) - ln_gamma(x)
}

/// `log Σ_{k ≥ max(t,1)} k_(t) / (γk)^(n) · p(k)`; `t = 0` allowed.
fn log_vn_series(t: usize, n: usize, cfg: &MfmConfig) -> Result<f64> {
    let gamma = cfg.dirichlet_gamma;
    let mut acc = f64::NEG_INFINITY;
    let mut prev = f64::NEG_INFINITY;
    for k in t.max(1)..=VN_SERIES_CAP {
        let term = log_falling(k, t) - log_rising(gamma * k as f64, n) + k_prior_log_pmf(k, cfg)?;
        acc = log_add(acc, term);
        // Once terms shrink by at least half per step the remaining tail is
        // bounded by twice the current term.
        let shrinking = term - prev < -std::f64::consts::LN_2;
        if shrinking && term + std::f64::consts::LN_2 - acc < VN_REL_TOL.ln() {
            return Ok(acc);
        }
        prev = term;
    }
    Err(Error::SeriesNonConvergence {
        n,
        t,
        gamma,
        terms: VN_SERIES_CAP,
    })
}

/// `log V_n(t)`, the MFM partition coefficient, for `1 ≤ t ≤ n`.
pub fn log_vn(t: usize, n: usize, cfg: &MfmConfig) -> Result<f64> {
    if n == 0 || t == 0 || t > n {
        return Err(Error::InvalidArgument(format!(
            "log_vn needs 1 <= t <= n, got t={t}, n={n}"
        )));
    }
    log_vn_series(t, n, cfg)
}

/// Memoized `log V_n(t)` for one configuration. Owned by a single chain.
#[derive(Debug, Clone)]
pub struct VnCache {
    cfg: MfmConfig,
    values: HashMap<(usize, usize), f64>,
}

impl VnCache {
    pub fn new(cfg: MfmConfig) -> Self {
        VnCache {
            cfg,
            values: HashMap::new(),
        }
    }

    pub fn log_vn(&mut self, t: usize, n: usize) -> Result<f64> {
        if let Some(&v) = self.values.get(&(n, t)) {
            return Ok(v);
        }
        let v = if t == 0 {
            log_vn_series(0, n, &self.cfg)?
        } else {
            log_vn(t, n, &self.cfg)?
        };
        self.values.insert((n, t), v);
        Ok(v)
    }
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `log Σ exp(x)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Cluster assignments along one direction; labels are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub direction: Direction,
    pub labels: Vec<usize>,
}

impl LabelVector {
    pub fn new(direction: Direction, labels: Vec<usize>) -> Result<Self> {
        if labels.contains(&0) {
            return Err(Error::InvalidArgument("labels are 1-based; found 0".into()));
        }
        Ok(LabelVector { direction, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Relabels clusters `1..t` in order of first appearance.
    pub fn canonicalize(&mut self) {
        self.labels = canonical_labels(&self.labels);
    }

    pub fn canonical(&self) -> Self {
        LabelVector {
            direction: self.direction,
            labels: canonical_labels(&self.labels),
        }
    }

    /// Number of distinct labels.
    pub fn n_clusters(&self) -> usize {
        let mut seen: Vec<usize> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Sizes of clusters `1..=max label`; absent labels have size 0.
    pub fn sizes(&self) -> Vec<usize> {
        let max = self.labels.iter().copied().max().unwrap_or(0);
        let mut sizes = vec![0; max];
        for &l in &self.labels {
            sizes[l - 1] += 1;
        }
        sizes
    }
}

pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: HashMap<usize, usize> = HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len() + 1;
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Unnormalized Pólya-urn weights for placing one more observation.
#[derive(Debug, Clone, PartialEq)]
pub struct UrnWeights {
    /// `|c| + γ` for each existing cluster, in label order.
    pub existing: Vec<f64>,
    /// `V_n(t+1)/V_n(t) · γ`.
    pub new_cluster: f64,
}

impl UrnWeights {
    pub fn normalized(&self) -> (Vec<f64>, f64) {
        let total: f64 = self.existing.iter().sum::<f64>() + self.new_cluster;
        (
            self.existing.iter().map(|w| w / total).collect(),
            self.new_cluster / total,
        )
    }
}

/// Urn conditional given the partition of the other observations.
///
/// `others` holds the labels of every observation except the one being
/// placed; `n` is the total number of observations.
pub fn urn_weights(others: &LabelVector, n: usize, cache: &mut VnCache) -> Result<UrnWeights> {
    let gamma = cache.cfg.dirichlet_gamma;
    if others.len() >= n {
        return Err(Error::InvalidArgument(format!(
            "urn needs fewer than n={n} placed observations, got {}",
            others.len()
        )));
    }
    let sizes: Vec<usize> = others.sizes().into_iter().filter(|&s| s > 0).collect();
    let t = sizes.len();
    let existing = sizes.iter().map(|&s| s as f64 + gamma).collect();
    let new_cluster = if t == 0 {
        1.0
    } else {
        (cache.log_vn(t + 1, n)? - cache.log_vn(t, n)?).exp() * gamma
    };
    Ok(UrnWeights {
        existing,
        new_cluster,
    })
}

/// Cluster count and weights from the stick-breaking construction.
#[derive(Debug, Clone, PartialEq)]
pub struct StickBreak {
    pub k: usize,
    pub weights: Vec<f64>,
}

impl StickBreak {
    /// Weights padded with zeros to length `t`.
    pub fn truncated(&self, t: usize) -> Vec<f64> {
        let mut w = self.weights.clone();
        w.resize(t.max(w.len()), 0.0);
        w
    }
}

/// Applies the stick-breaking steps to a supplied sequence of exponential
/// draws: `K` is the first index whose cumulative sum reaches 1.
pub fn stick_breaking_from_draws<I>(draws: I, truncation_t: usize) -> Result<StickBreak>
where
    I: IntoIterator<Item = f64>,
{
    let mut weights = Vec::new();
    let mut cum = 0.0;
    for eta in draws {
        if cum + eta >= 1.0 {
            weights.push(1.0 - cum);
            return Ok(StickBreak {
                k: weights.len(),
                weights,
            });
        }
        if weights.len() + 1 >= truncation_t {
            return Err(Error::TruncationExceeded {
                k: weights.len() + 2,
                truncation: truncation_t,
            });
        }
        weights.push(eta);
        cum += eta;
    }
    Err(Error::InvalidArgument(
        "stick-breaking draw sequence ended before the sticks reached 1".into(),
    ))
}

pub fn stick_breaking_sample<R: Rng + ?Sized>(cfg: &MfmConfig, rng: &mut R) -> Result<StickBreak> {
    cfg.validate()?;
    let exp = Exp::new(cfg.psi).map_err(|e| Error::Config(e.to_string()))?;
    let draws = std::iter::repeat_with(|| exp.sample(rng));
    stick_breaking_from_draws(draws, cfg.truncation_t)
}

/// Draws a vector from `Dir(alpha)`.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let mut draws = Vec::with_capacity(alpha.len());
    for &a in alpha {
        let g = Gamma::new(a, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        draws.push(g.sample(rng));
    }
    let total: f64 = draws.iter().sum();
    if !(total > 0.0) {
        // every gamma underflowed; only possible for tiny shapes
        let i = rng.gen_range(0..alpha.len());
        return Ok((0..alpha.len()).map(|j| if j == i { 1.0 } else { 0.0 }).collect());
    }
    Ok(draws.into_iter().map(|g| g / total).collect())
}

/// Log-probabilities of `K ∈ [t, T]` given an occupied partition with `t`
/// blocks over `n` items: `p(K) · K_(t) · Γ(νK) / Γ(νK + n)`, normalized.
/// Entry `i` corresponds to `K = t + i`.
pub fn k_conditional_log_probs(t: usize, n: usize, cfg: &MfmConfig) -> Result<Vec<f64>> {
    if t == 0 || t > cfg.truncation_t {
        return Err(Error::InvalidArgument(format!(
            "occupied cluster count {t} outside 1..={}",
            cfg.truncation_t
        )));
    }
    let mut lp = Vec::with_capacity(cfg.truncation_t - t + 1);
    for k in t..=cfg.truncation_t {
        lp.push(
            k_prior_log_pmf(k, cfg)? + log_falling(k, t) - log_rising(cfg.nu * k as f64, n),
        );
    }
    let z = log_sum_exp(&lp);
    Ok(lp.into_iter().map(|v| v - z).collect())
}

/// Draws `(K, π)` given occupancy counts of the occupied clusters (all
/// positive, canonical order). Returns a length-`T` weight vector whose first
/// `len(counts)` entries belong to the occupied clusters, followed by the
/// unoccupied components up to `K`, then exact zeros.
///
/// The `K_(t)` factor accounts for the number of ways to place `t` blocks
/// among `K` labelled components, since callers hold canonical labels.
pub fn sample_weights_given_counts<R: Rng + ?Sized>(
    counts: &[usize],
    cfg: &MfmConfig,
    rng: &mut R,
) -> Result<StickBreak> {
    if counts.contains(&0) {
        return Err(Error::InvalidArgument("occupancy counts must be positive".into()));
    }
    let t = counts.len();
    let n: usize = counts.iter().sum();
    let lp = k_conditional_log_probs(t, n, cfg)?;
    let k = t + sample_log_categorical(&lp, rng).ok_or_else(|| {
        Error::InvalidArgument("cluster-count conditional has no mass".into())
    })?;
    let alpha: Vec<f64> = (0..k)
        .map(|j| cfg.nu + counts.get(j).copied().unwrap_or(0) as f64)
        .collect();
    let mut weights = sample_dirichlet(&alpha, rng)?;
    weights.resize(cfg.truncation_t, 0.0);
    Ok(StickBreak { k, weights })
}

/// Samples an index with probability proportional to `exp(logw[i])`.
/// Returns `None` if every weight is `-inf` or NaN.
pub fn sample_log_categorical<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> Option<usize> {
    let m = logw
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let probs: Vec<f64> = logw
        .iter()
        .map(|&v| if v.is_nan() { 0.0 } else { (v - m).exp() })
        .collect();
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = None;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = Some(i);
            if u < p {
                return Some(i);
            }
            u -= p;
        }
    }
    last
}
