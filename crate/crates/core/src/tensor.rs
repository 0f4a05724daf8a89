//! Count tensors and the rank-one Poisson likelihood.
//!
//! A unit's tensor `Y` has Poisson cells with mean `γ1[i]·γ2[j]·γ3[k]`. Main
//! effects are always carried on the natural-log scale, so the log-mean of a
//! cell is the additive form `log γ1[i] + log γ2[j] + log γ3[k]`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

/// One of the three tensor directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Angle,
    Distance,
    Quarter,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Angle, Direction::Distance, Direction::Quarter];

    /// Zero-based axis index.
    pub fn index(self) -> usize {
        match self {
            Direction::Angle => 0,
            Direction::Distance => 1,
            Direction::Quarter => 2,
        }
    }

    /// One-based direction number as used in reports.
    pub fn number(self) -> usize {
        self.index() + 1
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Direction::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("direction index {index} not in 0..3")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Angle => "angle",
            Direction::Distance => "distance",
            Direction::Quarter => "quarter",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Extents `(p1, p2, p3)`.
pub type Dims = [usize; 3];

/// Dense row-major three-way count tensor for one observation unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTensor {
    pub unit_id: String,
    pub dims: Dims,
    pub counts: Vec<u64>,
}

impl CountTensor {
    pub fn new(unit_id: impl Into<String>, dims: Dims, counts: Vec<u64>) -> Result<Self> {
        let t = CountTensor {
            unit_id: unit_id.into(),
            dims,
            counts,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn zeros(unit_id: impl Into<String>, dims: Dims) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(unit_id, dims, vec![0; len])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::DimensionMismatch(format!(
                "unit {}: every extent must be positive, got {:?}",
                self.unit_id, self.dims
            )));
        }
        let expected: usize = self.dims.iter().product();
        if self.counts.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "unit {}: dims {:?} need {} counts, found {}",
                self.unit_id,
                self.dims,
                expected,
                self.counts.len()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> u64 {
        self.counts[self.offset(i, j, k)]
    }

    pub fn get_mut(&mut self, i: usize, j: usize, k: usize) -> &mut u64 {
        let o = self.offset(i, j, k);
        &mut self.counts[o]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Sums over the two directions other than `keep`.
    pub fn marginal(&self, keep: Direction) -> Vec<u64> {
        let [p1, p2, p3] = self.dims;
        let mut out = vec![0u64; self.dims[keep.index()]];
        for i in 0..p1 {
            for j in 0..p2 {
                for k in 0..p3 {
                    let y = self.counts[(i * p2 + j) * p3 + k];
                    out[[i, j, k][keep.index()]] += y;
                }
            }
        }
        out
    }

    /// `Σ log(y!)` over all cells.
    pub fn log_factorial_sum(&self) -> f64 {
        self.counts.iter().map(|&y| log_factorial(y)).sum()
    }
}

/// `log(y!)`; tabulated for small `y`, log-gamma beyond.
pub fn log_factorial(y: u64) -> f64 {
    ln_factorial(y)
}

/// Per-direction main effect on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainEffectVector {
    pub direction: Direction,
    pub log_gamma: Vec<f64>,
}

impl MainEffectVector {
    pub fn new(direction: Direction, log_gamma: Vec<f64>) -> Result<Self> {
        if let Some(bad) = log_gamma.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{direction} main effect has non-finite entry {bad}"
            )));
        }
        Ok(MainEffectVector {
            direction,
            log_gamma,
        })
    }

    pub fn zeros(direction: Direction, len: usize) -> Self {
        MainEffectVector {
            direction,
            log_gamma: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.log_gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_gamma.is_empty()
    }

    /// Natural-scale effects `γ = exp(log γ)`.
    pub fn gamma(&self) -> Vec<f64> {
        self.log_gamma.iter().map(|v| v.exp()).collect()
    }

    /// `Σ_a γ[a]`.
    pub fn exp_sum(&self) -> f64 {
        self.log_gamma.iter().map(|v| v.exp()).sum()
    }
}

/// Real-valued tensor of cell log-means.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMeanTensor {
    pub dims: Dims,
    pub values: Vec<f64>,
}

impl LogMeanTensor {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    pub fn mean(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.exp()).collect()
    }
}

/// Log-mean tensor of the rank-one model: entry `(i, j, k)` is
/// `g1[i] + g2[j] + g3[k]`.
pub fn rank_one_log_mean(
    g1: &MainEffectVector,
    g2: &MainEffectVector,
    g3: &MainEffectVector,
) -> Result<LogMeanTensor> {
    for (g, d) in [g1, g2, g3].into_iter().zip(Direction::ALL) {
        if g.direction != d {
            return Err(Error::DimensionMismatch(format!(
                "expected a {d} main effect in position {}, got {}",
                d.number(),
                g.direction
            )));
        }
        if g.is_empty() {
            return Err(Error::DimensionMismatch(format!("{d} main effect is empty")));
        }
    }
    let dims = [g1.len(), g2.len(), g3.len()];
    let mut values = Vec::with_capacity(dims.iter().product());
    for &a in &g1.log_gamma {
        for &b in &g2.log_gamma {
            for &c in &g3.log_gamma {
                values.push(a + b + c);
            }
        }
    }
    Ok(LogMeanTensor { dims, values })
}

/// As [`rank_one_log_mean`], additionally checking the result against `dims`.
pub fn rank_one_log_mean_for(
    dims: Dims,
    g1: &MainEffectVector,
    g2: &MainEffectVector,
    g3: &MainEffectVector,
) -> Result<LogMeanTensor> {
    let m = rank_one_log_mean(g1, g2, g3)?;
    if m.dims != dims {
        return Err(Error::DimensionMismatch(format!(
            "main effects have lengths {:?}, target dims {:?}",
            m.dims, dims
        )));
    }
    Ok(m)
}

/// Poisson log-likelihood of a single cell.
#[inline]
pub fn poisson_cell_loglik(y: u64, log_mean: f64) -> f64 {
    let ll = if y == 0 {
        -log_mean.exp()
    } else {
        y as f64 * log_mean - log_mean.exp()
    };
    ll - log_factorial(y)
}

/// `Σ_{ijk} [y log μ − μ − log y!]` with `μ = exp(log_mean)`.
pub fn poisson_loglik(y: &CountTensor, log_mean: &LogMeanTensor) -> Result<f64> {
    if y.dims != log_mean.dims || y.counts.len() != log_mean.values.len() {
        return Err(Error::DimensionMismatch(format!(
            "count tensor dims {:?} vs log-mean dims {:?}",
            y.dims, log_mean.dims
        )));
    }
    if let Some(bad) = log_mean.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite log-mean {bad}")));
    }
    Ok(y
        .counts
        .iter()
        .zip(&log_mean.values)
        .map(|(&c, &lm)| poisson_cell_loglik(c, lm))
        .sum())
}

/// Sufficient statistics of one unit under the rank-one model.
///
/// Because the mean factorizes, the log-likelihood only depends on the three
/// marginal count vectors:
/// `ll = Σ_ℓ m_ℓ·g_ℓ − Π_ℓ Σ_a exp(g_ℓ[a]) − Σ log y!`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitStats {
    pub marginals: [Vec<f64>; 3],
    pub total: f64,
    pub log_factorial_sum: f64,
}

impl UnitStats {
    pub fn from_tensor(y: &CountTensor) -> Self {
        let to_f = |v: Vec<u64>| v.into_iter().map(|c| c as f64).collect::<Vec<_>>();
        UnitStats {
            marginals: [
                to_f(y.marginal(Direction::Angle)),
                to_f(y.marginal(Direction::Distance)),
                to_f(y.marginal(Direction::Quarter)),
            ],
            total: y.total() as f64,
            log_factorial_sum: y.log_factorial_sum(),
        }
    }

    /// Rank-one log-likelihood given the three log-effect vectors and their
    /// precomputed exp-sums.
    pub fn loglik(&self, effects: [&[f64]; 3], exp_sums: [f64; 3]) -> f64 {
        let linear: f64 = (0..3)
            .map(|d| dot(&self.marginals[d], effects[d]))
            .sum();
        linear - exp_sums[0] * exp_sums[1] * exp_sums[2] - self.log_factorial_sum
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks that every tensor shares one set of dims; returns them.
pub fn common_dims(data: &[CountTensor]) -> Result<Dims> {
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))?;
    for t in data {
        t.validate()?;
        if t.dims != first.dims {
            return Err(Error::DimensionMismatch(format!(
                "unit {} has dims {:?}, unit {} has {:?}",
                t.unit_id, t.dims, first.unit_id, first.dims
            )));
        }
    }
    Ok(first.dims)
}

/// Reads a dataset file: a JSON array of tensor objects.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<CountTensor>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let data: Vec<CountTensor> = serde_json::from_str(&text)?;
    for t in &data {
        t.validate()?;
    }
    Ok(data)
}

pub fn write_dataset(path: impl AsRef<Path>, data: &[CountTensor]) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(data)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
