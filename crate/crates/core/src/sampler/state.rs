use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfm::{canonical_labels, LabelVector};
use crate::spatial::CarParams;
use crate::tensor::{Direction, MainEffectVector};

/// Clustering state of one direction.
///
/// Occupied clusters are `1..=t` in order of first appearance; `effects[j-1]`
/// is the log main effect of cluster `j`. `weights` has truncation length
/// `T`: entries `0..t` belong to occupied clusters, entries `t..k` to
/// unoccupied stick components, and entries `k..T` are exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionState {
    pub direction: Direction,
    pub k: usize,
    pub labels: Vec<usize>,
    pub effects: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub car: CarParams,
}

impl DirectionState {
    /// Number of occupied clusters.
    pub fn n_occupied(&self) -> usize {
        self.effects.len()
    }

    pub fn label_vector(&self) -> LabelVector {
        LabelVector {
            direction: self.direction,
            labels: self.labels.clone(),
        }
    }

    pub fn effect_vectors(&self) -> Vec<MainEffectVector> {
        self.effects
            .iter()
            .map(|g| MainEffectVector {
                direction: self.direction,
                log_gamma: g.clone(),
            })
            .collect()
    }

    /// Occupancy count per occupied cluster.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_occupied()];
        for &l in &self.labels {
            c[l - 1] += 1;
        }
        c
    }

    /// Moves clusters into first-appearance order, drops the effects of
    /// components that no unit uses and keeps their weights behind the
    /// occupied block.
    ///
    /// `candidates` holds effect vectors of every weight component `0..k`
    /// (occupied and freshly instantiated); labels index into it, 1-based.
    pub fn canonicalize_from(&mut self, candidates: Vec<Vec<f64>>) {
        let old_labels = std::mem::take(&mut self.labels);
        let new_labels = canonical_labels(&old_labels);
        let t = new_labels.iter().copied().max().unwrap_or(0);
        let mut order = vec![usize::MAX; t];
        for (&o, &n) in old_labels.iter().zip(&new_labels) {
            order[n - 1] = o - 1;
        }
        let mut used = vec![false; self.weights.len()];
        for &o in &order {
            used[o] = true;
        }
        let mut cand: Vec<Option<Vec<f64>>> = candidates.into_iter().map(Some).collect();
        self.effects = order
            .iter()
            .map(|&o| cand[o].take().expect("occupied component has an effect vector"))
            .collect();
        let mut weights: Vec<f64> = order.iter().map(|&o| self.weights[o]).collect();
        weights.extend(
            self.weights
                .iter()
                .enumerate()
                .filter(|&(i, &w)| !used[i] && w > 0.0)
                .map(|(_, &w)| w),
        );
        weights.resize(self.weights.len(), 0.0);
        self.weights = weights;
        self.labels = new_labels;
    }

    pub fn check(&self, n_units: usize, dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InconsistentState(format!("{}: {m}", self.direction)));
        if self.labels.len() != n_units {
            return bad(format!("{} labels for {n_units} units", self.labels.len()));
        }
        let t = self.n_occupied();
        if t == 0 || t > self.k || self.k > self.weights.len() {
            return bad(format!(
                "occupied={t}, k={}, truncation={}",
                self.k,
                self.weights.len()
            ));
        }
        if canonical_labels(&self.labels) != self.labels {
            return bad("labels not in canonical order".into());
        }
        if self.labels.iter().copied().max() != Some(t) {
            return bad("empty occupied cluster".into());
        }
        for &l in &self.labels {
            if !(self.weights[l - 1] > 0.0) {
                return bad(format!("label {l} has zero weight"));
            }
        }
        if self.weights[..self.k].iter().any(|&w| !(w > 0.0)) || self.weights[self.k..].iter().any(|&w| w != 0.0) {
            return bad("weights must be positive up to k and zero after".into());
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("weights do not sum to 1".into());
        }
        for g in &self.effects {
            if g.len() != dim || g.iter().any(|v| !v.is_finite()) {
                return bad("effect vector has wrong length or non-finite entries".into());
            }
        }
        self.car
            .validate()
            .map_err(|e| Error::InconsistentState(format!("{}: {e}", self.direction)))
    }
}

/// Joint state of the three directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub directions: [DirectionState; 3],
    pub log_posterior: f64,
}

impl ModelState {
    pub fn dir(&self, d: Direction) -> &DirectionState {
        &self.directions[d.index()]
    }

    pub fn dir_mut(&mut self, d: Direction) -> &mut DirectionState {
        &mut self.directions[d.index()]
    }

    pub fn check(&self, n_units: usize, dims: [usize; 3]) -> Result<()> {
        for d in Direction::ALL {
            if self.dir(d).direction != d {
                return Err(Error::InconsistentState("directions out of order".into()));
            }
            self.dir(d).check(n_units, dims[d.index()])?;
        }
        if !self.log_posterior.is_finite() {
            return Err(Error::InconsistentState(format!(
                "log posterior is {}",
                self.log_posterior
            )));
        }
        Ok(())
    }

    /// Occupied cluster counts `(t1, t2, t3)`.
    pub fn n_clusters(&self) -> [usize; 3] {
        [0, 1, 2].map(|i| self.directions[i].n_occupied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalize_reorders_and_prunes() {
        let mut s = DirectionState {
            direction: Direction::Angle,
            k: 4,
            labels: vec![3, 3, 1, 3],
            effects: vec![],
            weights: vec![0.1, 0.2, 0.3, 0.4, 0.0],
            car: CarParams { sigma2: 1.0, rho: 0.0, bounds: None },
        };
        let cand = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        s.canonicalize_from(cand);
        assert_eq!(s.labels, vec![1, 1, 2, 1]);
        assert_eq!(s.effects, vec![vec![3.0], vec![1.0]]);
        assert_eq!(s.weights, vec![0.3, 0.1, 0.2, 0.4, 0.0]);
        s.check(4, 1).unwrap();
    }
}
