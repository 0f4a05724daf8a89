//! Point estimates and evaluation metrics computed from chains.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mfm::LabelVector;
use crate::sampler::{ChainRecord, ModelState};
use crate::tensor::Direction;

fn choose2(m: usize) -> f64 {
    (m as f64) * (m as f64 - 1.0) / 2.0
}

/// Fraction of unordered pairs on which two partitions agree about being
/// together or apart.
pub fn rand_index(a: &LabelVector, b: &LabelVector) -> Result<f64> {
    rand_index_raw(&a.labels, &b.labels)
}

pub fn rand_index_raw(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "partitions have {} and {} items",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("rand index needs at least 2 items".into()));
    }
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let together_both: f64 = joint.values().map(|&m| choose2(m)).sum();
    let together_a: f64 = rows.values().map(|&m| choose2(m)).sum();
    let together_b: f64 = cols.values().map(|&m| choose2(m)).sum();
    let pairs = choose2(n);
    Ok((pairs - together_a - together_b + 2.0 * together_both) / pairs)
}

/// Posterior similarity matrix `M̄(i, j)`, the fraction of samples placing
/// `i` and `j` together. Accumulated over sample ranges and merged.
pub fn similarity_matrix(samples: &[LabelVector], exec: Execution) -> Result<Vec<Vec<f64>>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no samples".into()))?;
    let n = first.len();
    if samples.iter().any(|s| s.len() != n) {
        return Err(Error::DimensionMismatch("samples differ in length".into()));
    }
    let chunk = 64;
    let n_chunks = samples.len().div_ceil(chunk);
    let partials = exec.map_range(n_chunks, |c| {
        let mut acc = vec![0u32; n * n];
        for s in &samples[c * chunk..((c + 1) * chunk).min(samples.len())] {
            for i in 0..n {
                for j in 0..n {
                    if s.labels[i] == s.labels[j] {
                        acc[i * n + j] += 1;
                    }
                }
            }
        }
        acc
    });
    let mut total = vec![0u64; n * n];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v as u64;
        }
    }
    let m = samples.len() as f64;
    Ok((0..n)
        .map(|i| (0..n).map(|j| total[i * n + j] as f64 / m).collect())
        .collect())
}

/// Least-squares clustering: the sample whose co-membership matrix is
/// closest to the posterior similarity matrix. Returns the labels and the
/// 0-based index of the chosen sample; ties go to the earliest sample.
pub fn dahl_configuration(samples: &[LabelVector], exec: Execution) -> Result<(LabelVector, usize)> {
    let sim = similarity_matrix(samples, exec)?;
    let n = sim.len();
    let dists = exec.map_slice(samples, |s| {
        let mut d = 0.0;
        for i in 0..n {
            for j in 0..n {
                let m = if s.labels[i] == s.labels[j] { 1.0 } else { 0.0 };
                d += (m - sim[i][j]) * (m - sim[i][j]);
            }
        }
        d
    });
    let mut best = 0;
    for (t, &d) in dists.iter().enumerate() {
        if d < dists[best] {
            best = t;
        }
    }
    Ok((samples[best].clone(), best))
}

/// Point mass of a mixing measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub weight: f64,
    pub effect: Vec<f64>,
}

/// Discrete mixing measure `Σ π_h δ(γ_h)` over log main-effect vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingMeasure {
    pub direction: Direction,
    pub atoms: Vec<Atom>,
}

impl MixingMeasure {
    pub fn new(direction: Direction, atoms: Vec<Atom>) -> Result<Self> {
        let m = MixingMeasure { direction, atoms };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .atoms
            .first()
            .ok_or_else(|| Error::InvalidArgument("mixing measure has no atoms".into()))?;
        let dim = first.effect.len();
        for a in &self.atoms {
            if !(a.weight > 0.0 && a.weight <= 1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!("atom weight {} not in (0, 1]", a.weight)));
            }
            if a.effect.len() != dim {
                return Err(Error::DimensionMismatch("atoms differ in dimension".into()));
            }
        }
        let total: f64 = self.atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("atom weights sum to {total}")));
        }
        for (i, a) in self.atoms.iter().enumerate() {
            if self.atoms[..i].iter().any(|b| b.effect == a.effect) {
                return Err(Error::InvalidArgument("mixing measure atoms are not distinct".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].effect.len()
    }

    /// Measure with atoms at cluster effects and weights equal to cluster
    /// proportions under `labels`. Coinciding effects are merged.
    pub fn from_clusters(direction: Direction, labels: &[usize], effects: &[Vec<f64>]) -> Result<Self> {
        let n = labels.len() as f64;
        let mut atoms: Vec<Atom> = Vec::new();
        for (j, g) in effects.iter().enumerate() {
            let w = labels.iter().filter(|&&l| l == j + 1).count() as f64 / n;
            if w == 0.0 {
                continue;
            }
            match atoms.iter_mut().find(|a| a.effect == *g) {
                Some(a) => a.weight += w,
                None => atoms.push(Atom {
                    weight: w,
                    effect: g.clone(),
                }),
            }
        }
        Self::new(direction, atoms)
    }

    /// The same measure with its weighted mean log effect (over atoms and
    /// bins) subtracted from every coordinate. The likelihood only sees the
    /// sum of the three directions' effects, so a common shift of one
    /// direction is not identified; centering removes it.
    pub fn centered(&self) -> Self {
        let dim = self.dim() as f64;
        let level: f64 = self
            .atoms
            .iter()
            .map(|a| a.weight * a.effect.iter().sum::<f64>() / dim)
            .sum();
        MixingMeasure {
            direction: self.direction,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    weight: a.weight,
                    effect: a.effect.iter().map(|g| g - level).collect(),
                })
                .collect(),
        }
    }

    /// Mixing measure of one direction in a sampled state.
    pub fn from_state(state: &ModelState, d: Direction) -> Result<Self> {
        let ds = state.dir(d);
        Self::from_clusters(d, &ds.labels, &ds.effects)
    }
}

/// Wasserstein distance between the centered measures: invariant to a common
/// shift of either measure's log effects.
pub fn centered_wasserstein(g1: &MixingMeasure, g2: &MixingMeasure) -> Result<f64> {
    wasserstein(&g1.centered(), &g2.centered())
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// First-order Wasserstein distance between mixing measures with Euclidean
/// ground cost, solved exactly as a transportation problem.
pub fn wasserstein(g1: &MixingMeasure, g2: &MixingMeasure) -> Result<f64> {
    g1.validate()?;
    g2.validate()?;
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch(format!(
            "atoms of dimension {} vs {}",
            g1.dim(),
            g2.dim()
        )));
    }
    let supply: Vec<f64> = g1.atoms.iter().map(|a| a.weight).collect();
    let demand: Vec<f64> = g2.atoms.iter().map(|a| a.weight).collect();
    let cost: Vec<Vec<f64>> = g1
        .atoms
        .iter()
        .map(|a| g2.atoms.iter().map(|b| euclid(&a.effect, &b.effect)).collect())
        .collect();
    Ok(transport_cost(&supply, &demand, &cost).0)
}

/// Minimum-cost transport plan by successive shortest augmenting paths.
/// Returns the optimal cost and the coupling.
pub fn transport_cost(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let (k, m) = (supply.len(), demand.len());
    let nodes = k + m + 2;
    let (src, sink) = (k + m, k + m + 1);
    // edge list with paired reverse edges
    let mut to = Vec::new();
    let mut cap = Vec::new();
    let mut cst = Vec::new();
    let mut add = |a: usize, b: usize, c: f64, w: f64, to: &mut Vec<(usize, usize)>| {
        to.push((a, b));
        cap.push(c);
        cst.push(w);
        to.push((b, a));
        cap.push(0.0);
        cst.push(-w);
    };
    for (i, &s) in supply.iter().enumerate() {
        add(src, i, s, 0.0, &mut to);
    }
    for (i, row) in cost.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            add(i, k + j, f64::INFINITY, c, &mut to);
        }
    }
    for (j, &d) in demand.iter().enumerate() {
        add(k + j, sink, d, 0.0, &mut to);
    }
    let eps = 1e-15;
    loop {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut pred = vec![usize::MAX; nodes];
        dist[src] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for (e, &(a, b)) in to.iter().enumerate() {
                if cap[e] > eps && dist[a] + cst[e] < dist[b] - 1e-15 {
                    dist[b] = dist[a] + cst[e];
                    pred[b] = e;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != src {
            let e = pred[v];
            push = push.min(cap[e]);
            v = to[e].0;
        }
        let mut v = sink;
        while v != src {
            let e = pred[v];
            cap[e] -= push;
            cap[e ^ 1] += push;
            v = to[e].0;
        }
    }
    let mut plan = vec![vec![0.0; m]; k];
    let mut total = 0.0;
    let mut e = 2 * k;
    for (i, row) in plan.iter_mut().enumerate() {
        for (j, q) in row.iter_mut().enumerate() {
            *q = cap[e + 1];
            total += *q * cost[i][j];
            e += 2;
        }
    }
    (total, plan)
}

/// Posterior distribution of the occupied cluster count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KPosterior {
    pub histogram: BTreeMap<usize, f64>,
    /// Most frequent count; ties go to the smaller count.
    pub mode: usize,
}

pub fn k_posterior(counts: &[usize]) -> Result<KPosterior> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("no samples for the cluster-count posterior".into()));
    }
    let mut tally: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in counts {
        *tally.entry(c).or_default() += 1;
    }
    let mut mode = 0;
    let mut best = 0;
    for (&k, &c) in &tally {
        if c > best {
            best = c;
            mode = k;
        }
    }
    let n = counts.len() as f64;
    Ok(KPosterior {
        histogram: tally.into_iter().map(|(k, c)| (k, c as f64 / n)).collect(),
        mode,
    })
}

/// Cluster-count posterior of one direction over post-burn-in samples.
pub fn cluster_number_posterior(chain: &ChainRecord, d: Direction) -> Result<KPosterior> {
    k_posterior(&chain.cluster_counts(d))
}

/// Point estimate of one direction: Dahl labels plus the mixing measure of
/// the chosen sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSummary {
    pub direction: Direction,
    pub labels: Vec<usize>,
    /// Index of the chosen sample within the post-burn-in samples.
    pub chosen_sample: usize,
    pub k: KPosterior,
    pub mixing_measure: MixingMeasure,
}

pub fn summarize_direction(chain: &ChainRecord, d: Direction, exec: Execution) -> Result<DirectionSummary> {
    let labels = chain.labels(d);
    let (best, idx) = dahl_configuration(&labels, exec)?;
    let state = &chain.post_burn_in()[idx];
    Ok(DirectionSummary {
        direction: d,
        labels: best.labels,
        chosen_sample: idx,
        k: cluster_number_posterior(chain, d)?,
        mixing_measure: MixingMeasure::from_state(state, d)?,
    })
}

/// Evaluation of one direction against a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub direction: Direction,
    pub rand_index: f64,
    pub k_mode: usize,
    pub k_histogram: BTreeMap<usize, f64>,
    pub wasserstein_to_truth: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lv(l: &[usize]) -> LabelVector {
        LabelVector::new(Direction::Angle, l.to_vec()).unwrap()
    }

    fn atom(w: f64, e: &[f64]) -> Atom {
        Atom { weight: w, effect: e.to_vec() }
    }

    #[test]
    fn rand_index_examples() {
        assert_eq!(rand_index(&lv(&[1, 1, 2, 2]), &lv(&[1, 1, 2, 2])).unwrap(), 1.0);
        assert_relative_eq!(
            rand_index(&lv(&[1, 1, 2, 2]), &lv(&[1, 2, 1, 2])).unwrap(),
            2.0 / 6.0,
            epsilon = 1e-15
        );
        assert_eq!(rand_index(&lv(&[1, 1, 1, 1]), &lv(&[1, 2, 3, 4])).unwrap(), 0.0);
        assert!(rand_index(&lv(&[1, 1]), &lv(&[1, 1, 1])).is_err());
    }

    #[test]
    fn dahl_examples() {
        let s = vec![lv(&[1, 1, 2]); 4];
        assert_eq!(dahl_configuration(&s, Execution::Sequential).unwrap().1, 0);
        let one = vec![lv(&[1, 2, 3])];
        assert_eq!(dahl_configuration(&one, Execution::Sequential).unwrap().0, one[0]);
        let three = vec![lv(&[1, 2, 2]), lv(&[1, 1, 2]), lv(&[1, 1, 2])];
        assert_eq!(dahl_configuration(&three, Execution::Sequential).unwrap().1, 1);
        assert!(dahl_configuration(&[], Execution::Sequential).is_err());
    }

    #[test]
    fn wasserstein_examples() {
        let a = MixingMeasure::new(Direction::Angle, vec![atom(0.3, &[0.0, 1.0]), atom(0.7, &[2.0, 0.0])]).unwrap();
        assert_relative_eq!(wasserstein(&a, &a).unwrap(), 0.0, epsilon = 1e-15);
        let d0 = MixingMeasure::new(Direction::Angle, vec![atom(1.0, &[0.0])]).unwrap();
        let d1 = MixingMeasure::new(Direction::Angle, vec![atom(1.0, &[1.0])]).unwrap();
        assert_relative_eq!(wasserstein(&d0, &d1).unwrap(), 1.0, epsilon = 1e-15);
        let split = MixingMeasure::new(Direction::Angle, vec![atom(0.5, &[0.0]), atom(0.5, &[2.0])]).unwrap();
        assert_relative_eq!(wasserstein(&split, &d0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(wasserstein(&a, &d0).is_err());
    }

    #[test]
    fn mixing_measure_validation() {
        assert!(MixingMeasure::new(Direction::Angle, vec![atom(0.5, &[0.0])]).is_err());
        assert!(MixingMeasure::new(Direction::Angle, vec![atom(0.5, &[0.0]), atom(0.5, &[0.0])]).is_err());
        let m = MixingMeasure::from_clusters(Direction::Angle, &[1, 1, 2, 1], &[vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(m.atoms, vec![atom(0.75, &[1.0]), atom(0.25, &[2.0])]);
    }

    #[test]
    fn k_posterior_examples() {
        let p = k_posterior(&[2, 2, 2]).unwrap();
        assert_eq!(p.mode, 2);
        assert_eq!(p.histogram, BTreeMap::from([(2, 1.0)]));
        let p = k_posterior(&[2, 2, 3]).unwrap();
        assert_eq!(p.mode, 2);
        assert_relative_eq!(p.histogram[&2], 2.0 / 3.0);
        assert_relative_eq!(p.histogram[&3], 1.0 / 3.0);
        assert_eq!(k_posterior(&[3, 2, 3, 2]).unwrap().mode, 2);
    }

    #[test]
    fn centering_removes_a_common_shift() {
        let g = MixingMeasure::new(Direction::Angle, vec![atom(0.25, &[0.0, 1.0]), atom(0.75, &[2.0, 2.0])]).unwrap();
        let shifted = MixingMeasure::new(Direction::Angle, vec![atom(0.25, &[0.5, 1.5]), atom(0.75, &[2.5, 2.5])]).unwrap();
        assert_relative_eq!(wasserstein(&g, &shifted).unwrap(), 0.5 * 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(centered_wasserstein(&g, &shifted).unwrap(), 0.0, epsilon = 1e-12);
        // Weighted mean level: 0.25 * 0.5 + 0.75 * 2 = 1.625.
        assert_relative_eq!(g.centered().atoms[0].effect[0], -1.625, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn rand_index_symmetric_and_label_invariant(
            a in proptest::collection::vec(1usize..5, 2..30),
            seed in 0usize..100,
        ) {
            let b: Vec<usize> = a.iter().enumerate().map(|(i, &x)| 1 + (x * 7 + i * seed) % 3).collect();
            let ab = rand_index_raw(&a, &b).unwrap();
            prop_assert_eq!(ab, rand_index_raw(&b, &a).unwrap());
            let relabel_a: Vec<usize> = a.iter().map(|&x| 10 - x).collect();
            let relabel_b: Vec<usize> = b.iter().map(|&x| x + 40).collect();
            prop_assert_eq!(ab, rand_index_raw(&relabel_a, &relabel_b).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn dahl_picks_an_input(samples in proptest::collection::vec(proptest::collection::vec(1usize..4, 6), 1..12)) {
            let s: Vec<LabelVector> = samples.iter().map(|v| lv(v)).collect();
            let (best, idx) = dahl_configuration(&s, Execution::Parallel).unwrap();
            prop_assert_eq!(&best, &s[idx]);
            prop_assert_eq!(dahl_configuration(&s, Execution::Sequential).unwrap().1, idx);
        }
    }
}
