//! K-means and DBSCAN on plain feature vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Restarts of k-means, keeping the lowest within-cluster sum of squares.
pub const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// 1-based cluster labels.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares of the best restart.
    pub wcss: f64,
    /// Objective after each Lloyd iteration of the best restart.
    pub trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_vectors(vectors: &[Vec<f64>]) -> Result<usize> {
    let d = vectors
        .first()
        .map(|v| v.len())
        .ok_or_else(|| Error::InvalidArgument("no vectors to cluster".into()))?;
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::DimensionMismatch("vectors differ in length".into()));
    }
    Ok(d)
}

fn plus_plus_init<R: Rng>(vectors: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut centroids = vec![vectors[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        let c = vectors[idx].clone();
        for (d, v) in d2.iter_mut().zip(vectors) {
            *d = d.min(sq_dist(v, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(vectors: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut obj = 0.0;
    for (v, l) in vectors.iter().zip(labels.iter_mut()) {
        let (best, d) = centroids
            .iter()
            .enumerate()
            .map(|(j, c)| (j, sq_dist(v, c)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        *l = best;
        obj += d;
    }
    obj
}

fn lloyd(vectors: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let n = vectors.len();
    let d = vectors[0].len();
    let k = centroids.len();
    let mut labels = vec![0; n];
    let mut trace = vec![assign(vectors, &centroids, &mut labels)];
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (v, &l) in vectors.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(v) {
                *s += x;
            }
        }
        for j in 0..k {
            // an empty cluster keeps its previous centroid
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let obj = assign(vectors, &centroids, &mut labels);
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if obj >= prev {
            break;
        }
    }
    (labels, centroids, trace)
}

/// Lloyd's algorithm with k-means++ seeding and [`KMEANS_RESTARTS`]
/// restarts; deterministic per seed. Labels are 1-based in first-appearance
/// order.
pub fn kmeans(vectors: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit> {
    check_vectors(vectors)?;
    if k == 0 || k > vectors.len() {
        return Err(Error::InvalidArgument(format!(
            "k-means needs 1 <= k <= n, got k={k}, n={}",
            vectors.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..KMEANS_RESTARTS {
        let init = plus_plus_init(vectors, k, &mut rng);
        let (labels, centroids, trace) = lloyd(vectors, init);
        let wcss = *trace.last().unwrap();
        if best.as_ref().is_none_or(|b| wcss < b.wcss) {
            best = Some(KMeansFit {
                labels: labels.iter().map(|l| l + 1).collect(),
                centroids,
                wcss,
                trace,
            });
        }
    }
    let mut fit = best.expect("at least one restart");
    fit.labels = crate::mfm::canonical_labels(&fit.labels);
    Ok(fit)
}

/// Density-based clustering with Euclidean distance.
///
/// Core points have at least `min_pts` neighbors within `eps` (counting
/// themselves). Core points within `eps` of each other share a cluster; a
/// border point joins the cluster of its nearest core point, ties going to
/// the lexicographically smallest core vector so the result does not depend
/// on input order. Noise points become singleton clusters. Labels are
/// 1-based in first-appearance order.
pub fn dbscan(vectors: &[Vec<f64>], eps: f64, min_pts: usize) -> Result<Vec<usize>> {
    check_vectors(vectors)?;
    if !(eps > 0.0) || min_pts == 0 {
        return Err(Error::InvalidArgument(format!(
            "dbscan needs eps > 0 and min_pts >= 1, got eps={eps}, min_pts={min_pts}"
        )));
    }
    let n = vectors.len();
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| sq_dist(&vectors[i], &vectors[j]) <= eps2).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in (0..n).filter(|&i| core[i]) {
        for &j in neighbors[i].iter().filter(|&&j| core[j]) {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut group = vec![usize::MAX; n];
    for i in 0..n {
        if core[i] {
            group[i] = find(&mut parent, i);
        }
    }
    let mut raw = vec![0usize; n];
    for i in 0..n {
        raw[i] = if core[i] {
            group[i]
        } else {
            let nearest = neighbors[i]
                .iter()
                .copied()
                .filter(|&j| core[j])
                .min_by(|&a, &b| {
                    sq_dist(&vectors[i], &vectors[a])
                        .total_cmp(&sq_dist(&vectors[i], &vectors[b]))
                        .then_with(|| lex_cmp(&vectors[a], &vectors[b]))
                });
            match nearest {
                Some(j) => group[j],
                None => n + i, // noise: its own singleton
            }
        };
    }
    Ok(crate::mfm::canonical_labels(&raw))
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn clouds(seed: u64, per: usize, sep: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut v = Vec::new();
        let mut truth = Vec::new();
        for c in 0..2 {
            for _ in 0..per {
                v.push(vec![c as f64 * sep + noise.sample(&mut rng), noise.sample(&mut rng)]);
                truth.push(c + 1);
            }
        }
        (v, truth)
    }

    #[test]
    fn kmeans_separates_clouds() {
        let (v, truth) = clouds(1, 30, 20.0);
        let fit = kmeans(&v, 2, 7).unwrap();
        assert_eq!(fit.labels, truth);
    }

    #[test]
    fn kmeans_single_cluster_and_errors() {
        let (v, _) = clouds(2, 10, 5.0);
        assert!(kmeans(&v, 1, 0).unwrap().labels.iter().all(|&l| l == 1));
        assert!(kmeans(&v, 21, 0).is_err());
        assert!(kmeans(&v, 0, 0).is_err());
    }

    #[test]
    fn kmeans_objective_monotone_and_deterministic() {
        let (v, _) = clouds(3, 40, 1.0);
        let a = kmeans(&v, 4, 99).unwrap();
        for w in a.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", a.trace);
        }
        assert_eq!(a, kmeans(&v, 4, 99).unwrap());
    }

    #[test]
    fn dbscan_basic_shapes() {
        let same = vec![vec![1.0, 2.0]; 8];
        assert!(dbscan(&same, 0.5, 5).unwrap().iter().all(|&l| l == 1));
        let (v, truth) = clouds(4, 25, 30.0);
        assert_eq!(dbscan(&v, 3.0, 5).unwrap(), truth);
        assert!(dbscan(&v, 0.0, 5).is_err());
    }

    #[test]
    fn dbscan_noise_points_are_singletons() {
        let v = vec![vec![0.0], vec![0.1], vec![0.2], vec![50.0], vec![100.0]];
        let l = dbscan(&v, 0.5, 3).unwrap();
        assert_eq!(l, vec![1, 1, 1, 2, 3]);
    }
}
