//! Neighborhood graphs and the CAR-style covariance `Σ = σ²(I − ρW)`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Direction;

/// Symmetric 0/1 adjacency with zero diagonal, stored as an edge list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AdjacencyFile", into = "AdjacencyFile")]
pub struct Adjacency {
    size: usize,
    edges: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdjacencyFile {
    size: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<AdjacencyFile> for Adjacency {
    type Error = Error;

    fn try_from(f: AdjacencyFile) -> Result<Self> {
        Adjacency::from_edges(f.size, f.edges)
    }
}

impl From<Adjacency> for AdjacencyFile {
    fn from(a: Adjacency) -> Self {
        AdjacencyFile {
            size: a.size,
            edges: a.edges,
        }
    }
}

impl Adjacency {
    /// Builds from zero-based undirected edges; duplicates and orientation
    /// are normalized away.
    pub fn from_edges(size: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("adjacency size must be positive".into()));
        }
        let mut norm = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= size || b >= size {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) out of range for size {size}"
                )));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at vertex {a}")));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        norm.dedup();
        Ok(Adjacency { size, edges: norm })
    }

    /// Graph with no edges; used for directions of extent 1.
    pub fn empty(size: usize) -> Result<Self> {
        Self::from_edges(size, Vec::new())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.size, self.size);
        for &(a, b) in &self.edges {
            m[(a, b)] = 1.0;
            m[(b, a)] = 1.0;
        }
        m
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.size];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    /// Relabels vertex `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.size {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        Self::from_edges(
            self.size,
            self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect(),
        )
    }
}

/// Chain graph over `p` ordered bins.
pub fn path_adjacency(p: usize) -> Result<Adjacency> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!(
            "path adjacency needs at least 2 vertices, got {p}"
        )));
    }
    Adjacency::from_edges(p, (1..p).map(|i| (i - 1, i)).collect())
}

/// Default neighborhood for a direction of extent `p`: a path graph, or the
/// empty graph when `p == 1`.
pub fn default_adjacency(p: usize) -> Result<Adjacency> {
    if p == 1 {
        Adjacency::empty(1)
    } else {
        path_adjacency(p)
    }
}

/// `(1/λ_min, 1/λ_max)` of the adjacency spectrum.
pub fn rho_bounds(w: &Adjacency) -> Result<(f64, f64)> {
    let eig = SymmetricEigen::new(w.matrix());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12;
    if min >= -tol || max <= tol {
        return Err(Error::DegenerateSpectrum { min, max });
    }
    Ok((1.0 / min, 1.0 / max))
}

/// How `(σ², ρ, W)` become a covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceForm {
    /// `σ²(I − ρW)`.
    #[default]
    Literal,
    /// `σ²(I − ρW)⁻¹`, the conventional CAR form.
    Inverse,
}

/// Variance scale and spatial dependence of one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarParams {
    pub sigma2: f64,
    pub rho: f64,
    /// `(c1, c2)`, or `None` when the graph has no edges and `ρ` is inert.
    pub bounds: Option<(f64, f64)>,
}

impl CarParams {
    pub fn new(sigma2: f64, rho: f64, bounds: Option<(f64, f64)>) -> Result<Self> {
        let p = CarParams {
            sigma2,
            rho,
            bounds,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        match self.bounds {
            Some((c1, c2)) if !(c1 < self.rho && self.rho < c2) => Err(Error::InvalidArgument(
                format!("rho {} outside ({c1}, {c2})", self.rho),
            )),
            None if self.rho != 0.0 => Err(Error::InvalidArgument(
                "rho must be 0 for an edgeless graph".into(),
            )),
            _ => Ok(()),
        }
    }
}

pub fn covariance(w: &Adjacency, params: &CarParams, form: CovarianceForm) -> Result<DMatrix<f64>> {
    let p = w.size();
    let base = DMatrix::<f64>::identity(p, p) - w.matrix() * params.rho;
    let m = match form {
        CovarianceForm::Literal => base,
        CovarianceForm::Inverse => base.try_inverse().ok_or_else(|| {
            Error::InvalidArgument(format!("I - rho W singular at rho={}", params.rho))
        })?,
    };
    Ok(m * params.sigma2)
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Zero-mean multivariate normal log density through a Cholesky factor.
pub fn mvn_logpdf(x: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    let factor = MvnFactor::new(cov.clone())
        .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))?;
    factor.log_density(x)
}

/// Cached factorization of a covariance matrix.
#[derive(Debug, Clone)]
pub struct MvnFactor {
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl MvnFactor {
    pub fn new(cov: DMatrix<f64>) -> Option<Self> {
        let p = cov.nrows();
        let chol = Cholesky::new(cov)?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return None;
        }
        Some(MvnFactor {
            chol,
            log_norm: -0.5 * (p as f64 * LN_2PI + log_det),
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} vs covariance of size {}",
                x.len(),
                self.dim()
            )));
        }
        let v = DVector::from_column_slice(x);
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&v)
            .ok_or_else(|| Error::InvalidArgument("singular triangular factor".into()))?;
        Ok(self.log_norm - 0.5 * z.norm_squared())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample(StandardNormal)));
        (self.chol.l() * z).iter().copied().collect()
    }
}

/// Prior of one direction's effect vectors: graph, bounds, covariance form.
#[derive(Debug, Clone)]
pub struct CarPrior {
    pub direction: Direction,
    pub adjacency: Adjacency,
    pub bounds: Option<(f64, f64)>,
    pub form: CovarianceForm,
}

impl CarPrior {
    pub fn new(direction: Direction, adjacency: Adjacency, form: CovarianceForm) -> Result<Self> {
        let bounds = if adjacency.edges().is_empty() {
            None
        } else {
            Some(rho_bounds(&adjacency)?)
        };
        Ok(CarPrior {
            direction,
            adjacency,
            bounds,
            form,
        })
    }

    pub fn dim(&self) -> usize {
        self.adjacency.size()
    }

    /// Factorizes `Σ(σ², ρ)`; failure names the direction and `ρ`.
    pub fn factor(&self, params: &CarParams) -> Result<MvnFactor> {
        let fail = || Error::Factorization {
            direction: self.direction.number(),
            rho: params.rho,
            sigma2: params.sigma2,
        };
        let cov = covariance(&self.adjacency, params, self.form).map_err(|_| fail())?;
        MvnFactor::new(cov).ok_or_else(fail)
    }

    /// Log of the uniform prior density on `ρ`; zero for edgeless graphs.
    pub fn rho_log_prior(&self, rho: f64) -> f64 {
        match self.bounds {
            Some((c1, c2)) if c1 < rho && rho < c2 => -(c2 - c1).ln(),
            Some(_) => f64::NEG_INFINITY,
            None => 0.0,
        }
    }
}

/// Univariate normal log density, used by tests and diagnostics.
pub fn normal_logpdf(x: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + x * x / var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Independent cyclic Jacobi eigenvalue routine used as an oracle.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        off += a[i][j] * a[i][j];
                    }
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][i]).collect()
    }

    fn dense(w: &Adjacency) -> Vec<Vec<f64>> {
        let m = w.matrix();
        (0..w.size()).map(|i| (0..w.size()).map(|j| m[(i, j)]).collect()).collect()
    }

    #[test]
    fn path_shapes() {
        let w = path_adjacency(2).unwrap();
        assert_eq!(w.matrix(), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let w3 = path_adjacency(3).unwrap();
        assert_eq!(
            w3.matrix(),
            DMatrix::from_row_slice(3, 3, &[0., 1., 0., 1., 0., 1., 0., 1., 0.])
        );
        assert_eq!(path_adjacency(6).unwrap().degrees(), vec![1, 2, 2, 2, 2, 1]);
        assert!(path_adjacency(1).is_err());
        let m = path_adjacency(5).unwrap().matrix();
        assert_eq!(m, m.transpose());
        assert!(m.diagonal().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn bounds_examples() {
        let (c1, c2) = rho_bounds(&path_adjacency(2).unwrap()).unwrap();
        assert_relative_eq!(c1, -1.0, epsilon = 1e-12);
        assert_relative_eq!(c2, 1.0, epsilon = 1e-12);
        let (c1, c2) = rho_bounds(&path_adjacency(3).unwrap()).unwrap();
        let ev = jacobi_eigenvalues(dense(&path_adjacency(3).unwrap()));
        let (mn, mx) = ev.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert_relative_eq!(mn, -2f64.sqrt(), epsilon = 1e-10);
        assert_relative_eq!(c1, 1.0 / mn, epsilon = 1e-10);
        assert_relative_eq!(c2, 1.0 / mx, epsilon = 1e-10);
        assert_relative_eq!(c2, 1.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert!(matches!(
            rho_bounds(&Adjacency::empty(3).unwrap()),
            Err(Error::DegenerateSpectrum { .. })
        ));
    }

    #[test]
    fn interior_rho_is_positive_definite() {
        for p in [2usize, 3, 4, 11, 12] {
            let w = path_adjacency(p).unwrap();
            let (c1, c2) = rho_bounds(&w).unwrap();
            let eps = 1e-6;
            for g in 0..100 {
                let rho = (c1 + eps) + (c2 - c1 - 2.0 * eps) * g as f64 / 99.0;
                let mut m = dense(&w);
                for i in 0..p {
                    for j in 0..p {
                        m[i][j] = if i == j { 1.0 } else { -rho * m[i][j] };
                    }
                }
                let smallest = jacobi_eigenvalues(m).into_iter().fold(f64::MAX, f64::min);
                assert!(smallest > 0.0, "p={p} rho={rho} eig={smallest}");
                let prior = CarPrior::new(Direction::Angle, w.clone(), CovarianceForm::Literal).unwrap();
                prior.factor(&CarParams { sigma2: 1.3, rho, bounds: prior.bounds }).unwrap();
                let inv = CarPrior::new(Direction::Angle, w.clone(), CovarianceForm::Inverse).unwrap();
                inv.factor(&CarParams { sigma2: 1.3, rho, bounds: inv.bounds }).unwrap();
            }
        }
    }

    #[test]
    fn factorization_error_names_direction() {
        let prior = CarPrior::new(Direction::Distance, path_adjacency(3).unwrap(), CovarianceForm::Literal).unwrap();
        let err = prior
            .factor(&CarParams { sigma2: 1.0, rho: 0.9, bounds: None })
            .unwrap_err();
        match err {
            Error::Factorization { direction, rho, .. } => {
                assert_eq!(direction, 2);
                assert_eq!(rho, 0.9);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn mvn_examples() {
        let v = mvn_logpdf(&[0.0], &DMatrix::identity(1, 1)).unwrap();
        assert_relative_eq!(v, -0.5 * (2.0 * PI).ln(), epsilon = 1e-14);
        for p in 1..6 {
            let v = mvn_logpdf(&vec![0.0; p], &DMatrix::identity(p, p)).unwrap();
            assert_relative_eq!(v, -(p as f64) / 2.0 * (2.0 * PI).ln(), epsilon = 1e-13);
        }
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let v = mvn_logpdf(&[1.0, 1.0], &cov).unwrap();
        assert_relative_eq!(v, -(2.0 * PI).ln() - 2f64.ln() - 0.5, epsilon = 1e-13);
        assert!(mvn_logpdf(&[1.0], &DMatrix::from_row_slice(1, 1, &[-1.0])).is_err());
    }

    #[test]
    fn adjacency_json_roundtrip() {
        let w = path_adjacency(4).unwrap();
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, r#"{"size":4,"edges":[[0,1],[1,2],[2,3]]}"#);
        let back: Adjacency = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
        assert!(serde_json::from_str::<Adjacency>(r#"{"size":2,"edges":[[0,5]]}"#).is_err());
    }

    proptest! {
        #[test]
        fn diagonal_mvn_is_sum_of_univariates(
            xs in proptest::collection::vec(-5.0f64..5.0, 1..8),
            vs in proptest::collection::vec(0.1f64..4.0, 8),
        ) {
            let p = xs.len();
            let cov = DMatrix::from_diagonal(&DVector::from_iterator(p, vs[..p].iter().copied()));
            let joint = mvn_logpdf(&xs, &cov).unwrap();
            let sum: f64 = xs.iter().zip(&vs).map(|(&x, &v)| normal_logpdf(x, v)).sum();
            prop_assert!((joint - sum).abs() < 1e-12);
        }

        #[test]
        fn bounds_invariant_under_relabeling(p in 2usize..9, seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let w = path_adjacency(p).unwrap();
            let mut perm: Vec<usize> = (0..p).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = rho_bounds(&w).unwrap();
            let b = rho_bounds(&w.permuted(&perm).unwrap()).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-10 && (a.1 - b.1).abs() < 1e-10);
        }
    }
}
