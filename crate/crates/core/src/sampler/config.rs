use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mfm::MfmConfig;
use crate::spatial::{Adjacency, CovarianceForm};
use crate::tensor::Direction;

/// One value per tensor direction.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerDirection<T> {
    pub angle: T,
    pub distance: T,
    pub quarter: T,
}

impl<T> PerDirection<T> {
    pub fn splat(v: T) -> Self
    where
        T: Clone,
    {
        PerDirection {
            angle: v.clone(),
            distance: v.clone(),
            quarter: v,
        }
    }

    pub fn get(&self, d: Direction) -> &T {
        match d {
            Direction::Angle => &self.angle,
            Direction::Distance => &self.distance,
            Direction::Quarter => &self.quarter,
        }
    }

    pub fn get_mut(&mut self, d: Direction) -> &mut T {
        match d {
            Direction::Angle => &mut self.angle,
            Direction::Distance => &mut self.distance,
            Direction::Quarter => &mut self.quarter,
        }
    }
}

/// Settings of one MCMC run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Number of full sweeps.
    pub n_iter: usize,
    /// Record every `thin`-th sweep.
    pub thin: usize,
    /// Recorded samples discarded before summaries, in thinned units.
    pub burn_in: usize,
    pub seed: u64,
    /// Initial random-walk scale for effect vectors.
    pub mh_step_effects: f64,
    /// Random-walk scale on `log σ²`.
    pub mh_step_sigma2: f64,
    /// Random-walk scale on `ρ`.
    pub mh_step_rho: f64,
    /// Tune `mh_step_effects` during burn-in, then freeze it.
    pub adapt: bool,
    pub mfm: PerDirection<MfmConfig>,
    /// Shape and rate of the Gamma prior on `σ²`.
    pub gamma_prior_ab: (f64, f64),
    pub covariance_form: CovarianceForm,
    /// Clusters per direction in the starting state.
    pub init_clusters: usize,
    /// When false the data term is dropped and the chain targets the prior.
    pub likelihood: bool,
    /// Neighborhood graph overrides; path graphs otherwise.
    pub adjacency: PerDirection<Option<Adjacency>>,
    /// How per-unit label likelihoods are evaluated inside a sweep.
    pub label_execution: Execution,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_iter: 10_000,
            thin: 2,
            burn_in: 2_000,
            seed: 0,
            mh_step_effects: 0.1,
            mh_step_sigma2: 0.5,
            mh_step_rho: 0.3,
            adapt: true,
            mfm: PerDirection::splat(MfmConfig::default()),
            gamma_prior_ab: (1.0, 1.0),
            covariance_form: CovarianceForm::Literal,
            init_clusters: 6,
            likelihood: true,
            adjacency: PerDirection::default(),
            label_execution: Execution::Sequential,
        }
    }
}

/// Target acceptance rate of the effect-vector random walk.
pub const TARGET_ACCEPTANCE: f64 = 0.3;
/// Band the adapted acceptance rate is expected to land in.
pub const ACCEPTANCE_BAND: (f64, f64) = (0.15, 0.5);

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.thin == 0 {
            return Err(Error::Config("n_iter and thin must be positive".into()));
        }
        if self.burn_in >= self.n_samples() {
            return Err(Error::Config(format!(
                "burn_in ({}) must be less than n_iter / thin ({})",
                self.burn_in,
                self.n_samples()
            )));
        }
        for (name, v) in [
            ("mh_step_effects", self.mh_step_effects),
            ("mh_step_sigma2", self.mh_step_sigma2),
            ("mh_step_rho", self.mh_step_rho),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        let (a, b) = self.gamma_prior_ab;
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Config(format!("gamma_prior_ab must be positive, got ({a}, {b})")));
        }
        if self.init_clusters == 0 {
            return Err(Error::Config("init_clusters must be at least 1".into()));
        }
        for d in Direction::ALL {
            let m = self.mfm.get(d);
            m.validate()?;
            if self.init_clusters > m.truncation_t {
                return Err(Error::Config(format!(
                    "init_clusters ({}) exceeds truncation_t ({}) for {d}",
                    self.init_clusters, m.truncation_t
                )));
            }
        }
        Ok(())
    }

    /// Number of recorded samples, `n_iter / thin`.
    pub fn n_samples(&self) -> usize {
        self.n_iter / self.thin
    }

    /// Sweeps during which step sizes adapt.
    pub fn burn_in_sweeps(&self) -> usize {
        self.burn_in * self.thin
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_schedule() {
        let c = SamplerConfig::default();
        c.validate().unwrap();
        assert_eq!(c.n_samples(), 5_000);
        assert_eq!(c.n_samples() - c.burn_in, 3_000);
    }

    #[test]
    fn burn_in_must_leave_samples() {
        let c = SamplerConfig {
            n_iter: 100,
            thin: 2,
            burn_in: 50,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<SamplerConfig>(r#"{"n_iter": 10, "bogus": 1}"#);
        assert!(err.is_err());
        let ok: SamplerConfig = serde_json::from_str(r#"{"n_iter": 10, "burn_in": 1}"#).unwrap();
        assert_eq!(ok.n_iter, 10);
        assert_eq!(ok.thin, 2);
    }
}
