//! Metropolis-within-Gibbs sampler for the multidirectional MFM tensor model.
//!
//! One sweep updates, for every direction in turn: labels (Gibbs, with
//! unoccupied stick components instantiated from the prior), occupied effect
//! vectors (random-walk Metropolis), weights and cluster count (exact
//! conditional draw), and the covariance parameters (random-walk Metropolis).

mod config;
mod record;
mod state;

pub use config::{PerDirection, SamplerConfig, ACCEPTANCE_BAND, TARGET_ACCEPTANCE};
pub use record::{read_chain, write_chain, AcceptanceRates, ChainHeader, ChainRecord};
pub use state::{DirectionState, ModelState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use crate::baseline::kmeans;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mfm::{k_prior_log_pmf, sample_log_categorical, sample_weights_given_counts};
use crate::spatial::{default_adjacency, CarParams, CarPrior, MvnFactor};
use crate::tensor::{common_dims, dot, CountTensor, Dims, Direction, UnitStats};

const INIT_FIT_ROUNDS: usize = 25;

/// Deterministic RNG for chain `stream` of a run seeded with `seed`.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Data, priors and configuration shared by every update.
#[derive(Debug, Clone)]
pub struct Model {
    pub dims: Dims,
    pub units: Vec<UnitStats>,
    pub unit_ids: Vec<String>,
    pub priors: [CarPrior; 3],
    pub cfg: SamplerConfig,
}

/// Log-joint split into blocks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LogJointBlocks {
    pub likelihood: f64,
    pub effects: f64,
    pub sigma2: f64,
    pub rho: f64,
    pub weights: f64,
    pub labels: f64,
}

impl LogJointBlocks {
    pub fn total(&self) -> f64 {
        self.likelihood + self.effects + self.sigma2 + self.rho + self.weights + self.labels
    }
}

/// Accept/propose tallies of one Metropolis block.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Tally {
    pub accepted: usize,
    pub proposed: usize,
}

impl Tally {
    pub fn add(&mut self, other: Tally) {
        self.accepted += other.accepted;
        self.proposed += other.proposed;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Metropolis tallies of one sweep, per direction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepTallies {
    pub effects: [Tally; 3],
    pub sigma2: [Tally; 3],
    pub rho: [Tally; 3],
}

fn gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

fn exp_sum(g: &[f64]) -> f64 {
    g.iter().map(|v| v.exp()).sum()
}

impl Model {
    pub fn new(data: &[CountTensor], cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = common_dims(data)?;
        let mut priors = Vec::with_capacity(3);
        for d in Direction::ALL {
            let p = dims[d.index()];
            let w = match cfg.adjacency.get(d) {
                Some(w) if w.size() != p => {
                    return Err(Error::Config(format!(
                        "{d} adjacency has size {}, tensor extent is {p}",
                        w.size()
                    )))
                }
                Some(w) => w.clone(),
                None => default_adjacency(p)?,
            };
            priors.push(CarPrior::new(d, w, cfg.covariance_form)?);
        }
        let priors: [CarPrior; 3] = priors.try_into().expect("three directions");
        Ok(Model {
            dims,
            units: data.iter().map(UnitStats::from_tensor).collect(),
            unit_ids: data.iter().map(|t| t.unit_id.clone()).collect(),
            priors,
            cfg,
        })
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    fn prior(&self, d: Direction) -> &CarPrior {
        &self.priors[d.index()]
    }

    /// Exp-sums of every occupied effect vector, per direction.
    fn exp_sums(state: &ModelState) -> [Vec<f64>; 3] {
        [0, 1, 2].map(|i| state.directions[i].effects.iter().map(|g| exp_sum(g)).collect())
    }

    /// Product of the other two directions' exp-sums for each unit.
    fn other_products(state: &ModelState, d: Direction, sums: &[Vec<f64>; 3]) -> Vec<f64> {
        let others: Vec<usize> = (0..3).filter(|&i| i != d.index()).collect();
        (0..state.directions[0].labels.len())
            .map(|u| {
                others
                    .iter()
                    .map(|&o| sums[o][state.directions[o].labels[u] - 1])
                    .product()
            })
            .collect()
    }

    /// Poisson log-likelihood of all units.
    pub fn log_likelihood(&self, state: &ModelState) -> f64 {
        let sums = Self::exp_sums(state);
        self.units
            .iter()
            .enumerate()
            .map(|(u, s)| {
                let z = [0, 1, 2].map(|i| state.directions[i].labels[u] - 1);
                s.loglik(
                    [0, 1, 2].map(|i| state.directions[i].effects[z[i]].as_slice()),
                    [0, 1, 2].map(|i| sums[i][z[i]]),
                )
            })
            .sum()
    }

    pub fn log_joint_blocks(&self, state: &ModelState) -> Result<LogJointBlocks> {
        state.check(self.n_units(), self.dims)?;
        let mut b = LogJointBlocks {
            likelihood: if self.cfg.likelihood {
                self.log_likelihood(state)
            } else {
                0.0
            },
            ..Default::default()
        };
        let (a, rate) = self.cfg.gamma_prior_ab;
        for d in Direction::ALL {
            let ds = state.dir(d);
            let prior = self.prior(d);
            let factor = prior.factor(&ds.car)?;
            for g in &ds.effects {
                b.effects += factor.log_density(g)?;
            }
            b.sigma2 += gamma_log_pdf(ds.car.sigma2, a, rate);
            b.rho += prior.rho_log_prior(ds.car.rho);
            let mfm = self.cfg.mfm.get(d);
            let nu = mfm.nu;
            b.weights += k_prior_log_pmf(ds.k, mfm)?
                + ln_gamma(nu * ds.k as f64)
                - ds.k as f64 * ln_gamma(nu)
                + (nu - 1.0) * ds.weights[..ds.k].iter().map(|w| w.ln()).sum::<f64>();
            b.labels += ds.labels.iter().map(|&l| ds.weights[l - 1].ln()).sum::<f64>();
        }
        Ok(b)
    }

    /// Log joint density of the state (likelihood omitted when disabled).
    pub fn log_joint(&self, state: &ModelState) -> Result<f64> {
        Ok(self.log_joint_blocks(state)?.total())
    }

    /// Starting state: k-means on per-unit log profiles in each direction,
    /// effects from pooled cluster profiles.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelState> {
        let n = self.n_units();
        let mean_total =
            self.units.iter().map(|s| s.total).sum::<f64>() / n as f64 + 0.5;
        let level = mean_total.ln() / 3.0;
        let mut dirs = Vec::with_capacity(3);
        for d in Direction::ALL {
            let p = self.dims[d.index()];
            let profiles: Vec<Vec<f64>> = self
                .units
                .iter()
                .map(|s| {
                    let m = &s.marginals[d.index()];
                    let tot: f64 = m.iter().sum::<f64>() + 0.5 * p as f64;
                    m.iter().map(|c| ((c + 0.5) / tot).ln()).collect()
                })
                .collect();
            let k0 = self.cfg.init_clusters.min(n);
            let labels = kmeans(&profiles, k0, rng.gen())?.labels;
            let t = labels.iter().copied().max().unwrap_or(1);
            let mut pooled = vec![vec![0.0; p]; t];
            for (s, &l) in self.units.iter().zip(&labels) {
                for (acc, c) in pooled[l - 1].iter_mut().zip(&s.marginals[d.index()]) {
                    *acc += c;
                }
            }
            let effects: Vec<Vec<f64>> = pooled
                .iter()
                .map(|m| {
                    let tot: f64 = m.iter().sum::<f64>() + 0.5 * p as f64;
                    m.iter().map(|c| ((c + 0.5) / tot).ln() + level).collect()
                })
                .collect();
            let mut counts = vec![0; t];
            for &l in &labels {
                counts[l - 1] += 1;
            }
            let sb = sample_weights_given_counts(&counts, self.cfg.mfm.get(d), rng)?;
            let (a, b) = self.cfg.gamma_prior_ab;
            let prior = self.prior(d);
            dirs.push(DirectionState {
                direction: d,
                k: sb.k,
                labels,
                effects,
                weights: sb.weights,
                car: CarParams {
                    sigma2: a / b,
                    rho: 0.0,
                    bounds: prior.bounds,
                },
            });
        }
        let mut state = ModelState {
            directions: dirs.try_into().expect("three directions"),
            log_posterior: 0.0,
        };
        if self.cfg.likelihood {
            self.fit_initial_effects(&mut state);
        }
        state.log_posterior = self.log_joint(&state)?;
        Ok(state)
    }

    /// Coordinate ascent on the Poisson likelihood over the effects with
    /// labels held fixed, so that cluster levels are consistent across
    /// directions before any label moves.
    fn fit_initial_effects(&self, state: &mut ModelState) {
        for _ in 0..INIT_FIT_ROUNDS {
            for d in Direction::ALL {
                let sums = Self::exp_sums(state);
                let others = Self::other_products(state, d, &sums);
                let ds = state.dir_mut(d);
                let p = self.dims[d.index()];
                let t = ds.effects.len();
                let mut num = vec![vec![0.5; p]; t];
                let mut den = vec![0.5 * p as f64; t];
                for (u, &l) in ds.labels.iter().enumerate() {
                    for (acc, c) in num[l - 1].iter_mut().zip(&self.units[u].marginals[d.index()]) {
                        *acc += c;
                    }
                    den[l - 1] += others[u];
                }
                for (g, (nm, dn)) in ds.effects.iter_mut().zip(num.iter().zip(&den)) {
                    for (ga, na) in g.iter_mut().zip(nm) {
                        *ga = (na / dn).ln();
                    }
                }
            }
        }
    }

    /// Unnormalized conditional log-weights of every unit over the given
    /// candidate effect vectors (one per weight component `0..k`), holding
    /// the other directions fixed. Terms constant in the candidate are
    /// dropped.
    pub fn label_log_weights(
        &self,
        state: &ModelState,
        d: Direction,
        candidates: &[Vec<f64>],
    ) -> Vec<Vec<f64>> {
        let ds = state.dir(d);
        let log_pi: Vec<f64> = ds.weights[..candidates.len()].iter().map(|w| w.ln()).collect();
        if !self.cfg.likelihood {
            return vec![log_pi; self.n_units()];
        }
        let sums = Self::exp_sums(state);
        let others = Self::other_products(state, d, &sums);
        let cand_sums: Vec<f64> = candidates.iter().map(|g| exp_sum(g)).collect();
        self.cfg.label_execution.map_range(self.n_units(), |u| {
            let m = &self.units[u].marginals[d.index()];
            candidates
                .iter()
                .zip(&cand_sums)
                .zip(&log_pi)
                .map(|((g, &e), &lp)| lp + dot(m, g) - e * others[u])
                .collect()
        })
    }

    /// Gibbs update of every label in direction `d`, in unit order.
    pub fn update_labels<R: Rng + ?Sized>(
        &self,
        state: &mut ModelState,
        d: Direction,
        rng: &mut R,
    ) -> Result<()> {
        let k = state.dir(d).k;
        let mut candidates = state.dir(d).effects.clone();
        if candidates.len() < k {
            let factor = self.prior(d).factor(&state.dir(d).car)?;
            while candidates.len() < k {
                candidates.push(factor.sample(rng));
            }
        }
        let logw = self.label_log_weights(state, d, &candidates);
        let ds = state.dir_mut(d);
        for (u, lw) in logw.iter().enumerate() {
            let j = sample_log_categorical(lw, rng).ok_or(Error::LabelUnderflow {
                unit: u,
                direction: d.number(),
            })?;
            ds.labels[u] = j + 1;
        }
        ds.canonicalize_from(candidates);
        Ok(())
    }

    /// Random-walk Metropolis on each occupied effect vector of direction
    /// `d`. Coordinate `a` of the proposal has scale
    /// `step / sqrt(1 + M[a])`, where `M` is the cluster's pooled marginal
    /// count vector (fixed during this update).
    pub fn update_effects<R: Rng + ?Sized>(
        &self,
        state: &mut ModelState,
        d: Direction,
        step: f64,
        rng: &mut R,
    ) -> Result<Tally> {
        let t = state.dir(d).n_occupied();
        let p = self.dims[d.index()];
        let mut pooled = vec![vec![0.0; p]; t];
        let mut scale = vec![0.0; t];
        if self.cfg.likelihood {
            let sums = Self::exp_sums(state);
            let others = Self::other_products(state, d, &sums);
            for (u, &l) in state.dir(d).labels.iter().enumerate() {
                for (acc, c) in pooled[l - 1].iter_mut().zip(&self.units[u].marginals[d.index()]) {
                    *acc += c;
                }
                scale[l - 1] += others[u];
            }
        }
        let factor = self.prior(d).factor(&state.dir(d).car)?;
        let mut tally = Tally::default();
        let ds = state.dir_mut(d);
        for j in 0..t {
            let target = |g: &[f64]| -> Result<f64> {
                Ok(factor.log_density(g)? + dot(&pooled[j], g) - exp_sum(g) * scale[j])
            };
            let current = &ds.effects[j];
            let proposal: Vec<f64> = current
                .iter()
                .zip(&pooled[j])
                .map(|(&g, &m)| {
                    let z: f64 = rng.sample(StandardNormal);
                    g + step / (1.0 + m).sqrt() * z
                })
                .collect();
            tally.proposed += 1;
            let new = target(&proposal)?;
            if !new.is_finite() {
                continue;
            }
            let delta = new - target(current)?;
            if rng.gen::<f64>().ln() < delta {
                ds.effects[j] = proposal;
                tally.accepted += 1;
            }
        }
        Ok(tally)
    }

    /// Exact conditional draw of the cluster count and weights given the
    /// occupancy counts.
    pub fn update_weights<R: Rng + ?Sized>(
        &self,
        state: &mut ModelState,
        d: Direction,
        rng: &mut R,
    ) -> Result<()> {
        let counts = state.dir(d).counts();
        let sb = sample_weights_given_counts(&counts, self.cfg.mfm.get(d), rng)?;
        let ds = state.dir_mut(d);
        ds.k = sb.k;
        ds.weights = sb.weights;
        Ok(())
    }

    fn effects_log_prior(&self, d: Direction, effects: &[Vec<f64>], car: &CarParams) -> Result<f64> {
        let factor: MvnFactor = self.prior(d).factor(car)?;
        effects.iter().map(|g| factor.log_density(g)).sum()
    }

    /// Random-walk Metropolis on `log σ²` then on `ρ` (reflected at the
    /// bounds). Returns the `(σ², ρ)` tallies.
    pub fn update_car<R: Rng + ?Sized>(
        &self,
        state: &mut ModelState,
        d: Direction,
        rng: &mut R,
    ) -> Result<(Tally, Tally)> {
        let (a, b) = self.cfg.gamma_prior_ab;
        let prior = self.prior(d);
        let mut t_sigma = Tally::default();
        let mut t_rho = Tally::default();
        let ds = state.dir_mut(d);

        let current = ds.car;
        let cur_lp = self.effects_log_prior(d, &ds.effects, &current)?
            + gamma_log_pdf(current.sigma2, a, b)
            + current.sigma2.ln();
        let z: f64 = rng.sample(StandardNormal);
        let proposed = CarParams {
            sigma2: (current.sigma2.ln() + self.cfg.mh_step_sigma2 * z).exp(),
            ..current
        };
        t_sigma.proposed += 1;
        if proposed.sigma2 > 0.0 && proposed.sigma2.is_finite() {
            if let Ok(ep) = self.effects_log_prior(d, &ds.effects, &proposed) {
                let new_lp = ep + gamma_log_pdf(proposed.sigma2, a, b) + proposed.sigma2.ln();
                if rng.gen::<f64>().ln() < new_lp - cur_lp {
                    ds.car = proposed;
                    t_sigma.accepted += 1;
                }
            }
        }

        if let Some((c1, c2)) = prior.bounds {
            let current = ds.car;
            let z: f64 = rng.sample(StandardNormal);
            let mut rho = current.rho + self.cfg.mh_step_rho * z;
            if rho < c1 {
                rho = 2.0 * c1 - rho;
            } else if rho > c2 {
                rho = 2.0 * c2 - rho;
            }
            t_rho.proposed += 1;
            if c1 < rho && rho < c2 {
                let proposed = CarParams { rho, ..current };
                if let Ok(new_lp) = self.effects_log_prior(d, &ds.effects, &proposed) {
                    let cur_lp = self.effects_log_prior(d, &ds.effects, &current)?;
                    if rng.gen::<f64>().ln() < new_lp - cur_lp {
                        ds.car = proposed;
                        t_rho.accepted += 1;
                    }
                }
            }
        }
        Ok((t_sigma, t_rho))
    }

    /// One full sweep: labels, effects, weights, covariance parameters, each
    /// over the three directions.
    pub fn sweep<R: Rng + ?Sized>(
        &self,
        state: &mut ModelState,
        steps: &[f64; 3],
        rng: &mut R,
    ) -> Result<SweepTallies> {
        let mut tallies = SweepTallies::default();
        for d in Direction::ALL {
            self.update_labels(state, d, rng)?;
        }
        for d in Direction::ALL {
            tallies.effects[d.index()] = self.update_effects(state, d, steps[d.index()], rng)?;
        }
        for d in Direction::ALL {
            self.update_weights(state, d, rng)?;
        }
        for d in Direction::ALL {
            let (s, r) = self.update_car(state, d, rng)?;
            tallies.sigma2[d.index()] = s;
            tallies.rho[d.index()] = r;
        }
        state.log_posterior = self.log_joint(state)?;
        Ok(tallies)
    }

    /// Runs the configured schedule from a fresh initial state.
    pub fn run(&self, stream: u64) -> Result<ChainRecord> {
        let cfg = &self.cfg;
        let mut rng = chain_rng(cfg.seed, stream);
        let mut state = self.initial_state(&mut rng)?;
        let mut steps = [cfg.mh_step_effects; 3];
        let adapt_until = if cfg.adapt { cfg.burn_in_sweeps() } else { 0 };
        let mut samples = Vec::with_capacity(cfg.n_samples());
        let mut trace = Vec::with_capacity(cfg.n_samples());
        let mut totals = SweepTallies::default();
        // Rates are reported for the frozen-step phase when there is one.
        let tally_from = if cfg.burn_in_sweeps() < cfg.n_iter { cfg.burn_in_sweeps() } else { 0 };
        for iter in 0..cfg.n_iter {
            let t = self
                .sweep(&mut state, &steps, &mut rng)
                .map_err(|e| Error::AtIteration {
                    iteration: iter,
                    source: Box::new(e),
                })?;
            for i in 0..3 {
                if iter >= tally_from {
                    totals.effects[i].add(t.effects[i]);
                    totals.sigma2[i].add(t.sigma2[i]);
                    totals.rho[i].add(t.rho[i]);
                }
                if iter < adapt_until && t.effects[i].proposed > 0 && steps[i] > 0.0 {
                    let gain = (iter as f64 + 1.0).powf(-0.6);
                    steps[i] *= (gain * (t.effects[i].rate() - TARGET_ACCEPTANCE)).exp();
                }
            }
            if (iter + 1) % cfg.thin == 0 {
                trace.push(state.log_posterior);
                samples.push(state.clone());
            }
        }
        Ok(ChainRecord {
            samples,
            log_posterior_trace: trace,
            acceptance_rates: AcceptanceRates {
                effects: totals.effects.map(|t| t.rate()),
                sigma2: totals.sigma2.map(|t| t.rate()),
                rho: totals.rho.map(|t| t.rate()),
                final_effect_steps: steps,
            },
            seed: cfg.seed,
            stream,
            unit_ids: self.unit_ids.clone(),
            dims: self.dims,
            burn_in: cfg.burn_in,
        })
    }
}

/// Fits one chain (stream 0).
pub fn run_chain(data: &[CountTensor], cfg: &SamplerConfig) -> Result<ChainRecord> {
    Model::new(data, cfg.clone())?.run(0)
}

/// Fits independent chains `0..n_chains`, each on its own RNG stream.
pub fn run_chains(
    data: &[CountTensor],
    cfg: &SamplerConfig,
    n_chains: usize,
    exec: Execution,
) -> Result<Vec<ChainRecord>> {
    let model = Model::new(data, cfg.clone())?;
    exec.map_range(n_chains, |c| model.run(c as u64))
        .into_iter()
        .collect()
}
