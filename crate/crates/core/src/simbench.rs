//! Synthetic designs, marginalized baselines and the replicate harness.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::baseline::{dbscan, kmeans};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mfm::LabelVector;
use crate::postprocess::{rand_index, summarize_direction, MixingMeasure};
use crate::sampler::{chain_rng, Model, SamplerConfig};
use crate::tensor::{rank_one_log_mean, CountTensor, Dims, Direction, MainEffectVector};

/// Ground truth of a synthetic study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    /// 1 or 2 for the built-in designs, 0 for custom ones.
    pub design_id: u8,
    pub n_units: usize,
    pub dims: Dims,
    pub true_labels: [LabelVector; 3],
    pub true_effects: [Vec<MainEffectVector>; 3],
}

/// Quarter patterns shared by both built-in designs.
pub const QUARTER_EFFECTS: [[f64; 4]; 2] = [[-1.0, -1.0, -1.0, -1.0], [-0.5, -2.0, -0.5, -2.0]];

fn profile(p: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..p).map(|i| f(i as f64 / (p - 1) as f64)).collect()
}

/// Labels with the given cluster sizes in random order.
fn balanced_labels(direction: Direction, sizes: &[usize], seed: u64) -> LabelVector {
    let mut labels: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(j, &s)| std::iter::repeat_n(j + 1, s))
        .collect();
    labels.shuffle(&mut chain_rng(seed, direction.index() as u64));
    LabelVector { direction, labels }
}

fn effects(direction: Direction, vs: Vec<Vec<f64>>) -> Vec<MainEffectVector> {
    vs.into_iter()
        .map(|log_gamma| MainEffectVector { direction, log_gamma })
        .collect()
}

impl DesignSpec {
    /// Coarse 3 × 3 court with four quarters; two clusters of 75 per
    /// direction. Angle and distance effects are fixed here since only the
    /// quarter patterns are published.
    pub fn design1(label_seed: u64) -> Self {
        let sizes = [75, 75];
        DesignSpec {
            design_id: 1,
            n_units: 150,
            dims: [3, 3, 4],
            true_labels: Direction::ALL.map(|d| balanced_labels(d, &sizes, label_seed)),
            true_effects: [
                effects(Direction::Angle, vec![vec![0.5, 1.5, 0.5], vec![1.5, 0.5, 1.5]]),
                effects(Direction::Distance, vec![vec![1.5, 1.0, 0.5], vec![0.5, 1.0, 1.5]]),
                effects(Direction::Quarter, QUARTER_EFFECTS.iter().map(|q| q.to_vec()).collect()),
            ],
        }
    }

    /// Fine 11 × 12 court with four quarters; three clusters of 50 for angle
    /// and distance, two of 75 for quarter. Profiles are smooth with pairwise
    /// L2 separation of at least 1.5 on the log scale, and their levels differ
    /// so that shot volume varies across clusters.
    pub fn design2(label_seed: u64) -> Self {
        use std::f64::consts::PI;
        DesignSpec {
            design_id: 2,
            n_units: 150,
            dims: [11, 12, 4],
            true_labels: [
                balanced_labels(Direction::Angle, &[50, 50, 50], label_seed),
                balanced_labels(Direction::Distance, &[50, 50, 50], label_seed),
                balanced_labels(Direction::Quarter, &[75, 75], label_seed),
            ],
            true_effects: [
                effects(
                    Direction::Angle,
                    vec![
                        profile(11, |x| 0.7 * (PI * x).sin()),
                        profile(11, |x| 0.3 - 0.7 * (PI * x).sin()),
                        profile(11, |x| -0.1 + 1.3 * x),
                    ],
                ),
                effects(
                    Direction::Distance,
                    vec![
                        profile(12, |x| 1.0 - 1.2 * x),
                        profile(12, |x| -0.7 + 1.1 * x),
                        profile(12, |x| 0.4 + 0.9 * (PI * x).sin()),
                    ],
                ),
                effects(Direction::Quarter, QUARTER_EFFECTS.iter().map(|q| q.to_vec()).collect()),
            ],
        }
    }

    pub fn builtin(design_id: u8, label_seed: u64) -> Result<Self> {
        match design_id {
            1 => Ok(Self::design1(label_seed)),
            2 => Ok(Self::design2(label_seed)),
            _ => Err(Error::InvalidArgument(format!("unknown design {design_id}; expected 1 or 2"))),
        }
    }

    /// One cluster per direction with the given effects.
    pub fn single_cluster(n_units: usize, log_effects: [Vec<f64>; 3]) -> Self {
        let dims = [log_effects[0].len(), log_effects[1].len(), log_effects[2].len()];
        let [a, b, c] = log_effects;
        DesignSpec {
            design_id: 0,
            n_units,
            dims,
            true_labels: Direction::ALL.map(|d| LabelVector {
                direction: d,
                labels: vec![1; n_units],
            }),
            true_effects: [
                effects(Direction::Angle, vec![a]),
                effects(Direction::Distance, vec![b]),
                effects(Direction::Quarter, vec![c]),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for d in Direction::ALL {
            let labels = &self.true_labels[d.index()];
            let effs = &self.true_effects[d.index()];
            if labels.len() != self.n_units {
                return Err(Error::InvalidArgument(format!("{d}: {} labels for {} units", labels.len(), self.n_units)));
            }
            if labels.labels.iter().any(|&l| l == 0 || l > effs.len()) {
                return Err(Error::InvalidArgument(format!("{d}: label without an effect vector")));
            }
            if effs.iter().any(|g| g.len() != self.dims[d.index()] || g.direction != d) {
                return Err(Error::DimensionMismatch(format!("{d}: effect vector length")));
            }
        }
        let expect = |dims: Dims, sizes: [&[usize]; 3]| -> Result<()> {
            if self.dims != dims || self.n_units != 150 {
                return Err(Error::InvalidArgument(format!("design {} must be 150 units with dims {dims:?}", self.design_id)));
            }
            for d in Direction::ALL {
                let mut s = self.true_labels[d.index()].sizes();
                s.sort_unstable();
                if s != sizes[d.index()] {
                    return Err(Error::InvalidArgument(format!("design {}: {d} cluster sizes {s:?}", self.design_id)));
                }
            }
            Ok(())
        };
        match self.design_id {
            1 => expect([3, 3, 4], [&[75, 75], &[75, 75], &[75, 75]]),
            2 => expect([11, 12, 4], [&[50, 50, 50], &[50, 50, 50], &[75, 75]]),
            _ => Ok(()),
        }
    }

    /// True mixing measure of one direction.
    pub fn mixing_measure(&self, d: Direction) -> Result<MixingMeasure> {
        let effs: Vec<Vec<f64>> = self.true_effects[d.index()].iter().map(|g| g.log_gamma.clone()).collect();
        MixingMeasure::from_clusters(d, &self.true_labels[d.index()].labels, &effs)
    }
}

/// Truth file written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub design_id: u8,
    pub labels: [LabelVector; 3],
    pub mixing: [MixingMeasure; 3],
}

impl Truth {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Draws every unit's tensor cell-wise from the Poisson rank-one mean of its
/// true cluster triplet.
pub fn generate_design(spec: &DesignSpec, seed: u64) -> Result<(Vec<CountTensor>, Truth)> {
    spec.validate()?;
    let mut rng = chain_rng(seed, 0);
    let mut data = Vec::with_capacity(spec.n_units);
    for u in 0..spec.n_units {
        let [g1, g2, g3] = Direction::ALL.map(|d| {
            let l = spec.true_labels[d.index()].labels[u];
            &spec.true_effects[d.index()][l - 1]
        });
        let log_mean = rank_one_log_mean(g1, g2, g3)?;
        let counts = log_mean
            .values
            .iter()
            .map(|lm| {
                let pois = Poisson::new(lm.exp()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Ok(pois.sample(&mut rng) as u64)
            })
            .collect::<Result<Vec<u64>>>()?;
        data.push(CountTensor::new(format!("unit_{u:03}"), spec.dims, counts)?);
    }
    let truth = Truth {
        design_id: spec.design_id,
        labels: spec.true_labels.clone(),
        mixing: [
            spec.mixing_measure(Direction::Angle)?,
            spec.mixing_measure(Direction::Distance)?,
            spec.mixing_measure(Direction::Quarter)?,
        ],
    };
    Ok((data, truth))
}

/// Marginal count vector along `keep`.
pub fn marginalize(t: &CountTensor, keep: Direction) -> Vec<u64> {
    t.marginal(keep)
}

/// Marginal vectors of a dataset as floating-point features.
pub fn marginal_features(data: &[CountTensor], keep: Direction) -> Vec<Vec<f64>> {
    data.iter()
        .map(|t| marginalize(t, keep).into_iter().map(|c| c as f64).collect())
        .collect()
}

/// Baseline settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub dbscan_eps: Vec<f64>,
    pub dbscan_min_pts: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            dbscan_eps: vec![25.0, 50.0, 75.0, 100.0],
            dbscan_min_pts: 5,
        }
    }
}

/// Labels of the marginalized baselines for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineLabels {
    pub kmeans: [Vec<usize>; 3],
    /// `(eps, labels per direction)`.
    pub dbscan: Vec<(f64, [Vec<usize>; 3])>,
}

/// Runs k-means (with `k` per direction) and DBSCAN on the marginal count
/// vectors of every direction.
pub fn run_baselines(data: &[CountTensor], k: [usize; 3], cfg: &BaselineConfig, seed: u64) -> Result<BaselineLabels> {
    let feats = Direction::ALL.map(|d| marginal_features(data, d));
    let mut km = Vec::with_capacity(3);
    for d in Direction::ALL {
        km.push(kmeans(&feats[d.index()], k[d.index()], seed.wrapping_add(d.index() as u64))?.labels);
    }
    let mut db = Vec::with_capacity(cfg.dbscan_eps.len());
    for &eps in &cfg.dbscan_eps {
        let mut per = Vec::with_capacity(3);
        for d in Direction::ALL {
            per.push(dbscan(&feats[d.index()], eps, cfg.dbscan_min_pts)?);
        }
        db.push((eps, per.try_into().expect("three directions")));
    }
    Ok(BaselineLabels {
        kmeans: km.try_into().expect("three directions"),
        dbscan: db,
    })
}

pub fn dbscan_method_name(eps: f64) -> String {
    format!("dbscan-{eps}")
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    /// Rand index vs truth per method name, per direction.
    pub rand_index: BTreeMap<String, [f64; 3]>,
    /// Posterior-mode cluster count of the proposed method.
    pub k_mode: [usize; 3],
    pub k_true: [usize; 3],
    /// Centered Wasserstein distance of the Dahl-sample mixing measure.
    pub wasserstein_to_truth: Option<[f64; 3]>,
    pub effect_acceptance: Option<[f64; 3]>,
    pub error: Option<String>,
}

pub const PROPOSED: &str = "proposed";
pub const KMEANS: &str = "kmeans";

/// Fits the model and the baselines to one simulated dataset.
pub fn run_replicate(
    spec: &DesignSpec,
    replicate: usize,
    sampler_cfg: &SamplerConfig,
    baseline_cfg: &BaselineConfig,
    seed: u64,
) -> Result<ReplicateResult> {
    let mut rng = chain_rng(seed, replicate as u64);
    let data_seed: u64 = rng.gen();
    let chain_seed: u64 = rng.gen();
    let km_seed: u64 = rng.gen();
    let (data, truth) = generate_design(spec, data_seed)?;
    let cfg = SamplerConfig {
        seed: chain_seed,
        ..sampler_cfg.clone()
    };
    let chain = Model::new(&data, cfg)?.run(0)?;
    let mut ri = BTreeMap::new();
    let mut proposed = [0.0; 3];
    let mut k_mode = [0; 3];
    let mut k_hat = [0; 3];
    let mut w = [0.0; 3];
    for d in Direction::ALL {
        let s = summarize_direction(&chain, d, Execution::Sequential)?;
        let est = LabelVector { direction: d, labels: s.labels.clone() };
        proposed[d.index()] = rand_index(&est, &truth.labels[d.index()])?;
        k_mode[d.index()] = s.k.mode;
        k_hat[d.index()] = est.n_clusters();
        w[d.index()] = crate::postprocess::centered_wasserstein(&s.mixing_measure, &truth.mixing[d.index()])?;
    }
    ri.insert(PROPOSED.to_string(), proposed);
    let base = run_baselines(&data, k_hat, baseline_cfg, km_seed)?;
    let score = |labels: &[Vec<usize>; 3]| -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for d in Direction::ALL {
            out[d.index()] = crate::postprocess::rand_index_raw(&labels[d.index()], &truth.labels[d.index()].labels)?;
        }
        Ok(out)
    };
    ri.insert(KMEANS.to_string(), score(&base.kmeans)?);
    for (eps, labels) in &base.dbscan {
        ri.insert(dbscan_method_name(*eps), score(labels)?);
    }
    Ok(ReplicateResult {
        replicate,
        rand_index: ri,
        k_mode,
        k_true: Direction::ALL.map(|d| spec.true_effects[d.index()].len()),
        wasserstein_to_truth: Some(w),
        effect_acceptance: Some(chain.acceptance_rates.effects),
        error: None,
    })
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub direction: Direction,
    pub mean_ri: f64,
    pub sd_ri: f64,
    /// Share of replicates with the correct posterior-mode K (proposed only).
    pub pct_correct_k: Option<f64>,
    pub ri_values: Vec<f64>,
    /// Histogram of posterior-mode K across replicates (proposed only).
    pub k_histogram: Option<BTreeMap<usize, usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub design_id: u8,
    pub n_rep: usize,
    pub n_failed: usize,
    pub rows: Vec<SummaryRow>,
    pub replicates: Vec<ReplicateResult>,
}

impl ReplicateSummary {
    pub fn row(&self, method: &str, d: Direction) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.direction == d)
    }

    /// Summary table as CSV: `method,direction,mean_ri,sd_ri,pct_correct_k`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "direction", "mean_ri", "sd_ri", "pct_correct_k"])?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.direction.to_string(),
                format!("{:.6}", r.mean_ri),
                format!("{:.6}", r.sd_ri),
                r.pct_correct_k.map(|p| format!("{p:.4}")).unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Per-replicate results, one JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.replicates {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Runs `n_rep` independent replicates (in parallel when `exec` allows) and
/// reduces them to a summary table. Failed replicates are kept with their
/// error and excluded from the averages.
pub fn run_replicates(
    spec: &DesignSpec,
    n_rep: usize,
    sampler_cfg: &SamplerConfig,
    baseline_cfg: &BaselineConfig,
    seed: u64,
    exec: Execution,
) -> Result<ReplicateSummary> {
    if n_rep == 0 {
        return Err(Error::InvalidArgument("n_rep must be at least 1".into()));
    }
    spec.validate()?;
    sampler_cfg.validate()?;
    let replicates: Vec<ReplicateResult> = exec.map_range(n_rep, |r| {
        run_replicate(spec, r, sampler_cfg, baseline_cfg, seed).unwrap_or_else(|e| ReplicateResult {
            replicate: r,
            rand_index: BTreeMap::new(),
            k_mode: [0; 3],
            k_true: [0; 3],
            wasserstein_to_truth: None,
            effect_acceptance: None,
            error: Some(format!("replicate {r}: {e}")),
        })
    });
    let ok: Vec<&ReplicateResult> = replicates.iter().filter(|r| r.error.is_none()).collect();
    let mut methods: Vec<String> = vec![PROPOSED.into(), KMEANS.into()];
    methods.extend(baseline_cfg.dbscan_eps.iter().map(|&e| dbscan_method_name(e)));
    let mut rows = Vec::new();
    if !ok.is_empty() {
        for m in &methods {
            for d in Direction::ALL {
                let vals: Vec<f64> = ok.iter().map(|r| r.rand_index[m][d.index()]).collect();
                let (mean_ri, sd_ri) = mean_sd(&vals);
                let (pct, hist) = if m == PROPOSED {
                    let mut h = BTreeMap::new();
                    for r in &ok {
                        *h.entry(r.k_mode[d.index()]).or_insert(0) += 1;
                    }
                    let correct = ok.iter().filter(|r| r.k_mode[d.index()] == r.k_true[d.index()]).count();
                    (Some(correct as f64 / ok.len() as f64), Some(h))
                } else {
                    (None, None)
                };
                rows.push(SummaryRow {
                    method: m.clone(),
                    direction: d,
                    mean_ri,
                    sd_ri,
                    pct_correct_k: pct,
                    ri_values: vals,
                    k_histogram: hist,
                });
            }
        }
    }
    Ok(ReplicateSummary {
        design_id: spec.design_id,
        n_rep,
        n_failed: replicates.len() - ok.len(),
        rows,
        replicates,
    })
}
