//! Command-line front end: simulate, fit, evaluate, ingest, baseline and
//! replicate studies. Every command writes a `config_echo.toml` into its
//! output directory that reproduces the run when passed back as `--config`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use mfmtensor::baseline::{dbscan, kmeans};
use mfmtensor::ingest::{ingest_csv, IngestConfig, IngestReport};
use mfmtensor::postprocess::{
    centered_wasserstein, rand_index_raw, similarity_matrix, summarize_direction, DirectionReport, DirectionSummary,
};
use mfmtensor::sampler::{write_chain, AcceptanceRates, Model, SamplerConfig, ACCEPTANCE_BAND};
use mfmtensor::simbench::{generate_design, marginal_features, run_replicates, BaselineConfig, DesignSpec, Truth};
use mfmtensor::tensor::{read_dataset, write_dataset, CountTensor, Direction};
use mfmtensor::{Error, Execution};

pub const ECHO_FILE: &str = "config_echo.toml";

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration; exit code 1.
    Usage(String),
    /// Failure while doing the work; exit code 2.
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mfmtensor", version, about = "Bayesian clustering of count tensors along each direction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic datasets and their ground truth.
    Simulate(SimulateArgs),
    /// Run the sampler on a dataset and summarize the chain.
    Fit(FitArgs),
    /// Compare a fit with a truth file or with another fit.
    Evaluate(EvaluateArgs),
    /// Turn a shot-event CSV into a tensor dataset.
    Ingest(IngestArgs),
    /// Cluster marginal count vectors with k-means or DBSCAN.
    Baseline(BaselineArgs),
    /// Simulate, fit and score many replicates of a design.
    Replicates(ReplicatesArgs),
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub design: Option<u8>,
    #[arg(long)]
    pub n_rep: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the true label assignment; defaults to `seed`.
    #[arg(long)]
    pub label_seed: Option<u64>,
    /// Echo file of an earlier run; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Sampler settings (TOML); defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
#[command(group(clap::ArgGroup::new("reference").required(true).args(["truth", "other"])))]
pub struct EvaluateArgs {
    /// Output directory of `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Truth file written by `simulate`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Output directory of a second `fit`.
    #[arg(long)]
    pub other: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Partition, column names and filters (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub min_attempts: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Kmeans,
    Dbscan,
}

#[derive(Debug, clap::Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub method: BaselineMethod,
    /// Cluster count for k-means: one value or one per direction.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub min_pts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ReplicatesArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub design: u8,
    #[arg(long)]
    pub n_rep: usize,
    /// `[sampler]` and `[baseline]` tables (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub label_seed: Option<u64>,
    /// Run replicates one after another instead of on the thread pool.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ingest(a) => ingest(a),
        Command::Baseline(a) => baseline(a),
        Command::Replicates(a) => replicates(a),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Loads a TOML config, rejecting unknown keys; a missing path gives defaults.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

/// Writes the effective configuration, preceded by the invoking command line
/// as a comment.
fn write_echo<T: Serialize>(dir: &Path, command: &str, config: &T) -> Result<()> {
    let body = toml::to_string(config).map_err(|e| CliError::Runtime(format!("config echo: {e}")))?;
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let line = if argv.first().map(String::as_str) == Some(command) {
        argv.join(" ")
    } else {
        command.to_string()
    };
    write_text(&dir.join(ECHO_FILE), &format!("# mfmtensor {line}\n{body}"))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let fail = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(&r).map_err(fail)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub design: u8,
    pub n_rep: usize,
    pub seed: u64,
    pub label_seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { design: 1, n_rep: 1, seed: 0, label_seed: 0 }
    }
}

pub fn replicate_dir(out: &Path, r: usize) -> PathBuf {
    out.join(format!("rep_{r:03}"))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let base: Option<SimulateConfig> = match &a.config {
        Some(p) => Some(load_config(Some(p))?),
        None => None,
    };
    let seed = a.seed.or(base.as_ref().map(|c| c.seed)).ok_or_else(|| {
        CliError::Usage("--seed is required (or an echo file via --config)".into())
    })?;
    let cfg = SimulateConfig {
        design: a.design.or(base.as_ref().map(|c| c.design)).unwrap_or(1),
        n_rep: a.n_rep.or(base.as_ref().map(|c| c.n_rep)).unwrap_or(1),
        seed,
        label_seed: a.label_seed.or(base.as_ref().map(|c| c.label_seed)).unwrap_or(seed),
    };
    if cfg.n_rep == 0 {
        return Err(CliError::Usage("--n-rep must be at least 1".into()));
    }
    let spec = DesignSpec::builtin(cfg.design, cfg.label_seed).map_err(|e| CliError::Usage(e.to_string()))?;
    create_dir(&a.out)?;
    let sims = Execution::Parallel.map_range(cfg.n_rep, |r| generate_design(&spec, cfg.seed.wrapping_add(r as u64)));
    for (r, sim) in sims.into_iter().enumerate() {
        let (data, truth) = sim?;
        let dir = replicate_dir(&a.out, r);
        create_dir(&dir)?;
        write_dataset(dir.join("data.json"), &data)?;
        truth.write(dir.join("truth.json"))?;
    }
    write_echo(&a.out, "simulate", &cfg)
}

/// Everything `evaluate` needs from a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub seed: u64,
    pub unit_ids: Vec<String>,
    pub dims: [usize; 3],
    pub n_samples: usize,
    pub n_post_burn_in: usize,
    pub acceptance_rates: AcceptanceRates,
    pub directions: Vec<DirectionSummary>,
}

impl FitSummary {
    fn direction(&self, d: Direction) -> Result<&DirectionSummary> {
        self.directions
            .iter()
            .find(|s| s.direction == d)
            .ok_or_else(|| CliError::Runtime(format!("fit summary has no {d} entry")))
    }
}

pub const SUMMARY_FILE: &str = "summary.json";

fn fit(a: FitArgs) -> Result<()> {
    let mut cfg: SamplerConfig = load_config(a.config.as_deref())?;
    cfg.seed = a.seed;
    cfg.validate()?;
    let data: Vec<CountTensor> = read_dataset(&a.data)?;
    let model = Model::new(&data, cfg.clone())?;
    create_dir(&a.out)?;
    write_echo(&a.out, "fit", &cfg)?;
    let chain = model.run(0)?;
    if chain.post_burn_in().is_empty() {
        return Err(CliError::Usage(format!(
            "burn_in ({}) leaves no samples out of {}",
            cfg.burn_in,
            chain.samples.len()
        )));
    }
    write_chain(a.out.join("chain.jsonl"), &chain, &cfg)?;
    let (lo, hi) = ACCEPTANCE_BAND;
    for d in Direction::ALL {
        let r = chain.acceptance_rates.effects[d.index()];
        if cfg.adapt && !(lo..=hi).contains(&r) {
            eprintln!("warning: {d} effect acceptance {r:.3} outside [{lo}, {hi}]");
        }
    }
    let mut directions = Vec::with_capacity(3);
    for d in Direction::ALL {
        let s = summarize_direction(&chain, d, Execution::Parallel)?;
        write_csv(
            &a.out.join(format!("labels_{d}.csv")),
            &["unit_id", "label"],
            chain.unit_ids.iter().zip(&s.labels).map(|(u, l)| vec![u.clone(), l.to_string()]),
        )?;
        write_csv(
            &a.out.join(format!("effects_{d}.csv")),
            &["cluster", "weight", "bin", "log_gamma"],
            s.mixing_measure.atoms.iter().enumerate().flat_map(|(j, at)| {
                at.effect
                    .iter()
                    .enumerate()
                    .map(move |(b, g)| vec![(j + 1).to_string(), at.weight.to_string(), (b + 1).to_string(), g.to_string()])
            }),
        )?;
        let sim = similarity_matrix(&chain.labels(d), Execution::Parallel)?;
        write_csv(
            &a.out.join(format!("similarity_{d}.csv")),
            &chain.unit_ids.iter().map(String::as_str).collect::<Vec<_>>(),
            sim.iter().map(|row| row.iter().map(|v| v.to_string()).collect()),
        )?;
        directions.push(s);
    }
    write_csv(
        &a.out.join("k_histogram.csv"),
        &["direction", "k", "probability"],
        directions.iter().flat_map(|s| {
            s.k.histogram
                .iter()
                .map(move |(k, p)| vec![s.direction.to_string(), k.to_string(), p.to_string()])
        }),
    )?;
    write_csv(
        &a.out.join("trace.csv"),
        &["sample", "log_posterior"],
        chain.log_posterior_trace.iter().enumerate().map(|(i, v)| vec![i.to_string(), v.to_string()]),
    )?;
    let summary = FitSummary {
        seed: cfg.seed,
        unit_ids: chain.unit_ids.clone(),
        dims: chain.dims,
        n_samples: chain.samples.len(),
        n_post_burn_in: chain.post_burn_in().len(),
        acceptance_rates: chain.acceptance_rates.clone(),
        directions,
    };
    write_json(&a.out.join(SUMMARY_FILE), &summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub fit: PathBuf,
    pub truth: Option<PathBuf>,
    pub other: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub reference: String,
    pub directions: Vec<DirectionReport>,
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let summary: FitSummary = read_json(&a.fit.join(SUMMARY_FILE))?;
    let (reference, ref_labels, ref_measures) = match (&a.truth, &a.other) {
        (Some(t), _) => {
            if !t.exists() {
                return Err(CliError::Runtime(format!("truth file {} does not exist", t.display())));
            }
            let truth = Truth::read(t)?;
            (
                format!("truth:{}", t.display()),
                truth.labels.iter().map(|l| l.labels.clone()).collect::<Vec<_>>(),
                truth.mixing.to_vec(),
            )
        }
        (None, Some(o)) => {
            let other: FitSummary = read_json(&o.join(SUMMARY_FILE))?;
            let mut labels = Vec::new();
            let mut measures = Vec::new();
            for d in Direction::ALL {
                let s = other.direction(d)?;
                labels.push(s.labels.clone());
                measures.push(s.mixing_measure.clone());
            }
            (format!("fit:{}", o.display()), labels, measures)
        }
        (None, None) => return Err(CliError::Usage("one of --truth or --other is required".into())),
    };
    let mut directions = Vec::with_capacity(3);
    for d in Direction::ALL {
        let s = summary.direction(d)?;
        let theirs = &ref_labels[d.index()];
        if theirs.len() != s.labels.len() {
            return Err(CliError::Runtime(format!(
                "{d}: fit has {} units, reference has {}",
                s.labels.len(),
                theirs.len()
            )));
        }
        directions.push(DirectionReport {
            direction: d,
            rand_index: rand_index_raw(&s.labels, theirs)?,
            k_mode: s.k.mode,
            k_histogram: s.k.histogram.clone(),
            wasserstein_to_truth: Some(centered_wasserstein(&s.mixing_measure, &ref_measures[d.index()])?),
        });
    }
    create_dir(&a.out)?;
    write_echo(&a.out, "evaluate", &EvaluateConfig { fit: a.fit.clone(), truth: a.truth.clone(), other: a.other.clone() })?;
    write_csv(
        &a.out.join("report.csv"),
        &["direction", "rand_index", "k_mode", "wasserstein"],
        directions.iter().map(|r| {
            vec![
                r.direction.to_string(),
                r.rand_index.to_string(),
                r.k_mode.to_string(),
                r.wasserstein_to_truth.map(|w| w.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    write_json(&a.out.join("report.json"), &EvaluationReport { reference, directions })
}

fn ingest(a: IngestArgs) -> Result<()> {
    let mut cfg: IngestConfig = load_config(a.config.as_deref())?;
    if let Some(m) = a.min_attempts {
        cfg.filters.min_attempts = m;
    }
    cfg.scheme.validate()?;
    let (tensors, report): (Vec<CountTensor>, IngestReport) = ingest_csv(&a.input, &cfg)?;
    create_dir(&a.out)?;
    write_echo(&a.out, "ingest", &cfg)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(n) = report.rejected.get("parse_error") {
        eprintln!("warning: {n} malformed row(s) skipped");
    }
    if tensors.is_empty() {
        eprintln!("warning: no player reached {} attempts", cfg.filters.min_attempts);
    }
    write_dataset(a.out.join("dataset.json"), &tensors)?;
    write_json(&a.out.join("rejections.json"), &report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineRun {
    pub data: PathBuf,
    pub method: BaselineMethod,
    pub k: Vec<usize>,
    pub eps: Option<f64>,
    pub min_pts: usize,
    pub seed: u64,
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let mut labels: Vec<Vec<usize>> = Vec::with_capacity(3);
    let k: Vec<usize> = match (a.method, a.k.len()) {
        (BaselineMethod::Kmeans, 1) => vec![a.k[0]; 3],
        (BaselineMethod::Kmeans, 3) => a.k.clone(),
        (BaselineMethod::Kmeans, _) => return Err(CliError::Usage("k-means needs --k with one or three values".into())),
        (BaselineMethod::Dbscan, _) => Vec::new(),
    };
    if a.method == BaselineMethod::Dbscan && a.eps.is_none() {
        return Err(CliError::Usage("DBSCAN needs --eps".into()));
    }
    for d in Direction::ALL {
        let feats = marginal_features(&data, d);
        let l = match a.method {
            BaselineMethod::Kmeans => kmeans(&feats, k[d.index()], a.seed.wrapping_add(d.index() as u64))?.labels,
            BaselineMethod::Dbscan => dbscan(&feats, a.eps.unwrap_or_default(), a.min_pts)?,
        };
        labels.push(l);
    }
    create_dir(&a.out)?;
    write_echo(
        &a.out,
        "baseline",
        &BaselineRun { data: a.data.clone(), method: a.method, k, eps: a.eps, min_pts: a.min_pts, seed: a.seed },
    )?;
    write_csv(
        &a.out.join("labels.csv"),
        &["unit_id", "angle", "distance", "quarter"],
        data.iter().enumerate().map(|(u, t)| {
            vec![t.unit_id.clone(), labels[0][u].to_string(), labels[1][u].to_string(), labels[2][u].to_string()]
        }),
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplicatesConfig {
    pub sampler: SamplerConfig,
    pub baseline: BaselineConfig,
}

fn replicates(a: ReplicatesArgs) -> Result<()> {
    let mut cfg: ReplicatesConfig = load_config(a.config.as_deref())?;
    cfg.sampler.seed = a.seed;
    cfg.sampler.validate()?;
    let spec = DesignSpec::builtin(a.design, a.label_seed.unwrap_or(a.seed)).map_err(|e| CliError::Usage(e.to_string()))?;
    let exec = if a.sequential { Execution::Sequential } else { Execution::Parallel };
    let summary = run_replicates(&spec, a.n_rep, &cfg.sampler, &cfg.baseline, a.seed, exec)?;
    create_dir(&a.out)?;
    write_echo(&a.out, "replicates", &cfg)?;
    write_text(&a.out.join("summary.csv"), &summary.to_csv()?)?;
    write_text(&a.out.join("replicates.jsonl"), &summary.to_jsonl()?)?;
    write_json(&a.out.join("summary.json"), &summary)?;
    let failures: BTreeMap<usize, &str> = summary
        .replicates
        .iter()
        .filter_map(|r| r.error.as_deref().map(|e| (r.replicate, e)))
        .collect();
    for (r, e) in &failures {
        eprintln!("warning: replicate {r} failed: {e}");
    }
    if failures.len() == a.n_rep {
        return Err(CliError::Runtime("every replicate failed".into()));
    }
    Ok(())
}
