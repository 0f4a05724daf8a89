use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelState, SamplerConfig};
use crate::error::{Error, Result};
use crate::mfm::LabelVector;
use crate::tensor::{Dims, Direction};

/// Acceptance rates of the Metropolis blocks after burn-in (over the whole
/// run when it is no longer than the burn-in).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub effects: [f64; 3],
    pub sigma2: [f64; 3],
    pub rho: [f64; 3],
    /// Effect step sizes after adaptation.
    pub final_effect_steps: [f64; 3],
}

/// Thinned output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub samples: Vec<ModelState>,
    pub log_posterior_trace: Vec<f64>,
    pub acceptance_rates: AcceptanceRates,
    pub seed: u64,
    pub stream: u64,
    pub unit_ids: Vec<String>,
    pub dims: Dims,
    /// Leading samples to discard, in thinned units.
    pub burn_in: usize,
}

impl ChainRecord {
    pub fn post_burn_in(&self) -> &[ModelState] {
        &self.samples[self.burn_in.min(self.samples.len())..]
    }

    /// Post-burn-in label vectors of one direction.
    pub fn labels(&self, d: Direction) -> Vec<LabelVector> {
        self.post_burn_in().iter().map(|s| s.dir(d).label_vector()).collect()
    }

    /// Post-burn-in occupied cluster counts of one direction.
    pub fn cluster_counts(&self, d: Direction) -> Vec<usize> {
        self.post_burn_in().iter().map(|s| s.dir(d).n_occupied()).collect()
    }
}

/// First line of a chain file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainHeader {
    pub kind: String,
    pub seed: u64,
    pub stream: u64,
    pub config: SamplerConfig,
    pub unit_ids: Vec<String>,
    pub dims: Dims,
    pub n_samples: usize,
    pub acceptance_rates: AcceptanceRates,
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    kind: String,
    index: usize,
    iteration: usize,
    state: ModelState,
}

/// Writes a chain as JSON lines: a header echoing the configuration, then
/// one state snapshot per line.
pub fn write_chain(path: impl AsRef<Path>, record: &ChainRecord, cfg: &SamplerConfig) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = ChainHeader {
        kind: "header".into(),
        seed: record.seed,
        stream: record.stream,
        config: cfg.clone(),
        unit_ids: record.unit_ids.clone(),
        dims: record.dims,
        n_samples: record.samples.len(),
        acceptance_rates: record.acceptance_rates.clone(),
    };
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(io)?;
    for (index, state) in record.samples.iter().enumerate() {
        let line = SampleLine {
            kind: "sample".into(),
            index,
            iteration: (index + 1) * cfg.thin,
            state: state.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_chain(path: impl AsRef<Path>) -> Result<(ChainHeader, ChainRecord)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument(format!("{}: empty chain file", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: ChainHeader = serde_json::from_str(&first)?;
    let mut samples = Vec::with_capacity(header.n_samples);
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: SampleLine = serde_json::from_str(&line)?;
        samples.push(s.state);
    }
    if samples.len() != header.n_samples {
        return Err(Error::InvalidArgument(format!(
            "{}: header announces {} samples, found {}",
            path.display(),
            header.n_samples,
            samples.len()
        )));
    }
    let record = ChainRecord {
        log_posterior_trace: samples.iter().map(|s| s.log_posterior).collect(),
        samples,
        acceptance_rates: header.acceptance_rates.clone(),
        seed: header.seed,
        stream: header.stream,
        unit_ids: header.unit_ids.clone(),
        dims: header.dims,
        burn_in: header.config.burn_in,
    };
    Ok((header, record))
}
