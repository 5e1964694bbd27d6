use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ptd_core::cluster::{ExecMode, QueryMetrics};
use ptd_core::data::{default_space, Distribution, GenConfig};
use ptd_core::index::{SummaryLevel, DEFAULT_FANOUT};
use ptd_core::oracle::ScoredObject;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FORMAT: u32 = 1;

/// Every tunable of a run. Defaults are the bold values of the
/// experimental parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub distribution: Distribution,
    pub n_objects: usize,
    pub dims: usize,
    pub l_max: f64,
    pub inst_min: usize,
    pub inst_max: usize,
    pub servers: u32,
    pub k: usize,
    pub fanout: usize,
    pub n_queries: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            distribution: Distribution::Uniform,
            n_objects: 500_000,
            dims: 2,
            l_max: 3.0,
            inst_min: 2,
            inst_max: 10,
            servers: 10,
            k: 15,
            fanout: DEFAULT_FANOUT,
            n_queries: 20,
        }
    }
}

impl Params {
    pub fn gen_config(&self, seed: u64) -> GenConfig {
        GenConfig {
            distribution: self.distribution,
            count: self.n_objects,
            dims: self.dims,
            l_max: self.l_max,
            inst_min: self.inst_min,
            inst_max: self.inst_max,
            space: default_space(self.dims),
            seed,
            mass: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: Vec<f64>,
    pub answers: Vec<ScoredObject>,
    pub metrics: QueryMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub queries: usize,
    pub mean_wall_ms: f64,
    pub mean_comm_bytes: f64,
    pub mean_comm_messages: f64,
    pub total_comm_bytes: u64,
    pub mean_candidates: f64,
    pub mean_pruning_power: f64,
}

impl RunSummary {
    pub fn of(results: &[QueryRecord]) -> Self {
        let n = results.len().max(1) as f64;
        let mean = |f: &dyn Fn(&QueryRecord) -> f64| results.iter().map(f).sum::<f64>() / n;
        Self {
            queries: results.len(),
            mean_wall_ms: mean(&|r| r.metrics.wall.total_ms),
            mean_comm_bytes: mean(&|r| r.metrics.comm_bytes as f64),
            mean_comm_messages: mean(&|r| r.metrics.comm_messages as f64),
            total_comm_bytes: results.iter().map(|r| r.metrics.comm_bytes).sum(),
            mean_candidates: mean(&|r| r.metrics.candidates.iter().sum::<usize>() as f64),
            mean_pruning_power: mean(&|r| {
                let pp = &r.metrics.pruning_power;
                pp.iter().sum::<f64>() / pp.len().max(1) as f64
            }),
        }
    }
}

/// A self-contained description of a query run. Missing pieces are derived
/// from `params` and `seed`: the dataset is generated, the partitioning is
/// drawn at random, levels come from the cost model and queries are drawn
/// inside the data's bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub seed: u64,
    pub params: Params,
    pub dataset: Option<String>,
    pub partitioning: Option<String>,
    pub levels: Option<Vec<SummaryLevel>>,
    #[serde(default)]
    pub mode: ExecMode,
    #[serde(default)]
    pub queries: Vec<Vec<f64>>,
    #[serde(default)]
    pub results: Vec<QueryRecord>,
    #[serde(default)]
    pub summary: Option<RunSummary>,
}

impl RunManifest {
    pub fn new(params: Params, seed: u64) -> Self {
        Self {
            format: MANIFEST_FORMAT,
            seed,
            params,
            dataset: None,
            partitioning: None,
            levels: None,
            mode: ExecMode::Threaded,
            queries: Vec::new(),
            results: Vec::new(),
            summary: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> CliResult<Self> {
        let m: Self = read_json(path.as_ref())?;
        if m.format != MANIFEST_FORMAT {
            return Err(CliError::usage(format!(
                "manifest format {} is not supported",
                m.format
            )));
        }
        Ok(m)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let f = File::open(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_reader(BufReader::new(f)).map_err(|source| CliError::Json {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let io = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| CliError::Json {
        path: path.display().to_string(),
        source,
    })?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}
