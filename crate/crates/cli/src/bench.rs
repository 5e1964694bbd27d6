use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ptd_core::cluster::index_partitions;
use ptd_core::cluster::Stopwatch;
use ptd_core::data::{generate, random_partition};
use serde::{Deserialize, Serialize};

use crate::commands::{run_on, Workspace};
use crate::error::{CliError, CliResult};
use crate::manifest::{Params, RunManifest};

pub const DESK_MAX_OBJECTS: usize = 20_000;
pub const DESK_INST_MAX: usize = 5;
const DESK_D_SCALE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Vary {
    N,
    Lmax,
    K,
    Inst,
    D,
}

impl FromStr for Vary {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.to_ascii_lowercase().as_str() {
            "n" => Ok(Vary::N),
            "lmax" => Ok(Vary::Lmax),
            "k" => Ok(Vary::K),
            "inst" => Ok(Vary::Inst),
            "d" => Ok(Vary::D),
            _ => Err(CliError::usage(format!(
                "unknown sweep key '{s}' (N, lmax, k, inst, D)"
            ))),
        }
    }
}

impl fmt::Display for Vary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Vary::N => "N",
            Vary::Lmax => "lmax",
            Vary::K => "k",
            Vary::Inst => "inst",
            Vary::D => "D",
        })
    }
}

/// One point of a sweep, kept as text so instance ranges read `2-10`.
pub fn default_values(vary: Vary, full: bool) -> Vec<String> {
    let v: Vec<String> = match vary {
        Vary::N => ["1", "2", "5", "8", "10"].map(String::from).to_vec(),
        Vary::Lmax => ["1", "2", "3", "4", "5"].map(String::from).to_vec(),
        Vary::K => ["5", "10", "15", "20", "25"].map(String::from).to_vec(),
        Vary::Inst => ["2-5", "2-8", "2-10", "2-12", "2-15"]
            .map(String::from)
            .to_vec(),
        Vary::D => {
            let full_sizes = [100_000.0, 200_000.0, 500_000.0, 800_000.0, 1_000_000.0];
            let scale = if full { 1.0 } else { DESK_D_SCALE };
            full_sizes
                .iter()
                .map(|s| ((s * scale) as usize).to_string())
                .collect()
        }
    };
    v
}

/// Defaults shrunk to desk scale unless `full` is set.
pub fn desk_params(base: &Params, full: bool) -> Params {
    let mut p = base.clone();
    if !full {
        p.n_objects = p.n_objects.min(DESK_MAX_OBJECTS);
        p.inst_max = p.inst_max.min(DESK_INST_MAX);
        p.inst_min = p.inst_min.min(p.inst_max);
    }
    p
}

pub fn apply(params: &Params, vary: Vary, value: &str) -> CliResult<Params> {
    let bad = || CliError::usage(format!("bad value '{value}' for sweep key {vary}"));
    let mut p = params.clone();
    match vary {
        Vary::N => p.servers = value.parse().map_err(|_| bad())?,
        Vary::Lmax => p.l_max = value.parse().map_err(|_| bad())?,
        Vary::K => p.k = value.parse().map_err(|_| bad())?,
        Vary::D => p.n_objects = value.parse().map_err(|_| bad())?,
        Vary::Inst => {
            let (lo, hi) = value.split_once('-').ok_or_else(bad)?;
            p.inst_min = lo.trim().parse().map_err(|_| bad())?;
            p.inst_max = hi.trim().parse().map_err(|_| bad())?;
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub param: String,
    pub value: String,
    pub metric: String,
    pub mean: f64,
}

pub const METRICS: [&str; 6] = [
    "wall_ms",
    "comm_bytes",
    "comm_messages",
    "candidates",
    "pruning_power",
    "index_build_ms",
];

/// Runs the query pipeline once per sweep value, every other parameter at
/// its default, and reports per-query means.
pub fn bench(base: &Params, seed: u64, vary: Vary, values: &[String]) -> CliResult<Vec<BenchRow>> {
    if values.is_empty() {
        return Err(CliError::usage("empty sweep list"));
    }
    let mut rows = Vec::new();
    for value in values {
        let p = apply(base, vary, value)?;
        let db = generate(&p.gen_config(seed))?;
        let partitioning = random_partition(&db, p.servers, seed)?;
        let build = Stopwatch::start();
        let partitions = index_partitions(&db, &partitioning, p.fanout)?;
        let build_ms = build.elapsed_ms();
        let ws = Workspace {
            db,
            partitioning,
            partitions,
        };
        let m = run_on(&ws, &RunManifest::new(p, seed))?;
        let s = m.summary.expect("run_on fills the summary");
        let means = [
            s.mean_wall_ms,
            s.mean_comm_bytes,
            s.mean_comm_messages,
            s.mean_candidates,
            s.mean_pruning_power,
            build_ms,
        ];
        for (metric, mean) in METRICS.iter().zip(means) {
            rows.push(BenchRow {
                param: vary.to_string(),
                value: value.clone(),
                metric: metric.to_string(),
                mean,
            });
        }
    }
    Ok(rows)
}

pub fn write_csv(rows: &[BenchRow], w: impl Write) -> CliResult<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(|source| CliError::Io {
        path: "<csv>".into(),
        source,
    })?;
    Ok(())
}

pub fn metric<'a>(rows: &'a [BenchRow], name: &str) -> Vec<(&'a str, f64)> {
    rows.iter()
        .filter(|r| r.metric == name)
        .map(|r| (r.value.as_str(), r.mean))
        .collect()
}
