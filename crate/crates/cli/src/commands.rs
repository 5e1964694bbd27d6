use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ptd_core::cluster::{index_partitions, run_ptd, Cluster};
use ptd_core::costmodel::{
    estimate_cc, select_levels, CostEstimate, LevelChoice, QueryWorkload, WorkloadSource,
};
use ptd_core::data::{
    generate, generate_queries, load_dataset, load_rect_dataset, random_partition, save_dataset,
    Partitioning, RectSampling,
};
use ptd_core::geometry::Attrs;
use ptd_core::index::{IndexedPartition, SummaryLevel};
use ptd_core::oracle::{ptd_exact, ScoredObject};
use ptd_core::{Dataset, QueryPoint};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::{Params, QueryRecord, RunManifest, RunSummary};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A dataset with its partitioning and one aR-tree per partition.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub db: Dataset,
    pub partitioning: Partitioning,
    pub partitions: Vec<Arc<IndexedPartition>>,
}

impl Workspace {
    pub fn new(db: Dataset, partitioning: Partitioning, fanout: usize) -> CliResult<Self> {
        let partitions = index_partitions(&db, &partitioning, fanout)?;
        Ok(Self {
            db,
            partitioning,
            partitions,
        })
    }

    /// Builds the dataset and partitioning a manifest points at, deriving
    /// whatever it leaves out.
    pub fn from_manifest(m: &RunManifest) -> CliResult<Self> {
        let db = match &m.dataset {
            Some(path) => read_dataset_file(Path::new(path))?,
            None => generate(&m.params.gen_config(m.seed))?,
        };
        let partitioning = match &m.partitioning {
            Some(path) => read_partition_file(Path::new(path))?,
            None => random_partition(&db, m.params.servers, m.seed)?,
        };
        Self::new(db, partitioning, m.params.fanout)
    }

    pub fn servers(&self) -> u32 {
        self.partitioning.n
    }
}

pub fn read_dataset_file(path: &Path) -> CliResult<Dataset> {
    if !path.exists() {
        return Err(CliError::usage(format!(
            "dataset {} not found; create one with `ptd gen --out {}`",
            path.display(),
            path.display()
        )));
    }
    Ok(load_dataset(path)?)
}

pub fn read_partition_file(path: &Path) -> CliResult<Partitioning> {
    let f = File::open(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::usage(format!(
                "partitioning {} not found; create one with `ptd partition`",
                path.display()
            ))
        } else {
            CliError::Io {
                path: path.display().to_string(),
                source,
            }
        }
    })?;
    Ok(Partitioning::read_csv(BufReader::new(f), None)?)
}

/// `n` query points drawn uniformly inside the data's bounding box.
pub fn query_points(db: &Dataset, n: usize, seed: u64) -> CliResult<Vec<QueryPoint>> {
    let space = db
        .bounding_box()
        .ok_or_else(|| CliError::usage("dataset is empty"))?;
    Ok(generate_queries(n, &space, seed)?)
}

fn to_points(qs: &[Vec<f64>]) -> CliResult<Vec<QueryPoint>> {
    qs.iter()
        .map(|q| QueryPoint::new(q.clone()).map_err(CliError::from))
        .collect()
}

// gen

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenOutput {
    pub objects: usize,
    pub instances: usize,
    pub manifest: RunManifest,
}

pub fn cmd_gen(
    params: &Params,
    seed: u64,
    out: &Path,
    rects: Option<&Path>,
) -> CliResult<GenOutput> {
    let db = match rects {
        Some(r) => {
            let sampling = RectSampling {
                inst_min: params.inst_min,
                inst_max: params.inst_max,
                seed,
                mass: 1.0,
            };
            load_rect_dataset(r, &sampling)?
        }
        None => generate(&params.gen_config(seed))?,
    };
    save_dataset(&db, out)?;
    let mut manifest = RunManifest::new(
        Params {
            n_objects: db.len(),
            dims: db.dims,
            ..params.clone()
        },
        seed,
    );
    manifest.dataset = Some(out.display().to_string());
    Ok(GenOutput {
        objects: db.len(),
        instances: db.instance_count(),
        manifest,
    })
}

// partition

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionOutput {
    pub servers: u32,
    pub sizes: Vec<usize>,
    pub path: String,
}

pub fn cmd_partition(
    data: &Path,
    servers: u32,
    seed: u64,
    out: &Path,
) -> CliResult<PartitionOutput> {
    let db = read_dataset_file(data)?;
    if servers == 0 {
        return Err(CliError::usage("--servers must be at least 1"));
    }
    let p = random_partition(&db, servers, seed)?;
    let f = File::create(out).map_err(io_err(out))?;
    p.write_csv(BufWriter::new(f))?;
    Ok(PartitionOutput {
        servers,
        sizes: p.sizes(),
        path: out.display().to_string(),
    })
}

// index

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub level: SummaryLevel,
    pub entries: usize,
    pub summary_bytes: usize,
    pub file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionIndexInfo {
    pub partition: u32,
    pub objects: usize,
    pub instances: usize,
    pub height: usize,
    pub nodes: usize,
    pub integrity: String,
    pub levels: Vec<LevelInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexOutput {
    pub fanout: usize,
    pub partitions: Vec<PartitionIndexInfo>,
}

/// Describes the per-partition trees and, with `out_dir`, writes every
/// level cut as a binary summary file.
pub fn cmd_index(ws: &Workspace, fanout: usize, out_dir: Option<&Path>) -> CliResult<IndexOutput> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut partitions = Vec::new();
    for p in &ws.partitions {
        let mut levels = Vec::new();
        for level in p.tree.levels() {
            let cut = p.tree.level_cut(level)?;
            let bytes = cut.encode()?;
            let file = match out_dir {
                Some(dir) => {
                    let path: PathBuf = dir.join(format!("partition-{}-level-{level}.ptds", p.id));
                    fs::write(&path, &bytes).map_err(io_err(&path))?;
                    Some(path.display().to_string())
                }
                None => None,
            };
            levels.push(LevelInfo {
                level,
                entries: cut.entries.len(),
                summary_bytes: bytes.len(),
                file,
            });
        }
        let integrity = match p.tree.check_invariants(&p.data, 1e-9) {
            Ok(()) => "ok".to_string(),
            Err(e) => e.to_string(),
        };
        partitions.push(PartitionIndexInfo {
            partition: p.id,
            objects: p.len(),
            instances: p.data.instance_count(),
            height: p.tree.height,
            nodes: p.tree.entries().iter().filter(|e| !e.is_item()).count(),
            integrity,
            levels,
        });
    }
    Ok(IndexOutput { fanout, partitions })
}

// select-levels

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelsOutput {
    pub k: usize,
    pub workload_source: WorkloadSource,
    pub workload_size: usize,
    pub levels: Vec<SummaryLevel>,
    pub estimate: CostEstimate,
}

pub fn cmd_select_levels(
    ws: &Workspace,
    k: usize,
    workload: &QueryWorkload,
) -> CliResult<LevelsOutput> {
    let choice = select_levels(&ws.partitions, k, workload)?;
    let estimate = estimate_cc(&ws.partitions, &choice, k, workload)?;
    Ok(LevelsOutput {
        k,
        workload_source: workload.source,
        workload_size: workload.sample_points.len(),
        levels: choice.0,
        estimate,
    })
}

/// Accepts a comma-separated list such as `objects,0,1` or the path of a
/// file written by `ptd select-levels`.
pub fn parse_levels(spec: &str) -> CliResult<Vec<SummaryLevel>> {
    let path = Path::new(spec);
    if path.is_file() {
        let out: LevelsOutput = crate::manifest::read_json(path)?;
        return Ok(out.levels);
    }
    spec.split(',')
        .map(|s| s.trim().parse::<SummaryLevel>().map_err(CliError::from))
        .collect()
}

// query

/// Runs every query of the manifest and returns it with levels, queries,
/// per-query results and averages filled in.
pub fn cmd_query(manifest: &RunManifest) -> CliResult<RunManifest> {
    let ws = Workspace::from_manifest(manifest)?;
    run_on(&ws, manifest)
}

pub fn run_on(ws: &Workspace, manifest: &RunManifest) -> CliResult<RunManifest> {
    let mut m = manifest.clone();
    m.params.servers = ws.servers();
    m.params.n_objects = ws.db.len();
    m.params.dims = ws.db.dims;
    let levels = match &m.levels {
        Some(l) => {
            let choice = LevelChoice(l.clone());
            choice.validate(&ws.partitions)?;
            choice
        }
        None => select_levels(
            &ws.partitions,
            m.params.k,
            &QueryWorkload::default_for(&ws.partitions)?,
        )?,
    };
    if m.queries.is_empty() {
        m.queries = query_points(&ws.db, m.params.n_queries, m.seed)?
            .into_iter()
            .map(|q| q.attrs().to_vec())
            .collect();
    }
    m.params.n_queries = m.queries.len();
    let cluster = Cluster::new(ws.partitions.clone(), &levels.0)?;
    m.levels = Some(levels.0);
    m.results = to_points(&m.queries)?
        .iter()
        .map(|q| {
            let r = run_ptd(&cluster, q, m.params.k, m.mode)?;
            Ok(QueryRecord {
                query: q.attrs().to_vec(),
                answers: r.answers,
                metrics: r.metrics,
            })
        })
        .collect::<CliResult<_>>()?;
    m.summary = Some(RunSummary::of(&m.results));
    Ok(m)
}

// oracle

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub query: Vec<f64>,
    pub answers: Vec<ScoredObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutput {
    pub k: usize,
    pub results: Vec<OracleRecord>,
}

pub fn cmd_oracle(db: &Dataset, queries: &[QueryPoint], k: usize) -> CliResult<OracleOutput> {
    let results = queries
        .iter()
        .map(|q| {
            Ok(OracleRecord {
                query: q.attrs().to_vec(),
                answers: ptd_exact(db, q, k)?,
            })
        })
        .collect::<CliResult<_>>()?;
    Ok(OracleOutput { k, results })
}
