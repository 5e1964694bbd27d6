use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ptd_cli::bench::{self, Vary};
use ptd_cli::commands::{self, query_points, Workspace};
use ptd_cli::costreport::cost_report;
use ptd_cli::manifest::{to_json, write_json, Params, RunManifest};
use ptd_cli::{CliError, CliResult};
use ptd_core::bounds::Fault;
use ptd_core::cluster::ExecMode;
use ptd_core::costmodel::{QueryWorkload, DEFAULT_WORKLOAD_SIZE};
use ptd_core::data::Distribution;
use ptd_core::verify::{
    run_campaign, sandwich_campaign, CampaignConfig, CampaignReport, FaultMode, SandwichReport,
};
use ptd_core::QueryPoint;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "ptd",
    version,
    about = "Probabilistic top-k dominating queries over a partitioned uncertain database"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (or sample one from a rectangle file).
    Gen(GenCmd),
    /// Assign objects to servers uniformly at random.
    Partition(PartitionCmd),
    /// Build the per-partition aR-trees and describe or dump their level cuts.
    Index(IndexCmd),
    /// Choose the summary level of each partition with the cost model.
    SelectLevels(SelectCmd),
    /// Run distributed queries and print a replayable manifest.
    Query(QueryCmd),
    /// Brute-force answers for the same query points.
    Oracle(OracleCmd),
    /// Randomised equivalence campaign against the oracle plus invariant suites.
    Verify(VerifyCmd),
    /// Sweep one parameter and write metric means as CSV.
    Bench(BenchCmd),
    /// Estimated against measured communication per level choice, as CSV.
    CostReport(CostCmd),
}

#[derive(Args, Clone, Default)]
struct ParamArgs {
    /// uniform, gaussian or zipf
    #[arg(long = "dist")]
    distribution: Option<Distribution>,
    #[arg(long)]
    n_objects: Option<usize>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    lmax: Option<f64>,
    #[arg(long)]
    inst_min: Option<usize>,
    #[arg(long)]
    inst_max: Option<usize>,
    #[arg(long)]
    servers: Option<u32>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    fanout: Option<usize>,
    #[arg(long)]
    n_queries: Option<usize>,
}

impl ParamArgs {
    fn over(&self, base: Params) -> Params {
        Params {
            distribution: self.distribution.unwrap_or(base.distribution),
            n_objects: self.n_objects.unwrap_or(base.n_objects),
            dims: self.dims.unwrap_or(base.dims),
            l_max: self.lmax.unwrap_or(base.l_max),
            inst_min: self.inst_min.unwrap_or(base.inst_min),
            inst_max: self.inst_max.unwrap_or(base.inst_max),
            servers: self.servers.unwrap_or(base.servers),
            k: self.k.unwrap_or(base.k),
            fanout: self.fanout.unwrap_or(base.fanout),
            n_queries: self.n_queries.unwrap_or(base.n_queries),
        }
    }

    fn params(&self) -> Params {
        self.over(Params::default())
    }
}

#[derive(Args)]
struct GenCmd {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Sample instances inside the rectangles of this file instead.
    #[arg(long)]
    rects: Option<PathBuf>,
    /// Also write the manifest stub here.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct PartitionCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    servers: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Artifacts {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Generate whatever is missing from the parameters and seed.
    #[arg(long)]
    auto: bool,
}

#[derive(Args)]
struct IndexCmd {
    #[command(flatten)]
    artifacts: Artifacts,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SelectCmd {
    #[command(flatten)]
    artifacts: Artifacts,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_WORKLOAD_SIZE)]
    workload_size: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryCmd {
    /// Replay a manifest written by an earlier run.
    #[arg(long, conflicts_with_all = ["data", "partition", "auto", "levels"])]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    artifacts: Artifacts,
    #[command(flatten)]
    params: ParamArgs,
    /// `objects,0,1,...` per partition, or a file written by select-levels.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    single_thread: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 15)]
    k: usize,
    /// Explicit query point, e.g. `120.5,300`; repeatable.
    #[arg(long = "q", allow_hyphen_values = true, value_delimiter = ',', num_args = 1, action = clap::ArgAction::Append)]
    q: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    n_queries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyCmd {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    configs: usize,
    #[arg(long, default_value_t = 2_000)]
    max_objects: usize,
    #[arg(long, default_value_t = 10_000)]
    sandwich_trials: usize,
    /// Drop fully dominated contributions from lower bounds, to check the
    /// campaign notices.
    #[arg(long)]
    break_lb: bool,
    /// Allow configurations above the instance guard.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchCmd {
    #[arg(long)]
    vary: Vary,
    /// Comma-separated values; instance ranges as `2-10`.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<String>>,
    /// Use the full-scale defaults instead of desk-scale caps.
    #[arg(long)]
    full: bool,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CostCmd {
    #[command(flatten)]
    artifacts: Artifacts,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn workspace(a: &Artifacts, params: &Params, seed: u64) -> CliResult<(Workspace, RunManifest)> {
    if !a.auto && (a.data.is_none() || a.partition.is_none()) {
        return Err(CliError::usage(
            "need --data FILE and --partition FILE (from `ptd gen` and `ptd partition`), or --auto to derive them",
        ));
    }
    let mut m = RunManifest::new(params.clone(), seed);
    m.dataset = a.data.as_ref().map(|p| p.display().to_string());
    m.partitioning = a.partition.as_ref().map(|p| p.display().to_string());
    Ok((Workspace::from_manifest(&m)?, m))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    if let Some(path) = out {
        write_json(path, value)?;
    }
    println!("{}", to_json(value));
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })
}

#[derive(Serialize)]
struct VerifyOutput {
    passed: bool,
    campaign: CampaignReport,
    sandwich: SandwichReport,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(c) => {
            let out = commands::cmd_gen(&c.params.params(), c.seed, &c.out, c.rects.as_deref())?;
            if let Some(path) = &c.manifest {
                write_json(path, &out.manifest)?;
            }
            emit(&out, None)
        }
        Command::Partition(c) => emit(
            &commands::cmd_partition(&c.data, c.servers, c.seed, &c.out)?,
            None,
        ),
        Command::Index(c) => {
            let params = c.params.params();
            let (ws, _) = workspace(&c.artifacts, &params, c.seed)?;
            emit(
                &commands::cmd_index(&ws, params.fanout, c.out_dir.as_deref())?,
                None,
            )
        }
        Command::SelectLevels(c) => {
            let params = c.params.params();
            let (ws, _) = workspace(&c.artifacts, &params, c.seed)?;
            let bbox = ws
                .db
                .bounding_box()
                .ok_or_else(|| CliError::usage("dataset is empty"))?;
            let workload = QueryWorkload::uniform_grid(&bbox, c.workload_size)?;
            emit(
                &commands::cmd_select_levels(&ws, params.k, &workload)?,
                c.out.as_deref(),
            )
        }
        Command::Query(c) => {
            let m = match &c.manifest {
                Some(path) => RunManifest::load(path)?,
                None => {
                    if !c.artifacts.auto && c.levels.is_none() {
                        return Err(CliError::usage(
                            "need --levels (from `ptd select-levels`) or --auto to choose them with the cost model",
                        ));
                    }
                    let params = c.params.params();
                    let (ws, mut m) = workspace(&c.artifacts, &params, c.seed)?;
                    m.levels = c
                        .levels
                        .as_deref()
                        .map(commands::parse_levels)
                        .transpose()?;
                    if c.single_thread {
                        m.mode = ExecMode::Single;
                    }
                    let done = commands::run_on(&ws, &m)?;
                    return emit(&done, c.out.as_deref());
                }
            };
            emit(&commands::cmd_query(&m)?, c.out.as_deref())
        }
        Command::Oracle(c) => {
            let db = commands::read_dataset_file(&c.data)?;
            let queries: Vec<QueryPoint> = if c.q.is_empty() {
                query_points(&db, c.n_queries, c.seed)?
            } else {
                if c.q.len() % db.dims != 0 {
                    return Err(CliError::usage(format!(
                        "--q values must come in groups of {}",
                        db.dims
                    )));
                }
                c.q.chunks(db.dims)
                    .map(|p| QueryPoint::new(p.to_vec()))
                    .collect::<Result<_, _>>()?
            };
            emit(&commands::cmd_oracle(&db, &queries, c.k)?, c.out.as_deref())
        }
        Command::Verify(c) => {
            let fault = if c.break_lb {
                FaultMode::BreakLb
            } else {
                FaultMode::None
            };
            let cfg = CampaignConfig {
                seed: c.seed,
                configs: c.configs,
                max_objects: c.max_objects,
                sandwich_trials: c.sandwich_trials,
                fault,
                force: c.force,
                ..Default::default()
            };
            let campaign = run_campaign(&cfg)?;
            let sandwich = sandwich_campaign(c.seed, c.sandwich_trials, Fault::from(fault))?;
            let passed =
                campaign.passed && sandwich.violations == 0 && sandwich.point_violations == 0;
            let out = VerifyOutput {
                passed,
                campaign,
                sandwich,
            };
            emit(&out, c.out.as_deref())?;
            let mut err = io::stderr();
            for t in &out.campaign.invariants {
                let status = if t.passed() { "ok" } else { "VIOLATED" };
                let _ = writeln!(
                    err,
                    "{:<8} {:<48} {:>8} checks {status}",
                    t.module, t.name, t.checks
                );
            }
            for m in &out.campaign.mismatches {
                let _ = writeln!(
                    err,
                    "config {} k={} object {}: expected {:?}, got {:?}, lost in {}",
                    m.config, m.k, m.object, m.expected, m.got, m.phase
                );
            }
            if passed {
                Ok(())
            } else {
                Err(CliError::Failed(format!(
                    "{} invariant(s) violated, {} answer mismatch(es), {} sandwich violation(s)",
                    out.campaign
                        .invariants
                        .iter()
                        .filter(|t| !t.passed())
                        .count(),
                    out.campaign.mismatches.len(),
                    out.sandwich.violations + out.sandwich.point_violations
                )))
            }
        }
        Command::Bench(c) => {
            let base = c
                .params
                .over(bench::desk_params(&Params::default(), c.full));
            let values = c
                .values
                .unwrap_or_else(|| bench::default_values(c.vary, c.full));
            let rows = bench::bench(&base, c.seed, c.vary, &values)?;
            match &c.out {
                Some(path) => bench::write_csv(&rows, create(path)?),
                None => bench::write_csv(&rows, io::stdout().lock()),
            }
        }
        Command::CostReport(c) => {
            let params = c.params.params();
            let (ws, _) = workspace(&c.artifacts, &params, c.seed)?;
            let queries = query_points(&ws.db, params.n_queries, c.seed)?;
            let report = cost_report(&ws, params.k, &queries)?;
            if let Some(path) = &c.json {
                write_json(path, &report)?;
            }
            match &c.out {
                Some(path) => report.write_csv(create(path)?),
                None => report.write_csv(io::stdout().lock()),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
