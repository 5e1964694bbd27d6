//! Randomised differential testing of the distributed engine against the
//! brute-force oracle, plus the standing invariant suites.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{Fault, RemoteView};
use crate::cluster::wire::Message;
use crate::cluster::{index_partitions, run_ptd, Cluster, ExecMode, QueryReport};
use crate::data::{generate, random_partition, substream, Distribution, GenConfig};
use crate::error::{PtdError, Result};
use crate::geometry::{dominates_raw, Attrs, Dataset, ObjectId, QueryPoint, Rect};
use crate::index::{IndexSummary, IndexedPartition, SummaryLevel};
use crate::oracle::{all_scores, object_score_exact, ptd_exact, rank_order, ScoredObject};

pub const SCORE_TOL: f64 = 1e-9;
pub const INSTANCE_GUARD: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub seed: u64,
    pub configs: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub inst_max: usize,
    pub servers: Vec<u32>,
    pub ks: Vec<usize>,
    pub queries_per_config: usize,
    pub sandwich_trials: usize,
    pub fault: FaultMode,
    pub force: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultMode {
    #[default]
    None,
    BreakLb,
}

impl From<FaultMode> for Fault {
    fn from(f: FaultMode) -> Fault {
        match f {
            FaultMode::None => Fault::None,
            FaultMode::BreakLb => Fault::SkipFull,
        }
    }
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            configs: 100,
            min_objects: 50,
            max_objects: 2_000,
            inst_max: 5,
            servers: vec![1, 2, 5],
            ks: vec![1, 5, 15],
            queries_per_config: 1,
            sandwich_trials: 10_000,
            fault: FaultMode::None,
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantTally {
    pub module: String,
    pub name: String,
    pub checks: u64,
    pub violations: u64,
    pub first_violation: Option<String>,
}

impl InvariantTally {
    fn new(module: &str, name: &str) -> Self {
        Self {
            module: module.into(),
            name: name.into(),
            checks: 0,
            violations: 0,
            first_violation: None,
        }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.violations += 1;
            if self.first_violation.is_none() {
                self.first_violation = Some(detail());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub config: usize,
    pub query: Vec<f64>,
    pub k: usize,
    pub object: ObjectId,
    pub expected: Option<f64>,
    pub got: Option<f64>,
    /// Where the engine lost or misjudged the object.
    pub phase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub distribution: Distribution,
    pub objects: usize,
    pub instances: usize,
    pub servers: u32,
    pub k: usize,
    pub levels: Vec<SummaryLevel>,
    pub comm_bytes: u64,
    pub ok: bool,
    /// Ids in exactly the oracle's order, near-ties included.
    pub exact_order: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub cases: Vec<CaseSummary>,
    pub invariants: Vec<InvariantTally>,
    pub mismatches: Vec<Mismatch>,
    pub passed: bool,
}

impl CampaignReport {
    pub fn tally(&self, name: &str) -> Option<&InvariantTally> {
        self.invariants.iter().find(|t| t.name == name)
    }
}

pub const INV_EQUIVALENCE: &str = "answers equal oracle";
pub const INV_PRUNING: &str = "pruned objects outside oracle top-k";
pub const INV_SUFFICIENCY: &str = "candidates cover oracle top-k";
pub const INV_TAU: &str = "thresholds below k-th score";
pub const INV_DECOMPOSITION: &str = "master scores equal exact scores";
pub const INV_LEDGER: &str = "ledger equals encoded lengths";
pub const INV_DETERMINISM: &str = "threaded and single-threaded runs identical";
pub const INV_SANDWICH: &str = "lb <= exact <= ub";
pub const INV_POINT_EXACT: &str = "point summaries give exact bounds";
pub const INV_MONOTONE: &str = "finer summaries never loosen bounds";
pub const INV_NODE_UB: &str = "node bound covers its objects";
pub const INV_INDEX: &str = "aggregate conservation and containment";
pub const INV_WIRE: &str = "summary and message codecs round-trip";
pub const INV_DOMINANCE: &str = "dominance irreflexive and antisymmetric";
pub const INV_PREFIX: &str = "top-k is a prefix of the full ranking";

struct Suite {
    tallies: Vec<InvariantTally>,
}

impl Suite {
    fn new() -> Self {
        let names = [
            ("cluster", INV_EQUIVALENCE),
            ("cluster", INV_PRUNING),
            ("cluster", INV_SUFFICIENCY),
            ("cluster", INV_TAU),
            ("cluster", INV_DECOMPOSITION),
            ("cluster", INV_LEDGER),
            ("cluster", INV_DETERMINISM),
            ("bounds", INV_SANDWICH),
            ("bounds", INV_POINT_EXACT),
            ("bounds", INV_MONOTONE),
            ("bounds", INV_NODE_UB),
            ("index", INV_INDEX),
            ("index", INV_WIRE),
            ("core", INV_DOMINANCE),
            ("oracle", INV_PREFIX),
        ];
        Self {
            tallies: names
                .iter()
                .map(|(m, n)| InvariantTally::new(m, n))
                .collect(),
        }
    }

    fn get(&mut self, name: &str) -> &mut InvariantTally {
        self.tallies
            .iter_mut()
            .find(|t| t.name == name)
            .expect("registered invariant")
    }
}

fn pick_level(rng: &mut impl Rng, p: &IndexedPartition) -> SummaryLevel {
    let ls = p.tree.levels();
    ls[rng.random_range(0..ls.len())]
}

fn finer(l: SummaryLevel) -> SummaryLevel {
    match l {
        SummaryLevel::Node(0) | SummaryLevel::Objects => SummaryLevel::Objects,
        SummaryLevel::Node(l) => SummaryLevel::Node(l - 1),
    }
}

fn loss_phase(report: &QueryReport, id: ObjectId) -> &'static str {
    let d = &report.diagnostics;
    if d.pruned_by_mapper.contains(&id) {
        "filtering mapper"
    } else if d.pruned_by_reducer.contains(&id) {
        "filtering reducer"
    } else if d.suppressed_by_refinement.contains(&id) {
        "refinement"
    } else if d.at_master.iter().any(|s| s.object_id == id) {
        "master ranking"
    } else {
        "unaccounted"
    }
}

/// Differences between an engine answer and the oracle answer, as
/// (object, exact score, reported score). Objects whose exact scores agree
/// within `SCORE_TOL` may swap places, since their order is decided by
/// rounding alone.
pub fn compare_answers(
    db: &Dataset,
    q: &QueryPoint,
    got: &[ScoredObject],
    want: &[ScoredObject],
) -> Result<Vec<(ObjectId, f64, Option<f64>)>> {
    let mut diffs = Vec::new();
    let exact_of = |id: ObjectId| -> Result<f64> {
        let o = db
            .get(id)
            .ok_or_else(|| PtdError::invalid(format!("unknown object {id}")))?;
        object_score_exact(o, db, q)
    };
    for (i, g) in got.iter().enumerate() {
        let exact = exact_of(g.object_id)?;
        let slot_ok = want
            .get(i)
            .is_some_and(|w| (w.score - g.score).abs() <= SCORE_TOL);
        if (exact - g.score).abs() > SCORE_TOL || !slot_ok {
            diffs.push((g.object_id, exact, Some(g.score)));
        }
    }
    let kth = want.last().map_or(f64::NEG_INFINITY, |w| w.score);
    for w in want
        .iter()
        .filter(|w| !got.iter().any(|g| g.object_id == w.object_id))
    {
        if got.len() < want.len() || w.score > kth + SCORE_TOL {
            diffs.push((w.object_id, w.score, None));
        }
    }
    Ok(diffs)
}

#[allow(clippy::too_many_arguments)]
fn check_query(
    suite: &mut Suite,
    mismatches: &mut Vec<Mismatch>,
    config: usize,
    db: &Dataset,
    cluster: &Cluster,
    q: &QueryPoint,
    k: usize,
    determinism: bool,
) -> Result<(bool, bool, u64)> {
    let report = run_ptd(cluster, q, k, ExecMode::Threaded)?;
    let want = ptd_exact(db, q, k)?;
    let got = &report.answers;
    let qv = q.attrs().to_vec();

    let diffs = compare_answers(db, q, got, &want)?;
    let same = diffs.is_empty();
    suite.get(INV_EQUIVALENCE).check(same, || {
        format!("config {config}: got {got:?}, want {want:?}")
    });
    for (object, expected, g) in diffs {
        let phase = match g {
            Some(g) if (g - expected).abs() <= SCORE_TOL => "ranking".into(),
            Some(_) if want.iter().any(|w| w.object_id == object) => "score".into(),
            Some(_) => "spurious answer".into(),
            None => loss_phase(&report, object).into(),
        };
        mismatches.push(Mismatch {
            config,
            query: qv.clone(),
            k,
            object,
            expected: Some(expected),
            got: g,
            phase,
        });
    }

    let d = &report.diagnostics;
    let kth = want.last().map_or(f64::INFINITY, |s| s.score);
    for w in &want {
        let boundary_tie = w.score <= kth + SCORE_TOL && want.len() == k;
        let lost = !boundary_tie
            && (d.pruned_by_mapper.contains(&w.object_id)
                || d.pruned_by_reducer.contains(&w.object_id)
                || d.suppressed_by_refinement.contains(&w.object_id));
        suite.get(INV_PRUNING).check(!lost, || {
            format!(
                "config {config}: top-k object {} pruned in {}",
                w.object_id,
                loss_phase(&report, w.object_id)
            )
        });
        let covered = d
            .candidates
            .iter()
            .flatten()
            .any(|c| c.object_id == w.object_id);
        suite.get(INV_SUFFICIENCY).check(covered, || {
            format!("config {config}: {} not a candidate", w.object_id)
        });
    }
    let tau_max = d.taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tau_ok = want.len() < k || tau_max <= kth + SCORE_TOL;
    suite.get(INV_TAU).check(tau_ok, || {
        format!("config {config}: tau {tau_max} above k-th score {kth}")
    });
    for s in &d.at_master {
        let exact = object_score_exact(db.get(s.object_id).expect("known object"), db, q)?;
        suite
            .get(INV_DECOMPOSITION)
            .check((s.score - exact).abs() <= SCORE_TOL, || {
                format!(
                    "config {config}: {} scored {} not {exact}",
                    s.object_id, s.score
                )
            });
    }
    let recount: u64 = report
        .ledger
        .records()
        .iter()
        .filter(|l| l.src != l.dst)
        .map(|l| l.bytes)
        .sum();
    suite
        .get(INV_LEDGER)
        .check(recount == report.metrics.comm_bytes, || {
            format!("config {config}: recount {recount}")
        });

    if determinism {
        let again = run_ptd(cluster, q, k, ExecMode::Single)?;
        let same_run = again.answers == report.answers && again.ledger == report.ledger;
        suite
            .get(INV_DETERMINISM)
            .check(same_run, || format!("config {config}: runs differ"));
    }
    let exact_order = got
        .iter()
        .map(|s| s.object_id)
        .eq(want.iter().map(|s| s.object_id));
    Ok((same, exact_order, report.metrics.comm_bytes))
}

fn structural_checks(
    suite: &mut Suite,
    parts: &[Arc<IndexedPartition>],
    q: &QueryPoint,
    rng: &mut impl Rng,
) -> Result<()> {
    for p in parts {
        let r = p.tree.check_invariants(&p.data, 1e-9);
        suite.get(INV_INDEX).check(r.is_ok(), || format!("{r:?}"));
        for lvl in p.tree.levels() {
            let cut = p.tree.level_cut(lvl)?;
            let bytes = cut.encode()?;
            let ok = bytes.len() == cut.encoded_len() && IndexSummary::decode(&bytes)? == cut;
            suite
                .get(INV_WIRE)
                .check(ok, || format!("partition {} level {lvl}", p.id));
        }
    }
    let inst: Vec<_> = parts[0].data.instances().collect();
    let qa = q.attrs();
    for _ in 0..50 {
        let u = inst[rng.random_range(0..inst.len())].attrs();
        let v = inst[rng.random_range(0..inst.len())].attrs();
        let ok = !dominates_raw(u, u, qa) && !(dominates_raw(u, v, qa) && dominates_raw(v, u, qa));
        suite
            .get(INV_DOMINANCE)
            .check(ok, || format!("{u:?} vs {v:?}"));
    }
    Ok(())
}

/// Checks bound invariants for random objects of one partition against a
/// merged dataset.
#[allow(clippy::too_many_arguments)]
fn bound_checks(
    suite: &mut Suite,
    merged: &Dataset,
    parts: &[Arc<IndexedPartition>],
    me: usize,
    q: &QueryPoint,
    fault: Fault,
    rng: &mut impl Rng,
    trials: usize,
) -> Result<()> {
    let levels: Vec<SummaryLevel> = parts.iter().map(|p| pick_level(rng, p)).collect();
    let view = RemoteView::assemble(parts, me, &levels)?.with_fault(fault);
    let finer_levels: Vec<SummaryLevel> = levels.iter().map(|&l| finer(l)).collect();
    let fine = RemoteView::assemble(parts, me, &finer_levels)?.with_fault(fault);
    let local = &parts[me];
    for _ in 0..trials {
        let pos = rng.random_range(0..local.len());
        let t = &local.data.objects[pos];
        let exact = object_score_exact(t, merged, q)?;
        let b = view.object_bounds_at(pos, q);
        suite
            .get(INV_SANDWICH)
            .check(b.contains(exact, SCORE_TOL), || {
                format!(
                    "object {} at {:?}, levels {levels:?}: {b:?} vs exact {exact}",
                    t.id,
                    q.attrs()
                )
            });
        let fb = fine.object_bounds_at(pos, q);
        suite.get(INV_MONOTONE).check(
            fb.lb >= b.lb - SCORE_TOL && fb.ub <= b.ub + SCORE_TOL,
            || format!("object {}: {b:?} -> {fb:?}", t.id),
        );
    }
    // The node bound of every ancestor covers each object beneath it.
    let tree = &local.tree;
    for e in tree
        .entries()
        .iter()
        .filter(|e| e.level == SummaryLevel::Node(0))
        .take(4)
    {
        let nub = view.entry_score_ub(e, q);
        for c in tree.children(e) {
            if let crate::index::EntryKind::Item { key } = c.kind {
                let ub = view.object_bounds_at(key, q).ub;
                suite.get(INV_NODE_UB).check(ub <= nub + SCORE_TOL, || {
                    format!("node {} bound {nub} < object bound {ub}", e.id)
                });
            }
        }
    }
    // Point summaries make both bounds exact.
    let summaries = (0..parts.len())
        .filter(|&l| l != me)
        .map(|l| IndexSummary::instance_points(l as u32, &parts[l].data))
        .collect();
    let exact_view = RemoteView::new(local.clone(), summaries)?.with_fault(fault);
    for _ in 0..trials.min(5) {
        let pos = rng.random_range(0..local.len());
        let exact = object_score_exact(&local.data.objects[pos], merged, q)?;
        let b = exact_view.object_bounds_at(pos, q);
        let ok = (b.lb - exact).abs() <= SCORE_TOL && (b.ub - exact).abs() <= SCORE_TOL;
        suite
            .get(INV_POINT_EXACT)
            .check(ok, || format!("{b:?} vs exact {exact}"));
    }
    Ok(())
}

fn bbox_queries(db: &Dataset, n: usize, rng: &mut impl Rng) -> Vec<QueryPoint> {
    let bb = db.bounding_box().expect("non-empty dataset");
    (0..n)
        .map(|_| {
            let p = (0..bb.dims())
                .map(|k| rng.random_range(bb.lo[k]..=bb.hi[k]))
                .collect();
            QueryPoint::new(p).expect("finite")
        })
        .collect()
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignReport> {
    if cfg.configs == 0
        || cfg.servers.is_empty()
        || cfg.ks.is_empty()
        || cfg.queries_per_config == 0
    {
        return Err(PtdError::invalid(
            "campaign needs configs, servers, k values and queries",
        ));
    }
    if cfg.min_objects == 0 || cfg.min_objects > cfg.max_objects || cfg.inst_max == 0 {
        return Err(PtdError::invalid("bad object or instance range"));
    }
    if cfg.max_objects * cfg.inst_max > INSTANCE_GUARD && !cfg.force {
        return Err(PtdError::invalid(format!(
            "up to {} instances per configuration exceeds {INSTANCE_GUARD}; pass --force to run anyway",
            cfg.max_objects * cfg.inst_max
        )));
    }
    let fault: Fault = cfg.fault.into();
    let mut rng = substream(cfg.seed, "verify");
    let mut suite = Suite::new();
    let mut mismatches = Vec::new();
    let mut cases = Vec::new();
    let dists = [
        Distribution::Uniform,
        Distribution::Gaussian,
        Distribution::Zipf,
    ];
    let fanouts = [4usize, 8, 16, 32];
    let per_config_trials = cfg.sandwich_trials.div_ceil(cfg.configs);

    for c in 0..cfg.configs {
        let distribution = dists[c % dists.len()];
        let n = cfg.servers[(c / dists.len()) % cfg.servers.len()];
        let k = *cfg.ks.choose(&mut rng).expect("non-empty");
        let count =
            rng.random_range(cfg.min_objects.max(n as usize)..=cfg.max_objects.max(n as usize));
        let gen = GenConfig {
            distribution,
            count,
            l_max: rng.random_range(1.0..60.0),
            inst_min: 1,
            inst_max: cfg.inst_max,
            seed: rng.random(),
            ..Default::default()
        };
        let db = generate(&gen)?;
        let partitioning = random_partition(&db, n, rng.random())?;
        let fanout = *fanouts.choose(&mut rng).expect("non-empty");
        let parts = index_partitions(&db, &partitioning, fanout)?;
        let levels: Vec<SummaryLevel> = parts.iter().map(|p| pick_level(&mut rng, p)).collect();
        let cluster = Cluster::new(parts.clone(), &levels)?.with_fault(fault);

        let queries = bbox_queries(&db, cfg.queries_per_config, &mut rng);
        let mut ok = true;
        let mut exact_order = true;
        let mut bytes = 0;
        for (qi, q) in queries.iter().enumerate() {
            let (same, exact, b) = check_query(
                &mut suite,
                &mut mismatches,
                c,
                &db,
                &cluster,
                q,
                k,
                qi == 0 && c % 5 == 0,
            )?;
            ok &= same;
            exact_order &= exact;
            bytes += b;
        }
        let q = &queries[0];
        structural_checks(&mut suite, &parts, q, &mut rng)?;
        if n > 1 {
            let me = rng.random_range(0..parts.len());
            bound_checks(
                &mut suite,
                &db,
                &parts,
                me,
                q,
                fault,
                &mut rng,
                per_config_trials,
            )?;
        }
        if c % 10 == 0 {
            let mut full = all_scores(&db, q)?;
            full.sort_by(rank_order);
            let top = ptd_exact(&db, q, k)?;
            suite
                .get(INV_PREFIX)
                .check(top.as_slice() == &full[..k.min(full.len())], || {
                    format!("config {c}")
                });
        }
        cases.push(CaseSummary {
            distribution,
            objects: db.len(),
            instances: db.instance_count(),
            servers: n,
            k,
            levels,
            comm_bytes: bytes,
            ok,
            exact_order,
        });
    }

    // Message codec spot check on the last configuration's traffic shapes.
    let probe = Message {
        src: 1,
        dst: 0,
        payload: crate::cluster::wire::Payload::Refined(ScoredObject {
            object_id: ObjectId(7),
            score: 0.5,
        }),
    };
    suite
        .get(INV_WIRE)
        .check(Message::decode(&probe.encode())? == probe, || {
            "message codec".into()
        });

    let passed = suite.tallies.iter().all(InvariantTally::passed) && mismatches.is_empty();
    Ok(CampaignReport {
        config: cfg.clone(),
        cases,
        invariants: suite.tallies,
        mismatches,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub trials: u64,
    pub violations: u64,
    pub point_trials: u64,
    pub point_violations: u64,
    pub max_point_error: f64,
    pub first_violation: Option<String>,
}

/// Random (object, q, level choice) trials of the score bounds against the
/// brute-force scores, plus exactness of point summaries.
pub fn sandwich_campaign(seed: u64, trials: usize, fault: Fault) -> Result<SandwichReport> {
    let mut rng = substream(seed, "sandwich");
    let mut report = SandwichReport {
        trials: 0,
        violations: 0,
        point_trials: 0,
        point_violations: 0,
        max_point_error: 0.0,
        first_violation: None,
    };
    let per_setup = 200;
    while (report.trials as usize) < trials {
        let gen = GenConfig {
            distribution: [
                Distribution::Uniform,
                Distribution::Gaussian,
                Distribution::Zipf,
            ][rng.random_range(0..3)],
            count: rng.random_range(60..300),
            l_max: rng.random_range(1.0..80.0),
            inst_min: 1,
            inst_max: 5,
            seed: rng.random(),
            ..Default::default()
        };
        let db = generate(&gen)?;
        let n = rng.random_range(2..=5);
        let parts = index_partitions(
            &db,
            &random_partition(&db, n, rng.random())?,
            rng.random_range(3..12),
        )?;
        let queries = bbox_queries(&db, 8, &mut rng);
        let exact_scores: Vec<Vec<f64>> = queries
            .iter()
            .map(|q| {
                db.objects
                    .iter()
                    .map(|o| object_score_exact(o, &db, q))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let index_of: std::collections::HashMap<ObjectId, usize> = db
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| (o.id, i))
            .collect();
        for me in 0..parts.len() {
            let point_view = RemoteView::new(
                parts[me].clone(),
                (0..parts.len())
                    .filter(|&l| l != me)
                    .map(|l| IndexSummary::instance_points(l as u32, &parts[l].data))
                    .collect(),
            )?
            .with_fault(fault);
            for (qi, q) in queries.iter().enumerate() {
                for pos in 0..parts[me].len() {
                    let exact = exact_scores[qi][index_of[&parts[me].data.objects[pos].id]];
                    let b = point_view.object_bounds_at(pos, q);
                    let err = (b.lb - exact).abs().max((b.ub - exact).abs());
                    report.point_trials += 1;
                    report.max_point_error = report.max_point_error.max(err);
                    if err > SCORE_TOL {
                        report.point_violations += 1;
                    }
                }
            }
        }
        for _ in 0..per_setup {
            let me = rng.random_range(0..parts.len());
            let levels: Vec<SummaryLevel> = parts.iter().map(|p| pick_level(&mut rng, p)).collect();
            let view = RemoteView::assemble(&parts, me, &levels)?.with_fault(fault);
            let qi = rng.random_range(0..queries.len());
            let pos = rng.random_range(0..parts[me].len());
            let id = parts[me].data.objects[pos].id;
            let exact = exact_scores[qi][index_of[&id]];
            let b = view.object_bounds_at(pos, &queries[qi]);
            report.trials += 1;
            if !b.contains(exact, SCORE_TOL) {
                report.violations += 1;
                if report.first_violation.is_none() {
                    report.first_violation = Some(format!(
                        "object {id}, levels {levels:?}: {b:?} vs exact {exact}"
                    ));
                }
            }
        }
    }
    Ok(report)
}

/// Index integrity of every tree built over a dataset split.
pub fn index_integrity(parts: &[Arc<IndexedPartition>]) -> Vec<(u32, Result<()>)> {
    parts
        .iter()
        .map(|p| (p.id, p.tree.check_invariants(&p.data, 1e-9)))
        .collect()
}

pub fn bounding_space(db: &Dataset) -> Option<Rect> {
    db.bounding_box()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CampaignConfig {
        CampaignConfig {
            configs: 9,
            max_objects: 150,
            sandwich_trials: 300,
            ..Default::default()
        }
    }

    #[test]
    fn clean_campaign_passes() {
        let r = run_campaign(&small()).unwrap();
        for t in &r.invariants {
            assert!(t.passed(), "{t:?}");
            assert!(t.checks > 0, "{} never checked", t.name);
        }
        assert!(r.passed);
        assert_eq!(r.cases.len(), 9);
    }

    #[test]
    fn broken_lower_bound_is_caught() {
        let r = run_campaign(&CampaignConfig {
            fault: FaultMode::BreakLb,
            ..small()
        })
        .unwrap();
        assert!(!r.passed);
        assert!(!r.tally(INV_SANDWICH).unwrap().passed());
        assert!(!r.mismatches.is_empty());
    }

    #[test]
    fn same_seed_same_report() {
        let a = run_campaign(&CampaignConfig {
            configs: 3,
            ..small()
        })
        .unwrap();
        let b = run_campaign(&CampaignConfig {
            configs: 3,
            ..small()
        })
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn near_ties_may_swap() {
        let db = crate::fixtures::laptop_dataset();
        let q = crate::fixtures::laptop_query();
        let want = ptd_exact(&db, &q, 4).unwrap();
        assert!(compare_answers(&db, &q, &want, &want).unwrap().is_empty());
        let mut shuffled = want.clone();
        shuffled.swap(0, 1);
        assert!(!compare_answers(&db, &q, &shuffled, &want)
            .unwrap()
            .is_empty());
        let mut short = want.clone();
        short.pop();
        assert_eq!(compare_answers(&db, &q, &short, &want).unwrap().len(), 1);
    }

    #[test]
    fn size_guard() {
        let big = CampaignConfig {
            max_objects: 50_000,
            ..small()
        };
        assert!(run_campaign(&big).is_err());
        assert!(run_campaign(&CampaignConfig {
            configs: 0,
            ..small()
        })
        .is_err());
    }

    #[test]
    fn sandwich_small() {
        let r = sandwich_campaign(3, 400, Fault::None).unwrap();
        assert!(r.trials >= 400);
        assert_eq!(r.violations, 0, "{:?}", r.first_violation);
        assert_eq!(r.point_violations, 0);
        let broken = sandwich_campaign(3, 400, Fault::SkipFull).unwrap();
        assert!(broken.violations > 0);
    }
}
