//! A simulated N-server deployment. Every worker owns one partition and a
//! summary of each other partition; queries run as two map/reduce rounds
//! whose shuffles pass through the wire codec and are charged to a ledger.

mod jobs;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use jobs::{filtering_mapper, filtering_reducer, refinement_mapper};
use wire::{CommLedger, LinkRecord, LinkStats, Message, Payload};

use crate::bounds::{BoundPair, Fault, RemoteView};
use crate::data::Partitioning;
use crate::error::{PtdError, Result};
use crate::geometry::{Dataset, Instance, ObjectId, QueryPoint};
use crate::index::{IndexSummary, IndexedPartition, SummaryLevel};
use crate::oracle::{rank_order, ScoredObject};

/// The worker that also acts as master.
pub const MASTER: u32 = 0;

#[derive(Debug, Clone)]
pub struct Worker {
    pub view: RemoteView,
}

impl Worker {
    pub fn partition_id(&self) -> u32 {
        self.view.local.id
    }

    pub fn partition(&self) -> &IndexedPartition {
        &self.view.local
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEmission {
    /// Partition that must resolve `eid`.
    pub key: u32,
    pub object_id: ObjectId,
    pub instance: Instance,
    pub eid: u64,
    pub lb: f64,
    pub ub: f64,
    pub tau: f64,
}

impl CandidateEmission {
    pub(crate) fn sort_key(&self) -> (u32, ObjectId, u32, u64) {
        (
            self.key,
            self.object_id,
            self.instance.instance_id,
            self.eid,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PartialScore {
    Pruned,
    Score { lb: f64, delta: f64, tau: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialScoreEmission {
    pub object_id: ObjectId,
    pub value: PartialScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub object_id: ObjectId,
    pub bounds: BoundPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapperOutput {
    pub partition_id: u32,
    pub candidates: Vec<Candidate>,
    pub emissions: Vec<CandidateEmission>,
    pub tau: f64,
    pub nodes_visited: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    #[default]
    Threaded,
    Single,
}

/// Wall clock in milliseconds. Reads zero where no monotonic clock exists.
#[derive(Debug, Clone, Copy)]
pub struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    pub fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    pub fn elapsed_ms(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64() * 1e3
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "worker panicked".into())
}

/// Runs `f` once per item, concurrently unless `mode` is single-threaded.
/// A panic in any task becomes a `Worker` error naming that task.
pub fn run_phase<T: Sync, R: Send>(
    mode: ExecMode,
    items: &[T],
    f: impl Fn(usize, &T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let wrap = |i: usize, r: std::thread::Result<Result<R>>| -> Result<R> {
        r.map_err(|p| PtdError::Worker {
            worker: i as u32,
            message: panic_message(p),
        })?
    };
    match mode {
        ExecMode::Single => items
            .iter()
            .enumerate()
            .map(|(i, t)| {
                wrap(
                    i,
                    std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| f(i, t))),
                )
            })
            .collect(),
        ExecMode::Threaded => std::thread::scope(|s| {
            let handles: Vec<_> = items
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    s.spawn({
                        let f = &f;
                        move || f(i, t)
                    })
                })
                .collect();
            handles
                .into_iter()
                .enumerate()
                .map(|(i, h)| wrap(i, h.join()))
                .collect()
        }),
    }
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub workers: Vec<Worker>,
    pub levels: Vec<SummaryLevel>,
    /// Bytes of encoded summaries shipped during the offline phase.
    pub summary_bytes: usize,
    pub dims: usize,
    home: HashMap<ObjectId, u32>,
}

impl Cluster {
    /// Offline phase: every partition's summary at `levels[l]` is encoded
    /// once and decoded by each of the other workers.
    pub fn new(partitions: Vec<Arc<IndexedPartition>>, levels: &[SummaryLevel]) -> Result<Self> {
        let n = partitions.len();
        if n == 0 || n > u16::MAX as usize {
            return Err(PtdError::invalid(format!("cannot run {n} workers")));
        }
        if levels.len() != n {
            return Err(PtdError::invalid(format!(
                "{} levels for {n} partitions",
                levels.len()
            )));
        }
        let dims = partitions[0].data.dims;
        let mut home = HashMap::new();
        for (l, p) in partitions.iter().enumerate() {
            if p.id as usize != l {
                return Err(PtdError::invalid(format!(
                    "partition at position {l} has id {}",
                    p.id
                )));
            }
            if p.data.dims != dims {
                return Err(PtdError::DimensionMismatch {
                    expected: dims,
                    got: p.data.dims,
                });
            }
            for o in &p.data.objects {
                if home.insert(o.id, l as u32).is_some() {
                    return Err(PtdError::invalid(format!(
                        "object {} is in more than one partition",
                        o.id
                    )));
                }
            }
        }
        let encoded = partitions
            .iter()
            .zip(levels)
            .map(|(p, &lvl)| p.tree.level_cut(lvl)?.encode())
            .collect::<Result<Vec<_>>>()?;
        let summary_bytes = encoded.iter().map(Vec::len).sum::<usize>() * (n - 1);
        let workers = (0..n)
            .map(|me| {
                let summaries = (0..n)
                    .filter(|&l| l != me)
                    .map(|l| IndexSummary::decode(&encoded[l]))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Worker {
                    view: RemoteView::new(partitions[me].clone(), summaries)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            workers,
            levels: levels.to_vec(),
            summary_bytes,
            dims,
            home,
        })
    }

    pub fn build(
        db: &Dataset,
        partitioning: &Partitioning,
        fanout: usize,
        levels: &[SummaryLevel],
    ) -> Result<Self> {
        Self::new(index_partitions(db, partitioning, fanout)?, levels)
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        for w in &mut self.workers {
            w.view.fault = fault;
        }
        self
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    pub fn home_of(&self, id: ObjectId) -> Option<u32> {
        self.home.get(&id).copied()
    }

    pub fn partitions(&self) -> Vec<Arc<IndexedPartition>> {
        self.workers.iter().map(|w| w.view.local.clone()).collect()
    }
}

/// Splits and indexes a dataset. Every partition must be non-empty.
pub fn index_partitions(
    db: &Dataset,
    partitioning: &Partitioning,
    fanout: usize,
) -> Result<Vec<Arc<IndexedPartition>>> {
    partitioning
        .split(db)?
        .into_iter()
        .enumerate()
        .map(|(l, d)| Ok(Arc::new(IndexedPartition::build(l as u32, d, fanout)?)))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub filtering_map_ms: f64,
    pub filtering_reduce_ms: f64,
    pub refinement_ms: f64,
    pub master_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub wall: PhaseTimes,
    /// Bytes that crossed between distinct workers.
    pub comm_bytes: u64,
    pub comm_messages: u64,
    pub links: Vec<LinkRecord>,
    pub candidates: Vec<usize>,
    pub pruning_power: Vec<f64>,
    /// (instance, entry) pairs emitted towards each partition.
    pub emissions_to: Vec<usize>,
}

/// Where each object that left the running was stopped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub taus: Vec<f64>,
    pub reducer_tau: f64,
    pub candidates: Vec<Vec<Candidate>>,
    pub pruned_by_mapper: BTreeSet<ObjectId>,
    pub pruned_by_reducer: BTreeSet<ObjectId>,
    pub suppressed_by_refinement: BTreeSet<ObjectId>,
    /// Scores that reached the master, before the final cut to k.
    pub at_master: Vec<ScoredObject>,
    /// Exact-bounded candidates sent straight to the master.
    pub forwarded: BTreeSet<ObjectId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryReport {
    pub answers: Vec<ScoredObject>,
    pub metrics: QueryMetrics,
    pub diagnostics: Diagnostics,
    pub ledger: CommLedger,
}

struct Bus {
    inbox: Vec<Vec<Vec<u8>>>,
    ledger: CommLedger,
}

impl Bus {
    fn new(n: usize) -> Self {
        Self {
            inbox: vec![Vec::new(); n],
            ledger: CommLedger::default(),
        }
    }

    /// Delivers the outboxes in worker order.
    fn deliver(&mut self, outboxes: Vec<Vec<Message>>) {
        for out in outboxes {
            for m in out {
                let bytes = m.encode();
                self.ledger
                    .charge(m.src, m.dst, m.payload.phase(), bytes.len());
                self.inbox[m.dst as usize].push(bytes);
            }
        }
    }

    fn take(&mut self) -> Vec<Vec<Vec<u8>>> {
        let n = self.inbox.len();
        std::mem::replace(&mut self.inbox, vec![Vec::new(); n])
    }
}

fn decode_all(inbox: &[Vec<u8>]) -> Result<Vec<Message>> {
    inbox.iter().map(|b| Message::decode(b)).collect()
}

pub fn run_ptd(cluster: &Cluster, q: &QueryPoint, k: usize, mode: ExecMode) -> Result<QueryReport> {
    if k == 0 {
        return Err(PtdError::invalid("k must be at least 1"));
    }
    if q.dims() != cluster.dims {
        return Err(PtdError::DimensionMismatch {
            expected: cluster.dims,
            got: q.dims(),
        });
    }
    let n = cluster.len();
    let total = Stopwatch::start();
    let mut wall = PhaseTimes::default();
    let mut bus = Bus::new(n);
    let mut diag = Diagnostics::default();

    // Round 1, map.
    let sw = Stopwatch::start();
    let mapped = run_phase(mode, &cluster.workers, |_, w| filtering_mapper(w, q, k))?;
    let outboxes: Vec<Vec<Message>> = mapped
        .iter()
        .map(|m| {
            let src = m.partition_id as u16;
            let mut out: Vec<Message> = (0..n as u16)
                .filter(|&l| l != src)
                .map(|l| Message {
                    src,
                    dst: l,
                    payload: Payload::Threshold(m.tau),
                })
                .collect();
            out.extend(m.emissions.iter().map(|e| Message {
                src,
                dst: e.key as u16,
                payload: Payload::Candidate(e.clone()),
            }));
            let emitting: BTreeSet<ObjectId> = m.emissions.iter().map(|e| e.object_id).collect();
            for c in m
                .candidates
                .iter()
                .filter(|c| !emitting.contains(&c.object_id))
            {
                let s = ScoredObject {
                    object_id: c.object_id,
                    score: c.bounds.lb,
                };
                out.push(Message {
                    src,
                    dst: MASTER as u16,
                    payload: Payload::Direct(s),
                });
            }
            out
        })
        .collect();
    bus.deliver(outboxes);
    wall.filtering_map_ms = sw.elapsed_ms();

    for (w, m) in cluster.workers.iter().zip(&mapped) {
        let kept: BTreeSet<ObjectId> = m.candidates.iter().map(|c| c.object_id).collect();
        diag.pruned_by_mapper.extend(
            w.partition()
                .data
                .objects
                .iter()
                .map(|o| o.id)
                .filter(|id| !kept.contains(id)),
        );
    }
    diag.taus = mapped.iter().map(|m| m.tau).collect();
    diag.candidates = mapped.iter().map(|m| m.candidates.clone()).collect();

    // Round 1, reduce.
    let sw = Stopwatch::start();
    let inboxes = bus.take();
    let mut direct_inbox: Vec<Vec<u8>> = Vec::new();
    let mut reducer_inputs = Vec::with_capacity(n);
    for (l, inbox) in inboxes.into_iter().enumerate() {
        let mut tau = mapped[l].tau;
        let mut emissions = Vec::new();
        let mut homes = HashMap::new();
        for (bytes, msg) in inbox.iter().zip(decode_all(&inbox)?) {
            match msg.payload {
                Payload::Threshold(t) => tau = tau.max(t),
                Payload::Candidate(e) => {
                    homes.insert(e.object_id, msg.src);
                    emissions.push(e);
                }
                Payload::Direct(_) => direct_inbox.push(bytes.clone()),
                other => {
                    return Err(PtdError::Protocol(format!(
                        "unexpected {:?} before reduce",
                        other.phase()
                    )))
                }
            }
        }
        reducer_inputs.push((tau, emissions, homes));
    }
    let reduced = run_phase(mode, &reducer_inputs, |l, (tau, emissions, homes)| {
        let w = &cluster.workers[l];
        let out = filtering_reducer(w, q, emissions, *tau)?;
        Ok(out
            .into_iter()
            .map(|e| Message {
                src: l as u16,
                dst: homes[&e.object_id],
                payload: Payload::Partial(e),
            })
            .collect::<Vec<_>>())
    })?;
    diag.reducer_tau = reducer_inputs
        .iter()
        .map(|r| r.0)
        .fold(f64::NEG_INFINITY, f64::max);
    bus.deliver(reduced);
    wall.filtering_reduce_ms = sw.elapsed_ms();

    // Round 2.
    let sw = Stopwatch::start();
    let inboxes = bus.take();
    let expected: Vec<HashMap<ObjectId, usize>> = mapped
        .iter()
        .map(|m| {
            let mut targets: HashMap<ObjectId, BTreeSet<u32>> = HashMap::new();
            for e in &m.emissions {
                targets.entry(e.object_id).or_default().insert(e.key);
            }
            targets.into_iter().map(|(id, t)| (id, t.len())).collect()
        })
        .collect();
    let refined = run_phase(mode, &inboxes, |i, inbox| {
        let mut lists: BTreeMap<ObjectId, Vec<PartialScore>> = BTreeMap::new();
        for msg in decode_all(inbox)? {
            let Payload::Partial(e) = msg.payload else {
                return Err(PtdError::Protocol(
                    "unexpected message in refinement".into(),
                ));
            };
            lists.entry(e.object_id).or_default().push(e.value);
        }
        if lists.len() != expected[i].len() {
            return Err(PtdError::Protocol(format!(
                "worker {i} expected {} objects back",
                expected[i].len()
            )));
        }
        let mut out = Vec::new();
        let mut pruned = Vec::new();
        let mut suppressed = Vec::new();
        for (id, list) in lists {
            if expected[i].get(&id) != Some(&list.len()) {
                return Err(PtdError::Protocol(format!(
                    "object {id}: {} partial scores received",
                    list.len()
                )));
            }
            match refinement_mapper(id, &list)? {
                Some(s) => out.push(Message {
                    src: i as u16,
                    dst: MASTER as u16,
                    payload: Payload::Refined(s),
                }),
                None if list.contains(&PartialScore::Pruned) => pruned.push(id),
                None => suppressed.push(id),
            }
        }
        Ok((out, pruned, suppressed))
    })?;
    let mut outboxes = Vec::with_capacity(n);
    for (out, pruned, suppressed) in refined {
        diag.pruned_by_reducer.extend(pruned);
        diag.suppressed_by_refinement.extend(suppressed);
        outboxes.push(out);
    }
    bus.deliver(outboxes);
    wall.refinement_ms = sw.elapsed_ms();

    // Master.
    let sw = Stopwatch::start();
    let mut inbox = bus.take().swap_remove(MASTER as usize);
    inbox.extend(direct_inbox);
    let mut scores = Vec::new();
    for msg in decode_all(&inbox)? {
        match msg.payload {
            Payload::Refined(s) => scores.push(s),
            Payload::Direct(s) => {
                diag.forwarded.insert(s.object_id);
                scores.push(s);
            }
            other => {
                return Err(PtdError::Protocol(format!(
                    "unexpected {:?} at master",
                    other.phase()
                )))
            }
        }
    }
    scores.sort_by(rank_order);
    diag.at_master = scores.clone();
    scores.truncate(k);
    wall.master_ms = sw.elapsed_ms();
    wall.total_ms = total.elapsed_ms();

    let LinkStats { messages, bytes } = bus.ledger.total();
    let candidates: Vec<usize> = mapped.iter().map(|m| m.candidates.len()).collect();
    let pruning_power = cluster
        .workers
        .iter()
        .zip(&candidates)
        .map(|(w, &c)| {
            let d = w.partition().len() as f64;
            (d - c as f64) / d
        })
        .collect();
    let mut emissions_to = vec![0; n];
    for m in &mapped {
        for e in &m.emissions {
            emissions_to[e.key as usize] += 1;
        }
    }
    let metrics = QueryMetrics {
        wall,
        comm_bytes: bytes,
        comm_messages: messages,
        links: bus.ledger.records(),
        candidates,
        pruning_power,
        emissions_to,
    };
    Ok(QueryReport {
        answers: scores,
        metrics,
        diagnostics: diag,
        ledger: bus.ledger,
    })
}
