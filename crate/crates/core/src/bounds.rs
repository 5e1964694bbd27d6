//! Score bounds from a partition's local tree and the summaries it holds of
//! every other partition.
//!
//! For an instance `t_j` with dynamic coordinates `a`, each remote summary
//! entry is classified against the dominance region of `a`: Full entries
//! count towards both bounds, Partial entries only towards the upper bound.
//! The local partition is always evaluated exactly. Both bounds carry the
//! `t_j.p` factor so that `lb <= S(t_j) <= ub`.

use std::sync::Arc;

use crate::error::{PtdError, Result};
use crate::geometry::{
    classify_dyn, dominates_raw, dyn_interval_raw, Attrs, DominanceClass, Instance, QueryPoint,
    UncertainObject, MAX_INLINE_DIMS,
};
use crate::index::{
    ARTree, EntryKind, IndexSummary, IndexedPartition, LeafItem, SummaryLevel, TreeEntry,
};

const SUMMARY_TREE_FANOUT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundPair {
    pub lb: f64,
    pub ub: f64,
}

impl BoundPair {
    pub const ZERO: BoundPair = BoundPair { lb: 0.0, ub: 0.0 };

    pub fn contains(&self, score: f64, tol: f64) -> bool {
        self.lb <= score + tol && score <= self.ub + tol
    }
}

impl std::ops::Add for BoundPair {
    type Output = BoundPair;

    fn add(self, o: BoundPair) -> BoundPair {
        BoundPair {
            lb: self.lb + o.lb,
            ub: self.ub + o.ub,
        }
    }
}

/// Deliberate defects, used to prove the verification suite catches them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Drop remote Full contributions from both bounds.
    SkipFull,
}

/// A remote partition's summary plus a receiver-side tree over its entries,
/// so bound sums can be accumulated without scanning every entry.
#[derive(Debug, Clone)]
pub struct RemoteSummary {
    pub summary: IndexSummary,
    tree: ARTree,
}

impl RemoteSummary {
    pub fn new(summary: IndexSummary) -> Result<Self> {
        let items = summary
            .entries
            .iter()
            .enumerate()
            .map(|(key, e)| LeafItem {
                rect: e.rect.clone(),
                sum: e.sum,
                key,
            })
            .collect();
        let tree = ARTree::from_items(items, SUMMARY_TREE_FANOUT, summary.partition_id)?;
        Ok(Self { summary, tree })
    }

    pub fn partition_id(&self) -> u32 {
        self.summary.partition_id
    }

    /// Node ids of entries Partially dominated by a point with dynamic
    /// coordinates `a`, ascending.
    fn partial_ids(&self, a: &[f64], q: &[f64]) -> Vec<u64> {
        let mut out = Vec::new();
        let mut stack = vec![self.tree.root()];
        while let Some(e) = stack.pop() {
            if classify_dyn(a, &e.rect.lo, &e.rect.hi, q) != DominanceClass::Partial {
                continue;
            }
            match e.kind {
                EntryKind::Item { key } => out.push(self.summary.entries[key].node_id),
                EntryKind::Node { .. } => stack.extend(self.tree.children(e)),
            }
        }
        out.sort_unstable();
        out
    }
}

/// What one server knows: its own partition in full and a summary of each
/// of the others.
#[derive(Debug, Clone)]
pub struct RemoteView {
    pub local: Arc<IndexedPartition>,
    pub remotes: Vec<RemoteSummary>,
    pub fault: Fault,
    /// Every remote entry in one tree, for bound sums that do not need to
    /// know which partition an entry came from.
    merged: Option<ARTree>,
}

impl RemoteView {
    pub fn new(local: Arc<IndexedPartition>, summaries: Vec<IndexSummary>) -> Result<Self> {
        let mut seen = vec![local.id];
        for s in &summaries {
            if seen.contains(&s.partition_id) {
                return Err(PtdError::invalid(format!(
                    "partition {} appears twice in the view",
                    s.partition_id
                )));
            }
            seen.push(s.partition_id);
        }
        let items: Vec<LeafItem> = summaries
            .iter()
            .flat_map(|s| &s.entries)
            .enumerate()
            .map(|(key, e)| LeafItem {
                rect: e.rect.clone(),
                sum: e.sum,
                key,
            })
            .collect();
        let merged = if items.is_empty() {
            None
        } else {
            Some(ARTree::from_items(items, SUMMARY_TREE_FANOUT, local.id)?)
        };
        let remotes = summaries
            .into_iter()
            .map(RemoteSummary::new)
            .collect::<Result<_>>()?;
        Ok(Self {
            local,
            remotes,
            fault: Fault::None,
            merged,
        })
    }

    /// The view held by partition `me`, with every other partition cut at
    /// the level `levels[l]`.
    pub fn assemble(
        partitions: &[Arc<IndexedPartition>],
        me: usize,
        levels: &[SummaryLevel],
    ) -> Result<Self> {
        if levels.len() != partitions.len() {
            return Err(PtdError::invalid(format!(
                "{} levels for {} partitions",
                levels.len(),
                partitions.len()
            )));
        }
        let summaries = partitions
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != me)
            .map(|(l, p)| p.tree.level_cut(levels[l]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(partitions[me].clone(), summaries)
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = fault;
        self
    }

    pub fn partition_count(&self) -> usize {
        self.remotes.len() + 1
    }

    pub fn remote(&self, partition_id: u32) -> Option<&RemoteSummary> {
        self.remotes
            .iter()
            .find(|r| r.partition_id() == partition_id)
    }

    /// Exact probability mass of local instances, outside the object at
    /// position `own`, dynamically dominated by the point `t`.
    fn local_dominated<'a>(
        &'a self,
        t: &[f64],
        a: &[f64],
        own: usize,
        q: &[f64],
        stack: &mut Vec<&'a TreeEntry>,
    ) -> f64 {
        let tree = &self.local.tree;
        let mut mass = 0.0;
        stack.clear();
        stack.push(tree.root());
        while let Some(e) = stack.pop() {
            match classify_dyn(a, &e.rect.lo, &e.rect.hi, q) {
                // `t` lies inside its own object's rectangle, so a Full
                // entry can never contain the own object.
                DominanceClass::Full => mass += e.sum,
                DominanceClass::None => {}
                DominanceClass::Partial => match e.kind {
                    EntryKind::Item { key } if key == own => {}
                    EntryKind::Item { key } => {
                        for s in &self.local.data.objects[key].instances {
                            if dominates_raw(t, s.attrs(), q) {
                                mass += s.prob;
                            }
                        }
                    }
                    EntryKind::Node { .. } => stack.extend(tree.children(e)),
                },
            }
        }
        mass
    }

    /// Local mass whose dynamic coordinates are componentwise >= `b`.
    fn local_weakly_beyond(&self, b: &[f64], q: &[f64]) -> f64 {
        let tree = &self.local.tree;
        let mut mass = 0.0;
        let mut stack = vec![tree.root()];
        while let Some(e) = stack.pop() {
            let mut all_beyond = true;
            let mut none_beyond = false;
            for k in 0..q.len() {
                let (dlo, dhi) = dyn_interval_raw(e.rect.lo[k], e.rect.hi[k], q[k]);
                if dlo < b[k] {
                    all_beyond = false;
                }
                if dhi < b[k] {
                    none_beyond = true;
                }
            }
            if all_beyond {
                mass += e.sum;
            } else if !none_beyond {
                match e.kind {
                    EntryKind::Item { key } => {
                        for s in &self.local.data.objects[key].instances {
                            let x = s.attrs();
                            if (0..q.len()).all(|k| (x[k] - q[k]).abs() >= b[k]) {
                                mass += s.prob;
                            }
                        }
                    }
                    EntryKind::Node { .. } => stack.extend(tree.children(e)),
                }
            }
        }
        mass
    }

    /// Bounds for one instance of the local object at position `own`.
    pub(crate) fn instance_bounds_at(
        &self,
        tj: &Instance,
        own: usize,
        q: &QueryPoint,
    ) -> BoundPair {
        let qa = q.attrs();
        let t = tj.attrs();
        with_dyn(t, qa, |a| {
            let mut stack = Vec::with_capacity(64);
            let (mut full, partial) = self.remote_masses(a, qa, &mut stack);
            if self.fault == Fault::SkipFull {
                full = 0.0;
            }
            let local = self.local_dominated(t, a, own, qa, &mut stack);
            BoundPair {
                lb: tj.prob * (full + local),
                ub: tj.prob * (full + partial + local),
            }
        })
    }

    /// (Full, Partial) mass over all remote summaries for dynamic
    /// coordinates `a`.
    fn remote_masses<'a>(
        &'a self,
        a: &[f64],
        q: &[f64],
        stack: &mut Vec<&'a TreeEntry>,
    ) -> (f64, f64) {
        let Some(tree) = &self.merged else {
            return (0.0, 0.0);
        };
        let (mut full, mut partial) = (0.0, 0.0);
        stack.clear();
        stack.push(tree.root());
        while let Some(e) = stack.pop() {
            match classify_dyn(a, &e.rect.lo, &e.rect.hi, q) {
                DominanceClass::Full => full += e.sum,
                DominanceClass::None => {}
                DominanceClass::Partial => match e.kind {
                    EntryKind::Item { .. } => partial += e.sum,
                    EntryKind::Node { .. } => stack.extend(tree.children(e)),
                },
            }
        }
        (full, partial)
    }

    pub(crate) fn object_bounds_at(&self, own: usize, q: &QueryPoint) -> BoundPair {
        let t = &self.local.data.objects[own];
        t.instances.iter().fold(BoundPair::ZERO, |acc, tj| {
            acc + self.instance_bounds_at(tj, own, q)
        })
    }

    /// Lower bound of the object at `own` with the local term summed flat,
    /// object by object in partition order. Without remote partitions this
    /// is bit-identical to the brute-force score.
    pub(crate) fn object_lb_flat(&self, own: usize, q: &QueryPoint) -> f64 {
        let qa = q.attrs();
        let objects = &self.local.data.objects;
        objects[own]
            .instances
            .iter()
            .map(|tj| {
                let (full, local) = with_dyn(tj.attrs(), qa, |a| {
                    let full = if self.fault == Fault::SkipFull {
                        0.0
                    } else {
                        self.remote_masses(a, qa, &mut Vec::new()).0
                    };
                    let mut local = 0.0;
                    for (i, s) in objects.iter().enumerate() {
                        if i == own {
                            continue;
                        }
                        for si in &s.instances {
                            if dyn_point_dominates(a, si.attrs(), qa) {
                                local += si.prob;
                            }
                        }
                    }
                    (full, local)
                });
                let mass = if self.remotes.is_empty() {
                    local
                } else {
                    full + local
                };
                tj.prob * mass
            })
            .sum()
    }

    /// Upper bound on S(t) for every object under the local entry `e`.
    pub(crate) fn entry_score_ub(&self, e: &TreeEntry, q: &QueryPoint) -> f64 {
        let qa = q.attrs();
        let b: Vec<f64> = (0..qa.len())
            .map(|k| dyn_interval_raw(e.rect.lo[k], e.rect.hi[k], qa[k]).0)
            .collect();
        let (f, p) = self.remote_masses(&b, qa, &mut Vec::new());
        let remote = if self.fault == Fault::SkipFull {
            p
        } else {
            f + p
        };
        remote + self.local_weakly_beyond(&b, qa)
    }

    /// Partially dominated entries per remote partition, as (partition, ids).
    pub(crate) fn partial_lists(&self, tj: &Instance, q: &QueryPoint) -> Vec<(u32, Vec<u64>)> {
        let qa = q.attrs();
        with_dyn(tj.attrs(), qa, |a| {
            self.remotes
                .iter()
                .map(|r| (r.partition_id(), r.partial_ids(a, qa)))
                .filter(|(_, ids)| !ids.is_empty())
                .collect()
        })
    }

    fn locate(&self, t: &UncertainObject) -> Result<usize> {
        self.local.position(t.id).ok_or_else(|| {
            PtdError::invalid(format!(
                "object {} is not in local partition {}",
                t.id, self.local.id
            ))
        })
    }
}

/// Same decision as `dominates_raw(u, v, q)` given `a = |u - q|`.
#[inline]
fn dyn_point_dominates(a: &[f64], v: &[f64], q: &[f64]) -> bool {
    let mut strict = false;
    for k in 0..q.len() {
        let dv = (v[k] - q[k]).abs();
        if a[k] > dv {
            return false;
        }
        strict |= a[k] < dv;
    }
    strict
}

fn with_dyn<R>(t: &[f64], q: &[f64], f: impl FnOnce(&[f64]) -> R) -> R {
    if q.len() <= MAX_INLINE_DIMS {
        let mut a = [0.0f64; MAX_INLINE_DIMS];
        for k in 0..q.len() {
            a[k] = (t[k] - q[k]).abs();
        }
        f(&a[..q.len()])
    } else {
        let a: Vec<f64> = t.iter().zip(q).map(|(x, y)| (x - y).abs()).collect();
        f(&a)
    }
}

pub fn instance_bounds(
    tj: &Instance,
    t: &UncertainObject,
    q: &QueryPoint,
    view: &RemoteView,
) -> Result<BoundPair> {
    if tj.object_id != t.id || !t.instances.contains(tj) {
        return Err(PtdError::invalid(format!(
            "instance {} is not part of object {}",
            tj.instance_id, t.id
        )));
    }
    if q.dims() != view.local.data.dims {
        return Err(PtdError::DimensionMismatch {
            expected: view.local.data.dims,
            got: q.dims(),
        });
    }
    let own = view.locate(t)?;
    Ok(view.instance_bounds_at(tj, own, q))
}

pub fn object_bounds(t: &UncertainObject, q: &QueryPoint, view: &RemoteView) -> Result<BoundPair> {
    if q.dims() != view.local.data.dims {
        return Err(PtdError::DimensionMismatch {
            expected: view.local.data.dims,
            got: q.dims(),
        });
    }
    let own = view.locate(t)?;
    Ok(view.object_bounds_at(own, q))
}

/// Upper bound for every object under local entry `entry_id` (a node or an
/// object entry of the local tree).
pub fn node_score_ub(entry_id: u64, q: &QueryPoint, view: &RemoteView) -> Result<f64> {
    let e = view
        .local
        .tree
        .entry(entry_id)
        .ok_or_else(|| PtdError::invalid(format!("entry {entry_id} not in local tree")))?;
    Ok(view.entry_score_ub(e, q))
}

/// Entries of `summary` that `tj` partially dominates, by ascending node id.
pub fn partially_dominated(tj: &Instance, q: &QueryPoint, summary: &IndexSummary) -> Vec<u64> {
    let qa = q.attrs();
    let mut ids: Vec<u64> = with_dyn(tj.attrs(), qa, |a| {
        summary
            .entries
            .iter()
            .filter(|e| classify_dyn(a, &e.rect.lo, &e.rect.hi, qa) == DominanceClass::Partial)
            .map(|e| e.node_id)
            .collect()
    });
    ids.sort_unstable();
    ids
}
