use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::{
    Candidate, CandidateEmission, MapperOutput, PartialScore, PartialScoreEmission, Worker,
};
use crate::error::{PtdError, Result};
use crate::geometry::{
    classify_dyn, dominates_raw, Attrs, DominanceClass, Instance, ObjectId, QueryPoint,
};
use crate::index::{EntryKind, SummaryLevel};
use crate::oracle::ScoredObject;

/// Max-heap entry: larger upper bound first, then smaller node id.
#[derive(Debug, PartialEq)]
struct ByUpperBound {
    ub: f64,
    id: u64,
}

impl Eq for ByUpperBound {}

impl Ord for ByUpperBound {
    fn cmp(&self, o: &Self) -> Ordering {
        self.ub.total_cmp(&o.ub).then(o.id.cmp(&self.id))
    }
}

impl PartialOrd for ByUpperBound {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

fn kth_largest_lb(cands: &[Candidate], k: usize) -> f64 {
    let mut lbs: Vec<f64> = cands.iter().map(|c| c.bounds.lb).collect();
    let (_, kth, _) = lbs.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    *kth
}

/// Best-first search of the local tree for objects that may reach the
/// top-k, followed by one emission per (candidate instance, remote entry it
/// partially dominates).
///
/// Pruning is strict: a node or object survives when its upper bound equals
/// the threshold, so objects tied with the k-th score are never lost.
pub fn filtering_mapper(worker: &Worker, q: &QueryPoint, k: usize) -> Result<MapperOutput> {
    if k == 0 {
        return Err(PtdError::invalid("k must be at least 1"));
    }
    let view = &worker.view;
    let part = &view.local;
    if q.dims() != part.data.dims {
        return Err(PtdError::DimensionMismatch {
            expected: part.data.dims,
            got: q.dims(),
        });
    }
    let tree = &part.tree;
    let mut tau = f64::NEG_INFINITY;
    let mut cands: Vec<Candidate> = Vec::new();
    let mut heap = BinaryHeap::new();
    heap.push(ByUpperBound {
        ub: f64::INFINITY,
        id: tree.root().id,
    });
    let mut nodes_visited = 0usize;

    while let Some(ByUpperBound { ub, id }) = heap.pop() {
        if ub < tau {
            break;
        }
        nodes_visited += 1;
        let e = tree.entry(id).expect("heap holds local node ids");
        if e.level == SummaryLevel::Node(0) {
            for child in tree.children(e) {
                let EntryKind::Item { key } = child.kind else {
                    unreachable!("leaf nodes hold objects")
                };
                let object_id = part.data.objects[key].id;
                if cands.len() < k {
                    cands.push(Candidate {
                        object_id,
                        bounds: view.object_bounds_at(key, q),
                    });
                    if cands.len() == k {
                        tau = kth_largest_lb(&cands, k);
                    }
                } else {
                    let bounds = view.object_bounds_at(key, q);
                    if bounds.ub >= tau {
                        cands.push(Candidate { object_id, bounds });
                        tau = kth_largest_lb(&cands, k);
                        cands.retain(|c| c.bounds.ub >= tau);
                    }
                }
            }
        } else {
            for child in tree.children(e) {
                let cub = view.entry_score_ub(child, q);
                if cub >= tau {
                    heap.push(ByUpperBound {
                        ub: cub,
                        id: child.id,
                    });
                }
            }
        }
    }

    cands.sort_by_key(|c| c.object_id);
    for c in &mut cands {
        let pos = part.position(c.object_id).expect("candidate is local");
        c.bounds.lb = view.object_lb_flat(pos, q);
    }
    let mut emissions = Vec::new();
    for c in &cands {
        let t = part.object(c.object_id).expect("candidate is local");
        for tj in &t.instances {
            for (l, ids) in view.partial_lists(tj, q) {
                for eid in ids {
                    emissions.push(CandidateEmission {
                        key: l,
                        object_id: c.object_id,
                        instance: tj.clone(),
                        eid,
                        lb: c.bounds.lb,
                        ub: c.bounds.ub,
                        tau,
                    });
                }
            }
        }
    }
    emissions.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(MapperOutput {
        partition_id: part.id,
        candidates: cands,
        emissions,
        tau,
        nodes_visited,
    })
}

/// Exact probability mass, times `tj.prob`, that `tj` dominates inside the
/// subtree rooted at local entry `eid`.
fn partial_score(worker: &Worker, eid: u64, tj: &Instance, q: &QueryPoint) -> Result<(f64, f64)> {
    let part = &worker.view.local;
    let tree = &part.tree;
    let root = tree.entry(eid).ok_or_else(|| {
        PtdError::Protocol(format!(
            "entry {eid} is not in the tree of partition {}",
            part.id
        ))
    })?;
    let (t, qa) = (tj.attrs(), q.attrs());
    let a: Vec<f64> = t.iter().zip(qa).map(|(x, y)| (x - y).abs()).collect();
    let mut mass = 0.0;
    let mut heap: BinaryHeap<Reverse<(i32, u64)>> = BinaryHeap::new();
    let object_mass = |key: usize| -> f64 {
        part.data.objects[key]
            .instances
            .iter()
            .filter(|s| dominates_raw(t, s.attrs(), qa))
            .map(|s| s.prob)
            .sum()
    };
    match root.kind {
        EntryKind::Item { key } => mass += object_mass(key),
        EntryKind::Node { .. } => {
            for c in tree.children(root) {
                heap.push(Reverse((c.level.rank(), c.id)));
            }
        }
    }
    while let Some(Reverse((_, id))) = heap.pop() {
        let e = tree.entry(id).expect("child ids are valid");
        match e.kind {
            EntryKind::Item { key } => mass += object_mass(key),
            EntryKind::Node { .. } => {
                for c in tree.children(e) {
                    match classify_dyn(&a, &c.rect.lo, &c.rect.hi, qa) {
                        DominanceClass::Full => mass += c.sum,
                        DominanceClass::Partial => heap.push(Reverse((c.level.rank(), c.id))),
                        DominanceClass::None => {}
                    }
                }
            }
        }
    }
    Ok((tj.prob * mass, tj.prob * root.sum))
}

/// Resolves every received (instance, entry) pair against the local tree.
/// `tau_floor` is the largest threshold this worker has heard of; received
/// emissions can only raise it.
pub fn filtering_reducer(
    worker: &Worker,
    q: &QueryPoint,
    grouped: &[CandidateEmission],
    tau_floor: f64,
) -> Result<Vec<PartialScoreEmission>> {
    let me = worker.view.local.id;
    if let Some(bad) = grouped.iter().find(|e| e.key != me) {
        return Err(PtdError::Protocol(format!(
            "emission keyed to {} delivered to {me}",
            bad.key
        )));
    }
    let tau = grouped.iter().map(|e| e.tau).fold(tau_floor, f64::max);
    let mut order: Vec<&CandidateEmission> = grouped.iter().collect();
    order.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    let mut out = Vec::new();
    for group in order.chunk_by(|a, b| a.object_id == b.object_id) {
        let first = group[0];
        let mut ub = first.ub;
        let mut delta = 0.0;
        let mut pruned = false;
        for em in group {
            if (em.lb - first.lb).abs() > 1e-9 || (em.ub - first.ub).abs() > 1e-9 {
                return Err(PtdError::Protocol(format!(
                    "inconsistent bounds for object {}",
                    em.object_id
                )));
            }
            let (p_score, charged) = partial_score(worker, em.eid, &em.instance, q)?;
            ub = ub - charged + p_score;
            if ub < tau {
                pruned = true;
                break;
            }
            delta += p_score;
        }
        let value = if pruned {
            PartialScore::Pruned
        } else {
            PartialScore::Score {
                lb: first.lb,
                delta,
                tau,
            }
        };
        out.push(PartialScoreEmission {
            object_id: first.object_id,
            value,
        });
    }
    Ok(out)
}

/// Combines all partial scores of one object. `None` when any reducer
/// pruned it or the combined score falls below the threshold.
pub fn refinement_mapper(
    object_id: ObjectId,
    list: &[PartialScore],
) -> Result<Option<ScoredObject>> {
    if list.is_empty() {
        return Err(PtdError::Protocol(format!(
            "no partial scores for object {object_id}"
        )));
    }
    if list.contains(&PartialScore::Pruned) {
        return Ok(None);
    }
    let mut lb0 = None;
    let mut tau0 = None;
    let mut score = 0.0;
    for v in list {
        let PartialScore::Score { lb, delta, tau } = *v else {
            unreachable!()
        };
        let lb0 = *lb0.get_or_insert(lb);
        let tau0 = *tau0.get_or_insert(tau);
        if (lb - lb0).abs() > 1e-9 {
            return Err(PtdError::Protocol(format!(
                "object {object_id}: lower bounds {lb0} and {lb} disagree"
            )));
        }
        if tau.to_bits() != tau0.to_bits() {
            return Err(PtdError::Protocol(format!(
                "object {object_id}: thresholds {tau0} and {tau} disagree"
            )));
        }
        score += delta;
    }
    let score = lb0.expect("non-empty") + score;
    if score < tau0.expect("non-empty") {
        return Ok(None);
    }
    Ok(Some(ScoredObject { object_id, score }))
}
