//! Object bound terms for one sample query, for every level of every
//! partition at once.
//!
//! An object's bounds are a sum of its exact local mass and one (Full,
//! Partial) pair per remote partition, so the bounds under any level choice
//! can be assembled from these terms without rebuilding views.

use std::sync::Arc;

use crate::bounds::RemoteView;
use crate::error::Result;
use crate::geometry::{classify_dyn, dyn_interval_raw, Attrs, DominanceClass, QueryPoint};
use crate::index::{ARTree, EntryKind, IndexedPartition, SummaryLevel, TreeEntry};

pub(super) fn level_index(level: SummaryLevel) -> usize {
    (level.rank() + 1) as usize
}

pub(super) struct BoundTerms {
    widths: Vec<usize>,
    offsets: Vec<usize>,
    stride: usize,
    /// `local[i][t]`: exact mass object t of partition i dominates at home,
    /// weighted by instance probability.
    local: Vec<Vec<f64>>,
    /// `full[i][t * stride + offsets[j] + h]`: Full mass of partition j's
    /// cut at level index h against object t of partition i.
    full: Vec<Vec<f64>>,
    partial: Vec<Vec<f64>>,
}

impl BoundTerms {
    pub(super) fn compute(partitions: &[Arc<IndexedPartition>], q: &QueryPoint) -> Result<Self> {
        let widths: Vec<usize> = partitions.iter().map(|p| p.tree.height + 1).collect();
        let mut offsets = Vec::with_capacity(widths.len());
        let mut stride = 0;
        for w in &widths {
            offsets.push(stride);
            stride += w;
        }
        let mut terms = BoundTerms {
            local: partitions.iter().map(|p| vec![0.0; p.len()]).collect(),
            full: partitions
                .iter()
                .map(|p| vec![0.0; p.len() * stride])
                .collect(),
            partial: partitions
                .iter()
                .map(|p| vec![0.0; p.len() * stride])
                .collect(),
            widths,
            offsets,
            stride,
        };
        if q.dims() == 2 {
            terms.fill_planar(partitions, q);
        } else {
            terms.fill_by_descent(partitions, q)?;
        }
        Ok(terms)
    }

    /// Lower and upper bound of every object of partition `i` with partition
    /// j cut at level index `levels[j]`.
    pub(super) fn bounds(
        &self,
        i: usize,
        levels: &[usize],
        lbs: &mut Vec<f64>,
        ubs: &mut Vec<f64>,
    ) {
        lbs.clear();
        ubs.clear();
        for (t, &own) in self.local[i].iter().enumerate() {
            let (mut lb, mut ub) = (own, own);
            for (j, &h) in levels.iter().enumerate() {
                if j == i {
                    continue;
                }
                let at = t * self.stride + self.offsets[j] + h;
                lb += self.full[i][at];
                ub += self.full[i][at] + self.partial[i][at];
            }
            lbs.push(lb);
            ubs.push(ub);
        }
    }

    fn slot(&self, t: usize, j: usize) -> std::ops::Range<usize> {
        let start = t * self.stride + self.offsets[j];
        start..start + self.widths[j]
    }

    fn fill_by_descent(
        &mut self,
        partitions: &[Arc<IndexedPartition>],
        q: &QueryPoint,
    ) -> Result<()> {
        let qa = q.attrs();
        let mut stack = Vec::new();
        for (i, src) in partitions.iter().enumerate() {
            let home = RemoteView::new(src.clone(), Vec::new())?;
            for (t, obj) in src.data.objects.iter().enumerate() {
                self.local[i][t] = home.object_bounds_at(t, q).lb;
                for inst in &obj.instances {
                    let a: Vec<f64> = inst
                        .attrs()
                        .iter()
                        .zip(qa)
                        .map(|(x, y)| (x - y).abs())
                        .collect();
                    for (j, dst) in partitions.iter().enumerate() {
                        if j == i {
                            continue;
                        }
                        let span = self.slot(t, j);
                        add_level_masses(
                            &dst.tree,
                            &a,
                            qa,
                            inst.prob,
                            &mut self.full[i][span.clone()],
                            &mut self.partial[i][span],
                            &mut stack,
                        );
                    }
                }
            }
        }
        Ok(())
    }

    fn fill_planar(&mut self, partitions: &[Arc<IndexedPartition>], q: &QueryPoint) {
        let qa = q.attrs();
        let dyn_point = |p: &[f64]| [(p[0] - qa[0]).abs() + 0.0, (p[1] - qa[1]).abs() + 0.0];
        // (partition, object, probability, dynamic coordinates) of every instance.
        let mut owners = Vec::new();
        let mut points = Vec::new();
        for (i, src) in partitions.iter().enumerate() {
            for (t, obj) in src.data.objects.iter().enumerate() {
                for inst in &obj.instances {
                    owners.push((i, t, inst.prob));
                    points.push(dyn_point(inst.attrs()));
                }
            }
        }

        let mut start = 0;
        for (i, src) in partitions.iter().enumerate() {
            let end = start
                + src
                    .data
                    .objects
                    .iter()
                    .map(|o| o.instances.len())
                    .sum::<usize>();
            let own: Vec<([f64; 2], f64)> =
                (start..end).map(|u| (points[u], owners[u].2)).collect();
            let masses = dominated_sums(&own, &points[start..end]);
            for (u, m) in (start..end).zip(masses) {
                let (_, t, p) = owners[u];
                let same_object: f64 = src.data.objects[t]
                    .instances
                    .iter()
                    .map(|s| (dyn_point(s.attrs()), s.prob))
                    .filter(|(v, _)| dominates_or_equal(v, &points[u]) && *v != points[u])
                    .map(|(_, w)| w)
                    .sum();
                self.local[i][t] += p * (m - same_object);
            }
            start = end;
        }

        let qorder = by_x_descending(&points);
        for (j, dst) in partitions.iter().enumerate() {
            for level in dst.tree.levels() {
                let h = level_index(level);
                let mut near = Vec::new();
                let mut far = Vec::new();
                for e in dst.tree.entries().iter().filter(|e| e.level == level) {
                    let (lo0, hi0) = dyn_interval_raw(e.rect.lo[0], e.rect.hi[0], qa[0]);
                    let (lo1, hi1) = dyn_interval_raw(e.rect.lo[1], e.rect.hi[1], qa[1]);
                    near.push(([lo0 + 0.0, lo1 + 0.0], e.sum));
                    far.push(([hi0 + 0.0, hi1 + 0.0], e.sum));
                }
                let full = dominated_sums_in(&near, &points, &qorder);
                let reach = dominated_sums_in(&far, &points, &qorder);
                for (u, &(i, t, p)) in owners.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    let at = t * self.stride + self.offsets[j] + h;
                    self.full[i][at] += p * full[u];
                    self.partial[i][at] += p * (reach[u] - full[u]);
                }
            }
        }
    }
}

fn dominates_or_equal(v: &[f64; 2], a: &[f64; 2]) -> bool {
    v[0] >= a[0] && v[1] >= a[1]
}

/// For each query `a`, the total weight of the points `v` with `v >= a` in
/// both coordinates and `v != a`.
fn dominated_sums(points: &[([f64; 2], f64)], queries: &[[f64; 2]]) -> Vec<f64> {
    dominated_sums_in(points, queries, &by_x_descending(queries))
}

fn by_x_descending(queries: &[[f64; 2]]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.sort_by(|&a, &b| queries[b][0].total_cmp(&queries[a][0]));
    order
}

/// `qorder` lists the queries by x, largest first.
fn dominated_sums_in(
    points: &[([f64; 2], f64)],
    queries: &[[f64; 2]],
    qorder: &[usize],
) -> Vec<f64> {
    let mut ys: Vec<f64> = points.iter().map(|(v, _)| v[1]).collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[b].0[0].total_cmp(&points[a].0[0]));

    let lex = |a: &[f64; 2], b: &[f64; 2]| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]));
    let mut equal: Vec<([f64; 2], f64)> = points.to_vec();
    equal.sort_by(|a, b| lex(&a.0, &b.0));
    equal.dedup_by(|next, kept| {
        let same = lex(&next.0, &kept.0).is_eq();
        if same {
            kept.1 += next.1;
        }
        same
    });

    // Fenwick tree over y ranks, indexed from the largest y so prefix sums
    // are sums over y >= bound.
    let n = ys.len();
    let mut fen = vec![0.0; n + 1];
    let mut out = vec![0.0; queries.len()];
    let mut next = 0;
    for &qi in qorder {
        let a = queries[qi];
        while next < order.len() && points[order[next]].0[0] >= a[0] {
            let (v, w) = points[order[next]];
            let rank = ys.partition_point(|y| *y < v[1]);
            let mut x = n - rank;
            while x <= n {
                fen[x] += w;
                x += x & x.wrapping_neg();
            }
            next += 1;
        }
        let first = ys.partition_point(|y| *y < a[1]);
        let mut x = n - first;
        let mut total = 0.0;
        while x > 0 {
            total += fen[x];
            x -= x & x.wrapping_neg();
        }
        let same = equal
            .binary_search_by(|(v, _)| lex(v, &a))
            .map_or(0.0, |at| equal[at].1);
        out[qi] = total - same;
    }
    out
}

/// Adds the Full and Partial mass of every level cut of `tree`, relative to
/// dynamic coordinates `a`, into `full[h]` and `partial[h]` where h is the
/// level index. One descent serves all cuts because the cut at a level is
/// exactly the set of entries at that level.
fn add_level_masses<'a>(
    tree: &'a ARTree,
    a: &[f64],
    q: &[f64],
    scale: f64,
    full: &mut [f64],
    partial: &mut [f64],
    stack: &mut Vec<&'a TreeEntry>,
) {
    stack.clear();
    stack.push(tree.root());
    while let Some(e) = stack.pop() {
        let h = level_index(e.level);
        match classify_dyn(a, &e.rect.lo, &e.rect.hi, q) {
            DominanceClass::Full => full[..=h].iter_mut().for_each(|f| *f += scale * e.sum),
            DominanceClass::None => {}
            DominanceClass::Partial => {
                partial[h] += scale * e.sum;
                if let EntryKind::Node { .. } = e.kind {
                    stack.extend(tree.children(e));
                }
            }
        }
    }
}
