//! Offline estimate of query-time communication for a choice of summary
//! levels, and the level selection built on it.
//!
//! Communication is counted in emitted (instance, entry) pairs. For target
//! partition l and a sample query q, C_l sums over the entries of l's
//! summary that no other entry of the same summary dynamically dominates,
//! the instances of the likeliest candidates elsewhere that partially
//! dominate the entry. Candidate counts come from a normal approximation of
//! the distribution of object upper bounds.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bounds::RemoteView;
use crate::error::{PtdError, Result};
use crate::geometry::{
    classify_raw, dyn_interval_raw, AttributeVector, Attrs, Dataset, DominanceClass, QueryPoint,
    Rect,
};
use crate::index::{IndexSummary, IndexedPartition, SummaryEntry, SummaryLevel};

mod terms;

use terms::{level_index, BoundTerms};

pub const DEFAULT_WORKLOAD_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadSource {
    HistoricalLog,
    UniformGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryWorkload {
    pub sample_points: Vec<QueryPoint>,
    pub source: WorkloadSource,
}

impl QueryWorkload {
    pub fn from_log(points: Vec<QueryPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(PtdError::invalid("query workload is empty"));
        }
        Ok(Self {
            sample_points: points,
            source: WorkloadSource::HistoricalLog,
        })
    }

    /// `n` cell centres of a regular grid over `space`, row-major.
    pub fn uniform_grid(space: &Rect, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(PtdError::invalid("query workload is empty"));
        }
        let d = space.dims();
        let mut g = 1usize;
        while g.pow(d as u32) < n {
            g += 1;
        }
        let points = (0..n)
            .map(|mut idx| {
                let mut p = vec![0.0; d];
                for k in (0..d).rev() {
                    let cell = idx % g;
                    idx /= g;
                    p[k] =
                        space.lo[k] + (space.hi[k] - space.lo[k]) * (cell as f64 + 0.5) / g as f64;
                }
                QueryPoint::new(p).expect("finite grid")
            })
            .collect();
        Ok(Self {
            sample_points: points,
            source: WorkloadSource::UniformGrid,
        })
    }

    pub fn default_for(partitions: &[Arc<IndexedPartition>]) -> Result<Self> {
        let bbox = Rect::union_all(partitions.iter().map(|p| &p.tree.root().rect))
            .ok_or_else(|| PtdError::invalid("no partitions"))?;
        Self::uniform_grid(&bbox, DEFAULT_WORKLOAD_SIZE)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelChoice(pub Vec<SummaryLevel>);

impl LevelChoice {
    pub fn uniform(level: SummaryLevel, n: usize) -> Self {
        Self(vec![level; n])
    }

    pub fn validate(&self, partitions: &[Arc<IndexedPartition>]) -> Result<()> {
        if self.0.len() != partitions.len() {
            return Err(PtdError::invalid(format!(
                "{} levels for {} partitions",
                self.0.len(),
                partitions.len()
            )));
        }
        for (p, l) in partitions.iter().zip(&self.0) {
            if !p.tree.has_level(*l) {
                return Err(PtdError::invalid(format!(
                    "level {l} out of range for partition {}",
                    p.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub cc: f64,
    pub per_partition: Vec<f64>,
    /// Estimated candidate count of each partition under the choice.
    pub scand: Vec<f64>,
}

/// True when an instance at `p` partially dominates `e` with respect to `q`.
pub fn pdr_contains(e: &Rect, q: &QueryPoint, p: &AttributeVector) -> Result<bool> {
    if e.dims() != q.dims() || p.dims() != q.dims() {
        return Err(PtdError::DimensionMismatch {
            expected: q.dims(),
            got: p.dims().min(e.dims()),
        });
    }
    Ok(classify_raw(p.as_slice(), q.attrs(), &e.lo, &e.hi) == DominanceClass::Partial)
}

/// Per-object counts of instances inside the PDR of `e`.
fn pdr_counts(e: &Rect, q: &QueryPoint, partition: &Dataset) -> Vec<usize> {
    let qa = q.attrs();
    partition
        .objects
        .iter()
        .map(|o| {
            o.instances
                .iter()
                .filter(|i| classify_raw(i.attrs(), qa, &e.lo, &e.hi) == DominanceClass::Partial)
                .count()
        })
        .collect()
}

fn top_sum(mut counts: Vec<usize>, m: usize) -> usize {
    if m == 0 {
        return 0;
    }
    if m < counts.len() {
        counts.select_nth_unstable_by(m - 1, |a, b| b.cmp(a));
        counts.truncate(m);
    }
    counts.iter().sum()
}

/// Instances inside the PDR of `e` among the `scand_size` objects of
/// `partition` with the most such instances.
pub fn n_ins(e: &Rect, scand_size: usize, q: &QueryPoint, partition: &Dataset) -> usize {
    if scand_size == 0 {
        return 0;
    }
    top_sum(pdr_counts(e, q, partition), scand_size)
}

fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// |D| (1 - Phi((E(tau) - mu) / sigma)) for one sample query.
pub fn scand_at(view: &RemoteView, k: usize, q: &QueryPoint) -> f64 {
    let n = view.local.len();
    let bounds: Vec<_> = (0..n).map(|i| view.object_bounds_at(i, q)).collect();
    let mut lbs: Vec<f64> = bounds.iter().map(|b| b.lb).collect();
    let ubs: Vec<f64> = bounds.iter().map(|b| b.ub).collect();
    scand_from_bounds(&mut lbs, &ubs, k)
}

/// `lbs` is reordered.
fn scand_from_bounds(lbs: &mut [f64], ubs: &[f64], k: usize) -> f64 {
    let n = ubs.len();
    let expected_tau = if n < k {
        f64::NEG_INFINITY
    } else {
        *lbs.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a)).1
    };
    let mean = ubs.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (ubs.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    scand_formula(n, expected_tau, mean, sd)
}

pub(crate) fn scand_formula(n: usize, expected_tau: f64, mean: f64, sd: f64) -> f64 {
    let n = n as f64;
    if sd <= 0.0 || !sd.is_finite() {
        return if expected_tau <= mean { n } else { 0.0 };
    }
    (n * (1.0 - std_normal_cdf((expected_tau - mean) / sd))).clamp(0.0, n)
}

/// Candidate-count estimate for the partition `view` belongs to, averaged
/// over the workload.
pub fn estimate_scand(view: &RemoteView, k: usize, workload: &QueryWorkload) -> Result<f64> {
    if k == 0 {
        return Err(PtdError::invalid("k must be at least 1"));
    }
    let total: f64 = workload
        .sample_points
        .iter()
        .map(|q| scand_at(view, k, q))
        .sum();
    Ok(total / workload.sample_points.len() as f64)
}

/// Entries of `summary` that no other entry dynamically dominates, where
/// A dominates B when A's far corner is no farther from q than B's near
/// corner in every dimension, and strictly closer in one.
pub fn skyline_entries<'a>(summary: &'a IndexSummary, q: &QueryPoint) -> Vec<&'a SummaryEntry> {
    let qa = q.attrs();
    let d = qa.len();
    let mut keyed: Vec<(f64, Vec<f64>, Vec<f64>, &SummaryEntry)> = summary
        .entries
        .iter()
        .map(|e| {
            let (lo, hi): (Vec<f64>, Vec<f64>) = (0..d)
                .map(|k| dyn_interval_raw(e.rect.lo[k], e.rect.hi[k], qa[k]))
                .unzip();
            (lo.iter().sum(), lo, hi, e)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.3.node_id.cmp(&b.3.node_id)));
    let dominates = |a_hi: &[f64], b_lo: &[f64]| {
        a_hi.iter().zip(b_lo).all(|(x, y)| x <= y) && a_hi.iter().zip(b_lo).any(|(x, y)| x < y)
    };
    let mut sky: Vec<usize> = Vec::new();
    for i in 0..keyed.len() {
        if !sky.iter().any(|&s| dominates(&keyed[s].2, &keyed[i].1)) {
            sky.push(i);
        }
    }
    let mut out: Vec<&SummaryEntry> = sky.into_iter().map(|i| keyed[i].3).collect();
    out.sort_by_key(|e| e.node_id);
    out
}

/// C_l for target partition `l` cut at `level`, with source candidate
/// counts `scand`, averaged over the workload.
pub fn partition_cost(
    partitions: &[Arc<IndexedPartition>],
    l: usize,
    level: SummaryLevel,
    scand: &[f64],
    workload: &QueryWorkload,
) -> Result<f64> {
    let cut = partitions[l].tree.level_cut(level)?;
    let mut total = 0.0;
    for q in &workload.sample_points {
        for e in skyline_entries(&cut, q) {
            for (i, src) in partitions.iter().enumerate() {
                if i != l {
                    total += n_ins(&e.rect, scand[i].round() as usize, q, &src.data) as f64;
                }
            }
        }
    }
    Ok(total / workload.sample_points.len() as f64)
}

/// Candidate estimate of every partition under `choice`; the same value
/// `estimate_scand` gives on each partition's assembled view.
fn scand_under(
    partitions: &[Arc<IndexedPartition>],
    choice: &LevelChoice,
    k: usize,
    workload: &QueryWorkload,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(PtdError::invalid("k must be at least 1"));
    }
    let levels: Vec<usize> = choice.0.iter().map(|l| level_index(*l)).collect();
    let samples = workload.sample_points.len() as f64;
    let mut scand = vec![0.0; partitions.len()];
    let (mut lbs, mut ubs) = (Vec::new(), Vec::new());
    for q in &workload.sample_points {
        let terms = BoundTerms::compute(partitions, q)?;
        for (i, s) in scand.iter_mut().enumerate() {
            terms.bounds(i, &levels, &mut lbs, &mut ubs);
            *s += scand_from_bounds(&mut lbs, &ubs, k) / samples;
        }
    }
    Ok(scand)
}

/// `table[i][l][h]`: candidate estimate of partition i, averaged over the
/// workload, when partition l is cut at level index h and every other
/// partition at the leaf-node level.
fn scand_table(
    partitions: &[Arc<IndexedPartition>],
    k: usize,
    workload: &QueryWorkload,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let n = partitions.len();
    let reference = vec![level_index(SummaryLevel::Node(0)); n];
    let samples = workload.sample_points.len() as f64;
    let mut table: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| {
            partitions
                .iter()
                .map(|p| vec![0.0; p.tree.height + 1])
                .collect()
        })
        .collect();
    let (mut lbs, mut ubs) = (Vec::new(), Vec::new());
    for q in &workload.sample_points {
        let terms = BoundTerms::compute(partitions, q)?;
        for (i, row) in table.iter_mut().enumerate() {
            for (l, cell) in row.iter_mut().enumerate() {
                if l == i {
                    continue;
                }
                for (h, v) in cell.iter_mut().enumerate() {
                    let mut levels = reference.clone();
                    levels[l] = h;
                    terms.bounds(i, &levels, &mut lbs, &mut ubs);
                    *v += scand_from_bounds(&mut lbs, &ubs, k) / samples;
                }
            }
        }
    }
    Ok(table)
}

pub fn estimate_cc(
    partitions: &[Arc<IndexedPartition>],
    choice: &LevelChoice,
    k: usize,
    workload: &QueryWorkload,
) -> Result<CostEstimate> {
    choice.validate(partitions)?;
    let scand = scand_under(partitions, choice, k, workload)?;
    let per_partition = (0..partitions.len())
        .map(|l| partition_cost(partitions, l, choice.0[l], &scand, workload))
        .collect::<Result<Vec<f64>>>()?;
    Ok(CostEstimate {
        cc: per_partition.iter().sum(),
        per_partition,
        scand,
    })
}

/// Picks, for each partition independently, the level with the smallest
/// estimated C_l. The candidate counts of the source partitions are
/// estimated with partition l at the level being priced and every other
/// partition at the leaf-node level. Ties go to the coarser level.
pub fn select_levels(
    partitions: &[Arc<IndexedPartition>],
    k: usize,
    workload: &QueryWorkload,
) -> Result<LevelChoice> {
    if partitions.is_empty() {
        return Err(PtdError::invalid("no partitions"));
    }
    if let [only] = partitions {
        // Nothing is shipped, so every level costs the same.
        return Ok(LevelChoice(vec![only.tree.root_level()]));
    }
    if k == 0 {
        return Err(PtdError::invalid("k must be at least 1"));
    }
    let table = scand_table(partitions, k, workload)?;
    let mut chosen = Vec::with_capacity(partitions.len());
    for (l, p) in partitions.iter().enumerate() {
        let mut best: Option<(f64, SummaryLevel)> = None;
        // Coarsest first, so only a strictly smaller cost moves finer.
        for level in p.tree.levels().into_iter().rev() {
            let scand: Vec<f64> = (0..partitions.len())
                .map(|i| {
                    if i == l {
                        0.0
                    } else {
                        table[i][l][level_index(level)]
                    }
                })
                .collect();
            let c = partition_cost(partitions, l, level, &scand, workload)?;
            if best.is_none_or(|(b, _)| c < b) {
                best = Some((c, level));
            }
        }
        chosen.push(best.expect("every tree has a level").1);
    }
    Ok(LevelChoice(chosen))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &t in &idx[i..=j] {
                r[t] = avg;
            }
            i = j + 1;
        }
        r
    }
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, random_partition, GenConfig};
    use crate::geometry::{classify_rect, Instance, ObjectId, UncertainObject};
    use proptest::prelude::*;

    fn av(x: f64, y: f64) -> AttributeVector {
        AttributeVector::new(vec![x, y]).unwrap()
    }

    fn obj(id: u64, pts: &[(f64, f64)]) -> UncertainObject {
        let p = 1.0 / pts.len() as f64;
        let insts = pts
            .iter()
            .enumerate()
            .map(|(j, &(x, y))| Instance::new(ObjectId(id), j as u32, av(x, y), p).unwrap())
            .collect();
        UncertainObject::new(ObjectId(id), insts).unwrap()
    }

    #[test]
    fn pdr_simple_cases() {
        let e = Rect::new(vec![4.0, 4.0], vec![6.0, 6.0]).unwrap();
        let q = QueryPoint::new(vec![0.0, 0.0]).unwrap();
        assert!(!pdr_contains(&e, &q, &av(1.0, 1.0)).unwrap());
        assert!(!pdr_contains(&e, &q, &av(7.0, 1.0)).unwrap());
        assert!(pdr_contains(&e, &q, &av(5.0, 1.0)).unwrap());
        // Mirrored across q behaves the same.
        assert!(pdr_contains(&e, &q, &av(-5.0, 1.0)).unwrap());
        assert!(pdr_contains(&e, &q, &av(1.0, 1.0).clone()).is_ok());
        assert!(pdr_contains(&e, &QueryPoint::new(vec![0.0]).unwrap(), &av(1.0, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn pdr_matches_classification(
            x in -8i32..8, y in -8i32..8, lx in -6i32..6, ly in -6i32..6, w in 0i32..6, h in 0i32..6, qx in -4i32..4, qy in -4i32..4,
        ) {
            let e = Rect::new(vec![lx as f64, ly as f64], vec![(lx + w) as f64, (ly + h) as f64]).unwrap();
            let q = QueryPoint::new(vec![qx as f64 * 0.5, qy as f64 * 0.5]).unwrap();
            let p = av(x as f64 * 0.75, y as f64 * 0.75);
            let inst = Instance::new(ObjectId(0), 0, p.clone(), 1.0).unwrap();
            prop_assert_eq!(pdr_contains(&e, &q, &p).unwrap(), classify_rect(&inst, &q, &e).unwrap() == DominanceClass::Partial);
        }
    }

    #[test]
    fn n_ins_counts() {
        let e = Rect::new(vec![4.0, 4.0], vec![6.0, 6.0]).unwrap();
        let q = QueryPoint::new(vec![0.0, 0.0]).unwrap();
        // Per-object PDR counts 3, 2, 2, 0.
        let db = Dataset::new(
            2,
            vec![
                obj(0, &[(5.0, 1.0), (1.0, 5.0), (5.0, 5.0)]),
                obj(1, &[(4.5, 0.0), (0.0, 4.5), (1.0, 1.0)]),
                obj(2, &[(5.5, 2.0), (2.0, 5.5)]),
                obj(3, &[(1.0, 1.0), (9.0, 9.0)]),
            ],
        )
        .unwrap();
        assert_eq!(pdr_counts(&e, &q, &db), vec![3, 2, 2, 0]);
        assert_eq!(n_ins(&e, 2, &q, &db), 5);
        assert_eq!(n_ins(&e, 0, &q, &db), 0);
        assert_eq!(n_ins(&e, 10, &q, &db), 7);
        let far = Rect::new(vec![100.0, 100.0], vec![101.0, 101.0]).unwrap();
        assert_eq!(n_ins(&far, 4, &q, &db), 0);
    }

    #[test]
    fn scand_formula_cases() {
        assert!((scand_formula(100, 2.0, 2.0, 1.0) - 50.0).abs() < 1e-12);
        assert_eq!(scand_formula(100, f64::INFINITY, 2.0, 1.0), 0.0);
        assert_eq!(scand_formula(100, f64::NEG_INFINITY, 2.0, 1.0), 100.0);
        assert_eq!(scand_formula(100, 1.0, 2.0, 0.0), 100.0);
        assert_eq!(scand_formula(100, 3.0, 2.0, 0.0), 0.0);
        // One standard deviation above the mean.
        assert!((scand_formula(1000, 3.0, 2.0, 1.0) - 158.655).abs() < 0.01);
    }

    fn setup(seed: u64, count: usize, n: u32, fanout: usize) -> Vec<Arc<IndexedPartition>> {
        let cfg = GenConfig {
            count,
            l_max: 30.0,
            inst_min: 1,
            inst_max: 4,
            seed,
            ..Default::default()
        };
        let db = generate(&cfg).unwrap();
        let p = random_partition(&db, n, seed).unwrap();
        crate::cluster::index_partitions(&db, &p, fanout).unwrap()
    }

    #[test]
    fn grid_workload() {
        let space = Rect::new(vec![0.0, 0.0], vec![8.0, 8.0]).unwrap();
        let w = QueryWorkload::uniform_grid(&space, 64).unwrap();
        assert_eq!(w.sample_points.len(), 64);
        assert_eq!(w.sample_points[0].attrs.as_slice(), &[0.5, 0.5]);
        assert_eq!(w.sample_points[63].attrs.as_slice(), &[7.5, 7.5]);
        assert_eq!(
            QueryWorkload::uniform_grid(&space, 5)
                .unwrap()
                .sample_points
                .len(),
            5
        );
        assert!(QueryWorkload::uniform_grid(&space, 0).is_err());
        assert!(QueryWorkload::from_log(vec![]).is_err());
    }

    #[test]
    fn scand_in_range_and_deterministic() {
        let parts = setup(1, 300, 3, 4);
        let w = QueryWorkload::default_for(&parts).unwrap();
        for lvl in [
            SummaryLevel::Objects,
            SummaryLevel::Node(0),
            SummaryLevel::Node(1),
        ] {
            let choice = LevelChoice::uniform(lvl, 3);
            let est = estimate_cc(&parts, &choice, 5, &w).unwrap();
            assert!((est.cc - est.per_partition.iter().sum::<f64>()).abs() < 1e-9);
            for (s, p) in est.scand.iter().zip(&parts) {
                assert!((0.0..=p.len() as f64).contains(s));
            }
            assert_eq!(est, estimate_cc(&parts, &choice, 5, &w).unwrap());
        }
    }

    #[test]
    fn scand_table_matches_assembled_views() {
        let parts = setup(6, 240, 3, 4);
        let w = QueryWorkload::uniform_grid(&parts[0].tree.root().rect, 4).unwrap();
        let table = scand_table(&parts, 5, &w).unwrap();
        for i in 0..3 {
            for l in (0..3).filter(|&l| l != i) {
                for level in parts[l].tree.levels() {
                    let mut choice = LevelChoice::uniform(SummaryLevel::Node(0), 3);
                    choice.0[l] = level;
                    let view = RemoteView::assemble(&parts, i, &choice.0).unwrap();
                    let direct = estimate_scand(&view, 5, &w).unwrap();
                    let got = table[i][l][level_index(level)];
                    assert!(
                        (got - direct).abs() < 1e-6,
                        "{i} {l} {level}: {got} vs {direct}"
                    );
                }
            }
        }
    }

    #[test]
    fn coarse_summary_raises_remote_candidates() {
        // Pricing a partition at its root must account for every other
        // partition losing the means to prune.
        let parts = setup(7, 600, 2, 8);
        let w = QueryWorkload::default_for(&parts).unwrap();
        let choice = select_levels(&parts, 5, &w).unwrap();
        for (l, level) in choice.0.iter().enumerate() {
            assert_ne!(*level, parts[l].tree.root_level(), "{choice:?}");
        }
    }

    #[test]
    fn root_level_skyline_is_single_entry() {
        let parts = setup(2, 200, 2, 4);
        let q = QueryPoint::new(vec![10.0, 990.0]).unwrap();
        for p in &parts {
            let root_cut = p.tree.level_cut(p.tree.root_level()).unwrap();
            assert_eq!(skyline_entries(&root_cut, &q).len(), 1);
        }
    }

    #[test]
    fn skyline_matches_quadratic_definition() {
        let parts = setup(3, 400, 1, 4);
        for q in crate::data::generate_queries(10, &crate::data::default_space(2), 3).unwrap() {
            for lvl in parts[0].tree.levels() {
                let cut = parts[0].tree.level_cut(lvl).unwrap();
                let got: Vec<u64> = skyline_entries(&cut, &q)
                    .iter()
                    .map(|e| e.node_id)
                    .collect();
                let qa = q.attrs();
                let iv = |e: &SummaryEntry| -> Vec<(f64, f64)> {
                    (0..2)
                        .map(|k| dyn_interval_raw(e.rect.lo[k], e.rect.hi[k], qa[k]))
                        .collect()
                };
                let mut want: Vec<u64> = cut
                    .entries
                    .iter()
                    .filter(|b| {
                        !cut.entries.iter().any(|a| {
                            let (ia, ib) = (iv(a), iv(b));
                            (0..2).all(|k| ia[k].1 <= ib[k].0) && (0..2).any(|k| ia[k].1 < ib[k].0)
                        })
                    })
                    .map(|e| e.node_id)
                    .collect();
                want.sort();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn sum_of_partition_costs() {
        // CC is the plain sum of its parts.
        let est = CostEstimate {
            cc: 8.0,
            per_partition: vec![3.0, 5.0],
            scand: vec![0.0, 0.0],
        };
        assert_eq!(est.per_partition.iter().sum::<f64>(), est.cc);
    }

    #[test]
    fn single_level_trees_have_one_choice_per_level() {
        // Fanout above the partition size leaves a root-only tree: the
        // objects level and the root.
        let parts = setup(4, 40, 2, 64);
        let w = QueryWorkload::default_for(&parts).unwrap();
        let choice = select_levels(&parts, 3, &w).unwrap();
        choice.validate(&parts).unwrap();
        assert!(choice
            .0
            .iter()
            .all(|l| matches!(l, SummaryLevel::Objects | SummaryLevel::Node(0))));
    }

    #[test]
    fn coarse_level_preferred_when_finer_only_adds_partial_entries() {
        // Every object of partition 1 straddles the dominance boundary of
        // every instance of partition 0, so each finer cut multiplies the
        // partially dominated entries while the bounds stay the same.
        let objs0: Vec<UncertainObject> = (0..6)
            .map(|i| obj(i, &[(-0.5 - 0.01 * i as f64, 15.0)]))
            .collect();
        let objs1: Vec<UncertainObject> = (0..8)
            .map(|i| {
                obj(
                    100 + i,
                    &[(0.05 * i as f64, 10.0), (1.0 + 0.25 * i as f64, 20.0)],
                )
            })
            .collect();
        let p0 = Arc::new(IndexedPartition::build(0, Dataset::new(2, objs0).unwrap(), 8).unwrap());
        let p1 = Arc::new(IndexedPartition::build(1, Dataset::new(2, objs1).unwrap(), 4).unwrap());
        let parts = vec![p0, p1];
        assert_eq!(parts[1].tree.height, 2);
        let q = QueryPoint::new(vec![0.0, 0.0]).unwrap();
        let w = QueryWorkload::from_log(vec![q.clone()]).unwrap();

        let coarse =
            RemoteView::assemble(&parts, 0, &[SummaryLevel::Node(0), SummaryLevel::Node(1)])
                .unwrap();
        let fine = RemoteView::assemble(&parts, 0, &[SummaryLevel::Node(0), SummaryLevel::Node(0)])
            .unwrap();
        for i in 0..6 {
            assert_eq!(coarse.object_bounds_at(i, &q), fine.object_bounds_at(i, &q));
        }

        let scand = [6.0, 8.0];
        let cost = |lvl| partition_cost(&parts, 1, lvl, &scand, &w).unwrap();
        let (objects, leaf, root) = (
            cost(SummaryLevel::Objects),
            cost(SummaryLevel::Node(0)),
            cost(SummaryLevel::Node(1)),
        );
        assert_eq!((objects, leaf, root), (48.0, 12.0, 6.0));
        assert_eq!(
            select_levels(&parts, 1, &w).unwrap().0[1],
            SummaryLevel::Node(1)
        );
    }

    #[test]
    fn spearman_values() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!(
            (spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 2.0, 4.0, 5.0]) - 0.9).abs() < 1e-12
        );
    }
}
