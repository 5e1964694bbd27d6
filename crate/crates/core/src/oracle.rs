//! Brute-force scoring. Quadratic in the number of instances and free of any
//! indexing, so it can serve as ground truth for the distributed engine.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{PtdError, Result};
use crate::geometry::{
    dominates_raw, Attrs, Dataset, Instance, ObjectId, QueryPoint, UncertainObject,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredObject {
    pub object_id: ObjectId,
    pub score: f64,
}

/// Score descending, then object id ascending.
pub fn rank_order(a: &ScoredObject, b: &ScoredObject) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.object_id.cmp(&b.object_id))
}

pub fn instance_score_exact(tj: &Instance, db: &Dataset, q: &QueryPoint) -> Result<f64> {
    if tj.attrs.dims() != q.dims() {
        return Err(PtdError::DimensionMismatch {
            expected: q.dims(),
            got: tj.attrs.dims(),
        });
    }
    if db.get(tj.object_id).is_none() {
        return Err(PtdError::invalid(format!(
            "object {} is not in the dataset",
            tj.object_id
        )));
    }
    Ok(instance_score_unchecked(tj, db, q))
}

fn instance_score_unchecked(tj: &Instance, db: &Dataset, q: &QueryPoint) -> f64 {
    let (u, qa) = (tj.attrs(), q.attrs());
    let mut mass = 0.0;
    for s in db.objects.iter().filter(|s| s.id != tj.object_id) {
        for si in &s.instances {
            if dominates_raw(u, si.attrs(), qa) {
                mass += si.prob;
            }
        }
    }
    tj.prob * mass
}

pub fn object_score_exact(t: &UncertainObject, db: &Dataset, q: &QueryPoint) -> Result<f64> {
    if db.get(t.id).is_none() {
        return Err(PtdError::invalid(format!(
            "object {} is not in the dataset",
            t.id
        )));
    }
    if t.dims() != q.dims() {
        return Err(PtdError::DimensionMismatch {
            expected: q.dims(),
            got: t.dims(),
        });
    }
    Ok(t.instances
        .iter()
        .map(|tj| instance_score_unchecked(tj, db, q))
        .sum())
}

/// Exact score of every object, in dataset order.
pub fn all_scores(db: &Dataset, q: &QueryPoint) -> Result<Vec<ScoredObject>> {
    db.objects
        .iter()
        .map(|t| {
            Ok(ScoredObject {
                object_id: t.id,
                score: object_score_exact(t, db, q)?,
            })
        })
        .collect()
}

pub fn ptd_exact(db: &Dataset, q: &QueryPoint, k: usize) -> Result<Vec<ScoredObject>> {
    if k == 0 {
        return Err(PtdError::invalid("k must be at least 1"));
    }
    let mut scores = all_scores(db, q)?;
    scores.sort_by(rank_order);
    scores.truncate(k);
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::*;
    use crate::geometry::{dynamic_dominates, AttributeVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laptop_instance(obj: ObjectId, idx: usize) -> Instance {
        laptop_dataset().get(obj).unwrap().instances[idx].clone()
    }

    #[test]
    fn laptop_scores_at_fixture_query() {
        let db = laptop_dataset();
        let q = laptop_query();
        let s = |o, i| instance_score_exact(&laptop_instance(o, i), &db, &q).unwrap();
        assert!((s(OBJECT_A, 0) - 0.36).abs() < 1e-12);
        assert!((s(OBJECT_A, 2) - 0.48).abs() < 1e-12);
        // a1 dominates c1 (and d2).
        assert!(dynamic_dominates(
            &laptop_instance(OBJECT_A, 0),
            &laptop_instance(OBJECT_C, 0),
            &q
        )
        .unwrap());
        assert!(dynamic_dominates(
            &laptop_instance(OBJECT_A, 0),
            &laptop_instance(OBJECT_D, 1),
            &q
        )
        .unwrap());
    }

    /// Exhaustive search over the plane for q reproducing the worked-example
    /// instance scores. Dominance only changes where q crosses a midpoint of
    /// two instance coordinates (all multiples of 0.5 here), so a 0.25 grid
    /// that extends past the data visits every distinct configuration.
    #[test]
    fn laptop_grid_search() {
        let db = laptop_dataset();
        let a = db.get(OBJECT_A).unwrap().clone();
        let mut a1_a3 = None;
        let mut all_three = None;
        for i in -8..=64 {
            for j in -8..=64 {
                let q = QueryPoint::new(vec![i as f64 * 0.25, j as f64 * 0.25]).unwrap();
                let s: Vec<f64> = a
                    .instances
                    .iter()
                    .map(|t| instance_score_exact(t, &db, &q).unwrap())
                    .collect();
                let ok1 = (s[0] - 0.36).abs() < 1e-12;
                let ok2 = (s[1] - 0.66).abs() < 1e-12;
                let ok3 = (s[2] - 0.48).abs() < 1e-12;
                let in_box = (0..=56).contains(&i) && (0..=56).contains(&j);
                if ok1 && ok3 && in_box && a1_a3.is_none() {
                    let c1 = &db.get(OBJECT_C).unwrap().instances[0];
                    if dynamic_dominates(&a.instances[0], c1, &q).unwrap() {
                        a1_a3 = Some(q.clone());
                    }
                }
                if ok1 && ok2 && ok3 && all_three.is_none() {
                    all_three = Some(q);
                }
            }
        }
        assert_eq!(a1_a3, Some(laptop_query()));
        assert_eq!(
            all_three, None,
            "S(a2) = 0.66 is unreachable for the printed coordinates"
        );
    }

    #[test]
    fn object_score_of_a_sums_instances() {
        let db = laptop_dataset();
        let q = laptop_query();
        let a = db.get(OBJECT_A).unwrap();
        let total = object_score_exact(a, &db, &q).unwrap();
        let parts: f64 = a
            .instances
            .iter()
            .map(|t| instance_score_exact(t, &db, &q).unwrap())
            .sum();
        assert!((total - parts).abs() < 1e-15);
        // 0.36 + 0.57 + 0.48 at the frozen query point.
        assert!((total - 1.41).abs() < 1e-12);
    }

    #[test]
    fn laptop_top1() {
        // Scores at the fixture q, computed by the brute-force scorer:
        // a = 1.41, b = 1.40, c = 0.78, d = 0.18.
        let db = laptop_dataset();
        let top = ptd_exact(&db, &laptop_query(), 1).unwrap();
        assert_eq!(top[0].object_id, OBJECT_A);
        assert!((top[0].score - 1.41).abs() < 1e-12);
        let all = ptd_exact(&db, &laptop_query(), 10).unwrap();
        let ids: Vec<_> = all.iter().map(|s| s.object_id).collect();
        assert_eq!(ids, vec![OBJECT_A, OBJECT_B, OBJECT_C, OBJECT_D]);
    }

    #[test]
    fn singleton_db_scores_zero() {
        let db = laptop_dataset();
        let only_a = Dataset::new(2, vec![db.get(OBJECT_A).unwrap().clone()]).unwrap();
        let a = &only_a.objects[0];
        assert_eq!(
            object_score_exact(a, &only_a, &laptop_query()).unwrap(),
            0.0
        );
        assert_eq!(
            instance_score_exact(&a.instances[0], &only_a, &laptop_query()).unwrap(),
            0.0
        );
    }

    #[test]
    fn errors() {
        let db = laptop_dataset();
        assert!(ptd_exact(&db, &laptop_query(), 0).is_err());
        let stray = Instance::new(
            ObjectId(99),
            0,
            AttributeVector::new(vec![1.0, 1.0]).unwrap(),
            1.0,
        )
        .unwrap();
        assert!(instance_score_exact(&stray, &db, &laptop_query()).is_err());
    }

    fn random_db(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
        let objects = (0..n)
            .map(|i| {
                let m = rng.random_range(1..=4);
                let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
                let tot: f64 = w.iter().sum();
                let insts = (0..m)
                    .map(|j| {
                        let p = vec![rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
                        Instance::new(
                            ObjectId(i as u64),
                            j as u32,
                            AttributeVector::new(p).unwrap(),
                            w[j] / tot,
                        )
                        .unwrap()
                    })
                    .collect();
                UncertainObject::new(ObjectId(i as u64), insts).unwrap()
            })
            .collect();
        Dataset::new(2, objects).unwrap()
    }

    /// Independent double loop over all instance pairs.
    fn pairwise_scores(db: &Dataset, q: &QueryPoint) -> Vec<f64> {
        let all: Vec<&Instance> = db.instances().collect();
        let mut out = vec![0.0; db.len()];
        for (oi, o) in db.objects.iter().enumerate() {
            for u in &o.instances {
                for v in &all {
                    if v.object_id == u.object_id {
                        continue;
                    }
                    let du: Vec<f64> = (0..2).map(|k| (u.attrs[k] - q.attrs[k]).abs()).collect();
                    let dv: Vec<f64> = (0..2).map(|k| (v.attrs[k] - q.attrs[k]).abs()).collect();
                    let le = (0..2).all(|k| du[k] <= dv[k]);
                    let lt = (0..2).any(|k| du[k] < dv[k]);
                    if le && lt {
                        out[oi] += u.prob * v.prob;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn random_db_matches_pairwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let db = random_db(&mut rng, 20);
            let q = QueryPoint::new(vec![
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
            ])
            .unwrap();
            let expected = pairwise_scores(&db, &q);
            for (o, e) in db.objects.iter().zip(expected) {
                assert!((object_score_exact(o, &db, &q).unwrap() - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ptd_is_prefix_of_full_sort_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let db = random_db(&mut rng, 30);
            let q = QueryPoint::new(vec![
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
            ])
            .unwrap();
            let mut full = all_scores(&db, &q).unwrap();
            full.sort_by(rank_order);
            for k in [1, 5, 30, 40] {
                let top = ptd_exact(&db, &q, k).unwrap();
                assert_eq!(top.as_slice(), &full[..k.min(full.len())]);
                assert!(top.windows(2).all(|w| w[0].score >= w[1].score));
            }

            // Global cap: S(t_j) <= t_j.p * total mass of other objects.
            for o in &db.objects {
                let others: f64 = db
                    .objects
                    .iter()
                    .filter(|s| s.id != o.id)
                    .map(|s| s.total_prob())
                    .sum();
                for tj in &o.instances {
                    assert!(instance_score_exact(tj, &db, &q).unwrap() <= tj.prob * others + 1e-12);
                }
            }

            // Scaling by a power of two is exact in floating point.
            let scale = 4.0;
            let scaled = Dataset::new(
                2,
                db.objects
                    .iter()
                    .map(|o| UncertainObject {
                        id: o.id,
                        instances: o
                            .instances
                            .iter()
                            .map(|i| Instance {
                                attrs: AttributeVector::new(
                                    i.attrs.as_slice().iter().map(|x| x * scale).collect(),
                                )
                                .unwrap(),
                                ..i.clone()
                            })
                            .collect(),
                    })
                    .collect(),
            )
            .unwrap();
            let sq =
                QueryPoint::new(q.attrs.as_slice().iter().map(|x| x * scale).collect()).unwrap();
            assert_eq!(
                ptd_exact(&db, &q, 5).unwrap(),
                ptd_exact(&scaled, &sq, 5).unwrap()
            );
        }
    }
}
