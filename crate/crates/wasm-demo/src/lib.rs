//! Browser front end for the distributed query engine. Everything runs on
//! the page's thread; the page draws whatever JSON these calls return.

use ptd_core::bounds::object_bounds;
use ptd_core::cluster::{run_ptd, Cluster, ExecMode};
use ptd_core::costmodel::{select_levels, QueryWorkload};
use ptd_core::data::{generate, random_partition, Distribution, GenConfig, Partitioning};
use ptd_core::geometry::{classify_rect, Attrs};
use ptd_core::index::SummaryLevel;
use ptd_core::oracle::{object_score_exact, ptd_exact};
use ptd_core::{Dataset, DominanceClass, ObjectId, PtdError, QueryPoint};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const FANOUT: usize = 8;

fn js(e: PtdError) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Serialize)]
struct ObjectView {
    id: u64,
    partition: u32,
    instances: Vec<[f64; 3]>,
}

#[derive(Serialize)]
struct QueryView {
    answers: Vec<(u64, f64)>,
    oracle_agrees: bool,
    candidates: Vec<u64>,
    pruned_by_mapper: Vec<u64>,
    pruned_by_reducer: Vec<u64>,
    suppressed: Vec<u64>,
    taus: Vec<f64>,
    comm_bytes: u64,
    comm_messages: u64,
    pruning_power: Vec<f64>,
}

#[derive(Serialize)]
struct EntryView {
    partition: u32,
    lo: Vec<f64>,
    hi: Vec<f64>,
    sum: f64,
    class: &'static str,
}

#[derive(Serialize)]
struct InspectView {
    object: u64,
    instance: [f64; 3],
    lb: f64,
    ub: f64,
    exact: f64,
    entries: Vec<EntryView>,
}

#[wasm_bindgen]
pub struct Demo {
    db: Dataset,
    partitioning: Partitioning,
    cluster: Cluster,
}

#[wasm_bindgen]
impl Demo {
    /// Generates `objects` uncertain objects over [0, 1000]^2 and spreads
    /// them over `servers` workers, with summary levels picked by the cost
    /// model.
    #[wasm_bindgen(constructor)]
    pub fn new(
        distribution: &str,
        objects: usize,
        servers: u32,
        l_max: f64,
        seed: u64,
    ) -> Result<Demo, JsError> {
        let distribution: Distribution = distribution.parse().map_err(js)?;
        let cfg = GenConfig {
            distribution,
            count: objects,
            l_max,
            inst_min: 2,
            inst_max: 5,
            seed,
            ..Default::default()
        };
        let db = generate(&cfg).map_err(js)?;
        let partitioning = random_partition(&db, servers, seed).map_err(js)?;
        let parts = ptd_core::cluster::index_partitions(&db, &partitioning, FANOUT).map_err(js)?;
        let bbox = db
            .bounding_box()
            .ok_or_else(|| JsError::new("no objects"))?;
        let workload = QueryWorkload::uniform_grid(&bbox, 16).map_err(js)?;
        let levels = select_levels(&parts, 5, &workload).map_err(js)?;
        let cluster = Cluster::new(parts, &levels.0).map_err(js)?;
        Ok(Demo {
            db,
            partitioning,
            cluster,
        })
    }

    /// Summary level shipped by each partition, e.g. `["objects","0"]`.
    pub fn levels(&self) -> String {
        let l: Vec<String> = self
            .cluster
            .levels
            .iter()
            .map(SummaryLevel::to_string)
            .collect();
        serde_json::to_string(&l).expect("strings serialize")
    }

    pub fn objects(&self) -> String {
        let v: Vec<ObjectView> = self
            .db
            .objects
            .iter()
            .map(|o| ObjectView {
                id: o.id.0,
                partition: self.partitioning.partition_of(o.id).unwrap_or(0),
                instances: o
                    .instances
                    .iter()
                    .map(|t| [t.attrs()[0], t.attrs()[1], t.prob])
                    .collect(),
            })
            .collect();
        serde_json::to_string(&v).expect("plain data serializes")
    }

    /// Runs the two-round query at (x, y) and reports where each object
    /// left the running.
    pub fn query(&self, x: f64, y: f64, k: usize) -> Result<String, JsError> {
        let q = QueryPoint::new(vec![x, y]).map_err(js)?;
        let r = run_ptd(&self.cluster, &q, k, ExecMode::Single).map_err(js)?;
        let exact = ptd_exact(&self.db, &q, k).map_err(js)?;
        let oracle_agrees = r.answers.len() == exact.len()
            && r.answers
                .iter()
                .zip(&exact)
                .all(|(a, b)| (a.score - b.score).abs() <= 1e-9);
        let ids = |s: &std::collections::BTreeSet<ObjectId>| s.iter().map(|o| o.0).collect();
        let d = &r.diagnostics;
        let view = QueryView {
            answers: r.answers.iter().map(|s| (s.object_id.0, s.score)).collect(),
            oracle_agrees,
            candidates: d
                .candidates
                .iter()
                .flatten()
                .map(|c| c.object_id.0)
                .collect(),
            pruned_by_mapper: ids(&d.pruned_by_mapper),
            pruned_by_reducer: ids(&d.pruned_by_reducer),
            suppressed: ids(&d.suppressed_by_refinement),
            taus: d
                .taus
                .iter()
                .map(|t| if t.is_finite() { *t } else { -1.0 })
                .collect(),
            comm_bytes: r.metrics.comm_bytes,
            comm_messages: r.metrics.comm_messages,
            pruning_power: r.metrics.pruning_power,
        };
        Ok(serde_json::to_string(&view).expect("plain data serializes"))
    }

    /// Takes the instance nearest to (x, y) and classifies every remote
    /// summary entry its home worker holds as fully, partially or not
    /// dominated by it with respect to q = (qx, qy).
    pub fn inspect(&self, x: f64, y: f64, qx: f64, qy: f64) -> Result<String, JsError> {
        let q = QueryPoint::new(vec![qx, qy]).map_err(js)?;
        let dist = |a: &[f64]| (a[0] - x).powi(2) + (a[1] - y).powi(2);
        let tj = self
            .db
            .instances()
            .min_by(|a, b| dist(a.attrs()).total_cmp(&dist(b.attrs())))
            .ok_or_else(|| JsError::new("no objects"))?;
        let home = self
            .cluster
            .home_of(tj.object_id)
            .ok_or_else(|| JsError::new("object has no home"))?;
        let view = &self.cluster.workers[home as usize].view;
        let object = self
            .db
            .get(tj.object_id)
            .expect("instance belongs to an object");
        let bounds = object_bounds(object, &q, view).map_err(js)?;
        let exact = object_score_exact(object, &self.db, &q).map_err(js)?;
        let mut entries = Vec::new();
        for l in 0..self.cluster.len() as u32 {
            let Some(remote) = view.remote(l) else {
                continue;
            };
            for e in &remote.summary.entries {
                let class = match classify_rect(tj, &q, &e.rect).map_err(js)? {
                    DominanceClass::Full => "full",
                    DominanceClass::Partial => "partial",
                    DominanceClass::None => "none",
                };
                entries.push(EntryView {
                    partition: l,
                    lo: e.rect.lo.clone(),
                    hi: e.rect.hi.clone(),
                    sum: e.sum,
                    class,
                });
            }
        }
        let out = InspectView {
            object: tj.object_id.0,
            instance: [tj.attrs()[0], tj.attrs()[1], tj.prob],
            lb: bounds.lb,
            ub: bounds.ub,
            exact,
            entries,
        };
        Ok(serde_json::to_string(&out).expect("plain data serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_and_inspect_round_trip() {
        let demo = Demo::new("gaussian", 150, 3, 40.0, 7).unwrap();
        let objs: serde_json::Value = serde_json::from_str(&demo.objects()).unwrap();
        assert_eq!(objs.as_array().unwrap().len(), 150);
        let q: serde_json::Value =
            serde_json::from_str(&demo.query(500.0, 500.0, 5).unwrap()).unwrap();
        assert_eq!(q["answers"].as_array().unwrap().len(), 5);
        assert_eq!(q["oracle_agrees"], true);
        let i: serde_json::Value =
            serde_json::from_str(&demo.inspect(500.0, 500.0, 480.0, 520.0).unwrap()).unwrap();
        let (lb, ub, exact) = (
            i["lb"].as_f64().unwrap(),
            i["ub"].as_f64().unwrap(),
            i["exact"].as_f64().unwrap(),
        );
        assert!(lb <= exact + 1e-9 && exact <= ub + 1e-9);
        assert!(!i["entries"].as_array().unwrap().is_empty());
        assert_eq!(
            serde_json::from_str::<Vec<String>>(&demo.levels())
                .unwrap()
                .len(),
            3
        );
    }
}
