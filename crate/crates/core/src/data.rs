//! Synthetic data, rectangle-file ingestion, random partitioning and the
//! on-disk formats.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{PtdError, Result};
use crate::geometry::{
    AttributeVector, Dataset, Instance, ObjectId, QueryPoint, Rect, UncertainObject,
};

pub const MAX_DIMS: usize = 6;
pub const ZIPF_SKEW: f64 = 0.8;
pub const ZIPF_CELLS: u64 = 1000;
pub const DEFAULT_SPACE: (f64, f64) = (0.0, 1000.0);

/// A generator seeded from `seed` on the sub-stream named `name`, so that
/// one top-level seed can drive independent components.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a, stable across platforms and releases.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Uniform,
    Gaussian,
    Zipf,
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distribution::Uniform => "uniform",
            Distribution::Gaussian => "gaussian",
            Distribution::Zipf => "zipf",
        })
    }
}

impl FromStr for Distribution {
    type Err = PtdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Distribution::Uniform),
            "gaussian" => Ok(Distribution::Gaussian),
            "zipf" => Ok(Distribution::Zipf),
            other => Err(PtdError::invalid(format!(
                "unknown distribution '{other}' (uniform, gaussian, zipf)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub distribution: Distribution,
    pub count: usize,
    pub dims: usize,
    pub l_max: f64,
    pub inst_min: usize,
    pub inst_max: usize,
    pub space: Rect,
    pub seed: u64,
    /// Total probability of every object, in (0, 1].
    pub mass: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            distribution: Distribution::Uniform,
            count: 500_000,
            dims: 2,
            l_max: 3.0,
            inst_min: 2,
            inst_max: 10,
            space: default_space(2),
            seed: 0,
            mass: 1.0,
        }
    }
}

pub fn default_space(dims: usize) -> Rect {
    Rect {
        lo: vec![DEFAULT_SPACE.0; dims],
        hi: vec![DEFAULT_SPACE.1; dims],
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(PtdError::invalid("object count must be at least 1"));
        }
        validate_dims(self.dims)?;
        if !(self.l_max > 0.0 && self.l_max.is_finite()) {
            return Err(PtdError::invalid(format!(
                "l_max must be positive, got {}",
                self.l_max
            )));
        }
        validate_instances(self.inst_min, self.inst_max, self.mass)?;
        if self.space.dims() != self.dims {
            return Err(PtdError::DimensionMismatch {
                expected: self.dims,
                got: self.space.dims(),
            });
        }
        if self
            .space
            .lo
            .iter()
            .zip(&self.space.hi)
            .any(|(l, h)| !(l < h))
        {
            return Err(PtdError::invalid(
                "data space must have positive extent in every dimension",
            ));
        }
        Ok(())
    }
}

fn validate_dims(d: usize) -> Result<()> {
    if d == 0 || d > MAX_DIMS {
        return Err(PtdError::invalid(format!(
            "dimensionality must be in 1..={MAX_DIMS}, got {d}"
        )));
    }
    Ok(())
}

fn validate_instances(inst_min: usize, inst_max: usize, mass: f64) -> Result<()> {
    if inst_min == 0 || inst_min > inst_max {
        return Err(PtdError::invalid(format!(
            "need 1 <= inst_min <= inst_max, got [{inst_min}, {inst_max}]"
        )));
    }
    if inst_max > u32::MAX as usize {
        return Err(PtdError::invalid("inst_max too large"));
    }
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(PtdError::invalid(format!(
            "object mass must be in (0, 1], got {mass}"
        )));
    }
    Ok(())
}

/// Uniform in (0, 1].
fn open_unit(rng: &mut impl Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Instances sampled uniformly inside `region`, with weights normalised to `mass`.
fn sample_object(
    rng: &mut impl Rng,
    id: ObjectId,
    region: &Rect,
    inst_min: usize,
    inst_max: usize,
    mass: f64,
) -> UncertainObject {
    let m = rng.random_range(inst_min..=inst_max);
    let mut points = Vec::with_capacity(m);
    for _ in 0..m {
        let p: Vec<f64> = region
            .lo
            .iter()
            .zip(&region.hi)
            .map(|(&lo, &hi)| {
                if lo == hi {
                    lo
                } else {
                    (lo + (hi - lo) * rng.random::<f64>()).min(hi)
                }
            })
            .collect();
        points.push(p);
    }
    let w: Vec<f64> = (0..m).map(|_| open_unit(rng)).collect();
    let total: f64 = w.iter().sum();
    let instances = points
        .into_iter()
        .zip(&w)
        .enumerate()
        .map(|(j, (p, wj))| Instance {
            object_id: id,
            instance_id: j as u32,
            attrs: AttributeVector::new(p).expect("finite sample"),
            prob: (mass * wj / total).min(1.0),
        })
        .collect();
    UncertainObject { id, instances }
}

struct CenterSampler {
    dist: Distribution,
    space: Rect,
    normal: Vec<Normal<f64>>,
    zipf: Zipf<f64>,
}

impl CenterSampler {
    fn new(cfg: &GenConfig) -> Self {
        let normal = (0..cfg.dims)
            .map(|k| {
                let (lo, hi) = (cfg.space.lo[k], cfg.space.hi[k]);
                Normal::new(0.5 * (lo + hi), (hi - lo) / 6.0).expect("positive extent")
            })
            .collect();
        Self {
            dist: cfg.distribution,
            space: cfg.space.clone(),
            normal,
            zipf: Zipf::new(ZIPF_CELLS as f64, ZIPF_SKEW).expect("valid zipf parameters"),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.space.dims())
            .map(|k| {
                let (lo, hi) = (self.space.lo[k], self.space.hi[k]);
                match self.dist {
                    Distribution::Uniform => lo + (hi - lo) * rng.random::<f64>(),
                    Distribution::Gaussian => loop {
                        let x = self.normal[k].sample(rng);
                        if (lo..=hi).contains(&x) {
                            break x;
                        }
                    },
                    Distribution::Zipf => {
                        let cell = (self.zipf.sample(rng) as u64).clamp(1, ZIPF_CELLS) - 1;
                        let width = (hi - lo) / ZIPF_CELLS as f64;
                        lo + width * (cell as f64 + rng.random::<f64>())
                    }
                }
            })
            .collect()
    }
}

pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = substream(cfg.seed, "datagen");
    let centers = CenterSampler::new(cfg);
    let mut objects = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let c = centers.sample(&mut rng);
        let half: Vec<f64> = (0..cfg.dims)
            .map(|_| 0.5 * cfg.l_max * open_unit(&mut rng))
            .collect();
        let region = Rect {
            lo: c.iter().zip(&half).map(|(c, h)| c - h).collect(),
            hi: c.iter().zip(&half).map(|(c, h)| c + h).collect(),
        };
        objects.push(sample_object(
            &mut rng,
            ObjectId(i as u64),
            &region,
            cfg.inst_min,
            cfg.inst_max,
            cfg.mass,
        ));
    }
    Dataset::new(cfg.dims, objects)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectSampling {
    pub inst_min: usize,
    pub inst_max: usize,
    pub seed: u64,
    pub mass: f64,
}

impl Default for RectSampling {
    fn default() -> Self {
        Self {
            inst_min: 2,
            inst_max: 10,
            seed: 0,
            mass: 1.0,
        }
    }
}

/// Parses `lo1 .. lod hi1 .. hid` per line. Blank lines and `#` comments are skipped.
pub fn parse_rects(reader: impl BufRead) -> Result<Vec<Rect>> {
    let mut rects = Vec::new();
    let mut dims = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let nums = body
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| PtdError::Parse {
                        line: lineno,
                        message: format!("not a finite number: '{tok}'"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if nums.len() % 2 != 0 || nums.is_empty() {
            return Err(PtdError::Parse {
                line: lineno,
                message: format!("expected 2d numbers, got {}", nums.len()),
            });
        }
        let d = nums.len() / 2;
        match dims {
            None => {
                validate_dims(d).map_err(|e| PtdError::Parse {
                    line: lineno,
                    message: e.to_string(),
                })?;
                dims = Some(d);
            }
            Some(d0) if d0 != d => {
                return Err(PtdError::Parse {
                    line: lineno,
                    message: format!("expected {} numbers, got {}", 2 * d0, nums.len()),
                })
            }
            _ => {}
        }
        let rect =
            Rect::new(nums[..d].to_vec(), nums[d..].to_vec()).map_err(|e| PtdError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
        rects.push(rect);
    }
    if rects.is_empty() {
        return Err(PtdError::Parse {
            line: 0,
            message: "no rectangles in input".into(),
        });
    }
    Ok(rects)
}

pub fn dataset_from_rects(rects: &[Rect], cfg: &RectSampling) -> Result<Dataset> {
    validate_instances(cfg.inst_min, cfg.inst_max, cfg.mass)?;
    let dims = rects
        .first()
        .map(Rect::dims)
        .ok_or_else(|| PtdError::invalid("no rectangles"))?;
    let mut rng = substream(cfg.seed, "datagen");
    let objects = rects
        .iter()
        .enumerate()
        .map(|(i, r)| {
            sample_object(
                &mut rng,
                ObjectId(i as u64),
                r,
                cfg.inst_min,
                cfg.inst_max,
                cfg.mass,
            )
        })
        .collect();
    Dataset::new(dims, objects)
}

pub fn load_rect_dataset(path: impl AsRef<Path>, cfg: &RectSampling) -> Result<Dataset> {
    let rects = parse_rects(BufReader::new(File::open(path)?))?;
    dataset_from_rects(&rects, cfg)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partitioning {
    pub n: u32,
    pub assignment: BTreeMap<ObjectId, u32>,
}

impl Partitioning {
    pub fn partition_of(&self, id: ObjectId) -> Option<u32> {
        self.assignment.get(&id).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n as usize];
        for &p in self.assignment.values() {
            s[p as usize] += 1;
        }
        s
    }

    /// The partitions as datasets, objects kept in their original order.
    pub fn split(&self, db: &Dataset) -> Result<Vec<Dataset>> {
        let mut parts: Vec<Vec<UncertainObject>> = vec![Vec::new(); self.n as usize];
        for o in &db.objects {
            let p = self
                .partition_of(o.id)
                .ok_or_else(|| PtdError::invalid(format!("object {} has no partition", o.id)))?;
            parts[p as usize].push(o.clone());
        }
        if self.assignment.len() != db.len() {
            return Err(PtdError::invalid(
                "partitioning covers objects not in the dataset",
            ));
        }
        parts
            .into_iter()
            .map(|objs| Dataset::new(db.dims, objs))
            .collect()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["object_id", "partition"])?;
        for (id, p) in &self.assignment {
            wr.write_record([id.0.to_string(), p.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a partition file. `n` is one more than the largest index seen
    /// unless given explicitly.
    pub fn read_csv(r: impl Read, n: Option<u32>) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut assignment = BTreeMap::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |j: usize| -> Result<u64> {
                rec.get(j)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| PtdError::Parse {
                        line,
                        message: format!("bad field {j}"),
                    })
            };
            let id = ObjectId(field(0)?);
            let p = u32::try_from(field(1)?).map_err(|_| PtdError::Parse {
                line,
                message: "partition too large".into(),
            })?;
            if assignment.insert(id, p).is_some() {
                return Err(PtdError::Parse {
                    line,
                    message: format!("object {id} assigned twice"),
                });
            }
        }
        let max = assignment.values().copied().max().map_or(0, |m| m + 1);
        let n = n.unwrap_or(max);
        if n < max || n == 0 {
            return Err(PtdError::invalid(format!(
                "partition index out of range for N = {n}"
            )));
        }
        Ok(Self { n, assignment })
    }
}

/// Assigns each object independently and uniformly to one of `n`
/// partitions. When that leaves a partition empty although |D| >= n, an
/// object is moved over from the currently largest partition.
pub fn random_partition(db: &Dataset, n: u32, seed: u64) -> Result<Partitioning> {
    if n < 1 {
        return Err(PtdError::invalid("need at least one partition"));
    }
    let mut rng = substream(seed, "partitioning");
    let mut assignment: BTreeMap<ObjectId, u32> = db
        .objects
        .iter()
        .map(|o| (o.id, rng.random_range(0..n)))
        .collect();
    if db.len() >= n as usize {
        let mut sizes = vec![0usize; n as usize];
        for &p in assignment.values() {
            sizes[p as usize] += 1;
        }
        for empty in 0..n {
            if sizes[empty as usize] > 0 {
                continue;
            }
            let largest = (0..n)
                .max_by_key(|&p| (sizes[p as usize], std::cmp::Reverse(p)))
                .unwrap();
            let members: Vec<ObjectId> = assignment
                .iter()
                .filter(|(_, &p)| p == largest)
                .map(|(&id, _)| id)
                .collect();
            let moved = members[rng.random_range(0..members.len())];
            assignment.insert(moved, empty);
            sizes[largest as usize] -= 1;
            sizes[empty as usize] += 1;
        }
    }
    Ok(Partitioning { n, assignment })
}

pub fn generate_queries(n: usize, space: &Rect, seed: u64) -> Result<Vec<QueryPoint>> {
    if n == 0 {
        return Err(PtdError::invalid("need at least one query"));
    }
    let mut rng = substream(seed, "queries");
    Ok((0..n)
        .map(|_| {
            let p = space
                .lo
                .iter()
                .zip(&space.hi)
                .map(|(&lo, &hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect();
            QueryPoint::new(p).expect("finite")
        })
        .collect())
}

pub fn write_dataset(db: &Dataset, w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["object_id".to_string(), "instance_id".into(), "prob".into()];
    header.extend((1..=db.dims).map(|k| format!("a{k}")));
    wr.write_record(&header)?;
    let mut objects: Vec<&UncertainObject> = db.objects.iter().collect();
    objects.sort_by_key(|o| o.id);
    let mut row = Vec::with_capacity(3 + db.dims);
    for o in objects {
        for inst in &o.instances {
            row.clear();
            row.push(o.id.0.to_string());
            row.push(inst.instance_id.to_string());
            row.push(inst.prob.to_string());
            row.extend(inst.attrs.as_slice().iter().map(f64::to_string));
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn read_dataset(r: impl Read) -> Result<Dataset> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    let dims = header.len().saturating_sub(3);
    let expected: Vec<String> = ["object_id", "instance_id", "prob"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=dims).map(|k| format!("a{k}")))
        .collect();
    if dims == 0
        || header
            .iter()
            .map(str::trim)
            .ne(expected.iter().map(String::as_str))
    {
        return Err(PtdError::Parse {
            line: 1,
            message: format!("expected header {}", expected.join(",")),
        });
    }
    validate_dims(dims).map_err(|e| PtdError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let mut objects: Vec<UncertainObject> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let bad = |message: String| PtdError::Parse { line, message };
        if rec.len() != 3 + dims {
            return Err(bad(format!(
                "expected {} fields, got {}",
                3 + dims,
                rec.len()
            )));
        }
        let id: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad object_id '{}'", &rec[0])))?;
        let iid: u32 = rec[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad instance_id '{}'", &rec[1])))?;
        let nums = (2..3 + dims)
            .map(|j| {
                rec[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad number '{}'", &rec[j])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let attrs = AttributeVector::new(nums[1..].to_vec()).map_err(|e| bad(e.to_string()))?;
        let inst =
            Instance::new(ObjectId(id), iid, attrs, nums[0]).map_err(|e| bad(e.to_string()))?;
        match objects.last_mut() {
            Some(o) if o.id.0 == id => o.instances.push(inst),
            _ => {
                if !seen.insert(id) {
                    return Err(bad(format!("rows of object {id} are not contiguous")));
                }
                if let Some(prev) = objects.pop() {
                    let prev = UncertainObject::new(prev.id, prev.instances)
                        .map_err(|e| bad(e.to_string()))?;
                    objects.push(prev);
                }
                objects.push(UncertainObject {
                    id: ObjectId(id),
                    instances: vec![inst],
                });
            }
        }
    }
    if let Some(last) = objects.pop() {
        objects.push(UncertainObject::new(last.id, last.instances)?);
    }
    if objects.is_empty() {
        return Err(PtdError::Parse {
            line: 2,
            message: "dataset has no rows".into(),
        });
    }
    Dataset::new(dims, objects)
}

pub fn save_dataset(db: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    write_dataset(db, std::io::BufWriter::new(f))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}
