//! Aggregate R-tree over a partition.
//!
//! Every entry carries the summed appearance probability of all instances
//! beneath it. Trees are bulk loaded with sort-tile-recursive packing and
//! are immutable afterwards. Entry ids are assigned in post-order, so leaf
//! object entries and inner nodes share one id space and the root has the
//! largest id.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{PtdError, Result};
use crate::geometry::{object_mbr, Dataset, ObjectId, Rect, UncertainObject};

pub const DEFAULT_FANOUT: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SummaryLevel {
    /// The leaf object entries themselves.
    Objects,
    /// Tree nodes at this level; 0 is the leaf-node level.
    Node(u16),
}

impl SummaryLevel {
    pub fn to_wire(self) -> i16 {
        match self {
            SummaryLevel::Objects => -1,
            SummaryLevel::Node(l) => l as i16,
        }
    }

    pub fn from_wire(v: i16) -> Result<Self> {
        match v {
            -1 => Ok(SummaryLevel::Objects),
            l if l >= 0 => Ok(SummaryLevel::Node(l as u16)),
            l => Err(PtdError::Decode(format!("invalid level {l}"))),
        }
    }

    /// Numeric depth where objects sit at -1.
    pub fn rank(self) -> i32 {
        self.to_wire() as i32
    }
}

impl std::fmt::Display for SummaryLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SummaryLevel::Objects => write!(f, "objects"),
            SummaryLevel::Node(l) => write!(f, "{l}"),
        }
    }
}

impl std::str::FromStr for SummaryLevel {
    type Err = PtdError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "objects" || s == "-1" {
            return Ok(SummaryLevel::Objects);
        }
        s.parse::<u16>().map(SummaryLevel::Node).map_err(|_| {
            PtdError::invalid(format!(
                "bad level '{s}' (expected 'objects' or a node level)"
            ))
        })
    }
}

/// Something to be indexed: a rectangle with an aggregate and a caller key.
#[derive(Debug, Clone)]
pub struct LeafItem {
    pub rect: Rect,
    pub sum: f64,
    pub key: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EntryKind {
    /// A leaf item; `key` is the caller's index (object position in the partition).
    Item {
        key: usize,
    },
    Node {
        children: Vec<u64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEntry {
    pub id: u64,
    pub rect: Rect,
    pub sum: f64,
    pub level: SummaryLevel,
    pub kind: EntryKind,
}

impl TreeEntry {
    pub fn is_item(&self) -> bool {
        matches!(self.kind, EntryKind::Item { .. })
    }

    pub fn children(&self) -> &[u64] {
        match &self.kind {
            EntryKind::Node { children } => children,
            EntryKind::Item { .. } => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ARTree {
    pub partition_id: u32,
    pub fanout: usize,
    /// Number of node levels (leaf-node level through root).
    pub height: usize,
    entries: Vec<TreeEntry>,
}

enum Tmp {
    Item(LeafItem),
    Node {
        level: u16,
        rect: Rect,
        sum: f64,
        children: Vec<usize>,
    },
}

impl ARTree {
    /// Index the objects of a partition; item keys are object positions.
    pub fn build(partition: &Dataset, fanout: usize, partition_id: u32) -> Result<Self> {
        if partition.is_empty() {
            return Err(PtdError::invalid(format!(
                "partition {partition_id} is empty"
            )));
        }
        let items = partition
            .objects
            .iter()
            .enumerate()
            .map(|(key, o)| {
                Ok(LeafItem {
                    rect: object_mbr(o)?,
                    sum: o.total_prob(),
                    key,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_items(items, fanout, partition_id)
    }

    pub fn from_items(items: Vec<LeafItem>, fanout: usize, partition_id: u32) -> Result<Self> {
        if fanout < 2 {
            return Err(PtdError::invalid(format!("fanout {fanout} < 2")));
        }
        if items.is_empty() {
            return Err(PtdError::invalid("cannot index zero items"));
        }
        let dims = items[0].rect.dims();
        let mut arena: Vec<Tmp> = Vec::new();
        let mut rects: Vec<Rect> = Vec::new();
        let mut layer: Vec<usize> = Vec::with_capacity(items.len());
        for it in items {
            if it.rect.dims() != dims {
                return Err(PtdError::DimensionMismatch {
                    expected: dims,
                    got: it.rect.dims(),
                });
            }
            layer.push(arena.len());
            rects.push(it.rect.clone());
            arena.push(Tmp::Item(it));
        }

        let mut level: u16 = 0;
        let root = loop {
            let groups = str_groups(layer, &rects, fanout, dims);
            let mut next = Vec::with_capacity(groups.len());
            for g in groups {
                let rect = Rect::union_all(g.iter().map(|&c| &rects[c])).expect("non-empty group");
                let sum = g
                    .iter()
                    .map(|&c| match &arena[c] {
                        Tmp::Item(it) => it.sum,
                        Tmp::Node { sum, .. } => *sum,
                    })
                    .sum();
                next.push(arena.len());
                rects.push(rect.clone());
                arena.push(Tmp::Node {
                    level,
                    rect,
                    sum,
                    children: g,
                });
            }
            if next.len() == 1 {
                break next[0];
            }
            layer = next;
            level += 1;
        };

        // Post-order numbering.
        let mut ids = vec![u64::MAX; arena.len()];
        let mut order = Vec::with_capacity(arena.len());
        let mut stack = vec![(root, false)];
        while let Some((n, expanded)) = stack.pop() {
            match &arena[n] {
                Tmp::Node { children, .. } if !expanded => {
                    stack.push((n, true));
                    for &c in children.iter().rev() {
                        stack.push((c, false));
                    }
                }
                _ => {
                    ids[n] = order.len() as u64;
                    order.push(n);
                }
            }
        }
        let entries = order
            .iter()
            .map(|&n| match &arena[n] {
                Tmp::Item(it) => TreeEntry {
                    id: ids[n],
                    rect: it.rect.clone(),
                    sum: it.sum,
                    level: SummaryLevel::Objects,
                    kind: EntryKind::Item { key: it.key },
                },
                Tmp::Node {
                    level,
                    rect,
                    sum,
                    children,
                } => TreeEntry {
                    id: ids[n],
                    rect: rect.clone(),
                    sum: *sum,
                    level: SummaryLevel::Node(*level),
                    kind: EntryKind::Node {
                        children: children.iter().map(|&c| ids[c]).collect(),
                    },
                },
            })
            .collect();

        Ok(Self {
            partition_id,
            fanout,
            height: level as usize + 1,
            entries,
        })
    }

    pub fn root(&self) -> &TreeEntry {
        self.entries.last().expect("tree is never empty")
    }

    pub fn entry(&self, id: u64) -> Option<&TreeEntry> {
        self.entries.get(usize::try_from(id).ok()?)
    }

    pub fn entries(&self) -> &[TreeEntry] {
        &self.entries
    }

    pub fn children<'a>(&'a self, e: &'a TreeEntry) -> impl Iterator<Item = &'a TreeEntry> + 'a {
        e.children().iter().map(move |&c| &self.entries[c as usize])
    }

    pub fn root_level(&self) -> SummaryLevel {
        SummaryLevel::Node((self.height - 1) as u16)
    }

    /// All levels that can be cut, finest first.
    pub fn levels(&self) -> Vec<SummaryLevel> {
        std::iter::once(SummaryLevel::Objects)
            .chain((0..self.height as u16).map(SummaryLevel::Node))
            .collect()
    }

    pub fn has_level(&self, level: SummaryLevel) -> bool {
        match level {
            SummaryLevel::Objects => true,
            SummaryLevel::Node(l) => (l as usize) < self.height,
        }
    }

    pub fn level_cut(&self, level: SummaryLevel) -> Result<IndexSummary> {
        if !self.has_level(level) {
            return Err(PtdError::invalid(format!(
                "level {level} out of range for tree of height {}",
                self.height
            )));
        }
        let entries = self
            .entries
            .iter()
            .filter(|e| e.level == level)
            .map(|e| SummaryEntry {
                node_id: e.id,
                rect: e.rect.clone(),
                sum: e.sum,
                is_object: e.is_item(),
            })
            .collect();
        Ok(IndexSummary {
            partition_id: self.partition_id,
            level,
            entries,
        })
    }

    /// Recheck aggregate conservation, containment and fill against the
    /// partition the tree was built from.
    pub fn check_invariants(&self, partition: &Dataset, tol: f64) -> Result<()> {
        let fail = |m: String| {
            Err(PtdError::invalid(format!(
                "tree {}: {m}",
                self.partition_id
            )))
        };
        let min_fill = self.fanout.div_ceil(2);
        let root_id = self.root().id;
        let mut items = 0;
        for e in &self.entries {
            match &e.kind {
                EntryKind::Item { key } => {
                    items += 1;
                    let Some(o) = partition.objects.get(*key) else {
                        return fail(format!("item {} points at missing object {key}", e.id));
                    };
                    if (o.total_prob() - e.sum).abs() > tol {
                        return fail(format!(
                            "item {} sum {} != object mass {}",
                            e.id,
                            e.sum,
                            o.total_prob()
                        ));
                    }
                    for inst in &o.instances {
                        if !e.rect.contains_point(inst.attrs.as_slice()) {
                            return fail(format!("object {} instance outside its entry", o.id));
                        }
                    }
                }
                EntryKind::Node { children } => {
                    let n = children.len();
                    if n == 0 || n > self.fanout || (e.id != root_id && n < min_fill) {
                        return fail(format!("node {} has {n} children", e.id));
                    }
                    let mut s = 0.0;
                    for c in self.children(e) {
                        if c.id >= e.id {
                            return fail(format!("node {} not in post-order", e.id));
                        }
                        if !e.rect.contains_rect(&c.rect) {
                            return fail(format!("node {} does not contain child {}", e.id, c.id));
                        }
                        let expected = match e.level {
                            SummaryLevel::Node(0) => SummaryLevel::Objects,
                            SummaryLevel::Node(l) => SummaryLevel::Node(l - 1),
                            SummaryLevel::Objects => unreachable!(),
                        };
                        if c.level != expected {
                            return fail(format!("child {} of node {} at wrong level", c.id, e.id));
                        }
                        s += c.sum;
                    }
                    if (s - e.sum).abs() > tol {
                        return fail(format!("node {} sum {} != children {s}", e.id, e.sum));
                    }
                }
            }
        }
        if items != partition.len() {
            return fail(format!("{items} items for {} objects", partition.len()));
        }
        let mass: f64 = partition.objects.iter().map(|o| o.total_prob()).sum();
        if (mass - self.root().sum).abs() > tol {
            return fail(format!(
                "root sum {} != partition mass {mass}",
                self.root().sum
            ));
        }
        Ok(())
    }
}

fn even_sizes(n: usize, groups: usize) -> Vec<usize> {
    let base = n / groups;
    let rem = n % groups;
    (0..groups).map(|i| base + usize::from(i < rem)).collect()
}

/// Sort-tile-recursive grouping with balanced group sizes, so every group
/// holds at least ceil(fanout / 2) members whenever there is more than one.
fn str_groups(items: Vec<usize>, rects: &[Rect], fanout: usize, dims: usize) -> Vec<Vec<usize>> {
    let g = items.len().div_ceil(fanout);
    let sizes = even_sizes(items.len(), g);
    let mut items = items;
    let mut out = Vec::with_capacity(g);
    tile(&mut items, &sizes, 0, dims, rects, &mut out);
    out
}

fn tile(
    items: &mut [usize],
    sizes: &[usize],
    dim: usize,
    dims: usize,
    rects: &[Rect],
    out: &mut Vec<Vec<usize>>,
) {
    items.sort_by(|&a, &b| {
        rects[a]
            .center(dim)
            .total_cmp(&rects[b].center(dim))
            .then(a.cmp(&b))
    });
    if dim + 1 == dims || sizes.len() == 1 {
        let mut start = 0;
        for &s in sizes {
            out.push(items[start..start + s].to_vec());
            start += s;
        }
        return;
    }
    let remaining = (dims - dim) as f64;
    let slabs = ((sizes.len() as f64).powf(1.0 / remaining).ceil() as usize).clamp(1, sizes.len());
    let mut start_group = 0;
    let mut start_item = 0;
    for groups_in_slab in even_sizes(sizes.len(), slabs) {
        let slab_sizes = &sizes[start_group..start_group + groups_in_slab];
        let count: usize = slab_sizes.iter().sum();
        tile(
            &mut items[start_item..start_item + count],
            slab_sizes,
            dim + 1,
            dims,
            rects,
            out,
        );
        start_group += groups_in_slab;
        start_item += count;
    }
}

/// A partition's data together with its tree.
#[derive(Debug, Clone)]
pub struct IndexedPartition {
    pub id: u32,
    pub data: Dataset,
    pub tree: ARTree,
    positions: HashMap<ObjectId, usize>,
}

impl IndexedPartition {
    pub fn build(id: u32, data: Dataset, fanout: usize) -> Result<Self> {
        let tree = ARTree::build(&data, fanout, id)?;
        let positions = data
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| (o.id, i))
            .collect();
        Ok(Self {
            id,
            data,
            tree,
            positions,
        })
    }

    pub fn position(&self, id: ObjectId) -> Option<usize> {
        self.positions.get(&id).copied()
    }

    pub fn object(&self, id: ObjectId) -> Option<&UncertainObject> {
        self.position(id).map(|i| &self.data.objects[i])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub node_id: u64,
    pub rect: Rect,
    pub sum: f64,
    pub is_object: bool,
}

/// One level of a partition's tree, as shipped to the other servers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub partition_id: u32,
    pub level: SummaryLevel,
    pub entries: Vec<SummaryEntry>,
}

pub const SUMMARY_MAGIC: &[u8; 4] = b"PTDS";
pub const SUMMARY_VERSION: u16 = 1;
pub const SUMMARY_HEADER_LEN: usize = 16;

pub fn summary_entry_len(dims: usize) -> usize {
    8 + 16 * dims + 8 + 1
}

impl IndexSummary {
    /// One degenerate point entry per instance of `partition`. Gives the
    /// tightest possible bounds; used to check exactness, never shipped by
    /// the runtime.
    pub fn instance_points(partition_id: u32, partition: &Dataset) -> Self {
        let entries = partition
            .instances()
            .enumerate()
            .map(|(i, inst)| SummaryEntry {
                node_id: i as u64,
                rect: Rect::point(inst.attrs.as_slice()),
                sum: inst.prob,
                is_object: true,
            })
            .collect();
        Self {
            partition_id,
            level: SummaryLevel::Objects,
            entries,
        }
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.sum).sum()
    }

    pub fn dims(&self) -> usize {
        self.entries.first().map_or(0, |e| e.rect.dims())
    }

    pub fn encoded_len(&self) -> usize {
        SUMMARY_HEADER_LEN + self.entries.len() * summary_entry_len(self.dims())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.entries.is_empty() {
            return Err(PtdError::invalid("summary has no entries"));
        }
        let d = self.dims();
        let mut buf = Vec::with_capacity(self.encoded_len());
        buf.extend_from_slice(SUMMARY_MAGIC);
        buf.extend_from_slice(&SUMMARY_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.partition_id.to_le_bytes());
        buf.extend_from_slice(&self.level.to_wire().to_le_bytes());
        let count =
            u32::try_from(self.entries.len()).map_err(|_| PtdError::invalid("too many entries"))?;
        buf.extend_from_slice(&count.to_le_bytes());
        for e in &self.entries {
            if e.rect.dims() != d {
                return Err(PtdError::DimensionMismatch {
                    expected: d,
                    got: e.rect.dims(),
                });
            }
            buf.extend_from_slice(&e.node_id.to_le_bytes());
            for v in e.rect.lo.iter().chain(&e.rect.hi) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&e.sum.to_le_bytes());
            buf.push(u8::from(e.is_object));
        }
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| PtdError::Decode(m.to_string());
        if bytes.len() < SUMMARY_HEADER_LEN {
            return Err(err("truncated header"));
        }
        if &bytes[0..4] != SUMMARY_MAGIC {
            return Err(err("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SUMMARY_VERSION {
            return Err(PtdError::Decode(format!("unsupported version {version}")));
        }
        let partition_id = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
        let level = SummaryLevel::from_wire(i16::from_le_bytes([bytes[10], bytes[11]]))?;
        let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if count == 0 {
            return Err(err("summary has no entries"));
        }
        let body = bytes.len() - SUMMARY_HEADER_LEN;
        // Entries carry no explicit dimension: recover it from the length.
        if body % count != 0 {
            return Err(err("body length is not a multiple of the entry count"));
        }
        let per = body / count;
        if per < summary_entry_len(1) || (per - 17) % 16 != 0 {
            return Err(PtdError::Decode(format!(
                "entry length {per} matches no dimensionality"
            )));
        }
        let d = (per - 17) / 16;
        let mut entries = Vec::with_capacity(count);
        let mut rd = Reader {
            buf: &bytes[SUMMARY_HEADER_LEN..],
            pos: 0,
        };
        for _ in 0..count {
            let node_id = rd.u64();
            let lo: Vec<f64> = (0..d).map(|_| rd.f64()).collect();
            let hi: Vec<f64> = (0..d).map(|_| rd.f64()).collect();
            let sum = rd.f64();
            let is_object = match rd.u8() {
                0 => false,
                1 => true,
                f => return Err(PtdError::Decode(format!("bad entry flag {f}"))),
            };
            let rect = Rect::new(lo, hi).map_err(|e| PtdError::Decode(e.to_string()))?;
            if !sum.is_finite() || sum < 0.0 {
                return Err(PtdError::Decode(format!("bad aggregate {sum}")));
            }
            entries.push(SummaryEntry {
                node_id,
                rect,
                sum,
                is_object,
            });
        }
        Ok(Self {
            partition_id,
            level,
            entries,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.buf[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}
