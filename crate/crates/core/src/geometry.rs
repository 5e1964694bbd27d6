//! Uncertain objects and dynamic-dominance geometry.
//!
//! Everything here is relative to a query point `q`: an attribute vector is
//! mapped to its *dynamic* coordinates `|p[k] - q[k]|`, and dominance is the
//! usual Pareto order on those coordinates (smaller is better).

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{PtdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u64);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A point in the d-dimensional attribute space. All coordinates are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AttributeVector(Vec<f64>);

impl AttributeVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(PtdError::invalid(
                "attribute vector must have at least one dimension",
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(PtdError::invalid(format!("non-finite attribute value {v}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for AttributeVector {
    type Error = PtdError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<AttributeVector> for Vec<f64> {
    fn from(v: AttributeVector) -> Self {
        v.0
    }
}

impl std::ops::Index<usize> for AttributeVector {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// Anything that has a position in attribute space.
pub trait Attrs {
    fn attrs(&self) -> &[f64];
}

impl Attrs for AttributeVector {
    fn attrs(&self) -> &[f64] {
        &self.0
    }
}

impl Attrs for Instance {
    fn attrs(&self) -> &[f64] {
        self.attrs.as_slice()
    }
}

impl Attrs for QueryPoint {
    fn attrs(&self) -> &[f64] {
        self.attrs.as_slice()
    }
}

impl Attrs for [f64] {
    fn attrs(&self) -> &[f64] {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub object_id: ObjectId,
    pub instance_id: u32,
    pub attrs: AttributeVector,
    pub prob: f64,
}

impl Instance {
    pub fn new(
        object_id: ObjectId,
        instance_id: u32,
        attrs: AttributeVector,
        prob: f64,
    ) -> Result<Self> {
        if !(prob > 0.0 && prob <= 1.0) {
            return Err(PtdError::invalid(format!(
                "instance {object_id}/{instance_id}: probability {prob} outside (0, 1]"
            )));
        }
        Ok(Self {
            object_id,
            instance_id,
            attrs,
            prob,
        })
    }
}

/// An object made of mutually exclusive, weighted instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainObject {
    pub id: ObjectId,
    pub instances: Vec<Instance>,
}

pub const PROB_SUM_SLACK: f64 = 1e-12;

impl UncertainObject {
    pub fn new(id: ObjectId, instances: Vec<Instance>) -> Result<Self> {
        if instances.is_empty() {
            return Err(PtdError::invalid(format!("object {id} has no instances")));
        }
        let d = instances[0].attrs.dims();
        for inst in &instances {
            if inst.object_id != id {
                return Err(PtdError::invalid(format!(
                    "instance {} claims object {} but belongs to {id}",
                    inst.instance_id, inst.object_id
                )));
            }
            if inst.attrs.dims() != d {
                return Err(PtdError::DimensionMismatch {
                    expected: d,
                    got: inst.attrs.dims(),
                });
            }
        }
        let total: f64 = instances.iter().map(|i| i.prob).sum();
        if total > 1.0 + PROB_SUM_SLACK {
            return Err(PtdError::invalid(format!(
                "object {id}: instance probabilities sum to {total} > 1"
            )));
        }
        Ok(Self { id, instances })
    }

    pub fn total_prob(&self) -> f64 {
        self.instances.iter().map(|i| i.prob).sum()
    }

    pub fn dims(&self) -> usize {
        self.instances[0].attrs.dims()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPoint {
    pub attrs: AttributeVector,
}

impl QueryPoint {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Ok(Self {
            attrs: AttributeVector::new(values)?,
        })
    }

    pub fn dims(&self) -> usize {
        self.attrs.dims()
    }
}

/// Axis-aligned rectangle; `lo == hi` is a valid point rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Rect {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(PtdError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.is_empty() {
            return Err(PtdError::invalid(
                "rectangle must have at least one dimension",
            ));
        }
        for (k, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() {
                return Err(PtdError::invalid(format!(
                    "non-finite rectangle bound in dimension {k}"
                )));
            }
            if l > h {
                return Err(PtdError::invalid(format!(
                    "rectangle lo {l} > hi {h} in dimension {k}"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn point(p: &[f64]) -> Self {
        Self {
            lo: p.to_vec(),
            hi: p.to_vec(),
        }
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn contains_point(&self, p: &[f64]) -> bool {
        p.iter()
            .enumerate()
            .all(|(k, &x)| self.lo[k] <= x && x <= self.hi[k])
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        (0..self.dims()).all(|k| self.lo[k] <= other.lo[k] && other.hi[k] <= self.hi[k])
    }

    /// Grow `self` to cover `other`.
    pub fn expand(&mut self, other: &Rect) {
        for k in 0..self.dims() {
            self.lo[k] = self.lo[k].min(other.lo[k]);
            self.hi[k] = self.hi[k].max(other.hi[k]);
        }
    }

    pub fn union_all<'a>(mut rects: impl Iterator<Item = &'a Rect>) -> Option<Rect> {
        let mut acc = rects.next()?.clone();
        for r in rects {
            acc.expand(r);
        }
        Some(acc)
    }

    pub fn center(&self, k: usize) -> f64 {
        0.5 * (self.lo[k] + self.hi[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DominanceClass {
    /// Every point of the rectangle is dynamically dominated.
    Full,
    /// Some points may be dominated, some not.
    Partial,
    /// No point of the rectangle is dynamically dominated.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dims: usize,
    pub objects: Vec<UncertainObject>,
}

impl Dataset {
    pub fn new(dims: usize, objects: Vec<UncertainObject>) -> Result<Self> {
        if dims == 0 {
            return Err(PtdError::invalid("dimensionality must be at least 1"));
        }
        let mut seen = HashSet::with_capacity(objects.len());
        for o in &objects {
            if o.dims() != dims {
                return Err(PtdError::DimensionMismatch {
                    expected: dims,
                    got: o.dims(),
                });
            }
            if !seen.insert(o.id) {
                return Err(PtdError::invalid(format!("duplicate object id {}", o.id)));
            }
        }
        Ok(Self { dims, objects })
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn instance_count(&self) -> usize {
        self.objects.iter().map(|o| o.instances.len()).sum()
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.objects.iter().flat_map(|o| o.instances.iter())
    }

    pub fn get(&self, id: ObjectId) -> Option<&UncertainObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Bounding box of all instances, or `None` for an empty dataset.
    pub fn bounding_box(&self) -> Option<Rect> {
        let mut it = self.instances();
        let first = it.next()?;
        let mut r = Rect::point(first.attrs.as_slice());
        for inst in it {
            for (k, &x) in inst.attrs.as_slice().iter().enumerate() {
                r.lo[k] = r.lo[k].min(x);
                r.hi[k] = r.hi[k].max(x);
            }
        }
        Some(r)
    }
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(PtdError::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub fn dyn_attrs(p: &impl Attrs, q: &QueryPoint) -> Result<AttributeVector> {
    let p = p.attrs();
    check_dims(q.dims(), p.len())?;
    Ok(AttributeVector(
        p.iter()
            .zip(q.attrs.as_slice())
            .map(|(x, y)| (x - y).abs())
            .collect(),
    ))
}

/// Dynamic dominance without dimension checks; slices must have equal length.
#[inline]
pub fn dominates_raw(u: &[f64], v: &[f64], q: &[f64]) -> bool {
    let mut strict = false;
    for k in 0..q.len() {
        let du = (u[k] - q[k]).abs();
        let dv = (v[k] - q[k]).abs();
        if du > dv {
            return false;
        }
        if du < dv {
            strict = true;
        }
    }
    strict
}

pub fn dynamic_dominates(u: &impl Attrs, v: &impl Attrs, q: &QueryPoint) -> Result<bool> {
    check_dims(q.dims(), u.attrs().len())?;
    check_dims(q.dims(), v.attrs().len())?;
    Ok(dominates_raw(u.attrs(), v.attrs(), q.attrs.as_slice()))
}

/// Exact range of `|x - qk|` for `x` in `[lo, hi]`.
#[inline]
pub fn dyn_interval_raw(lo: f64, hi: f64, qk: f64) -> (f64, f64) {
    let a = (lo - qk).abs();
    let b = (hi - qk).abs();
    let dhi = a.max(b);
    let dlo = if lo <= qk && qk <= hi { 0.0 } else { a.min(b) };
    (dlo, dhi)
}

pub fn dyn_interval(rect: &Rect, q: &QueryPoint, k: usize) -> Result<(f64, f64)> {
    check_dims(q.dims(), rect.dims())?;
    if k >= rect.dims() {
        return Err(PtdError::invalid(format!(
            "dimension index {k} out of range"
        )));
    }
    Ok(dyn_interval_raw(rect.lo[k], rect.hi[k], q.attrs[k]))
}

/// Classify `rect` against the dominance region of a point whose dynamic
/// coordinates are `a` (already `|t - q|`).
#[inline]
pub fn classify_dyn(a: &[f64], lo: &[f64], hi: &[f64], q: &[f64]) -> DominanceClass {
    let mut full = true;
    let mut full_strict = false;
    let mut all_eq_hi = true;
    for k in 0..q.len() {
        let (dlo, dhi) = dyn_interval_raw(lo[k], hi[k], q[k]);
        if a[k] > dhi {
            return DominanceClass::None;
        }
        if a[k] != dhi {
            all_eq_hi = false;
        }
        if a[k] > dlo {
            full = false;
        } else if a[k] < dlo {
            full_strict = true;
        }
    }
    if all_eq_hi {
        DominanceClass::None
    } else if full && full_strict {
        DominanceClass::Full
    } else {
        DominanceClass::Partial
    }
}

#[inline]
pub fn classify_raw(t: &[f64], q: &[f64], lo: &[f64], hi: &[f64]) -> DominanceClass {
    let mut a = [0.0f64; MAX_INLINE_DIMS];
    if q.len() <= MAX_INLINE_DIMS {
        for k in 0..q.len() {
            a[k] = (t[k] - q[k]).abs();
        }
        classify_dyn(&a[..q.len()], lo, hi, q)
    } else {
        let a: Vec<f64> = t.iter().zip(q).map(|(x, y)| (x - y).abs()).collect();
        classify_dyn(&a, lo, hi, q)
    }
}

pub(crate) const MAX_INLINE_DIMS: usize = 8;

pub fn classify_rect(t: &impl Attrs, q: &QueryPoint, rect: &Rect) -> Result<DominanceClass> {
    check_dims(q.dims(), t.attrs().len())?;
    check_dims(q.dims(), rect.dims())?;
    Ok(classify_raw(
        t.attrs(),
        q.attrs.as_slice(),
        &rect.lo,
        &rect.hi,
    ))
}

pub fn object_mbr(t: &UncertainObject) -> Result<Rect> {
    let first = t
        .instances
        .first()
        .ok_or_else(|| PtdError::invalid(format!("object {} has no instances", t.id)))?;
    let mut r = Rect::point(first.attrs.as_slice());
    for inst in &t.instances[1..] {
        for (k, &x) in inst.attrs.as_slice().iter().enumerate() {
            r.lo[k] = r.lo[k].min(x);
            r.hi[k] = r.hi[k].max(x);
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(v: &[f64]) -> QueryPoint {
        QueryPoint::new(v.to_vec()).unwrap()
    }

    fn av(v: &[f64]) -> AttributeVector {
        AttributeVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn dyn_attrs_examples() {
        assert_eq!(
            dyn_attrs(&av(&[7.0, 10.0]), &q(&[9.0, 9.0])).unwrap(),
            av(&[2.0, 1.0])
        );
        assert_eq!(
            dyn_attrs(&av(&[3.0, 4.0]), &q(&[3.0, 4.0])).unwrap(),
            av(&[0.0, 0.0])
        );
        assert_eq!(
            dyn_attrs(&av(&[2.0, 2.0]), &q(&[9.0, 9.0])).unwrap(),
            av(&[7.0, 7.0])
        );
        assert!(matches!(
            dyn_attrs(&av(&[1.0]), &q(&[1.0, 2.0])),
            Err(PtdError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dominance_examples() {
        let o = q(&[0.0, 0.0]);
        assert!(dynamic_dominates(&av(&[1.0, 1.0]), &av(&[2.0, 2.0]), &o).unwrap());
        assert!(!dynamic_dominates(&av(&[1.0, 3.0]), &av(&[3.0, 1.0]), &o).unwrap());
        assert!(!dynamic_dominates(&av(&[1.0, 1.0]), &av(&[1.0, 1.0]), &o).unwrap());
        assert!(dynamic_dominates(&av(&[1.0]), &av(&[1.0, 2.0]), &o).is_err());
    }

    #[test]
    fn dyn_interval_examples() {
        let r = Rect::new(vec![1.0, 0.0], vec![3.0, 0.0]).unwrap();
        assert_eq!(dyn_interval(&r, &q(&[2.0, 0.0]), 0).unwrap(), (0.0, 1.0));
        let r = Rect::new(vec![4.0], vec![6.0]).unwrap();
        assert_eq!(dyn_interval(&r, &q(&[2.0]), 0).unwrap(), (2.0, 4.0));
        let r = Rect::new(vec![5.0], vec![5.0]).unwrap();
        assert_eq!(dyn_interval(&r, &q(&[5.0]), 0).unwrap(), (0.0, 0.0));
        assert!(dyn_interval(&r, &q(&[5.0]), 1).is_err());
    }

    #[test]
    fn classify_examples() {
        // a = (2, 1); rect maps to dlo = (3, 2), dhi = (5, 4) in dynamic space.
        let qq = q(&[0.0, 0.0]);
        let t = av(&[2.0, 1.0]);
        let r = Rect::new(vec![3.0, 2.0], vec![5.0, 4.0]).unwrap();
        assert_eq!(classify_rect(&t, &qq, &r).unwrap(), DominanceClass::Full);

        let at_q = Rect::point(&[0.0, 0.0]);
        assert_eq!(classify_rect(&t, &qq, &at_q).unwrap(), DominanceClass::None);

        let straddle = Rect::new(vec![1.0, 2.0], vec![5.0, 4.0]).unwrap();
        assert_eq!(
            classify_rect(&t, &qq, &straddle).unwrap(),
            DominanceClass::Partial
        );
    }

    #[test]
    fn classify_all_equal_boundary_is_none() {
        let qq = q(&[0.0, 0.0]);
        let t = av(&[2.0, 2.0]);
        // Mirrored copy of t: identical dynamic coordinates, not dominated.
        let p = Rect::point(&[-2.0, 2.0]);
        assert_eq!(classify_rect(&t, &qq, &p).unwrap(), DominanceClass::None);
    }

    #[test]
    fn object_mbr_examples() {
        let oid = ObjectId(7);
        let mk = |i, x: f64, y: f64, p| Instance::new(oid, i, av(&[x, y]), p).unwrap();
        let a = UncertainObject::new(
            oid,
            vec![
                mk(0, 7.0, 10.0, 0.3),
                mk(1, 9.0, 8.0, 0.3),
                mk(2, 10.0, 11.0, 0.4),
            ],
        )
        .unwrap();
        let r = object_mbr(&a).unwrap();
        assert_eq!((r.lo, r.hi), (vec![7.0, 8.0], vec![10.0, 11.0]));

        let d =
            UncertainObject::new(oid, vec![mk(0, 5.0, 8.0, 0.2), mk(1, 2.0, 2.0, 0.8)]).unwrap();
        let r = object_mbr(&d).unwrap();
        assert_eq!((r.lo, r.hi), (vec![2.0, 2.0], vec![5.0, 8.0]));

        let single = UncertainObject::new(oid, vec![mk(0, 1.0, 2.0, 1.0)]).unwrap();
        let r = object_mbr(&single).unwrap();
        assert_eq!(r.lo, r.hi);

        let empty = UncertainObject {
            id: oid,
            instances: vec![],
        };
        assert!(object_mbr(&empty).is_err());
    }

    #[test]
    fn constructors_reject_bad_values() {
        assert!(AttributeVector::new(vec![f64::NAN]).is_err());
        assert!(AttributeVector::new(vec![]).is_err());
        assert!(Instance::new(ObjectId(0), 0, av(&[0.0]), 0.0).is_err());
        assert!(Instance::new(ObjectId(0), 0, av(&[0.0]), 1.5).is_err());
        assert!(Rect::new(vec![2.0], vec![1.0]).is_err());
        let i1 = Instance::new(ObjectId(0), 0, av(&[0.0]), 0.7).unwrap();
        let i2 = Instance::new(ObjectId(0), 1, av(&[1.0]), 0.7).unwrap();
        assert!(UncertainObject::new(ObjectId(0), vec![i1.clone(), i2]).is_err());
        let o = UncertainObject::new(ObjectId(0), vec![i1]).unwrap();
        assert!(Dataset::new(1, vec![o.clone(), o]).is_err());
    }

    fn coord() -> impl Strategy<Value = f64> {
        // Quarter-unit grid so ties and boundary cases actually occur.
        (-40i32..40).prop_map(|v| v as f64 * 0.25)
    }

    fn pt() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(coord(), 2)
    }

    /// Corners plus a deterministic lattice of interior points.
    fn sample_rect(r: &Rect) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let n = 32;
        for i in 0..=n {
            for j in 0..=n {
                let x = r.lo[0] + (r.hi[0] - r.lo[0]) * i as f64 / n as f64;
                let y = r.lo[1] + (r.hi[1] - r.lo[1]) * j as f64 / n as f64;
                out.push(vec![x, y]);
            }
        }
        out
    }

    proptest! {
        #[test]
        fn dominance_irreflexive_antisymmetric(u in pt(), v in pt(), qq in pt()) {
            let qp = QueryPoint::new(qq).unwrap();
            let (u, v) = (av(&u), av(&v));
            prop_assert!(!dynamic_dominates(&u, &u, &qp).unwrap());
            let uv = dynamic_dominates(&u, &v, &qp).unwrap();
            let vu = dynamic_dominates(&v, &u, &qp).unwrap();
            prop_assert!(!(uv && vu));
        }

        #[test]
        fn dominance_reflection_invariant(u in pt(), v in pt(), qq in pt(), flip in 0usize..2) {
            let qp = QueryPoint::new(qq.clone()).unwrap();
            let before = dynamic_dominates(&av(&u), &av(&v), &qp).unwrap();
            let mut u2 = u.clone();
            let mut v2 = v.clone();
            u2[flip] = 2.0 * qq[flip] - u[flip];
            v2[flip] = 2.0 * qq[flip] - v[flip];
            prop_assert_eq!(before, dynamic_dominates(&av(&u2), &av(&v2), &qp).unwrap());
        }

        #[test]
        fn classify_agrees_with_sampling(t in pt(), qq in pt(), a in pt(), b in pt()) {
            let qp = QueryPoint::new(qq).unwrap();
            let lo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect();
            let hi: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect();
            let r = Rect::new(lo, hi).unwrap();
            let t = av(&t);
            let class = classify_rect(&t, &qp, &r).unwrap();
            let samples = sample_rect(&r);
            let dominated = samples.iter().filter(|p| dominates_raw(t.as_slice(), p, qp.attrs.as_slice())).count();
            match class {
                DominanceClass::Full => prop_assert_eq!(dominated, samples.len()),
                DominanceClass::None => prop_assert_eq!(dominated, 0),
                DominanceClass::Partial => {}
            }
        }

        #[test]
        fn classify_point_rect_never_partial(t in pt(), p in pt(), qq in pt()) {
            let qp = QueryPoint::new(qq).unwrap();
            let class = classify_rect(&av(&t), &qp, &Rect::point(&p)).unwrap();
            let dom = dynamic_dominates(&av(&t), &av(&p), &qp).unwrap();
            prop_assert_eq!(class, if dom { DominanceClass::Full } else { DominanceClass::None });
        }

        #[test]
        fn mbr_contains_instances(pts in prop::collection::vec(pt(), 1..8)) {
            let n = pts.len();
            let insts = pts.into_iter().enumerate()
                .map(|(i, p)| Instance::new(ObjectId(1), i as u32, av(&p), 1.0 / n as f64).unwrap())
                .collect();
            let o = UncertainObject::new(ObjectId(1), insts).unwrap();
            let r = object_mbr(&o).unwrap();
            for i in &o.instances {
                prop_assert!(r.contains_point(i.attrs.as_slice()));
            }
        }
    }
}
