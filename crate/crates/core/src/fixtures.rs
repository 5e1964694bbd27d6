//! The four-object laptop-preference database used as a worked example
//! throughout the tests, plus the query point frozen for it.

use crate::geometry::{AttributeVector, Dataset, Instance, ObjectId, QueryPoint, UncertainObject};

pub const OBJECT_A: ObjectId = ObjectId(0);
pub const OBJECT_B: ObjectId = ObjectId(1);
pub const OBJECT_C: ObjectId = ObjectId(2);
pub const OBJECT_D: ObjectId = ObjectId(3);

const ROWS: &[(ObjectId, &[(f64, f64, f64)])] = &[
    (
        OBJECT_A,
        &[(7.0, 10.0, 0.3), (9.0, 8.0, 0.3), (10.0, 11.0, 0.4)],
    ),
    (OBJECT_B, &[(8.0, 11.0, 0.5), (11.0, 9.0, 0.5)]),
    (OBJECT_C, &[(11.0, 12.0, 0.4), (11.0, 7.0, 0.6)]),
    (OBJECT_D, &[(5.0, 8.0, 0.2), (2.0, 2.0, 0.8)]),
];

pub fn laptop_dataset() -> Dataset {
    let objects = ROWS
        .iter()
        .map(|(id, rows)| {
            let instances = rows
                .iter()
                .enumerate()
                .map(|(i, &(x, y, p))| {
                    Instance::new(*id, i as u32, AttributeVector::new(vec![x, y]).unwrap(), p)
                        .unwrap()
                })
                .collect();
            UncertainObject::new(*id, instances).unwrap()
        })
        .collect();
    Dataset::new(2, objects).unwrap()
}

pub fn object_name(id: ObjectId) -> &'static str {
    match id.0 {
        0 => "a",
        1 => "b",
        2 => "c",
        3 => "d",
        _ => "?",
    }
}

/// Query point for the laptop dataset.
///
/// Smallest point (lexicographic, step 0.25 over [0, 14]^2) at which a1
/// dominates exactly {c1, d2} and S(a1) = 0.36, S(a3) = 0.48. No point of
/// the plane yields S(a2) = 0.66 for these coordinates, see
/// `oracle::tests::laptop_grid_search`.
pub fn laptop_query() -> QueryPoint {
    QueryPoint::new(vec![7.75, 6.5]).unwrap()
}
