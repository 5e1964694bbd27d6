pub mod bounds;
pub mod cluster;
pub mod costmodel;
pub mod data;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod index;
pub mod oracle;
pub mod verify;

pub use error::{PtdError, Result};
pub use geometry::{
    AttributeVector, Dataset, DominanceClass, Instance, ObjectId, QueryPoint, Rect, UncertainObject,
};
