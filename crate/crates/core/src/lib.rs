//! Evaluation toolkit for 6DoF camera re-localization in changing indoor
//! scenes.

// `!(x > 0.0)` is used on purpose so NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod change;
pub mod difficulty;
pub mod error;
pub mod fixture;
pub mod fusion;
pub mod geometry;
pub mod hull;
pub mod image;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod render;
pub mod synthetic;

pub use error::{Error, Result};
pub use geometry::{Intrinsics, Pose};
pub use mesh::SceneModel;
