//! Numerical laboratory for locally conformally symplectic geometry on
//! cotangent bundles of tori.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::suspicious_arithmetic_impl, clippy::too_many_arguments, clippy::type_complexity)]

pub mod chart;
pub mod chords;
pub mod error;
pub mod extension;
pub mod forms;
pub mod jet;
pub mod lagrangian;
pub mod lcs;
pub mod moser;
pub mod sampling;
pub mod tolerances;

pub use chart::{make_manifold, ModelManifold, Point, ScalarField, SmoothMap, VectorField};
pub use error::{LcsError, Result};
pub use forms::{check_nondegenerate, interior_product, lichnerowicz_d, pullback, FormExpression, FormValue};
pub use jet::Jet2;
pub use lcs::{CotangentLcsStructure, StructureRef};
pub use lagrangian::{ExactnessCertificate, ParametricEmbedding};
