//! Usable-information similarity between learned representations.
//!
//! Two representations of the same inputs are compared by how much task
//! performance survives a map between them drawn from a restricted family
//! (orthogonal ⊂ orthogonal+scale ⊂ invertible ⊂ affine). Alignment under a
//! family gives directed and symmetric *representational* similarity (an R²
//! of the best in-family map); stitching through a frozen task head gives
//! *functional* similarity (an accuracy ratio) and a usable-information gap
//! in nats. Classical baselines — linear CKA, RSA, SVCCA, mean CCA — live in
//! [`metrics`] for side-by-side comparison.
//!
//! [`synthetic`] generates scenario pairs with known ground truth and
//! [`harness`] runs experiment grids over them, emitting deterministic
//! CSV/JSON tables. [`io`] reads and writes activation matrices.
//!
//! Everything is deterministic: fixed seeds fix every output bit, regardless
//! of worker count.

pub mod align;
pub mod data;
pub mod error;
pub mod functional;
pub mod harness;
pub mod io;
pub mod metrics;
mod numeric;
pub mod synthetic;

pub use data::{
    center, total_variance, FamilyKind, LinearMap, PredictiveFamily, RepresentationSet,
    SimilarityReport, TaskHead,
};
pub use error::{Error, Result};

// Downstream crates build matrices with the same nalgebra the library uses.
pub use nalgebra;
