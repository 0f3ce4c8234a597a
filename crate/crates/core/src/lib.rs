//! Hierarchical cross-modal feature alignment on hyperbolic manifolds of
//! heterogeneous curvature.
//!
//! - [`lorentz`]: Lorentz-model primitives with derivatives.
//! - [`manifold`]: the curvature-level manifold distance, the intermediate
//!   curvature solver and its implicit gradients.
//! - [`entailment`]: entailment-cone hinge losses.
//! - [`features`]: cross-attention feature-tree extraction and synthetic data.
//! - [`taxonomy`]: label trees, treecuts and the LA / HCA / MTA metrics.
//! - [`trainer`]: the desk-scale training loop and experiment runner.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod entailment;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod lorentz;
pub mod manifold;
pub mod taxonomy;
pub mod trainer;

pub use error::{Error, Result};
pub use lorentz::{Curvature, LorentzPoint, TangentVector};
pub use manifold::{ConvexityCertificate, IntermediateSolution, RadiusParameter, RadiusSource};
pub use taxonomy::{PredictionTable, Taxonomy, Treecut};
pub use trainer::{StepTrace, TrainConfig};
