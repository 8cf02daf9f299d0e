//! Analysis decomposable-prior regularization.
//!
//! Solves `min_x ½‖y − Φx‖² + λ‖L*x‖` for decomposable norms, builds dual
//! certificates from irrepresentable-condition programs, and turns them into
//! uniqueness verdicts and explicit stability bounds.

// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod error;
pub mod experiments;
pub mod guarantees;
pub mod linops;
pub mod norms;
pub mod solver;

pub use certificates::{CertificateMode, DualCertificate, SourceVerdict};
pub use error::{Error, Result};
pub use guarantees::{BoundCheckReport, StabilityBound, UniquenessStatus, UniquenessVerdict};
pub use linops::{LinearOperator, Matrix, Subspace, Vector};
pub use norms::{DecomposableNorm, DecompositionModel, Membership, NormSpec};
pub use solver::{Problem, SolveReport, SolverOptions};
