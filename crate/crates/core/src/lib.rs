//! Desk-scale laboratory for stochastic evolution equations of the form
//!
//! ```text
//! dX + AX dt + β(X) dt ∋ B dW,   X(0) = x,
//! ```
//!
//! posed on a discretized Gelfand triple `V ⊂ H ⊂ V'` over `D = (0, 1)`, where
//! `A` is the Dirichlet Laplacian and `β` a maximal monotone graph.
//!
//! The crate is organised bottom-up:
//!
//! - [`monotone`]: scalar monotone graphs, resolvents, Yosida and mollified
//!   approximations, potentials and convex conjugates.
//! - [`space`]: the discrete triple, the operator `A`, its shifted resolvents
//!   and norms, plus validators for the structural assumptions.
//! - [`noise`]: cylindrical Wiener increments pushed through a diagonal
//!   Hilbert–Schmidt operator.
//! - [`integrator`]: the splitting scheme producing the pair `(X, ξ)` and the
//!   energy identities it satisfies.
//! - [`measure`]: time-averaged invariant measure estimates, moment bounds and
//!   coupling/mixing experiments.
//! - [`tangent`]: first and second variation flows along a frozen path.
//! - [`kolmogorov`]: Monte Carlo resolvents of the regularized Kolmogorov
//!   operator and their residual diagnostics.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod error;
pub mod exec;
pub mod integrator;
pub mod kolmogorov;
pub mod measure;
pub mod monotone;
pub mod noise;
pub mod quadrature;
pub mod rng;
pub mod space;
pub mod stats;
pub mod tangent;

pub use error::{Error, Result};
pub use exec::Executor;
pub use monotone::{GraphKind, MonotoneGraph, RegularizedDrift};
pub use noise::NoiseModel;
pub use space::{FieldState, TripleSpace};
