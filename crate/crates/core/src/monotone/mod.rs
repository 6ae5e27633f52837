//! Scalar convex analysis for maximal monotone graphs `β = ∂j` on ℝ.
//!
//! Everything here is a pure function of immutable inputs.

mod conjugate;
mod graph;
mod mollify;
mod resolvent;
mod symmetry;

pub use conjugate::legendre_sup;
pub use graph::{GraphKind, MonotoneGraph, PiecewiseLinear, Superlinearity};
pub use mollify::{MollifiedDrift, Mollifier, RegularizedDrift};
pub use symmetry::{symmetry_certificate, SymmetryCertificate, SymmetryOutcome};

use crate::Result;

/// `(I + λβ)^{-1} s`.
pub fn resolvent(graph: &MonotoneGraph, lambda: f64, s: f64) -> Result<f64> {
    graph.resolvent(lambda, s)
}

/// `β_λ(s) = (s - (I + λβ)^{-1} s) / λ`.
pub fn yosida(graph: &MonotoneGraph, lambda: f64, s: f64) -> Result<f64> {
    graph.yosida(lambda, s)
}

/// `β⁰(r)`, the element of `β(r)` of least absolute value.
pub fn minimal_section(graph: &MonotoneGraph, r: f64) -> Result<f64> {
    graph.minimal_section(r)
}

/// `j(r)` with `j(0) = 0` and `∂j = β`.
pub fn potential(graph: &MonotoneGraph, r: f64) -> Result<f64> {
    graph.potential(r)
}

/// `j*(s) = sup_r (s r - j(r))`; `+∞` outside the effective domain.
pub fn conjugate(graph: &MonotoneGraph, s: f64) -> Result<f64> {
    graph.conjugate(s)
}

/// `β_{λn}(r)` by quadrature of `β_λ` against the scaled mollifier.
pub fn mollified_drift(reg: &RegularizedDrift, graph: &MonotoneGraph, r: f64) -> Result<f64> {
    Ok(Mollifier::new(reg.quadrature_points).eval3(graph, reg, r)?.0)
}

pub fn mollified_drift_deriv1(reg: &RegularizedDrift, graph: &MonotoneGraph, r: f64) -> Result<f64> {
    Ok(Mollifier::new(reg.quadrature_points).eval3(graph, reg, r)?.1)
}

pub fn mollified_drift_deriv2(reg: &RegularizedDrift, graph: &MonotoneGraph, r: f64) -> Result<f64> {
    Ok(Mollifier::new(reg.quadrature_points).eval3(graph, reg, r)?.2)
}
