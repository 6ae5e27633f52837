use serde::{Deserialize, Serialize};

use super::graph::MonotoneGraph;
use crate::error::{Error, Result};

/// Constants of the growth comparison `j(r) ≤ M1·j(-r) + M2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryCertificate {
    pub m1: f64,
    pub r: f64,
    pub m2: f64,
    pub eta: f64,
    /// Largest radius examined by the scan.
    pub scan_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SymmetryOutcome {
    Certified(SymmetryCertificate),
    /// The ratio `max(j(r)/j(-r), j(-r)/j(r))` along the scanned radii
    /// (increasing) kept growing.
    Failure { radii: Vec<f64>, ratios: Vec<f64> },
}

impl SymmetryOutcome {
    pub fn certificate(&self) -> Option<&SymmetryCertificate> {
        match self {
            SymmetryOutcome::Certified(c) => Some(c),
            SymmetryOutcome::Failure { .. } => None,
        }
    }
}

/// Threshold radius below which `j` is simply bounded by `M2`.
const THRESHOLD_RADIUS: f64 = 1.0;

/// Heuristic certificate for the limsup condition on `j(r)/j(-r)`.
///
/// The ratio is evaluated on the dyadic radii `scan_radius / 2^i ≥ 1`. It is
/// declared divergent if it is infinite somewhere or if the last doubling
/// more than doubles it; otherwise `M1` is the largest ratio seen.
pub fn symmetry_certificate(graph: &MonotoneGraph, scan_radius: f64) -> Result<SymmetryOutcome> {
    if !(scan_radius > 0.0 && scan_radius.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scan radius must be positive and finite, got {scan_radius}"
        )));
    }
    let mut radii = Vec::new();
    let mut r = scan_radius;
    while r >= THRESHOLD_RADIUS {
        radii.push(r);
        r *= 0.5;
    }
    if radii.is_empty() {
        radii.push(THRESHOLD_RADIUS);
    }
    radii.reverse();

    let mut ratios = Vec::with_capacity(radii.len());
    for &r in &radii {
        let jp = graph.potential_unchecked(r);
        let jm = graph.potential_unchecked(-r);
        let ratio = if jp == jm {
            1.0
        } else if jp == 0.0 || jm == 0.0 {
            f64::INFINITY
        } else {
            (jp / jm).max(jm / jp)
        };
        ratios.push(ratio);
    }

    let diverging = ratios.iter().any(|q| !q.is_finite())
        || (ratios.len() >= 2 && ratios[ratios.len() - 1] > 2.0 * ratios[ratios.len() - 2]);
    if diverging {
        return Ok(SymmetryOutcome::Failure { radii, ratios });
    }
    let m1 = ratios.iter().copied().fold(1.0, f64::max);
    let m2 = graph
        .potential_unchecked(THRESHOLD_RADIUS)
        .max(graph.potential_unchecked(-THRESHOLD_RADIUS));
    Ok(SymmetryOutcome::Certified(SymmetryCertificate {
        m1,
        r: THRESHOLD_RADIUS,
        m2,
        eta: 1.0 / m1,
        scan_radius,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monotone::GraphKind;

    #[test]
    fn even_potentials_certify_with_unit_constant() {
        for g in [MonotoneGraph::cubic(), MonotoneGraph::sinh()] {
            let out = symmetry_certificate(&g, 40.0).unwrap();
            let c = out.certificate().expect("certified");
            assert_eq!(c.m1, 1.0);
            assert_eq!(c.eta, 1.0);
        }
    }

    #[test]
    fn exponential_potential_fails() {
        let g = MonotoneGraph::new(GraphKind::ExpAsymmetric).unwrap();
        match symmetry_certificate(&g, 40.0).unwrap() {
            SymmetryOutcome::Failure { radii, ratios } => {
                assert_eq!(radii.last(), Some(&40.0));
                let r = 40.0f64;
                let want = (r.exp() - r - 1.0) / ((-r).exp() + r - 1.0);
                assert!((ratios.last().unwrap() / want - 1.0).abs() < 1e-12);
                assert!(ratios.windows(2).all(|w| w[1] > w[0]));
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
