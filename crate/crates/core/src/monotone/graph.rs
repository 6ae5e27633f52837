use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Built-in families of maximal monotone graphs with full domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GraphKind {
    /// `β(r) = r³`
    Cubic,
    /// `β(r) = r³ + r`
    CubicPlusLinear,
    /// `β(r) = sinh r`
    Sinh,
    /// `β(r) = Σ aᵢ r^{2i+1}` with `aᵢ ≥ 0`; an empty or all-zero list is `β ≡ 0`.
    PolynomialOdd(Vec<f64>),
    /// `β(r) = eʳ - 1`, potential `eʳ - r - 1`. Violates the growth symmetry
    /// condition and is kept as a negative control.
    ExpAsymmetric,
    /// Nondecreasing piecewise linear graph, possibly with vertical segments.
    PiecewiseLinear(PiecewiseLinear),
}

/// Piecewise linear monotone graph.
///
/// Between breakpoints the graph is affine with the given nonnegative slope;
/// at breakpoint `i` it may jump up by `jumps[i]`, the jump being filled by a
/// vertical segment. The additive constant is fixed so that `0 ∈ β(0)`: if `0`
/// is a breakpoint the segment there is centred on `0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    jumps: Vec<f64>,
    /// `β⁻(b_i)`, the lower end of the section at each breakpoint.
    lower: Vec<f64>,
    /// Antiderivative of the graph at each breakpoint, normalized to vanish at 0.
    primitive: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>, jumps: Vec<f64>) -> Result<Self> {
        let k = breakpoints.len();
        if k == 0 {
            return Err(Error::InvalidParameter(
                "piecewise linear graph needs at least one breakpoint".into(),
            ));
        }
        if slopes.len() != k + 1 || jumps.len() != k {
            return Err(Error::InvalidParameter(format!(
                "piecewise linear graph with {k} breakpoints needs {} slopes and {k} jumps",
                k + 1
            )));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("breakpoints must be strictly increasing".into()));
        }
        if slopes.iter().chain(&jumps).chain(&breakpoints).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("piecewise linear graph"));
        }
        if slopes.iter().chain(&jumps).any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter("slopes and jumps must be nonnegative".into()));
        }
        let mut lower = vec![0.0; k];
        for i in 1..k {
            lower[i] = lower[i - 1] + jumps[i - 1] + slopes[i] * (breakpoints[i] - breakpoints[i - 1]);
        }
        let mut graph = Self {
            breakpoints,
            slopes,
            jumps,
            lower,
            primitive: vec![0.0; k],
        };
        let (lo, hi) = graph.section(0.0);
        let shift = -0.5 * (lo + hi);
        for v in &mut graph.lower {
            *v += shift;
        }
        // primitive F with F(b_0) = 0, then shifted so F(0) = 0
        for i in 1..k {
            let start = graph.lower[i - 1] + graph.jumps[i - 1];
            let len = graph.breakpoints[i] - graph.breakpoints[i - 1];
            graph.primitive[i] = graph.primitive[i - 1] + start * len + 0.5 * graph.slopes[i] * len * len;
        }
        let offset = graph.antiderivative(0.0);
        for v in &mut graph.primitive {
            *v -= offset;
        }
        Ok(graph)
    }

    /// The signum graph: `β(r) = sign r`, `β(0) = [-1, 1]`, `j(r) = |r|`.
    pub fn signum() -> Self {
        Self::new(vec![0.0], vec![0.0, 0.0], vec![2.0]).expect("valid signum graph")
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn has_jumps(&self) -> bool {
        self.jumps.iter().any(|&j| j > 0.0)
    }

    /// Index of the open affine piece containing `r`, or the breakpoint hit.
    fn locate(&self, r: f64) -> Location {
        match self.breakpoints.binary_search_by(|b| b.partial_cmp(&r).unwrap()) {
            Ok(i) => Location::Breakpoint(i),
            Err(i) => Location::Piece(i),
        }
    }

    pub(crate) fn section(&self, r: f64) -> (f64, f64) {
        let b = &self.breakpoints;
        match self.locate(r) {
            Location::Breakpoint(i) => (self.lower[i], self.lower[i] + self.jumps[i]),
            Location::Piece(0) => {
                let v = self.lower[0] + self.slopes[0] * (r - b[0]);
                (v, v)
            }
            Location::Piece(i) => {
                let v = self.lower[i - 1] + self.jumps[i - 1] + self.slopes[i] * (r - b[i - 1]);
                (v, v)
            }
        }
    }

    /// Slope of the affine piece left of breakpoint `i` (`i = K` is the last piece).
    pub(crate) fn slope_of_piece(&self, i: usize) -> f64 {
        self.slopes[i]
    }

    fn slope_at(&self, r: f64) -> f64 {
        match self.locate(r) {
            Location::Breakpoint(i) => self.slopes[i + 1],
            Location::Piece(i) => self.slopes[i],
        }
    }

    fn antiderivative(&self, r: f64) -> f64 {
        let b = &self.breakpoints;
        let i = match self.locate(r) {
            Location::Breakpoint(i) => return self.primitive[i],
            Location::Piece(i) => i,
        };
        if i == 0 {
            let d = r - b[0];
            // integrate backwards from b_0 along the first piece
            self.primitive[0] + self.lower[0] * d + 0.5 * self.slopes[0] * d * d
        } else {
            let start = self.lower[i - 1] + self.jumps[i - 1];
            let d = r - b[i - 1];
            self.primitive[i - 1] + start * d + 0.5 * self.slopes[i] * d * d
        }
    }

    /// Sup of the range of the graph as `r → +∞` (may be `+∞`).
    fn range_sup(&self) -> f64 {
        if *self.slopes.last().unwrap() > 0.0 {
            f64::INFINITY
        } else {
            let k = self.breakpoints.len() - 1;
            self.lower[k] + self.jumps[k]
        }
    }

    fn range_inf(&self) -> f64 {
        if self.slopes[0] > 0.0 {
            f64::NEG_INFINITY
        } else {
            self.lower[0]
        }
    }
}

enum Location {
    Breakpoint(usize),
    Piece(usize),
}

/// Constants `(c, δ)` of the superlinearity condition
/// `(y₁ - y₂)(x₁ - x₂) ≥ c |x₁ - x₂|^{2+δ}` for all `yᵢ ∈ β(xᵢ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Superlinearity {
    pub c: f64,
    pub delta: f64,
}

/// A scalar maximal monotone graph `β = ∂j` with `0 ∈ β(0)`, `j(0) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneGraph {
    kind: GraphKind,
}

impl MonotoneGraph {
    pub fn new(kind: GraphKind) -> Result<Self> {
        match &kind {
            GraphKind::PolynomialOdd(coeffs) => {
                if coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::NonFinite("polynomial coefficients"));
                }
                if coeffs.iter().any(|&c| c < 0.0) {
                    return Err(Error::InvalidParameter(
                        "odd polynomial graph needs nonnegative coefficients".into(),
                    ));
                }
            }
            GraphKind::PiecewiseLinear(_) => {}
            _ => {}
        }
        Ok(Self { kind })
    }

    pub fn cubic() -> Self {
        Self { kind: GraphKind::Cubic }
    }

    pub fn sinh() -> Self {
        Self { kind: GraphKind::Sinh }
    }

    /// `β ≡ 0`.
    pub fn zero() -> Self {
        Self {
            kind: GraphKind::PolynomialOdd(Vec::new()),
        }
    }

    /// `β(r) = slope · r`.
    pub fn linear(slope: f64) -> Result<Self> {
        Self::new(GraphKind::PolynomialOdd(vec![slope]))
    }

    pub fn kind(&self) -> &GraphKind {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            GraphKind::Cubic => "cubic",
            GraphKind::CubicPlusLinear => "cubic_plus_linear",
            GraphKind::Sinh => "sinh",
            GraphKind::PolynomialOdd(_) => "polynomial_odd",
            GraphKind::ExpAsymmetric => "exp_asymmetric",
            GraphKind::PiecewiseLinear(_) => "piecewise_linear",
        }
    }

    /// Whether the graph is single valued everywhere.
    pub fn is_function(&self) -> bool {
        match &self.kind {
            GraphKind::PiecewiseLinear(p) => !p.has_jumps(),
            _ => true,
        }
    }

    /// True when `β ≡ 0`.
    pub fn is_zero(&self) -> bool {
        match &self.kind {
            GraphKind::PolynomialOdd(c) => c.iter().all(|&a| a == 0.0),
            _ => false,
        }
    }

    /// Closed-form `j*` is available for every built-in except the
    /// user-parameterized polynomial and piecewise linear families.
    pub fn has_closed_form_conjugate(&self) -> bool {
        !matches!(
            self.kind,
            GraphKind::PolynomialOdd(_) | GraphKind::PiecewiseLinear(_)
        )
    }

    /// Lower and upper ends of the section `β(r)`.
    #[inline]
    pub fn section(&self, r: f64) -> (f64, f64) {
        match &self.kind {
            GraphKind::PiecewiseLinear(p) => p.section(r),
            _ => {
                let v = self.value(r);
                (v, v)
            }
        }
    }

    /// Value of a single-valued graph; for graphs with vertical segments this
    /// is the minimal section.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        match &self.kind {
            GraphKind::Cubic => r * r * r,
            GraphKind::CubicPlusLinear => r * r * r + r,
            GraphKind::Sinh => r.sinh(),
            GraphKind::PolynomialOdd(c) => odd_poly(c, r),
            GraphKind::ExpAsymmetric => r.exp_m1(),
            GraphKind::PiecewiseLinear(p) => {
                let (lo, hi) = p.section(r);
                minimal_norm(lo, hi)
            }
        }
    }

    /// Derivative of the graph on its smooth pieces (right slope at kinks).
    #[inline]
    pub fn derivative(&self, r: f64) -> f64 {
        match &self.kind {
            GraphKind::Cubic => 3.0 * r * r,
            GraphKind::CubicPlusLinear => 3.0 * r * r + 1.0,
            GraphKind::Sinh => r.cosh(),
            GraphKind::PolynomialOdd(c) => {
                let r2 = r * r;
                let mut acc = 0.0;
                let mut pow = 1.0;
                for (i, a) in c.iter().enumerate() {
                    acc += a * (2 * i + 1) as f64 * pow;
                    pow *= r2;
                }
                acc
            }
            GraphKind::ExpAsymmetric => r.exp(),
            GraphKind::PiecewiseLinear(p) => p.slope_at(r),
        }
    }

    pub fn minimal_section(&self, r: f64) -> Result<f64> {
        ensure_finite(r, "minimal_section")?;
        let (lo, hi) = self.section(r);
        Ok(minimal_norm(lo, hi))
    }

    pub fn potential(&self, r: f64) -> Result<f64> {
        ensure_finite(r, "potential")?;
        Ok(self.potential_unchecked(r))
    }

    #[inline]
    pub(crate) fn potential_unchecked(&self, r: f64) -> f64 {
        match &self.kind {
            GraphKind::Cubic => 0.25 * r.powi(4),
            GraphKind::CubicPlusLinear => 0.25 * r.powi(4) + 0.5 * r * r,
            GraphKind::Sinh => {
                let s = (0.5 * r).sinh();
                2.0 * s * s
            }
            GraphKind::PolynomialOdd(c) => {
                let r2 = r * r;
                let mut pow = r2;
                let mut acc = 0.0;
                for (i, a) in c.iter().enumerate() {
                    acc += a * pow / (2 * i + 2) as f64;
                    pow *= r2;
                }
                acc
            }
            GraphKind::ExpAsymmetric => r.exp_m1() - r,
            GraphKind::PiecewiseLinear(p) => p.antiderivative(r),
        }
    }

    /// Bounds of the range of `β`, used to detect where `j*` is infinite.
    pub(crate) fn range(&self) -> (f64, f64) {
        match &self.kind {
            GraphKind::ExpAsymmetric => (-1.0, f64::INFINITY),
            GraphKind::PolynomialOdd(c) if c.iter().all(|&a| a == 0.0) => (0.0, 0.0),
            GraphKind::PiecewiseLinear(p) => (p.range_inf(), p.range_sup()),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Superlinearity constants when the graph is known to satisfy the
    /// condition. For odd powers `(aᵖ - bᵖ)(a - b) ≥ 2^{1-p}|a - b|^{p+1}`.
    pub fn superlinearity(&self) -> Option<Superlinearity> {
        match &self.kind {
            GraphKind::Cubic | GraphKind::CubicPlusLinear => Some(Superlinearity { c: 0.25, delta: 2.0 }),
            // sinh a - sinh b = 2 cosh((a+b)/2) sinh((a-b)/2) ≥ d + d³/24
            GraphKind::Sinh => Some(Superlinearity { c: 1.0 / 24.0, delta: 2.0 }),
            GraphKind::PolynomialOdd(c) => c.iter().enumerate().skip(1).find(|(_, &a)| a > 0.0).map(|(i, &a)| {
                let p = (2 * i + 1) as f64;
                Superlinearity {
                    c: a * 2f64.powf(1.0 - p),
                    delta: p - 1.0,
                }
            }),
            GraphKind::ExpAsymmetric | GraphKind::PiecewiseLinear(_) => None,
        }
    }
}

#[inline]
fn odd_poly(c: &[f64], r: f64) -> f64 {
    let r2 = r * r;
    let mut acc = 0.0;
    for a in c.iter().rev() {
        acc = acc * r2 + a;
    }
    acc * r
}

#[inline]
fn minimal_norm(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        lo
    } else if hi < 0.0 {
        hi
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signum_sections() {
        let g = MonotoneGraph::new(GraphKind::PiecewiseLinear(PiecewiseLinear::signum())).unwrap();
        assert_eq!(g.section(0.0), (-1.0, 1.0));
        assert_eq!(g.section(2.0), (1.0, 1.0));
        assert_eq!(g.section(-0.5), (-1.0, -1.0));
        assert_eq!(g.minimal_section(0.0).unwrap(), 0.0);
        assert!(!g.is_function());
        assert_eq!(g.potential(-3.0).unwrap(), 3.0);
        assert_eq!(g.potential(2.5).unwrap(), 2.5);
    }

    #[test]
    fn piecewise_linear_is_normalized_through_origin() {
        // dead zone on [-1, 1], slopes 1 and 2 outside
        let p = PiecewiseLinear::new(vec![-1.0, 1.0], vec![1.0, 0.0, 2.0], vec![0.0, 0.0]).unwrap();
        let g = MonotoneGraph::new(GraphKind::PiecewiseLinear(p)).unwrap();
        assert_eq!(g.value(0.0), 0.0);
        assert_eq!(g.value(3.0), 4.0);
        assert_eq!(g.value(-2.0), -1.0);
        assert_eq!(g.potential(3.0).unwrap(), 4.0);
        assert_eq!(g.potential(-2.0).unwrap(), 0.5);
        assert_eq!(g.potential(0.5).unwrap(), 0.0);
    }

    #[test]
    fn rejects_malformed_piecewise_graphs() {
        assert!(PiecewiseLinear::new(vec![], vec![1.0], vec![]).is_err());
        assert!(PiecewiseLinear::new(vec![1.0, 0.0], vec![1.0; 3], vec![0.0; 2]).is_err());
        assert!(PiecewiseLinear::new(vec![0.0], vec![-1.0, 1.0], vec![0.0]).is_err());
        assert!(MonotoneGraph::new(GraphKind::PolynomialOdd(vec![1.0, -1.0])).is_err());
    }

    #[test]
    fn potentials_vanish_at_origin_and_match_closed_forms() {
        for g in [
            MonotoneGraph::cubic(),
            MonotoneGraph::sinh(),
            MonotoneGraph::new(GraphKind::CubicPlusLinear).unwrap(),
            MonotoneGraph::new(GraphKind::ExpAsymmetric).unwrap(),
            MonotoneGraph::new(GraphKind::PolynomialOdd(vec![1.0, 0.0, 2.0])).unwrap(),
        ] {
            assert_eq!(g.potential(0.0).unwrap(), 0.0, "{}", g.name());
        }
        assert_eq!(MonotoneGraph::cubic().potential(2.0).unwrap(), 4.0);
        let p = MonotoneGraph::new(GraphKind::PolynomialOdd(vec![1.0, 0.0, 2.0])).unwrap();
        // r²/2 + 2 r⁶/6 at r = 1
        assert!((p.potential(1.0).unwrap() - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(p.value(1.0), 3.0);
    }

    #[test]
    fn minimal_section_examples() {
        assert_eq!(MonotoneGraph::cubic().minimal_section(2.0).unwrap(), 8.0);
        assert!(MonotoneGraph::cubic().minimal_section(f64::NAN).is_err());
    }

    #[test]
    fn superlinearity_of_built_ins() {
        let s = MonotoneGraph::cubic().superlinearity().unwrap();
        assert_eq!((s.c, s.delta), (0.25, 2.0));
        assert!(MonotoneGraph::new(GraphKind::ExpAsymmetric).unwrap().superlinearity().is_none());
        let quintic = MonotoneGraph::new(GraphKind::PolynomialOdd(vec![0.0, 0.0, 1.0])).unwrap();
        let s = quintic.superlinearity().unwrap();
        assert_eq!((s.c, s.delta), (1.0 / 16.0, 4.0));
    }
}
