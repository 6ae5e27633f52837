use super::graph::{GraphKind, MonotoneGraph, PiecewiseLinear};
use crate::error::{ensure_finite, Error, Result};

const MAX_ITER: usize = 200;
const ABS_TOL: f64 = 1e-12;

impl MonotoneGraph {
    /// `(I + λβ)^{-1} s`: the unique `x` with `s - x ∈ λβ(x)`.
    pub fn resolvent(&self, lambda: f64, s: f64) -> Result<f64> {
        ensure_finite(s, "resolvent argument")?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("resolvent needs lambda > 0, got {lambda}")));
        }
        self.resolvent_unchecked(lambda, s)
    }

    /// Resolvent without argument validation; used in the inner loops.
    #[inline]
    pub(crate) fn resolvent_unchecked(&self, lambda: f64, s: f64) -> Result<f64> {
        if s == 0.0 {
            return Ok(0.0);
        }
        match self.kind() {
            GraphKind::PiecewiseLinear(p) => Ok(piecewise_resolvent(p, lambda, s)),
            GraphKind::PolynomialOdd(c) if c.len() <= 1 => {
                Ok(s / (1.0 + lambda * c.first().copied().unwrap_or(0.0)))
            }
            _ => self.newton_resolvent(lambda, s),
        }
    }

    /// `β_λ(s) = (s - (I + λβ)^{-1} s) / λ`.
    pub fn yosida(&self, lambda: f64, s: f64) -> Result<f64> {
        let x = self.resolvent(lambda, s)?;
        Ok((s - x) / lambda)
    }

    /// Yosida approximation together with its derivative
    /// `β_λ'(s) = β'(x) / (1 + λβ'(x))` at `x = (I + λβ)^{-1} s`.
    pub(crate) fn yosida_with_slope(&self, lambda: f64, s: f64) -> Result<(f64, f64)> {
        let x = self.resolvent_unchecked(lambda, s)?;
        let d = self.derivative(x);
        let slope = if d.is_finite() { d / (1.0 + lambda * d) } else { 1.0 / lambda };
        Ok(((s - x) / lambda, slope))
    }

    fn newton_resolvent(&self, lambda: f64, s: f64) -> Result<f64> {
        let (mut lo, mut hi) = if s > 0.0 { (0.0, s) } else { (s, 0.0) };
        let tol = ABS_TOL.max(4.0 * f64::EPSILON * s.abs());
        let f = |x: f64| x + lambda * self.value(x) - s;

        // one explicit step as the starting point, falling back to the midpoint
        let mut x = s - lambda * self.value(s);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let mut dx_old = hi - lo;
        let mut dx = dx_old;
        for _ in 0..MAX_ITER {
            let fx = f(x);
            if fx.is_nan() {
                return Err(Error::NonFinite("resolvent residual"));
            }
            if fx.abs() <= tol {
                // F' ≥ 1 so the residual bounds the error in x
                return Ok(x);
            }
            if fx < 0.0 {
                lo = x;
            } else {
                // +∞ from overflow counts as positive
                hi = x;
            }
            if hi - lo <= tol {
                return Ok(0.5 * (lo + hi));
            }
            let slope = 1.0 + lambda * self.derivative(x);
            let next = x - fx / slope;
            // bisect when Newton leaves the bracket or stalls (e.g. far out on
            // an exponential branch, where it creeps by O(1) per step)
            let stalled = (2.0 * fx).abs() > (dx_old * slope).abs();
            dx_old = dx;
            if next > lo && next < hi && next.is_finite() && !stalled {
                dx = (next - x).abs();
                x = next;
            } else {
                dx = 0.5 * (hi - lo);
                x = lo + dx;
            }
        }
        Err(Error::ResolventDiverged {
            s,
            lambda,
            lo,
            hi,
            iterations: MAX_ITER,
        })
    }
}

/// `x + λβ(x)` is piecewise linear and strictly increasing, so the resolvent
/// is found exactly by locating `s` among the images of the breakpoints.
fn piecewise_resolvent(p: &PiecewiseLinear, lambda: f64, s: f64) -> f64 {
    let b = p.breakpoints();
    let mut prev: Option<(f64, f64)> = None; // (breakpoint, image of its upper end)
    for (i, &bi) in b.iter().enumerate() {
        let (lo, hi) = p.section(bi);
        let g_lo = bi + lambda * lo;
        let g_hi = bi + lambda * hi;
        if s < g_lo {
            // s lies on the affine piece left of b_i
            let slope = 1.0 + lambda * p.slope_of_piece(i);
            return match prev {
                Some((bp, gp)) => bp + (s - gp) / slope,
                None => bi + (s - g_lo) / slope,
            };
        }
        if s <= g_hi {
            return bi;
        }
        prev = Some((bi, g_hi));
    }
    let (bp, gp) = prev.expect("at least one breakpoint");
    bp + (s - gp) / (1.0 + lambda * p.slope_of_piece(b.len()))
}
