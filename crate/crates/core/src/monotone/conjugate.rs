use super::graph::{GraphKind, MonotoneGraph};
use crate::error::{ensure_finite, Error, Result};

/// Largest `|s|` accepted by the numerical conjugate.
pub const NUMERIC_CONJUGATE_LIMIT: f64 = 1e6;

const ESCAPE: f64 = 1e15;
const GOLDEN_ITERS: usize = 300;

/// `sup_r (s·r - j(r))` for a convex `j` with `j(0) = 0` minimal at `0`.
///
/// The objective is concave, so the maximizer is bracketed by doubling away
/// from the origin in the direction of `s` and then located by golden-section
/// search. Returns `+∞` when the sup escapes to infinity.
pub fn legendre_sup<F: Fn(f64) -> f64>(j: F, s: f64) -> Result<f64> {
    ensure_finite(s, "conjugate argument")?;
    if s.abs() > NUMERIC_CONJUGATE_LIMIT {
        return Err(Error::ConjugateRange(s.abs()));
    }
    if s == 0.0 {
        return Ok(0.0);
    }
    let phi = |r: f64| {
        let v = s * r - j(r);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let dir = s.signum();
    let (mut a, mut b) = (0.0, 0.0);
    let mut fb = 0.0;
    let mut r = dir;
    loop {
        let fr = phi(r);
        if fr <= fb {
            break;
        }
        if r.abs() > ESCAPE {
            // still increasing: accept a converged plateau, otherwise diverge
            return if fr - fb <= 1e-10 * fr.abs().max(1.0) {
                Ok(fr)
            } else {
                Ok(f64::INFINITY)
            };
        }
        a = b;
        b = r;
        fb = fr;
        r *= 2.0;
    }
    let (mut lo, mut hi) = if a < r { (a, r) } else { (r, a) };
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = phi(x1);
    let mut f2 = phi(x2);
    for _ in 0..GOLDEN_ITERS {
        if hi - lo <= 1e-13 * lo.abs().max(hi.abs()).max(1.0) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = phi(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = phi(x1);
        }
    }
    Ok(f1.max(f2).max(fb).max(0.0))
}

impl MonotoneGraph {
    /// `j*(s) = sup_r (s r - j(r))`, `+∞` outside the effective domain.
    pub fn conjugate(&self, s: f64) -> Result<f64> {
        ensure_finite(s, "conjugate argument")?;
        let (inf, sup) = self.range();
        if s > sup || s < inf {
            return Ok(f64::INFINITY);
        }
        match self.kind() {
            GraphKind::Cubic => Ok(0.75 * s.abs().powf(4.0 / 3.0)),
            GraphKind::CubicPlusLinear => {
                let r = cubic_plus_linear_inverse(s);
                Ok(s * r - 0.25 * r.powi(4) - 0.5 * r * r)
            }
            GraphKind::Sinh => Ok(s * s.asinh() - s * s / ((1.0 + s * s).sqrt() + 1.0)),
            GraphKind::ExpAsymmetric => {
                if s == -1.0 {
                    Ok(1.0)
                } else {
                    Ok((1.0 + s) * s.ln_1p() - s)
                }
            }
            GraphKind::PolynomialOdd(c) if c.iter().all(|&a| a == 0.0) => Ok(0.0),
            GraphKind::PolynomialOdd(c) if c.len() == 1 => Ok(0.5 * s * s / c[0]),
            _ => legendre_sup(|r| self.potential_unchecked(r), s),
        }
    }
}

/// Real root of `r³ + r = s` (Cardano in hyperbolic form, Newton polished).
fn cubic_plus_linear_inverse(s: f64) -> f64 {
    let k = 2.0 / 3f64.sqrt();
    let mut r = k * ((1.5 * 3f64.sqrt() * s).asinh() / 3.0).sinh();
    for _ in 0..2 {
        r -= (r * r * r + r - s) / (3.0 * r * r + 1.0);
    }
    r
}
