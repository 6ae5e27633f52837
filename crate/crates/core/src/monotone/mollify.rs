use serde::{Deserialize, Serialize};

use super::graph::MonotoneGraph;
use crate::error::{ensure_finite, Error, Result};
use crate::quadrature::composite_gauss_legendre;

/// Parameters of the smooth drift `β_{λn} = β_λ * ρ_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizedDrift {
    pub lambda: f64,
    pub n: u32,
    /// Gauss–Legendre points per panel.
    pub quadrature_points: usize,
}

impl RegularizedDrift {
    pub const DEFAULT_QUADRATURE_POINTS: usize = 32;

    pub fn new(lambda: f64, n: u32) -> Result<Self> {
        let reg = Self {
            lambda,
            n,
            quadrature_points: Self::DEFAULT_QUADRATURE_POINTS,
        };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("mollifier index n must be positive".into()));
        }
        if self.quadrature_points < 2 {
            return Err(Error::InvalidParameter("need at least 2 quadrature points".into()));
        }
        Ok(())
    }
}

/// Panels of the composite rule on `[-1, 1]`.
const PANELS: usize = 8;

/// Quadrature of a function against the bump `ρ(v) = c·exp(-1/(1-v²))` and
/// its first two derivatives.
#[derive(Clone, Debug)]
pub struct Mollifier {
    nodes: Vec<f64>,
    w0: Vec<f64>,
    w1: Vec<f64>,
    w2: Vec<f64>,
}

impl Mollifier {
    pub fn new(points: usize) -> Self {
        let (nodes, weights) = composite_gauss_legendre(points, PANELS, -1.0, 1.0);
        let mut w0 = Vec::with_capacity(nodes.len());
        let mut w1 = Vec::with_capacity(nodes.len());
        let mut w2 = Vec::with_capacity(nodes.len());
        for (&v, &w) in nodes.iter().zip(&weights) {
            let (r0, r1, r2) = bump3(v);
            w0.push(w * r0);
            w1.push(w * r1);
            w2.push(w * r2);
        }
        let z: f64 = w0.iter().sum();
        for w in w0.iter_mut().chain(w1.iter_mut()).chain(w2.iter_mut()) {
            *w /= z;
        }
        Self { nodes, w0, w1, w2 }
    }

    /// Normalized bump density at `v`.
    pub fn density(&self, v: f64) -> f64 {
        bump3(v).0 / self.normalization()
    }

    /// `∫ exp(-1/(1-v²)) dv` as computed by the rule.
    pub fn normalization(&self) -> f64 {
        let (nodes, weights) = composite_gauss_legendre(self.nodes.len() / PANELS, PANELS, -1.0, 1.0);
        nodes.iter().zip(&weights).map(|(&v, &w)| w * bump3(v).0).sum()
    }

    /// `(β_{λn}(r), β_{λn}'(r), β_{λn}''(r))` by direct quadrature.
    pub fn eval3(&self, graph: &MonotoneGraph, reg: &RegularizedDrift, r: f64) -> Result<(f64, f64, f64)> {
        ensure_finite(r, "mollified drift argument")?;
        let n = reg.n as f64;
        let inv_n = 1.0 / n;
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for i in 0..self.nodes.len() {
            let y = graph.yosida_unchecked(reg.lambda, r - self.nodes[i] * inv_n)?;
            s0 += self.w0[i] * y;
            s1 += self.w1[i] * y;
            s2 += self.w2[i] * y;
        }
        Ok((s0, n * s1, n * n * s2))
    }
}

/// Unnormalized bump and its first two derivatives.
fn bump3(v: f64) -> (f64, f64, f64) {
    let q = 1.0 - v * v;
    if q <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let rho = (-1.0 / q).exp();
    let q2 = q * q;
    let d1 = rho * (-2.0 * v / q2);
    let v2 = v * v;
    let d2 = rho * (4.0 * v2 / (q2 * q2) - 2.0 / q2 - 8.0 * v2 / (q2 * q));
    (rho, d1, d2)
}

/// Half-width of the tabulated range.
const TABLE_HALF_WIDTH: f64 = 10.0;

/// Tabulated `β_{λn}` with C² quintic Hermite interpolation.
///
/// Values and the first two derivatives are computed by quadrature at the
/// table nodes; outside `[-10, 10]` the quadrature is evaluated directly.
/// The interpolant is what the integrator and the tangent solvers see, so
/// the derivatives it reports are exact derivatives of the drift in use.
#[derive(Clone, Debug)]
pub struct MollifiedDrift {
    graph: MonotoneGraph,
    reg: RegularizedDrift,
    mollifier: Mollifier,
    inv_step: f64,
    coeffs: Vec<[f64; 6]>,
    zero: bool,
}

impl MollifiedDrift {
    pub fn new(graph: &MonotoneGraph, reg: RegularizedDrift) -> Result<Self> {
        reg.validate()?;
        let mollifier = Mollifier::new(reg.quadrature_points);
        let step = 1.0 / (64.0 * f64::from(reg.n.max(2)));
        let intervals = (2.0 * TABLE_HALF_WIDTH / step).round() as usize;
        let mut nodes = Vec::with_capacity(intervals + 1);
        for i in 0..=intervals {
            let r = -TABLE_HALF_WIDTH + i as f64 * step;
            nodes.push(mollifier.eval3(graph, &reg, r)?);
        }
        let coeffs = nodes
            .windows(2)
            .map(|w| {
                let (f0, d0, s0) = w[0];
                let (f1, d1, s1) = w[1];
                hermite5(f0, step * d0, step * step * s0, f1, step * d1, step * step * s1)
            })
            .collect();
        Ok(Self {
            graph: graph.clone(),
            reg,
            mollifier,
            inv_step: 1.0 / step,
            coeffs,
            zero: graph.is_zero(),
        })
    }

    pub fn graph(&self) -> &MonotoneGraph {
        &self.graph
    }

    pub fn reg(&self) -> &RegularizedDrift {
        &self.reg
    }

    pub fn lambda(&self) -> f64 {
        self.reg.lambda
    }

    pub fn n(&self) -> u32 {
        self.reg.n
    }

    /// Direct quadrature, bypassing the table.
    pub fn direct3(&self, r: f64) -> Result<(f64, f64, f64)> {
        self.mollifier.eval3(&self.graph, &self.reg, r)
    }

    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        self.eval3(r).0
    }

    #[inline]
    pub fn derivative(&self, r: f64) -> f64 {
        self.eval3(r).1
    }

    /// Value, first and second derivative of the drift at `r`.
    #[inline]
    pub fn eval3(&self, r: f64) -> (f64, f64, f64) {
        if self.zero {
            return (0.0, 0.0, 0.0);
        }
        let t = (r + TABLE_HALF_WIDTH) * self.inv_step;
        if !(t >= 0.0 && t < self.coeffs.len() as f64) {
            // far field: direct quadrature; a non-finite r yields NaN downstream
            return self.direct3(r).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        }
        let i = t as usize;
        let u = t - i as f64;
        let a = &self.coeffs[i];
        let p = a[0] + u * (a[1] + u * (a[2] + u * (a[3] + u * (a[4] + u * a[5]))));
        let dp = a[1] + u * (2.0 * a[2] + u * (3.0 * a[3] + u * (4.0 * a[4] + u * 5.0 * a[5])));
        let ddp = 2.0 * a[2] + u * (6.0 * a[3] + u * (12.0 * a[4] + u * 20.0 * a[5]));
        (p, dp * self.inv_step, ddp * self.inv_step * self.inv_step)
    }

    /// `(I + μ β_{λn})^{-1} y` by safeguarded Newton.
    ///
    /// For monotone `f`, `g(x) = x + μ f(x) - y` changes sign on the interval
    /// between `y` and `y - μ f(y)`.
    pub fn resolvent(&self, mu: f64, y: f64) -> Result<f64> {
        const MAX_ITER: usize = 100;
        if self.zero {
            return Ok(y);
        }
        let fy = self.value(y);
        let z = y - mu * fy;
        let (mut lo, mut hi) = if z <= y { (z, y) } else { (y, z) };
        let tol = 1e-13f64.max(4.0 * f64::EPSILON * y.abs());
        let mut x = z;
        // last few residuals, reported on failure
        let mut history = [0.0; 8];
        for it in 0..MAX_ITER {
            let (f, df, _) = self.eval3(x);
            let g = x + mu * f - y;
            if !g.is_finite() {
                return Err(Error::NonFinite("mollified resolvent"));
            }
            if g.abs() <= tol {
                // one more step brings the root to roundoff, which keeps the
                // discrete flow smooth enough for finite differences
                return Ok(x - g / (1.0 + mu * df));
            }
            if g < 0.0 {
                lo = lo.max(x);
            } else {
                hi = hi.min(x);
            }
            let next = x - g / (1.0 + mu * df);
            x = if next >= lo && next <= hi && next.is_finite() {
                next
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= tol {
                return Ok(x);
            }
            history[it % 8] = g;
        }
        Err(Error::NewtonDiverged(history.to_vec()))
    }

    /// [`resolvent`](Self::resolvent) over a slice, iterating the nodes in
    /// lockstep so independent Newton chains overlap. Results are identical
    /// to the scalar version.
    pub fn resolvent_batch(&self, mu: f64, ys: &[f64], out: &mut [f64]) -> Result<()> {
        const LANES: usize = 16;
        const MAX_ITER: usize = 100;
        debug_assert_eq!(ys.len(), out.len());
        if self.zero {
            out.copy_from_slice(ys);
            return Ok(());
        }
        for (yc, oc) in ys.chunks(LANES).zip(out.chunks_mut(LANES)) {
            let k = yc.len();
            let mut x = [0.0; LANES];
            let mut lo = [0.0; LANES];
            let mut hi = [0.0; LANES];
            let mut tol = [0.0; LANES];
            let mut active = [false; LANES];
            for j in 0..k {
                let y = yc[j];
                let z = y - mu * self.value(y);
                (lo[j], hi[j]) = if z <= y { (z, y) } else { (y, z) };
                tol[j] = 1e-13f64.max(4.0 * f64::EPSILON * y.abs());
                x[j] = z;
                active[j] = true;
            }
            let mut left = k;
            for _ in 0..MAX_ITER {
                for j in 0..k {
                    if !active[j] {
                        continue;
                    }
                    let (f, df, _) = self.eval3(x[j]);
                    let g = x[j] + mu * f - yc[j];
                    if !g.is_finite() {
                        return Err(Error::NonFinite("mollified resolvent"));
                    }
                    if g.abs() <= tol[j] {
                        oc[j] = x[j] - g / (1.0 + mu * df);
                        active[j] = false;
                        left -= 1;
                        continue;
                    }
                    if g < 0.0 {
                        lo[j] = lo[j].max(x[j]);
                    } else {
                        hi[j] = hi[j].min(x[j]);
                    }
                    let next = x[j] - g / (1.0 + mu * df);
                    x[j] = if next >= lo[j] && next <= hi[j] && next.is_finite() {
                        next
                    } else {
                        0.5 * (lo[j] + hi[j])
                    };
                    if hi[j] - lo[j] <= tol[j] {
                        oc[j] = x[j];
                        active[j] = false;
                        left -= 1;
                    }
                }
                if left == 0 {
                    break;
                }
            }
            if left > 0 {
                // rerun a stuck node for its residual history
                let j = (0..k).find(|&j| active[j]).expect("active lane");
                self.resolvent(mu, yc[j])?;
                return Err(Error::NewtonDiverged(Vec::new()));
            }
        }
        Ok(())
    }
}

#[inline]
fn hermite5(f0: f64, d0: f64, s0: f64, f1: f64, d1: f64, s1: f64) -> [f64; 6] {
    let df = f1 - f0;
    [
        f0,
        d0,
        0.5 * s0,
        10.0 * df - 6.0 * d0 - 4.0 * d1 - 1.5 * s0 + 0.5 * s1,
        -15.0 * df + 8.0 * d0 + 7.0 * d1 + 1.5 * s0 - s1,
        6.0 * df - 3.0 * d0 - 3.0 * d1 - 0.5 * s0 + 0.5 * s1,
    ]
}

impl MonotoneGraph {
    #[inline]
    pub(crate) fn yosida_unchecked(&self, lambda: f64, s: f64) -> Result<f64> {
        Ok((s - self.resolvent_unchecked(lambda, s)?) / lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monotone::{GraphKind, PiecewiseLinear};

    #[test]
    fn hermite_reproduces_quintics() {
        let p = |u: f64| 1.0 - 2.0 * u + 0.5 * u.powi(3) + 3.0 * u.powi(5);
        let dp = |u: f64| -2.0 + 1.5 * u * u + 15.0 * u.powi(4);
        let ddp = |u: f64| 3.0 * u + 60.0 * u.powi(3);
        let a = hermite5(p(0.0), dp(0.0), ddp(0.0), p(1.0), dp(1.0), ddp(1.0));
        let want = [1.0, -2.0, 0.0, 0.5, 0.0, 3.0];
        for (x, y) in a.iter().zip(want) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn bump_derivatives_match_differences() {
        for &v in &[-0.9, -0.3, 0.0, 0.5, 0.8] {
            let h = 1e-5;
            let (_, d1, d2) = bump3(v);
            let fd1 = (bump3(v + h).0 - bump3(v - h).0) / (2.0 * h);
            let fd2 = (bump3(v + h).1 - bump3(v - h).1) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-8, "{v}");
            assert!((d2 - fd2).abs() < 1e-7, "{v}");
        }
    }

    #[test]
    fn table_matches_direct_quadrature() {
        let g = MonotoneGraph::cubic();
        let drift = MollifiedDrift::new(&g, RegularizedDrift::new(0.1, 8).unwrap()).unwrap();
        for i in 0..400 {
            let r = -3.0 + 6.0 * (i as f64 + 0.37) / 400.0;
            let (a0, a1, a2) = drift.eval3(r);
            let (b0, b1, b2) = drift.direct3(r).unwrap();
            assert!((a0 - b0).abs() < 1e-10, "{r}: {a0} vs {b0}");
            assert!((a1 - b1).abs() < 1e-7, "{r}: {a1} vs {b1}");
            assert!((a2 - b2).abs() < 1e-3 * b2.abs().max(1.0), "{r}: {a2} vs {b2}");
        }
        assert_eq!(drift.value(12.0), drift.direct3(12.0).unwrap().0);
    }

    #[test]
    fn affine_pieces_are_fixed() {
        // β_λ is affine with slope 1/(1+λ) on r > 1 + λ for this graph
        let p = PiecewiseLinear::new(vec![-1.0, 1.0], vec![1.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let g = MonotoneGraph::new(GraphKind::PiecewiseLinear(p)).unwrap();
        let reg = RegularizedDrift::new(0.5, 4).unwrap();
        let m = Mollifier::new(32);
        let (v, d, dd) = m.eval3(&g, &reg, 3.0).unwrap();
        assert!((v - g.yosida(0.5, 3.0).unwrap()).abs() < 1e-13);
        assert!((d - 1.0 / 1.5).abs() < 1e-11, "{d}");
        assert!(dd.abs() < 1e-7, "{dd}");
    }

    #[test]
    fn resolvent_inverts() {
        let g = MonotoneGraph::new(GraphKind::ExpAsymmetric).unwrap();
        let drift = MollifiedDrift::new(&g, RegularizedDrift::new(0.2, 4).unwrap()).unwrap();
        for &y in &[-5.0, -0.3, 0.0, 0.7, 4.0, 20.0] {
            let x = drift.resolvent(0.05, y).unwrap();
            assert!((x + 0.05 * drift.value(x) - y).abs() < 1e-12, "{y}");
        }
    }
}
