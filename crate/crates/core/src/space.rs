//! Discrete Gelfand triple on `D = (0, 1)` with homogeneous Dirichlet data.
//!
//! `H` carries `‖u‖² = h Σ uᵢ²`, `V` the energy norm of `A = -κ∂²` realized
//! by second differences, and `V'` the dual norm `⟨A⁻¹u, u⟩`.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Nodal values on the interior grid; boundary values are implicitly zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldState(Vec<f64>);

impl FieldState {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field state"));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub(crate) fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &FieldState, b: f64) -> FieldState {
        Self(self.0.iter().zip(&other.0).map(|(x, y)| a * x + b * y).collect())
    }

    pub fn scaled(&self, a: f64) -> FieldState {
        Self(self.0.iter().map(|x| a * x).collect())
    }
}

impl Deref for FieldState {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for FieldState {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Factorized symmetric tridiagonal matrix with constant diagonal `d` and
/// off-diagonal `-o`, solved by the Thomas algorithm.
#[derive(Clone, Debug)]
pub struct ShiftedSolver {
    off: f64,
    cprime: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl ShiftedSolver {
    fn new(n: usize, diag: f64, off: f64) -> Self {
        let mut cprime = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let pivot = diag - off * prev;
            inv_pivot[i] = 1.0 / pivot;
            prev = off * inv_pivot[i];
            cprime[i] = prev;
        }
        Self { off, cprime, inv_pivot }
    }

    pub fn len(&self) -> usize {
        self.cprime.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cprime.is_empty()
    }

    /// Overwrite `x` with the solution of `M y = x`.
    #[inline]
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len();
        debug_assert_eq!(n, self.cprime.len());
        let mut prev = 0.0;
        for i in 0..n {
            prev = (x[i] + self.off * prev) * self.inv_pivot[i];
            x[i] = prev;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] += self.cprime[i] * x[i + 1];
        }
    }

    /// [`solve_in_place`](Self::solve_in_place) on several right-hand sides
    /// at once; same arithmetic, interleaved across columns.
    pub fn solve_columns(&self, cols: &mut [Vec<f64>]) {
        let n = self.cprime.len();
        debug_assert!(cols.iter().all(|c| c.len() == n));
        if n == 0 {
            return;
        }
        for c in cols.iter_mut() {
            c[0] *= self.inv_pivot[0];
        }
        for i in 1..n {
            for c in cols.iter_mut() {
                c[i] = (c[i] + self.off * c[i - 1]) * self.inv_pivot[i];
            }
        }
        for i in (0..n - 1).rev() {
            for c in cols.iter_mut() {
                c[i] += self.cprime[i] * c[i + 1];
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TripleSpace {
    n: usize,
    h: f64,
    diffusivity: f64,
    k_embed: f64,
    inverse: ShiftedSolver,
}

impl TripleSpace {
    pub const DEFAULT_DIFFUSIVITY: f64 = 1.0;

    pub fn new(n_interior: usize, diffusivity: f64) -> Result<Self> {
        if n_interior == 0 {
            return Err(Error::InvalidParameter("grid needs at least one interior node".into()));
        }
        if !(diffusivity > 0.0 && diffusivity.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "diffusivity must be positive, got {diffusivity}"
            )));
        }
        let h = 1.0 / (n_interior as f64 + 1.0);
        let scale = diffusivity / (h * h);
        let mut space = Self {
            n: n_interior,
            h,
            diffusivity,
            k_embed: 0.0,
            inverse: ShiftedSolver::new(n_interior, 2.0 * scale, scale),
        };
        space.k_embed = space.lambda_min().powf(-0.5);
        Ok(space)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn diffusivity(&self) -> f64 {
        self.diffusivity
    }

    /// Coercivity constant `C` in `⟨Av, v⟩ ≥ C‖v‖²_V`; the V-norm is the
    /// energy norm, so this is exactly one.
    pub fn c_coercivity(&self) -> f64 {
        1.0
    }

    /// Norm of the embedding `V ↪ H`, `λ_min^{-1/2}`.
    pub fn k_embed(&self) -> f64 {
        self.k_embed
    }

    /// Power `m` for which `(I + δA)^{-m}` maps `L¹` into `L^∞`.
    pub fn m_ultra(&self) -> usize {
        1
    }

    /// `λ_k = κ (4/h²) sin²(πkh/2)` for `k = 1..=N`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let s = (0.5 * PI * k as f64 * self.h).sin();
        self.diffusivity * 4.0 * s * s / (self.h * self.h)
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalue(1)
    }

    /// H-orthonormal eigenvector `e_k,i = √2 sin(πk i h)`.
    pub fn eigenmode(&self, k: usize) -> FieldState {
        FieldState(self.eigenmode_vec(k))
    }

    pub(crate) fn eigenmode_vec(&self, k: usize) -> Vec<f64> {
        let w = PI * k as f64 * self.h;
        (1..=self.n).map(|i| 2f64.sqrt() * (w * i as f64).sin()).collect()
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: u.len(),
            });
        }
        Ok(())
    }

    pub fn apply_a(&self, u: &FieldState) -> Result<FieldState> {
        self.check(u)?;
        let mut out = vec![0.0; self.n];
        self.apply_a_into(u, &mut out);
        Ok(FieldState(out))
    }

    /// `(Au)_i = κ(2u_i - u_{i-1} - u_{i+1})/h²` without dimension checks.
    #[inline]
    pub fn apply_a_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        let scale = self.diffusivity / (self.h * self.h);
        for i in 0..n {
            let left = if i > 0 { u[i - 1] } else { 0.0 };
            let right = if i + 1 < n { u[i + 1] } else { 0.0 };
            out[i] = scale * (2.0 * u[i] - left - right);
        }
    }

    /// Factorization of `I + δA`.
    pub fn shifted_solver(&self, delta: f64) -> Result<ShiftedSolver> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("shift must be positive, got {delta}")));
        }
        let scale = delta * self.diffusivity / (self.h * self.h);
        Ok(ShiftedSolver::new(self.n, 1.0 + 2.0 * scale, scale))
    }

    /// `(I + δA)^{-1} f`.
    pub fn solve_shifted(&self, delta: f64, f: &FieldState) -> Result<FieldState> {
        self.check(f)?;
        let solver = self.shifted_solver(delta)?;
        let mut out = f.0.clone();
        solver.solve_in_place(&mut out);
        Ok(FieldState(out))
    }

    /// `A⁻¹ f`.
    pub fn solve_a(&self, f: &FieldState) -> Result<FieldState> {
        self.check(f)?;
        let mut out = f.0.clone();
        self.inverse.solve_in_place(&mut out);
        Ok(FieldState(out))
    }

    #[inline]
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.h * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }

    #[inline]
    pub fn norm_h_sq(&self, u: &[f64]) -> f64 {
        self.inner(u, u)
    }

    pub fn norm_h(&self, u: &[f64]) -> f64 {
        self.norm_h_sq(u).sqrt()
    }

    /// Discrete gradient energy `h Σ κ ((u_{i+1} - u_i)/h)²` over all
    /// `N + 1` edges, equal to `⟨Au, u⟩` by summation by parts.
    #[inline]
    pub fn norm_v_sq(&self, u: &[f64]) -> f64 {
        let n = self.n;
        let mut acc = u[0] * u[0] + u[n - 1] * u[n - 1];
        for i in 0..n - 1 {
            let d = u[i + 1] - u[i];
            acc += d * d;
        }
        self.diffusivity * acc / self.h
    }

    pub fn norm_v(&self, u: &[f64]) -> f64 {
        self.norm_v_sq(u).sqrt()
    }

    /// `⟨Au, u⟩_H`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let mut au = vec![0.0; self.n];
        self.apply_a_into(u, &mut au);
        self.inner(&au, u)
    }

    pub fn norm_vdual_sq(&self, u: &[f64]) -> f64 {
        let mut w = u.to_vec();
        self.inverse.solve_in_place(&mut w);
        self.inner(&w, u)
    }

    pub fn norm_vdual(&self, u: &[f64]) -> f64 {
        self.norm_vdual_sq(u).max(0.0).sqrt()
    }

    /// `h Σ |u_i|`.
    pub fn norm_l1(&self, u: &[f64]) -> f64 {
        self.h * u.iter().map(|x| x.abs()).sum::<f64>()
    }

    pub fn norm_linf(&self, u: &[f64]) -> f64 {
        u.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `⟨u, e_k⟩_H` for `k = 1..=modes`.
    pub fn project(&self, u: &[f64], modes: usize) -> Vec<f64> {
        (1..=modes).map(|k| self.inner(u, &self.eigenmode_vec(k))).collect()
    }

    /// Exact `L¹ → L^∞` norm of `(I + δA)^{-1}`, i.e. `max_ij G_ij / h`.
    pub fn ultracontractivity_constant(&self, delta: f64) -> Result<f64> {
        let solver = self.shifted_solver(delta)?;
        let mut best: f64 = 0.0;
        let mut col = vec![0.0; self.n];
        for j in 0..self.n {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[j] = 1.0;
            solver.solve_in_place(&mut col);
            best = best.max(self.norm_linf(&col));
        }
        Ok(best / self.h)
    }

    /// Randomized checks of the structural assumptions on `A`.
    pub fn validate_assumptions(&self, trials: usize, seed: u64) -> Result<ValidationReport> {
        if trials == 0 {
            return Err(Error::InvalidParameter("validation needs at least one trial".into()));
        }
        let mut rng = rng::stream(seed, rng::domain::VALIDATION, 0);
        let n = self.n;
        let mut u = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut au = vec![0.0; n];
        let mut av = vec![0.0; n];

        let mut coercivity_err: f64 = 0.0;
        let mut symmetry_err: f64 = 0.0;
        for _ in 0..trials {
            u.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            v.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            self.apply_a_into(&u, &mut au);
            self.apply_a_into(&v, &mut av);
            let e = self.inner(&au, &u);
            coercivity_err = coercivity_err.max((e - self.norm_v_sq(&u)).abs() / e.max(1.0));
            let s = self.inner(&au, &v);
            symmetry_err = symmetry_err.max((s - self.inner(&u, &av)).abs() / e.max(1.0));
        }

        let deltas = [1e-3, 1e-1, 1.0, 10.0];
        let solvers: Vec<_> = deltas.iter().map(|&d| self.shifted_solver(d)).collect::<Result<_>>()?;
        let mut sub_markov_violations = 0usize;
        let mut l1_violations = 0usize;
        let mut worst_range: f64 = 0.0;
        let mut worst_l1_ratio: f64 = 0.0;
        let mut ultra_empirical: f64 = 0.0;
        let ultra_exact = self.ultracontractivity_constant(1.0)?;
        for t in 0..trials {
            u.iter_mut().for_each(|x| *x = rng.random::<f64>());
            if t == 0 {
                // indicator of a single node
                u.iter_mut().for_each(|x| *x = 0.0);
                u[n / 2] = 1.0;
            }
            for (solver, &delta) in solvers.iter().zip(&deltas) {
                v.copy_from_slice(&u);
                solver.solve_in_place(&mut v);
                for &x in &v {
                    let excess = (-x).max(x - 1.0).max(0.0);
                    worst_range = worst_range.max(excess);
                    if excess > SUB_MARKOV_TOL {
                        sub_markov_violations += 1;
                    }
                }
                let ratio = self.norm_l1(&v) / self.norm_l1(&u);
                worst_l1_ratio = worst_l1_ratio.max(ratio);
                if ratio > 1.0 + SUB_MARKOV_TOL {
                    l1_violations += 1;
                }
                if delta == 1.0 {
                    ultra_empirical = ultra_empirical.max(self.norm_linf(&v) / self.norm_l1(&u));
                }
            }
        }

        let mut eigen_err: f64 = 0.0;
        for k in 1..=n {
            let e = self.eigenmode_vec(k);
            self.apply_a_into(&e, &mut au);
            let lam = self.eigenvalue(k);
            let err = au.iter().zip(&e).map(|(a, b)| (a - lam * b).abs()).fold(0.0, f64::max);
            eigen_err = eigen_err.max(err / lam);
        }

        let checks = vec![
            AssumptionCheck::new("coercivity", "(i)", coercivity_err, COERCIVITY_TOL, coercivity_err <= COERCIVITY_TOL),
            AssumptionCheck::new("symmetry", "(i)", symmetry_err, COERCIVITY_TOL, symmetry_err <= COERCIVITY_TOL),
            AssumptionCheck::new(
                "l1_contraction",
                "(ii)",
                worst_l1_ratio,
                1.0 + SUB_MARKOV_TOL,
                l1_violations == 0,
            )
            .with_violations(l1_violations),
            AssumptionCheck::new("sub_markov", "(iii)", worst_range, SUB_MARKOV_TOL, sub_markov_violations == 0)
                .with_violations(sub_markov_violations),
            AssumptionCheck::new(
                "ultracontractivity",
                "(iv)",
                ultra_empirical,
                ultra_exact,
                ultra_empirical.is_finite() && ultra_empirical <= ultra_exact * (1.0 + 1e-12),
            ),
            AssumptionCheck::new("eigenpairs", "(i)", eigen_err, 1e-10, eigen_err <= 1e-10),
        ];
        Ok(ValidationReport {
            trials,
            c_coercivity: self.c_coercivity(),
            k_embed: self.k_embed,
            ultracontractivity_constant: ultra_exact,
            checks,
        })
    }
}

/// Relative tolerance for the exact identities (coercivity, symmetry).
pub const COERCIVITY_TOL: f64 = 1e-12;
/// Roundoff allowance for the order-preserving properties of the resolvent.
pub const SUB_MARKOV_TOL: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub assumption: String,
    pub observed: f64,
    pub bound: f64,
    pub violations: usize,
    pub pass: bool,
}

impl AssumptionCheck {
    pub fn new(name: &str, assumption: &str, observed: f64, bound: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            assumption: assumption.into(),
            observed,
            bound,
            violations: usize::from(!pass),
            pass,
        }
    }

    pub fn with_violations(mut self, violations: usize) -> Self {
        self.violations = violations;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub trials: usize,
    pub c_coercivity: f64,
    pub k_embed: f64,
    pub ultracontractivity_constant: f64,
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_stencil() {
        let s = TripleSpace::new(3, 1.0).unwrap();
        let u = FieldState::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(s.apply_a(&u).unwrap().as_slice(), &[-16.0, 32.0, -16.0]);
        assert!(s.apply_a(&FieldState::zeros(2)).is_err());
    }

    #[test]
    fn eigenpair_norms() {
        let s = TripleSpace::new(31, 1.0).unwrap();
        let e = s.eigenmode(1);
        let lam = s.lambda_min();
        assert!((s.norm_h_sq(&e) - 1.0).abs() < 1e-13);
        assert!((s.norm_v_sq(&e) - lam).abs() < 1e-10 * lam);
        assert!((s.norm_vdual_sq(&e) - 1.0 / lam).abs() < 1e-13);
        let solved = s.solve_shifted(0.3, &e).unwrap();
        for (a, b) in solved.iter().zip(e.iter()) {
            assert!((a - b / (1.0 + 0.3 * lam)).abs() < 1e-13);
        }
        assert!((s.k_embed() - 1.0 / lam.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn default_validation_passes() {
        let s = TripleSpace::new(64, 1.0).unwrap();
        let report = s.validate_assumptions(200, 1).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
