//! Cylindrical Wiener increments pushed through a diagonal Hilbert–Schmidt
//! operator `B e_k = b_k e_k`, `b_k = b0 k^{-γ}`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{FieldState, TripleSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub b0: f64,
    pub gamma: f64,
    pub modes: usize,
    /// Slope `ℓ` of the scalar factor `σ(r) = √(1 + ℓ²r²)` applied as
    /// `B(x) = σ(‖x‖_H) B`; `None` for additive noise.
    pub multiplicative: Option<f64>,
}

impl NoiseModel {
    pub fn additive(b0: f64, gamma: f64, modes: usize) -> Result<Self> {
        let model = Self {
            b0,
            gamma,
            modes,
            multiplicative: None,
        };
        model.check_parameters()?;
        Ok(model)
    }

    pub fn zero() -> Self {
        Self {
            b0: 0.0,
            gamma: 1.0,
            modes: 1,
            multiplicative: None,
        }
    }

    fn check_parameters(&self) -> Result<()> {
        if !(self.b0 >= 0.0 && self.b0.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise amplitude must be ≥ 0, got {}", self.b0)));
        }
        if !(self.gamma > 0.5 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "spectral decay must exceed 1/2, got {}",
                self.gamma
            )));
        }
        if self.modes == 0 {
            return Err(Error::InvalidParameter("noise needs at least one mode".into()));
        }
        if let Some(l) = self.multiplicative {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter(format!("multiplicative slope must be ≥ 0, got {l}")));
            }
        }
        Ok(())
    }

    /// Check the model against a grid: parameters and `modes ≤ N`.
    pub fn validate(&self, space: &TripleSpace) -> Result<()> {
        self.check_parameters()?;
        if self.modes > space.n() {
            return Err(Error::InvalidParameter(format!(
                "noise uses {} modes but the grid has only {} nodes",
                self.modes,
                space.n()
            )));
        }
        Ok(())
    }

    pub fn is_additive(&self) -> bool {
        self.multiplicative.is_none()
    }

    pub fn is_zero(&self) -> bool {
        self.b0 == 0.0
    }

    pub fn mode_coeffs(&self) -> Vec<f64> {
        (1..=self.modes).map(|k| self.b0 * (k as f64).powf(-self.gamma)).collect()
    }

    /// `‖B‖²_HS = Σ b_k²`.
    pub fn hs_norm_sq(&self) -> f64 {
        self.mode_coeffs().iter().map(|b| b * b).sum()
    }

    /// Scalar factor of the multiplicative mode at `‖x‖_H = r`.
    pub fn sigma(&self, r: f64) -> f64 {
        match self.multiplicative {
            None => 1.0,
            Some(l) => (1.0 + l * l * r * r).sqrt(),
        }
    }

    /// `L_B` in `‖B(x)‖_HS ≤ L_B (1 + ‖x‖_H)`.
    pub fn linear_growth_constant(&self) -> f64 {
        self.hs_norm_sq().sqrt() * self.multiplicative.unwrap_or(0.0).max(1.0)
    }

    /// `(C, C0)` with `⟨Ax, x⟩ ≥ ½‖B‖²_HS + C‖x‖²_V - C0`; additive only.
    pub fn coercivity_constants(&self, space: &TripleSpace) -> Result<(f64, f64)> {
        if !self.is_additive() {
            return Err(Error::Unsupported(
                "coercivity constants are state dependent for multiplicative noise".into(),
            ));
        }
        Ok((space.c_coercivity(), 0.5 * self.hs_norm_sq()))
    }

    /// Draw the mode coefficients `b_k ΔW_k` of one increment of length
    /// `dt`, as the sum of `substeps` independent sub-increments. A coarse
    /// path built with `substeps = 2` consumes the stream exactly like two
    /// steps of the fine path.
    pub fn draw_coeffs<R: Rng + ?Sized>(&self, dt: f64, substeps: usize, rng: &mut R, out: &mut [f64]) {
        let sub = (dt / substeps as f64).sqrt();
        out.iter_mut().for_each(|c| *c = 0.0);
        for _ in 0..substeps {
            for c in out.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *c += sub * g;
            }
        }
        for (k, c) in out.iter_mut().enumerate() {
            *c *= self.b0 * ((k + 1) as f64).powf(-self.gamma);
        }
    }

    /// `Σ_k b_k √dt g_k e_k` with fresh normals from `rng`.
    pub fn sample_increment<R: Rng + ?Sized>(&self, space: &TripleSpace, dt: f64, rng: &mut R) -> Result<FieldState> {
        self.validate(space)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let mut coeffs = vec![0.0; self.modes];
        self.draw_coeffs(dt, 1, rng, &mut coeffs);
        let basis = NoiseBasis::new(self, space)?;
        let mut out = vec![0.0; space.n()];
        basis.synthesize(&coeffs, &mut out);
        Ok(FieldState::from_vec(out))
    }
}

/// Eigenmodes `e_1..e_modes` stored row-major for synthesizing increments.
#[derive(Clone, Debug)]
pub struct NoiseBasis {
    n: usize,
    rows: Vec<f64>,
}

impl NoiseBasis {
    pub fn new(model: &NoiseModel, space: &TripleSpace) -> Result<Self> {
        model.validate(space)?;
        let mut rows = Vec::with_capacity(model.modes * space.n());
        for k in 1..=model.modes {
            rows.extend(space.eigenmode_vec(k));
        }
        Ok(Self { n: space.n(), rows })
    }

    /// `out = Σ_k coeffs[k] e_{k+1}`.
    #[inline]
    pub fn synthesize(&self, coeffs: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (c, row) in coeffs.iter().zip(self.rows.chunks_exact(self.n)) {
            if *c != 0.0 {
                for (o, e) in out.iter_mut().zip(row) {
                    *o += c * e;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn partial_sum_constant() {
        let space = TripleSpace::new(64, 1.0).unwrap();
        let noise = NoiseModel::additive(0.5, 1.0, 64).unwrap();
        let want: f64 = (1..=64).map(|k| 0.25 / (k * k) as f64).sum::<f64>() * 0.5;
        let (c, c0) = noise.coercivity_constants(&space).unwrap();
        assert_eq!(c, 1.0);
        assert!((c0 - want).abs() < 1e-15);
        assert!((c0 - 0.2056).abs() < 2e-3);
    }

    #[test]
    fn zero_amplitude_gives_zero_field() {
        let space = TripleSpace::new(16, 1.0).unwrap();
        let noise = NoiseModel::additive(0.0, 1.0, 4).unwrap();
        let mut r = rng::stream(1, rng::domain::PATH, 0);
        let dw = noise.sample_increment(&space, 0.1, &mut r).unwrap();
        assert!(dw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn substeps_sum_fine_increments() {
        let noise = NoiseModel::additive(0.7, 1.5, 3).unwrap();
        let mut fine = rng::stream(3, rng::domain::PATH, 9);
        let mut coarse = fine.clone();
        let mut a = vec![0.0; 3];
        let mut b = vec![0.0; 3];
        let mut c = vec![0.0; 3];
        noise.draw_coeffs(0.01, 1, &mut fine, &mut a);
        noise.draw_coeffs(0.01, 1, &mut fine, &mut b);
        noise.draw_coeffs(0.02, 2, &mut coarse, &mut c);
        for k in 0..3 {
            assert!((a[k] + b[k] - c[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_too_many_modes_and_multiplicative_constants() {
        let space = TripleSpace::new(8, 1.0).unwrap();
        let noise = NoiseModel::additive(1.0, 1.0, 9).unwrap();
        assert!(noise.validate(&space).is_err());
        let mult = NoiseModel {
            multiplicative: Some(0.5),
            ..NoiseModel::additive(1.0, 1.0, 4).unwrap()
        };
        assert!(mult.coercivity_constants(&space).is_err());
    }
}
