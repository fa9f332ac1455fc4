//! Transition density G of the state ξ⁰ and the terminal law μ^φ.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::RectGrid;
use crate::linalg::{self, Mat};
use crate::maps::{EquilibriumMaps, MapsAt};
use crate::market::{GriddedDensity, MarketParams};
use crate::potential::{Potential, Shifted};
use crate::value_function::ValueFunction;

/// Smallest mass the μ^φ grid may capture before it is rejected.
pub const MIN_CAPTURED_MASS: f64 = 1.0 - 1e-3;

/// μ^φ tabulated on a grid, with the mass the raw density captured there.
#[derive(Debug, Clone)]
pub struct MuPhi {
    pub density: GriddedDensity,
    pub captured_mass: f64,
    pub chi00: Vec<f64>,
    pub gamma00: f64,
}

#[derive(Debug, Clone)]
pub struct TransitionDensity {
    maps: EquilibriumMaps,
    sigma_inv: Vec<f64>,
    log_det_sigma: f64,
}

impl TransitionDensity {
    pub fn new(maps: EquilibriumMaps) -> Self {
        let n = maps.dim();
        let sigma = Mat::from_row_slice(n, n, maps.value_function().sigma());
        let sigma_inv = linalg::inv_spd(&sigma);
        let log_det_sigma = linalg::eigenvalues_sym(&sigma).iter().map(|v| v.ln()).sum();
        Self { maps, sigma_inv: sigma_inv.transpose().as_slice().to_vec(), log_det_sigma }
    }

    pub fn from_potential(params: &MarketParams, phi: Arc<dyn Potential>) -> Result<Self> {
        Ok(Self::new(EquilibriumMaps::new(ValueFunction::new(params, phi)?)))
    }

    pub fn maps(&self) -> &EquilibriumMaps {
        &self.maps
    }

    fn gaussian_part(&self, d: &[f64], dt: f64) -> f64 {
        let n = d.len();
        let mut q = 0.0;
        for i in 0..n {
            let v: f64 = (0..n).map(|j| self.sigma_inv[i * n + j] * d[j]).sum();
            q += v * v;
        }
        -q / (2.0 * dt) - self.log_det_sigma - 0.5 * n as f64 * (2.0 * PI * dt).ln()
    }

    /// `ln G(r,x,t,y)`.
    pub fn log_g(&self, r: f64, x: &[f64], t: f64, y: &[f64]) -> Result<f64> {
        if !(r >= 0.0 && r < t && t <= self.maps.value_function().horizon() + 1e-12) {
            return Err(Error::InvalidInput(format!("need 0 <= r < t <= T, got r={r}, t={t}")));
        }
        let from = self.maps.at(r, x)?;
        self.log_g_from(&from, t, y)
    }

    /// `ln G(r,x,t,y)` given the maps at the starting point `(r, x)`.
    pub fn log_g_from(&self, from: &MapsAt, t: f64, y: &[f64]) -> Result<f64> {
        if !(from.time < t && t <= self.maps.value_function().horizon() + 1e-12) {
            return Err(Error::InvalidInput(format!("need r < t <= T, got r={}, t={t}", from.time)));
        }
        let n = self.maps.dim();
        let g = self.maps.value_function().gamma();
        let to = self.maps.at(t, y)?;
        let det = linalg::det_small(&to.dchi_inv, n);
        let d: Vec<f64> = to.chi.iter().zip(&from.chi).map(|(a, b)| a - b).collect();
        Ok(-det.ln() + g * (to.gamma - from.gamma) + self.gaussian_part(&d, t - from.time))
    }

    pub fn g(&self, r: f64, x: &[f64], t: f64, y: &[f64]) -> Result<f64> {
        self.log_g(r, x, t, y).map(f64::exp)
    }

    /// `ln G(0,0,T,y)` given the precomputed `χ(0,0)` and `Γ(0,0)`.
    pub fn log_terminal(&self, chi00: &[f64], gamma00: f64, y: &[f64]) -> f64 {
        let vf = self.maps.value_function();
        let phi = vf.potential().value(y);
        let d: Vec<f64> = y.iter().zip(chi00).map(|(a, b)| a - b).collect();
        vf.gamma() * (phi - gamma00) + self.gaussian_part(&d, vf.horizon())
    }

    /// Tabulate μ^φ on `grid` and renormalize it there.
    pub fn mu_phi(&self, grid: &RectGrid) -> Result<MuPhi> {
        let n = self.maps.dim();
        let at = self.maps.at(0.0, &vec![0.0; n])?;
        let logs: Vec<f64> = (0..grid.len())
            .map(|k| self.log_terminal(&at.chi, at.gamma, &grid.node(k)))
            .collect();
        let density = GriddedDensity::from_log_values(grid.clone(), logs)?;
        let captured_mass = density.log_normalizer().exp();
        if captured_mass < MIN_CAPTURED_MASS {
            return Err(Error::MassLeak { captured: captured_mass });
        }
        Ok(MuPhi { density, captured_mass, chi00: at.chi, gamma00: at.gamma })
    }

    /// `mu_phi` with automatic 1.5× box inflation, at most twice.
    pub fn mu_phi_auto(&self, grid: &RectGrid) -> Result<MuPhi> {
        let mut g = grid.clone();
        let mut last = None;
        for _ in 0..3 {
            match self.mu_phi(&g) {
                Ok(m) => return Ok(m),
                Err(Error::MassLeak { captured }) => {
                    last = Some(captured);
                    g = g.inflated(1.5);
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::MassLeak { captured: last.unwrap_or(0.0) })
    }

    /// Largest relative change of G when φ is replaced by `φ + aᵀz`.
    pub fn shift_invariance_check(
        &self,
        params: &MarketParams,
        a: &[f64],
        samples: &[(f64, Vec<f64>, f64, Vec<f64>)],
    ) -> Result<f64> {
        let shifted = Shifted { inner: self.maps.value_function().potential().clone(), shift: a.to_vec() };
        let other = Self::from_potential(params, Arc::new(shifted))?;
        let mut worst: f64 = 0.0;
        for (r, x, t, y) in samples {
            let l0 = self.log_g(*r, x, *t, y)?;
            let l1 = other.log_g(*r, x, *t, y)?;
            worst = worst.max((l1 - l0).exp_m1().abs());
        }
        Ok(worst)
    }
}

/// Default μ^φ box: ±6 standard deviations of N(0, Tσ²) per axis, widened by
/// `(1 − lγλmax(σ)²T)^{-1/2}` for the exponential tilt.
pub fn default_mu_grid(params: &MarketParams, l: f64, nodes_per_axis: usize) -> Result<RectGrid> {
    let n = params.n;
    let s2 = params.sigma2();
    let c = params.integrability(l);
    if c >= 1.0 {
        return Err(Error::InvalidInput("integrability condition violated".into()));
    }
    let inflate = 1.0 / (1.0 - c).sqrt();
    let half: Vec<f64> = (0..n).map(|i| 6.0 * (params.horizon * s2[(i, i)]).sqrt() * inflate).collect();
    let counts = vec![nodes_per_axis | 1; n];
    RectGrid::centered(&vec![0.0; n], &half, &counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianEquilibrium;
    use crate::market::PriorSpec;
    use crate::potential::QuadraticPotential;

    fn params(gamma: f64) -> MarketParams {
        let prior = PriorSpec::gaussian(vec![0.0], Mat::identity(1, 1)).unwrap();
        MarketParams::new(1.0, Mat::identity(1, 1), gamma, prior).unwrap()
    }

    #[test]
    fn zero_potential_is_gaussian_kernel() {
        let p = params(0.1);
        let d = TransitionDensity::from_potential(&p, Arc::new(QuadraticPotential::zero(1))).unwrap();
        let g = d.g(0.2, &[0.1], 0.7, &[0.5]).unwrap();
        let var = 0.5;
        let exact = (-(0.4f64 * 0.4) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
        assert!((g - exact).abs() < 1e-14);
    }

    #[test]
    fn quadratic_terminal_law_matches_oracle() {
        let p = params(0.1);
        let eq = GaussianEquilibrium::solve(&p).unwrap();
        let d = TransitionDensity::from_potential(&p, Arc::new(eq.potential())).unwrap();
        let grid = default_mu_grid(&p, eq.a()[(0, 0)], 801).unwrap();
        let mu = d.mu_phi(&grid).unwrap();
        assert!(mu.density.mean()[0].abs() < 1e-9);
        let sa = eq.sigma_a()[(0, 0)];
        assert!((mu.density.covariance()[(0, 0)] - sa * sa).abs() < 1e-6);
        assert!((mu.captured_mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shift_leaves_density_unchanged() {
        let p = params(0.1);
        let eq = GaussianEquilibrium::solve(&p).unwrap();
        let d = TransitionDensity::from_potential(&p, Arc::new(eq.potential())).unwrap();
        let samples = vec![(0.0, vec![0.0], 1.0, vec![0.4]), (0.3, vec![0.2], 0.8, vec![-0.5])];
        assert!(d.shift_invariance_check(&p, &[0.3], &samples).unwrap() < 1e-6);
        assert_eq!(d.shift_invariance_check(&p, &[0.0], &samples).unwrap(), 0.0);
    }
}
