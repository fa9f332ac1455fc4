//! Equilibrium maps χ, Γ, P, (Dχ)⁻¹ and the path-to-state map.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::potential::MAX_DIM;
use crate::value_function::{ValueFunction, ValueJet};

/// χ, Γ, P and (Dχ)⁻¹ at one `(t, ξ)`.
#[derive(Debug, Clone)]
pub struct MapsAt {
    pub time: f64,
    pub chi: Vec<f64>,
    pub gamma: f64,
    pub price: Vec<f64>,
    /// Row-major `I + γ(T−t)σ²D²E(t, χ)`.
    pub dchi_inv: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EquilibriumMaps {
    vf: ValueFunction,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl EquilibriumMaps {
    pub fn new(vf: ValueFunction) -> Self {
        Self { vf, newton_tol: 1e-10, newton_max_iter: 50 }
    }

    pub fn value_function(&self) -> &ValueFunction {
        &self.vf
    }

    pub fn dim(&self) -> usize {
        self.vf.dim()
    }

    fn tau(&self, t: f64) -> f64 {
        (self.vf.horizon() - t).max(0.0)
    }

    /// `R(t,z) = γ(T−t)σ²DE(t,z)ᵀ + z` from a precomputed jet.
    fn r_from_jet(&self, t: f64, z: &[f64], j: &ValueJet, out: &mut [f64]) {
        let n = self.dim();
        let c = self.vf.gamma() * self.tau(t);
        let s2 = self.vf.sigma2();
        for i in 0..n {
            out[i] = z[i] + c * (0..n).map(|k| s2[i * n + k] * j.grad[k]).sum::<f64>();
        }
    }

    /// `I + γ(T−t)σ²D²E` from a precomputed jet.
    fn jacobian_from_jet(&self, t: f64, j: &ValueJet, out: &mut [f64]) {
        let n = self.dim();
        let c = self.vf.gamma() * self.tau(t);
        let s2 = self.vf.sigma2();
        for i in 0..n {
            for k in 0..n {
                out[i * n + k] = if i == k { 1.0 } else { 0.0 }
                    + c * (0..n).map(|m| s2[i * n + m] * j.hess[m * n + k]).sum::<f64>();
            }
        }
    }

    pub fn r(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        let j = self.vf.jet(t, z)?;
        let mut out = vec![0.0; self.dim()];
        self.r_from_jet(t, z, &j, &mut out);
        Ok(out)
    }

    /// Root of `R(t, z) = ξ`, returned with the value-function jet at the root.
    fn solve_chi(&self, t: f64, xi: &[f64], start: &[f64]) -> Result<(Vec<f64>, ValueJet)> {
        let n = self.dim();
        let mut z = start.to_vec();
        if self.vf.gamma() == 0.0 || self.tau(t) == 0.0 {
            let z = xi.to_vec();
            let j = self.vf.jet(t, &z)?;
            return Ok((z, j));
        }
        let scale = 1.0 + linalg::norm(xi);
        let mut j = self.vf.jet(t, &z)?;
        let mut r = [0.0; MAX_DIM];
        let mut jac = [0.0; MAX_DIM * MAX_DIM];
        self.r_from_jet(t, &z, &j, &mut r[..n]);
        for i in 0..n {
            r[i] -= xi[i];
        }
        let mut rn = linalg::norm(&r[..n]);
        for _ in 0..self.newton_max_iter {
            self.jacobian_from_jet(t, &j, &mut jac[..n * n]);
            let step = linalg::solve_small(&jac[..n * n], &r[..n], n).ok_or(Error::NewtonDivergence {
                iterations: 0,
                residual: rn,
            })?;
            let step_norm = linalg::norm(&step);
            let mut lambda = 1.0;
            loop {
                let cand: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a - lambda * b).collect();
                let jc = self.vf.jet(t, &cand)?;
                let mut rc = [0.0; MAX_DIM];
                self.r_from_jet(t, &cand, &jc, &mut rc[..n]);
                for i in 0..n {
                    rc[i] -= xi[i];
                }
                let rcn = linalg::norm(&rc[..n]);
                if rcn <= (1.0 - 1e-4 * lambda) * rn || rcn <= 1e-12 * scale || lambda < 1e-6 {
                    z = cand;
                    j = jc;
                    r = rc;
                    rn = rcn;
                    break;
                }
                lambda *= 0.5;
            }
            if lambda * step_norm <= self.newton_tol * (1.0 + linalg::norm(&z)) && rn < 1e-9 * scale {
                return Ok((z, j));
            }
            if rn <= 1e-13 * scale {
                return Ok((z, j));
            }
        }
        if rn < 1e-9 * scale {
            return Ok((z, j));
        }
        Err(Error::NewtonDivergence { iterations: self.newton_max_iter, residual: rn })
    }

    pub fn chi(&self, t: f64, xi: &[f64]) -> Result<Vec<f64>> {
        self.solve_chi(t, xi, xi).map(|r| r.0)
    }

    /// χ with a warm start for Newton.
    pub fn chi_from(&self, t: f64, xi: &[f64], start: &[f64]) -> Result<Vec<f64>> {
        self.solve_chi(t, xi, start).map(|r| r.0)
    }

    /// All maps at `(t, ξ)` from a single Newton solve.
    pub fn at(&self, t: f64, xi: &[f64]) -> Result<MapsAt> {
        self.at_from(t, xi, xi)
    }

    /// [`Self::at`] with a warm start for Newton.
    pub fn at_from(&self, t: f64, xi: &[f64], start: &[f64]) -> Result<MapsAt> {
        let n = self.dim();
        let (chi, j) = self.solve_chi(t, xi, start)?;
        let mut dchi_inv = vec![0.0; n * n];
        self.jacobian_from_jet(t, &j, &mut dchi_inv);
        Ok(MapsAt { time: t, chi, gamma: j.value, price: j.grad[..n].to_vec(), dchi_inv })
    }

    pub fn gamma_map(&self, t: f64, xi: &[f64]) -> Result<f64> {
        self.at(t, xi).map(|m| m.gamma)
    }

    pub fn price(&self, t: f64, xi: &[f64]) -> Result<Vec<f64>> {
        self.at(t, xi).map(|m| m.price)
    }

    pub fn dchi_inv(&self, t: f64, xi: &[f64]) -> Result<Mat> {
        let n = self.dim();
        self.at(t, xi).map(|m| Mat::from_row_slice(n, n, &m.dchi_inv))
    }

    /// States ξ along a piecewise-linear order-flow path.
    ///
    /// Tracks `c_k = χ(t_k, ξ_k)` through the integral equation
    /// `c_{k+1} = c_k + Δy + γσ²P(t_k, ξ_k)Δt` and recovers the state as
    /// `ξ_{k+1} = R(t_{k+1}, c_{k+1})`, the explicit inverse of χ. The price is
    /// `P(t_k, ξ_k) = DE(t_k, c_k)ᵀ`, so no root finding is needed.
    pub fn state_from_path(&self, times: &[f64], ys: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = self.dim();
        if times.len() != ys.len() || times.is_empty() {
            return Err(Error::InvalidInput("times and path values must have equal nonzero length".into()));
        }
        if times[0] != 0.0 || ys[0].iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidInput("path must start at time 0 from the origin".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) || *times.last().unwrap() > self.vf.horizon() + 1e-12 {
            return Err(Error::InvalidInput("times must increase within [0, T]".into()));
        }
        let g = self.vf.gamma();
        let s2 = self.vf.sigma2();
        let mut c = self.chi(0.0, &vec![0.0; n])?;
        let mut out = vec![vec![0.0; n]];
        for k in 0..times.len() - 1 {
            let dt = times[k + 1] - times[k];
            let p = self.vf.jet(times[k], &c)?;
            for i in 0..n {
                c[i] += ys[k + 1][i] - ys[k][i] + g * dt * (0..n).map(|m| s2[i * n + m] * p.grad[m]).sum::<f64>();
            }
            out.push(self.r(times[k + 1], &c)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gaussian::GaussianEquilibrium;
    use crate::market::{MarketParams, PriorSpec};
    use crate::potential::QuadraticPotential;

    fn setup(gamma: f64) -> (EquilibriumMaps, GaussianEquilibrium) {
        let prior = PriorSpec::gaussian(vec![0.4], Mat::identity(1, 1)).unwrap();
        let p = MarketParams::new(1.0, Mat::identity(1, 1), gamma, prior).unwrap();
        let eq = GaussianEquilibrium::solve(&p).unwrap();
        let vf = ValueFunction::new(&p, Arc::new(eq.potential())).unwrap();
        (EquilibriumMaps::new(vf), eq)
    }

    #[test]
    fn zero_potential_is_identity() {
        let prior = PriorSpec::gaussian(vec![0.0], Mat::identity(1, 1)).unwrap();
        let p = MarketParams::new(1.0, Mat::identity(1, 1), 0.1, prior).unwrap();
        let vf = ValueFunction::new(&p, Arc::new(QuadraticPotential::zero(1))).unwrap();
        let m = EquilibriumMaps::new(vf);
        let at = m.at(0.2, &[0.8]).unwrap();
        assert!((at.chi[0] - 0.8).abs() < 1e-14 && at.price[0].abs() < 1e-14 && (at.dchi_inv[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn matches_closed_form_chi() {
        let (m, eq) = setup(0.1);
        for &(t, x) in &[(0.0, 0.0), (0.3, 1.2), (0.9, -2.0)] {
            let chi = m.chi(t, &[x]).unwrap();
            assert!((chi[0] - eq.chi(t, &[x])[0]).abs() < 1e-10);
            assert!((m.price(t, &[x]).unwrap()[0] - eq.price(&[x])[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn one_step_path() {
        let (m, _) = setup(0.1);
        let xi = m.state_from_path(&[0.0, 1.0], &[vec![0.0], vec![0.7]]).unwrap();
        let chi00 = m.chi(0.0, &[0.0]).unwrap()[0];
        let p00 = m.price(0.0, &[0.0]).unwrap()[0];
        assert!((xi[1][0] - (chi00 + 0.7 + 0.1 * p00)).abs() < 1e-12);
        assert_eq!(xi[0], vec![0.0]);
    }
}
