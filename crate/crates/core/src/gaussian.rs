//! Closed-form equilibrium for Gaussian priors.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::market::{MarketParams, PriorSpec};
use crate::potential::QuadraticPotential;

const C_STEPS: usize = 10_000;

/// Linear equilibrium `Dφ(ξ) = Aξ + B` with its closed-form maps.
#[derive(Debug, Clone)]
pub struct GaussianEquilibrium {
    n: usize,
    horizon: f64,
    gamma: f64,
    sigma: Mat,
    sigma2: Mat,
    a: Mat,
    a_inv: Mat,
    b: Vec<f64>,
    /// Eigenvalues of σAσ and the factors `σU`, `Uᵀσ⁻¹` of its eigenbasis.
    s_eig: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    /// `C_t` on a uniform time grid, `C_T = 0`.
    c_table: Vec<f64>,
}

impl GaussianEquilibrium {
    /// Solve the fixed point for a Gaussian prior by diagonalizing σσ_ν²σ/T.
    pub fn solve(params: &MarketParams) -> Result<Self> {
        let PriorSpec::Gaussian { mean, cov } = &params.prior else {
            return Err(Error::InvalidInput("Gaussian oracle needs a Gaussian prior".into()));
        };
        let t = params.horizon;
        let g = params.gamma;
        let sigma = &params.sigma;
        let m = linalg::symmetrize(&(sigma * cov * sigma / t));
        let eig = nalgebra::SymmetricEigen::new(m.clone());
        let a_tilde: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&d| 1.0 / (t * g / 2.0 + (t * t * g * g / 4.0 + 1.0 / d).sqrt()))
            .collect();
        let q = &eig.eigenvectors;
        let sigma_inv = params.sigma_inv();
        let a = linalg::symmetrize(
            &(&sigma_inv * q * Mat::from_diagonal(&Vector::from_vec(a_tilde)) * q.transpose() * &sigma_inv),
        );
        let eq = Self::from_parts(params, a, mean.clone())?;
        let sas = sigma * &eq.a * sigma;
        let reg = Mat::identity(params.n, params.n) - &sas * (t * g);
        let lhs = &sas * linalg::inverse(&reg)? * &sas;
        let rel = (&lhs - &m).amax() / m.amax();
        if rel > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "Gaussian fixed-point condition violated (relative error {rel:.2e})"
            )));
        }
        Ok(eq)
    }

    /// Build the closed-form maps for an arbitrary symmetric `A` and `B`.
    pub fn from_parts(params: &MarketParams, a: Mat, b: Vec<f64>) -> Result<Self> {
        let n = params.n;
        if a.nrows() != n || b.len() != n {
            return Err(Error::InvalidInput("A and B must match the market dimension".into()));
        }
        let t = params.horizon;
        let g = params.gamma;
        let sigma = params.sigma.clone();
        let sigma_inv = params.sigma_inv();
        let s_mat = linalg::symmetrize(&(&sigma * &a * &sigma));
        let eig = nalgebra::SymmetricEigen::new(s_mat);
        let s_eig: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        if s_eig.iter().any(|&s| 1.0 - g * t * s <= 0.0) {
            let worst = s_eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            return Err(Error::RegimeViolation { gamma: g, gamma0: 1.0 / (t * worst) });
        }
        let left_m = &sigma * &eig.eigenvectors;
        let right_m = eig.eigenvectors.transpose() * &sigma_inv;
        let a_inv = linalg::inverse(&a)?;
        let mut eq = Self {
            n,
            horizon: t,
            gamma: g,
            sigma2: &sigma * &sigma,
            sigma,
            a,
            a_inv,
            b,
            s_eig,
            left: row_major(&left_m),
            right: row_major(&right_m),
            c_table: Vec::new(),
        };
        eq.check_woodbury()?;
        eq.c_table = eq.integrate_c();
        Ok(eq)
    }

    fn check_woodbury(&self) -> Result<()> {
        let id = Mat::identity(self.n, self.n);
        let sas = &self.sigma * &self.a * &self.sigma;
        for frac in [0.0, 0.5, 0.9] {
            let tau = self.horizon * (1.0 - frac);
            let k = &sas * (self.gamma * tau);
            if self.gamma == 0.0 || linalg::lambda_min(&k).abs() < 1e-12 {
                continue;
            }
            let inner = &id - linalg::inverse(&k)?;
            let lhs = linalg::inverse(&(&id - linalg::inverse(&inner)?))?;
            let rhs = &id - &k;
            if (&lhs - &rhs).amax() > 1e-10 * rhs.amax().max(1.0) {
                return Err(Error::InvalidInput("Woodbury identity check failed".into()));
            }
        }
        Ok(())
    }

    fn integrate_c(&self) -> Vec<f64> {
        let h = self.horizon / C_STEPS as f64;
        let rate = |t: f64| -> f64 {
            let at = self.a_t(t);
            let bt = self.b_t(t);
            let bt = Vector::from_vec(bt);
            0.5 * (&self.sigma2 * &at).trace() + 0.5 * self.gamma * (bt.transpose() * &self.sigma2 * &bt)[0]
        };
        let f: Vec<f64> = (0..=C_STEPS).map(|i| rate(i as f64 * h)).collect();
        let mut c = vec![0.0; C_STEPS + 1];
        for i in (0..C_STEPS).rev() {
            c[i] = c[i + 1] + 0.5 * h * (f[i] + f[i + 1]);
        }
        c
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sigma(&self) -> &Mat {
        &self.sigma
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// φ(ξ) = ½ξᵀAξ + Bᵀξ.
    pub fn potential(&self) -> QuadraticPotential {
        QuadraticPotential::new(&self.a, &self.b).expect("dimensions checked")
    }

    /// `A_t = (A⁻¹ − γ(T−t)σ²)⁻¹`.
    pub fn a_t(&self, t: f64) -> Mat {
        let m = &self.a_inv - &self.sigma2 * (self.gamma * (self.horizon - t));
        linalg::symmetrize(&linalg::inverse(&m).expect("regime checked"))
    }

    /// `B_t = A_t A⁻¹ B`.
    pub fn b_t(&self, t: f64) -> Vec<f64> {
        let v = self.a_t(t) * &self.a_inv * Vector::from_column_slice(&self.b);
        v.iter().copied().collect()
    }

    pub fn c_t(&self, t: f64) -> f64 {
        let u = (t / self.horizon * C_STEPS as f64).clamp(0.0, C_STEPS as f64);
        let i = (u.floor() as usize).min(C_STEPS - 1);
        let f = u - i as f64;
        (1.0 - f) * self.c_table[i] + f * self.c_table[i + 1]
    }

    fn shifted_arg(&self, z: &[f64]) -> Vector {
        Vector::from_column_slice(z) + &self.a_inv * Vector::from_column_slice(&self.b)
    }

    /// `E(t,z) = ½(z+A⁻¹B)ᵀA_t(z+A⁻¹B) + C_t − ½BᵀA⁻¹A_tA⁻¹B`.
    pub fn e(&self, t: f64, z: &[f64]) -> f64 {
        let at = self.a_t(t);
        let u = self.shifted_arg(z);
        let w = &self.a_inv * Vector::from_column_slice(&self.b);
        0.5 * (u.transpose() * &at * &u)[0] + self.c_t(t) - 0.5 * (w.transpose() * &at * &w)[0]
    }

    /// `DE(t,z)ᵀ = A_t(z + A⁻¹B)`.
    pub fn de(&self, t: f64, z: &[f64]) -> Vec<f64> {
        (self.a_t(t) * self.shifted_arg(z)).iter().copied().collect()
    }

    pub fn d2e(&self, t: f64) -> Mat {
        self.a_t(t)
    }

    /// `χ(t,ξ) = σ(I − γ(T−t)σAσ)σ⁻¹ξ − γ(T−t)σ²B`.
    pub fn chi(&self, t: f64, xi: &[f64]) -> Vec<f64> {
        let tau = self.horizon - t;
        let x = Vector::from_column_slice(xi);
        let v = &x - &self.sigma2 * (&self.a * &x) * (self.gamma * tau)
            - &self.sigma2 * Vector::from_column_slice(&self.b) * (self.gamma * tau);
        v.iter().copied().collect()
    }

    pub fn gamma_map(&self, t: f64, xi: &[f64]) -> f64 {
        self.e(t, &self.chi(t, xi))
    }

    /// `P(t,ξ) = Aξ + B`.
    pub fn price(&self, xi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.price_into(xi, &mut out);
        out
    }

    pub fn price_into(&self, xi: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = self.b[i] + (0..self.n).map(|j| self.a[(i, j)] * xi[j]).sum::<f64>();
        }
    }

    /// `(Dχ)⁻¹(t) = σ(I − γ(T−t)σAσ)⁻¹σ⁻¹`, row-major.
    pub fn dchi_inv_into(&self, t: f64, out: &mut [f64]) {
        let n = self.n;
        let tau = self.horizon - t;
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..n)
                    .map(|k| self.left[i * n + k] * self.right[k * n + j] / (1.0 - self.gamma * tau * self.s_eig[k]))
                    .sum();
            }
        }
    }

    pub fn dchi_inv(&self, t: f64) -> Mat {
        let mut v = vec![0.0; self.n * self.n];
        self.dchi_inv_into(t, &mut v);
        Mat::from_row_slice(self.n, self.n, &v)
    }

    /// `(Dφ)⁻¹(v) = A⁻¹(v − B)`.
    pub fn inverse_gradient(&self, v: &[f64]) -> Vec<f64> {
        let d = Vector::from_iterator(self.n, v.iter().zip(&self.b).map(|(a, b)| a - b));
        (&self.a_inv * d).iter().copied().collect()
    }

    /// `φ^c(v) = ½(v − B)ᵀA⁻¹(v − B)`.
    pub fn conjugate(&self, v: &[f64]) -> f64 {
        let d = Vector::from_iterator(self.n, v.iter().zip(&self.b).map(|(a, b)| a - b));
        0.5 * (d.transpose() * &self.a_inv * &d)[0]
    }

    /// Covariance of ξ⁰_t given ξ⁰_r:
    /// `σU diag((t−r)/((1−γ(T−r)s)(1−γ(T−t)s))) Uᵀσ`.
    pub fn transition_cov(&self, r: f64, t: f64) -> Mat {
        let n = self.n;
        let d: Vec<f64> = self
            .s_eig
            .iter()
            .map(|&s| {
                (t - r)
                    / ((1.0 - self.gamma * (self.horizon - r) * s) * (1.0 - self.gamma * (self.horizon - t) * s))
            })
            .collect();
        let left = Mat::from_row_slice(n, n, &self.left);
        let su = left.clone();
        linalg::symmetrize(&(&su * Mat::from_diagonal(&Vector::from_vec(d)) * su.transpose()))
    }

    /// Transition density of ξ⁰: Gaussian with mean `x` and `transition_cov`.
    pub fn g(&self, r: f64, x: &[f64], t: f64, y: &[f64]) -> f64 {
        gaussian_log_pdf(y, x, &self.transition_cov(r, t)).exp()
    }

    /// Mean `M_{A,B}` of μ^φ.
    pub fn mu_mean(&self) -> Vec<f64> {
        let n = self.n;
        let s_inv2 = linalg::inverse(&self.sigma2).expect("sigma SPD") / self.horizon;
        let prec = &s_inv2 - &self.a * self.gamma;
        let chi00 = Vector::from_vec(self.chi(0.0, &vec![0.0; n]));
        let rhs = &s_inv2 * chi00 + Vector::from_column_slice(&self.b) * self.gamma;
        (linalg::inverse(&prec).expect("regime checked") * rhs).iter().copied().collect()
    }

    /// `Σ_A = (σ⁻²/T − γA)^{−1/2}`.
    pub fn sigma_a(&self) -> Mat {
        let s_inv2 = linalg::inverse(&self.sigma2).expect("sigma SPD") / self.horizon;
        linalg::inv_sqrtm_spd(&(&s_inv2 - &self.a * self.gamma))
    }
}

fn row_major(m: &Mat) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn gaussian_log_pdf(y: &[f64], mean: &[f64], cov: &Mat) -> f64 {
    let n = y.len();
    let d = Vector::from_iterator(n, y.iter().zip(mean).map(|(a, b)| a - b));
    let chol = cov.clone().cholesky().expect("covariance SPD");
    let sol = chol.solve(&d);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * d.dot(&sol) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_1d(gamma: f64) -> MarketParams {
        let prior = PriorSpec::gaussian(vec![0.0], Mat::identity(1, 1)).unwrap();
        MarketParams::new(1.0, Mat::identity(1, 1), gamma, prior).unwrap()
    }

    #[test]
    fn risk_neutral_kyle_lambda() {
        let eq = GaussianEquilibrium::solve(&params_1d(0.0)).unwrap();
        assert!((eq.a()[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn one_dimensional_formula() {
        let eq = GaussianEquilibrium::solve(&params_1d(0.1)).unwrap();
        let expected = (0.0025f64 + 1.0).sqrt() - 0.05;
        assert!((eq.a()[(0, 0)] - expected).abs() < 1e-15);
        assert!((eq.a()[(0, 0)] - 0.95125).abs() < 1e-5);
    }

    #[test]
    fn final_conditions() {
        let eq = GaussianEquilibrium::solve(&params_1d(0.1)).unwrap();
        assert_eq!(eq.chi(1.0, &[0.7]), vec![0.7]);
        assert!((eq.dchi_inv(1.0)[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(eq.c_t(1.0).abs() < 1e-15);
        let phi = 0.5 * eq.a()[(0, 0)] * 0.49;
        assert!((eq.e(1.0, &[0.7]) - phi).abs() < 1e-14);
    }

    #[test]
    fn mu_phi_moments() {
        let eq = GaussianEquilibrium::solve(&params_1d(0.1)).unwrap();
        assert!(eq.mu_mean()[0].abs() < 1e-14);
        let sa = eq.sigma_a();
        let cov = eq.transition_cov(0.0, 1.0);
        assert!(((&sa * &sa)[(0, 0)] - cov[(0, 0)]).abs() < 1e-13);
    }
}
