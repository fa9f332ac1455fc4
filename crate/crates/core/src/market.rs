//! Market primitives and prior measures.

use std::f64::consts::PI;

use log::warn;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::cdf::LogLinearCdf;
use crate::error::{Error, Result};
use crate::grid::RectGrid;
use crate::linalg::{self, Mat};

/// Density tabulated on a grid as log-values, normalized so that the
/// trapezoid rule integrates it to one.
#[derive(Debug, Clone)]
pub struct GriddedDensity {
    grid: RectGrid,
    log_density: Vec<f64>,
    /// Rough estimate of the mass lying outside the box before renormalization.
    discarded_mass: f64,
    /// Log of the factor the raw values were divided by.
    log_normalizer: f64,
}

impl GriddedDensity {
    /// Normalize raw log-density node values on `grid`.
    pub fn from_log_values(grid: RectGrid, log_values: Vec<f64>) -> Result<Self> {
        if log_values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} log-density values, got {}",
                grid.len(),
                log_values.len()
            )));
        }
        if log_values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidInput("log-density values must not be NaN or +inf".into()));
        }
        let lmax = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !lmax.is_finite() {
            return Err(Error::InvalidInput("density vanishes on the whole grid".into()));
        }
        let w = grid.trapezoid_weights();
        let scaled: f64 = crate::stats::pairwise_sum(
            &w.iter()
                .zip(&log_values)
                .map(|(w, l)| w * (l - lmax).exp())
                .collect::<Vec<_>>(),
        );
        let log_normalizer = lmax + scaled.ln();
        let log_density: Vec<f64> = log_values.iter().map(|l| l - log_normalizer).collect();
        let mut out = Self { grid, log_density, discarded_mass: 0.0, log_normalizer };
        out.discarded_mass = out.estimate_tail_mass();
        Ok(out)
    }

    pub fn grid(&self) -> &RectGrid {
        &self.grid
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_density
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_density.iter().map(|l| l.exp()).collect()
    }

    pub fn discarded_mass(&self) -> f64 {
        self.discarded_mass
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    /// Node masses (trapezoid weight times density); they sum to one.
    pub fn masses(&self) -> Vec<f64> {
        self.grid
            .trapezoid_weights()
            .iter()
            .zip(&self.log_density)
            .map(|(w, l)| w * l.exp())
            .collect()
    }

    /// Log-density by multilinear interpolation of the log-values.
    pub fn log_density_at(&self, x: &[f64]) -> Result<f64> {
        if !self.grid.contains(x) {
            return Err(Error::OutOfDomain { point: x.to_vec() });
        }
        Ok(self.grid.interpolate(&self.log_density, x))
    }

    pub fn density_at(&self, x: &[f64]) -> Result<f64> {
        self.log_density_at(x).map(f64::exp)
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.grid.dim();
        let m = self.masses();
        let mut out = vec![0.0; n];
        for (k, mk) in m.iter().enumerate() {
            let x = self.grid.node(k);
            for d in 0..n {
                out[d] += mk * x[d];
            }
        }
        out
    }

    pub fn covariance(&self) -> Mat {
        let n = self.grid.dim();
        let mu = self.mean();
        let m = self.masses();
        let mut c = Mat::zeros(n, n);
        for (k, mk) in m.iter().enumerate() {
            let x = self.grid.node(k);
            for i in 0..n {
                for j in 0..n {
                    c[(i, j)] += mk * (x[i] - mu[i]) * (x[j] - mu[j]);
                }
            }
        }
        c
    }

    /// Smallest eigenvalue of the finite-difference Hessian of `-log f` over
    /// interior nodes (`+inf` if there are none).
    pub fn min_log_concavity(&self) -> f64 {
        let n = self.grid.dim();
        let strides = self.grid.strides();
        let neg: Vec<f64> = self.log_density.iter().map(|l| -l).collect();
        let mut worst = f64::INFINITY;
        for k in 0..self.grid.len() {
            if !self.grid.is_interior(k) {
                continue;
            }
            let mut h = Mat::zeros(n, n);
            for i in 0..n {
                let hi = self.grid.step(i);
                let si = strides[i];
                h[(i, i)] = (neg[k + si] - 2.0 * neg[k] + neg[k - si]) / (hi * hi);
                for j in (i + 1)..n {
                    let hj = self.grid.step(j);
                    let sj = strides[j];
                    let v = (neg[k + si + sj] - neg[k + si - sj] - neg[k - si + sj]
                        + neg[k - si - sj])
                        / (4.0 * hi * hj);
                    h[(i, j)] = v;
                    h[(j, i)] = v;
                }
            }
            worst = worst.min(linalg::lambda_min(&h));
        }
        worst
    }

    fn estimate_tail_mass(&self) -> f64 {
        let n = self.grid.dim();
        let strides = self.grid.strides();
        let w = self.grid.trapezoid_weights();
        let mut total = 0.0;
        for k in 0..self.grid.len() {
            let multi = self.grid.multi_index(k);
            for d in 0..n {
                let c = self.grid.counts()[d];
                let h = self.grid.step(d);
                let (inner, at_face) = if multi[d] == 0 {
                    (k + strides[d], true)
                } else if multi[d] + 1 == c {
                    (k - strides[d], true)
                } else {
                    (k, false)
                };
                if !at_face {
                    continue;
                }
                let decay = (self.log_density[inner] - self.log_density[k]) / h;
                let face_weight = w[k] / (0.5 * h);
                let f = self.log_density[k].exp();
                total += if decay > 1e-12 { face_weight * f / decay } else { face_weight * f };
            }
        }
        total
    }

    /// Rejection sampler from the envelope `N(mode, I/kappa)`, valid for any
    /// dimension when the density is `kappa`-strongly log-concave.
    pub fn sample_rejection(&self, kappa: f64, count: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
        let n = self.grid.dim();
        let (mode_idx, lmax) = self
            .log_density
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
        let mode = self.grid.node(mode_idx);
        let sd = 1.0 / kappa.sqrt();
        let mut out = Vec::with_capacity(count);
        let mut proposed = 0usize;
        let mut accepted = 0usize;
        let mut x = vec![0.0; n];
        const TRIAL: usize = 10_000;
        while out.len() < count {
            let mut r2 = 0.0;
            for d in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                x[d] = mode[d] + sd * z;
                r2 += z * z;
            }
            proposed += 1;
            if self.grid.contains(&x) {
                let log_env = lmax - 0.5 * r2;
                let log_ratio = (self.grid.interpolate(&self.log_density, &x) - log_env).min(0.0);
                let u: f64 = rng.random();
                if u.ln() < log_ratio {
                    accepted += 1;
                    out.push(x.clone());
                }
            }
            if proposed == TRIAL && (accepted as f64) / (TRIAL as f64) < 1e-4 {
                return Err(Error::EnvelopeFailure { rate: accepted as f64 / TRIAL as f64 });
            }
        }
        Ok(out)
    }

    fn sample_1d(&self, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        let xs = self.grid.axis_coords(0);
        let sampler = LogLinearCdf::new(&xs, &self.log_density);
        (0..count).map(|_| vec![sampler.draw(rng)]).collect()
    }

    fn sample_2d(&self, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        let c0 = self.grid.counts()[0];
        let c1 = self.grid.counts()[1];
        let x0 = self.grid.axis_coords(0);
        let x1 = self.grid.axis_coords(1);
        let h1 = self.grid.step(1);
        let marginal: Vec<f64> = (0..c0)
            .map(|i| {
                let row = &self.log_density[i * c1..(i + 1) * c1];
                let lmax = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(j, l)| {
                        let w = if j == 0 || j + 1 == c1 { 0.5 * h1 } else { h1 };
                        w * (l - lmax).exp()
                    })
                    .sum();
                lmax + s.ln()
            })
            .collect();
        let outer = LogLinearCdf::new(&x0, &marginal);
        let mut slice = vec![0.0; c1];
        (0..count)
            .map(|_| {
                let a = outer.draw(rng);
                let u = ((a - x0[0]) / self.grid.step(0)).clamp(0.0, (c0 - 1) as f64);
                let i = (u.floor() as usize).min(c0 - 2);
                let f = u - i as f64;
                for (j, s) in slice.iter_mut().enumerate() {
                    *s = (1.0 - f) * self.log_density[i * c1 + j] + f * self.log_density[(i + 1) * c1 + j];
                }
                let b = LogLinearCdf::new(&x1, &slice).draw(rng);
                vec![a, b]
            })
            .collect()
    }
}

/// Prior law ν of the fundamental value.
#[derive(Debug, Clone)]
pub enum PriorSpec {
    Gaussian { mean: Vec<f64>, cov: Mat },
    LogConcaveGrid { density: GriddedDensity, kappa: f64 },
}

impl PriorSpec {
    pub fn gaussian(mean: Vec<f64>, cov: Mat) -> Result<Self> {
        if mean.len() != cov.nrows() {
            return Err(Error::InvalidInput("prior mean and covariance dimensions differ".into()));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("prior mean must be finite".into()));
        }
        linalg::require_spd(&cov, "prior covariance")?;
        Ok(Self::Gaussian { mean, cov })
    }

    /// Grid prior from raw log-density values; checks strong log-concavity
    /// with constant `kappa` at interior nodes.
    pub fn log_concave_grid(grid: RectGrid, log_values: Vec<f64>, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidInput("kappa must be positive and finite".into()));
        }
        let density = GriddedDensity::from_log_values(grid, log_values)?;
        let worst = density.min_log_concavity();
        if worst < kappa * (1.0 - 1e-6) - 1e-9 {
            return Err(Error::InvalidInput(format!(
                "log-density is not {kappa}-strongly concave: smallest discrete curvature {worst}"
            )));
        }
        Ok(Self::LogConcaveGrid { density, kappa })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { mean, .. } => mean.len(),
            Self::LogConcaveGrid { density, .. } => density.grid().dim(),
        }
    }

    /// Strong log-concavity constant.
    pub fn kappa(&self) -> f64 {
        match self {
            Self::Gaussian { cov, .. } => 1.0 / linalg::lambda_max(cov),
            Self::LogConcaveGrid { kappa, .. } => *kappa,
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            Self::Gaussian { mean, .. } => mean.clone(),
            Self::LogConcaveGrid { density, .. } => density.mean(),
        }
    }

    pub fn covariance(&self) -> Mat {
        match self {
            Self::Gaussian { cov, .. } => cov.clone(),
            Self::LogConcaveGrid { density, .. } => density.covariance(),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("density argument must be finite".into()));
        }
        match self {
            Self::Gaussian { mean, cov } => {
                let n = mean.len();
                let d = linalg::Vector::from_iterator(n, x.iter().zip(mean).map(|(a, b)| a - b));
                let chol = cov.clone().cholesky().expect("validated SPD");
                let y = chol.solve(&d);
                let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
                Ok(-0.5 * d.dot(&y) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln())
            }
            Self::LogConcaveGrid { density, .. } => density.log_density_at(x),
        }
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        self.log_density(x).map(f64::exp)
    }

    /// Discarded-mass estimate for grid priors; zero for Gaussians.
    pub fn discarded_mass(&self) -> f64 {
        match self {
            Self::Gaussian { .. } => 0.0,
            Self::LogConcaveGrid { density, .. } => density.discarded_mass(),
        }
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        self.sample_with(count, &mut rng)
    }

    pub fn sample_with(&self, count: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Err(Error::InvalidInput("sample count must be at least 1".into()));
        }
        match self {
            Self::Gaussian { mean, cov } => {
                let n = mean.len();
                let l = cov.clone().cholesky().expect("validated SPD").l();
                let mut z = vec![0.0; n];
                Ok((0..count)
                    .map(|_| {
                        for zi in z.iter_mut() {
                            *zi = rng.sample(StandardNormal);
                        }
                        (0..n)
                            .map(|i| mean[i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>())
                            .collect()
                    })
                    .collect())
            }
            Self::LogConcaveGrid { density, kappa } => match density.grid().dim() {
                1 => Ok(density.sample_1d(count, rng)),
                2 => Ok(density.sample_2d(count, rng)),
                _ => density.sample_rejection(*kappa, count, rng),
            },
        }
    }
}

/// Market parameters: horizon, noise volatility, risk aversion, prior.
#[derive(Debug, Clone)]
pub struct MarketParams {
    pub n: usize,
    pub horizon: f64,
    pub sigma: Mat,
    pub gamma: f64,
    pub prior: PriorSpec,
}

impl MarketParams {
    pub fn new(horizon: f64, sigma: Mat, gamma: f64, prior: PriorSpec) -> Result<Self> {
        let n = sigma.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("sigma must be nonempty".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput("horizon must be positive and finite".into()));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidInput("gamma must be nonnegative and finite".into()));
        }
        linalg::require_spd(&sigma, "sigma")?;
        if prior.dim() != n {
            return Err(Error::InvalidInput(format!(
                "prior dimension {} does not match sigma dimension {n}",
                prior.dim()
            )));
        }
        let p = Self { n, horizon, sigma, gamma, prior };
        if gamma >= p.gamma0() {
            warn!(
                "risk aversion {} is not below gamma0 = {}; the fixed point may not exist",
                gamma,
                p.gamma0()
            );
        }
        Ok(p)
    }

    pub fn sigma_max(&self) -> f64 {
        linalg::lambda_max(&self.sigma)
    }

    pub fn sigma2(&self) -> Mat {
        &self.sigma * &self.sigma
    }

    pub fn sigma_inv(&self) -> Mat {
        linalg::inv_spd(&self.sigma)
    }

    pub fn kappa(&self) -> f64 {
        self.prior.kappa()
    }

    /// Largest admissible risk aversion `sqrt(κ) / (2 λmax(σ) sqrt(T))`.
    pub fn gamma0(&self) -> f64 {
        self.kappa().sqrt() / (2.0 * self.sigma_max() * self.horizon.sqrt())
    }

    /// Hessian cap `1 / (λmax(σ) sqrt(κ T))` of the equilibrium potential.
    pub fn l_bound(&self) -> f64 {
        1.0 / (self.sigma_max() * (self.kappa() * self.horizon).sqrt())
    }

    /// `l γ λmax(σ)² T`; must stay below one for the value function to exist.
    pub fn integrability(&self, l: f64) -> f64 {
        l * self.gamma * self.sigma_max().powi(2) * self.horizon
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal_grid(counts: usize) -> PriorSpec {
        let grid = RectGrid::centered(&[0.0], &[6.0], &[counts]).unwrap();
        let logs = grid.nodes().iter().map(|x| -0.5 * x[0] * x[0]).collect();
        PriorSpec::log_concave_grid(grid, logs, 1.0).unwrap()
    }

    #[test]
    fn gaussian_density_at_mode() {
        let p = PriorSpec::gaussian(vec![0.0], Mat::identity(1, 1)).unwrap();
        assert!((p.density(&[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        let p = PriorSpec::gaussian(vec![1.0, 1.0], Mat::identity(2, 2)).unwrap();
        assert!((p.density(&[1.0, 1.0]).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn grid_density_matches_normal() {
        let p = std_normal_grid(1201);
        let exact = (-0.5f64).exp() / (2.0 * PI).sqrt();
        assert!((p.density(&[1.0]).unwrap() - exact).abs() < 1e-4);
        assert!(matches!(p.density(&[7.0]), Err(Error::OutOfDomain { .. })));
        assert!(p.discarded_mass() < 1e-7);
    }

    #[test]
    fn grid_rejects_non_log_concave() {
        let grid = RectGrid::centered(&[0.0], &[3.0], &[61]).unwrap();
        let logs = grid.nodes().iter().map(|x| -0.25 * x[0] * x[0]).collect();
        assert!(PriorSpec::log_concave_grid(grid, logs, 1.0).is_err());
    }

    #[test]
    fn gamma0_and_l_bound() {
        let p = PriorSpec::gaussian(vec![0.0], Mat::from_element(1, 1, 4.0)).unwrap();
        let m = MarketParams::new(1.0, Mat::from_element(1, 1, 2.0), 0.0, p).unwrap();
        assert!((m.kappa() - 0.25).abs() < 1e-15);
        assert!((m.gamma0() - 0.125).abs() < 1e-15);
        assert!((m.l_bound() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_samples_are_centred_and_reproducible() {
        let p = PriorSpec::gaussian(vec![0.0, 0.0], Mat::identity(2, 2)).unwrap();
        let xs = p.sample(100_000, 7).unwrap();
        for d in 0..2 {
            let m = xs.iter().map(|x| x[d]).sum::<f64>() / xs.len() as f64;
            assert!(m.abs() < 4.0 / (1e5f64).sqrt(), "{m}");
        }
        assert_eq!(xs, p.sample(100_000, 7).unwrap());
    }

    #[test]
    fn grid_samples_have_unit_variance() {
        let xs = std_normal_grid(1201).sample(100_000, 3).unwrap();
        let v: Vec<f64> = xs.iter().map(|x| x[0]).collect();
        assert!((crate::stats::variance(&v) - 1.0).abs() < 0.02);
    }

    #[test]
    fn densities_integrate_to_one() {
        let p = std_normal_grid(1201);
        if let PriorSpec::LogConcaveGrid { density, .. } = &p {
            let g = density.grid();
            let w = g.trapezoid_weights();
            let total: f64 = (0..g.len()).map(|k| w[k] * p.density(&g.node(k)).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-4, "{total}");
        }
        let cov = crate::linalg::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.5]]).unwrap();
        let p = PriorSpec::gaussian(vec![0.2, -0.1], cov).unwrap();
        let g = RectGrid::centered(&[0.2, -0.1], &[7.0, 5.0], &[281, 201]).unwrap();
        let w = g.trapezoid_weights();
        let total: f64 = (0..g.len()).map(|k| w[k] * p.density(&g.node(k)).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn gaussian_samples_fit_their_density() {
        let p = PriorSpec::gaussian(vec![1.0], Mat::from_element(1, 1, 4.0)).unwrap();
        let xs: Vec<f64> = p.sample(100_000, 11).unwrap().into_iter().map(|x| x[0]).collect();
        let test = crate::stats::chi_square_equiprobable(&xs, 20, |u| 1.0 + 2.0 * crate::stats::normal_quantile(u));
        assert!(test.p_value > 1e-3, "{test:?}");
    }

    #[test]
    fn rejection_sampler_fails_with_wrong_kappa() {
        let p = std_normal_grid(241);
        if let PriorSpec::LogConcaveGrid { density, .. } = &p {
            let mut rng = ChaCha20Rng::seed_from_u64(1);
            let r = density.sample_rejection(1e-12, 10, &mut rng);
            assert!(matches!(r, Err(Error::EnvelopeFailure { .. })));
        }
    }
}
