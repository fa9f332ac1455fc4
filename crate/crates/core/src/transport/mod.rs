//! Quadratic-cost optimal transport and Brenier potentials.

mod exact;
mod integrate;
mod one_d;
mod sinkhorn;

pub use exact::{assignment_exhaustive, sinkhorn_dense, DensePlan};
pub use integrate::{integrate_gradient_field, IntegratedField};
pub use one_d::brenier_1d;
pub(crate) use one_d::TargetCdf;
pub use sinkhorn::{brenier_nd, tabulate_gaussian, SinkhornOptions};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::RectGrid;
use crate::linalg::{self, Mat};
use crate::market::{GriddedDensity, PriorSpec};
use crate::potential::ConvexPotential;

/// Curl residual above which a map field is flagged as non-integrable.
pub const CURL_TOLERANCE: f64 = 0.05;

/// Target measure of a transport problem.
#[derive(Debug, Clone)]
pub enum TransportTarget {
    Gaussian { mean: Vec<f64>, cov: Mat },
    Gridded(GriddedDensity),
}

impl TransportTarget {
    pub fn from_prior(prior: &PriorSpec) -> Self {
        match prior {
            PriorSpec::Gaussian { mean, cov } => Self::Gaussian { mean: mean.clone(), cov: cov.clone() },
            PriorSpec::LogConcaveGrid { density, .. } => Self::Gridded(density.clone()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { mean, .. } => mean.len(),
            Self::Gridded(d) => d.grid().dim(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            Self::Gaussian { mean, .. } => mean.clone(),
            Self::Gridded(d) => d.mean(),
        }
    }

    pub fn covariance(&self) -> Mat {
        match self {
            Self::Gaussian { cov, .. } => cov.clone(),
            Self::Gridded(d) => d.covariance(),
        }
    }
}

/// One stage of the ε-annealing schedule.
#[derive(Debug, Clone, Serialize)]
pub struct EpsilonStage {
    pub epsilon: f64,
    pub iterations: usize,
    pub marginal_error: f64,
    /// Operator-norm gap between the affine fit of the raw entropic map and
    /// the reference linear map, when one was supplied.
    pub raw_gap: Option<f64>,
    /// Same gap after debiasing.
    pub debiased_gap: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TransportDiagnostics {
    pub iterations: usize,
    pub marginal_error: f64,
    /// Sup distance between the CDFs of the pushforward and the target (1D).
    pub ks_distance: Option<f64>,
    /// Nodes where the source CDF reached 0 or 1 and the gradient was held.
    pub quantile_clips: usize,
    pub relative_mean_error: f64,
    pub relative_cov_error: f64,
    pub curl_residual: f64,
    pub non_integrable: bool,
    pub schedule: Vec<EpsilonStage>,
}

#[derive(Debug, Clone)]
pub struct TransportResult {
    pub potential: ConvexPotential,
    /// Map value `Dφ` at each source node, `n` per node.
    pub map_values: Vec<f64>,
    /// `∫|x − Dφ(x)|² dμ`.
    pub cost: f64,
    pub diagnostics: TransportDiagnostics,
}

impl TransportResult {
    /// Node table with columns `x0.., map0.., value`.
    pub fn to_csv(&self) -> String {
        let grid = self.potential.grid();
        let n = grid.dim();
        let mut out = String::new();
        let head: Vec<String> = (0..n)
            .map(|d| format!("x{d}"))
            .chain((0..n).map(|d| format!("map{d}")))
            .chain(std::iter::once("value".to_string()))
            .collect();
        out.push_str(&head.join(","));
        out.push('\n');
        for k in 0..grid.len() {
            let mut row: Vec<String> = grid.node(k).iter().map(|v| format!("{v:e}")).collect();
            row.extend(self.map_values[k * n..(k + 1) * n].iter().map(|v| format!("{v:e}")));
            row.push(format!("{:e}", self.potential.values()[k]));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Linear Brenier map `x ↦ Λx + offset` between two Gaussians.
#[derive(Debug, Clone)]
pub struct LinearMap {
    pub lambda: Mat,
    pub offset: Vec<f64>,
}

/// `Λ = S₁⁻¹(S₁S₂²S₁)^{1/2}S₁⁻¹`, the symmetric positive solution of `ΛS₁²Λ = S₂²`.
pub fn brenier_gaussian(m1: &[f64], cov1: &Mat, m2: &[f64], cov2: &Mat) -> Result<LinearMap> {
    let n = m1.len();
    if m2.len() != n || cov1.nrows() != n || cov2.nrows() != n {
        return Err(Error::InvalidInput("Gaussian transport dimensions disagree".into()));
    }
    linalg::require_spd(cov1, "source covariance")?;
    linalg::require_spd(cov2, "target covariance")?;
    let s1 = linalg::sqrtm_spd(cov1);
    let s1_inv = linalg::inv_sqrtm_spd(cov1);
    let mid = linalg::sqrtm_spd(&linalg::symmetrize(&(&s1 * cov2 * &s1)));
    let lambda = linalg::symmetrize(&(&s1_inv * mid * &s1_inv));
    let check = &lambda * cov1 * &lambda - cov2;
    if check.norm() > 1e-10 * cov2.norm() {
        return Err(Error::InvalidInput(format!(
            "Gaussian Brenier map fails its defining identity by {}",
            check.norm() / cov2.norm()
        )));
    }
    let lm = &lambda * nalgebra::DVector::from_column_slice(m1);
    let offset = (0..n).map(|i| m2[i] - lm[i]).collect();
    Ok(LinearMap { lambda, offset })
}

/// Largest eigenvalue of the discrete Hessian of the potential over nodes
/// whose difference stencil stays off the boundary layer.
pub fn hessian_cap_check(res: &TransportResult) -> f64 {
    res.potential.max_curvature_in(stencil_interior(res.potential.grid()).as_ref())
}

/// Box of nodes at least two steps from every face, if there are any.
pub fn stencil_interior(grid: &RectGrid) -> Option<RectGrid> {
    if grid.counts().iter().any(|&c| c < 5) {
        return None;
    }
    let lower = (0..grid.dim()).map(|d| grid.lower()[d] + 1.999 * grid.step(d)).collect();
    let upper = (0..grid.dim()).map(|d| grid.upper()[d] - 1.999 * grid.step(d)).collect();
    RectGrid::new(lower, upper, grid.counts().iter().map(|c| c - 4).collect()).ok()
}

/// Same as [`hessian_cap_check`] restricted to nodes inside `region`.
pub fn hessian_cap_check_in(res: &TransportResult, region: &RectGrid) -> f64 {
    res.potential.max_curvature_in(Some(region))
}

/// Mean and covariance errors of the pushforward, relative to the target scale.
pub(crate) fn moment_errors(masses: &[f64], map: &[f64], n: usize, target: &TransportTarget) -> (f64, f64) {
    let mut mean = vec![0.0; n];
    for (k, w) in masses.iter().enumerate() {
        for d in 0..n {
            mean[d] += w * map[k * n + d];
        }
    }
    let mut cov = Mat::zeros(n, n);
    for (k, w) in masses.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] += w * (map[k * n + i] - mean[i]) * (map[k * n + j] - mean[j]);
            }
        }
    }
    let tm = target.mean();
    let tc = target.covariance();
    let scale = tc.trace().sqrt();
    let dm: f64 = mean.iter().zip(&tm).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    (dm / scale, (cov - &tc).norm() / tc.norm())
}

/// Weighted least-squares affine fit `map ≈ Lx + c`; returns `L`.
pub fn affine_fit(grid: &RectGrid, masses: &[f64], map: &[f64]) -> Mat {
    let n = grid.dim();
    let mut xm = vec![0.0; n];
    let mut ym = vec![0.0; n];
    for k in 0..grid.len() {
        let x = grid.node(k);
        for d in 0..n {
            xm[d] += masses[k] * x[d];
            ym[d] += masses[k] * map[k * n + d];
        }
    }
    let mut sxx = Mat::zeros(n, n);
    let mut syx = Mat::zeros(n, n);
    for k in 0..grid.len() {
        let x = grid.node(k);
        for i in 0..n {
            for j in 0..n {
                sxx[(i, j)] += masses[k] * (x[i] - xm[i]) * (x[j] - xm[j]);
                syx[(i, j)] += masses[k] * (map[k * n + i] - ym[i]) * (x[j] - xm[j]);
            }
        }
    }
    syx * linalg::inv_spd(&sxx)
}

/// Operator (spectral) norm of a square matrix.
pub fn operator_norm(m: &Mat) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_identity_and_diagonal() {
        let id = Mat::identity(2, 2);
        let m = brenier_gaussian(&[1.0, 2.0], &id, &[1.0, 2.0], &id).unwrap();
        assert!((m.lambda.clone() - &id).norm() < 1e-14 && m.offset.iter().all(|v| v.abs() < 1e-14));
        let t = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
        let m = brenier_gaussian(&[0.0, 0.0], &id, &[0.5, 0.0], &t).unwrap();
        assert!((m.lambda[(0, 0)] - 2.0).abs() < 1e-12 && (m.lambda[(1, 1)] - 3.0).abs() < 1e-12);
        assert!(m.lambda[(0, 1)].abs() < 1e-12 && (m.offset[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn gaussian_one_dimensional_ratio() {
        let a = Mat::from_element(1, 1, 4.0);
        let b = Mat::from_element(1, 1, 0.25);
        let m = brenier_gaussian(&[1.0], &a, &[3.0], &b).unwrap();
        assert!((m.lambda[(0, 0)] - 0.25).abs() < 1e-14);
        assert!((m.offset[0] - 2.75).abs() < 1e-14);
    }

    #[test]
    fn gaussian_correlated_satisfies_identity() {
        let a = linalg::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let b = linalg::from_rows(&[vec![1.0, -0.3], vec![-0.3, 3.0]]).unwrap();
        let m = brenier_gaussian(&[0.0, 0.0], &a, &[0.0, 0.0], &b).unwrap();
        assert!((&m.lambda * &a * &m.lambda - &b).norm() < 1e-12);
        assert!(linalg::is_spd(&m.lambda));
    }
}
