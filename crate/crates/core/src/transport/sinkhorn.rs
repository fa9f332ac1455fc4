use log::{debug, warn};

use super::{
    affine_fit, integrate_gradient_field, moment_errors, operator_norm, EpsilonStage, TransportDiagnostics,
    TransportResult, TransportTarget, CURL_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::grid::RectGrid;
use crate::linalg::{self, Mat};
use crate::market::GriddedDensity;
use crate::potential::{ConvexPotential, MAX_DIM};

#[derive(Debug, Clone)]
pub struct SinkhornOptions {
    /// Final regularization; defaults to the square of the largest grid step.
    pub eps_min: Option<f64>,
    /// First stage uses `eps_min · start_factor`.
    pub start_factor: f64,
    /// Ratio between successive stages.
    pub anneal: f64,
    /// Target-marginal L¹ error required at the final stage.
    pub tol: f64,
    /// Error at which intermediate stages stop.
    pub stage_tol: f64,
    pub max_iter: usize,
    /// Subtract the self-transport bias of the source.
    pub debias: bool,
    /// Linear map to measure the per-stage operator-norm gap against.
    pub reference: Option<Mat>,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            eps_min: None,
            start_factor: 64.0,
            anneal: 0.5,
            tol: 1e-7,
            stage_tol: 1e-4,
            max_iter: 50_000,
            debias: true,
            reference: None,
        }
    }
}

/// `out_o = LSE_i (input_i − |to_o − from_i|² / 2ε)` over tensor grids,
/// one axis at a time.
fn contract(input: &[f64], from: &[Vec<f64>], to: &[Vec<f64>], eps: f64) -> Vec<f64> {
    let n = from.len();
    let mut shape: Vec<usize> = from.iter().map(|a| a.len()).collect();
    let mut cur = input.to_vec();
    for d in 0..n {
        let ni = shape[d];
        let no = to[d].len();
        let outer: usize = shape[..d].iter().product();
        let inner: usize = shape[d + 1..].iter().product();
        let cost: Vec<f64> = (0..no * ni)
            .map(|k| (to[d][k / ni] - from[d][k % ni]).powi(2) / (2.0 * eps))
            .collect();
        let mut next = vec![0.0; outer * no * inner];
        let mut fiber = vec![0.0; ni];
        for a in 0..outer {
            for c in 0..inner {
                for (i, f) in fiber.iter_mut().enumerate() {
                    *f = cur[(a * ni + i) * inner + c];
                }
                for o in 0..no {
                    let row = &cost[o * ni..(o + 1) * ni];
                    let mut mx = f64::NEG_INFINITY;
                    for i in 0..ni {
                        mx = mx.max(fiber[i] - row[i]);
                    }
                    let mut s = 0.0;
                    for i in 0..ni {
                        s += (fiber[i] - row[i] - mx).exp();
                    }
                    next[(a * no + o) * inner + c] = mx + s.ln();
                }
            }
        }
        shape[d] = no;
        cur = next;
    }
    cur
}

/// Entropic transport between two tensor-grid measures.
struct Problem {
    src: Vec<Vec<f64>>,
    tgt: Vec<Vec<f64>>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    b: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl Problem {
    fn new(src: &GriddedDensity, tgt: &GriddedDensity) -> Self {
        let axes = |d: &GriddedDensity| (0..d.grid().dim()).map(|i| d.grid().axis_coords(i)).collect::<Vec<_>>();
        let a = src.masses();
        let b = tgt.masses();
        Self {
            src: axes(src),
            tgt: axes(tgt),
            log_a: a.iter().map(|v| v.max(1e-300).ln()).collect(),
            log_b: b.iter().map(|v| v.max(1e-300).ln()).collect(),
            f: vec![0.0; a.len()],
            g: vec![0.0; b.len()],
            b,
        }
    }

    fn update_f(&mut self, eps: f64) {
        let u: Vec<f64> = self.g.iter().zip(&self.log_b).map(|(g, l)| g / eps + l).collect();
        self.f = contract(&u, &self.tgt, &self.src, eps).into_iter().map(|v| -eps * v).collect();
    }

    /// Updates `g` and returns the target-marginal L¹ error before the update.
    fn update_g(&mut self, eps: f64) -> f64 {
        let v: Vec<f64> = self.f.iter().zip(&self.log_a).map(|(f, l)| f / eps + l).collect();
        let gn: Vec<f64> = contract(&v, &self.src, &self.tgt, eps).into_iter().map(|v| -eps * v).collect();
        let err = self
            .g
            .iter()
            .zip(&gn)
            .zip(&self.b)
            .map(|((g, n), b)| b * ((g - n) / eps).exp_m1().abs())
            .sum();
        self.g = gn;
        err
    }

    fn run(&mut self, eps: f64, tol: f64, max_iter: usize) -> (usize, f64) {
        let mut err = f64::INFINITY;
        let mut it = 0;
        while it < max_iter {
            it += 1;
            self.update_f(eps);
            err = self.update_g(eps);
            if !err.is_finite() || err < tol {
                break;
            }
        }
        (it, err)
    }

    /// Barycentric projection `E_π[y | x]` at every source node.
    fn barycentric(&mut self, eps: f64) -> Vec<f64> {
        self.update_f(eps);
        let n = self.src.len();
        let len = self.f.len();
        let mut map = vec![0.0; len * n];
        for d in 0..n {
            let shift = self.tgt[d][0] - 1.0;
            let strides: usize = self.tgt[d + 1..].iter().map(|a| a.len()).product();
            let count = self.tgt[d].len();
            let u: Vec<f64> = (0..self.g.len())
                .map(|j| {
                    let y = self.tgt[d][(j / strides) % count];
                    self.g[j] / eps + self.log_b[j] + (y - shift).ln()
                })
                .collect();
            let s = contract(&u, &self.tgt, &self.src, eps);
            for i in 0..len {
                map[i * n + d] = shift + (self.f[i] / eps + s[i]).exp();
            }
        }
        map
    }
}

/// Tabulate a Gaussian on its own grid: ±6.5 standard deviations per axis
/// with a step close to `step`.
pub fn tabulate_gaussian(mean: &[f64], cov: &Mat, step: f64) -> Result<GriddedDensity> {
    let n = mean.len();
    linalg::require_spd(cov, "Gaussian target covariance")?;
    let half: Vec<f64> = (0..n).map(|i| 6.5 * cov[(i, i)].sqrt()).collect();
    let counts: Vec<usize> = half
        .iter()
        .map(|h| ((((2.0 * h / step).ceil() as usize) | 1).clamp(21, 161)) | 1)
        .collect();
    let grid = RectGrid::centered(mean, &half, &counts)?;
    let prec = linalg::inv_spd(cov);
    let logs = grid
        .nodes()
        .iter()
        .map(|y| {
            let d: Vec<f64> = y.iter().zip(mean).map(|(a, b)| a - b).collect();
            let mut q = 0.0;
            for i in 0..n {
                for j in 0..n {
                    q += d[i] * prec[(i, j)] * d[j];
                }
            }
            -0.5 * q
        })
        .collect();
    GriddedDensity::from_log_values(grid, logs)
}

/// Brenier map by annealed, debiased entropic transport on tensor grids.
///
/// The map at each source node is the barycentric projection of the entropic
/// plan minus that of the source's own self-transport plus the identity,
/// which cancels the leading-order blur. The potential is the least-squares
/// integral of the resulting field.
pub fn brenier_nd(
    source: &GriddedDensity,
    target: &TransportTarget,
    l_bound: f64,
    opts: &SinkhornOptions,
) -> Result<TransportResult> {
    let grid = source.grid().clone();
    let n = grid.dim();
    if n == 0 || n > MAX_DIM || target.dim() != n {
        return Err(Error::InvalidInput("brenier_nd needs matching dimensions up to 3".into()));
    }
    let tgt = match target {
        TransportTarget::Gaussian { mean, cov } => tabulate_gaussian(mean, cov, grid.max_step())?,
        TransportTarget::Gridded(d) => d.clone(),
    };
    let h = grid.max_step().max(tgt.grid().max_step());
    let eps_min = opts.eps_min.unwrap_or(h * h);
    if !(eps_min > 0.0) || !(opts.anneal > 0.0 && opts.anneal < 1.0) || opts.start_factor < 1.0 {
        return Err(Error::InvalidInput("invalid annealing schedule".into()));
    }
    let mut schedule = Vec::new();
    let mut eps = eps_min * opts.start_factor;
    while eps > eps_min * (1.0 + 1e-9) {
        schedule.push(eps);
        eps *= opts.anneal;
    }
    schedule.push(eps_min);

    let mut main = Problem::new(source, &tgt);
    let mut own = if opts.debias { Some(Problem::new(source, source)) } else { None };
    let masses = source.masses();
    let nodes = grid.nodes();
    let mut stages = Vec::new();
    let mut total_iter = 0;
    let mut final_err = f64::INFINITY;
    let mut map = Vec::new();
    for (s, &eps) in schedule.iter().enumerate() {
        let last = s + 1 == schedule.len();
        let tol = if last { opts.tol } else { opts.stage_tol };
        let (it, err) = main.run(eps, tol, opts.max_iter);
        if let Some(p) = own.as_mut() {
            p.run(eps, tol, opts.max_iter);
        }
        total_iter += it;
        final_err = err;
        let raw = main.barycentric(eps);
        let debiased = match own.as_mut() {
            Some(p) => {
                let selfmap = p.barycentric(eps);
                (0..raw.len()).map(|k| raw[k] - selfmap[k] + nodes[k / n][k % n]).collect()
            }
            None => raw.clone(),
        };
        let (raw_gap, debiased_gap) = match &opts.reference {
            Some(r) => (
                Some(operator_norm(&(affine_fit(&grid, &masses, &raw) - r))),
                Some(operator_norm(&(affine_fit(&grid, &masses, &debiased) - r))),
            ),
            None => (None, None),
        };
        debug!("sinkhorn stage eps={eps:.3e} iterations={it} marginal error={err:.3e}");
        stages.push(EpsilonStage { epsilon: eps, iterations: it, marginal_error: err, raw_gap, debiased_gap });
        if last {
            map = debiased;
        }
    }
    if !(final_err < opts.tol) {
        return Err(Error::NoConvergence { iterations: total_iter, last_error: final_err });
    }
    let field = integrate_gradient_field(&grid, &map)
        .ok_or_else(|| Error::InvalidInput("source grid must contain the origin as a node".into()))?;
    let non_integrable = field.curl_residual > CURL_TOLERANCE;
    if non_integrable {
        warn!("map field is not integrable: curl residual {:.3}", field.curl_residual);
    }
    let potential = ConvexPotential::assemble(grid.clone(), field.values, map.clone(), l_bound)?;
    let cost = (0..grid.len())
        .map(|k| masses[k] * (0..n).map(|d| (nodes[k][d] - map[k * n + d]).powi(2)).sum::<f64>())
        .sum();
    let (me, ce) = moment_errors(&masses, &map, n, target);
    let diagnostics = TransportDiagnostics {
        iterations: total_iter,
        marginal_error: final_err,
        relative_mean_error: me,
        relative_cov_error: ce,
        curl_residual: field.curl_residual,
        non_integrable,
        schedule: stages,
        ..Default::default()
    };
    Ok(TransportResult { potential, map_values: map, cost, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::brenier_gaussian;

    fn std_normal_source(c: usize) -> GriddedDensity {
        let g = RectGrid::centered(&[0.0, 0.0], &[6.0, 6.0], &[c, c]).unwrap();
        let logs = g.nodes().iter().map(|x| -0.5 * (x[0] * x[0] + x[1] * x[1])).collect();
        GriddedDensity::from_log_values(g, logs).unwrap()
    }

    #[test]
    fn contraction_matches_dense_sum() {
        let from = vec![vec![0.0, 1.0, 2.0], vec![-1.0, 1.0]];
        let to = vec![vec![0.5, 1.5], vec![0.0, 2.0, 3.0]];
        let input = vec![0.1, -0.2, 0.3, 0.0, -1.0, 0.5];
        let out = contract(&input, &from, &to, 0.7);
        for o0 in 0..2 {
            for o1 in 0..3 {
                let mut s = 0.0;
                for i0 in 0..3 {
                    for i1 in 0..2 {
                        let c = (to[0][o0] - from[0][i0]).powi(2) + (to[1][o1] - from[1][i1]).powi(2);
                        s += (input[i0 * 2 + i1] - c / 1.4).exp();
                    }
                }
                assert!((out[o0 * 3 + o1] - s.ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_transport_is_identity() {
        let src = std_normal_source(25);
        let target = TransportTarget::Gridded(src.clone());
        let res = brenier_nd(&src, &target, 2.0, &SinkhornOptions::default()).unwrap();
        let g = src.grid();
        for k in 0..g.len() {
            let x = g.node(k);
            if x.iter().all(|v| v.abs() <= 3.0) {
                for d in 0..2 {
                    assert!((res.map_values[k * 2 + d] - x[d]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn diagonal_gaussian_matches_closed_form() {
        let src = std_normal_source(31);
        let cov = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 0.25]));
        let lin = brenier_gaussian(&[0.0, 0.0], &Mat::identity(2, 2), &[0.0, 0.0], &cov).unwrap();
        let opts = SinkhornOptions { reference: Some(lin.lambda.clone()), ..Default::default() };
        let target = TransportTarget::Gaussian { mean: vec![0.0, 0.0], cov };
        let res = brenier_nd(&src, &target, 3.0, &opts).unwrap();
        let fit = affine_fit(src.grid(), &src.masses(), &res.map_values);
        assert!(operator_norm(&(fit - &lin.lambda)) < 0.02 * operator_norm(&lin.lambda));
        assert!(res.diagnostics.relative_cov_error < 0.02 && res.diagnostics.relative_mean_error < 0.02);
        assert!(!res.diagnostics.non_integrable);
        let raw: Vec<f64> = res.diagnostics.schedule.iter().map(|s| s.raw_gap.unwrap()).collect();
        assert!(raw.windows(2).all(|w| w[1] <= w[0]), "{raw:?}");
    }
}
