//! Picard iteration `φ ↦ M(φ)` between the terminal law μ^φ and the Brenier map to ν.

use std::sync::Arc;

use log::{info, warn};
use serde::Serialize;

use crate::cdf::LogLinearCdf;
use crate::density::{default_mu_grid, TransitionDensity};
use crate::error::{Error, Result};
use crate::grid::RectGrid;
use crate::linalg;
use crate::market::{GriddedDensity, MarketParams};
use crate::potential::{ConvexPotential, Potential};
use crate::transport::{
    brenier_1d, brenier_nd, moment_errors, stencil_interior, SinkhornOptions, TargetCdf, TransportResult,
    TransportTarget,
};

/// Allowed excess of the Hessian cap before an iterate is clipped.
pub const CAP_SLACK: f64 = 1.05;

/// Floor of the denominator of the Monge–Ampère residual.
pub const MA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FixedPointConfig {
    pub max_iters: usize,
    /// Sup-norm tolerance on the gradient change over `compact`.
    pub grad_tol: f64,
    /// Initial damping θ; halved whenever successive updates point in
    /// opposing directions.
    pub damping: f64,
    /// Convergence box; defaults to four standard deviations of N(0, Tσ²).
    pub compact: Option<RectGrid>,
    /// Nodes per axis of the μ^φ grid.
    pub nodes_per_axis: usize,
    pub sinkhorn: SinkhornOptions,
}

impl FixedPointConfig {
    pub fn for_dim(n: usize) -> Self {
        Self {
            max_iters: 100,
            grad_tol: if n == 1 { 1e-5 } else { 1e-3 },
            damping: 1.0,
            compact: None,
            nodes_per_axis: if n == 1 { 801 } else { 41 },
            sinkhorn: SinkhornOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `sup |D M(φ_k) − Dφ_k|` over the compact.
    pub grad_change: f64,
    pub theta: f64,
    /// `λmax(D²φ_{k+1})` over stencil-interior nodes.
    pub hessian_max: f64,
    /// Distance between `(Dφ_k)♯μ^{φ_k}` and ν.
    pub pushforward_error: f64,
    pub captured_mass: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone)]
pub struct FixedPointReport {
    pub potential: ConvexPotential,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub initial_pushforward_error: f64,
    pub final_pushforward_error: f64,
    /// Largest relative Monge–Ampère residual over the compact.
    pub ma_residual: f64,
    pub l_bound: f64,
    pub clip_events: usize,
    /// Relative change of μ^φ under a linear shift of φ at the first iteration.
    pub shift_invariance: f64,
    pub initialization: String,
    pub compact: RectGrid,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    converged: bool,
    iterations: usize,
    l_bound: f64,
    clip_events: usize,
    initial_pushforward_error: f64,
    final_pushforward_error: f64,
    ma_residual: f64,
    shift_invariance: f64,
    initialization: &'a str,
    gradient_at_origin: Vec<f64>,
    hessian_at_origin: Vec<f64>,
    history: &'a [IterationRecord],
}

impl FixedPointReport {
    pub fn to_json(&self) -> serde_json::Value {
        let n = self.potential.grid().dim();
        let o = vec![0.0; n];
        let h = self.potential.hess_mat(&o);
        serde_json::to_value(ReportJson {
            converged: self.converged,
            iterations: self.iterations,
            l_bound: self.l_bound,
            clip_events: self.clip_events,
            initial_pushforward_error: self.initial_pushforward_error,
            final_pushforward_error: self.final_pushforward_error,
            ma_residual: self.ma_residual,
            shift_invariance: self.shift_invariance,
            initialization: &self.initialization,
            gradient_at_origin: self.potential.grad_vec(&o),
            hessian_at_origin: linalg::to_rows(&h).concat(),
            history: &self.history,
        })
        .expect("report fields are serializable")
    }

    /// `Err(NoConvergence)` unless the iteration converged.
    pub fn require_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            let last = self.history.last().map_or(f64::INFINITY, |r| r.grad_change);
            Err(Error::NoConvergence { iterations: self.iterations, last_error: last })
        }
    }
}

/// Four-standard-deviation box of N(0, Tσ²).
pub fn default_compact(params: &MarketParams, nodes_per_axis: usize) -> Result<RectGrid> {
    let n = params.n;
    let s2 = params.sigma2();
    let half: Vec<f64> = (0..n).map(|i| 4.0 * (params.horizon * s2[(i, i)]).sqrt()).collect();
    RectGrid::centered(&vec![0.0; n], &half, &vec![nodes_per_axis | 1; n])
}

fn transport(source: &GriddedDensity, target: &TransportTarget, l: f64, cfg: &FixedPointConfig) -> Result<TransportResult> {
    if source.grid().dim() == 1 {
        brenier_1d(source, target, l)
    } else {
        brenier_nd(source, target, l, &cfg.sinkhorn)
    }
}

/// Distance between `(Dφ)♯μ` and ν: the CDF sup distance in one dimension,
/// the larger relative moment error otherwise.
pub fn pushforward_error(phi: &ConvexPotential, mu: &GriddedDensity, target: &TransportTarget) -> f64 {
    let grid = mu.grid();
    let n = grid.dim();
    if n == 1 {
        let xs = grid.axis_coords(0);
        let src = LogLinearCdf::with_tails(&xs, mu.log_values());
        let tgt = TargetCdf::new(target);
        const REFINE: usize = 4;
        let mut worst: f64 = 0.0;
        for i in 0..xs.len() - 1 {
            for s in 0..REFINE {
                let x = xs[i] + (xs[i + 1] - xs[i]) * s as f64 / REFINE as f64;
                let (slo, sup) = src.cdf_pair(x);
                let (tlo, tup) = tgt.cdf_pair(phi.grad_vec(&[x])[0]);
                worst = worst.max(if slo <= sup { (slo - tlo).abs() } else { (sup - tup).abs() });
            }
        }
        worst
    } else {
        let map: Vec<f64> = grid.nodes().iter().flat_map(|x| phi.grad_vec(x)).collect();
        let (me, ce) = moment_errors(&mu.masses(), &map, n, target);
        me.max(ce)
    }
}

/// Gradient differences `D other − D phi` at the compact's nodes.
fn gradient_increment(phi: &ConvexPotential, other: &ConvexPotential, compact: &RectGrid) -> Vec<f64> {
    compact
        .nodes()
        .iter()
        .flat_map(|x| {
            let a = phi.grad_vec(x);
            let b = other.grad_vec(x);
            b.into_iter().zip(a).map(|(u, v)| u - v).collect::<Vec<_>>()
        })
        .collect()
}

/// Solve the equilibrium fixed point `M(φ) = φ` by damped Picard iteration
/// started from the risk-neutral Brenier map from N(0, Tσ²) to ν.
pub fn solve_equilibrium(params: &MarketParams, cfg: &FixedPointConfig) -> Result<FixedPointReport> {
    let n = params.n;
    let gamma0 = params.gamma0();
    if params.gamma >= gamma0 {
        return Err(Error::RegimeViolation { gamma: params.gamma, gamma0 });
    }
    if cfg.max_iters == 0 || !(cfg.damping > 0.0 && cfg.damping <= 1.0) || !(cfg.grad_tol > 0.0) {
        return Err(Error::InvalidInput("fixed-point configuration out of range".into()));
    }
    let l = params.l_bound();
    let cap = CAP_SLACK * l;
    let target = TransportTarget::from_prior(&params.prior);
    let mut grid = default_mu_grid(params, l, cfg.nodes_per_axis)?;
    let compact = match &cfg.compact {
        Some(c) => c.clone(),
        None => default_compact(params, if n == 1 { 161 } else { 21 })?,
    };

    let s2 = params.sigma2();
    let prec = linalg::inv_spd(&(&s2 * params.horizon));
    let gauss_logs = grid
        .nodes()
        .iter()
        .map(|x| {
            let mut q = 0.0;
            for i in 0..n {
                for j in 0..n {
                    q += x[i] * prec[(i, j)] * x[j];
                }
            }
            -0.5 * q
        })
        .collect();
    let gauss = GriddedDensity::from_log_values(grid.clone(), gauss_logs)?;
    let mut phi = transport(&gauss, &target, l, cfg)?.potential;
    let initialization = "risk-neutral Brenier map from N(0, T sigma^2) to the prior".to_string();

    let mut theta = cfg.damping;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut prev_increment: Option<Vec<f64>> = None;
    let mut clip_events = 0;
    let mut shift_invariance = 0.0;
    let mut converged = false;
    let mut best: Option<(f64, ConvexPotential)> = None;
    let mut initial_pushforward_error = f64::NAN;

    for k in 1..=cfg.max_iters {
        let density = TransitionDensity::from_potential(params, Arc::new(phi.recentre()))?;
        let mu = match density.mu_phi(&grid) {
            Ok(m) => m,
            Err(Error::MassLeak { captured }) => {
                warn!("mu grid captured only {captured:.6} of the mass; widening it");
                let mut g = grid.clone();
                let mut found = None;
                for _ in 0..2 {
                    g = g.inflated(1.5);
                    if let Ok(m) = density.mu_phi(&g) {
                        found = Some(m);
                        break;
                    }
                }
                let m = found.ok_or(Error::MassLeak { captured })?;
                grid = g;
                phi = ConvexPotential::tabulate(grid.clone(), &phi, l)?;
                m
            }
            Err(e) => return Err(e),
        };
        if k == 1 {
            shift_invariance = shift_spot_check(params, &density, &phi)?;
        }
        let pf_err = pushforward_error(&phi, &mu.density, &target);
        if k == 1 {
            initial_pushforward_error = pf_err;
        }
        let next = transport(&mu.density, &target, l, cfg)?.potential;
        let increment = gradient_increment(&phi, &next, &compact);
        let change = increment.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(prev) = &prev_increment {
            if linalg::dot(prev, &increment) < 0.0 {
                theta *= 0.5;
                info!("oscillation detected; damping reduced to {theta}");
            }
        }
        let region = stencil_interior(&grid);
        let current_cap = phi.max_curvature_in(region.as_ref());
        let next_cap = next.max_curvature_in(region.as_ref());
        let mut step = theta;
        let mut clipped = false;
        if next_cap > cap {
            let limit = if next_cap > current_cap { ((cap - current_cap) / (next_cap - current_cap)).max(0.0) } else { 1.0 };
            if limit < step {
                step = limit;
                clipped = true;
                clip_events += 1;
                warn!("iteration {k}: Hessian cap {next_cap:.4} exceeds {cap:.4}; step clipped to {step:.4}");
            }
        }
        let candidate = if step >= 1.0 { next } else { phi.blend(&next, step)? };
        let hessian_max = candidate.max_curvature_in(region.as_ref());
        info!("iteration {k}: gradient change {change:.3e}, theta {step:.3}, hessian max {hessian_max:.4}");
        history.push(IterationRecord {
            iteration: k,
            grad_change: change,
            theta: step,
            hessian_max,
            pushforward_error: pf_err,
            captured_mass: mu.captured_mass,
            clipped,
        });
        if best.as_ref().is_none_or(|(c, _)| change < *c) {
            best = Some((change, candidate.clone()));
        }
        phi = candidate;
        prev_increment = Some(increment);
        if change < cfg.grad_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("fixed point did not converge in {} iterations", cfg.max_iters);
        phi = best.expect("at least one iteration ran").1;
    }

    let density = TransitionDensity::from_potential(params, Arc::new(phi.recentre()))?;
    let mu = density.mu_phi(&grid)?;
    let final_pushforward_error = pushforward_error(&phi, &mu.density, &target);
    let residuals = ma_residual(&phi, params, &compact)?;
    let ma = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(FixedPointReport {
        potential: phi,
        converged,
        iterations: history.len(),
        history,
        initial_pushforward_error,
        final_pushforward_error,
        ma_residual: ma,
        l_bound: l,
        clip_events,
        shift_invariance,
        initialization,
        compact,
    })
}

/// Largest relative change of `ln G(0,0,T,·)` on a few nodes when φ gains a
/// linear term.
fn shift_spot_check(params: &MarketParams, density: &TransitionDensity, phi: &ConvexPotential) -> Result<f64> {
    let n = params.n;
    let t = params.horizon;
    let a: Vec<f64> = (0..n).map(|i| 0.3 - 0.2 * i as f64).collect();
    let scale = (t * params.sigma2()[(0, 0)]).sqrt();
    let samples: Vec<(f64, Vec<f64>, f64, Vec<f64>)> = [-1.0, 0.0, 0.7, 1.5]
        .iter()
        .map(|&s| (0.0, vec![0.0; n], t, vec![s * scale; n]))
        .collect();
    let shifted = TransitionDensity::from_potential(params, Arc::new(phi.recentre().shifted(&a)))?;
    let mut worst: f64 = 0.0;
    for (r, x, t, y) in &samples {
        let l0 = density.log_g(*r, x, *t, y)?;
        let l1 = shifted.log_g(*r, x, *t, y)?;
        worst = worst.max((l1 - l0).exp_m1().abs());
    }
    Ok(worst)
}

/// `|G^φ(0,0,T,x) − det(D²φ(x)) f_ν(Dφ(x))| / max(G^φ(0,0,T,x), floor)` at
/// the nodes of `grid`.
pub fn ma_residual(phi: &ConvexPotential, params: &MarketParams, grid: &RectGrid) -> Result<Vec<f64>> {
    let n = params.n;
    let inner = phi.grid();
    for d in 0..n {
        if grid.lower()[d] < inner.lower()[d] || grid.upper()[d] > inner.upper()[d] {
            return Err(Error::InvalidInput("residual grid must lie inside the potential's grid".into()));
        }
    }
    let density = TransitionDensity::from_potential(params, Arc::new(phi.clone()))?;
    let at = density.maps().at(0.0, &vec![0.0; n])?;
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n * n];
    grid.nodes()
        .iter()
        .map(|x| {
            let lhs = density.log_terminal(&at.chi, at.gamma, x).exp();
            phi.jet(x, &mut g, &mut h);
            let det = linalg::det_small(&h, n);
            let f = params.prior.density(&g).unwrap_or(0.0);
            Ok((lhs - det * f).abs() / lhs.max(MA_FLOOR))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianEquilibrium;
    use crate::linalg::Mat;
    use crate::market::PriorSpec;

    fn params(gamma: f64) -> MarketParams {
        let prior = PriorSpec::gaussian(vec![0.0], Mat::identity(1, 1)).unwrap();
        MarketParams::new(1.0, Mat::identity(1, 1), gamma, prior).unwrap()
    }

    #[test]
    fn regime_violation_is_rejected() {
        let p = params(0.6);
        assert!(matches!(
            solve_equilibrium(&p, &FixedPointConfig::for_dim(1)),
            Err(Error::RegimeViolation { .. })
        ));
    }

    #[test]
    fn oracle_potential_has_small_residual() {
        let p = params(0.1);
        let eq = GaussianEquilibrium::solve(&p).unwrap();
        let grid = default_mu_grid(&p, p.l_bound(), 401).unwrap();
        let phi = ConvexPotential::tabulate(grid, &eq.potential(), p.l_bound()).unwrap();
        let r = ma_residual(&phi, &p, &default_compact(&p, 41).unwrap()).unwrap();
        assert!(r.iter().cloned().fold(0.0, f64::max) < 1e-2);
    }

    #[test]
    fn residual_rejects_a_non_solution() {
        let p = params(0.1);
        let grid = default_mu_grid(&p, p.l_bound(), 401).unwrap();
        let q = crate::potential::QuadraticPotential::new(&Mat::from_element(1, 1, 0.6), &[0.0]).unwrap();
        let phi = ConvexPotential::tabulate(grid, &q, p.l_bound()).unwrap();
        let r = ma_residual(&phi, &p, &default_compact(&p, 41).unwrap()).unwrap();
        assert!(r.iter().cloned().fold(0.0, f64::max) > 0.1);
    }
}
