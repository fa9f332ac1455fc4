//! Monte Carlo simulation of the equilibrium and its statistical checks.

mod checks;
mod model;

pub use checks::{
    check_filtering, check_inconspicuous, check_martingale, check_terminal, check_utility, filtering_samples,
    suboptimality_probe, utility_expression, CheckResult, UtilityBin, UtilityReport,
};
pub use model::{EquilibriumModel, GaussianModel, TabulatedModel};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::market::PriorSpec;
use crate::stats;

/// Prior draws tried per path before giving up.
const MAX_ATTEMPTS: usize = 100;

/// Checkpoint fractions of the horizon; the terminal checkpoint is appended.
pub const CHECKPOINTS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    /// Fraction of the horizon covered by the exact landing step.
    pub delta: f64,
    pub seed: u64,
    /// Paths whose trajectories are kept, thinned to every `thin_every` steps.
    pub thin_paths: usize,
    pub thin_every: usize,
    /// Force σΔB = 0.
    pub zero_noise: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { n_paths: 100_000, n_steps: 500, delta: 1e-3, seed: 0, thin_paths: 20, thin_every: 5, zero_noise: false }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 {
            return Err(Error::InvalidInput("n_paths must be at least 1".into()));
        }
        if self.n_steps < 100 {
            return Err(Error::InvalidInput("n_steps must be at least 100".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 0.05) {
            return Err(Error::InvalidInput("delta must lie in (0, 0.05]".into()));
        }
        if self.thin_every == 0 {
            return Err(Error::InvalidInput("thin_every must be positive".into()));
        }
        Ok(())
    }
}

/// Trading strategy of the informed trader under the equilibrium pricing rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "parameter", rename_all = "snake_case")]
pub enum Strategy {
    /// Bridge drift `(ξ̄ − ξ)/(T − t)` with exact landing.
    Equilibrium,
    /// Bridge drift scaled by a constant, with exact landing.
    ScaledDrift(f64),
    /// Bridge reaching ξ̄ at the given fraction of the horizon, then no trading.
    EarlyStop(f64),
    /// No trading at all.
    Hold,
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Self::Equilibrium => "equilibrium".into(),
            Self::ScaledDrift(c) => format!("scaled_drift_{c}"),
            Self::EarlyStop(f) => format!("early_stop_{f}"),
            Self::Hold => "hold".into(),
        }
    }

    fn lands(&self) -> bool {
        matches!(self, Self::Equilibrium | Self::ScaledDrift(_))
    }
}

/// Y, ξ and P of every path at one time, `n` values per path each.
#[derive(Debug, Clone, Serialize)]
pub struct Checkpoint {
    pub time: f64,
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
    pub price: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThinnedPath {
    pub path_id: usize,
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
    pub price: Vec<f64>,
}

/// Simulated paths with per-path terminal records.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub dim: usize,
    pub horizon: f64,
    pub gamma: f64,
    /// Row-major σ.
    pub sigma: Vec<f64>,
    pub strategy: Strategy,
    pub config: SimConfig,
    /// Per path, `n` each.
    pub v: Vec<f64>,
    pub xi_target: Vec<f64>,
    /// Per path scalars.
    pub wealth: Vec<f64>,
    /// `−e^{−γW_T}`.
    pub utility: Vec<f64>,
    /// Wealth rebuilt from the terminal-value decomposition.
    pub decomposition: Vec<f64>,
    /// `|Dφ(ξ_T) − ṽ| / (1 + |ṽ|)`.
    pub landing_error: Vec<f64>,
    /// At T/4, T/2, 3T/4 (nearest grid times) and T.
    pub checkpoints: Vec<Checkpoint>,
    pub thinned: Vec<ThinnedPath>,
    pub rejected: usize,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.wealth.len()
    }

    pub fn terminal(&self) -> &Checkpoint {
        self.checkpoints.last().expect("terminal checkpoint")
    }

    /// Coordinate `d` of a per-path vector field.
    pub fn coord(field: &[f64], n: usize, d: usize) -> Vec<f64> {
        field.iter().skip(d).step_by(n).copied().collect()
    }

    pub fn max_landing_error(&self) -> f64 {
        self.landing_error.iter().cloned().fold(0.0, f64::max)
    }

    pub fn summary(&self) -> EnsembleSummary {
        let n = self.dim;
        let term = self.terminal();
        let regression = (0..n)
            .map(|d| {
                let fit = stats::ols(&Self::coord(&self.v, n, d), &Self::coord(&term.price, n, d));
                [fit.slope, fit.intercept, fit.slope_se, fit.intercept_se]
            })
            .collect();
        let gaps: Vec<f64> = self.wealth.iter().zip(&self.decomposition).map(|(a, b)| (a - b).abs()).collect();
        EnsembleSummary {
            strategy: self.strategy.label(),
            n_paths: self.n_paths(),
            n_steps: self.config.n_steps,
            delta: self.config.delta,
            seed: self.config.seed,
            rejected: self.rejected,
            max_landing_error: self.max_landing_error(),
            mean_wealth: stats::mean(&self.wealth),
            wealth_se: stats::std_error(&self.wealth),
            mean_utility: stats::mean(&self.utility),
            utility_se: stats::std_error(&self.utility),
            mean_decomposition_gap: stats::mean(&gaps),
            terminal_regression: regression,
            checkpoint_times: self.checkpoints.iter().map(|c| c.time).collect(),
        }
    }

    /// Thinned trajectories as CSV with columns `path_id, t, y.., xi.., p..`.
    pub fn paths_csv(&self) -> String {
        let n = self.dim;
        let mut head = vec!["path_id".to_string(), "t".to_string()];
        for name in ["y", "xi", "p"] {
            head.extend((0..n).map(|d| format!("{name}{d}")));
        }
        let mut out = head.join(",");
        out.push('\n');
        for p in &self.thinned {
            for (k, t) in p.times.iter().enumerate() {
                let mut row = vec![p.path_id.to_string(), format!("{t:e}")];
                for field in [&p.y, &p.xi, &p.price] {
                    row.extend(field[k * n..(k + 1) * n].iter().map(|v| format!("{v:e}")));
                }
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub strategy: String,
    pub n_paths: usize,
    pub n_steps: usize,
    pub delta: f64,
    pub seed: u64,
    pub rejected: usize,
    pub max_landing_error: f64,
    pub mean_wealth: f64,
    pub wealth_se: f64,
    pub mean_utility: f64,
    pub utility_se: f64,
    pub mean_decomposition_gap: f64,
    /// Per coordinate: slope, intercept and their standard errors of P_T on ṽ.
    pub terminal_regression: Vec<[f64; 4]>,
    pub checkpoint_times: Vec<f64>,
}

/// Quantities fixed for every path.
struct Context {
    n: usize,
    horizon: f64,
    gamma: f64,
    sigma: Vec<f64>,
    chi00: Vec<f64>,
    gamma00: f64,
}

impl Context {
    fn new(model: &dyn EquilibriumModel) -> Result<Self> {
        let n = model.dim();
        let m = model.maps_at(0.0, &vec![0.0; n])?;
        Ok(Self {
            n,
            horizon: model.horizon(),
            gamma: model.gamma(),
            sigma: model.sigma().to_vec(),
            chi00: m.chi,
            gamma00: m.gamma,
        })
    }
}

/// Brownian increments of one path: `steps` Euler steps of length `dt`
/// followed by the landing window.
struct Increments<'a> {
    dt: f64,
    db: &'a [f64],
    land_dt: f64,
    land_db: &'a [f64],
}

struct PathRecord {
    wealth: f64,
    decomposition: f64,
    landing_error: f64,
    /// y, ξ, P at each checkpoint.
    snapshots: Vec<[Vec<f64>; 3]>,
    thinned: Option<ThinnedPath>,
}

struct Recording<'a> {
    checkpoint_steps: &'a [usize],
    thin_every: Option<usize>,
    path_id: usize,
}

fn run_path(
    model: &dyn EquilibriumModel,
    ctx: &Context,
    strategy: Strategy,
    v: &[f64],
    target: &[f64],
    inc: &Increments,
    rec: &Recording,
) -> Result<PathRecord> {
    let n = ctx.n;
    let steps = inc.db.len() / n;
    let t_total = ctx.horizon;
    let mut xi = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut chi = ctx.chi00.clone();
    let mut price = vec![0.0; n];
    let mut dinv = vec![0.0; n * n];
    let mut sdb = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; n];
    let mut dxi = vec![0.0; n];
    let (mut wealth, mut stoch, mut quad) = (0.0, 0.0, 0.0);
    let mut stopped = false;
    let mut snapshots = Vec::with_capacity(rec.checkpoint_steps.len() + 1);
    let mut thin = rec.thin_every.map(|_| ThinnedPath {
        path_id: rec.path_id,
        times: Vec::new(),
        y: Vec::new(),
        xi: Vec::new(),
        price: Vec::new(),
    });
    let mut prev_price = vec![0.0; n];
    let mut prev_dx = vec![0.0; n];
    // X has no diffusion part away from the landing step, so the trapezoid
    // sum converges to the same integral with a smaller bias near T.
    let mut trade = |from: &[f64], to: &[f64], dx: &[f64]| {
        for i in 0..n {
            wealth += (v[i] - 0.5 * (from[i] + to[i])) * dx[i];
        }
    };
    let mut accumulate = |price: &[f64], sdb: &[f64], dt: f64| {
        let mut spv = 0.0;
        for i in 0..n {
            stoch += (price[i] - v[i]) * sdb[i];
            let s: f64 = (0..n).map(|j| ctx.sigma[i * n + j] * (price[j] - v[j])).sum();
            spv += s * s;
        }
        quad += spv * dt;
    };
    for k in 0..=steps {
        let t = k as f64 * inc.dt;
        model.step_maps(t, &xi, &mut chi, &mut price, &mut dinv)?;
        if k > 0 {
            trade(&prev_price, &price, &prev_dx);
        }
        if rec.checkpoint_steps.contains(&k) {
            snapshots.push([y.clone(), xi.clone(), price.clone()]);
        }
        if let (Some(p), Some(every)) = (thin.as_mut(), rec.thin_every) {
            if k % every == 0 || k == steps {
                p.times.push(t);
                p.y.extend_from_slice(&y);
                p.xi.extend_from_slice(&xi);
                p.price.extend_from_slice(&price);
            }
        }
        let landing = k == steps;
        let (db, dt) = if landing { (inc.land_db, inc.land_dt) } else { (&inc.db[k * n..(k + 1) * n], inc.dt) };
        linalg::matvec(&ctx.sigma, db, &mut sdb);
        let mut jump = false;
        match strategy {
            _ if landing && strategy.lands() => jump = true,
            Strategy::Equilibrium | Strategy::ScaledDrift(_) => {
                let c = if let Strategy::ScaledDrift(c) = strategy { c } else { 1.0 };
                for i in 0..n {
                    dx[i] = c * (target[i] - xi[i]) * dt / (t_total - t);
                }
            }
            Strategy::EarlyStop(f) => {
                let stop = f * t_total;
                if stopped || landing {
                    dx.iter_mut().for_each(|d| *d = 0.0);
                } else if t + dt >= stop - 1e-12 * t_total {
                    jump = true;
                    stopped = true;
                } else {
                    for i in 0..n {
                        dx[i] = (target[i] - xi[i]) * dt / (stop - t);
                    }
                }
            }
            Strategy::Hold => dx.iter_mut().for_each(|d| *d = 0.0),
        }
        if jump {
            let gap: Vec<f64> = target.iter().zip(&xi).map(|(a, b)| a - b).collect();
            let dchi_gap = linalg::solve_small(&dinv, &gap, n)
                .ok_or_else(|| Error::InvalidInput("singular state Jacobian on the landing step".into()))?;
            for i in 0..n {
                dy[i] = dchi_gap[i];
                dx[i] = dy[i] - sdb[i];
            }
            xi.copy_from_slice(target);
        } else {
            for i in 0..n {
                dy[i] = dx[i] + sdb[i];
            }
            linalg::matvec(&dinv, &dy, &mut dxi);
            for i in 0..n {
                xi[i] += dxi[i];
            }
        }
        accumulate(&price, &sdb, dt);
        prev_price.copy_from_slice(&price);
        prev_dx.copy_from_slice(&dx);
        for i in 0..n {
            y[i] += dy[i];
        }
    }
    let p_t = model.grad_phi(&xi);
    trade(&prev_price, &p_t, &prev_dx);
    snapshots.push([y.clone(), xi.clone(), p_t.clone()]);
    if let Some(p) = thin.as_mut() {
        p.times.push(t_total);
        p.y.extend_from_slice(&y);
        p.xi.extend_from_slice(&xi);
        p.price.extend_from_slice(&p_t);
    }
    let mut sv2 = 0.0;
    for i in 0..n {
        let s: f64 = (0..n).map(|j| ctx.sigma[i * n + j] * v[j]).sum();
        sv2 += s * s;
    }
    let decomposition = -(linalg::dot(v, &ctx.chi00) - ctx.gamma00) + (linalg::dot(v, &xi) - model.phi(&xi))
        - 0.5 * ctx.gamma * t_total * sv2
        + 0.5 * ctx.gamma * quad
        + stoch;
    let err: Vec<f64> = p_t.iter().zip(v).map(|(a, b)| a - b).collect();
    Ok(PathRecord {
        wealth,
        decomposition,
        landing_error: linalg::norm(&err) / (1.0 + linalg::norm(v)),
        snapshots,
        thinned: thin,
    })
}

fn path_rng(seed: u64, path: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Draw ṽ until `(Dφ)⁻¹(ṽ)` is found; returns ṽ, the target and the rejections.
fn draw_value(
    model: &dyn EquilibriumModel,
    prior: &PriorSpec,
    rng: &mut ChaCha20Rng,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    for attempt in 0..MAX_ATTEMPTS {
        let v = prior.sample_with(1, rng)?.remove(0);
        if let Ok(target) = model.inverse_gradient(&v) {
            return Ok((v, target, attempt));
        }
    }
    Err(Error::InvalidInput(format!("no prior draw inside the range of Dφ after {MAX_ATTEMPTS} attempts")))
}

fn normals(rng: &mut ChaCha20Rng, out: &mut [f64], scale: f64, zero: bool) {
    for z in out.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *z = if zero { 0.0 } else { scale * g };
    }
}

/// Times at which [`simulate`] evaluates the pricing rule.
pub fn step_times(cfg: &SimConfig, horizon: f64) -> Vec<f64> {
    let dt = horizon * (1.0 - cfg.delta) / cfg.n_steps as f64;
    (0..=cfg.n_steps).map(|k| k as f64 * dt).collect()
}

/// Step indices nearest to the checkpoint fractions, and their times.
fn checkpoint_steps(cfg: &SimConfig, horizon: f64) -> (Vec<usize>, Vec<f64>) {
    let dt = horizon * (1.0 - cfg.delta) / cfg.n_steps as f64;
    let steps: Vec<usize> = CHECKPOINTS
        .iter()
        .map(|f| ((f * horizon / dt).round() as usize).min(cfg.n_steps))
        .collect();
    let times = steps.iter().map(|&k| k as f64 * dt).collect();
    (steps, times)
}

/// Simulate `cfg.n_paths` paths of `strategy` against the pricing rule of `model`.
///
/// Every path uses its own ChaCha20 stream keyed by `(seed, path index)`, so
/// results do not depend on the thread count and deviations sharing a seed
/// see the same ṽ and noise.
pub fn simulate(
    model: &dyn EquilibriumModel,
    prior: &PriorSpec,
    cfg: &SimConfig,
    strategy: Strategy,
) -> Result<PathEnsemble> {
    cfg.validate()?;
    let n = model.dim();
    if prior.dim() != n {
        return Err(Error::InvalidInput("prior and model dimensions disagree".into()));
    }
    let ctx = Context::new(model)?;
    let horizon = ctx.horizon;
    let dt = horizon * (1.0 - cfg.delta) / cfg.n_steps as f64;
    let land_dt = horizon * cfg.delta;
    let (steps, times) = checkpoint_steps(cfg, horizon);
    let records: Vec<Result<(Vec<f64>, Vec<f64>, usize, PathRecord)>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(cfg.seed, path);
            let mut db = vec![0.0; cfg.n_steps * n];
            let mut land_db = vec![0.0; n];
            let mut rejected = 0;
            loop {
                let (v, target, r) = draw_value(model, prior, &mut rng)?;
                rejected += r;
                normals(&mut rng, &mut db, dt.sqrt(), cfg.zero_noise);
                normals(&mut rng, &mut land_db, land_dt.sqrt(), cfg.zero_noise);
                let inc = Increments { dt, db: &db, land_dt, land_db: &land_db };
                let rec = Recording {
                    checkpoint_steps: &steps,
                    thin_every: (path < cfg.thin_paths).then_some(cfg.thin_every),
                    path_id: path,
                };
                match run_path(model, &ctx, strategy, &v, &target, &inc, &rec) {
                    Ok(r) => return Ok((v, target, rejected, r)),
                    Err(Error::NewtonDivergence { .. }) if rejected < MAX_ATTEMPTS => rejected += 1,
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();
    let mut ens = PathEnsemble {
        dim: n,
        horizon,
        gamma: ctx.gamma,
        sigma: ctx.sigma.clone(),
        strategy,
        config: cfg.clone(),
        v: Vec::with_capacity(cfg.n_paths * n),
        xi_target: Vec::with_capacity(cfg.n_paths * n),
        wealth: Vec::with_capacity(cfg.n_paths),
        utility: Vec::with_capacity(cfg.n_paths),
        decomposition: Vec::with_capacity(cfg.n_paths),
        landing_error: Vec::with_capacity(cfg.n_paths),
        checkpoints: times
            .iter()
            .chain(std::iter::once(&horizon))
            .map(|&time| Checkpoint { time, y: Vec::new(), xi: Vec::new(), price: Vec::new() })
            .collect(),
        thinned: Vec::new(),
        rejected: 0,
    };
    for r in records {
        let (v, target, rejected, rec) = r?;
        ens.v.extend_from_slice(&v);
        ens.xi_target.extend_from_slice(&target);
        ens.rejected += rejected;
        ens.wealth.push(rec.wealth);
        ens.utility.push(-(-ctx.gamma * rec.wealth).exp());
        ens.decomposition.push(rec.decomposition);
        ens.landing_error.push(if strategy.lands() { rec.landing_error } else { f64::NAN });
        for (c, [y, xi, p]) in ens.checkpoints.iter_mut().zip(rec.snapshots) {
            c.y.extend(y);
            c.xi.extend(xi);
            c.price.extend(p);
        }
        ens.thinned.extend(rec.thinned);
    }
    if ens.rejected > 0 {
        log::warn!("{} prior draws fell outside the range of Dφ and were resampled", ens.rejected);
    }
    Ok(ens)
}

/// Pathwise gap between simulated wealth and its terminal-value
/// decomposition at two step counts driven by the same Brownian path.
#[derive(Debug, Clone, Serialize)]
pub struct WealthGap {
    pub coarse_steps: usize,
    pub fine_steps: usize,
    pub coarse_rms: f64,
    pub fine_rms: f64,
    pub ratio: f64,
}

pub fn wealth_gap_study(
    model: &dyn EquilibriumModel,
    prior: &PriorSpec,
    n_paths: usize,
    coarse_steps: usize,
    refine: usize,
    delta: f64,
    seed: u64,
) -> Result<WealthGap> {
    let n = model.dim();
    let ctx = Context::new(model)?;
    let fine_steps = coarse_steps * refine;
    let horizon = ctx.horizon;
    let fine_dt = horizon * (1.0 - delta) / fine_steps as f64;
    let land_dt = horizon * delta;
    let gaps: Vec<Result<(f64, f64)>> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(seed, path);
            let (v, target, _) = draw_value(model, prior, &mut rng)?;
            let mut fine = vec![0.0; fine_steps * n];
            let mut land_db = vec![0.0; n];
            normals(&mut rng, &mut fine, fine_dt.sqrt(), false);
            normals(&mut rng, &mut land_db, land_dt.sqrt(), false);
            let mut coarse = vec![0.0; coarse_steps * n];
            for k in 0..fine_steps {
                for i in 0..n {
                    coarse[(k / refine) * n + i] += fine[k * n + i];
                }
            }
            let rec = Recording { checkpoint_steps: &[], thin_every: None, path_id: path };
            let gap = |db: &[f64], dt: f64| -> Result<f64> {
                let inc = Increments { dt, db, land_dt, land_db: &land_db };
                let r = run_path(model, &ctx, Strategy::Equilibrium, &v, &target, &inc, &rec)?;
                Ok(r.wealth - r.decomposition)
            };
            Ok((gap(&coarse, fine_dt * refine as f64)?, gap(&fine, fine_dt)?))
        })
        .collect();
    let mut sc = Vec::with_capacity(n_paths);
    let mut sf = Vec::with_capacity(n_paths);
    for g in gaps {
        let (c, f) = g?;
        sc.push(c * c);
        sf.push(f * f);
    }
    let coarse_rms = stats::mean(&sc).sqrt();
    let fine_rms = stats::mean(&sf).sqrt();
    Ok(WealthGap { coarse_steps, fine_steps, coarse_rms, fine_rms, ratio: coarse_rms / fine_rms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianEquilibrium;
    use crate::linalg::Mat;
    use crate::market::MarketParams;

    fn setup(gamma: f64) -> (GaussianModel, PriorSpec) {
        let prior = PriorSpec::gaussian(vec![0.0], Mat::from_element(1, 1, 1.0)).unwrap();
        let params = MarketParams::new(1.0, Mat::from_element(1, 1, 1.0), gamma, prior.clone()).unwrap();
        (GaussianModel::new(GaussianEquilibrium::solve(&params).unwrap()), prior)
    }

    fn cfg(n_paths: usize, seed: u64) -> SimConfig {
        SimConfig { n_paths, n_steps: 200, seed, thin_paths: 0, ..Default::default() }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(SimConfig { n_steps: 50, ..Default::default() }.validate().is_err());
        assert!(SimConfig { delta: 0.0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { delta: 0.1, ..Default::default() }.validate().is_err());
        assert!(SimConfig { n_paths: 0, ..Default::default() }.validate().is_err());
        assert!(SimConfig::default().validate().is_ok());
    }

    #[test]
    fn zero_noise_bridge_is_monotone_and_lands() {
        let (model, prior) = setup(0.1);
        let c = SimConfig { zero_noise: true, thin_paths: 6, thin_every: 1, ..cfg(6, 3) };
        let e = simulate(&model, &prior, &c, Strategy::Equilibrium).unwrap();
        assert!(e.max_landing_error() < 1e-12);
        for p in &e.thinned {
            let target = e.xi_target[p.path_id];
            let gaps: Vec<f64> = p.xi.iter().map(|x| (target - x).abs()).collect();
            assert!(gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            assert!(p.xi.iter().all(|x| x * target >= -1e-12));
            assert_eq!(*p.times.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn seeds_fix_paths() {
        let (model, prior) = setup(0.1);
        let a = simulate(&model, &prior, &cfg(40, 11), Strategy::Equilibrium).unwrap();
        let b = simulate(&model, &prior, &cfg(40, 11), Strategy::Equilibrium).unwrap();
        let c = simulate(&model, &prior, &cfg(40, 12), Strategy::Equilibrium).unwrap();
        let small = simulate(&model, &prior, &cfg(10, 11), Strategy::Equilibrium).unwrap();
        assert_eq!(a.wealth, b.wealth);
        assert_ne!(a.wealth, c.wealth);
        assert_eq!(&a.wealth[..10], &small.wealth[..]);
        assert_eq!(&a.v[..10], &small.v[..]);
    }

    #[test]
    fn holding_earns_nothing() {
        let (model, prior) = setup(0.1);
        let e = simulate(&model, &prior, &cfg(50, 1), Strategy::Hold).unwrap();
        assert!(e.wealth.iter().all(|w| *w == 0.0));
        assert!(e.utility.iter().all(|u| *u == -1.0));
        assert!(e.landing_error.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn early_stop_reaches_target_and_stops() {
        let (model, prior) = setup(0.1);
        let c = SimConfig { zero_noise: true, thin_paths: 3, thin_every: 1, ..cfg(3, 5) };
        let e = simulate(&model, &prior, &c, Strategy::EarlyStop(0.5)).unwrap();
        for p in &e.thinned {
            let target = e.xi_target[p.path_id];
            for (t, x) in p.times.iter().zip(&p.xi) {
                if *t > 0.5 + 0.01 {
                    assert!((x - target).abs() < 1e-12, "t={t}");
                }
            }
        }
    }

    #[test]
    fn risk_neutral_profit_is_classic() {
        let (model, prior) = setup(0.0);
        let e = simulate(&model, &prior, &cfg(20_000, 9), Strategy::Equilibrium).unwrap();
        let s = e.summary();
        // λ = 1, so the expected profit is σ_v σ √T = 1.
        assert!((s.mean_wealth - 1.0).abs() < 3.0 * s.wealth_se, "{} ± {}", s.mean_wealth, s.wealth_se);
        assert!(s.mean_decomposition_gap < 0.05);
    }

    #[test]
    fn decomposition_gap_shrinks_with_steps() {
        let (model, prior) = setup(0.1);
        let gap = wealth_gap_study(&model, &prior, 200, 100, 4, 1e-3, 2).unwrap();
        assert!(gap.fine_rms < gap.coarse_rms);
        assert!(gap.ratio > 1.5, "{}", gap.ratio);
    }

    #[test]
    fn step_times_end_before_landing() {
        let c = SimConfig { n_steps: 100, delta: 0.01, ..Default::default() };
        let t = step_times(&c, 2.0);
        assert_eq!(t.len(), 101);
        assert!((t[100] - 1.98).abs() < 1e-12);
    }

    #[test]
    fn csv_has_one_row_per_kept_time() {
        let (model, prior) = setup(0.1);
        let c = SimConfig { thin_paths: 2, thin_every: 50, ..cfg(4, 1) };
        let e = simulate(&model, &prior, &c, Strategy::Equilibrium).unwrap();
        let csv = e.paths_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "path_id,t,y0,xi0,p0");
        assert_eq!(lines.count(), 2 * 6);
    }
}
