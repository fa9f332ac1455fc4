use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{simulate, EnsembleSummary, EquilibriumModel, PathEnsemble, SimConfig, Strategy};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::market::PriorSpec;
use crate::quadrature::TensorRule;
use crate::stats::{self, normal_cdf};

/// Standard errors allowed by every Monte Carlo comparison.
pub const SE_MULTIPLE: f64 = 3.0;
/// Relative tolerance of the deterministic filtering identities.
pub const FILTER_TOL: f64 = 1e-3;
/// Significance level of the KS tests.
pub const KS_LEVEL: f64 = 1e-3;
/// Bound on `|Dφ(ξ_T) − ṽ| / (1 + |ṽ|)`.
pub const LANDING_TOL: f64 = 1e-6;
/// Regression coefficients closer than this to their target pass even when
/// the standard error is at roundoff level.
pub const REGRESSION_FLOOR: f64 = 1e-9;
pub const UTILITY_BINS: usize = 20;
pub const UTILITY_BINS_REQUIRED: usize = 18;

/// Outcome of one check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    /// `statistic <= threshold` or `statistic >= threshold`.
    pub rule: &'static str,
    /// The property being verified.
    pub reference: String,
}

impl CheckResult {
    pub fn at_most(name: impl Into<String>, statistic: f64, threshold: f64, reference: &str) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold,
            pass: statistic <= threshold,
            rule: "statistic <= threshold",
            reference: reference.into(),
        }
    }

    pub fn at_least(name: impl Into<String>, statistic: f64, threshold: f64, reference: &str) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold,
            pass: statistic >= threshold,
            rule: "statistic >= threshold",
            reference: reference.into(),
        }
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

fn time_label(t: f64, horizon: f64) -> String {
    format!("{:.2}T", t / horizon)
}

/// Exact landing and the regression of P_T on ṽ.
pub fn check_terminal(e: &PathEnsemble) -> Vec<CheckResult> {
    let n = e.dim;
    let term = e.terminal();
    let mut out = vec![CheckResult::at_most(
        "bridge_landing",
        e.max_landing_error(),
        LANDING_TOL,
        "the equilibrium state lands on the inverse gradient of the potential at the asset value",
    )];
    for d in 0..n {
        let fit = stats::ols(&PathEnsemble::coord(&e.v, n, d), &PathEnsemble::coord(&term.price, n, d));
        let tol = |se: f64| (SE_MULTIPLE * se).max(REGRESSION_FLOOR);
        let prop = "the terminal price equals the asset value";
        out.push(CheckResult::at_most(format!("terminal_slope_{d}"), (fit.slope - 1.0).abs(), tol(fit.slope_se), prop));
        out.push(CheckResult::at_most(
            format!("terminal_intercept_{d}"),
            fit.intercept.abs(),
            tol(fit.intercept_se),
            prop,
        ));
    }
    out
}

/// Martingale property of P and ξ between each checkpoint and T.
pub fn check_martingale(e: &PathEnsemble) -> Vec<CheckResult> {
    let n = e.dim;
    let term = e.terminal();
    let mut out = Vec::new();
    for c in &e.checkpoints[..e.checkpoints.len() - 1] {
        let label = time_label(c.time, e.horizon);
        for (name, now, end) in [("price", &c.price, &term.price), ("state", &c.xi, &term.xi)] {
            let prop = if name == "price" {
                "the price is the conditional expectation of the asset value given the order flow"
            } else {
                "the state is a martingale in the order-flow filtration"
            };
            for d in 0..n {
                let x = PathEnsemble::coord(now, n, d);
                let inc: Vec<f64> =
                    PathEnsemble::coord(end, n, d).iter().zip(&x).map(|(a, b)| a - b).collect();
                let z = z_score(stats::mean(&inc), stats::std_error(&inc)).abs();
                out.push(CheckResult::at_most(format!("martingale_mean_{name}{d}_{label}"), z, SE_MULTIPLE, prop));
                let fit = stats::ols(&x, &inc);
                let z = z_score(fit.slope, fit.slope_se).abs();
                out.push(CheckResult::at_most(format!("martingale_slope_{name}{d}_{label}"), z, SE_MULTIPLE, prop));
            }
        }
    }
    out
}

/// The aggregate order flow is distributed as σB.
pub fn check_inconspicuous(e: &PathEnsemble) -> Vec<CheckResult> {
    let n = e.dim;
    let prop = "the order flow has the law of the noise-trader flow";
    let mut out = Vec::new();
    let half = e
        .checkpoints
        .iter()
        .min_by(|a, b| (a.time - 0.5 * e.horizon).abs().total_cmp(&(b.time - 0.5 * e.horizon).abs()))
        .expect("checkpoints");
    let s2: Vec<f64> = (0..n * n)
        .map(|k| (0..n).map(|m| e.sigma[(k / n) * n + m] * e.sigma[m * n + k % n]).sum())
        .collect();
    for c in [half, e.terminal()] {
        for d in 0..n {
            let ys = PathEnsemble::coord(&c.y, n, d);
            let sd = (c.time * s2[d * n + d]).sqrt();
            let ks = stats::ks_statistic(&ys, |y| normal_cdf(y / sd));
            let p = stats::ks_pvalue(ks, ys.len());
            out.push(CheckResult::at_least(
                format!("inconspicuous_ks_y{d}_{}", time_label(c.time, e.horizon)),
                p,
                KS_LEVEL,
                prop,
            ));
        }
    }
    let term = e.terminal();
    for i in 0..n {
        for j in i..n {
            let yi = PathEnsemble::coord(&term.y, n, i);
            let yj = PathEnsemble::coord(&term.y, n, j);
            let (mi, mj) = (stats::mean(&yi), stats::mean(&yj));
            let prod: Vec<f64> = yi.iter().zip(&yj).map(|(a, b)| (a - mi) * (b - mj)).collect();
            let z = z_score(stats::mean(&prod) - e.horizon * s2[i * n + j], stats::std_error(&prod)).abs();
            out.push(CheckResult::at_most(format!("inconspicuous_cov_{i}{j}"), z, SE_MULTIPLE, prop));
        }
    }
    out
}

/// `(t, ξ)` pairs taken from the first `per_checkpoint` paths at each
/// interior checkpoint.
pub fn filtering_samples(e: &PathEnsemble, per_checkpoint: usize) -> Vec<(f64, Vec<f64>)> {
    let n = e.dim;
    let mut out = Vec::new();
    for c in &e.checkpoints[..e.checkpoints.len() - 1] {
        for p in 0..per_checkpoint.min(e.n_paths()) {
            out.push((c.time, c.xi[p * n..(p + 1) * n].to_vec()));
        }
    }
    out
}

/// Nodes and trapezoid weights of a tensor box centred at `centre`.
fn box_rule(centre: &[f64], half_width: f64, nodes: usize) -> (Vec<Vec<f64>>, f64) {
    let n = centre.len();
    let h = 2.0 * half_width / (nodes - 1) as f64;
    let total = nodes.pow(n as u32);
    let mut pts = Vec::with_capacity(total);
    for k in 0..total {
        let mut rem = k;
        let mut p = vec![0.0; n];
        for d in (0..n).rev() {
            p[d] = centre[d] - half_width + h * (rem % nodes) as f64;
            rem /= nodes;
        }
        pts.push(p);
    }
    (pts, h.powi(n as i32))
}

/// Filtering identities of the transition density at sampled `(t, ξ)`:
/// its mean is ξ, its ξ-gradient matches the innovation form, and it
/// reproduces the price as the posterior mean of Dφ.
pub fn check_filtering(model: &dyn EquilibriumModel, samples: &[(f64, Vec<f64>)], seed: u64) -> Result<Vec<CheckResult>> {
    let n = model.dim();
    let horizon = model.horizon();
    let sigma = Mat::from_row_slice(n, n, model.sigma());
    let s_inv2 = linalg::inv_spd(&(&sigma * &sigma));
    let s2max = linalg::lambda_max(&(&sigma * &sigma));
    let nodes = if n == 1 { 2001 } else { 161 };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut mean_err, mut grad_err, mut price_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (t, xi) in samples {
        let t = *t;
        if t >= horizon {
            return Err(Error::InvalidInput("filtering samples need t < T".into()));
        }
        let tau = horizon - t;
        let from = model.maps_at(t, xi)?;
        let dinv = Mat::from_row_slice(n, n, &from.dchi_inv);
        let spread = (tau * s2max).sqrt() * linalg::lambda_max(&linalg::symmetrize(&(&dinv * dinv.transpose()))).sqrt();
        let (pts, w) = box_rule(xi, 10.0 * spread.max(1e-8), nodes);
        let mut mean = vec![0.0; n];
        let mut post = vec![0.0; n];
        for y in &pts {
            let g = model.log_g_from(&from, xi, horizon, y)?.exp() * w;
            if g == 0.0 {
                continue;
            }
            let dphi = model.grad_phi(y);
            for d in 0..n {
                mean[d] += g * y[d];
                post[d] += g * dphi[d];
            }
        }
        let scale = |v: &[f64]| linalg::norm(v).max(1.0);
        let dm: Vec<f64> = mean.iter().zip(xi).map(|(a, b)| a - b).collect();
        mean_err = mean_err.max(linalg::norm(&dm) / scale(xi));
        let dp: Vec<f64> = post.iter().zip(&from.price).map(|(a, b)| a - b).collect();
        price_err = price_err.max(linalg::norm(&dp) / scale(&from.price));

        let dchi = linalg::inverse(&dinv)?;
        let m = &s_inv2 * &dchi / tau;
        let h = 1e-5 * (1.0 + linalg::norm(xi));
        let shifted: Vec<_> = (0..n)
            .map(|d| {
                let mut plus = xi.clone();
                let mut minus = xi.clone();
                plus[d] += h;
                minus[d] -= h;
                Ok((model.maps_at(t, &plus)?, plus, model.maps_at(t, &minus)?, minus))
            })
            .collect::<Result<_>>()?;
        for _ in 0..20 {
            let y: Vec<f64> = xi.iter().map(|x| x + spread * rng.sample::<f64, _>(StandardNormal)).collect();
            let expected: Vec<f64> =
                (0..n).map(|j| (0..n).map(|i| (y[i] - xi[i]) * m[(i, j)]).sum()).collect();
            let mut fd = vec![0.0; n];
            for (d, (mp, xp, mm, xm)) in shifted.iter().enumerate() {
                fd[d] = (model.log_g_from(mp, xp, horizon, &y)? - model.log_g_from(mm, xm, horizon, &y)?) / (2.0 * h);
            }
            let diff: Vec<f64> = fd.iter().zip(&expected).map(|(a, b)| a - b).collect();
            grad_err = grad_err.max(linalg::norm(&diff) / scale(&expected));
        }
    }
    Ok(vec![
        CheckResult::at_most(
            "filtering_mean",
            mean_err,
            FILTER_TOL,
            "the transition density of the state to the horizon has mean equal to the current state",
        ),
        CheckResult::at_most(
            "filtering_log_density_gradient",
            grad_err,
            FILTER_TOL,
            "the state-gradient of the log transition density is the scaled innovation",
        ),
        CheckResult::at_most(
            "filtering_posterior_price",
            price_err,
            FILTER_TOL,
            "the price is the posterior mean of the terminal marginal value",
        ),
    ])
}

/// Closed-form conditional expected utility of the insider.
pub struct UtilityFormula<'a> {
    model: &'a dyn EquilibriumModel,
    p00: Vec<f64>,
    gamma00: f64,
}

impl<'a> UtilityFormula<'a> {
    pub fn new(model: &'a dyn EquilibriumModel) -> Result<Self> {
        let m = model.maps_at(0.0, &vec![0.0; model.dim()])?;
        Ok(Self { model, p00: m.price, gamma00: m.gamma })
    }

    fn sigma_norm2(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let s = self.model.sigma();
        (0..n).map(|i| (0..n).map(|j| s[i * n + j] * x[j]).sum::<f64>().powi(2)).sum()
    }

    /// Certainty equivalent
    /// `φ^c(v) − (γT/2)|σ(v − P₀₀)|² + Γ₀₀ + (γT/2)|σP₀₀|²`.
    pub fn certainty_equivalent(&self, v: &[f64]) -> Result<f64> {
        let g = self.model.gamma();
        let t = self.model.horizon();
        let dv: Vec<f64> = v.iter().zip(&self.p00).map(|(a, b)| a - b).collect();
        Ok(self.model.conjugate(v)? - 0.5 * g * t * self.sigma_norm2(&dv)
            + self.gamma00
            + 0.5 * g * t * self.sigma_norm2(&self.p00))
    }

    /// `−e^{−γ·CE(v)}`, or the certainty equivalent itself when γ = 0.
    pub fn value(&self, v: &[f64]) -> Result<f64> {
        let ce = self.certainty_equivalent(v)?;
        let g = self.model.gamma();
        Ok(if g == 0.0 { ce } else { -(-g * ce).exp() })
    }
}

/// Closed-form utility of one ṽ; see [`UtilityFormula`].
pub fn utility_expression(model: &dyn EquilibriumModel, v: &[f64]) -> Result<f64> {
    UtilityFormula::new(model)?.value(v)
}

#[derive(Debug, Clone, Serialize)]
pub struct UtilityBin {
    pub v_mean: Vec<f64>,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub formula: f64,
    pub allowance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct UtilityReport {
    pub checks: Vec<CheckResult>,
    pub bins: Vec<UtilityBin>,
    pub quadrature: f64,
    /// Prior weight skipped because the conjugate was unbounded there.
    pub skipped_weight: f64,
}

/// Integrate `f` against the prior.
fn prior_expectation(prior: &PriorSpec, f: &dyn Fn(&[f64]) -> Result<f64>) -> (f64, f64) {
    let mut acc = 0.0;
    let mut total = 0.0;
    let mut skipped = 0.0;
    match prior {
        PriorSpec::Gaussian { mean, cov } => {
            let n = mean.len();
            let l = cov.clone().cholesky().expect("validated SPD").l();
            let rule = TensorRule::new(n, if n == 1 { 48 } else { 24 }, 1e-16);
            for k in 0..rule.len() {
                let z = rule.point(k);
                let v: Vec<f64> = (0..n).map(|i| mean[i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>()).collect();
                let w = rule.log_weights[k].exp();
                match f(&v) {
                    Ok(u) => {
                        acc += w * u;
                        total += w;
                    }
                    Err(_) => skipped += w,
                }
            }
        }
        PriorSpec::LogConcaveGrid { density, .. } => {
            for (k, w) in density.masses().into_iter().enumerate() {
                match f(&density.grid().node(k)) {
                    Ok(u) => {
                        acc += w * u;
                        total += w;
                    }
                    Err(_) => skipped += w,
                }
            }
        }
    }
    (acc / total, skipped)
}

/// Simulated utility against the closed-form conditional expected utility,
/// globally and in quantile bins of ṽ. With γ = 0 wealth replaces utility.
pub fn check_utility(e: &PathEnsemble, model: &dyn EquilibriumModel, prior: &PriorSpec) -> Result<UtilityReport> {
    let n = e.dim;
    let formula = UtilityFormula::new(model)?;
    let sample: &[f64] = if e.gamma == 0.0 { &e.wealth } else { &e.utility };
    let (quad, skipped) = prior_expectation(prior, &|v| formula.value(v));
    let prop = "the conditional expected utility of the insider has the closed form in the conjugate potential";
    let z = z_score(stats::mean(sample) - quad, stats::std_error(sample)).abs();
    let mut checks = vec![CheckResult::at_most("utility_global", z, SE_MULTIPLE, prop)];

    let mut order: Vec<usize> = (0..e.n_paths()).collect();
    order.sort_by(|&a, &b| e.v[a * n].total_cmp(&e.v[b * n]));
    let per = order.len() / UTILITY_BINS;
    let mut bins = Vec::with_capacity(UTILITY_BINS);
    if per >= 2 {
        for b in 0..UTILITY_BINS {
            let idx = &order[b * per..if b + 1 == UTILITY_BINS { order.len() } else { (b + 1) * per }];
            let vals: Vec<f64> = idx.iter().map(|&i| sample[i]).collect();
            let v_mean: Vec<f64> =
                (0..n).map(|d| stats::mean(&idx.iter().map(|&i| e.v[i * n + d]).collect::<Vec<_>>())).collect();
            let at_mean = formula.value(&v_mean)?;
            let pointwise: Vec<f64> =
                idx.iter().map(|&i| formula.value(&e.v[i * n..(i + 1) * n])).collect::<Result<_>>()?;
            let allowance = (stats::mean(&pointwise) - at_mean).abs();
            let mc_mean = stats::mean(&vals);
            let mc_se = stats::std_error(&vals);
            bins.push(UtilityBin {
                pass: (mc_mean - at_mean).abs() <= SE_MULTIPLE * mc_se + allowance,
                v_mean,
                mc_mean,
                mc_se,
                formula: at_mean,
                allowance,
            });
        }
    }
    let passed = bins.iter().filter(|b| b.pass).count();
    checks.push(CheckResult::at_least("utility_bins", passed as f64, UTILITY_BINS_REQUIRED as f64, prop));
    Ok(UtilityReport { checks, bins, quadrature: quad, skipped_weight: skipped })
}

/// Simulate deviations with the equilibrium's seed and compare utilities
/// path by path. Each deviation must not beat the equilibrium by more than
/// three standard errors and at least one must be significantly worse.
pub fn suboptimality_probe(
    model: &dyn EquilibriumModel,
    prior: &PriorSpec,
    cfg: &SimConfig,
    eq: &PathEnsemble,
    deviations: &[Strategy],
) -> Result<(Vec<CheckResult>, Vec<EnsembleSummary>)> {
    let pick = |e: &PathEnsemble| if e.gamma == 0.0 { e.wealth.clone() } else { e.utility.clone() };
    let base = pick(eq);
    let quiet = SimConfig { thin_paths: 0, ..cfg.clone() };
    let prop = "bridging strategies without a diffusion part attain the utility upper bound";
    let mut checks = Vec::new();
    let mut summaries = Vec::new();
    let mut worst = f64::INFINITY;
    for s in deviations {
        let dev = simulate(model, prior, &quiet, *s)?;
        let diff: Vec<f64> = pick(&dev).iter().zip(&base).map(|(a, b)| a - b).collect();
        let z = z_score(stats::mean(&diff), stats::std_error(&diff));
        worst = worst.min(z);
        checks.push(CheckResult::at_most(format!("deviation_not_better_{}", s.label()), z, SE_MULTIPLE, prop));
        summaries.push(dev.summary());
    }
    checks.push(CheckResult::at_most("deviation_strictly_worse", worst, -SE_MULTIPLE, prop));
    Ok((checks, summaries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianEquilibrium;
    use crate::market::MarketParams;
    use crate::potential::ConvexPotential;
    use crate::sim::{simulate, GaussianModel, SimConfig, Strategy, TabulatedModel};

    fn params(gamma: f64) -> MarketParams {
        let prior = PriorSpec::gaussian(vec![0.0], Mat::from_element(1, 1, 1.0)).unwrap();
        MarketParams::new(1.0, Mat::from_element(1, 1, 1.0), gamma, prior).unwrap()
    }

    fn cfg(n_paths: usize) -> SimConfig {
        SimConfig { n_paths, n_steps: 200, seed: 4, thin_paths: 0, ..Default::default() }
    }

    fn failures(checks: &[CheckResult]) -> Vec<&str> {
        checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }

    #[test]
    fn thresholds_and_nan() {
        assert!(CheckResult::at_most("a", 1.0, 1.0, "").pass);
        assert!(!CheckResult::at_most("a", f64::NAN, 1.0, "").pass);
        assert!(CheckResult::at_least("a", 2.0, 1.8, "").pass);
        assert!(!CheckResult::at_least("a", f64::NAN, 1.8, "").pass);
        assert_eq!(z_score(0.0, 0.0), 0.0);
        assert_eq!(z_score(-1.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(z_score(1.0, 0.5), 2.0);
    }

    #[test]
    fn equilibrium_passes_path_checks() {
        let p = params(0.1);
        let model = GaussianModel::new(GaussianEquilibrium::solve(&p).unwrap());
        let e = simulate(&model, &p.prior, &cfg(20_000), Strategy::Equilibrium).unwrap();
        let mut checks = check_terminal(&e);
        checks.extend(check_martingale(&e));
        checks.extend(check_inconspicuous(&e));
        assert!(failures(&checks).is_empty(), "{:?}", failures(&checks));
    }

    #[test]
    fn mispriced_rule_is_detected() {
        let p = params(0.1);
        let eq = GaussianEquilibrium::solve(&p).unwrap();
        let wrong = GaussianEquilibrium::from_parts(&p, eq.a() * 1.1, eq.b().to_vec()).unwrap();
        let model = GaussianModel::new(wrong);
        let e = simulate(&model, &p.prior, &cfg(20_000), Strategy::Equilibrium).unwrap();
        let mut checks = check_martingale(&e);
        checks.extend(check_inconspicuous(&e));
        let failed = failures(&checks);
        assert!(failed.iter().any(|n| n.starts_with("martingale_slope_price")), "{failed:?}");
        assert!(failed.contains(&"inconspicuous_cov_00"), "{failed:?}");
    }

    #[test]
    fn filtering_identities_hold_for_both_models() {
        let p = params(0.1);
        let eq = GaussianEquilibrium::solve(&p).unwrap();
        let samples = vec![(0.25, vec![0.3]), (0.5, vec![-0.8]), (0.9, vec![1.2])];
        let gm = GaussianModel::new(eq.clone());
        let grid = crate::grid::RectGrid::centered(&[0.0], &[8.0], &[801]).unwrap();
        let phi = ConvexPotential::tabulate(grid, &eq.potential(), p.l_bound()).unwrap();
        let tm = TabulatedModel::new(&p, phi).unwrap();
        for model in [&gm as &dyn EquilibriumModel, &tm] {
            let checks = check_filtering(model, &samples, 1).unwrap();
            assert_eq!(checks.len(), 3);
            assert!(failures(&checks).is_empty(), "{checks:?}");
        }
    }

    #[test]
    fn utility_formula_matches_simulation() {
        let p = params(0.1);
        let model = GaussianModel::new(GaussianEquilibrium::solve(&p).unwrap());
        let e = simulate(&model, &p.prior, &cfg(20_000), Strategy::Equilibrium).unwrap();
        let report = check_utility(&e, &model, &p.prior).unwrap();
        assert!(failures(&report.checks).is_empty(), "{:?}", report.checks);
        assert_eq!(report.bins.len(), UTILITY_BINS);
        assert!(report.quadrature < 0.0 && report.quadrature > -1.0);
    }

    #[test]
    fn certainty_equivalent_at_zero_risk_aversion() {
        let p = params(0.0);
        let model = GaussianModel::new(GaussianEquilibrium::solve(&p).unwrap());
        let f = UtilityFormula::new(&model).unwrap();
        let g00 = model.maps_at(0.0, &[0.0]).unwrap().gamma;
        for v in [-1.0, 0.0, 2.0] {
            let ce = f.certainty_equivalent(&[v]).unwrap();
            assert!((ce - (0.5 * v * v + g00)).abs() < 1e-12);
        }
    }

    #[test]
    fn deviations_are_not_better() {
        let p = params(0.1);
        let model = GaussianModel::new(GaussianEquilibrium::solve(&p).unwrap());
        let c = cfg(5_000);
        let e = simulate(&model, &p.prior, &c, Strategy::Equilibrium).unwrap();
        let devs = [Strategy::Equilibrium, Strategy::Hold];
        let (checks, summaries) = suboptimality_probe(&model, &p.prior, &c, &e, &devs).unwrap();
        assert_eq!(summaries.len(), 2);
        assert_eq!(checks[0].statistic, 0.0);
        assert!(checks.iter().all(|c| c.pass), "{checks:?}");
    }
}
