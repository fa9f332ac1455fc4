//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use kyleback_core::density::TransitionDensity;
use kyleback_core::fixed_point::{solve_equilibrium, FixedPointConfig, FixedPointReport, CAP_SLACK};
use kyleback_core::gaussian::GaussianEquilibrium;
use kyleback_core::grid::RectGrid;
use kyleback_core::linalg::{self, Mat, Vector};
use kyleback_core::maps::EquilibriumMaps;
use kyleback_core::market::{GriddedDensity, MarketParams, PriorSpec};
use kyleback_core::potential::{ConvexPotential, Potential};
use kyleback_core::sim::{
    check_filtering, check_inconspicuous, check_martingale, check_terminal, check_utility, filtering_samples,
    simulate, step_times, suboptimality_probe, wealth_gap_study, CheckResult, PathEnsemble, SimConfig, Strategy,
    TabulatedModel,
};
use kyleback_core::stats;
use kyleback_core::transport::{brenier_1d, operator_norm, TransportTarget};
use kyleback_core::value_function::ValueFunction;

/// Slope of the 1D Gaussian equilibrium map for σ = σ_ν = T = 1, γ = 0.1.
const SLOPE_1D: f64 = 0.95125;
const SEED: u64 = 20240611;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn params(sigma: Mat, cov: Mat, gamma: f64) -> MarketParams {
    let n = sigma.nrows();
    let prior = PriorSpec::gaussian(vec![0.0; n], cov).unwrap();
    MarketParams::new(1.0, sigma, gamma, prior).unwrap()
}

fn scalar(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

fn rows(r: &[&[f64]]) -> Mat {
    linalg::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
}

/// Deterministic points in `[0, 1)` from the additive recurrence with the
/// plastic-number constants.
fn low_discrepancy(k: usize, axis: usize) -> f64 {
    const ALPHA: [f64; 3] = [0.754_877_666_246_692_7, 0.569_840_290_998_053_3, 0.618_033_988_749_894_8];
    (0.5 + ALPHA[axis] * (k + 1) as f64).fract()
}

fn failed_names(checks: &[CheckResult]) -> Vec<String> {
    checks.iter().filter(|c| !c.pass).map(|c| format!("{}={:.3e}", c.name, c.statistic)).collect()
}

fn by_name<'a>(checks: &'a [CheckResult], name: &str) -> &'a CheckResult {
    checks.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("no check {name}"))
}

struct Shared {
    p1: MarketParams,
    r1: FixedPointReport,
    t1: Duration,
    p2: MarketParams,
    r2: FixedPointReport,
    t2: Duration,
    model: Option<TabulatedModel>,
    ens: Option<PathEnsemble>,
}

fn criterion_1(s: &Shared) -> Verdict {
    let g = RectGrid::centered(&[0.0], &[4.0], &[161]).unwrap();
    let xs = g.axis_coords(0);
    let ys: Vec<f64> = xs.iter().map(|x| s.r1.potential.grad_vec(&[*x])[0]).collect();
    let fit = stats::ols(&xs, &ys);
    let oracle = GaussianEquilibrium::solve(&s.p1).unwrap().a()[(0, 0)];
    let rel = (fit.slope - SLOPE_1D).abs() / SLOPE_1D;
    let pass = s.r1.converged && rel < 0.01 && fit.intercept.abs() < 1e-3 && s.t1.as_secs_f64() < 120.0;
    verdict(
        pass,
        format!(
            "slope {:.6} (target {SLOPE_1D}, oracle {oracle:.6}, rel {rel:.2e} < 1e-2), intercept {:.2e} (< 1e-3), \
             {} iterations, {:.1}s (< 120s)",
            fit.slope,
            fit.intercept,
            s.r1.iterations,
            s.t1.as_secs_f64()
        ),
    )
}

fn criterion_2(s: &Shared) -> Verdict {
    let eq = GaussianEquilibrium::solve(&s.p2).unwrap();
    let h = s.r2.potential.hess_mat(&[0.0, 0.0]);
    let rel = operator_norm(&(h - eq.a())) / operator_norm(eq.a());
    let pass = s.r2.converged && rel < 0.03 && s.t2.as_secs_f64() < 900.0;
    verdict(
        pass,
        format!(
            "‖D²φ(0) − A‖/‖A‖ = {rel:.3e} (< 3e-2), grid {}², {} iterations, {:.1}s (< 900s)",
            s.r2.potential.grid().counts()[0],
            s.r2.iterations,
            s.t2.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Verdict {
    let (left, right) = (0.6, 1.5);
    let grid = RectGrid::new(vec![-8.0 * left], vec![8.0 * right], vec![1201]).unwrap();
    let logs = grid
        .axis_coords(0)
        .iter()
        .map(|x| if *x < 0.0 { -0.5 * (x / left).powi(2) } else { -0.5 * (x / right).powi(2) })
        .collect();
    let prior = PriorSpec::log_concave_grid(grid, logs, 1.0 / (right * right)).unwrap();
    let p = MarketParams::new(1.0, scalar(1.0), 0.0, prior).unwrap();
    let cfg = FixedPointConfig { max_iters: 10, ..FixedPointConfig::for_dim(1) };
    let r = solve_equilibrium(&p, &cfg).unwrap();
    let g = r.potential.grid().clone();
    let nodes = g.counts()[0];
    let src_logs = g.axis_coords(0).iter().map(|x| -0.5 * x * x).collect();
    let src = GriddedDensity::from_log_values(g, src_logs).unwrap();
    let direct = brenier_1d(&src, &TransportTarget::from_prior(&p.prior), p.l_bound()).unwrap();
    let box4 = RectGrid::centered(&[0.0], &[4.0], &[161]).unwrap();
    let gap = r.potential.gradient_distance(&direct.potential, &box4);
    let ks = r.final_pushforward_error;
    let pass = r.converged && r.iterations == 1 && ks < 2.0 / nodes as f64 && gap < 1e-3;
    verdict(
        pass,
        format!(
            "{} iteration(s) (= 1), KS {ks:.2e} (< 2/{nodes} = {:.2e}), sup|Dφ − Brenier| on 4σ box {gap:.2e}",
            r.iterations,
            2.0 / nodes as f64
        ),
    )
}

fn criterion_4() -> Verdict {
    let p = params(scalar(1.0), scalar(1.0), 0.1);
    let eq = GaussianEquilibrium::solve(&p).unwrap();
    let grid = RectGrid::centered(&[0.0], &[8.0], &[801]).unwrap();
    let phi = ConvexPotential::tabulate(grid, &eq.potential(), p.l_bound()).unwrap();
    let density = TransitionDensity::from_potential(&p, Arc::new(phi)).unwrap();
    let maps = density.maps();
    let vf = maps.value_function();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let mut worst = [0.0f64; 5];
    for k in 0..100 {
        let t = 0.99 * low_discrepancy(k, 0);
        let xi = 6.0 * low_discrepancy(k, 1) - 3.0;
        let z = [6.0 * low_discrepancy(k, 2) - 3.0];
        let m = maps.at(t, &[xi]).unwrap();
        worst[0] = worst[0].max(rel(vf.e(t, &z).unwrap(), eq.e(t, &z)));
        worst[1] = worst[1].max(rel(m.chi[0], eq.chi(t, &[xi])[0]));
        worst[2] = worst[2].max(rel(m.gamma, eq.gamma_map(t, &[xi])));
        worst[3] = worst[3].max(rel(m.price[0], eq.price(&[xi])[0]));
        let sd = eq.transition_cov(t, 1.0)[(0, 0)].sqrt();
        let y = [xi + sd * (4.0 * low_discrepancy(k, 0) - 2.0)];
        let (a, b) = (density.g(t, &[xi], 1.0, &y).unwrap(), eq.g(t, &[xi], 1.0, &y));
        worst[4] = worst[4].max((a - b).abs() / b);
    }
    let pass = worst.iter().all(|w| *w < 1e-4);
    verdict(
        pass,
        format!(
            "max rel error over 100 points (< 1e-4): E {:.1e}, χ {:.1e}, Γ {:.1e}, P {:.1e}, G {:.1e}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

/// Residuals of the backward equations of Γ, χ and P and of the value
/// function equation at interior points.
fn pde_residuals(p: &MarketParams) -> [f64; 4] {
    let n = p.n;
    let eq = GaussianEquilibrium::solve(p).unwrap();
    let maps = EquilibriumMaps::new(ValueFunction::new(p, Arc::new(eq.potential())).unwrap());
    let s2 = p.sigma2();
    let (dt, h) = (1e-4, 1e-2);
    let mut worst = [0.0f64; 4];
    for k in 0..40 {
        let t = 0.05 + 0.9 * low_discrepancy(k, 0);
        let xi: Vec<f64> = (0..n).map(|d| 4.0 * low_discrepancy(k, d + 1) - 2.0).collect();
        let at = |t: f64, x: &[f64]| maps.at(t, x).unwrap();
        let m = at(t, &xi);
        let (mp, mm) = (at(t + dt, &xi), at(t - dt, &xi));
        let fields = |m: &kyleback_core::maps::MapsAt| -> Vec<f64> {
            let mut v = vec![m.gamma];
            v.extend_from_slice(&m.chi);
            v.extend_from_slice(&m.price);
            v
        };
        let f0 = fields(&m);
        let ft: Vec<f64> = fields(&mp).iter().zip(fields(&mm)).map(|(a, b)| (a - b) / (2.0 * dt)).collect();
        let nf = f0.len();
        let mut hess = vec![Mat::zeros(n, n); nf];
        for i in 0..n {
            for j in 0..n {
                let shift = |si: f64, sj: f64| {
                    let mut x = xi.clone();
                    x[i] += si * h;
                    x[j] += sj * h;
                    fields(&at(t, &x))
                };
                let (pp, pm, mp_, mm_) = (shift(1.0, 1.0), shift(1.0, -1.0), shift(-1.0, 1.0), shift(-1.0, -1.0));
                for f in 0..nf {
                    hess[f][(i, j)] = (pp[f] - pm[f] - mp_[f] + mm_[f]) / (4.0 * h * h);
                }
            }
        }
        let dinv = Mat::from_row_slice(n, n, &m.dchi_inv);
        let cov = &dinv * &s2 * dinv.transpose();
        let gen: Vec<f64> = (0..nf).map(|f| ft[f] + 0.5 * (&cov * &hess[f]).trace()).collect();
        let price = Vector::from_column_slice(&m.price);
        let sp = &p.sigma * &price;
        let drift = &s2 * &price * p.gamma;
        worst[0] = worst[0].max((gen[0] - 0.5 * p.gamma * sp.norm_squared()).abs());
        for d in 0..n {
            worst[1] = worst[1].max((gen[1 + d] - drift[d]).abs());
            worst[2] = worst[2].max(gen[1 + n + d].abs());
        }
        let z: Vec<f64> = (0..n).map(|d| 4.0 * low_discrepancy(k + 7, d) - 2.0).collect();
        worst[3] = worst[3].max(maps.value_function().pde_residual(t, &z).unwrap().abs());
    }
    worst
}

fn criterion_5() -> Verdict {
    let one = pde_residuals(&params(scalar(1.0), scalar(1.0), 0.1));
    let two = pde_residuals(&params(rows(&[&[1.0, 0.3], &[0.3, 0.8]]), rows(&[&[1.0, 0.4], &[0.4, 2.0]]), 0.05));
    let pass = one.iter().chain(&two).all(|r| *r < 1e-3);
    let fmt = |r: &[f64; 4]| format!("Γ {:.1e}, χ {:.1e}, P {:.1e}, E {:.1e}", r[0], r[1], r[2], r[3]);
    verdict(pass, format!("max |residual| (< 1e-3): 1D [{}]; 2D [{}]", fmt(&one), fmt(&two)))
}

fn criterion_6(s: &Shared) -> Verdict {
    let (a, b) = (s.r1.ma_residual, s.r2.ma_residual);
    verdict(a < 1e-2 && b < 5e-2, format!("relative residual 1D {a:.2e} (< 1e-2), 2D {b:.2e} (< 5e-2)"))
}

fn criterion_7(s: &mut Shared) -> Verdict {
    let cfg = SimConfig { n_paths: 100_000, n_steps: 500, delta: 1e-3, seed: SEED, ..Default::default() };
    let start = Instant::now();
    let model = TabulatedModel::new(&s.p1, s.r1.potential.clone())
        .unwrap()
        .with_time_cache(&step_times(&cfg, 1.0), s.r1.potential.grid().counts()[0])
        .unwrap();
    let ens = simulate(&model, &s.p1.prior, &cfg, Strategy::Equilibrium).unwrap();
    let mut checks = check_terminal(&ens);
    checks.extend(check_martingale(&ens));
    checks.extend(check_inconspicuous(&ens));
    let filtering = check_filtering(&model, &filtering_samples(&ens, 3), SEED).unwrap();
    checks.extend(filtering.clone());
    let secs = start.elapsed().as_secs_f64();
    let failed = failed_names(&checks);
    let landing = by_name(&checks, "bridge_landing").statistic;
    let filt = filtering.iter().map(|c| c.statistic).fold(0.0, f64::max);
    let pass = failed.is_empty() && secs < 300.0;
    s.model = Some(model);
    s.ens = Some(ens);
    verdict(
        pass,
        format!(
            "{} checks, failed {failed:?}; landing {landing:.1e} (< 1e-6), filtering max {filt:.1e} (< 1e-3), {secs:.1}s (< 300s)",
            checks.len()
        ),
    )
}

fn criterion_8(s: &Shared) -> Verdict {
    let (model, ens) = (s.model.as_ref().unwrap(), s.ens.as_ref().unwrap());
    let report = check_utility(ens, model, &s.p1.prior).unwrap();
    let global = by_name(&report.checks, "utility_global");
    let passed = report.bins.iter().filter(|b| b.pass).count();
    verdict(
        global.pass && passed >= 18,
        format!("global |z| {:.2} (≤ 3), bins passing {passed}/{} (≥ 18)", global.statistic, report.bins.len()),
    )
}

fn criterion_9(s: &Shared) -> Verdict {
    let (model, ens) = (s.model.as_ref().unwrap(), s.ens.as_ref().unwrap());
    let devs = [Strategy::ScaledDrift(1.5), Strategy::EarlyStop(0.8)];
    let (checks, _) = suboptimality_probe(model, &s.p1.prior, &ens.config, ens, &devs).unwrap();
    let not_better: Vec<&CheckResult> = checks.iter().filter(|c| c.name.starts_with("deviation_not_better")).collect();
    let desc: Vec<String> = not_better.iter().map(|c| format!("{} z {:.2}", c.name, c.statistic)).collect();
    verdict(not_better.iter().all(|c| c.pass), format!("paired z ≤ 3: {}", desc.join(", ")))
}

fn criterion_10(s: &Shared) -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for (label, p, r) in [("1D", &s.p1, &s.r1), ("2D", &s.p2, &s.r2)] {
        let l = 1.0 / (linalg::lambda_max(&p.sigma) * (p.kappa() * p.horizon).sqrt());
        let worst = r.history.iter().map(|h| h.hessian_max).fold(0.0, f64::max);
        pass &= (r.l_bound - l).abs() < 1e-12 && worst <= CAP_SLACK * l && r.clip_events == 0;
        parts.push(format!("{label}: max λmax {worst:.4} (≤ {:.4}), clips {}", CAP_SLACK * l, r.clip_events));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_11(s: &Shared) -> Verdict {
    let model = s.model.as_ref().unwrap();
    let gap = wealth_gap_study(model, &s.p1.prior, 1000, 500, 4, 1e-3, SEED).unwrap();
    verdict(
        gap.ratio >= 1.8,
        format!(
            "rms gap {:.3e} at 500 steps, {:.3e} at 2000 steps, ratio {:.3} (≥ 1.8), 1000 paths",
            gap.coarse_rms, gap.fine_rms, gap.ratio
        ),
    )
}

fn criterion_12() -> Verdict {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/gaussian_1d.json");
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_kyleback"))
            .args(["run", "--config"])
            .arg(&config)
            .arg("--output")
            .arg(&out)
            .status()
            .unwrap();
        if !status.success() {
            return verdict(false, format!("run {k} exited with {status}"));
        }
        let text = fs::read_to_string(out.join("checks.json")).unwrap();
        let kept: Vec<&str> = text.lines().filter(|l| !l.contains("\"generated_unix\"")).collect();
        texts.push(kept.join("\n"));
    }
    let same = texts[0] == texts[1];
    verdict(same, format!("checks.json without timestamp identical: {same} ({} bytes)", texts[0].len()))
}

fn main() -> ExitCode {
    let solve = |p: &MarketParams| {
        let start = Instant::now();
        let r = solve_equilibrium(p, &FixedPointConfig::for_dim(p.n)).unwrap();
        (r, start.elapsed())
    };
    let p1 = params(scalar(1.0), scalar(1.0), 0.1);
    let (r1, t1) = solve(&p1);
    let p2 = params(Mat::identity(2, 2), rows(&[&[1.0, 0.0], &[0.0, 4.0]]), 0.05);
    let (r2, t2) = solve(&p2);
    let mut shared = Shared { p1, r1, t1, p2, r2, t2, model: None, ens: None };

    let mut results = Vec::new();
    let mut record = |k: usize, name: &str, v: Verdict| {
        println!("criterion {k:>2} {name:<28} {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push(v.pass);
    };
    record(1, "gaussian_1d_fixed_point", criterion_1(&shared));
    record(2, "gaussian_2d_fixed_point", criterion_2(&shared));
    record(3, "risk_neutral_reduction", criterion_3());
    record(4, "oracle_stack_equivalence", criterion_4());
    record(5, "pde_residuals", criterion_5());
    record(6, "monge_ampere_residual", criterion_6(&shared));
    let v = criterion_7(&mut shared);
    record(7, "equilibrium_simulation", v);
    record(8, "utility_formula", criterion_8(&shared));
    record(9, "optimality_probes", criterion_9(&shared));
    record(10, "hessian_cap", criterion_10(&shared));
    record(11, "wealth_decomposition", criterion_11(&shared));
    record(12, "determinism", criterion_12());
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
