//! Stage orchestration and result files.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use kyleback_core::density::{default_mu_grid, TransitionDensity};
use kyleback_core::fixed_point::{solve_equilibrium, FixedPointReport, CAP_SLACK};
use kyleback_core::gaussian::GaussianEquilibrium;
use kyleback_core::linalg;
use kyleback_core::market::MarketParams;
use kyleback_core::potential::{ConvexPotential, Potential};
use kyleback_core::sim::{
    check_filtering, check_inconspicuous, check_martingale, check_terminal, check_utility, filtering_samples,
    simulate, step_times, suboptimality_probe, wealth_gap_study, CheckResult, EquilibriumModel, GaussianModel,
    PathEnsemble, Strategy, TabulatedModel,
};

use crate::config::{ModelSource, RunConfig};

/// Relative operator-norm tolerance between the fixed point and the oracle.
pub fn oracle_tolerance(n: usize) -> f64 {
    if n == 1 {
        0.01
    } else {
        0.03
    }
}

/// Relative Monge–Ampère residual tolerance at the fixed point.
pub fn ma_tolerance(n: usize) -> f64 {
    if n == 1 {
        1e-2
    } else {
        5e-2
    }
}

/// What a run produced.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub checks: Vec<CheckResult>,
    pub checks_ran: bool,
}

impl Outcome {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn metadata() -> Value {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    json!({ "generated_unix": now, "tool": concat!("kyleback ", env!("CARGO_PKG_VERSION")) })
}

fn write_json(dir: &Path, name: &str, body: Value) -> Result<()> {
    let mut doc = serde_json::Map::new();
    doc.insert("metadata".into(), metadata());
    if let Value::Object(m) = body {
        doc.extend(m);
    }
    let mut text = serde_json::to_string_pretty(&Value::Object(doc))?;
    text.push('\n');
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn csv_row(values: impl IntoIterator<Item = String>) -> String {
    let mut s = values.into_iter().collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn axis_names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |d| format!("{prefix}{d}"))
}

/// Execute the configured stages and write their outputs.
pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let plan = cfg.plan();
    let params = cfg.market_params()?;
    let n = params.n;
    let dir = cfg.output.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut checks = Vec::new();

    let oracle = if plan.oracle {
        let eq = GaussianEquilibrium::solve(&params).context("oracle stage")?;
        write_oracle(dir, &eq)?;
        info!("oracle stage done");
        Some(eq)
    } else {
        None
    };

    let mut potential: Option<ConvexPotential> = None;
    if plan.fixed_point {
        let report = solve_equilibrium(&params, &cfg.fixed_point_config()).context("fixed-point stage")?;
        report.require_converged().context("fixed-point stage")?;
        write_text(dir, "potential.csv", &report.potential.to_csv())?;
        write_json(dir, "fixed_point.json", report.to_json())?;
        write_densities(dir, &params, &report)?;
        checks.extend(fixed_point_checks(&report, &params, oracle.as_ref()));
        info!("fixed-point stage converged in {} iterations", report.iterations);
        potential = Some(report.potential);
    }

    if plan.simulate {
        let model: Arc<dyn EquilibriumModel> = match cfg.simulation.model {
            ModelSource::Oracle => {
                let eq = match oracle.clone() {
                    Some(eq) => eq,
                    None => GaussianEquilibrium::solve(&params).context("simulation model")?,
                };
                Arc::new(GaussianModel::new(eq))
            }
            ModelSource::FixedPoint => {
                let phi = match potential.take() {
                    Some(p) => p,
                    None => {
                        let path = dir.join("potential.csv");
                        if !path.exists() {
                            bail!("simulation needs {} from the fixed-point stage", path.display());
                        }
                        ConvexPotential::read_csv(&path, params.l_bound())?
                    }
                };
                let mut model = TabulatedModel::new(&params, phi)?;
                let nodes = cfg.simulation.cache_nodes.unwrap_or(if n == 1 {
                    model.potential().grid().counts()[0]
                } else {
                    41
                });
                if nodes > 1 {
                    let times = step_times(&cfg.simulation.sim_config(), params.horizon);
                    model = model.with_time_cache(&times, nodes)?;
                }
                Arc::new(model)
            }
        };
        let sim_cfg = cfg.simulation.sim_config();
        let ens = simulate(model.as_ref(), &params.prior, &sim_cfg, Strategy::Equilibrium)?;
        write_ensemble(dir, &ens)?;
        info!("simulation stage done ({} paths)", ens.n_paths());

        if plan.checks {
            let details = run_checks(cfg, &params, model.as_ref(), &ens, &mut checks)?;
            let outcome = Outcome { checks, checks_ran: true };
            write_checks(dir, &outcome, details)?;
            return Ok(outcome);
        }
    }
    Ok(Outcome { checks, checks_ran: false })
}

fn write_oracle(dir: &Path, eq: &GaussianEquilibrium) -> Result<()> {
    let n = eq.dim();
    let z = vec![0.0; n];
    write_json(
        dir,
        "oracle.json",
        json!({
            "a": linalg::to_rows(eq.a()),
            "b": eq.b(),
            "chi_00": eq.chi(0.0, &z),
            "gamma_00": eq.gamma_map(0.0, &z),
            "price_00": eq.price(&z),
            "mu_mean": eq.mu_mean(),
            "mu_scale": linalg::to_rows(&eq.sigma_a()),
        }),
    )
}

fn write_densities(dir: &Path, params: &MarketParams, report: &FixedPointReport) -> Result<()> {
    let n = params.n;
    let density = TransitionDensity::from_potential(params, Arc::new(report.potential.clone()))?;
    let grid = default_mu_grid(params, report.l_bound, report.potential.grid().counts()[0])?;
    let mu = density.mu_phi_auto(&grid)?;
    let g = mu.density.grid();
    let mut out = csv_row(axis_names("x", n).chain(["mu_phi".to_string(), "nu".to_string()]));
    for (k, lv) in mu.density.log_values().iter().enumerate() {
        let x = g.node(k);
        let nu = params.prior.density(&x).unwrap_or(0.0);
        out.push_str(&csv_row(x.iter().map(|v| num(*v)).chain([num(lv.exp()), num(nu)])));
    }
    write_text(dir, "plotdata_densities.csv", &out)
}

fn fixed_point_checks(
    report: &FixedPointReport,
    params: &MarketParams,
    oracle: Option<&GaussianEquilibrium>,
) -> Vec<CheckResult> {
    let n = params.n;
    let cap = report.history.iter().map(|h| h.hessian_max).fold(0.0, f64::max);
    let mut out = vec![
        CheckResult::at_most(
            "hessian_cap",
            cap,
            CAP_SLACK * report.l_bound,
            "every iterate stays below the curvature bound of the contraction",
        ),
        CheckResult::at_most(
            "monge_ampere_residual",
            report.ma_residual,
            ma_tolerance(n),
            "the potential pushes its terminal law onto the prior",
        ),
    ];
    if n == 1 {
        let nodes = report.potential.grid().counts()[0];
        out.push(CheckResult::at_most(
            "pushforward_distance",
            report.final_pushforward_error,
            2.0 / nodes as f64,
            "the gradient of the potential pushes its terminal law onto the prior",
        ));
    }
    if let Some(eq) = oracle {
        let o = vec![0.0; n];
        let h = report.potential.hess_mat(&o);
        let rel = linalg_norm(&(h - eq.a())) / linalg_norm(eq.a());
        out.push(CheckResult::at_most(
            "fixed_point_matches_oracle",
            rel,
            oracle_tolerance(n),
            "the fixed point of a Gaussian prior is the closed-form linear map",
        ));
        let g = report.potential.grad_vec(&o);
        let off: Vec<f64> = g.iter().zip(eq.b()).map(|(a, b)| a - b).collect();
        out.push(CheckResult::at_most(
            "fixed_point_intercept",
            linalg::norm(&off),
            1e-3,
            "the fixed point of a Gaussian prior is the closed-form linear map",
        ));
    }
    out
}

fn linalg_norm(m: &linalg::Mat) -> f64 {
    kyleback_core::transport::operator_norm(m)
}

fn write_ensemble(dir: &Path, ens: &PathEnsemble) -> Result<()> {
    write_json(
        dir,
        "ensemble_summary.json",
        json!({ "config": ens.config, "summary": ens.summary() }),
    )?;
    write_text(dir, "paths.csv", &ens.paths_csv())?;
    let n = ens.dim;
    let mut out = csv_row(["path_id".to_string(), "t".to_string()].into_iter().chain(axis_names("p", n)));
    for p in &ens.thinned {
        for (k, t) in p.times.iter().enumerate() {
            out.push_str(&csv_row(
                [p.path_id.to_string(), num(*t)]
                    .into_iter()
                    .chain(p.price[k * n..(k + 1) * n].iter().map(|v| num(*v))),
            ));
        }
    }
    write_text(dir, "plotdata_prices.csv", &out)
}

#[derive(Default, Serialize)]
struct CheckDetails {
    #[serde(skip_serializing_if = "Option::is_none")]
    utility: Option<kyleback_core::sim::UtilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wealth_gap: Option<kyleback_core::sim::WealthGap>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    deviations: Vec<kyleback_core::sim::EnsembleSummary>,
}

fn run_checks(
    cfg: &RunConfig,
    params: &MarketParams,
    model: &dyn EquilibriumModel,
    ens: &PathEnsemble,
    checks: &mut Vec<CheckResult>,
) -> Result<CheckDetails> {
    let flags = &cfg.simulation.checks;
    let sim = &cfg.simulation;
    let mut details = CheckDetails::default();
    if flags.terminal {
        checks.extend(check_terminal(ens));
    }
    if flags.martingale {
        checks.extend(check_martingale(ens));
    }
    if flags.inconspicuous {
        checks.extend(check_inconspicuous(ens));
    }
    if flags.filtering {
        let samples = filtering_samples(ens, sim.filtering_samples);
        checks.extend(check_filtering(model, &samples, sim.seed)?);
    }
    if flags.utility {
        let report = check_utility(ens, model, &params.prior)?;
        checks.extend(report.checks.clone());
        details.utility = Some(report);
    }
    if flags.optimality && !sim.deviations.is_empty() {
        let devs: Vec<Strategy> = sim.deviations.iter().map(|d| d.strategy()).collect();
        let (c, summaries) = suboptimality_probe(model, &params.prior, &sim.sim_config(), ens, &devs)?;
        checks.extend(c);
        details.deviations = summaries;
    }
    if flags.wealth_gap && sim.wealth_gap_paths > 0 {
        let gap = wealth_gap_study(model, &params.prior, sim.wealth_gap_paths, sim.n_steps, 4, sim.delta, sim.seed)?;
        checks.push(CheckResult::at_least(
            "wealth_decomposition_convergence",
            gap.ratio,
            1.8,
            "simulated wealth converges to its terminal-value decomposition",
        ));
        details.wealth_gap = Some(gap);
    }
    Ok(details)
}

fn write_checks(dir: &Path, outcome: &Outcome, details: CheckDetails) -> Result<()> {
    if let Some(u) = &details.utility {
        let n = u.bins.first().map_or(0, |b| b.v_mean.len());
        let mut out = csv_row(axis_names("v", n).chain(
            ["mc_mean", "mc_se", "formula", "allowance", "pass"].iter().map(|s| s.to_string()),
        ));
        for b in &u.bins {
            out.push_str(&csv_row(b.v_mean.iter().map(|v| num(*v)).chain([
                num(b.mc_mean),
                num(b.mc_se),
                num(b.formula),
                num(b.allowance),
                b.pass.to_string(),
            ])));
        }
        write_text(dir, "plotdata_utility.csv", &out)?;
    }
    write_json(
        dir,
        "checks.json",
        json!({
            "all_pass": outcome.all_pass(),
            "checks": outcome.checks,
            "details": details,
        }),
    )
}
