//! Run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use kyleback_core::fixed_point::FixedPointConfig;
use kyleback_core::grid::RectGrid;
use kyleback_core::linalg::{self, Mat};
use kyleback_core::market::{MarketParams, PriorSpec};
use kyleback_core::sim::{SimConfig, Strategy};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketBlock,
    pub prior: PriorBlock,
    #[serde(default)]
    pub fixed_point: FixedPointBlock,
    #[serde(default)]
    pub simulation: SimulationBlock,
    pub output: PathBuf,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketBlock {
    pub horizon: f64,
    /// Rows of the noise volatility matrix.
    pub sigma: Vec<Vec<f64>>,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorBlock {
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    /// Product of per-axis densities `exp(−x²/2s²)` with scale `left` below
    /// zero and `right` above, tabulated on `[−width·left, width·right]`.
    AsymmetricGaussian {
        left: Vec<f64>,
        right: Vec<f64>,
        #[serde(default = "default_width")]
        width: f64,
        nodes: Option<usize>,
    },
    /// Log-density values on a tensor grid, row-major with the last axis fastest.
    Grid {
        lower: Vec<f64>,
        upper: Vec<f64>,
        counts: Vec<usize>,
        log_density: Vec<f64>,
        /// Log-concavity constant; estimated from the table when absent.
        kappa: Option<f64>,
    },
}

fn default_width() -> f64 {
    8.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPointBlock {
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub damping: Option<f64>,
    pub nodes_per_axis: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// The potential from the fixed-point stage.
    FixedPoint,
    /// The closed-form Gaussian equilibrium.
    Oracle,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeviationBlock {
    ScaledDrift { factor: f64 },
    EarlyStop { fraction: f64 },
    Hold,
}

impl DeviationBlock {
    pub fn strategy(&self) -> Strategy {
        match *self {
            Self::ScaledDrift { factor } => Strategy::ScaledDrift(factor),
            Self::EarlyStop { fraction } => Strategy::EarlyStop(fraction),
            Self::Hold => Strategy::Hold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckFlags {
    pub terminal: bool,
    pub martingale: bool,
    pub inconspicuous: bool,
    pub filtering: bool,
    pub utility: bool,
    pub optimality: bool,
    pub wealth_gap: bool,
}

impl Default for CheckFlags {
    fn default() -> Self {
        Self {
            terminal: true,
            martingale: true,
            inconspicuous: true,
            filtering: true,
            utility: true,
            optimality: true,
            wealth_gap: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationBlock {
    pub n_paths: usize,
    pub n_steps: usize,
    pub delta: f64,
    pub seed: u64,
    pub thin_paths: usize,
    pub thin_every: usize,
    pub model: ModelSource,
    /// Nodes per axis of the tabulated pricing rule; 0 disables the table.
    pub cache_nodes: Option<usize>,
    pub deviations: Vec<DeviationBlock>,
    pub checks: CheckFlags,
    pub filtering_samples: usize,
    pub wealth_gap_paths: usize,
}

impl Default for SimulationBlock {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            n_paths: s.n_paths,
            n_steps: s.n_steps,
            delta: s.delta,
            seed: s.seed,
            thin_paths: s.thin_paths,
            thin_every: s.thin_every,
            model: ModelSource::FixedPoint,
            cache_nodes: None,
            deviations: vec![DeviationBlock::ScaledDrift { factor: 1.5 }, DeviationBlock::EarlyStop { fraction: 0.8 }],
            checks: CheckFlags::default(),
            filtering_samples: 3,
            wealth_gap_paths: 100,
        }
    }
}

impl SimulationBlock {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n_paths: self.n_paths,
            n_steps: self.n_steps,
            delta: self.delta,
            seed: self.seed,
            thin_paths: self.thin_paths,
            thin_every: self.thin_every,
            zero_noise: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Oracle,
    #[serde(rename = "fixedpoint")]
    FixedPoint,
    Simulate,
    Checks,
    All,
}

impl std::str::FromStr for Stage {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.trim().to_string()))
            .with_context(|| format!("unknown stage `{s}` (expected oracle, fixedpoint, simulate, checks or all)"))
    }
}

fn default_stages() -> Vec<Stage> {
    vec![Stage::All]
}

/// Stages to execute, in dependency order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StagePlan {
    pub oracle: bool,
    pub fixed_point: bool,
    pub simulate: bool,
    pub checks: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("configuration error at `{path}`: {}", e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text)
    }

    /// Check everything that does not require solving anything.
    pub fn validate(&self) -> Result<()> {
        self.market_params()?;
        self.simulation.sim_config().validate().context("simulation")?;
        if self.stages.is_empty() {
            bail!("configuration error at `stages`: at least one stage is required");
        }
        let plan = self.plan();
        if plan.oracle && !matches!(self.prior, PriorBlock::Gaussian { .. }) && !self.stages.contains(&Stage::All) {
            bail!("configuration error at `stages`: the oracle stage needs a Gaussian prior");
        }
        if self.simulation.model == ModelSource::Oracle && !matches!(self.prior, PriorBlock::Gaussian { .. }) {
            bail!("configuration error at `simulation.model`: the oracle model needs a Gaussian prior");
        }
        for (i, d) in self.simulation.deviations.iter().enumerate() {
            match *d {
                DeviationBlock::ScaledDrift { factor } if !(factor > 0.0 && factor.is_finite()) => {
                    bail!("configuration error at `simulation.deviations[{i}].factor`: must be positive")
                }
                DeviationBlock::EarlyStop { fraction } if !(fraction > 0.0 && fraction < 1.0) => {
                    bail!("configuration error at `simulation.deviations[{i}].fraction`: must lie in (0, 1)")
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn plan(&self) -> StagePlan {
        let all = self.stages.contains(&Stage::All);
        let gaussian = matches!(self.prior, PriorBlock::Gaussian { .. });
        let has = |s: Stage| all || self.stages.contains(&s);
        StagePlan {
            oracle: if all { gaussian } else { has(Stage::Oracle) },
            fixed_point: has(Stage::FixedPoint),
            simulate: has(Stage::Simulate) || has(Stage::Checks),
            checks: has(Stage::Checks),
        }
    }

    pub fn dim(&self) -> usize {
        self.market.sigma.len()
    }

    pub fn market_params(&self) -> Result<MarketParams> {
        let sigma = matrix(&self.market.sigma).context("configuration error at `market.sigma`")?;
        let prior = self.prior_spec()?;
        MarketParams::new(self.market.horizon, sigma, self.market.gamma, prior)
            .context("configuration error at `market`")
    }

    pub fn prior_spec(&self) -> Result<PriorSpec> {
        match &self.prior {
            PriorBlock::Gaussian { mean, cov } => {
                let cov = matrix(cov).context("configuration error at `prior.cov`")?;
                PriorSpec::gaussian(mean.clone(), cov).context("configuration error at `prior`")
            }
            PriorBlock::AsymmetricGaussian { left, right, width, nodes } => {
                let n = left.len();
                if n == 0 || right.len() != n {
                    bail!("configuration error at `prior`: `left` and `right` need equal nonzero length");
                }
                if left.iter().chain(right).any(|s| !(*s > 0.0 && s.is_finite())) || !(*width > 0.0) {
                    bail!("configuration error at `prior`: scales and width must be positive");
                }
                let count = nodes.unwrap_or(if n == 1 { 1201 } else { 161 });
                let grid = RectGrid::new(
                    left.iter().map(|s| -width * s).collect(),
                    right.iter().map(|s| width * s).collect(),
                    vec![count; n],
                )
                .context("configuration error at `prior`")?;
                let logs = (0..grid.len())
                    .map(|k| {
                        grid.node(k)
                            .iter()
                            .enumerate()
                            .map(|(d, &x)| {
                                let s = if x < 0.0 { left[d] } else { right[d] };
                                -0.5 * (x / s).powi(2)
                            })
                            .sum()
                    })
                    .collect();
                let kappa = left.iter().chain(right).map(|s| 1.0 / (s * s)).fold(f64::INFINITY, f64::min);
                PriorSpec::log_concave_grid(grid, logs, kappa).context("configuration error at `prior`")
            }
            PriorBlock::Grid { lower, upper, counts, log_density, kappa } => {
                let grid = RectGrid::new(lower.clone(), upper.clone(), counts.clone())
                    .context("configuration error at `prior`")?;
                let kappa = match kappa {
                    Some(k) => *k,
                    None => kyleback_core::market::GriddedDensity::from_log_values(grid.clone(), log_density.clone())
                        .context("configuration error at `prior.log_density`")?
                        .min_log_concavity(),
                };
                PriorSpec::log_concave_grid(grid, log_density.clone(), kappa)
                    .context("configuration error at `prior`")
            }
        }
    }

    pub fn fixed_point_config(&self) -> FixedPointConfig {
        let mut c = FixedPointConfig::for_dim(self.dim());
        let b = &self.fixed_point;
        if let Some(v) = b.max_iters {
            c.max_iters = v;
        }
        if let Some(v) = b.grad_tol {
            c.grad_tol = v;
        }
        if let Some(v) = b.damping {
            c.damping = v;
        }
        if let Some(v) = b.nodes_per_axis {
            c.nodes_per_axis = v;
        }
        c
    }
}

fn matrix(rows: &[Vec<f64>]) -> Result<Mat> {
    linalg::from_rows(rows).map_err(|e| anyhow::anyhow!("{e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "market": {"horizon": 1.0, "sigma": [[1.0]], "gamma": 0.1},
        "prior": {"kind": "gaussian", "mean": [0.0], "cov": [[1.0]]},
        "output": "out"
    }"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.simulation.n_paths, 100_000);
        assert_eq!(c.stages, vec![Stage::All]);
        let p = c.plan();
        assert!(p.oracle && p.fixed_point && p.simulate && p.checks);
    }

    #[test]
    fn missing_sigma_names_the_field() {
        let text = MINIMAL.replace(r#""sigma": [[1.0]], "#, "");
        let err = RunConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("market") && err.contains("sigma"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace(r#""gamma": 0.1"#, r#""gamma": 0.1, "gama": 2"#);
        let err = RunConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("gama"), "{err}");
    }

    #[test]
    fn stages_parse_from_strings() {
        assert_eq!("fixedpoint".parse::<Stage>().unwrap(), Stage::FixedPoint);
        assert!("solve".parse::<Stage>().is_err());
    }

    #[test]
    fn asymmetric_prior_is_log_concave() {
        let text = MINIMAL.replace(
            r#"{"kind": "gaussian", "mean": [0.0], "cov": [[1.0]]}"#,
            r#"{"kind": "asymmetric_gaussian", "left": [0.6], "right": [1.5]}"#,
        );
        let c = RunConfig::from_json(&text).unwrap();
        let p = c.prior_spec().unwrap();
        assert!((p.kappa() - 1.0 / 2.25).abs() < 1e-12);
        assert!(!c.plan().oracle);
    }
}
