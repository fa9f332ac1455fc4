use log::warn;

use super::{TransportDiagnostics, TransportResult, TransportTarget};
use crate::cdf::LogLinearCdf;
use crate::error::{Error, Result};
use crate::market::GriddedDensity;
use crate::potential::{ConvexPotential, Potential};
use crate::stats::{normal_cdf, normal_quantile, normal_sf};

/// Source CDF values below this are treated as having reached 0 or 1.
const CLIP: f64 = 1e-14;

/// Refinement of each cell when measuring the pushforward CDF distance.
const KS_REFINE: usize = 8;

pub(crate) enum TargetCdf {
    Normal { mean: f64, sd: f64 },
    Table(LogLinearCdf),
}

impl TargetCdf {
    pub(crate) fn new(target: &TransportTarget) -> Self {
        match target {
            TransportTarget::Gaussian { mean, cov } => Self::Normal { mean: mean[0], sd: cov[(0, 0)].sqrt() },
            TransportTarget::Gridded(d) => Self::Table(LogLinearCdf::new(&d.grid().axis_coords(0), d.log_values())),
        }
    }

    fn lower(&self, u: f64) -> f64 {
        match self {
            Self::Normal { mean, sd } => mean + sd * normal_quantile(u),
            Self::Table(c) => c.quantile_lower(u),
        }
    }

    fn upper(&self, r: f64) -> f64 {
        match self {
            Self::Normal { mean, sd } => mean - sd * normal_quantile(r),
            Self::Table(c) => c.quantile_upper(r),
        }
    }

    pub(crate) fn cdf_pair(&self, y: f64) -> (f64, f64) {
        match self {
            Self::Normal { mean, sd } => {
                let z = (y - mean) / sd;
                (normal_cdf(z), normal_sf(z))
            }
            Self::Table(c) => c.cdf_pair(y),
        }
    }
}

/// Monotone rearrangement `Dφ = F_target⁻¹ ∘ F_source` on the source grid.
///
/// Both CDFs are those of the log-linear interpolants of the tabulated
/// densities, the source continued by exponential tails beyond its box and a
/// tabulated target kept on its own box. Each tail is inverted from its own
/// side.
pub fn brenier_1d(source: &GriddedDensity, target: &TransportTarget, l_bound: f64) -> Result<TransportResult> {
    let grid = source.grid();
    if grid.dim() != 1 || target.dim() != 1 {
        return Err(Error::InvalidInput("brenier_1d needs one-dimensional measures".into()));
    }
    let xs = grid.axis_coords(0);
    let src = LogLinearCdf::with_tails(&xs, source.log_values());
    let q = TargetCdf::new(target);
    let c = xs.len();
    let mut map = vec![f64::NAN; c];
    let mut clips = 0;
    for i in 0..c {
        let lo = src.lower_at_nodes()[i];
        let up = src.upper_at_nodes()[i];
        if lo.min(up) < CLIP {
            clips += 1;
            continue;
        }
        map[i] = if lo <= up { q.lower(lo) } else { q.upper(up) };
    }
    let first = map.iter().position(|v| v.is_finite());
    let last = map.iter().rposition(|v| v.is_finite());
    let (first, last) = match (first, last) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::InvalidInput("source CDF degenerate on the whole grid".into())),
    };
    for i in 0..first {
        map[i] = map[first];
    }
    for i in last + 1..c {
        map[i] = map[last];
    }
    for i in 1..c {
        if map[i] < map[i - 1] {
            map[i] = map[i - 1];
        }
    }
    if clips > 0 {
        warn!("quantile coupling held the gradient constant at {clips} boundary nodes");
    }
    let potential = ConvexPotential::from_gradients(grid.clone(), map.clone(), l_bound)?;
    let masses = source.masses();
    let cost = masses.iter().zip(&xs).zip(&map).map(|((w, x), y)| w * (x - y).powi(2)).sum();

    let mut ks: f64 = 0.0;
    for i in 0..c - 1 {
        for s in 0..KS_REFINE {
            let x = xs[i] + (xs[i + 1] - xs[i]) * s as f64 / KS_REFINE as f64;
            let (slo, sup) = src.cdf_pair(x);
            let (tlo, tup) = q.cdf_pair(potential.grad_vec(&[x])[0]);
            ks = ks.max(if slo <= sup { (slo - tlo).abs() } else { (sup - tup).abs() });
        }
    }
    let (me, ce) = super::moment_errors(&masses, &map, 1, target);
    let diagnostics = TransportDiagnostics {
        ks_distance: Some(ks),
        quantile_clips: clips,
        relative_mean_error: me,
        relative_cov_error: ce,
        marginal_error: ks,
        ..Default::default()
    };
    Ok(TransportResult { potential, map_values: map, cost, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RectGrid;
    use crate::linalg::Mat;

    fn normal_source(sd: f64, c: usize) -> GriddedDensity {
        let g = RectGrid::centered(&[0.0], &[7.0 * sd], &[c]).unwrap();
        let logs = g.axis_coords(0).iter().map(|x| -0.5 * (x / sd).powi(2)).collect();
        GriddedDensity::from_log_values(g, logs).unwrap()
    }

    fn gaussian(mean: f64, var: f64) -> TransportTarget {
        TransportTarget::Gaussian { mean: vec![mean], cov: Mat::from_element(1, 1, var) }
    }

    #[test]
    fn identity_on_equal_laws() {
        let res = brenier_1d(&normal_source(1.0, 401), &gaussian(0.0, 1.0), 2.0).unwrap();
        let g = res.potential.grid().clone();
        for k in 0..g.len() {
            let x = g.node(k)[0];
            if x.abs() < 5.0 {
                assert!((res.map_values[k] - x).abs() < 1e-3, "x={x}");
                assert!((res.potential.values()[k] - 0.5 * x * x).abs() < 1e-3);
            }
        }
        assert!(res.diagnostics.ks_distance.unwrap() < 2.0 / 401.0);
    }

    #[test]
    fn linear_between_gaussians() {
        let res = brenier_1d(&normal_source(2.0, 401), &gaussian(1.0, 0.25), 1.0).unwrap();
        for &x in &[-3.0, 0.0, 2.5] {
            assert!((res.potential.grad_vec(&[x])[0] - (1.0 + 0.25 * x)).abs() < 2e-4);
        }
        let cap = super::super::hessian_cap_check(&res);
        assert!((cap - 0.25).abs() < 1e-3, "{cap}");
    }

    #[test]
    fn uniform_target_gives_normal_cdf() {
        let g = RectGrid::new(vec![0.0], vec![1.0], vec![201]).unwrap();
        let uniform = GriddedDensity::from_log_values(g, vec![0.0; 201]).unwrap();
        let res = brenier_1d(&normal_source(1.0, 801), &TransportTarget::Gridded(uniform), 1.0).unwrap();
        for (&x, &p) in [-1.0, 0.0, 1.0].iter().zip(&[0.1587, 0.5, 0.8413]) {
            assert!((res.potential.grad_vec(&[x])[0] - p).abs() < 1e-4);
        }
    }
}
