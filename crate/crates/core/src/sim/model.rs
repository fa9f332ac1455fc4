use std::sync::Arc;

use crate::density::TransitionDensity;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::RectGrid;
use crate::gaussian::{gaussian_log_pdf, GaussianEquilibrium};
use crate::maps::{EquilibriumMaps, MapsAt};
use crate::market::MarketParams;
use crate::potential::{ConvexPotential, Potential, QuadraticPotential};
use crate::value_function::ValueFunction;

/// An equilibrium the simulator can drive: the terminal potential φ and the
/// maps χ, Γ, P, (Dχ)⁻¹ and G it induces.
pub trait EquilibriumModel: Send + Sync {
    fn dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn gamma(&self) -> f64;
    /// Row-major σ.
    fn sigma(&self) -> &[f64];
    fn phi(&self, x: &[f64]) -> f64;
    fn grad_phi(&self, x: &[f64]) -> Vec<f64>;
    /// Solve `Dφ(ξ) = v`.
    fn inverse_gradient(&self, v: &[f64]) -> Result<Vec<f64>>;
    fn conjugate(&self, v: &[f64]) -> Result<f64>;
    /// Price and row-major (Dχ)⁻¹ at `(t, ξ)`. `chi` carries a warm start for
    /// models that solve for χ; closed-form models may leave it untouched.
    fn step_maps(&self, t: f64, xi: &[f64], chi: &mut [f64], price: &mut [f64], dchi_inv: &mut [f64]) -> Result<()>;
    fn maps_at(&self, t: f64, xi: &[f64]) -> Result<MapsAt>;
    /// `ln G(from.time, ·, t, y)`.
    fn log_g_from(&self, from: &MapsAt, xi: &[f64], t: f64, y: &[f64]) -> Result<f64>;
}

/// Closed-form model of a Gaussian prior.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    eq: GaussianEquilibrium,
    phi: QuadraticPotential,
    sigma: Vec<f64>,
}

impl GaussianModel {
    pub fn new(eq: GaussianEquilibrium) -> Self {
        let n = eq.dim();
        let sigma = (0..n * n).map(|k| eq.sigma()[(k / n, k % n)]).collect();
        Self { phi: eq.potential(), eq, sigma }
    }

    pub fn equilibrium(&self) -> &GaussianEquilibrium {
        &self.eq
    }
}

impl EquilibriumModel for GaussianModel {
    fn dim(&self) -> usize {
        self.eq.dim()
    }

    fn horizon(&self) -> f64 {
        self.eq.horizon()
    }

    fn gamma(&self) -> f64 {
        self.eq.gamma()
    }

    fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    fn phi(&self, x: &[f64]) -> f64 {
        self.phi.value(x)
    }

    fn grad_phi(&self, x: &[f64]) -> Vec<f64> {
        self.eq.price(x)
    }

    fn inverse_gradient(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eq.inverse_gradient(v))
    }

    fn conjugate(&self, v: &[f64]) -> Result<f64> {
        Ok(self.eq.conjugate(v))
    }

    fn step_maps(&self, t: f64, xi: &[f64], _chi: &mut [f64], price: &mut [f64], dchi_inv: &mut [f64]) -> Result<()> {
        self.eq.price_into(xi, price);
        self.eq.dchi_inv_into(t, dchi_inv);
        Ok(())
    }

    fn maps_at(&self, t: f64, xi: &[f64]) -> Result<MapsAt> {
        let n = self.dim();
        let mut dchi_inv = vec![0.0; n * n];
        self.eq.dchi_inv_into(t, &mut dchi_inv);
        Ok(MapsAt {
            time: t,
            chi: self.eq.chi(t, xi),
            gamma: self.eq.gamma_map(t, xi),
            price: self.eq.price(xi),
            dchi_inv,
        })
    }

    fn log_g_from(&self, from: &MapsAt, xi: &[f64], t: f64, y: &[f64]) -> Result<f64> {
        Ok(gaussian_log_pdf(y, xi, &self.eq.transition_cov(from.time, t)))
    }
}

/// χ, P and (Dχ)⁻¹ tabulated on a state grid at fixed times.
#[derive(Debug, Clone)]
struct MapCache {
    times: Vec<f64>,
    grid: RectGrid,
    /// Per time and node: χ (n), P (n), (Dχ)⁻¹ (n²).
    values: Vec<f64>,
}

impl MapCache {
    fn stride(n: usize) -> usize {
        2 * n + n * n
    }

    fn time_index(&self, t: f64) -> Option<usize> {
        let k = self.times.partition_point(|&s| s < t - 1e-12);
        (k < self.times.len() && (self.times[k] - t).abs() <= 1e-12 * (1.0 + t.abs())).then_some(k)
    }

    /// Multilinear interpolation of all fields; `None` outside the grid.
    fn lookup(&self, k: usize, xi: &[f64], out: &mut [f64]) -> bool {
        if !self.grid.contains(xi) {
            return false;
        }
        let n = xi.len();
        let stride = Self::stride(n);
        let mut cell = [0usize; crate::potential::MAX_DIM];
        let mut frac = [0.0; crate::potential::MAX_DIM];
        self.grid.locate(xi, &mut cell[..n], &mut frac[..n]);
        let strides = self.grid.strides();
        let base: usize = (0..n).map(|d| cell[d] * strides[d]).sum();
        let offset = k * self.grid.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = base;
            for d in 0..n {
                if corner >> d & 1 == 1 {
                    w *= frac[d];
                    idx += strides[d];
                } else {
                    w *= 1.0 - frac[d];
                }
            }
            if w != 0.0 {
                let row = &self.values[(offset + idx) * stride..(offset + idx + 1) * stride];
                for (o, v) in out.iter_mut().zip(row) {
                    *o += w * v;
                }
            }
        }
        true
    }
}

/// Model backed by a tabulated potential and quadrature value function.
#[derive(Debug, Clone)]
pub struct TabulatedModel {
    phi: Arc<ConvexPotential>,
    density: TransitionDensity,
    sigma: Vec<f64>,
    horizon: f64,
    gamma: f64,
    cache: Option<Arc<MapCache>>,
}

impl TabulatedModel {
    pub fn new(params: &MarketParams, phi: ConvexPotential) -> Result<Self> {
        let phi = Arc::new(phi);
        let vf = ValueFunction::new(params, phi.clone())?;
        let n = params.n;
        Ok(Self {
            phi,
            density: TransitionDensity::new(EquilibriumMaps::new(vf)),
            sigma: (0..n * n).map(|k| params.sigma[(k / n, k % n)]).collect(),
            horizon: params.horizon,
            gamma: params.gamma,
            cache: None,
        })
    }

    /// Tabulate the maps at `times` on the potential's box with
    /// `nodes_per_axis` nodes. Steps at these times interpolate instead of
    /// solving for χ; other times and states outside the box are solved.
    pub fn with_time_cache(mut self, times: &[f64], nodes_per_axis: usize) -> Result<Self> {
        let n = self.dim();
        let pg = self.phi.grid();
        let grid = RectGrid::new(pg.lower().to_vec(), pg.upper().to_vec(), vec![nodes_per_axis; n])?;
        let stride = MapCache::stride(n);
        let maps = self.maps();
        let rows: Vec<Result<Vec<f64>>> = times
            .par_iter()
            .map(|&t| {
                let mut out = Vec::with_capacity(grid.len() * stride);
                let mut warm: Option<Vec<f64>> = None;
                for k in 0..grid.len() {
                    let x = grid.node(k);
                    let m = match &warm {
                        Some(w) => maps.at_from(t, &x, w).or_else(|_| maps.at(t, &x))?,
                        None => maps.at(t, &x)?,
                    };
                    out.extend_from_slice(&m.chi);
                    out.extend_from_slice(&m.price);
                    out.extend_from_slice(&m.dchi_inv);
                    warm = Some(m.chi);
                }
                Ok(out)
            })
            .collect();
        let mut values = Vec::with_capacity(times.len() * grid.len() * stride);
        for r in rows {
            values.extend(r?);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite map values in the time cache".into()));
        }
        self.cache = Some(Arc::new(MapCache { times: times.to_vec(), grid, values }));
        Ok(self)
    }

    pub fn potential(&self) -> &ConvexPotential {
        &self.phi
    }

    fn maps(&self) -> &EquilibriumMaps {
        self.density.maps()
    }
}

impl EquilibriumModel for TabulatedModel {
    fn dim(&self) -> usize {
        self.maps().dim()
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    fn phi(&self, x: &[f64]) -> f64 {
        self.phi.value(x)
    }

    fn grad_phi(&self, x: &[f64]) -> Vec<f64> {
        self.phi.grad_vec(x)
    }

    fn inverse_gradient(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.phi.inverse_gradient(v)
    }

    fn conjugate(&self, v: &[f64]) -> Result<f64> {
        self.phi.conjugate(v)
    }

    fn step_maps(&self, t: f64, xi: &[f64], chi: &mut [f64], price: &mut [f64], dchi_inv: &mut [f64]) -> Result<()> {
        if let Some(cache) = &self.cache {
            if let Some(k) = cache.time_index(t) {
                let n = xi.len();
                let mut buf = [0.0; 2 * crate::potential::MAX_DIM + crate::potential::MAX_DIM * crate::potential::MAX_DIM];
                let stride = MapCache::stride(n);
                if cache.lookup(k, xi, &mut buf[..stride]) {
                    chi.copy_from_slice(&buf[..n]);
                    price.copy_from_slice(&buf[n..2 * n]);
                    dchi_inv.copy_from_slice(&buf[2 * n..stride]);
                    return Ok(());
                }
            }
        }
        let m = self.maps().at_from(t, xi, chi)?;
        chi.copy_from_slice(&m.chi);
        price.copy_from_slice(&m.price);
        dchi_inv.copy_from_slice(&m.dchi_inv);
        Ok(())
    }

    fn maps_at(&self, t: f64, xi: &[f64]) -> Result<MapsAt> {
        self.maps().at(t, xi)
    }

    fn log_g_from(&self, from: &MapsAt, _xi: &[f64], t: f64, y: &[f64]) -> Result<f64> {
        self.density.log_g_from(from, t, y)
    }
}
