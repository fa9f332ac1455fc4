//! Exponential-utility value function `E(t,z) = (1/γ) ln E[exp(γ φ(z + σ(B_T − B_t)))]`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::market::MarketParams;
use crate::potential::{Potential, MAX_DIM};
use crate::quadrature::TensorRule;

/// Default per-axis Gauss–Hermite node count for dimension `n`.
pub fn default_nodes(n: usize) -> usize {
    match n {
        1 => 64,
        2 => 32,
        _ => 16,
    }
}

const PRUNE: f64 = 1e-30;

/// `E`, `DE` (as a column) and `D²E` (row-major) at one point.
#[derive(Debug, Clone, Copy)]
pub struct ValueJet {
    pub value: f64,
    pub grad: [f64; MAX_DIM],
    pub hess: [f64; MAX_DIM * MAX_DIM],
}

#[derive(Clone)]
pub struct ValueFunction {
    n: usize,
    horizon: f64,
    gamma: f64,
    sigma: Vec<f64>,
    sigma2: Vec<f64>,
    phi: Arc<dyn Potential>,
    rule: Arc<TensorRule>,
}

impl std::fmt::Debug for ValueFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ValueFunction")
            .field("n", &self.n)
            .field("horizon", &self.horizon)
            .field("gamma", &self.gamma)
            .field("nodes", &self.rule.len())
            .finish()
    }
}

impl ValueFunction {
    pub fn new(params: &MarketParams, phi: Arc<dyn Potential>) -> Result<Self> {
        Self::with_nodes(params, phi, default_nodes(params.n))
    }

    pub fn with_nodes(params: &MarketParams, phi: Arc<dyn Potential>, q: usize) -> Result<Self> {
        let n = params.n;
        if phi.dim() != n {
            return Err(Error::InvalidInput("potential dimension does not match market".into()));
        }
        if q == 0 {
            return Err(Error::InvalidInput("quadrature needs at least one node".into()));
        }
        let c = params.integrability(phi.curvature_bound());
        if c >= 1.0 {
            return Err(Error::InvalidInput(format!(
                "integrability condition l*gamma*lmax(sigma)^2*T = {c} is not below 1"
            )));
        }
        let sigma2 = params.sigma2();
        Ok(Self {
            n,
            horizon: params.horizon,
            gamma: params.gamma,
            sigma: row_major(&params.sigma),
            sigma2: row_major(&sigma2),
            phi,
            rule: Arc::new(TensorRule::new(n, q, PRUNE)),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `σ²` row-major.
    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn potential(&self) -> &Arc<dyn Potential> {
        &self.phi
    }

    /// E together with its first two spatial derivatives.
    pub fn jet(&self, t: f64, z: &[f64]) -> Result<ValueJet> {
        let n = self.n;
        let mut out = ValueJet { value: 0.0, grad: [0.0; MAX_DIM], hess: [0.0; MAX_DIM * MAX_DIM] };
        let tau = self.horizon - t;
        if tau < -1e-12 * self.horizon {
            return Err(Error::InvalidInput(format!("time {t} exceeds the horizon")));
        }
        if tau <= 0.0 {
            out.value = self.phi.jet(z, &mut out.grad[..n], &mut out.hess[..n * n]);
            return Ok(out);
        }
        let s = tau.sqrt();
        let m = self.rule.len();
        let mut y = [0.0; MAX_DIM];
        let mut vals = Vec::with_capacity(m);
        let mut grads = Vec::with_capacity(m * n);
        let mut hess_acc = [0.0; MAX_DIM * MAX_DIM];
        let mut g = [0.0; MAX_DIM];
        let mut h = [0.0; MAX_DIM * MAX_DIM];
        let mut logs = Vec::with_capacity(m);
        for k in 0..m {
            let x = self.rule.point(k);
            for i in 0..n {
                y[i] = z[i] + s * (0..n).map(|j| self.sigma[i * n + j] * x[j]).sum::<f64>();
            }
            let v = self.phi.jet(&y[..n], &mut g[..n], &mut h[..n * n]);
            vals.push(v);
            grads.extend_from_slice(&g[..n]);
            logs.push(self.rule.log_weights[k] + self.gamma * v);
            if self.gamma == 0.0 {
                let w = self.rule.log_weights[k].exp();
                for (a, b) in hess_acc[..n * n].iter_mut().zip(&h[..n * n]) {
                    *a += w * b;
                }
            } else {
                grads.extend_from_slice(&h[..n * n]);
            }
        }
        if self.gamma == 0.0 {
            for k in 0..m {
                let w = self.rule.log_weights[k].exp();
                out.value += w * vals[k];
                for i in 0..n {
                    out.grad[i] += w * grads[k * n + i];
                }
            }
            out.hess[..n * n].copy_from_slice(&hess_acc[..n * n]);
            return Ok(out);
        }
        let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !mx.is_finite() {
            return Err(Error::QuadratureOverflow { t });
        }
        let stride = n + n * n;
        let mut total = 0.0;
        let mut mean = [0.0; MAX_DIM];
        let mut second = [0.0; MAX_DIM * MAX_DIM];
        for k in 0..m {
            let w = (logs[k] - mx).exp();
            total += w;
            let gk = &grads[k * stride..k * stride + n];
            let hk = &grads[k * stride + n..(k + 1) * stride];
            for i in 0..n {
                mean[i] += w * gk[i];
                for j in 0..n {
                    second[i * n + j] += w * (hk[i * n + j] + self.gamma * gk[i] * gk[j]);
                }
            }
        }
        let value = (mx + total.ln()) / self.gamma;
        if !value.is_finite() || !total.is_finite() {
            return Err(Error::QuadratureOverflow { t });
        }
        out.value = value;
        for i in 0..n {
            out.grad[i] = mean[i] / total;
        }
        for i in 0..n {
            for j in 0..n {
                let v = second[i * n + j] / total - self.gamma * out.grad[i] * out.grad[j];
                out.hess[i * n + j] = v;
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (out.hess[i * n + j] + out.hess[j * n + i]);
                out.hess[i * n + j] = v;
                out.hess[j * n + i] = v;
            }
        }
        Ok(out)
    }

    pub fn e(&self, t: f64, z: &[f64]) -> Result<f64> {
        self.jet(t, z).map(|j| j.value)
    }

    pub fn de(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        self.jet(t, z).map(|j| j.grad[..self.n].to_vec())
    }

    pub fn d2e(&self, t: f64, z: &[f64]) -> Result<Mat> {
        self.jet(t, z).map(|j| Mat::from_row_slice(self.n, self.n, &j.hess[..self.n * self.n]))
    }

    /// `∂E/∂t + ½tr(σ²D²E) + (γ/2)|DE σ|²` with a centered time difference.
    pub fn pde_residual(&self, t: f64, z: &[f64]) -> Result<f64> {
        let n = self.n;
        let dt = 1e-4 * self.horizon;
        let et = if t - dt >= 0.0 {
            (self.e(t + dt, z)? - self.e(t - dt, z)?) / (2.0 * dt)
        } else {
            (-3.0 * self.e(t, z)? + 4.0 * self.e(t + dt, z)? - self.e(t + 2.0 * dt, z)?) / (2.0 * dt)
        };
        let j = self.jet(t, z)?;
        let trace: f64 = (0..n)
            .map(|i| (0..n).map(|k| self.sigma2[i * n + k] * j.hess[k * n + i]).sum::<f64>())
            .sum();
        let mut quad = 0.0;
        for c in 0..n {
            let v: f64 = (0..n).map(|i| j.grad[i] * self.sigma[i * n + c]).sum();
            quad += v * v;
        }
        Ok(et + 0.5 * trace + 0.5 * self.gamma * quad)
    }
}

fn row_major(m: &Mat) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}
