//! Convex potentials φ with gradient and Hessian access, and their conjugates.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::RectGrid;
use crate::linalg::{self, Mat};

/// Largest dimension supported by grid-backed potentials.
pub const MAX_DIM: usize = 3;

/// A twice differentiable function on ℝⁿ. Hessians are row-major `n*n` slices.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    /// Value, gradient and Hessian at `x`.
    fn jet(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64;

    /// Upper bound on the largest Hessian eigenvalue.
    fn curvature_bound(&self) -> f64;

    fn value(&self, x: &[f64]) -> f64 {
        let mut g = [0.0; MAX_DIM];
        let mut h = [0.0; MAX_DIM * MAX_DIM];
        let n = self.dim();
        self.jet(x, &mut g[..n], &mut h[..n * n])
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let mut h = [0.0; MAX_DIM * MAX_DIM];
        let n = self.dim();
        self.jet(x, grad, &mut h[..n * n]);
    }

    fn grad_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient(x, &mut g);
        g
    }

    fn hess_mat(&self, x: &[f64]) -> Mat {
        let n = self.dim();
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        self.jet(x, &mut g, &mut h);
        Mat::from_row_slice(n, n, &h)
    }
}

/// `½ xᵀ A x + bᵀ x`, with `A` symmetric.
#[derive(Debug, Clone)]
pub struct QuadraticPotential {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl QuadraticPotential {
    pub fn new(a: &Mat, b: &[f64]) -> Result<Self> {
        let n = b.len();
        if a.nrows() != n || a.ncols() != n || n == 0 || n > MAX_DIM {
            return Err(Error::InvalidInput("quadratic potential dimensions mismatch".into()));
        }
        let a = linalg::symmetrize(a);
        Ok(Self { n, a: a.transpose().as_slice().to_vec(), b: b.to_vec() })
    }

    pub fn zero(n: usize) -> Self {
        Self { n, a: vec![0.0; n * n], b: vec![0.0; n] }
    }

    pub fn a(&self) -> Mat {
        Mat::from_row_slice(self.n, self.n, &self.a)
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// `½ (v − b)ᵀ A⁻¹ (v − b)` for positive definite `A`.
    pub fn conjugate(&self, v: &[f64]) -> Result<f64> {
        let d: Vec<f64> = v.iter().zip(&self.b).map(|(x, y)| x - y).collect();
        let y = linalg::solve_small(&self.a, &d, self.n)
            .ok_or_else(|| Error::InvalidInput("quadratic form is singular".into()))?;
        Ok(0.5 * linalg::dot(&d, &y))
    }
}

impl Potential for QuadraticPotential {
    fn dim(&self) -> usize {
        self.n
    }

    fn curvature_bound(&self) -> f64 {
        linalg::lambda_max_slice(&self.a, self.n).max(0.0)
    }

    fn jet(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let n = self.n;
        linalg::matvec(&self.a, x, grad);
        let quad = 0.5 * linalg::dot(grad, x);
        for i in 0..n {
            grad[i] += self.b[i];
        }
        hess.copy_from_slice(&self.a);
        quad + linalg::dot(&self.b, x)
    }
}

/// `φ(x) + aᵀx`.
pub struct Shifted {
    pub inner: Arc<dyn Potential>,
    pub shift: Vec<f64>,
}

impl Potential for Shifted {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn curvature_bound(&self) -> f64 {
        self.inner.curvature_bound()
    }

    fn jet(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let v = self.inner.jet(x, grad, hess);
        for (g, s) in grad.iter_mut().zip(&self.shift) {
            *g += s;
        }
        v + linalg::dot(&self.shift, x)
    }
}

/// Spread of node-Hessian eigenvalues over interior nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureReport {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// Potential tabulated on a grid: node values, gradients and Hessians.
///
/// Between nodes it blends the second-order Taylor expansions at the cell
/// corners with multilinear weights, which reproduces quadratics exactly.
/// Outside the box it continues affinely from the nearest boundary point.
#[derive(Debug, Clone)]
pub struct ConvexPotential {
    grid: RectGrid,
    values: Vec<f64>,
    gradients: Vec<f64>,
    hessians: Vec<f64>,
    l_bound: f64,
    strides: [usize; MAX_DIM],
}

impl ConvexPotential {
    /// Build and validate membership in the class with Hessian cap `l_bound`.
    pub fn new(grid: RectGrid, values: Vec<f64>, gradients: Vec<f64>, l_bound: f64) -> Result<Self> {
        let p = Self::assemble(grid, values, gradients, l_bound)?;
        let tol = 1e-8 * l_bound;
        let c = p.curvature();
        if c.min_eigenvalue < -tol || c.max_eigenvalue > l_bound + tol {
            return Err(Error::InvalidInput(format!(
                "discrete Hessian eigenvalues [{}, {}] outside [0, {l_bound}]",
                c.min_eigenvalue, c.max_eigenvalue
            )));
        }
        p.check_gradient_consistency()?;
        Ok(p)
    }

    /// Structural checks only; shifts values so that φ(0) = 0.
    pub fn assemble(grid: RectGrid, mut values: Vec<f64>, gradients: Vec<f64>, l_bound: f64) -> Result<Self> {
        let n = grid.dim();
        if n > MAX_DIM {
            return Err(Error::InvalidInput(format!("dimension {n} exceeds {MAX_DIM}")));
        }
        if values.len() != grid.len() || gradients.len() != grid.len() * n {
            return Err(Error::InvalidInput("potential table size does not match grid".into()));
        }
        if grid.counts().iter().any(|&c| c < 3) {
            return Err(Error::InvalidInput("potential grids need at least 3 nodes per axis".into()));
        }
        if values.iter().chain(&gradients).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("potential table contains non-finite entries".into()));
        }
        if !(l_bound > 0.0) {
            return Err(Error::InvalidInput("l_bound must be positive".into()));
        }
        let origin = grid
            .origin_index()
            .ok_or_else(|| Error::InvalidInput("potential grid must contain the origin as a node".into()))?;
        let v0 = values[origin];
        for v in values.iter_mut() {
            *v -= v0;
        }
        let mut strides = [0; MAX_DIM];
        strides[..n].copy_from_slice(&grid.strides());
        let mut p = Self { grid, values, gradients, hessians: Vec::new(), l_bound, strides };
        p.hessians = p.fd_hessians();
        Ok(p)
    }

    /// Tabulate any potential on `grid`.
    pub fn tabulate(grid: RectGrid, f: &dyn Potential, l_bound: f64) -> Result<Self> {
        let n = grid.dim();
        let mut values = Vec::with_capacity(grid.len());
        let mut gradients = vec![0.0; grid.len() * n];
        let mut h = vec![0.0; n * n];
        for k in 0..grid.len() {
            let x = grid.node(k);
            values.push(f.jet(&x, &mut gradients[k * n..(k + 1) * n], &mut h));
        }
        Self::assemble(grid, values, gradients, l_bound)
    }

    /// φ from its gradient field by trapezoid integration along axis-aligned
    /// paths from the origin (axis 0 first, then axis 1, ...).
    pub fn from_gradients(grid: RectGrid, gradients: Vec<f64>, l_bound: f64) -> Result<Self> {
        let n = grid.dim();
        let origin = grid
            .origin_index()
            .ok_or_else(|| Error::InvalidInput("potential grid must contain the origin as a node".into()))?;
        let o = grid.multi_index(origin);
        let mut values = vec![0.0; grid.len()];
        for k in 0..grid.len() {
            let target = grid.multi_index(k);
            let mut cur = o.clone();
            let mut acc = 0.0;
            for d in 0..n {
                let h = grid.step(d);
                while cur[d] != target[d] {
                    let a = grid.flat_index(&cur);
                    if cur[d] < target[d] {
                        cur[d] += 1;
                        let b = grid.flat_index(&cur);
                        acc += 0.5 * h * (gradients[a * n + d] + gradients[b * n + d]);
                    } else {
                        cur[d] -= 1;
                        let b = grid.flat_index(&cur);
                        acc -= 0.5 * h * (gradients[a * n + d] + gradients[b * n + d]);
                    }
                }
            }
            values[k] = acc;
        }
        Self::assemble(grid, values, gradients, l_bound)
    }

    pub fn grid(&self) -> &RectGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Node gradients, `n` per node.
    pub fn gradients(&self) -> &[f64] {
        &self.gradients
    }

    pub fn node_gradient(&self, k: usize) -> &[f64] {
        let n = self.grid.dim();
        &self.gradients[k * n..(k + 1) * n]
    }

    /// Symmetrized finite-difference Hessian at node `k`.
    pub fn node_hessian(&self, k: usize) -> &[f64] {
        let n2 = self.grid.dim().pow(2);
        &self.hessians[k * n2..(k + 1) * n2]
    }

    pub fn l_bound(&self) -> f64 {
        self.l_bound
    }

    pub fn with_l_bound(mut self, l_bound: f64) -> Self {
        self.l_bound = l_bound;
        self
    }

    fn fd_hessians(&self) -> Vec<f64> {
        let n = self.grid.dim();
        let counts = self.grid.counts();
        let mut out = vec![0.0; self.grid.len() * n * n];
        let mut raw = [0.0; MAX_DIM * MAX_DIM];
        for k in 0..self.grid.len() {
            let multi = self.grid.multi_index(k);
            for i in 0..n {
                let s = self.strides[i];
                let h = self.grid.step(i);
                for j in 0..n {
                    let g = |idx: usize| self.gradients[idx * n + j];
                    raw[i * n + j] = if multi[i] == 0 {
                        (-3.0 * g(k) + 4.0 * g(k + s) - g(k + 2 * s)) / (2.0 * h)
                    } else if multi[i] + 1 == counts[i] {
                        (3.0 * g(k) - 4.0 * g(k - s) + g(k - 2 * s)) / (2.0 * h)
                    } else {
                        (g(k + s) - g(k - s)) / (2.0 * h)
                    };
                }
            }
            let dst = &mut out[k * n * n..(k + 1) * n * n];
            for i in 0..n {
                for j in 0..n {
                    dst[i * n + j] = 0.5 * (raw[i * n + j] + raw[j * n + i]);
                }
            }
        }
        out
    }

    /// Eigenvalue range of node Hessians over interior nodes.
    pub fn curvature(&self) -> CurvatureReport {
        let n = self.grid.dim();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..self.grid.len() {
            if !self.grid.is_interior(k) {
                continue;
            }
            let ev = linalg::eigenvalues_sym(&Mat::from_row_slice(n, n, self.node_hessian(k)));
            lo = lo.min(ev[0]);
            hi = hi.max(ev[n - 1]);
        }
        CurvatureReport { min_eigenvalue: lo, max_eigenvalue: hi }
    }

    /// Largest node-Hessian eigenvalue over interior nodes inside `region`
    /// (all interior nodes when `None`).
    pub fn max_curvature_in(&self, region: Option<&RectGrid>) -> f64 {
        let n = self.grid.dim();
        (0..self.grid.len())
            .filter(|&k| self.grid.is_interior(k))
            .filter(|&k| region.is_none_or(|r| r.contains(&self.grid.node(k))))
            .map(|k| linalg::lambda_max_slice(self.node_hessian(k), n))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn check_gradient_consistency(&self) -> Result<()> {
        let n = self.grid.dim();
        for k in 0..self.grid.len() {
            let multi = self.grid.multi_index(k);
            for d in 0..n {
                if multi[d] == 0 || multi[d] + 1 == self.grid.counts()[d] {
                    continue;
                }
                let s = self.strides[d];
                let h = self.grid.step(d);
                let fd = (self.values[k + s] - self.values[k - s]) / (2.0 * h);
                let g = |idx: usize| self.gradients[idx * n + d];
                let curv = (g(k + s) - 2.0 * g(k) + g(k - s)).abs();
                if (fd - g(k)).abs() > 1e-7 * (1.0 + g(k).abs()) + curv {
                    return Err(Error::InvalidInput(format!(
                        "stored gradient at node {k} axis {d} disagrees with values ({} vs {fd})",
                        g(k)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Subtract the linear part `Dφ(0)ᵀx`.
    pub fn recentre(&self) -> Self {
        let n = self.grid.dim();
        let origin = self.grid.origin_index().expect("validated at construction");
        let g0 = self.node_gradient(origin).to_vec();
        let mut out = self.clone();
        for k in 0..self.grid.len() {
            let x = self.grid.node(k);
            out.values[k] -= linalg::dot(&g0, &x);
            for d in 0..n {
                out.gradients[k * n + d] -= g0[d];
            }
        }
        out
    }

    /// `φ(x) + aᵀx` on the same grid.
    pub fn shifted(&self, a: &[f64]) -> Self {
        let n = self.grid.dim();
        let mut out = self.clone();
        for k in 0..self.grid.len() {
            let x = self.grid.node(k);
            out.values[k] += linalg::dot(a, &x);
            for d in 0..n {
                out.gradients[k * n + d] += a[d];
            }
        }
        out
    }

    /// Pointwise `(1 − θ) self + θ other` on a common grid.
    pub fn blend(&self, other: &Self, theta: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::InvalidInput("blended potentials must share a grid".into()));
        }
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| (1.0 - theta) * x + theta * y).collect()
        };
        Self::assemble(
            self.grid.clone(),
            mix(&self.values, &other.values),
            mix(&self.gradients, &other.gradients),
            self.l_bound,
        )
    }

    /// Largest gradient difference against `other` over nodes inside `region`.
    pub fn gradient_distance(&self, other: &dyn Potential, region: &RectGrid) -> f64 {
        let n = self.grid.dim();
        let mut g = vec![0.0; n];
        let mut worst: f64 = 0.0;
        for x in region.nodes() {
            self.gradient(&x, &mut g);
            let h = other.grad_vec(&x);
            for d in 0..n {
                worst = worst.max((g[d] - h[d]).abs());
            }
        }
        worst
    }

    fn jet_inside(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let n = self.grid.dim();
        let mut cell = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        self.grid.locate(x, &mut cell[..n], &mut frac[..n]);
        let base: usize = (0..n).map(|d| cell[d] * self.strides[d]).sum();
        grad.fill(0.0);
        hess.fill(0.0);
        let mut value = 0.0;
        let mut dx = [0.0; MAX_DIM];
        let mut hd = [0.0; MAX_DIM];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = base;
            for d in 0..n {
                if corner >> d & 1 == 1 {
                    w *= frac[d];
                    idx += self.strides[d];
                } else {
                    w *= 1.0 - frac[d];
                }
            }
            if w == 0.0 {
                continue;
            }
            let mut rem = idx;
            for d in (0..n).rev() {
                let i = rem % self.grid.counts()[d];
                rem /= self.grid.counts()[d];
                dx[d] = x[d] - self.grid.coord(d, i);
            }
            let g = &self.gradients[idx * n..(idx + 1) * n];
            let h = &self.hessians[idx * n * n..(idx + 1) * n * n];
            linalg::matvec(h, &dx[..n], &mut hd[..n]);
            let taylor = self.values[idx] + linalg::dot(g, &dx[..n]) + 0.5 * linalg::dot(&hd[..n], &dx[..n]);
            value += w * taylor;
            for d in 0..n {
                grad[d] += w * (g[d] + hd[d]);
            }
            for (o, hv) in hess.iter_mut().zip(h) {
                *o += w * hv;
            }
        }
        clip_psd(hess, n);
        value
    }

    /// Legendre transform `sup_y vᵀy − φ(y)`: best grid node refined by
    /// Newton steps on `Dφ(y) = v`.
    pub fn conjugate(&self, v: &[f64]) -> Result<f64> {
        let n = self.grid.dim();
        if v.len() != n || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("conjugate argument must be finite with matching dimension".into()));
        }
        let (best, best_val) = (0..self.grid.len())
            .map(|k| (k, linalg::dot(v, &self.grid.node(k)) - self.values[k]))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let multi = self.grid.multi_index(best);
        let g = self.node_gradient(best);
        for d in 0..n {
            let slope = v[d] - g[d];
            let tol = 1e-9 * (1.0 + v[d].abs());
            let at_low = multi[d] == 0 && slope < -tol;
            let at_high = multi[d] + 1 == self.grid.counts()[d] && slope > tol;
            if at_low || at_high {
                return Err(Error::UnboundedConjugate { value: best_val });
            }
        }
        let mut y = self.grid.node(best);
        let mut refined = best_val;
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n * n];
        for _ in 0..20 {
            self.jet(&y, &mut grad, &mut hess);
            let r: Vec<f64> = v.iter().zip(&grad).map(|(a, b)| a - b).collect();
            for d in 0..n {
                hess[d * n + d] += 1e-12;
            }
            let Some(step) = linalg::solve_small(&hess, &r, n) else { break };
            let cand = self.grid.clamp(&y.iter().zip(&step).map(|(a, b)| a + b).collect::<Vec<_>>());
            let val = linalg::dot(v, &cand) - self.value(&cand);
            if !val.is_finite() || val < refined - 1e-14 * (1.0 + refined.abs()) {
                break;
            }
            let moved = linalg::norm(&cand.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
            refined = refined.max(val);
            y = cand;
            if moved < 1e-13 * (1.0 + linalg::norm(&y)) {
                break;
            }
        }
        Ok(refined.max(best_val))
    }

    /// Solve `Dφ(y) = v` by damped Newton from the nearest-gradient node.
    pub fn inverse_gradient(&self, v: &[f64]) -> Result<Vec<f64>> {
        let start = (0..self.grid.len())
            .map(|k| {
                let g = self.node_gradient(k);
                (k, g.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            })
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
            .0;
        let y = newton_inverse_gradient(self, v, self.grid.node(start), 1e-12, 100)?;
        if self.grid.contains(&y) {
            Ok(y)
        } else {
            Err(Error::OutOfDomain { point: y })
        }
    }

    /// Node table as CSV: `x0,..,value,grad0,..`.
    pub fn to_csv(&self) -> String {
        let n = self.grid.dim();
        let mut s = String::new();
        let cols: Vec<String> = (0..n)
            .map(|d| format!("x{d}"))
            .chain(std::iter::once("value".to_string()))
            .chain((0..n).map(|d| format!("grad{d}")))
            .collect();
        s.push_str(&cols.join(","));
        s.push('\n');
        for k in 0..self.grid.len() {
            let x = self.grid.node(k);
            let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            row.push(self.values[k].to_string());
            row.extend(self.node_gradient(k).iter().map(|v| v.to_string()));
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    pub fn from_csv(text: &str, l_bound: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty potential table".into()))?;
        let cols = header.split(',').count();
        if cols < 3 || (cols - 1) % 2 != 0 {
            return Err(Error::Parse(format!("unexpected header '{header}'")));
        }
        let n = (cols - 1) / 2;
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let r: std::result::Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
            let r = r.map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)))?;
            if r.len() != cols {
                return Err(Error::Parse(format!("row {} has {} columns, expected {cols}", i + 1, r.len())));
            }
            rows.push(r);
        }
        let mut axes: Vec<Vec<f64>> = vec![Vec::new(); n];
        for (d, axis) in axes.iter_mut().enumerate() {
            let mut v: Vec<f64> = rows.iter().map(|r| r[d]).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            v.dedup();
            *axis = v;
        }
        let grid = RectGrid::from_axis_coords(&axes)?;
        if grid.len() != rows.len() {
            return Err(Error::Parse("node rows do not form a full tensor grid".into()));
        }
        let mut values = vec![f64::NAN; grid.len()];
        let mut gradients = vec![f64::NAN; grid.len() * n];
        for r in &rows {
            let multi: Vec<usize> = (0..n)
                .map(|d| axes[d].partition_point(|&a| a < r[d]))
                .collect();
            let k = grid.flat_index(&multi);
            values[k] = r[n];
            gradients[k * n..(k + 1) * n].copy_from_slice(&r[n + 1..]);
        }
        Self::assemble(grid, values, gradients, l_bound)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path, l_bound: f64) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?, l_bound)
    }
}

impl Potential for ConvexPotential {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn curvature_bound(&self) -> f64 {
        self.l_bound
    }

    fn jet(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        if self.grid.contains(x) {
            return self.jet_inside(x, grad, hess);
        }
        let n = self.grid.dim();
        let mut p = [0.0; MAX_DIM];
        for d in 0..n {
            p[d] = x[d].clamp(self.grid.lower()[d], self.grid.upper()[d]);
        }
        let v = self.jet_inside(&p[..n], grad, hess);
        hess.fill(0.0);
        let mut lin = 0.0;
        for d in 0..n {
            lin += grad[d] * (x[d] - p[d]);
        }
        v + lin
    }
}

/// Project a small symmetric matrix onto the PSD cone.
pub fn clip_psd(h: &mut [f64], n: usize) {
    match n {
        1 => h[0] = h[0].max(0.0),
        2 => {
            let (a, b, c) = (h[0], 0.5 * (h[1] + h[2]), h[3]);
            let mid = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            if mid - rad >= 0.0 {
                h[1] = b;
                h[2] = b;
                return;
            }
            let m = linalg::sym_apply(&Mat::from_row_slice(2, 2, &[a, b, b, c]), |x| x.max(0.0));
            h.copy_from_slice(&[m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]);
        }
        _ => {
            let m = Mat::from_row_slice(n, n, h);
            let ev = linalg::eigenvalues_sym(&m);
            let m = if ev[0] >= 0.0 { linalg::symmetrize(&m) } else { linalg::sym_apply(&m, |x| x.max(0.0)) };
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = m[(i, j)];
                }
            }
        }
    }
}

/// Damped Newton for `Dφ(y) = v` on any potential.
pub fn newton_inverse_gradient(
    phi: &dyn Potential,
    v: &[f64],
    start: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = phi.dim();
    let mut y = start;
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n * n];
    phi.jet(&y, &mut g, &mut h);
    let mut r: Vec<f64> = g.iter().zip(v).map(|(a, b)| a - b).collect();
    let mut rn = linalg::norm(&r);
    for _ in 0..max_iter {
        if rn <= tol * (1.0 + linalg::norm(v)) {
            return Ok(y);
        }
        for d in 0..n {
            h[d * n + d] += 1e-12;
        }
        let step = linalg::solve_small(&h, &r, n).ok_or(Error::NewtonDivergence {
            iterations: 0,
            residual: rn,
        })?;
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = y.iter().zip(&step).map(|(a, b)| a - t * b).collect();
            let mut hc = vec![0.0; n * n];
            phi.jet(&cand, &mut g, &mut hc);
            let rc: Vec<f64> = g.iter().zip(v).map(|(a, b)| a - b).collect();
            let rcn = linalg::norm(&rc);
            if rcn < (1.0 - 1e-4 * t) * rn || t < 1e-8 {
                y = cand;
                r = rc;
                rn = rcn;
                h = hc;
                break;
            }
            t *= 0.5;
        }
        if t < 1e-8 {
            break;
        }
    }
    if rn <= tol * (1.0 + linalg::norm(v)) {
        Ok(y)
    } else {
        Err(Error::NewtonDivergence { iterations: max_iter, residual: rn })
    }
}
