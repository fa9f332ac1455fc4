//! Uniform rectilinear grids.
//!
//! Nodes are stored in row-major order: the last axis varies fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
}

impl RectGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != counts.len() {
            return Err(Error::InvalidInput(
                "grid bounds and counts must have the same nonzero length".into(),
            ));
        }
        for d in 0..lower.len() {
            if !lower[d].is_finite() || !upper[d].is_finite() || lower[d] >= upper[d] {
                return Err(Error::InvalidInput(format!(
                    "axis {d}: bounds must be finite with lower < upper"
                )));
            }
            if counts[d] < 2 {
                return Err(Error::InvalidInput(format!("axis {d}: need at least 2 nodes")));
            }
        }
        Ok(Self { lower, upper, counts })
    }

    /// Box `[c - h, c + h]` per axis.
    pub fn centered(center: &[f64], half_widths: &[f64], counts: &[usize]) -> Result<Self> {
        let lower = center.iter().zip(half_widths).map(|(c, h)| c - h).collect();
        let upper = center.iter().zip(half_widths).map(|(c, h)| c + h).collect();
        Self::new(lower, upper, counts.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn step(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.counts[axis] - 1) as f64
    }

    pub fn max_step(&self) -> f64 {
        (0..self.dim()).map(|d| self.step(d)).fold(0.0, f64::max)
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.upper[axis]
        } else {
            self.lower[axis] + i as f64 * self.step(axis)
        }
    }

    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.counts[axis]).map(|i| self.coord(axis, i)).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|d| self.step(d)).product()
    }

    pub fn strides(&self) -> Vec<usize> {
        let n = self.dim();
        let mut s = vec![1; n];
        for d in (0..n.saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.counts[d + 1];
        }
        s
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        for d in 0..self.dim() {
            idx = idx * self.counts[d] + multi[d];
        }
        idx
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let n = self.dim();
        let mut m = vec![0; n];
        for d in (0..n).rev() {
            m[d] = flat % self.counts[d];
            flat /= self.counts[d];
        }
        m
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.coord(d, i))
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(d, &v)| v >= self.lower[d] && v <= self.upper[d])
    }

    /// Projection of `x` onto the box.
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(d, &v)| v.clamp(self.lower[d], self.upper[d]))
            .collect()
    }

    /// Cell containing `x` (clamped to the box): lower-corner index and
    /// fractional position in `[0, 1]` per axis.
    pub fn locate(&self, x: &[f64], cell: &mut [usize], frac: &mut [f64]) {
        for d in 0..self.dim() {
            let h = self.step(d);
            let u = ((x[d] - self.lower[d]) / h).clamp(0.0, (self.counts[d] - 1) as f64);
            let mut i = u.floor() as usize;
            if i >= self.counts[d] - 1 {
                i = self.counts[d] - 2;
            }
            cell[d] = i;
            frac[d] = u - i as f64;
        }
    }

    /// Whether node `flat` has a neighbour on both sides along every axis.
    pub fn is_interior(&self, flat: usize) -> bool {
        self.multi_index(flat)
            .iter()
            .zip(&self.counts)
            .all(|(&i, &c)| i > 0 && i + 1 < c)
    }

    /// Index of the node at the origin, if the origin is a grid node.
    pub fn origin_index(&self) -> Option<usize> {
        let mut multi = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let h = self.step(d);
            let u = -self.lower[d] / h;
            let i = u.round();
            if (u - i).abs() > 1e-9 || i < 0.0 || i as usize >= self.counts[d] {
                return None;
            }
            multi.push(i as usize);
        }
        Some(self.flat_index(&multi))
    }

    /// Tensor-product trapezoid weights (sum to the box volume).
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let axis_w: Vec<Vec<f64>> = (0..self.dim())
            .map(|d| {
                let h = self.step(d);
                (0..self.counts[d])
                    .map(|i| if i == 0 || i + 1 == self.counts[d] { 0.5 * h } else { h })
                    .collect()
            })
            .collect();
        (0..self.len())
            .map(|k| {
                self.multi_index(k)
                    .iter()
                    .enumerate()
                    .map(|(d, &i)| axis_w[d][i])
                    .product()
            })
            .collect()
    }

    /// Multilinear interpolation of node values; `x` is clamped to the box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let n = self.dim();
        let mut cell = vec![0; n];
        let mut frac = vec![0.0; n];
        self.locate(x, &mut cell, &mut frac);
        let strides = self.strides();
        let base: usize = cell.iter().zip(&strides).map(|(c, s)| c * s).sum();
        let mut acc = 0.0;
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
                acc += w * values[idx];
            }
        }
        acc
    }

    /// Same box, `factor` times wider about its centre.
    pub fn inflated(&self, factor: f64) -> Self {
        let lower = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u) - 0.5 * factor * (u - l))
            .collect();
        let upper = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u) + 0.5 * factor * (u - l))
            .collect();
        Self { lower, upper, counts: self.counts.clone() }
    }

    /// Rebuild a grid from per-axis sorted distinct coordinates.
    pub fn from_axis_coords(axes: &[Vec<f64>]) -> Result<Self> {
        let lower = axes.iter().map(|a| a[0]).collect();
        let upper = axes.iter().map(|a| a[a.len() - 1]).collect();
        let counts = axes.iter().map(|a| a.len()).collect();
        let grid = Self::new(lower, upper, counts)?;
        for (d, a) in axes.iter().enumerate() {
            let h = grid.step(d);
            for (i, &v) in a.iter().enumerate() {
                if (v - grid.coord(d, i)).abs() > 1e-9 * h.max(1.0) {
                    return Err(Error::Parse(format!("axis {d} coordinates are not uniform")));
                }
            }
        }
        Ok(grid)
    }
}
