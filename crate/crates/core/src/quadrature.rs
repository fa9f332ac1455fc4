//! Gauss–Hermite rules for expectations under the standard normal.

use std::f64::consts::PI;

/// One-dimensional rule for `E[f(X)]`, `X ~ N(0, 1)`; weights sum to one.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes by Newton iteration on the orthonormal Hermite recurrence
    /// (physicists' convention), then rescaled to the unit normal.
    pub fn new(q: usize) -> Self {
        assert!(q >= 1, "need at least one node");
        let mut x_phys = vec![0.0; q];
        let mut w_phys = vec![0.0; q];
        let m = q.div_ceil(2);
        let pim4 = PI.powf(-0.25);
        let nf = q as f64;
        let mut z = 0.0;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x_phys[0],
                3 => 1.91 * z - 0.91 * x_phys[1],
                _ => 2.0 * z - x_phys[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..q {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x_phys[i] = z;
            x_phys[q - 1 - i] = -z;
            w_phys[i] = 2.0 / (pp * pp);
            w_phys[q - 1 - i] = w_phys[i];
        }
        let sqrt2 = 2f64.sqrt();
        let sqrt_pi = PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = x_phys
            .iter()
            .zip(&w_phys)
            .map(|(x, w)| (x * sqrt2, w / sqrt_pi))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Tensor-product rule in `dim` dimensions with negligible product weights
/// dropped. Points are stored flat, `dim` coordinates each.
#[derive(Debug, Clone)]
pub struct TensorRule {
    pub dim: usize,
    pub points: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl TensorRule {
    pub fn new(dim: usize, q: usize, prune_below: f64) -> Self {
        let gh = GaussHermite::new(q);
        let log_w: Vec<f64> = gh.weights.iter().map(|w| w.ln()).collect();
        let total = q.pow(dim as u32);
        let max_log = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max) * dim as f64;
        let cut = max_log + prune_below.ln();
        let mut points = Vec::new();
        let mut log_weights = Vec::new();
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let lw: f64 = idx.iter().map(|&i| log_w[i]).sum();
            if lw >= cut {
                points.extend(idx.iter().map(|&i| gh.nodes[i]));
                log_weights.push(lw);
            }
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] < q {
                    break;
                }
                idx[d] = 0;
            }
        }
        Self { dim, points, log_weights }
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_unit_normal() {
        for q in [2, 5, 16, 64] {
            let gh = GaussHermite::new(q);
            let m = |p: i32| -> f64 { gh.nodes.iter().zip(&gh.weights).map(|(x, w)| w * x.powi(p)).sum() };
            assert!((m(0) - 1.0).abs() < 1e-13, "q={q}");
            assert!(m(1).abs() < 1e-13);
            if q >= 2 {
                assert!((m(2) - 1.0).abs() < 1e-12);
            }
            if q >= 3 {
                assert!((m(4) - 3.0).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn mgf_matches_closed_form() {
        let gh = GaussHermite::new(64);
        let v: f64 = gh.nodes.iter().zip(&gh.weights).map(|(x, w)| w * (1.5 * x).exp()).sum();
        assert!((v / (1.125f64).exp() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn tensor_rule_weights_sum_to_one() {
        let r = TensorRule::new(2, 40, 1e-30);
        let s: f64 = r.log_weights.iter().map(|l| l.exp()).sum();
        assert!((s - 1.0).abs() < 1e-13);
        assert!(r.len() < 1600);
    }
}
