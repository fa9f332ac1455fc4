//! Distribution functions of densities whose logarithm is piecewise linear.

use rand::Rng;

/// Two-sided CDF of the density interpolated log-linearly between nodes.
///
/// Both the lower cumulative mass and the upper tail mass are stored so that
/// either tail can be inverted without cancellation.
#[derive(Debug, Clone)]
pub struct LogLinearCdf {
    xs: Vec<f64>,
    logs: Vec<f64>,
    masses: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    /// Mass and log-slope of the exponential continuation below the first node.
    tail_lo: (f64, f64),
    /// Mass and log-slope of the exponential continuation above the last node.
    tail_hi: (f64, f64),
}

impl LogLinearCdf {
    /// Density truncated to the node range.
    pub fn new(xs: &[f64], log_values: &[f64]) -> Self {
        Self::build(xs, log_values, false)
    }

    /// Density continued beyond both end nodes by the exponential tails of
    /// the end cells, where those decay outward.
    pub fn with_tails(xs: &[f64], log_values: &[f64]) -> Self {
        Self::build(xs, log_values, true)
    }

    fn build(xs: &[f64], log_values: &[f64], tails: bool) -> Self {
        assert!(xs.len() >= 2 && xs.len() == log_values.len());
        let lmax = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let logs: Vec<f64> = log_values.iter().map(|l| (l - lmax).max(-700.0)).collect();
        let mut masses: Vec<f64> = (0..xs.len() - 1)
            .map(|i| {
                let h = xs[i + 1] - xs[i];
                let d = logs[i + 1] - logs[i];
                if d.abs() > 1e-12 {
                    h * logs[i].exp() * d.exp_m1() / d
                } else {
                    h * logs[i].exp()
                }
            })
            .collect();
        let c = xs.len();
        let tail = |slope: f64, l: f64| if tails && slope > 1e-12 { (l.exp() / slope, slope) } else { (0.0, 0.0) };
        let mut tail_lo = tail((logs[1] - logs[0]) / (xs[1] - xs[0]), logs[0]);
        let mut tail_hi = tail((logs[c - 2] - logs[c - 1]) / (xs[c - 1] - xs[c - 2]), logs[c - 1]);
        let total: f64 = masses.iter().sum::<f64>() + tail_lo.0 + tail_hi.0;
        for m in masses.iter_mut() {
            *m /= total;
        }
        tail_lo.0 /= total;
        tail_hi.0 /= total;
        let mut left = vec![0.0; c];
        left[0] = tail_lo.0;
        for i in 0..c - 1 {
            left[i + 1] = left[i] + masses[i];
        }
        let mut right = vec![0.0; c];
        right[c - 1] = tail_hi.0;
        for i in (0..c - 1).rev() {
            right[i] = right[i + 1] + masses[i];
        }
        Self { xs: xs.to_vec(), logs, masses, left, right, tail_lo, tail_hi }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }

    /// Lower cumulative mass at each node.
    pub fn lower_at_nodes(&self) -> &[f64] {
        &self.left
    }

    /// Upper tail mass at each node.
    pub fn upper_at_nodes(&self) -> &[f64] {
        &self.right
    }

    fn cell_fraction(&self, i: usize, u: f64) -> f64 {
        let d = self.logs[i + 1] - self.logs[i];
        if d.abs() > 1e-12 {
            (d * u).exp_m1() / d.exp_m1()
        } else {
            u
        }
    }

    /// `(F(x), 1 − F(x))`, each accurate in its own tail.
    pub fn cdf_pair(&self, x: f64) -> (f64, f64) {
        let c = self.xs.len();
        if x <= self.xs[0] {
            let lo = self.tail_lo.0 * (self.tail_lo.1 * (x - self.xs[0])).exp();
            return (lo, 1.0 - lo);
        }
        if x >= self.xs[c - 1] {
            let up = self.tail_hi.0 * (-self.tail_hi.1 * (x - self.xs[c - 1])).exp();
            return (1.0 - up, up);
        }
        let i = (self.xs.partition_point(|&v| v <= x) - 1).min(c - 2);
        let h = self.xs[i + 1] - self.xs[i];
        let frac = self.cell_fraction(i, (x - self.xs[i]) / h);
        let inside = self.masses[i] * frac;
        (self.left[i] + inside, self.right[i + 1] + (self.masses[i] - inside))
    }

    fn invert_in_cell(&self, i: usize, frac: f64) -> f64 {
        let d = self.logs[i + 1] - self.logs[i];
        let frac = frac.clamp(0.0, 1.0);
        let u = if d.abs() > 1e-12 { (frac * d.exp_m1()).ln_1p() / d } else { frac };
        self.xs[i] + u.clamp(0.0, 1.0) * (self.xs[i + 1] - self.xs[i])
    }

    /// Point with lower cumulative mass `u`.
    pub fn quantile_lower(&self, u: f64) -> f64 {
        let c = self.xs.len();
        if u < self.left[0] {
            return self.xs[0] + (u / self.tail_lo.0).ln() / self.tail_lo.1;
        }
        if u >= self.left[c - 1] {
            return self.quantile_upper(1.0 - u);
        }
        let i = (self.left.partition_point(|&v| v <= u).max(1) - 1).min(c - 2);
        let m = self.masses[i];
        if m <= 0.0 {
            return self.xs[i];
        }
        self.invert_in_cell(i, (u - self.left[i]) / m)
    }

    /// Point with upper tail mass `r`.
    pub fn quantile_upper(&self, r: f64) -> f64 {
        let c = self.xs.len();
        if r < self.right[c - 1] {
            return self.xs[c - 1] - (r / self.tail_hi.0).ln() / self.tail_hi.1;
        }
        if r >= self.right[0] {
            return self.quantile_lower(1.0 - r);
        }
        let i = (self.right.partition_point(|&v| v > r).max(1) - 1).min(c - 2);
        let m = self.masses[i];
        if m <= 0.0 {
            return self.xs[i + 1];
        }
        let from_right = r - self.right[i + 1];
        self.invert_in_cell(i, 1.0 - from_right / m)
    }

    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        if u <= 0.5 {
            self.quantile_lower(u)
        } else {
            self.quantile_upper(1.0 - u)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{normal_cdf, normal_sf};

    fn normal_table(c: usize) -> LogLinearCdf {
        let xs: Vec<f64> = (0..c).map(|i| -8.0 + 16.0 * i as f64 / (c - 1) as f64).collect();
        let ls: Vec<f64> = xs.iter().map(|x| -0.5 * x * x).collect();
        LogLinearCdf::new(&xs, &ls)
    }

    #[test]
    fn tails_are_relatively_accurate() {
        let f = normal_table(1601);
        for &x in &[-6.0, -3.0, -1.0, 0.0, 2.0, 5.5] {
            let (lo, up) = f.cdf_pair(x);
            assert!((lo / normal_cdf(x) - 1.0).abs() < 1e-4, "x={x}");
            assert!((up / normal_sf(x) - 1.0).abs() < 1e-4, "x={x}");
        }
    }

    #[test]
    fn exponential_tails_extend_the_range() {
        let xs: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let ls: Vec<f64> = xs.iter().map(|x| -x).collect();
        let f = LogLinearCdf::with_tails(&xs, &ls);
        assert_eq!(f.lower_at_nodes()[0], 0.0);
        let (lo, up) = f.cdf_pair(13.0);
        assert!((up - (-13.0f64).exp()).abs() < 1e-15 && (lo + up - 1.0).abs() < 1e-15);
        assert!((f.quantile_upper(up) - 13.0).abs() < 1e-9);
        assert!((f.quantile_lower(0.5) - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn quantiles_invert_cdf() {
        let f = normal_table(401);
        for &x in &[-5.0, -0.3, 0.0, 1.7, 4.9] {
            let (lo, up) = f.cdf_pair(x);
            assert!((f.quantile_lower(lo) - x).abs() < 1e-9);
            assert!((f.quantile_upper(up) - x).abs() < 1e-9);
        }
    }
}
