use crate::error::{Error, Result};

/// Largest instance the exhaustive assignment accepts.
pub const MAX_EXACT_POINTS: usize = 8;

/// Minimum-cost assignment of equally weighted point clouds by enumerating
/// every permutation. Returns the mean squared distance and the permutation.
pub fn assignment_exhaustive(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<(f64, Vec<usize>)> {
    let m = xs.len();
    if m == 0 || m != ys.len() || m > MAX_EXACT_POINTS {
        return Err(Error::InvalidInput(format!("exhaustive assignment needs 1..={MAX_EXACT_POINTS} points per side")));
    }
    let cost: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| ys.iter().map(|y| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum()).collect())
        .collect();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = (f64::INFINITY, perm.clone());
    permute(&mut perm, 0, &cost, &mut best);
    Ok((best.0 / m as f64, best.1))
}

fn permute(perm: &mut Vec<usize>, k: usize, cost: &[Vec<f64>], best: &mut (f64, Vec<usize>)) {
    if k == perm.len() {
        let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if c < best.0 {
            *best = (c, perm.clone());
        }
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, cost, best);
        perm.swap(k, i);
    }
}

/// Entropic plan between discrete measures.
#[derive(Debug, Clone)]
pub struct DensePlan {
    pub plan: Vec<Vec<f64>>,
    /// `⟨π, C⟩`.
    pub cost: f64,
    pub iterations: usize,
}

/// Log-domain Sinkhorn for a dense cost matrix, with ε halved from the
/// largest cost down to `eps` and potentials carried between stages.
pub fn sinkhorn_dense(a: &[f64], b: &[f64], cost: &[Vec<f64>], eps: f64, tol: f64, max_iter: usize) -> Result<DensePlan> {
    let (m, k) = (a.len(), b.len());
    let la: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; k];
    let lse = |v: &mut dyn Iterator<Item = f64>| {
        let items: Vec<f64> = v.collect();
        let mx = items.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + items.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
    };
    let cmax = cost.iter().flatten().cloned().fold(0.0, f64::max);
    let mut schedule = Vec::new();
    let mut e = cmax.max(eps);
    while e > eps * (1.0 + 1e-9) {
        schedule.push(e);
        e *= 0.5;
    }
    schedule.push(eps);
    let mut err = f64::INFINITY;
    let mut it = 0;
    for (s, &e) in schedule.iter().enumerate() {
        let stage_tol = if s + 1 == schedule.len() { tol } else { tol.max(1e-6) };
        while it < max_iter {
            it += 1;
            for i in 0..m {
                f[i] = -e * lse(&mut (0..k).map(|j| (g[j] - cost[i][j]) / e + lb[j]));
            }
            err = 0.0;
            for j in 0..k {
                let gn = -e * lse(&mut (0..m).map(|i| (f[i] - cost[i][j]) / e + la[i]));
                err += b[j] * ((g[j] - gn) / e).exp_m1().abs();
                g[j] = gn;
            }
            if err < stage_tol {
                break;
            }
        }
    }
    if err >= tol {
        return Err(Error::NoConvergence { iterations: it, last_error: err });
    }
    let plan: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..k).map(|j| (la[i] + lb[j] + (f[i] + g[j] - cost[i][j]) / eps).exp()).collect())
        .collect();
    let total = (0..m).map(|i| (0..k).map(|j| plan[i][j] * cost[i][j]).sum::<f64>()).sum();
    Ok(DensePlan { plan, cost: total, iterations: it })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhaustive_finds_sorted_matching_in_1d() {
        let xs = vec![vec![0.0], vec![2.0], vec![1.0]];
        let ys = vec![vec![10.0], vec![11.0], vec![12.0]];
        let (_, perm) = assignment_exhaustive(&xs, &ys).unwrap();
        assert_eq!(perm, vec![0, 2, 1]);
    }

    #[test]
    fn entropic_cost_within_bias_bound() {
        let xs = vec![vec![0.0, 0.0], vec![1.0, 0.2], vec![0.3, 1.1]];
        let ys = vec![vec![0.9, 0.9], vec![-0.2, 0.4], vec![1.5, -0.3]];
        let (exact, _) = assignment_exhaustive(&xs, &ys).unwrap();
        let cost: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| ys.iter().map(|y| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum()).collect())
            .collect();
        let w = vec![1.0 / 3.0; 3];
        for &eps in &[0.2, 0.1] {
            let p = sinkhorn_dense(&w, &w, &cost, eps, 1e-10, 100_000).unwrap();
            assert!(p.cost >= exact - 1e-9);
            assert!(p.cost <= exact + eps * (9f64).ln() + 1e-9);
        }
    }
}
