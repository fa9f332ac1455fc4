use crate::grid::RectGrid;

/// Potential values recovered from a gradient field.
#[derive(Debug, Clone)]
pub struct IntegratedField {
    /// Values with `φ(origin) = 0`.
    pub values: Vec<f64>,
    /// `‖Dφ − field‖ / ‖field‖` over grid edges.
    pub curl_residual: f64,
}

/// Least-squares potential of a gradient field on a grid.
///
/// Minimizes `Σ_edges (φ_b − φ_a − h·(g_a + g_b)/2)²`, the curl-free
/// projection of the field, by conjugate gradients on the graph Laplacian
/// with the origin pinned to zero.
pub fn integrate_gradient_field(grid: &RectGrid, field: &[f64]) -> Option<IntegratedField> {
    let n = grid.dim();
    let len = grid.len();
    let origin = grid.origin_index()?;
    let strides = grid.strides();
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for k in 0..len {
        let multi = grid.multi_index(k);
        for d in 0..n {
            if multi[d] + 1 < grid.counts()[d] {
                let b = k + strides[d];
                let delta = 0.5 * grid.step(d) * (field[k * n + d] + field[b * n + d]);
                edges.push((k, b, delta));
            }
        }
    }
    let mut rhs = vec![0.0; len];
    let mut degree = vec![0.0; len];
    for &(a, b, d) in &edges {
        rhs[b] += d;
        rhs[a] -= d;
        degree[a] += 1.0;
        degree[b] += 1.0;
    }
    rhs[origin] = 0.0;
    let apply = |x: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(a, b, _) in &edges {
            let diff = x[b] - x[a];
            out[b] += diff;
            out[a] -= diff;
        }
        out[origin] = x[origin];
    };
    let precond: Vec<f64> = (0..len).map(|k| if k == origin { 1.0 } else { 1.0 / degree[k] }).collect();
    let mut x = vec![0.0; len];
    let mut r = rhs.clone();
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; len];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    for _ in 0..20 * len {
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn <= 1e-13 * rhs_norm {
            break;
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..len {
            z[i] = r[i] * precond[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..len {
            p[i] = z[i] + beta * p[i];
        }
    }
    let mut res2 = 0.0;
    let mut norm2 = 0.0;
    for &(a, b, d) in &edges {
        res2 += (x[b] - x[a] - d).powi(2);
        norm2 += d * d;
    }
    let x0 = x[origin];
    x.iter_mut().for_each(|v| *v -= x0);
    Some(IntegratedField { values: x, curl_residual: (res2 / norm2.max(1e-300)).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_quadratic_exactly() {
        let g = RectGrid::centered(&[0.0, 0.0], &[2.0, 3.0], &[11, 13]).unwrap();
        let mut field = Vec::new();
        for x in g.nodes() {
            field.push(2.0 * x[0] + 0.5 * x[1] + 1.0);
            field.push(0.5 * x[0] + x[1]);
        }
        let r = integrate_gradient_field(&g, &field).unwrap();
        for (k, x) in g.nodes().iter().enumerate() {
            let exact = x[0] * x[0] + 0.5 * x[0] * x[1] + 0.5 * x[1] * x[1] + x[0];
            assert!((r.values[k] - exact).abs() < 1e-9);
        }
        assert!(r.curl_residual < 1e-10);
    }

    #[test]
    fn flags_rotation() {
        let g = RectGrid::centered(&[0.0, 0.0], &[1.0, 1.0], &[9, 9]).unwrap();
        let field: Vec<f64> = g.nodes().iter().flat_map(|x| [-x[1], x[0]]).collect();
        let r = integrate_gradient_field(&g, &field).unwrap();
        assert!(r.curl_residual > 0.5);
    }
}
