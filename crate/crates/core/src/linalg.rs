//! Dense symmetric matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &Mat, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1e-300);
    (m - m.transpose()).amax() <= rel_tol * scale
}

/// Apply `f` to the eigenvalues of a symmetric matrix.
pub fn sym_apply(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = Mat::from_diagonal(&eig.eigenvalues.map(f));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

pub fn eigenvalues_sym(m: &Mat) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn lambda_max(m: &Mat) -> f64 {
    *eigenvalues_sym(m).last().unwrap()
}

pub fn lambda_min(m: &Mat) -> f64 {
    eigenvalues_sym(m)[0]
}

pub fn is_spd(m: &Mat) -> bool {
    m.is_square()
        && m.iter().all(|v| v.is_finite())
        && is_symmetric(m, 1e-10)
        && lambda_min(m) > 0.0
}

pub fn require_spd(m: &Mat, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidInput(format!("{what} must be square")));
    }
    if !is_spd(m) {
        return Err(Error::InvalidInput(format!(
            "{what} must be symmetric positive definite"
        )));
    }
    Ok(())
}

pub fn sqrtm_spd(m: &Mat) -> Mat {
    sym_apply(m, |x| x.max(0.0).sqrt())
}

pub fn inv_sqrtm_spd(m: &Mat) -> Mat {
    sym_apply(m, |x| 1.0 / x.sqrt())
}

pub fn inv_spd(m: &Mat) -> Mat {
    sym_apply(m, |x| 1.0 / x)
}

/// General inverse by LU.
pub fn inverse(m: &Mat) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("singular matrix".into()))
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::InvalidInput("matrix rows must be nonempty and equal length".into()));
    }
    Ok(Mat::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Largest eigenvalue of a small symmetric matrix given row-major.
pub fn lambda_max_slice(h: &[f64], n: usize) -> f64 {
    match n {
        1 => h[0],
        2 => {
            let (a, b, c) = (h[0], 0.5 * (h[1] + h[2]), h[3]);
            0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt()
        }
        _ => lambda_max(&Mat::from_row_slice(n, n, h)),
    }
}

/// Solve `m x = b` for a small dense system; returns `None` if singular.
pub fn solve_small(m: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    match n {
        1 => (m[0] != 0.0).then(|| vec![b[0] / m[0]]),
        2 => {
            let det = m[0] * m[3] - m[1] * m[2];
            (det != 0.0).then(|| {
                vec![
                    (m[3] * b[0] - m[1] * b[1]) / det,
                    (m[0] * b[1] - m[2] * b[0]) / det,
                ]
            })
        }
        _ => Mat::from_row_slice(n, n, m)
            .lu()
            .solve(&Vector::from_column_slice(b))
            .map(|x| x.iter().copied().collect()),
    }
}

pub fn det_small(m: &[f64], n: usize) -> f64 {
    match n {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        _ => Mat::from_row_slice(n, n, m).determinant(),
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `out = m x` for row-major `m`.
pub fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&m[i * n..(i + 1) * n], x);
    }
}
