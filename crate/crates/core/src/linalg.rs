//! Small dense helpers around faer.

use faer::Mat;

pub fn matvec(m: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    let xm = faer::MatRef::from_column_major_slice(x, x.len(), 1);
    let y = m * xm;
    (0..m.nrows()).map(|i| y[(i, 0)]).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn frobenius(m: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)] * m[(i, j)];
        }
    }
    s.sqrt()
}

/// Relative Frobenius asymmetry ‖M − Mᵀ‖/‖M‖.
pub fn asymmetry(m: &Mat<f64>) -> f64 {
    let n = m.nrows();
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            let d = m[(i, j)] - m[(j, i)];
            s += d * d;
        }
    }
    s.sqrt() / frobenius(m).max(f64::MIN_POSITIVE)
}
