//! Truncated tensor velocity grids, Gaussian reference data and the
//! projection onto the collision invariants.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// (2π)^{-3/4}
pub const MU_HALF_NORM: f64 = 0.251_979_435_538_380_7;

pub fn mu(v: [f64; 3]) -> f64 {
    let m = mu_half(v);
    m * m
}

pub fn mu_half(v: [f64; 3]) -> f64 {
    MU_HALF_NORM * (-0.25 * norm_sq(v)).exp()
}

pub fn norm_sq(v: [f64; 3]) -> f64 {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

/// ⟨v⟩ = (1 + |v|²)^{1/2}
pub fn bracket(v: [f64; 3]) -> f64 {
    (1.0 + norm_sq(v)).sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VelocityGrid {
    pub n_per_axis: usize,
    pub v_max: f64,
    pub dv: f64,
    pub nodes: Vec<[f64; 3]>,
    pub quad_weights: Vec<f64>,
    pub mu_half: Vec<f64>,
    /// Rows: μ^{1/2}, v₁μ^{1/2}, v₂μ^{1/2}, v₃μ^{1/2}, |v|²μ^{1/2}.
    pub invariants_basis: [Vec<f64>; 5],
    pub tol_q: f64,
    gram: [[f64; 5]; 5],
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MomentCoefficients {
    pub a: f64,
    pub b: [f64; 3],
    pub c: f64,
}

impl MomentCoefficients {
    pub fn as_array(&self) -> [f64; 5] {
        [self.a, self.b[0], self.b[1], self.b[2], self.c]
    }

    pub fn from_array(x: [f64; 5]) -> Self {
        Self { a: x[0], b: [x[1], x[2], x[3]], c: x[4] }
    }
}

pub fn build_grid(n_per_axis: usize, v_max: f64) -> Result<VelocityGrid> {
    if n_per_axis < 3 || n_per_axis % 2 == 0 {
        return Err(Error::config(format!(
            "velocity grid needs an odd n_per_axis >= 3, got {n_per_axis}"
        )));
    }
    if !(v_max > 0.0) || !v_max.is_finite() {
        return Err(Error::config(format!("v_max must be positive, got {v_max}")));
    }
    let n = n_per_axis;
    let dv = 2.0 * v_max / (n - 1) as f64;
    let mid = (n / 2) as i64;
    // Symmetric construction keeps v and −v exact negatives of each other.
    let coord = |i: usize| (i as i64 - mid) as f64 * dv;
    let mut nodes = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                nodes.push([coord(i), coord(j), coord(k)]);
            }
        }
    }
    let w = dv * dv * dv;
    let quad_weights = vec![w; nodes.len()];
    let mu_half: Vec<f64> = nodes.iter().map(|&v| mu_half(v)).collect();
    let basis = [
        mu_half.clone(),
        nodes.iter().zip(&mu_half).map(|(v, m)| v[0] * m).collect(),
        nodes.iter().zip(&mu_half).map(|(v, m)| v[1] * m).collect(),
        nodes.iter().zip(&mu_half).map(|(v, m)| v[2] * m).collect(),
        nodes.iter().zip(&mu_half).map(|(v, m)| norm_sq(*v) * m).collect::<Vec<f64>>(),
    ];
    let mut gram = [[0.0; 5]; 5];
    for p in 0..5 {
        for q in 0..5 {
            gram[p][q] = basis[p].iter().zip(&basis[q]).map(|(x, y)| x * y).sum::<f64>() * w;
        }
    }
    let mass: f64 = mu_half.iter().map(|m| m * m).sum::<f64>() * w;
    let grid = VelocityGrid {
        n_per_axis: n,
        v_max,
        dv,
        nodes,
        quad_weights,
        mu_half,
        invariants_basis: basis,
        tol_q: (1.0 - mass).abs() + dv * dv,
        gram,
    };
    if cholesky5(&grid.gram).is_none() {
        return Err(Error::numerical("invariant Gram matrix is not positive definite"));
    }
    Ok(grid)
}

impl VelocityGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Uniform cell volume Δv³.
    pub fn weight(&self) -> f64 {
        self.quad_weights[0]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n_per_axis + j) * self.n_per_axis + k
    }

    pub fn axis_indices(&self, node: usize) -> [usize; 3] {
        let n = self.n_per_axis;
        [node / (n * n), (node / n) % n, node % n]
    }

    pub fn gram(&self) -> &[[f64; 5]; 5] {
        &self.gram
    }

    pub fn bracket(&self) -> Vec<f64> {
        self.nodes.iter().map(|&v| bracket(v)).collect()
    }

    /// Discrete L²_v inner product.
    pub fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        self.mirror_sum(|p| f[p] * g[p]) * self.weight()
    }

    /// Σ_p term(p), reduced over the reflection orbits of the grid: mirror
    /// pairs are added first along axis 0, then 1, then 2. A term that is
    /// odd in any one velocity component therefore sums to exactly 0.
    pub fn mirror_sum(&self, term: impl Fn(usize) -> f64) -> f64 {
        let n = self.n_per_axis;
        let mirror = |i: usize| if 2 * i + 1 == n { None } else { Some(n - 1 - i) };
        let pair = |a: f64, b: Option<f64>| b.map_or(a, |b| a + b);
        let mut total = 0.0;
        for i in 0..=n / 2 {
            for j in 0..=n / 2 {
                for k in 0..=n / 2 {
                    let s0 = |jj: usize, kk: usize| {
                        pair(term(self.index(i, jj, kk)), mirror(i).map(|ii| term(self.index(ii, jj, kk))))
                    };
                    let s1 = |kk: usize| pair(s0(j, kk), mirror(j).map(|jj| s0(jj, kk)));
                    total += pair(s1(k), mirror(k).map(s1));
                }
            }
        }
        total
    }

    /// Trilinear stencil of a point: up to 8 (node, weight) pairs, or
    /// `None` when the point lies outside [−v_max, v_max]³.
    pub fn stencil(&self, p: [f64; 3]) -> Option<[(usize, f64); 8]> {
        let n = self.n_per_axis;
        let mut lo = [0usize; 3];
        let mut fr = [0.0; 3];
        for a in 0..3 {
            let s = (p[a] + self.v_max) / self.dv;
            if !(s >= -1e-12 && s <= (n - 1) as f64 + 1e-12) {
                return None;
            }
            let s = s.clamp(0.0, (n - 1) as f64);
            let i = (s.floor() as usize).min(n - 2);
            lo[a] = i;
            fr[a] = s - i as f64;
        }
        let mut out = [(0usize, 0.0); 8];
        let mut t = 0;
        for di in 0..2 {
            let wi = if di == 0 { 1.0 - fr[0] } else { fr[0] };
            for dj in 0..2 {
                let wj = if dj == 0 { 1.0 - fr[1] } else { fr[1] };
                for dk in 0..2 {
                    let wk = if dk == 0 { 1.0 - fr[2] } else { fr[2] };
                    out[t] = (self.index(lo[0] + di, lo[1] + dj, lo[2] + dk), wi * wj * wk);
                    t += 1;
                }
            }
        }
        Some(out)
    }
}

pub fn integrate(grid: &VelocityGrid, values: &[f64]) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(Error::shape(grid.len(), values.len()));
    }
    // Midpoint weights are uniform.
    Ok(grid.mirror_sum(|p| values[p]) * grid.weight())
}

/// Inner products of `f` with the five invariants.
pub fn invariant_moments(grid: &VelocityGrid, f: &[f64]) -> [f64; 5] {
    let mut m = [0.0; 5];
    for (p, basis) in grid.invariants_basis.iter().enumerate() {
        m[p] = grid.dot(basis, f);
    }
    m
}

pub fn project_p(grid: &VelocityGrid, f: &[f64]) -> Result<(MomentCoefficients, Vec<f64>)> {
    if f.len() != grid.len() {
        return Err(Error::shape(grid.len(), f.len()));
    }
    let coeffs = moment_coefficients(grid, f)?;
    Ok((coeffs, synthesize(grid, &coeffs)))
}

pub fn moment_coefficients(grid: &VelocityGrid, f: &[f64]) -> Result<MomentCoefficients> {
    let rhs = invariant_moments(grid, f);
    let l = cholesky5(grid.gram()).ok_or_else(|| Error::numerical("singular Gram matrix"))?;
    Ok(MomentCoefficients::from_array(cholesky5_solve(&l, rhs)))
}

/// (a + b·v + c|v|²)μ^{1/2} on the grid.
pub fn synthesize(grid: &VelocityGrid, m: &MomentCoefficients) -> Vec<f64> {
    let x = m.as_array();
    (0..grid.len())
        .map(|j| (0..5).map(|p| x[p] * grid.invariants_basis[p][j]).sum())
        .collect()
}

fn cholesky5(a: &[[f64; 5]; 5]) -> Option<[[f64; 5]; 5]> {
    let mut l = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn cholesky5_solve(l: &[[f64; 5]; 5], b: [f64; 5]) -> [f64; 5] {
    let mut y = [0.0; 5];
    for i in 0..5 {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = [0.0; 5];
    for i in (0..5).rev() {
        x[i] = (y[i] - (i + 1..5).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}
