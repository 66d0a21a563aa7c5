//! Cutoff Boltzmann collision operator on a velocity grid: collision
//! frequency ν, gain part K, linearized L = −ν + K, the bilinear Γ and the
//! discrete coercivity constant.
//!
//! All quadratures share one rule: grid nodes for v_*, and a product
//! Gauss–Legendre (in cosθ) × uniform (azimuth) rule for ω on the hemisphere
//! cosθ > 0. The ω ↦ −ω symmetry of the ω-representation makes the hemisphere
//! rule exact up to a factor of 2.

use crate::error::{Error, Result};
use crate::linalg;
use crate::velocity::{mu_half, VelocityGrid};
use faer::Mat;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CollisionKernel {
    pub gamma: f64,
    pub b_coeff: f64,
    pub n_angle: usize,
    pub epsilon_reg: f64,
}

impl CollisionKernel {
    pub fn new(gamma: f64, b_coeff: f64, n_angle: usize, epsilon_reg: f64) -> Result<Self> {
        let k = Self { gamma, b_coeff, n_angle, epsilon_reg };
        k.validate(false)?;
        Ok(k)
    }

    /// Defaults: γ = −1, b = |cosθ|, 8 angular points, ε = Δv/2.
    pub fn default_for(grid: &VelocityGrid) -> Self {
        Self { gamma: -1.0, b_coeff: 1.0, n_angle: 8, epsilon_reg: 0.5 * grid.dv }
    }

    /// Hard-potential exponent, accepted only for the labeled control runs.
    pub fn hard_control(gamma: f64, grid: &VelocityGrid) -> Result<Self> {
        let k = Self { gamma, ..Self::default_for(grid) };
        k.validate(true)?;
        Ok(k)
    }

    pub fn validate(&self, allow_hard_control: bool) -> Result<()> {
        let soft = self.gamma > -3.0 && self.gamma < 0.0;
        let hard = allow_hard_control && self.gamma > 0.0 && self.gamma <= 1.0;
        if !(soft || hard) {
            return Err(Error::config(format!("gamma {} outside (-3, 0)", self.gamma)));
        }
        if !(self.b_coeff > 0.0) {
            return Err(Error::config("b_coeff must be positive"));
        }
        if self.n_angle < 1 {
            return Err(Error::config("n_angle must be >= 1"));
        }
        if !(self.epsilon_reg >= 0.0) {
            return Err(Error::config("epsilon_reg must be >= 0"));
        }
        Ok(())
    }

    /// Mollified radial factor (r² + ε²)^{γ/2}.
    pub fn radial(&self, r2: f64) -> f64 {
        (r2 + self.epsilon_reg * self.epsilon_reg).powf(0.5 * self.gamma)
    }

    /// ∫_{S²} b(cosθ) dω.
    pub fn angular_mass(&self) -> f64 {
        2.0 * PI * self.b_coeff
    }
}

/// Quadrature point on the hemisphere in the frame (e₁, e₂, û).
#[derive(Debug, Clone, Copy)]
struct AngularNode {
    cos: f64,
    t1: f64,
    t2: f64,
    /// Includes b(cosθ) and the hemisphere doubling.
    weight: f64,
}

fn angular_rule(kernel: &CollisionKernel) -> Vec<AngularNode> {
    let n = kernel.n_angle;
    let gl = gauss_quad::GaussLegendre::new(n.max(2)).expect("Gauss-Legendre rule");
    let mut out = Vec::with_capacity(n * n);
    let pairs: Vec<(f64, f64)> = if n == 1 {
        vec![(0.5, 1.0)]
    } else {
        gl.iter().map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect()
    };
    for &(c, wc) in &pairs {
        let s = (1.0 - c * c).max(0.0).sqrt();
        for q in 0..n {
            let phi = 2.0 * PI * (q as f64 + 0.5) / n as f64;
            out.push(AngularNode {
                cos: c,
                t1: s * phi.cos(),
                t2: s * phi.sin(),
                weight: 2.0 * kernel.b_coeff * c * wc * 2.0 * PI / n as f64,
            });
        }
    }
    out
}

/// Orthonormal frame (e₁, e₂) perpendicular to the unit vector u.
fn frame(u: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let a = (0..3)
        .min_by(|&i, &j| u[i].abs().partial_cmp(&u[j].abs()).unwrap())
        .unwrap();
    let mut e = [0.0; 3];
    e[a] = 1.0;
    let d = u[a];
    let mut e1 = [e[0] - d * u[0], e[1] - d * u[1], e[2] - d * u[2]];
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    for x in &mut e1 {
        *x /= n1;
    }
    let e2 = [
        u[1] * e1[2] - u[2] * e1[1],
        u[2] * e1[0] - u[0] * e1[2],
        u[0] * e1[1] - u[1] * e1[0],
    ];
    (e1, e2)
}

/// One collision configuration: pre-collision pair (v, v_*) and the
/// post-collision pair for a quadrature direction.
struct Collision {
    v_post: [f64; 3],
    vs_post: [f64; 3],
    weight: f64,
}

/// Visits every (v_*, ω) quadrature configuration for the node `a`, passing
/// the v_* index, the mollified radial factor times Δv³, and the
/// post-collision data.
fn for_each_collision(
    grid: &VelocityGrid,
    kernel: &CollisionKernel,
    rule: &[AngularNode],
    a: usize,
    mut visit: impl FnMut(usize, f64, &mut dyn Iterator<Item = Collision>),
) {
    let v = grid.nodes[a];
    let w = grid.weight();
    for (b, &vs) in grid.nodes.iter().enumerate() {
        let u = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
        let r2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
        let radial = kernel.radial(r2) * w;
        if r2 == 0.0 {
            // v' = v, v'_* = v_* for every ω.
            let total: f64 = rule.iter().map(|n| n.weight).sum();
            let mut it = std::iter::once(Collision { v_post: v, vs_post: vs, weight: total });
            visit(b, radial, &mut it);
            continue;
        }
        let r = r2.sqrt();
        let uh = [u[0] / r, u[1] / r, u[2] / r];
        let (e1, e2) = frame(uh);
        let mut it = rule.iter().map(|n| {
            let om = [
                n.cos * uh[0] + n.t1 * e1[0] + n.t2 * e2[0],
                n.cos * uh[1] + n.t1 * e1[1] + n.t2 * e2[1],
                n.cos * uh[2] + n.t1 * e1[2] + n.t2 * e2[2],
            ];
            // (v_* − v)·ω = −r cosθ
            let d = -r * n.cos;
            Collision {
                v_post: [v[0] + d * om[0], v[1] + d * om[1], v[2] + d * om[2]],
                vs_post: [vs[0] - d * om[0], vs[1] - d * om[1], vs[2] - d * om[2]],
                weight: n.weight,
            }
        });
        visit(b, radial, &mut it);
    }
}

pub fn collision_frequency(grid: &VelocityGrid, kernel: &CollisionKernel) -> Vec<f64> {
    let ang = kernel.angular_mass();
    let w = grid.weight();
    grid.nodes
        .iter()
        .map(|v| {
            grid.nodes
                .iter()
                .zip(&grid.mu_half)
                .map(|(vs, m)| {
                    let r2 = (v[0] - vs[0]).powi(2) + (v[1] - vs[1]).powi(2) + (v[2] - vs[2]).powi(2);
                    kernel.radial(r2) * m * m
                })
                .sum::<f64>()
                * w
                * ang
        })
        .collect()
}

/// Largest velocity grid for which dense N_v × N_v assembly is attempted.
pub const MAX_DENSE_VELOCITY_NODES: usize = 6000;

pub fn assemble_k(grid: &VelocityGrid, kernel: &CollisionKernel) -> Result<Mat<f64>> {
    let n = grid.len();
    if n > MAX_DENSE_VELOCITY_NODES {
        return Err(Error::config(format!(
            "{n} velocity nodes exceeds the dense assembly cap {MAX_DENSE_VELOCITY_NODES}"
        )));
    }
    let rule = angular_rule(kernel);
    let ang = kernel.angular_mass();
    let mut k = Mat::<f64>::zeros(n, n);
    let mut row = vec![0.0; n];
    for a in 0..n {
        row.iter_mut().for_each(|x| *x = 0.0);
        let mh_a = grid.mu_half[a];
        for_each_collision(grid, kernel, &rule, a, |b, radial, cols| {
            let mh_b = grid.mu_half[b];
            row[b] -= radial * ang * mh_b * mh_a;
            for c in cols {
                let s = radial * c.weight * mh_b;
                if let Some(st) = grid.stencil(c.v_post) {
                    let coef = s * mu_half(c.vs_post);
                    for (j, wj) in st {
                        row[j] += coef * wj;
                    }
                }
                if let Some(st) = grid.stencil(c.vs_post) {
                    let coef = s * mu_half(c.v_post);
                    for (j, wj) in st {
                        row[j] += coef * wj;
                    }
                }
            }
        });
        for (j, &x) in row.iter().enumerate() {
            k[(a, j)] = x;
        }
    }
    Ok(k)
}

#[derive(Debug, Clone)]
pub struct CollisionOperator {
    pub nu: Vec<f64>,
    pub k: Mat<f64>,
    pub l: Mat<f64>,
    pub c1_estimate: Option<f64>,
}

/// Orthogonal projector onto span of the invariants (uniform weights make
/// the discrete L² and Euclidean projectors coincide).
pub fn invariant_projector(grid: &VelocityGrid) -> Mat<f64> {
    let n = grid.len();
    let basis = Mat::<f64>::from_fn(n, 5, |i, p| grid.invariants_basis[p][i]);
    let q = basis.qr().compute_thin_Q();
    &q * q.transpose()
}

pub fn assemble_l(nu: &[f64], k: &Mat<f64>, grid: &VelocityGrid) -> Result<CollisionOperator> {
    let n = grid.len();
    if nu.len() != n {
        return Err(Error::shape(n, nu.len()));
    }
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::shape(n, k.nrows()));
    }
    let l_sym = Mat::<f64>::from_fn(n, n, |i, j| {
        0.5 * (k[(i, j)] + k[(j, i)]) - if i == j { nu[i] } else { 0.0 }
    });
    let p = invariant_projector(grid);
    let q = Mat::<f64>::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 }) - &p;
    let qlq = &q * &l_sym * &q;
    // Exact symmetry after the two products.
    let l = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (qlq[(i, j)] + qlq[(j, i)]));
    Ok(CollisionOperator { nu: nu.to_vec(), k: k.clone(), l, c1_estimate: None })
}

impl CollisionOperator {
    pub fn assemble(grid: &VelocityGrid, kernel: &CollisionKernel) -> Result<Self> {
        let nu = collision_frequency(grid, kernel);
        let k = assemble_k(grid, kernel)?;
        assemble_l(&nu, &k, grid)
    }

    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    pub fn apply_l(&self, f: &[f64]) -> Vec<f64> {
        linalg::matvec(&self.l, f)
    }
}

/// Restricts the symmetric matrix `m` to the orthogonal complement of
/// span(`basis`) and returns its eigenvalues there, ascending.
fn complement_eigenvalues(m: &Mat<f64>, basis: &Mat<f64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    let k = basis.ncols();
    let qfull = basis.qr().compute_Q();
    let z = qfull.subcols(k, n - k);
    let r = z.transpose() * m * z;
    let r = Mat::<f64>::from_fn(n - k, n - k, |i, j| 0.5 * (r[(i, j)] + r[(j, i)]));
    r.self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::numerical(format!("symmetric eigensolve failed: {e:?}")))
}

/// c₁ = min over g ⟂ invariants of (g, −Lg)/(g, νg).
pub fn coercivity_constant(op: &CollisionOperator, grid: &VelocityGrid) -> Result<f64> {
    let n = grid.len();
    // g = ν^{-1/2} y turns the pencil into a standard problem on the
    // complement of ν^{-1/2}ψ.
    let s: Vec<f64> = op.nu.iter().map(|x| 1.0 / x.sqrt()).collect();
    let m = Mat::<f64>::from_fn(n, n, |i, j| -s[i] * op.l[(i, j)] * s[j]);
    let basis = Mat::<f64>::from_fn(n, 5, |i, p| s[i] * grid.invariants_basis[p][i]);
    let ev = complement_eigenvalues(&m, &basis)?;
    Ok(ev[0])
}

/// min over g ⟂ invariants of (g, −Lg)/(g, g).
pub fn plain_gap(op: &CollisionOperator, grid: &VelocityGrid) -> Result<f64> {
    let n = grid.len();
    let m = Mat::<f64>::from_fn(n, n, |i, j| -op.l[(i, j)]);
    let basis = Mat::<f64>::from_fn(n, 5, |i, p| grid.invariants_basis[p][i]);
    Ok(complement_eigenvalues(&m, &basis)?[0])
}

/// Ascending eigenvalues of −L.
pub fn minus_l_spectrum(op: &CollisionOperator) -> Result<Vec<f64>> {
    let n = op.len();
    let m = Mat::<f64>::from_fn(n, n, |i, j| -op.l[(i, j)]);
    m.self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::numerical(format!("symmetric eigensolve failed: {e:?}")))
}

/// Γ(f, g) by direct quadrature.
pub fn gamma_bilinear(grid: &VelocityGrid, kernel: &CollisionKernel, f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    let n = grid.len();
    if f.len() != n {
        return Err(Error::shape(n, f.len()));
    }
    if g.len() != n {
        return Err(Error::shape(n, g.len()));
    }
    let rule = angular_rule(kernel);
    let ang = kernel.angular_mass();
    let interp = |st: Option<[(usize, f64); 8]>, h: &[f64]| -> f64 {
        st.map_or(0.0, |s| s.iter().map(|&(j, w)| w * h[j]).sum())
    };
    let mut out = vec![0.0; n];
    for (a, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for_each_collision(grid, kernel, &rule, a, |b, radial, cols| {
            let mh_b = grid.mu_half[b];
            acc -= radial * ang * mh_b * f[b] * g[a];
            for c in cols {
                let gain = interp(grid.stencil(c.vs_post), f) * interp(grid.stencil(c.v_post), g);
                acc += radial * c.weight * mh_b * gain;
            }
        });
        *slot = acc;
    }
    Ok(out)
}

/// Dense trilinear tensor T with Γ(f,g)_a = Σ_{s,t} T[a,s,t] f_s g_t, stored
/// as an (N·N) × N matrix with row a·N + s and column t.
#[derive(Debug, Clone)]
pub struct GammaTensor {
    pub n: usize,
    pub t: Mat<f64>,
}

/// Largest velocity grid for which the dense Γ tensor is built.
pub const MAX_GAMMA_TENSOR_NODES: usize = 200;

impl GammaTensor {
    pub fn assemble(grid: &VelocityGrid, kernel: &CollisionKernel) -> Result<Self> {
        let n = grid.len();
        if n > MAX_GAMMA_TENSOR_NODES {
            return Err(Error::config(format!(
                "{n} velocity nodes exceeds the dense Gamma tensor cap {MAX_GAMMA_TENSOR_NODES}"
            )));
        }
        let rule = angular_rule(kernel);
        let ang = kernel.angular_mass();
        let mut t = Mat::<f64>::zeros(n * n, n);
        for a in 0..n {
            for_each_collision(grid, kernel, &rule, a, |b, radial, cols| {
                let mh_b = grid.mu_half[b];
                t[(a * n + b, a)] -= radial * ang * mh_b;
                for c in cols {
                    let (Some(sf), Some(sg)) = (grid.stencil(c.vs_post), grid.stencil(c.v_post)) else {
                        continue;
                    };
                    let s = radial * c.weight * mh_b;
                    for &(i, wi) in &sf {
                        for &(j, wj) in &sg {
                            t[(a * n + i, j)] += s * wi * wj;
                        }
                    }
                }
            });
        }
        Ok(Self { n, t })
    }

    /// Γ(f_c, g_c) for every column c of the N × m matrices `f`, `g`.
    pub fn apply_columns(&self, f: &Mat<f64>, g: &Mat<f64>) -> Mat<f64> {
        let n = self.n;
        let y = &self.t * g;
        Mat::<f64>::from_fn(n, f.ncols(), |a, c| (0..n).map(|s| f[(s, c)] * y[(a * n + s, c)]).sum())
    }

    pub fn apply(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let fm = Mat::<f64>::from_fn(self.n, 1, |i, _| f[i]);
        let gm = Mat::<f64>::from_fn(self.n, 1, |i, _| g[i]);
        let r = self.apply_columns(&fm, &gm);
        (0..self.n).map(|i| r[(i, 0)]).collect()
    }
}
