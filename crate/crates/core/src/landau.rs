//! Landau coefficients σ^{ij}, σ^i and the Landau dissipation norm.
//! Diagnostic only; nothing here feeds the evolution.

use crate::error::{Error, Result};
use crate::velocity::{mu, norm_sq, VelocityGrid};
use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// σ^{ij}(v) is the convolution of the mollified kernel
///   φ_ε(u) = (|u|² I − u⊗u)(|u|² + ε²)^{γ_L/2}
/// with μ. Each node integrates in spherical coordinates about its own
/// velocity (polar axis along v), which keeps σ(v) = λ₁P_v + λ₂(I − P_v)
/// exact on every node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandauCoefficients {
    pub gamma_l: f64,
    pub epsilon_reg: f64,
    pub sigma_ij: Vec<[[f64; 3]; 3]>,
    pub sigma_i: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy)]
pub struct LandauQuadrature {
    /// Gauss–Legendre nodes per radial panel.
    pub radial: usize,
    pub panels: usize,
    pub polar: usize,
    /// Uniform azimuth; ≥ 3 keeps the tensor structure exact.
    pub azimuth: usize,
    /// μ(v') is treated as zero for |v'| > this radius.
    pub tail_radius: f64,
}

impl Default for LandauQuadrature {
    fn default() -> Self {
        Self { radial: 16, panels: 8, polar: 24, azimuth: 12, tail_radius: 9.0 }
    }
}

fn check_gamma(gamma_l: f64) -> Result<()> {
    if !(-3.0..-2.0).contains(&gamma_l) {
        return Err(Error::config(format!("gamma_L = {gamma_l} outside [-3, -2)")));
    }
    Ok(())
}

/// Orthonormal (e₁, e₂, e₃) with e₃ ∥ v; the z axis when v = 0.
fn polar_frame(v: [f64; 3]) -> [[f64; 3]; 3] {
    let r = norm_sq(v).sqrt();
    if r == 0.0 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let e3 = [v[0] / r, v[1] / r, v[2] / r];
    let helper = if e3[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = helper[0] * e3[0] + helper[1] * e3[1] + helper[2] * e3[2];
    let mut e1 = [helper[0] - d * e3[0], helper[1] - d * e3[1], helper[2] - d * e3[2]];
    let n1 = norm_sq(e1).sqrt();
    e1 = e1.map(|x| x / n1);
    let e2 = [
        e3[1] * e1[2] - e3[2] * e1[1],
        e3[2] * e1[0] - e3[0] * e1[2],
        e3[0] * e1[1] - e3[1] * e1[0],
    ];
    [e1, e2, e3]
}

/// (σ^{ij}(v), σ^i(v)) at a single velocity.
pub fn sigma_at(v: [f64; 3], gamma_l: f64, eps: f64, quad: &LandauQuadrature) -> ([[f64; 3]; 3], [f64; 3]) {
    let frame = polar_frame(v);
    let speed = norm_sq(v).sqrt();
    let r_lo = (speed - quad.tail_radius).max(0.0);
    let r_hi = speed + quad.tail_radius;
    let radial = GaussLegendre::new(quad.radial).expect("radial rule");
    let polar = GaussLegendre::new(quad.polar).expect("polar rule");
    let mut s = [[0.0; 3]; 3];
    let mut si = [0.0; 3];
    let panel = (r_hi - r_lo) / quad.panels as f64;
    for p in 0..quad.panels {
        let a = r_lo + p as f64 * panel;
        for (xr, wr) in radial.iter() {
            let r = a + 0.5 * panel * (xr + 1.0);
            let radial_w = 0.5 * panel * wr * r.powi(4) * (r * r + eps * eps).powf(0.5 * gamma_l);
            for (ct, wt) in polar.iter() {
                let st = (1.0 - ct * ct).max(0.0).sqrt();
                for k in 0..quad.azimuth {
                    let phi = 2.0 * PI * k as f64 / quad.azimuth as f64;
                    let (sp, cp) = phi.sin_cos();
                    let uhat: [f64; 3] = std::array::from_fn(|i| {
                        st * cp * frame[0][i] + st * sp * frame[1][i] + ct * frame[2][i]
                    });
                    let vp = [v[0] - r * uhat[0], v[1] - r * uhat[1], v[2] - r * uhat[2]];
                    let w = radial_w * wt * (2.0 * PI / quad.azimuth as f64) * mu(vp);
                    for i in 0..3 {
                        for j in 0..3 {
                            let pij = if i == j { 1.0 } else { 0.0 } - uhat[i] * uhat[j];
                            s[i][j] += w * pij;
                            si[i] += w * pij * 0.5 * vp[j];
                        }
                    }
                }
            }
        }
    }
    for i in 0..3 {
        for j in 0..i {
            let m = 0.5 * (s[i][j] + s[j][i]);
            s[i][j] = m;
            s[j][i] = m;
        }
    }
    (s, si)
}

pub fn assemble_sigma(grid: &VelocityGrid, gamma_l: f64) -> Result<LandauCoefficients> {
    assemble_sigma_with(grid, gamma_l, 0.5 * grid.dv, &LandauQuadrature::default())
}

pub fn assemble_sigma_with(
    grid: &VelocityGrid,
    gamma_l: f64,
    epsilon_reg: f64,
    quad: &LandauQuadrature,
) -> Result<LandauCoefficients> {
    check_gamma(gamma_l)?;
    if !(epsilon_reg > 0.0) {
        return Err(Error::config("epsilon_reg must be > 0"));
    }
    let (sigma_ij, sigma_i) = grid.nodes.iter().map(|&v| sigma_at(v, gamma_l, epsilon_reg, quad)).unzip();
    Ok(LandauCoefficients { gamma_l, epsilon_reg, sigma_ij, sigma_i })
}

/// (λ₁, λ₂): the eigenvalue along v and the double one on v^⊥.
pub fn landau_eigs(coeffs: &LandauCoefficients, grid: &VelocityGrid, node: usize) -> Result<(f64, f64)> {
    let s = coeffs.sigma_ij.get(node).ok_or_else(|| Error::config(format!("node {node} out of range")))?;
    let v = grid.nodes[node];
    let trace = s[0][0] + s[1][1] + s[2][2];
    let r2 = norm_sq(v);
    if r2 == 0.0 {
        return Ok((trace / 3.0, trace / 3.0));
    }
    let mut l1 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            l1 += v[i] * s[i][j] * v[j];
        }
    }
    l1 /= r2;
    Ok((l1, 0.5 * (trace - l1)))
}

/// ‖σv − λ₁v‖ / (|σ||v|), zero when v is an eigenvector.
pub fn eigenvector_defect(coeffs: &LandauCoefficients, grid: &VelocityGrid, node: usize) -> Result<f64> {
    let (l1, _) = landau_eigs(coeffs, grid, node)?;
    let s = &coeffs.sigma_ij[node];
    let v = grid.nodes[node];
    let nv = norm_sq(v).sqrt();
    if nv == 0.0 {
        return Ok(0.0);
    }
    let mut d = 0.0;
    let mut scale = 0.0;
    for i in 0..3 {
        let sv: f64 = (0..3).map(|j| s[i][j] * v[j]).sum();
        d += (sv - l1 * v[i]).powi(2);
        scale += s[i].iter().map(|x| x * x).sum::<f64>();
    }
    Ok(d.sqrt() / (scale.sqrt() * nv))
}

/// ∂_{v_a} f on the grid: centered inside, second-order one-sided at faces.
pub fn velocity_gradient(grid: &VelocityGrid, f: &[f64]) -> Vec<[f64; 3]> {
    let n = grid.n_per_axis;
    let h = grid.dv;
    (0..grid.len())
        .map(|p| {
            let idx = grid.axis_indices(p);
            std::array::from_fn(|a| {
                let at = |k: usize| {
                    let mut i = idx;
                    i[a] = k;
                    f[grid.index(i[0], i[1], i[2])]
                };
                let i = idx[a];
                if i == 0 {
                    (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
                } else if i == n - 1 {
                    (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
                } else {
                    (at(i + 1) - at(i - 1)) / (2.0 * h)
                }
            })
        })
        .collect()
}

/// |f|²_D = Σ σ^{ij}(∂_i f ∂_j f + v_i v_j f²/4) on the grid.
pub fn landau_dissipation_norm(grid: &VelocityGrid, coeffs: &LandauCoefficients, f: &[f64]) -> Result<f64> {
    if f.len() != grid.len() || coeffs.sigma_ij.len() != grid.len() {
        return Err(Error::shape(grid.len(), f.len()));
    }
    let grad = velocity_gradient(grid, f);
    let mut total = 0.0;
    for (p, s) in coeffs.sigma_ij.iter().enumerate() {
        let v = grid.nodes[p];
        let g = grad[p];
        let mut q = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                q += s[i][j] * (g[i] * g[j] + 0.25 * v[i] * v[j] * f[p] * f[p]);
            }
        }
        total += q;
    }
    Ok(total * grid.weight())
}

/// |⟨v⟩^{γ/2}P_v∇f|² + |⟨v⟩^{(γ+2)/2}(I−P_v)∇f|² + |⟨v⟩^{(γ+2)/2}f|².
pub fn dissipation_surrogate(grid: &VelocityGrid, gamma_l: f64, f: &[f64]) -> f64 {
    let grad = velocity_gradient(grid, f);
    let mut total = 0.0;
    for (p, &v) in grid.nodes.iter().enumerate() {
        let r2 = norm_sq(v);
        let bracket2 = 1.0 + r2;
        let g = grad[p];
        let g2 = norm_sq(g);
        let along = if r2 > 0.0 { (g[0] * v[0] + g[1] * v[1] + g[2] * v[2]).powi(2) / r2 } else { 0.0 };
        total += bracket2.powf(0.5 * gamma_l) * along
            + bracket2.powf(0.5 * (gamma_l + 2.0)) * (g2 - along)
            + bracket2.powf(0.5 * (gamma_l + 2.0)) * f[p] * f[p];
    }
    total * grid.weight()
}

pub fn eigen_profile_csv(coeffs: &LandauCoefficients, grid: &VelocityGrid) -> Result<String> {
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for p in 0..grid.len() {
        let (l1, l2) = landau_eigs(coeffs, grid, p)?;
        rows.push((norm_sq(grid.nodes[p]).sqrt(), l1, l2));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut s = String::from("speed,lambda1,lambda2\n");
    for (r, l1, l2) in rows {
        s.push_str(&format!("{r:.10e},{l1:.12e},{l2:.12e}\n"));
    }
    Ok(s)
}
