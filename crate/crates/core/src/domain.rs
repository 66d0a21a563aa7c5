//! Spatial domains, the phase weight W, backward exit times, the closed-form
//! mild solution of transport with absorption, and the semi-Lagrangian step.

use crate::error::{Error, Result};
use crate::field::{PhaseField, Representation};
use crate::velocity::{bracket, mu_half, norm_sq, VelocityGrid};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainMode {
    Torus3,
    InflowBox3,
}

/// [0, side]³ split into n_cells³ cubes; values live at cell centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialDomain {
    pub mode: DomainMode,
    pub n_cells: usize,
    pub side: f64,
}

impl SpatialDomain {
    pub fn new(mode: DomainMode, n_cells: usize, side: f64) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::config(format!("n_cells must be >= 2, got {n_cells}")));
        }
        if !(side > 0.0) || !side.is_finite() {
            return Err(Error::config(format!("side must be positive, got {side}")));
        }
        Ok(Self { mode, n_cells, side })
    }

    pub fn dx(&self) -> f64 {
        self.side / self.n_cells as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(3)
    }

    pub fn total_cells(&self) -> usize {
        self.n_cells.pow(3)
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n_cells + j) * self.n_cells + k
    }

    pub fn axis_indices(&self, c: usize) -> [usize; 3] {
        let n = self.n_cells;
        [c / (n * n), (c / n) % n, c % n]
    }

    pub fn center(&self, c: usize) -> [f64; 3] {
        let h = self.dx();
        self.axis_indices(c).map(|i| (i as f64 + 0.5) * h)
    }

    /// sup over the closed domain of |x|.
    pub fn sup_abs_x(&self) -> f64 {
        self.side * 3f64.sqrt()
    }

    /// Outward unit normal of face `(axis, upper)` is ±e_axis.
    pub fn normal_sign(upper: bool) -> f64 {
        if upper {
            1.0
        } else {
            -1.0
        }
    }

    pub fn contains(&self, x: [f64; 3]) -> bool {
        x.iter().all(|&c| (0.0..=self.side).contains(&c))
    }
}

/// Phase weight W = exp(−q x·v/⟨v⟩) and velocity weight w = (1+ρ²|v|²)^β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub q: f64,
    pub rho: f64,
    pub beta: f64,
}

impl WeightSpec {
    pub fn validate(&self, nonlinear: bool) -> Result<()> {
        if !(self.q >= 0.0) {
            return Err(Error::config("q must be >= 0"));
        }
        if !(self.rho > 0.0) {
            return Err(Error::config("rho must be > 0"));
        }
        if nonlinear && !(self.beta > 1.0) {
            return Err(Error::config("beta must exceed 1 for the nonlinear pipeline"));
        }
        Ok(())
    }

    pub fn velocity_weight(&self, v: [f64; 3]) -> f64 {
        (1.0 + self.rho * self.rho * norm_sq(v)).powf(self.beta)
    }

    /// Absorption manufactured by the weight: q|v|²/⟨v⟩.
    pub fn weight_absorption(&self, v: [f64; 3]) -> f64 {
        self.q * norm_sq(v) / bracket(v)
    }

    /// Bounds (e^{−qC}, e^{qC}) with C = sup|x| on the domain.
    pub fn w_bounds(&self, domain: &SpatialDomain) -> (f64, f64) {
        let c = domain.sup_abs_x();
        ((-self.q * c).exp(), (self.q * c).exp())
    }
}

pub fn weight_w(spec: &WeightSpec, x: [f64; 3], v: [f64; 3]) -> f64 {
    let xv = x[0] * v[0] + x[1] * v[1] + x[2] * v[2];
    (-spec.q * xv / bracket(v)).exp()
}

/// ∂_{x_i} W = −q v_i/⟨v⟩ W.
pub fn grad_w(spec: &WeightSpec, x: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    let w = weight_w(spec, x, v);
    let b = bracket(v);
    v.map(|vi| -spec.q * vi / b * w)
}

/// Max over cell centers and velocity nodes of the relative residual of
/// −v·∇ₓW = q|v|²⟨v⟩^{-1}W with centered differences of step Δx.
pub fn weight_transport_identity_residual(spec: &WeightSpec, grid: &VelocityGrid, domain: &SpatialDomain) -> f64 {
    let h = domain.dx();
    let mut worst = 0.0f64;
    for c in 0..domain.total_cells() {
        let x = domain.center(c);
        for &v in &grid.nodes {
            let w = weight_w(spec, x, v);
            let mut dir = 0.0;
            for a in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[a] += h;
                xm[a] -= h;
                dir += v[a] * (weight_w(spec, xp, v) - weight_w(spec, xm, v)) / (2.0 * h);
            }
            let r = (-dir - spec.weight_absorption(v) * w).abs() / w;
            worst = worst.max(r);
        }
    }
    worst
}

/// Backward exit time t_b and exit point x_b = x − t_b v. Infinite (and
/// `None`) when the backward ray never leaves the box.
pub fn exit_time(domain: &SpatialDomain, x: [f64; 3], v: [f64; 3]) -> Result<(f64, Option<[f64; 3]>)> {
    if domain.mode != DomainMode::InflowBox3 {
        return Err(Error::config("exit time is defined on the inflow box only"));
    }
    if !domain.contains(x) {
        return Err(Error::config(format!("point {x:?} lies outside the box")));
    }
    let mut tb = f64::INFINITY;
    let mut hit: Option<(usize, f64)> = None;
    for a in 0..3 {
        let (t, face) = if v[a] > 0.0 {
            (x[a] / v[a], 0.0)
        } else if v[a] < 0.0 {
            ((domain.side - x[a]) / -v[a], domain.side)
        } else {
            continue;
        };
        if t < tb {
            tb = t;
            hit = Some((a, face));
        }
    }
    Ok(match hit {
        None => (f64::INFINITY, None),
        Some((axis, face)) => {
            let mut xb = [x[0] - tb * v[0], x[1] - tb * v[1], x[2] - tb * v[2]];
            xb[axis] = face;
            for c in &mut xb {
                *c = c.clamp(0.0, domain.side);
            }
            (tb, Some(xb))
        }
    })
}

/// Inflow datum g(t, x, v) in the plain representation.
#[derive(Clone, Default)]
pub enum InflowData {
    #[default]
    Zero,
    /// amplitude · e^{−decay t} · μ^{1/2}(v)
    GaussianEnvelope { amplitude: f64, decay: f64 },
    Custom(Arc<dyn Fn(f64, [f64; 3], [f64; 3]) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for InflowData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InflowData::Zero => write!(f, "Zero"),
            InflowData::GaussianEnvelope { amplitude, decay } => {
                write!(f, "GaussianEnvelope {{ amplitude: {amplitude}, decay: {decay} }}")
            }
            InflowData::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl InflowData {
    pub fn eval(&self, t: f64, x: [f64; 3], v: [f64; 3]) -> f64 {
        match self {
            InflowData::Zero => 0.0,
            InflowData::GaussianEnvelope { amplitude, decay } => amplitude * (-decay * t).exp() * mu_half(v),
            InflowData::Custom(g) => g(t, x, v),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, InflowData::Zero)
    }
}

/// Closed-form solution of ∂_t h + v·∇ₓh + (q|v|²⟨v⟩^{-1} + ν)h = 0 with
/// h(0) = f0 and, on the box, inflow h = w W g.
#[allow(clippy::too_many_arguments)]
pub fn mild_transport_solution(
    domain: &SpatialDomain,
    spec: &WeightSpec,
    nu_v: f64,
    t: f64,
    x: [f64; 3],
    v: [f64; 3],
    f0: &dyn Fn([f64; 3], [f64; 3]) -> f64,
    g: &InflowData,
) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::config("time must be >= 0"));
    }
    let rate = spec.weight_absorption(v) + nu_v;
    match domain.mode {
        DomainMode::Torus3 => {
            let y = [0, 1, 2].map(|a| (x[a] - t * v[a]).rem_euclid(domain.side));
            Ok((-rate * t).exp() * f0(y, v))
        }
        DomainMode::InflowBox3 => {
            let (tb, xb) = exit_time(domain, x, v)?;
            if t <= tb {
                let y = [x[0] - t * v[0], x[1] - t * v[1], x[2] - t * v[2]];
                Ok((-rate * t).exp() * f0(y, v))
            } else {
                let xb = xb.expect("finite exit time has an exit point");
                let wwg = spec.velocity_weight(v) * weight_w(spec, xb, v) * g.eval(t - tb, xb, v);
                Ok((-rate * tb).exp() * wwg)
            }
        }
    }
}

/// Semi-Lagrangian transport of `data` over one step with per-velocity
/// absorption rates. `boundary(t, x_face, j)` supplies inflow values.
///
/// Interpolation is trilinear on cell centers. On the box, points between
/// a face and the first center use a ghost value at −Δx/2 beyond the face
/// equal to the boundary datum, which at CFL ≤ 1 reproduces first-order
/// upwinding with an inflow ghost cell. Feet outside the box follow the
/// mild formula.
pub fn transport_step(
    domain: &SpatialDomain,
    grid: &VelocityGrid,
    data: &[f64],
    dt: f64,
    t_now: f64,
    rates: &[f64],
    boundary: &dyn Fn(f64, [f64; 3], usize) -> f64,
) -> Vec<f64> {
    let n = domain.n_cells;
    let nv = grid.len();
    let h = domain.dx();
    let mut out = vec![0.0; data.len()];
    let box_mode = domain.mode == DomainMode::InflowBox3;
    for (j, &v) in grid.nodes.iter().enumerate() {
        let decay = (-rates[j] * dt).exp();
        // Foot of cell i along axis a sits at center index i + shift + frac.
        let mut shift = [0i64; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = -dt * v[a] / h;
            let fl = s.floor();
            shift[a] = fl as i64;
            frac[a] = s - fl;
        }
        for c in 0..domain.total_cells() {
            let idx = domain.axis_indices(c);
            let x = domain.center(c);
            let foot = [x[0] - dt * v[0], x[1] - dt * v[1], x[2] - dt * v[2]];
            if box_mode && !domain.contains(foot) {
                let (tb, xb) = exit_time(domain, x, v).expect("center lies in the box");
                let xb = xb.expect("a foot outside the box implies a finite exit");
                out[c * nv + j] = (-rates[j] * tb).exp() * boundary(t_now + dt - tb, xb, j);
                continue;
            }
            let mut acc = 0.0;
            for corner in 0..8 {
                let mut wgt = 1.0;
                let mut node = [0i64; 3];
                for a in 0..3 {
                    let up = (corner >> (2 - a)) & 1 == 1;
                    wgt *= if up { frac[a] } else { 1.0 - frac[a] };
                    node[a] = idx[a] as i64 + shift[a] + up as i64;
                }
                if wgt == 0.0 {
                    continue;
                }
                let val = if box_mode {
                    if node.iter().all(|&i| i >= 0 && i < n as i64) {
                        data[domain.index(node[0] as usize, node[1] as usize, node[2] as usize) * nv + j]
                    } else {
                        let xf = [0, 1, 2].map(|a| foot[a].clamp(0.0, domain.side));
                        boundary(t_now, xf, j)
                    }
                } else {
                    let w = node.map(|i| i.rem_euclid(n as i64) as usize);
                    data[domain.index(w[0], w[1], w[2]) * nv + j]
                };
                acc += wgt * val;
            }
            out[c * nv + j] = decay * acc;
        }
    }
    out
}

/// Weighted transport-absorption step for h = w W f: absorption
/// q|v|²⟨v⟩^{-1} + ν and inflow w W g.
#[allow(clippy::too_many_arguments)]
pub fn advect_step(
    domain: &SpatialDomain,
    spec: &WeightSpec,
    grid: &VelocityGrid,
    nu: &[f64],
    field: &PhaseField,
    dt: f64,
    t_now: f64,
    g: &InflowData,
) -> Result<PhaseField> {
    if !(dt > 0.0) {
        return Err(Error::config("dt must be > 0"));
    }
    if field.repr != Representation::Weighted {
        return Err(Error::config("advect_step expects the weighted representation"));
    }
    let rates: Vec<f64> = grid.nodes.iter().zip(nu).map(|(&v, &n)| spec.weight_absorption(v) + n).collect();
    let boundary = |t: f64, x: [f64; 3], j: usize| {
        let v = grid.nodes[j];
        spec.velocity_weight(v) * weight_w(spec, x, v) * g.eval(t, x, v)
    };
    let data = transport_step(domain, grid, &field.data, dt, t_now, &rates, &boundary);
    Ok(PhaseField { data, ..field.clone() })
}
