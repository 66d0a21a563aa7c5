//! Weighted nonlinear cutoff Boltzmann solver for h = wWf:
//!   ∂_t h + v·∇ₓh + (q|v|²/⟨v⟩ + ν)h − K_{wW}h = wWΓ(h/wW, h/wW),
//! solved by Picard iteration on the Duhamel form.

use crate::collision::{CollisionKernel, CollisionOperator, GammaTensor};
use crate::domain::{advect_step, DomainMode, InflowData, SpatialDomain, WeightSpec};
use crate::error::{Error, Result};
use crate::evolution::{fit_log_slope, n_steps};
use crate::field::{weight_table, PhaseField, Representation};
use crate::velocity::{mu, VelocityGrid};
use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use serde::{Deserialize, Serialize};

/// Per-run data shared by every Picard iterate.
pub struct WeightedSystem<'a> {
    pub domain: &'a SpatialDomain,
    pub grid: &'a VelocityGrid,
    pub spec: &'a WeightSpec,
    /// wW(x_c, v_j) in field layout.
    pub ww: Vec<f64>,
    gamma: GammaTensor,
    /// (I − (dt/2)L) with L = −ν + K; ν stays in the implicit stage because
    /// splitting it from K breaks their cancellation on the invariants.
    half_l: PartialPivLu<f64>,
    zero_rates: Vec<f64>,
    pub dt: f64,
}

impl<'a> WeightedSystem<'a> {
    pub fn new(
        domain: &'a SpatialDomain,
        grid: &'a VelocityGrid,
        kernel: &CollisionKernel,
        op: &CollisionOperator,
        spec: &'a WeightSpec,
        dt: f64,
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::config("dt must be > 0"));
        }
        spec.validate(true)?;
        let n = grid.len();
        let tau = 0.5 * dt;
        let m = Mat::<f64>::from_fn(n, n, |i, j| (if i == j { 1.0 } else { 0.0 }) - tau * op.l[(i, j)]);
        Ok(Self {
            domain,
            grid,
            spec,
            ww: weight_table(domain, grid, spec),
            gamma: GammaTensor::assemble(grid, kernel)?,
            half_l: m.partial_piv_lu(),
            zero_rates: vec![0.0; n],
            dt,
        })
    }

    /// h ← D (I − τL)⁻¹ D⁻¹ h cell by cell, D = diag(wW(x_c, ·)), i.e. the
    /// implicit step of −ν + K_{wW}.
    fn half_collision_step(&self, h: &mut PhaseField) {
        for (x, w) in h.data.iter_mut().zip(&self.ww) {
            *x /= w;
        }
        self.half_l.solve_in_place(h.as_mat_mut());
        for (x, w) in h.data.iter_mut().zip(&self.ww) {
            *x *= w;
        }
    }

    /// wW·Γ(h/wW, h/wW) in every cell.
    pub fn rhs(&self, h: &PhaseField) -> PhaseField {
        let mut f = h.clone();
        for (x, w) in f.data.iter_mut().zip(&self.ww) {
            *x /= w;
        }
        let fm = f.as_mat().to_owned();
        let g = self.gamma.apply_columns(&fm, &fm);
        let mut out = h.clone();
        for c in 0..h.n_cells {
            for j in 0..h.n_v {
                out.data[c * h.n_v + j] = g[(j, c)] * self.ww[c * h.n_v + j];
            }
        }
        out
    }

    /// One linear solve with a prescribed source sequence (left endpoint).
    fn linear_solve(
        &self,
        h0: &PhaseField,
        g: &InflowData,
        steps: usize,
        source: Option<&[PhaseField]>,
    ) -> Result<Vec<PhaseField>> {
        let mut traj = Vec::with_capacity(steps + 1);
        let mut h = h0.clone();
        traj.push(h.clone());
        for k in 0..steps {
            let t = k as f64 * self.dt;
            self.half_collision_step(&mut h);
            if let Some(s) = source {
                for (x, sk) in h.data.iter_mut().zip(&s[k].data) {
                    *x += self.dt * sk;
                }
            }
            // Only the weight absorption q|v|²/⟨v⟩ remains in the transport stage.
            h = advect_step(self.domain, self.spec, self.grid, &self.zero_rates, &h, self.dt, t, g)?;
            self.half_collision_step(&mut h);
            if !h.is_finite() {
                return Err(Error::numerical(format!("non-finite weighted state at step {}", k + 1)));
            }
            traj.push(h.clone());
        }
        Ok(traj)
    }
}

/// h = wW·Γ(h/wW, h/wW) for a weighted field.
pub fn weighted_rhs(
    domain: &SpatialDomain,
    grid: &VelocityGrid,
    kernel: &CollisionKernel,
    spec: &WeightSpec,
    h: &PhaseField,
) -> Result<PhaseField> {
    if h.repr != Representation::Weighted {
        return Err(Error::config("weighted_rhs expects the weighted representation"));
    }
    let gamma = GammaTensor::assemble(grid, kernel)?;
    let ww = weight_table(domain, grid, spec);
    let mut f = h.clone();
    for (x, w) in f.data.iter_mut().zip(&ww) {
        *x /= w;
    }
    let fm = f.as_mat().to_owned();
    let g = gamma.apply_columns(&fm, &fm);
    let mut out = h.clone();
    for c in 0..h.n_cells {
        for j in 0..h.n_v {
            out.data[c * h.n_v + j] = g[(j, c)] * ww[c * h.n_v + j];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PicardOptions {
    pub dt: f64,
    pub t_end: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Smallness bound on max|h₀| and the inflow envelope.
    pub delta: f64,
    /// Decay rate of the inflow envelope.
    pub lambda0: f64,
    /// λ in the envelope norm sup_t e^{λt} max|·| used for gaps.
    pub envelope_lambda: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { dt: 0.05, t_end: 20.0, max_iters: 30, tol: 1e-10, delta: 1e-2, lambda0: 0.5, envelope_lambda: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationReport {
    pub n_iters: usize,
    /// sup_t e^{λt} max|h^n| per iterate.
    pub sup_norms: Vec<f64>,
    /// Envelope distance between consecutive iterates.
    pub gaps: Vec<f64>,
    /// gaps[n] / gaps[n−1].
    pub contraction_factors: Vec<f64>,
    pub converged: bool,
}

pub struct PicardSolution {
    pub times: Vec<f64>,
    pub trajectory: Vec<PhaseField>,
    pub report: IterationReport,
}

fn envelope(traj: &[PhaseField], times: &[f64], lambda: f64) -> f64 {
    traj.iter().zip(times).map(|(h, t)| (lambda * t).exp() * h.max_abs()).fold(0.0, f64::max)
}

fn envelope_gap(a: &[PhaseField], b: &[PhaseField], times: &[f64], lambda: f64) -> f64 {
    a.iter()
        .zip(b)
        .zip(times)
        .map(|((x, y), t)| {
            let d = x.data.iter().zip(&y.data).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
            (lambda * t).exp() * d
        })
        .fold(0.0, f64::max)
}

/// sup over incoming boundary points and the given times of e^{λ₀s}|wWg(s)|.
pub fn inflow_envelope(
    domain: &SpatialDomain,
    grid: &VelocityGrid,
    spec: &WeightSpec,
    g: &InflowData,
    lambda0: f64,
    times: &[f64],
) -> f64 {
    if g.is_zero() || domain.mode != DomainMode::InflowBox3 {
        return 0.0;
    }
    let n = domain.n_cells;
    let mut sup = 0.0f64;
    for c in 0..domain.total_cells() {
        let idx = domain.axis_indices(c);
        for a in 0..3 {
            for (on_face, sign) in [(idx[a] == 0, -1.0), (idx[a] == n - 1, 1.0)] {
                if !on_face {
                    continue;
                }
                let mut xf = domain.center(c);
                xf[a] = if sign > 0.0 { domain.side } else { 0.0 };
                for &v in &grid.nodes {
                    if sign * v[a] >= 0.0 {
                        continue;
                    }
                    let ww = spec.velocity_weight(v) * crate::domain::weight_w(spec, xf, v);
                    for &t in times {
                        sup = sup.max((lambda0 * t).exp() * (ww * g.eval(t, xf, v)).abs());
                    }
                }
            }
        }
    }
    sup
}

#[allow(clippy::too_many_arguments)]
pub fn picard_solve(
    domain: &SpatialDomain,
    grid: &VelocityGrid,
    kernel: &CollisionKernel,
    op: &CollisionOperator,
    spec: &WeightSpec,
    h0: &PhaseField,
    g: &InflowData,
    opts: &PicardOptions,
) -> Result<PicardSolution> {
    picard_solve_from(domain, grid, kernel, op, spec, h0, g, opts, None)
}

/// Picard iteration from a given starting iterate (zero when `start` is None).
#[allow(clippy::too_many_arguments)]
pub fn picard_solve_from(
    domain: &SpatialDomain,
    grid: &VelocityGrid,
    kernel: &CollisionKernel,
    op: &CollisionOperator,
    spec: &WeightSpec,
    h0: &PhaseField,
    g: &InflowData,
    opts: &PicardOptions,
    start: Option<&[PhaseField]>,
) -> Result<PicardSolution> {
    if h0.repr != Representation::Weighted {
        return Err(Error::config("picard_solve expects a weighted initial field"));
    }
    let steps = n_steps(opts.dt, opts.t_end);
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * opts.dt).collect();
    if h0.max_abs() > opts.delta {
        return Err(Error::config(format!(
            "max|h0| = {:.3e} exceeds the smallness bound delta = {:.3e}",
            h0.max_abs(),
            opts.delta
        )));
    }
    let env = inflow_envelope(domain, grid, spec, g, opts.lambda0, &times);
    if env > opts.delta {
        return Err(Error::config(format!(
            "inflow envelope {env:.3e} exceeds the smallness bound delta = {:.3e}",
            opts.delta
        )));
    }
    let sys = WeightedSystem::new(domain, grid, kernel, op, spec, opts.dt)?;
    let mut prev: Vec<PhaseField> = match start {
        Some(s) if s.len() == steps + 1 => s.to_vec(),
        Some(s) => return Err(Error::shape(steps + 1, s.len())),
        None => vec![PhaseField { data: vec![0.0; h0.data.len()], ..h0.clone() }; steps + 1],
    };
    let mut report = IterationReport {
        n_iters: 0,
        sup_norms: Vec::new(),
        gaps: Vec::new(),
        contraction_factors: Vec::new(),
        converged: false,
    };
    let mut growing = 0;
    for iter in 1..=opts.max_iters {
        let source: Vec<PhaseField> = prev[..steps].iter().map(|h| sys.rhs(h)).collect();
        let next = sys.linear_solve(h0, g, steps, Some(&source))?;
        let gap = envelope_gap(&next, &prev, &times, opts.envelope_lambda);
        report.n_iters = iter;
        report.sup_norms.push(envelope(&next, &times, opts.envelope_lambda));
        if let Some(&last) = report.gaps.last() {
            let factor = if last > 0.0 { gap / last } else { 0.0 };
            report.contraction_factors.push(factor);
            growing = if factor >= 1.0 { growing + 1 } else { 0 };
        }
        report.gaps.push(gap);
        prev = next;
        log::debug!("picard iterate {iter}: gap {gap:.3e}");
        if gap < opts.tol {
            report.converged = true;
            break;
        }
        if growing >= 3 {
            return Err(Error::numerical(format!(
                "Picard iteration diverging (factor >= 1 on three consecutive iterates); reduce delta below {:.3e}",
                opts.delta
            )));
        }
    }
    Ok(PicardSolution { times, trajectory: prev, report })
}

/// Linear weighted solution h_g (no Γ source) on the same time grid.
#[allow(clippy::too_many_arguments)]
pub fn weighted_linear_solution(
    domain: &SpatialDomain,
    grid: &VelocityGrid,
    kernel: &CollisionKernel,
    op: &CollisionOperator,
    spec: &WeightSpec,
    h0: &PhaseField,
    g: &InflowData,
    opts: &PicardOptions,
) -> Result<Vec<PhaseField>> {
    let sys = WeightedSystem::new(domain, grid, kernel, op, spec, opts.dt)?;
    sys.linear_solve(h0, g, n_steps(opts.dt, opts.t_end), None)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayReport {
    pub lambda_fit: f64,
    pub r_squared: f64,
    /// sup_t e^{λt}max|h| / (max|h₀| + inflow envelope).
    pub c: f64,
    pub data_norm: f64,
    /// Earliest time after which max|h(t)| is non-increasing.
    pub monotone_after: f64,
    pub holds: bool,
}

/// Fits λ on `window` from log max|h(t)| and measures the constant C.
pub fn linf_decay_check(times: &[f64], traj: &[PhaseField], data_norm: f64, lambda0: f64, window: (f64, f64)) -> Result<DecayReport> {
    let sup: Vec<f64> = traj.iter().map(|h| h.max_abs()).collect();
    if data_norm == 0.0 && sup.iter().all(|&s| s == 0.0) {
        return Ok(DecayReport {
            lambda_fit: 0.0,
            r_squared: 1.0,
            c: 0.0,
            data_norm,
            monotone_after: 0.0,
            holds: true,
        });
    }
    // max|h| is |amplitude|·e^{−λt}, so the slope of log(sup²) is −2λ.
    let sq: Vec<f64> = sup.iter().map(|s| s * s).collect();
    let (two_lambda, r2) = fit_log_slope(times, &sq, window)?;
    let lambda = 0.5 * two_lambda;
    let c = times.iter().zip(&sup).map(|(t, s)| (lambda * t).exp() * s).fold(0.0, f64::max) / data_norm;
    let mut monotone_after = 0.0;
    for k in (1..sup.len()).rev() {
        if sup[k] > sup[k - 1] {
            monotone_after = times[k];
            break;
        }
    }
    Ok(DecayReport {
        lambda_fit: lambda,
        r_squared: r2,
        c,
        data_norm,
        monotone_after,
        holds: lambda > 0.0 && lambda < lambda0 && c.is_finite(),
    })
}

/// min over nodes of μ + μ^{1/2}f; ok iff ≥ −tol·max μ.
pub fn positivity_check(field: &PhaseField, grid: &VelocityGrid, tol: f64) -> (f64, bool) {
    let max_mu = mu([0.0; 3]);
    let mut min = f64::INFINITY;
    for c in 0..field.n_cells {
        for (j, &v) in grid.nodes.iter().enumerate() {
            min = min.min(mu(v) + grid.mu_half[j] * field.cell(c)[j]);
        }
    }
    (min, min >= -tol * max_mu)
}

pub const DEFAULT_POSITIVITY_TOL: f64 = 1e-10;
