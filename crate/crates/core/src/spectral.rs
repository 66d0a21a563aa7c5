//! Full phase-space operator 𝓛 = −v·∇ₓ + L with first-order upwind
//! transport, its rightmost eigenvalues, the weighted coercivity bound c₀,
//! and the cutoff-scaling sweep.

use crate::collision::{plain_gap, CollisionKernel, CollisionOperator};
use crate::domain::{weight_w, DomainMode, SpatialDomain, WeightSpec};
use crate::error::{Error, Result};
use crate::krylov::{gmres, largest_magnitude_eigs, EigOptions, GmresOptions};
use crate::velocity::{bracket, build_grid, norm_sq, VelocityGrid};
use faer::{c64, Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Closure {
    Periodic,
    ZeroInflowUpwind,
}

/// Matrix-free 𝓛: per-velocity upwind transport plus one dense velocity
/// block replicated in every cell.
#[derive(Debug, Clone)]
pub struct FullOperator {
    pub closure: Closure,
    pub domain: SpatialDomain,
    pub nodes: Vec<[f64; 3]>,
    pub nu: Vec<f64>,
    /// Velocity block: L for 𝓛, −diag(ν) for the surrogate −Λ.
    pub block: Mat<f64>,
}

/// Upper bound on the number of phase-space unknowns.
pub const MAX_PHASE_UNKNOWNS: usize = 4_000_000;

pub fn assemble_full_operator(domain: &SpatialDomain, grid: &VelocityGrid, op: &CollisionOperator) -> Result<FullOperator> {
    let dim = domain.total_cells() * grid.len();
    if dim > MAX_PHASE_UNKNOWNS {
        return Err(Error::config(format!(
            "{dim} phase unknowns exceeds the cap {MAX_PHASE_UNKNOWNS}; shrink the grids"
        )));
    }
    if op.len() != grid.len() {
        return Err(Error::shape(grid.len(), op.len()));
    }
    let closure = match domain.mode {
        DomainMode::Torus3 => Closure::Periodic,
        DomainMode::InflowBox3 => Closure::ZeroInflowUpwind,
    };
    Ok(FullOperator { closure, domain: *domain, nodes: grid.nodes.clone(), nu: op.nu.clone(), block: op.l.clone() })
}

impl FullOperator {
    /// −Λ = −(v·∇ₓ + ν): the same transport with the velocity block −diag(ν).
    pub fn surrogate(&self) -> Self {
        let n = self.nu.len();
        let block = Mat::<f64>::from_fn(n, n, |i, j| if i == j { -self.nu[i] } else { 0.0 });
        Self { block, ..self.clone() }
    }

    pub fn n_v(&self) -> usize {
        self.nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.domain.total_cells() * self.n_v()
    }

    fn neighbor(&self, c: usize, axis: usize, step: i64) -> Option<usize> {
        let n = self.domain.n_cells as i64;
        let mut idx = self.domain.axis_indices(c).map(|i| i as i64);
        idx[axis] += step;
        if idx[axis] < 0 || idx[axis] >= n {
            match self.closure {
                Closure::ZeroInflowUpwind => return None,
                Closure::Periodic => idx[axis] = idx[axis].rem_euclid(n),
            }
        }
        Some(self.domain.index(idx[0] as usize, idx[1] as usize, idx[2] as usize))
    }

    /// y = T x for the upwind discretization of v·∇ₓ.
    pub fn transport_apply(&self, x: &[f64], y: &mut [f64]) {
        let nv = self.n_v();
        let h = self.domain.dx();
        for c in 0..self.domain.total_cells() {
            for (j, v) in self.nodes.iter().enumerate() {
                let mut acc = 0.0;
                for a in 0..3 {
                    if v[a] == 0.0 {
                        continue;
                    }
                    let step = if v[a] > 0.0 { -1 } else { 1 };
                    let up = self.neighbor(c, a, step).map_or(0.0, |u| x[u * nv + j]);
                    acc += v[a].abs() / h * (x[c * nv + j] - up);
                }
                y[c * nv + j] = acc;
            }
        }
    }

    /// y = 𝓛 x.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nv = self.n_v();
        let nc = self.domain.total_cells();
        self.transport_apply(x, y);
        let xm = MatRef::from_column_major_slice(x, nv, nc);
        let bx = &self.block * xm;
        for c in 0..nc {
            for j in 0..nv {
                y[c * nv + j] = bx[(j, c)] - y[c * nv + j];
            }
        }
    }

    /// Solves (T + diag(ν) + σ) y = r on the inflow box by an upwind sweep.
    pub fn sweep_solve(&self, sigma: f64, r: &[f64], y: &mut [f64]) {
        let nv = self.n_v();
        let n = self.domain.n_cells;
        let h = self.domain.dx();
        for (j, v) in self.nodes.iter().enumerate() {
            let diag = sigma + self.nu[j] + v.iter().map(|a| a.abs()).sum::<f64>() / h;
            let ord = |a: usize, t: usize| if v[a] < 0.0 { n - 1 - t } else { t };
            for ti in 0..n {
                for tj in 0..n {
                    for tk in 0..n {
                        let c = self.domain.index(ord(0, ti), ord(1, tj), ord(2, tk));
                        let mut acc = r[c * nv + j];
                        for a in 0..3 {
                            if v[a] == 0.0 {
                                continue;
                            }
                            let step = if v[a] > 0.0 { -1 } else { 1 };
                            if let Some(u) = self.neighbor(c, a, step) {
                                acc += v[a].abs() / h * y[u * nv + j];
                            }
                        }
                        y[c * nv + j] = acc / diag;
                    }
                }
            }
        }
    }

    pub fn dense(&self) -> Mat<f64> {
        let d = self.dim();
        let mut m = Mat::<f64>::zeros(d, d);
        let mut e = vec![0.0; d];
        let mut y = vec![0.0; d];
        for col in 0..d {
            e[col] = 1.0;
            self.apply(&e, &mut y);
            e[col] = 0.0;
            for (row, &val) in y.iter().enumerate() {
                if val != 0.0 {
                    m[(row, col)] = val;
                }
            }
        }
        m
    }

    /// ‖𝓛x − λx‖/‖x‖ for complex x.
    pub fn residual(&self, lambda: c64, x: &[c64]) -> f64 {
        let d = self.dim();
        let re: Vec<f64> = x.iter().map(|z| z.re).collect();
        let im: Vec<f64> = x.iter().map(|z| z.im).collect();
        let (mut ar, mut ai) = (vec![0.0; d], vec![0.0; d]);
        self.apply(&re, &mut ar);
        self.apply(&im, &mut ai);
        let r: f64 = (0..d).map(|i| (c64::new(ar[i], ai[i]) - lambda * x[i]).norm_sqr()).sum::<f64>();
        let xn: f64 = x.iter().map(|z| z.norm_sqr()).sum::<f64>();
        (r / xn).sqrt()
    }

    /// Scale used to decide which eigenvalues count as zero modes.
    pub fn scale(&self) -> f64 {
        let h = self.domain.dx();
        let tmax = self.nodes.iter().map(|v| v.iter().map(|a| a.abs()).sum::<f64>() / h).fold(0.0, f64::max);
        let bmax = (0..self.n_v()).map(|i| self.block[(i, i)].abs()).fold(0.0, f64::max);
        1.0 + tmax + bmax
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    Auto,
    Dense,
    ShiftInvert,
    Fourier,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Rightmost nonzero eigenvalues, descending real part.
    pub eigenvalues: Vec<Eigenvalue>,
    /// Count of eigenvalues within the zero tolerance.
    pub zero_modes: usize,
    /// max Re over the nonzero eigenvalues found.
    pub gap_abscissa: f64,
    pub c0_rayleigh: Option<f64>,
    pub method: EigenMethod,
    pub dim: usize,
    pub closure: Closure,
    pub n_cells: usize,
    pub n_v: usize,
}

/// Required accuracy of every reported eigenpair.
pub const RESIDUAL_TOL: f64 = 1e-8;

fn zero_tol(fullop: &FullOperator) -> f64 {
    1e-9 * fullop.scale()
}

fn descending_re(a: &c64, b: &c64) -> std::cmp::Ordering {
    b.re.partial_cmp(&a.re).unwrap().then(b.im.partial_cmp(&a.im).unwrap())
}

pub fn rightmost_eigenvalues(
    fullop: &FullOperator,
    k: usize,
    dense_cap: usize,
    method: EigenMethod,
) -> Result<SpectralReport> {
    if k < 1 {
        return Err(Error::config("k must be >= 1"));
    }
    let method = match method {
        EigenMethod::Auto if fullop.dim() <= dense_cap => EigenMethod::Dense,
        EigenMethod::Auto => match fullop.closure {
            Closure::Periodic => EigenMethod::Fourier,
            Closure::ZeroInflowUpwind => EigenMethod::ShiftInvert,
        },
        m => m,
    };
    let (pairs, zero_modes, gap) = match method {
        EigenMethod::Dense => dense_eigs(fullop, k)?,
        EigenMethod::Fourier => fourier_eigs(fullop, k)?,
        EigenMethod::ShiftInvert => shift_invert_eigs(fullop, k)?,
        EigenMethod::Auto => unreachable!(),
    };
    for p in &pairs {
        if !(p.residual <= RESIDUAL_TOL) {
            return Err(Error::numerical(format!(
                "eigenpair {:+.6e}{:+.6e}i has residual {:.3e}",
                p.re, p.im, p.residual
            )));
        }
    }
    Ok(SpectralReport {
        eigenvalues: pairs,
        zero_modes,
        gap_abscissa: gap,
        c0_rayleigh: None,
        method,
        dim: fullop.dim(),
        closure: fullop.closure,
        n_cells: fullop.domain.n_cells,
        n_v: fullop.n_v(),
    })
}

type EigResult = (Vec<Eigenvalue>, usize, f64);

fn dense_eigs(fullop: &FullOperator, k: usize) -> Result<EigResult> {
    let a = fullop.dense();
    let evd = a.eigen().map_err(|e| Error::numerical(format!("dense eigensolve failed: {e:?}")))?;
    let d = fullop.dim();
    let tol = zero_tol(fullop);
    let vals: Vec<c64> = (0..d).map(|i| evd.S()[i]).collect();
    let zero_modes = vals.iter().filter(|z| z.norm() <= tol).count();
    let mut idx: Vec<usize> = (0..d).filter(|&i| vals[i].norm() > tol).collect();
    idx.sort_by(|&a, &b| descending_re(&vals[a], &vals[b]));
    let gap = idx.first().map_or(f64::NEG_INFINITY, |&i| vals[i].re);
    let u = evd.U();
    let pairs = idx
        .iter()
        .take(k)
        .map(|&i| {
            let x: Vec<c64> = (0..d).map(|r| u[(r, i)]).collect();
            Eigenvalue { re: vals[i].re, im: vals[i].im, residual: fullop.residual(vals[i], &x) }
        })
        .collect();
    Ok((pairs, zero_modes, gap))
}

/// Symbol of the upwind transport on the Fourier mode e^{iθ·c}.
fn upwind_symbol(v: [f64; 3], theta: [f64; 3], h: f64) -> c64 {
    let mut s = c64::new(0.0, 0.0);
    for a in 0..3 {
        if v[a] == 0.0 {
            continue;
        }
        let sg = v[a].signum();
        s += c64::new(1.0 - (sg * theta[a]).cos(), (sg * theta[a]).sin()) * (v[a].abs() / h);
    }
    s
}

/// Exact block decomposition of the periodic operator over discrete
/// wavenumbers: 𝓛 restricted to e^{iθ·c} ⊗ ℂ^{N_v} is L − diag(symbol).
fn fourier_eigs(fullop: &FullOperator, k: usize) -> Result<EigResult> {
    if fullop.closure != Closure::Periodic {
        return Err(Error::config("Fourier decomposition needs the periodic closure"));
    }
    let n = fullop.domain.n_cells;
    let nv = fullop.n_v();
    let h = fullop.domain.dx();
    let tol = zero_tol(fullop);
    let block_of = |kk: [usize; 3]| {
        let theta = kk.map(|x| 2.0 * std::f64::consts::PI * x as f64 / n as f64);
        let sym: Vec<c64> = fullop.nodes.iter().map(|&v| upwind_symbol(v, theta, h)).collect();
        Mat::<c64>::from_fn(nv, nv, |i, j| {
            let l = c64::new(fullop.block[(i, j)], 0.0);
            if i == j {
                l - sym[i]
            } else {
                l
            }
        })
    };
    let mut all: Vec<(c64, [usize; 3])> = Vec::new();
    for k1 in 0..n {
        for k2 in 0..n {
            for k3 in 0..n {
                let kk = [k1, k2, k3];
                let conj = kk.map(|x| (n - x) % n);
                // Block −k is the complex conjugate of block k.
                if conj < kk {
                    continue;
                }
                let vals = block_of(kk)
                    .eigenvalues()
                    .map_err(|e| Error::numerical(format!("block eigensolve failed: {e:?}")))?;
                for z in vals {
                    all.push((z, kk));
                    if conj != kk {
                        all.push((z.conj(), conj));
                    }
                }
            }
        }
    }
    let zero_modes = all.iter().filter(|(z, _)| z.norm() <= tol).count();
    let mut nonzero: Vec<(c64, [usize; 3])> = all.into_iter().filter(|(z, _)| z.norm() > tol).collect();
    nonzero.sort_by(|a, b| descending_re(&a.0, &b.0));
    let gap = nonzero.first().map_or(f64::NEG_INFINITY, |p| p.0.re);
    let mut pairs = Vec::new();
    for &(lam, kk) in nonzero.iter().take(k) {
        let b = block_of(kk);
        let evd = b.eigen().map_err(|e| Error::numerical(format!("block eigensolve failed: {e:?}")))?;
        let i = (0..nv)
            .min_by(|&a, &c| (evd.S()[a] - lam).norm().partial_cmp(&(evd.S()[c] - lam).norm()).unwrap())
            .unwrap();
        let lam = evd.S()[i];
        let y: Vec<c64> = (0..nv).map(|r| evd.U()[(r, i)]).collect();
        let theta = kk.map(|x| 2.0 * std::f64::consts::PI * x as f64 / n as f64);
        let mut x = vec![c64::new(0.0, 0.0); fullop.dim()];
        for c in 0..fullop.domain.total_cells() {
            let idx = fullop.domain.axis_indices(c);
            let ph: f64 = (0..3).map(|a| theta[a] * idx[a] as f64).sum();
            let e = c64::new(ph.cos(), ph.sin());
            for j in 0..nv {
                x[c * nv + j] = e * y[j];
            }
        }
        pairs.push(Eigenvalue { re: lam.re, im: lam.im, residual: fullop.residual(lam, &x) });
    }
    Ok((pairs, zero_modes, gap))
}

/// Shift-invert (shift 0) Krylov iteration on 𝓛⁻¹ with inner GMRES,
/// right-preconditioned by the transport-plus-ν sweep.
fn shift_invert_eigs(fullop: &FullOperator, k: usize) -> Result<EigResult> {
    if fullop.closure != Closure::ZeroInflowUpwind {
        return Err(Error::config("shift-invert at 0 needs an invertible operator (inflow box)"));
    }
    let d = fullop.dim();
    let apply = |x: &[f64], y: &mut [f64]| fullop.apply(x, y);
    let precond = |r: &[f64], z: &mut [f64]| {
        fullop.sweep_solve(0.0, r, z);
        z.iter_mut().for_each(|v| *v = -*v);
    };
    let mut solve = |b: &[f64], x: &mut [f64]| -> Result<()> {
        let (sol, _) = gmres(&apply, &precond, b, GmresOptions::default())?;
        x.copy_from_slice(&sol);
        Ok(())
    };
    // A generous candidate set near 0 so the rightmost ones are among them.
    let n_want = (2 * k + 4).min(d);
    let mut residuals: Vec<(c64, f64)> = Vec::new();
    let mut accept = |theta: c64, x: &[c64]| {
        let lam = c64::new(1.0, 0.0) / theta;
        let r = fullop.residual(lam, x);
        residuals.push((lam, r));
        r <= 0.1 * RESIDUAL_TOL
    };
    let start: Vec<f64> = (0..d).map(|i| 1.0 + 0.25 * ((i as f64) * 0.618_033_988_75).fract()).collect();
    let mut last_err = None;
    for (basis, restarts) in [(3 * n_want + 10, 40), (6 * n_want + 20, 80)] {
        let opts = EigOptions { n_want, basis_size: basis, max_restarts: restarts };
        match largest_magnitude_eigs(d, &mut solve, &mut accept, &start, opts) {
            Ok(ritz) => {
                let mut vals: Vec<(c64, Vec<c64>)> = ritz
                    .into_iter()
                    .map(|p| (c64::new(1.0, 0.0) / p.value, p.vector))
                    .collect();
                vals.sort_by(|a, b| descending_re(&a.0, &b.0));
                let gap = vals.first().map_or(f64::NEG_INFINITY, |p| p.0.re);
                let pairs = vals
                    .iter()
                    .take(k)
                    .map(|(lam, x)| Eigenvalue { re: lam.re, im: lam.im, residual: fullop.residual(*lam, x) })
                    .collect();
                return Ok((pairs, 0, gap));
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap())
}

/// Weighted coercivity bound of Λ = v·∇ₓ + ν in the X inner product.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RayleighReport {
    pub c0: f64,
    /// The X-inner-product constant after the doubling loop.
    pub big_c0: f64,
    pub doublings: usize,
    /// Velocity node attaining the minimum.
    pub argmin_node: usize,
}

/// Number of random vectors used to validate the inequality chain.
pub const CHAIN_SAMPLES: usize = 1000;

/// Per-velocity upwind matrix T_j on the spatial cells.
fn transport_block(fullop: &FullOperator, j: usize) -> Mat<f64> {
    let nc = fullop.domain.total_cells();
    let h = fullop.domain.dx();
    let v = fullop.nodes[j];
    let mut t = Mat::<f64>::zeros(nc, nc);
    for c in 0..nc {
        for a in 0..3 {
            if v[a] == 0.0 {
                continue;
            }
            let s = v[a].abs() / h;
            t[(c, c)] += s;
            let step = if v[a] > 0.0 { -1 } else { 1 };
            if let Some(u) = fullop.neighbor(c, a, step) {
                t[(c, u)] -= s;
            }
        }
    }
    t
}

pub fn rayleigh_lower_bound(
    domain: &SpatialDomain,
    grid: &VelocityGrid,
    op: &CollisionOperator,
    spec: &WeightSpec,
    seed: u64,
) -> Result<RayleighReport> {
    rayleigh_lower_bound_with(domain, grid, op, spec, seed, 1.0)
}

/// As `rayleigh_lower_bound`, doubling C₀ from `big_c0_start`.
pub fn rayleigh_lower_bound_with(
    domain: &SpatialDomain,
    grid: &VelocityGrid,
    op: &CollisionOperator,
    spec: &WeightSpec,
    seed: u64,
    big_c0_start: f64,
) -> Result<RayleighReport> {
    if !(big_c0_start > 0.0) {
        return Err(Error::config("the starting C0 must be > 0"));
    }
    let fullop = assemble_full_operator(domain, grid, op)?;
    let nc = domain.total_cells();
    let nv = grid.len();
    let w2: Vec<Vec<f64>> = (0..nv)
        .map(|j| (0..nc).map(|c| weight_w(spec, domain.center(c), grid.nodes[j]).powi(2)).collect())
        .collect();
    let blocks: Vec<Mat<f64>> = (0..nv).map(|j| transport_block(&fullop, j)).collect();
    let absorb: Vec<f64> = grid.nodes.iter().map(|&v| spec.q * norm_sq(v) / bracket(v)).collect();

    // (Λf,f)_X for one velocity slice.
    let form = |j: usize, big: f64, f: &[f64]| -> f64 {
        let t = &blocks[j];
        let mut s = 0.0;
        for c in 0..nc {
            let mut tf = 0.0;
            for u in 0..nc {
                tf += t[(c, u)] * f[u];
            }
            s += (big + w2[j][c]) * (tf + op.nu[j] * f[c]) * f[c];
        }
        s
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Vec<f64>> = (0..CHAIN_SAMPLES)
        .map(|_| (0..nc * nv).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut big = big_c0_start;
    let mut doublings = 0;
    loop {
        let ok = samples.iter().all(|f| {
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for j in 0..nv {
                let fj: Vec<f64> = (0..nc).map(|c| f[c * nv + j]).collect();
                lhs += form(j, big, &fj);
                for c in 0..nc {
                    rhs += (0.5 * big * op.nu[j] + absorb[j] * w2[j][c]) * fj[c] * fj[c];
                }
            }
            lhs >= rhs
        });
        if ok {
            break;
        }
        big *= 2.0;
        doublings += 1;
        if doublings > 40 {
            return Err(Error::falsification("no C0 up to 2^40 satisfies the weighted coercivity chain"));
        }
    }
    let mut c0 = f64::INFINITY;
    let mut argmin = 0;
    for j in 0..nv {
        let t = &blocks[j];
        let dsq: Vec<f64> = (0..nc).map(|c| (big + w2[j][c]).sqrt()).collect();
        let bj = bracket(grid.nodes[j]);
        // D^{-1/2} sym(D T + ν D) D^{-1/2} / ⟨v⟩
        let m = Mat::<f64>::from_fn(nc, nc, |a, b| {
            let da = dsq[a] * dsq[a];
            let db = dsq[b] * dsq[b];
            let sym = 0.5 * (da * t[(a, b)] + db * t[(b, a)]) + if a == b { op.nu[j] * da } else { 0.0 };
            sym / (dsq[a] * dsq[b]) / bj
        });
        let ev = m
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| Error::numerical(format!("Rayleigh eigensolve failed: {e:?}")))?;
        if ev[0] < c0 {
            c0 = ev[0];
            argmin = j;
        }
    }
    if !(c0 > 0.0) {
        return Err(Error::falsification(format!(
            "weighted coercivity bound c0 = {c0:.3e} is not positive (velocity node {argmin}, v = {:?})",
            grid.nodes[argmin]
        )));
    }
    Ok(RayleighReport { c0, big_c0: big, doublings, argmin_node: argmin })
}

/// (Λf, f)_X / ‖⟨v⟩^{1/2} f‖²_X with (f, g)_X = Σ (C₀ + W²) f g; the
/// quantity whose minimum `rayleigh_lower_bound` reports.
pub fn x_rayleigh_quotient(
    domain: &SpatialDomain,
    grid: &VelocityGrid,
    op: &CollisionOperator,
    spec: &WeightSpec,
    big_c0: f64,
    f: &[f64],
) -> Result<f64> {
    let fullop = assemble_full_operator(domain, grid, op)?;
    if f.len() != fullop.dim() {
        return Err(Error::shape(fullop.dim(), f.len()));
    }
    let nv = grid.len();
    let mut tf = vec![0.0; f.len()];
    fullop.transport_apply(f, &mut tf);
    let (mut num, mut den) = (0.0, 0.0);
    for c in 0..domain.total_cells() {
        for (j, &v) in grid.nodes.iter().enumerate() {
            let i = c * nv + j;
            let x = big_c0 + weight_w(spec, domain.center(c), v).powi(2);
            num += x * (tf[i] + op.nu[j] * f[i]) * f[i];
            den += x * bracket(v) * f[i] * f[i];
        }
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub v_max_list: Vec<f64>,
    pub dv: f64,
    pub gamma: f64,
    pub b_coeff: f64,
    pub n_angle: usize,
    pub n_cells: usize,
    pub side: f64,
    pub q: f64,
    pub k: usize,
    pub dense_cap: usize,
    pub seed: u64,
    /// Labels a hard-potential control run.
    pub hard_control: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub v_max: f64,
    pub gap_l: f64,
    pub gap_torus: f64,
    pub gap_box: f64,
    pub c0_rayleigh: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
    pub torus: Vec<SpectralReport>,
    pub boxes: Vec<SpectralReport>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("v_max,gap_L,gap_torus,gap_box,c0_rayleigh\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                r.v_max, r.gap_l, r.gap_torus, r.gap_box, r.c0_rayleigh
            ));
        }
        s
    }
}

/// Velocity grid with spacing `dv` reaching `v_max`.
pub fn grid_for(v_max: f64, dv: f64) -> Result<VelocityGrid> {
    let steps = 2.0 * v_max / dv;
    let n = steps.round() as usize + 1;
    if (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::config(format!("v_max {v_max} is not a multiple of dv/2 = {}", dv / 2.0)));
    }
    build_grid(n, v_max)
}

pub fn scaling_experiment(cfg: &SweepConfig) -> Result<SweepReport> {
    let mut rows = Vec::new();
    let mut torus = Vec::new();
    let mut boxes = Vec::new();
    for &v_max in &cfg.v_max_list {
        let grid = grid_for(v_max, cfg.dv)?;
        let mut kernel = CollisionKernel::default_for(&grid);
        kernel.gamma = cfg.gamma;
        kernel.b_coeff = cfg.b_coeff;
        kernel.n_angle = cfg.n_angle;
        kernel.validate(cfg.hard_control)?;
        let op = CollisionOperator::assemble(&grid, &kernel)?;
        let gap_l = plain_gap(&op, &grid)?;
        let tdom = SpatialDomain::new(DomainMode::Torus3, cfg.n_cells, cfg.side)?;
        let bdom = SpatialDomain::new(DomainMode::InflowBox3, cfg.n_cells, cfg.side)?;
        let trep = rightmost_eigenvalues(&assemble_full_operator(&tdom, &grid, &op)?, cfg.k, cfg.dense_cap, EigenMethod::Auto)?;
        let spec = WeightSpec { q: cfg.q, rho: 1.0, beta: 0.0 };
        let ray = rayleigh_lower_bound(&bdom, &grid, &op, &spec, cfg.seed)?;
        let mut brep =
            rightmost_eigenvalues(&assemble_full_operator(&bdom, &grid, &op)?, cfg.k, cfg.dense_cap, EigenMethod::Auto)?;
        brep.c0_rayleigh = Some(ray.c0);
        rows.push(SweepRow {
            v_max,
            gap_l,
            gap_torus: -trep.gap_abscissa,
            gap_box: -brep.gap_abscissa,
            c0_rayleigh: ray.c0,
        });
        torus.push(trep);
        boxes.push(brep);
    }
    Ok(SweepReport { config: cfg.clone(), rows, torus, boxes })
}
