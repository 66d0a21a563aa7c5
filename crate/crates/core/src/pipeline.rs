//! Subcommand orchestration: each run writes its artifacts plus a
//! manifest.json recording the config, seed, hashes, timings and outcome.

use crate::cache::{load_or_assemble, CacheStatus};
use crate::collision::{coercivity_constant, minus_l_spectrum, plain_gap, CollisionOperator};
use crate::config::{InitialData, RunConfig};
use crate::domain::{DomainMode, InflowData, SpatialDomain};
use crate::error::{Error, Result};
use crate::evolution::{
    a_priori_fraction, choose_kappa, fit_decay_rate, fluid_residuals, random_field, EvolveOptions,
};
use crate::field::{PhaseField, Representation};
use crate::landau::{assemble_sigma_with, eigen_profile_csv, eigenvector_defect, landau_eigs, LandauQuadrature};
use crate::nonlinear::{inflow_envelope, linf_decay_check, picard_solve, positivity_check, PicardOptions};
use crate::spectral::{assemble_full_operator, rayleigh_lower_bound_with, rightmost_eigenvalues, scaling_experiment};
use crate::velocity::{mu_half, norm_sq, VelocityGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Assemble,
    Spectrum,
    Sweep,
    Evolve,
    Nonlinear,
    Landau,
    Selftest,
}

impl Subcommand {
    pub const ALL: [Subcommand; 7] = [
        Subcommand::Assemble,
        Subcommand::Spectrum,
        Subcommand::Sweep,
        Subcommand::Evolve,
        Subcommand::Nonlinear,
        Subcommand::Landau,
        Subcommand::Selftest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Assemble => "assemble",
            Subcommand::Spectrum => "spectrum",
            Subcommand::Sweep => "sweep",
            Subcommand::Evolve => "evolve",
            Subcommand::Nonlinear => "nonlinear",
            Subcommand::Landau => "landau",
            Subcommand::Selftest => "selftest",
        }
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config(format!("unknown subcommand '{s}'")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub subcommand: Subcommand,
    pub seed: u64,
    pub threads: usize,
    pub config: RunConfig,
    /// File name → sha256 hex of its bytes.
    pub outputs: BTreeMap<String, String>,
    pub timings_s: BTreeMap<String, f64>,
    /// "ok", "falsified", "config_error" or "numerical_error".
    pub status: String,
    pub falsifications: Vec<String>,
    pub error: Option<String>,
    pub cache: Option<String>,
}

struct Run {
    dir: PathBuf,
    manifest: Manifest,
    clock: Instant,
}

impl Run {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.manifest.outputs.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<()> {
        let s = serde_json::to_string_pretty(value).map_err(|e| Error::numerical(e.to_string()))?;
        self.write(name, s.as_bytes())
    }

    fn lap(&mut self, stage: &str) {
        let t = self.clock.elapsed().as_secs_f64();
        self.manifest.timings_s.insert(stage.to_string(), t);
        self.clock = Instant::now();
    }

    fn falsify(&mut self, msg: String) {
        log::warn!("falsification: {msg}");
        self.manifest.falsifications.push(msg);
    }

    fn operator(&mut self, grid: &VelocityGrid, cfg: &RunConfig, use_cache: bool) -> Result<CollisionOperator> {
        let kernel = cfg.kernel(grid)?;
        let cache_dir = use_cache.then(|| self.dir.join("cache"));
        let (op, status) = load_or_assemble(cache_dir.as_deref(), grid, &kernel)?;
        self.manifest.cache = Some(
            match status {
                CacheStatus::Hit => "hit",
                CacheStatus::Miss => "miss",
                CacheStatus::Bypassed => "bypassed",
            }
            .into(),
        );
        self.lap("operator");
        Ok(op)
    }
}

/// Runs one subcommand, always leaving `manifest.json` in `out_dir`.
/// Falsification events are returned as `Error::Falsification` after all
/// artifacts are written.
pub fn run_subcommand(
    cmd: Subcommand,
    cfg: &RunConfig,
    out_dir: &Path,
    use_cache: bool,
    threads: usize,
) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir)?;
    if threads > 1 {
        log::warn!("running single-threaded; --threads {threads} is recorded but not used");
    }
    let mut run = Run {
        dir: out_dir.to_path_buf(),
        manifest: Manifest {
            subcommand: cmd,
            seed: cfg.seed,
            threads,
            config: cfg.clone(),
            outputs: BTreeMap::new(),
            timings_s: BTreeMap::new(),
            status: "ok".into(),
            falsifications: Vec::new(),
            error: None,
            cache: None,
        },
        clock: Instant::now(),
    };
    let result = cfg.validate(cmd == Subcommand::Nonlinear).and_then(|_| match cmd {
        Subcommand::Assemble => assemble(&mut run, cfg, use_cache),
        Subcommand::Spectrum => spectrum(&mut run, cfg, use_cache),
        Subcommand::Sweep => sweep(&mut run, cfg),
        Subcommand::Evolve => evolve(&mut run, cfg, use_cache),
        Subcommand::Nonlinear => nonlinear(&mut run, cfg, use_cache),
        Subcommand::Landau => landau(&mut run, cfg),
        Subcommand::Selftest => selftest(&mut run, cfg),
    });
    let outcome = match result {
        Err(e) => {
            run.manifest.status = match e {
                Error::Numerical(_) => "numerical_error",
                Error::Falsification(_) => "falsified",
                _ => "config_error",
            }
            .into();
            run.manifest.error = Some(e.to_string());
            Err(e)
        }
        Ok(()) if !run.manifest.falsifications.is_empty() => {
            run.manifest.status = "falsified".into();
            Err(Error::falsification(run.manifest.falsifications.join("; ")))
        }
        Ok(()) => Ok(()),
    };
    let text = serde_json::to_string_pretty(&run.manifest).map_err(|e| Error::numerical(e.to_string()))?;
    std::fs::write(out_dir.join("manifest.json"), text)?;
    outcome.map(|_| run.manifest)
}

fn assemble(run: &mut Run, cfg: &RunConfig, use_cache: bool) -> Result<()> {
    let grid = cfg.grid()?;
    let op = run.operator(&grid, cfg, use_cache)?;
    let n = op.len();
    let mut asym = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((op.l[(i, j)] - op.l[(j, i)]).abs());
            scale = scale.max(op.l[(i, j)].abs());
        }
    }
    let spec = minus_l_spectrum(&op)?;
    let tol = 1e-9 * spec.last().copied().unwrap_or(1.0).abs().max(1.0);
    let zero_modes = spec.iter().filter(|s| s.abs() <= tol).count();
    let most_negative = spec.first().copied().unwrap_or(0.0);
    let c1 = coercivity_constant(&op, &grid)?;
    let gap = plain_gap(&op, &grid)?;
    run.lap("diagnostics");
    if asym > 1e-12 * scale {
        run.falsify(format!("L is not symmetric: max asymmetry {asym:.3e}"));
    }
    if most_negative < -tol {
        run.falsify(format!("L is not negative semidefinite: -L has eigenvalue {most_negative:.3e}"));
    }
    if zero_modes != 5 {
        run.falsify(format!("L has {zero_modes} zero modes, expected 5"));
    }
    if !(c1 > 0.0) {
        run.falsify(format!("coercivity constant c1 = {c1:.3e} is not positive"));
    }
    run.write_json(
        "operator.json",
        &json!({
            "n_v": n,
            "dv": grid.dv,
            "v_max": grid.v_max,
            "nu": op.nu,
            "asymmetry": asym,
            "zero_modes": zero_modes,
            "c1": c1,
            "plain_gap": gap,
            "minus_l_spectrum": spec,
        }),
    )
}

fn spectrum(run: &mut Run, cfg: &RunConfig, use_cache: bool) -> Result<()> {
    let grid = cfg.grid()?;
    let domain = cfg.domain()?;
    let op = run.operator(&grid, cfg, use_cache)?;
    let fullop = assemble_full_operator(&domain, &grid, &op)?;
    let mut report = rightmost_eigenvalues(&fullop, cfg.spectral.k, cfg.spectral.dense_cap, cfg.spectral.method)?;
    run.lap("eigenvalues");
    if domain.mode == DomainMode::InflowBox3 {
        let r = rayleigh_lower_bound_with(&domain, &grid, &op, &cfg.weight_spec(), cfg.seed, cfg.weight.c0_start)?;
        report.c0_rayleigh = Some(r.c0);
        run.lap("rayleigh");
        if !(report.gap_abscissa < 0.0) {
            run.falsify(format!("box spectral abscissa {:.3e} is not negative", report.gap_abscissa));
        }
    }
    let mut csv = String::from("re,im,residual\n");
    for e in &report.eigenvalues {
        csv.push_str(&format!("{:.15e},{:.15e},{:.3e}\n", e.re, e.im, e.residual));
    }
    run.write("eigenvalues.csv", csv.as_bytes())?;
    run.write_json("spectrum.json", &serde_json::to_value(&report).map_err(|e| Error::numerical(e.to_string()))?)
}

fn sweep(run: &mut Run, cfg: &RunConfig) -> Result<()> {
    let report = scaling_experiment(&cfg.sweep())?;
    run.lap("sweep");
    run.write("sweep.csv", report.to_csv().as_bytes())?;
    run.write_json("sweep.json", &serde_json::to_value(&report).map_err(|e| Error::numerical(e.to_string()))?)
}

fn initial_field(cfg: &RunConfig, domain: &SpatialDomain, grid: &VelocityGrid, rng: &mut ChaCha8Rng) -> PhaseField {
    match cfg.time.initial {
        InitialData::Equilibrium => PhaseField::from_fn(domain, grid, Representation::Plain, |_, v| mu_half(v)),
        InitialData::Random { macro_share } => random_field(domain, grid, rng, macro_share),
    }
}

fn evolve(run: &mut Run, cfg: &RunConfig, use_cache: bool) -> Result<()> {
    let grid = cfg.grid()?;
    let domain = cfg.domain()?;
    let spec = cfg.weight_spec();
    let op = run.operator(&grid, cfg, use_cache)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let kappa = if domain.mode == DomainMode::InflowBox3 {
        choose_kappa(&domain, &grid, &spec, cfg.weight.kappa, 20, &mut rng)?.kappa
    } else {
        cfg.weight.kappa
    };
    let f0 = initial_field(cfg, &domain, &grid, &mut rng);
    let g = cfg.inflow();
    let mut opts = EvolveOptions::new(cfg.time.dt, cfg.time.t_end);
    opts.kappa = kappa;
    opts.scheme = cfg.time.collision_scheme;
    opts.snapshot_every = cfg.time.snapshot_every;
    opts.max_snapshots = cfg.time.max_snapshots;
    let out = crate::evolution::evolve_linear(&domain, &grid, &op, &spec, &f0, &g, &opts)?;
    run.lap("evolve");
    let t_end = out.trace.times.last().copied().unwrap_or(0.0);
    let window = ((1.0 - cfg.time.fit_fraction) * t_end, t_end);
    let fit = fit_decay_rate(&out.trace, window).ok();
    let fraction = fit.map(|(lambda, _)| a_priori_fraction(&out.trace, lambda));
    let increases = out.trace.e_total.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-12)).count();
    if domain.mode == DomainMode::InflowBox3 && g.is_zero() && increases > 0 {
        run.falsify(format!("energy increased on {increases} steps with zero inflow"));
    }
    let fluid = match (cfg.time.snapshot_every, out.snapshots.len()) {
        (Some(every), n) if n >= 3 => {
            let fields: Vec<PhaseField> = out.snapshots.iter().map(|(_, f)| f.clone()).collect();
            Some(fluid_residuals(&fields, every as f64 * cfg.time.dt, &domain, &grid, &op)?)
        }
        _ => None,
    };
    run.write("energy_trace.csv", out.trace.to_csv().as_bytes())?;
    if !out.snapshots.is_empty() {
        let mut bytes = Vec::with_capacity(out.snapshots.len() * (1 + f0.data.len()) * 8);
        for (t, f) in &out.snapshots {
            bytes.extend_from_slice(&t.to_le_bytes());
            for x in &f.data {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        run.write("snapshots.bin", &bytes)?;
        run.write_json(
            "snapshots.json",
            &json!({
                "count": out.snapshots.len(),
                "n_cells": f0.n_cells,
                "n_v": f0.n_v,
                "record": "f64 time, then n_cells*n_v f64 values, cell-major, little endian",
                "nodes": grid.nodes,
            }),
        )?;
    }
    run.write_json(
        "evolve.json",
        &json!({
            "kappa": kappa,
            "steps": out.trace.len().saturating_sub(1),
            "fit_window": [window.0, window.1],
            "lambda": fit.map(|f| f.0),
            "r_squared": fit.map(|f| f.1),
            "a_priori_fraction": fraction,
            "energy_increases": increases,
            "fluid_residual": fluid,
            "final_l2": out.trace.l2_norm_sq.last(),
        }),
    )
}

/// Smooth weighted datum amplitude·e^{−|v|²/2}·sin(πx₁)·(1 + v₂/(2(1+|v|²))).
pub fn nonlinear_initial(domain: &SpatialDomain, grid: &VelocityGrid, amplitude: f64) -> PhaseField {
    PhaseField::from_fn(domain, grid, Representation::Weighted, |x, v| {
        amplitude * (-0.5 * norm_sq(v)).exp() * (std::f64::consts::PI * x[0]).sin() * (1.0 + 0.5 * v[1] / (1.0 + norm_sq(v)))
    })
}

fn nonlinear(run: &mut Run, cfg: &RunConfig, use_cache: bool) -> Result<()> {
    let nl = &cfg.nonlinear;
    let grid = cfg.nonlinear_grid()?;
    let domain = cfg.domain()?;
    let spec = cfg.weight_spec();
    let kernel = cfg.kernel(&grid)?;
    let op = run.operator(&grid, cfg, use_cache)?;
    let opts = PicardOptions {
        dt: nl.dt,
        t_end: nl.t_end,
        max_iters: nl.max_iters,
        tol: nl.tol_picard,
        delta: nl.delta,
        lambda0: nl.lambda0,
        envelope_lambda: 0.0,
    };
    let mut h0 = nonlinear_initial(&domain, &grid, 1.0);
    let peak = h0.max_abs();
    h0.data.iter_mut().for_each(|x| *x *= nl.initial_fraction * nl.delta / peak);
    let steps = crate::evolution::n_steps(nl.dt, nl.t_end);
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * nl.dt).collect();
    let g = if domain.mode == DomainMode::InflowBox3 {
        let unit = InflowData::GaussianEnvelope { amplitude: 1.0, decay: nl.lambda0 };
        let env1 = inflow_envelope(&domain, &grid, &spec, &unit, nl.lambda0, &times);
        InflowData::GaussianEnvelope { amplitude: nl.inflow_fraction * nl.delta / env1, decay: nl.lambda0 }
    } else {
        InflowData::Zero
    };
    let sol = picard_solve(&domain, &grid, &kernel, &op, &spec, &h0, &g, &opts)?;
    run.lap("picard");
    let data = h0.max_abs() + inflow_envelope(&domain, &grid, &spec, &g, nl.lambda0, &sol.times);
    let window = (0.5 * nl.t_end, nl.t_end);
    let decay = linf_decay_check(&sol.times, &sol.trajectory, data, nl.lambda0, window)?;
    let mut min_pos = f64::INFINITY;
    let mut positive = true;
    for h in &sol.trajectory {
        let f = h.to_plain(&domain, &grid, &spec)?;
        let (m, ok) = positivity_check(&f, &grid, nl.positivity_tol);
        min_pos = min_pos.min(m);
        positive &= ok;
    }
    run.lap("diagnostics");
    if !sol.report.converged {
        run.falsify(format!("Picard iteration did not converge in {} iterates", sol.report.n_iters));
    }
    if !decay.holds {
        run.falsify(format!("fitted rate {:.4} is outside (0, {})", decay.lambda_fit, nl.lambda0));
    }
    if !positive {
        run.falsify(format!("positivity violated: min of mu + mu^(1/2) f is {min_pos:.3e}"));
    }
    run.write_json("iteration_report.json", &serde_json::to_value(&sol.report).map_err(|e| Error::numerical(e.to_string()))?)?;
    let mut csv = String::from("t,sup_h\n");
    for (t, h) in sol.times.iter().zip(&sol.trajectory) {
        csv.push_str(&format!("{t:.6},{:.12e}\n", h.max_abs()));
    }
    run.write("decay_envelope.csv", csv.as_bytes())?;
    run.write_json(
        "nonlinear.json",
        &json!({
            "decay": decay,
            "min_positivity": min_pos,
            "positive": positive,
            "data_norm": data,
            "n_v": grid.len(),
        }),
    )
}

fn landau(run: &mut Run, cfg: &RunConfig) -> Result<()> {
    let grid = cfg.grid()?;
    let coeffs = assemble_sigma_with(&grid, cfg.landau.gamma_l, 0.5 * grid.dv, &LandauQuadrature::default())?;
    run.lap("sigma");
    let mut defect = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for p in 0..grid.len() {
        defect = defect.max(eigenvector_defect(&coeffs, &grid, p)?);
        let (l1, l2) = landau_eigs(&coeffs, &grid, p)?;
        min_eig = min_eig.min(l1.min(l2));
    }
    if !(min_eig > 0.0) {
        run.falsify(format!("sigma is not positive definite: smallest eigenvalue {min_eig:.3e}"));
    }
    run.write("landau_eigs.csv", eigen_profile_csv(&coeffs, &grid)?.as_bytes())?;
    run.write_json(
        "landau.json",
        &json!({
            "gamma_l": coeffs.gamma_l,
            "epsilon_reg": coeffs.epsilon_reg,
            "max_eigenvector_defect": defect,
            "min_eigenvalue": min_eig,
        }),
    )
}

/// Cheap consistency checks on a small grid.
fn selftest(run: &mut Run, cfg: &RunConfig) -> Result<()> {
    let grid = crate::velocity::build_grid(3, 2.0)?;
    let kernel = crate::collision::CollisionKernel::default_for(&grid);
    let op = CollisionOperator::assemble(&grid, &kernel)?;
    let invariant_residual = crate::velocity::invariant_moments(&grid, &grid.mu_half)
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != 0 && i != 4)
        .fold(0.0f64, |m, (_, x)| m.max(x.abs()));
    let l_mu = op.apply_l(&grid.mu_half);
    let l_mu_max = l_mu.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let c1 = coercivity_constant(&op, &grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let domain = SpatialDomain::new(DomainMode::InflowBox3, 2, 1.0)?;
    let f = random_field(&domain, &grid, &mut rng, 0.5);
    let spec = cfg.weight_spec();
    let back = f.to_weighted(&domain, &grid, &spec)?.to_plain(&domain, &grid, &spec)?;
    let round_trip = f.data.iter().zip(&back.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let unit = crate::velocity::build_grid(3, 1.0)?;
    let grid_arithmetic = unit.len() == 27 && unit.dv == 1.0 && unit.nodes.contains(&[0.0; 3]);
    let zero_integral = crate::velocity::integrate(&grid, &vec![0.0; grid.len()])? == 0.0;
    let (m, _) = crate::velocity::project_p(&grid, &grid.mu_half)?;
    let basis_coefficients = (m.a - 1.0).abs() < 1e-12 && m.c.abs() < 1e-12 && m.b.iter().all(|b| b.abs() < 1e-12);
    let shear: Vec<f64> = grid.nodes.iter().zip(&grid.mu_half).map(|(v, m)| v[0] * v[1] * m).collect();
    let (m, _) = crate::velocity::project_p(&grid, &shear)?;
    let shear_orthogonal = m.as_array().iter().all(|x| x.abs() < 1e-12);
    let shear_dissipates = -grid.dot(&shear, &op.apply_l(&shear)) > 0.0;
    let g1: Vec<f64> = (0..grid.len()).map(|j| grid.mu_half[j] * (1.0 + 0.5 * grid.nodes[j][0])).collect();
    let doubled: Vec<f64> = g1.iter().map(|x| 2.0 * x).collect();
    let gamma = crate::collision::gamma_bilinear(&grid, &kernel, &g1, &shear)?;
    let gamma2 = crate::collision::gamma_bilinear(&grid, &kernel, &doubled, &shear)?;
    let scale = gamma.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let bilinear = gamma.iter().zip(&gamma2).all(|(a, b)| (b - 2.0 * a).abs() <= 1e-12 * scale);
    let checks = [
        ("grid_arithmetic", grid_arithmetic),
        ("zero_integral", zero_integral),
        ("mu_half_coefficients", basis_coefficients),
        ("shear_orthogonal_to_invariants", shear_orthogonal),
        ("shear_dissipates", shear_dissipates),
        ("gamma_bilinear", bilinear),
        ("odd_moments_of_mu_half", invariant_residual < 1e-12),
        ("l_annihilates_mu_half", l_mu_max < 1e-10),
        ("c1_positive", c1 > 0.0),
        ("weight_round_trip", round_trip < 1e-12),
    ];
    for (name, ok) in checks {
        if !ok {
            run.falsify(format!("selftest check {name} failed"));
        }
    }
    run.lap("selftest");
    run.write_json(
        "selftest.json",
        &json!({
            "checks": checks.iter().map(|(n, ok)| json!({"name": n, "pass": ok})).collect::<Vec<_>>(),
            "c1": c1,
            "l_mu_half": l_mu_max,
            "round_trip": round_trip,
        }),
    )
}
