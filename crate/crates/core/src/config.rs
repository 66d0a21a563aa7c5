//! Run configuration (TOML). Every constant the experiments leave open lives
//! here with its default.

use crate::collision::CollisionKernel;
use crate::domain::{DomainMode, InflowData, SpatialDomain, WeightSpec};
use crate::error::{Error, Result};
use crate::evolution::CollisionScheme;
use crate::spectral::{EigenMethod, SweepConfig};
use crate::velocity::{build_grid, VelocityGrid};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_per_axis: usize,
    pub v_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_per_axis: 9, v_max: 6.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub gamma: f64,
    pub b_coeff: f64,
    pub n_angle: usize,
    /// None: half the velocity spacing.
    pub epsilon_reg: Option<f64>,
    /// Admits γ ∈ (0, 1] for the labeled hard-potential control.
    pub hard_control: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { gamma: -1.0, b_coeff: 1.0, n_angle: 8, epsilon_reg: None, hard_control: false }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Torus,
    InflowBox,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub mode: DomainKind,
    pub n_cells: usize,
    pub side: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { mode: DomainKind::InflowBox, n_cells: 4, side: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    pub q: f64,
    pub rho: f64,
    pub beta: f64,
    /// Starting κ; halved until the energy equivalence holds.
    pub kappa: f64,
    /// Starting C₀ of the coercivity doubling loop.
    pub c0_start: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self { q: 1.0, rho: 1.0, beta: 1.5, kappa: 0.05, c0_start: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InflowConfig {
    Zero,
    /// amplitude·e^{−decay·t}·μ^{1/2}(v)
    GaussianEnvelope { amplitude: f64, decay: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum InitialData {
    /// Global equilibrium μ^{1/2}.
    Equilibrium,
    /// Seeded random field with the given macroscopic share.
    Random { macro_share: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_end: f64,
    pub collision_scheme: CollisionScheme,
    /// Fraction of [0, t_end] at the end used for the decay fit.
    pub fit_fraction: f64,
    pub snapshot_every: Option<usize>,
    pub max_snapshots: usize,
    pub initial: InitialData,
    pub inflow: InflowConfig,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            t_end: 20.0,
            collision_scheme: CollisionScheme::BackwardEuler,
            fit_fraction: 0.15,
            snapshot_every: None,
            max_snapshots: 200,
            initial: InitialData::Random { macro_share: 0.2 },
            inflow: InflowConfig::Zero,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub k: usize,
    pub dense_cap: usize,
    pub method: EigenMethod,
    pub sweep_v_max: Vec<f64>,
    pub sweep_dv: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { k: 4, dense_cap: 6000, method: EigenMethod::Auto, sweep_v_max: vec![4.0, 6.0, 8.0], sweep_dv: 2.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearConfig {
    /// The dense Γ tensor limits this grid to a few hundred nodes.
    pub n_per_axis: usize,
    pub v_max: f64,
    pub delta: f64,
    pub lambda0: f64,
    pub tol_picard: f64,
    pub max_iters: usize,
    pub dt: f64,
    pub t_end: f64,
    pub positivity_tol: f64,
    /// Inflow envelope e^{−λ₀t}μ^{1/2} scaled to this fraction of δ.
    pub inflow_fraction: f64,
    /// max|h₀| as a fraction of δ.
    pub initial_fraction: f64,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self {
            n_per_axis: 5,
            v_max: 4.0,
            delta: 1e-2,
            lambda0: 0.5,
            tol_picard: 1e-10,
            max_iters: 30,
            dt: 0.05,
            t_end: 20.0,
            positivity_tol: 1e-10,
            inflow_fraction: 0.99,
            initial_fraction: 0.99,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LandauConfig {
    pub gamma_l: f64,
}

impl Default for LandauConfig {
    fn default() -> Self {
        Self { gamma_l: -3.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    /// Reuse assembled operators from `<dir>/cache`.
    pub cache: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into(), cache: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub kernel: KernelConfig,
    pub domain: DomainConfig,
    pub weight: WeightConfig,
    pub time: TimeConfig,
    pub spectral: SpectralConfig,
    pub nonlinear: NonlinearConfig,
    pub landau: LandauConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            grid: GridConfig::default(),
            kernel: KernelConfig::default(),
            domain: DomainConfig::default(),
            weight: WeightConfig::default(),
            time: TimeConfig::default(),
            spectral: SpectralConfig::default(),
            nonlinear: NonlinearConfig::default(),
            landau: LandauConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::config(format!("config parse error: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every section; `nonlinear` adds the β > 1 requirement.
    pub fn validate(&self, nonlinear: bool) -> Result<()> {
        self.grid()?;
        self.kernel(&self.grid()?)?;
        self.domain()?;
        self.weight_spec().validate(nonlinear)?;
        let t = &self.time;
        if !(t.dt > 0.0) || !(t.t_end > 0.0) {
            return Err(Error::config("time.dt and time.t_end must be > 0"));
        }
        if !(t.fit_fraction > 0.0 && t.fit_fraction <= 1.0) {
            return Err(Error::config("time.fit_fraction must lie in (0, 1]"));
        }
        if t.snapshot_every == Some(0) {
            return Err(Error::config("time.snapshot_every must be >= 1"));
        }
        if let InitialData::Random { macro_share } = t.initial {
            if !(0.0..=1.0).contains(&macro_share) {
                return Err(Error::config("time.initial.macro_share must lie in [0, 1]"));
            }
        }
        if !(self.weight.kappa > 0.0) {
            return Err(Error::config("weight.kappa must be > 0"));
        }
        let s = &self.spectral;
        if s.k == 0 {
            return Err(Error::config("spectral.k must be >= 1"));
        }
        if s.sweep_v_max.is_empty() || !(s.sweep_dv > 0.0) {
            return Err(Error::config("spectral sweep needs v_max values and dv > 0"));
        }
        let n = &self.nonlinear;
        if !(n.delta > 0.0 && n.lambda0 > 0.0 && n.tol_picard > 0.0 && n.dt > 0.0 && n.t_end > 0.0) {
            return Err(Error::config("nonlinear delta, lambda0, tol_picard, dt and t_end must be > 0"));
        }
        if !(0.0..1.0).contains(&n.inflow_fraction) || !(0.0..1.0).contains(&n.initial_fraction) {
            return Err(Error::config("nonlinear inflow_fraction and initial_fraction must lie in [0, 1)"));
        }
        if n.max_iters == 0 {
            return Err(Error::config("nonlinear.max_iters must be >= 1"));
        }
        if !(-3.0..-2.0).contains(&self.landau.gamma_l) {
            return Err(Error::config("landau.gamma_l must lie in [-3, -2)"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<VelocityGrid> {
        build_grid(self.grid.n_per_axis, self.grid.v_max)
    }

    pub fn nonlinear_grid(&self) -> Result<VelocityGrid> {
        build_grid(self.nonlinear.n_per_axis, self.nonlinear.v_max)
    }

    pub fn kernel(&self, grid: &VelocityGrid) -> Result<CollisionKernel> {
        let k = &self.kernel;
        let kernel = CollisionKernel {
            gamma: k.gamma,
            b_coeff: k.b_coeff,
            n_angle: k.n_angle,
            epsilon_reg: k.epsilon_reg.unwrap_or(0.5 * grid.dv),
        };
        kernel.validate(k.hard_control)?;
        Ok(kernel)
    }

    pub fn domain(&self) -> Result<SpatialDomain> {
        let mode = match self.domain.mode {
            DomainKind::Torus => DomainMode::Torus3,
            DomainKind::InflowBox => DomainMode::InflowBox3,
        };
        SpatialDomain::new(mode, self.domain.n_cells, self.domain.side)
    }

    pub fn weight_spec(&self) -> WeightSpec {
        WeightSpec { q: self.weight.q, rho: self.weight.rho, beta: self.weight.beta }
    }

    pub fn inflow(&self) -> InflowData {
        match self.time.inflow {
            InflowConfig::Zero => InflowData::Zero,
            InflowConfig::GaussianEnvelope { amplitude, decay } => InflowData::GaussianEnvelope { amplitude, decay },
        }
    }

    pub fn sweep(&self) -> SweepConfig {
        SweepConfig {
            v_max_list: self.spectral.sweep_v_max.clone(),
            dv: self.spectral.sweep_dv,
            gamma: self.kernel.gamma,
            b_coeff: self.kernel.b_coeff,
            n_angle: self.kernel.n_angle,
            n_cells: self.domain.n_cells,
            side: self.domain.side,
            q: self.weight.q,
            k: self.spectral.k,
            dense_cap: self.spectral.dense_cap,
            seed: self.seed,
            hard_control: self.kernel.hard_control,
        }
    }
}
