//! Phase-space fields f(x_c, v_j), stored cell-major: entry `c * n_v + j`.
//! Read as a column-major N_v × n_cells matrix, column c is the velocity
//! profile of cell c.

use crate::domain::{SpatialDomain, WeightSpec};
use crate::error::{Error, Result};
use crate::velocity::VelocityGrid;
use faer::{MatMut, MatRef};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Representation {
    Plain,
    /// h = w W f
    Weighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    pub data: Vec<f64>,
    pub n_cells: usize,
    pub n_v: usize,
    pub repr: Representation,
}

impl PhaseField {
    pub fn zeros(domain: &SpatialDomain, grid: &VelocityGrid, repr: Representation) -> Self {
        let n_cells = domain.total_cells();
        Self { data: vec![0.0; n_cells * grid.len()], n_cells, n_v: grid.len(), repr }
    }

    pub fn from_fn(
        domain: &SpatialDomain,
        grid: &VelocityGrid,
        repr: Representation,
        mut f: impl FnMut([f64; 3], [f64; 3]) -> f64,
    ) -> Self {
        let mut out = Self::zeros(domain, grid, repr);
        for c in 0..out.n_cells {
            let x = domain.center(c);
            for (j, &v) in grid.nodes.iter().enumerate() {
                out.data[c * out.n_v + j] = f(x, v);
            }
        }
        out
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        &self.data[c * self.n_v..(c + 1) * self.n_v]
    }

    pub fn cell_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.n_v..(c + 1) * self.n_v]
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.data, self.n_v, self.n_cells)
    }

    pub fn as_mat_mut(&mut self) -> MatMut<'_, f64> {
        MatMut::from_column_major_slice_mut(&mut self.data, self.n_v, self.n_cells)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// ‖f‖² in L²_{x,v}.
    pub fn norm_sq(&self, domain: &SpatialDomain, grid: &VelocityGrid) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>() * domain.cell_volume() * grid.weight()
    }

    pub fn inner(&self, other: &PhaseField, domain: &SpatialDomain, grid: &VelocityGrid) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum::<f64>()
            * domain.cell_volume()
            * grid.weight()
    }

    /// Multiplies entry (c, j) by `factor(c, j)` and retags.
    fn rescale(&self, repr: Representation, factor: impl Fn(usize, usize) -> f64) -> Self {
        let mut out = self.clone();
        out.repr = repr;
        for c in 0..self.n_cells {
            for j in 0..self.n_v {
                out.data[c * self.n_v + j] *= factor(c, j);
            }
        }
        out
    }

    pub fn to_weighted(&self, domain: &SpatialDomain, grid: &VelocityGrid, spec: &WeightSpec) -> Result<Self> {
        if self.repr != Representation::Plain {
            return Err(Error::config("field is already weighted"));
        }
        let ww = weight_table(domain, grid, spec);
        Ok(self.rescale(Representation::Weighted, |c, j| ww[c * self.n_v + j]))
    }

    pub fn to_plain(&self, domain: &SpatialDomain, grid: &VelocityGrid, spec: &WeightSpec) -> Result<Self> {
        if self.repr != Representation::Weighted {
            return Err(Error::config("field is already plain"));
        }
        let ww = weight_table(domain, grid, spec);
        Ok(self.rescale(Representation::Plain, |c, j| 1.0 / ww[c * self.n_v + j]))
    }
}

/// w(v_j) W(x_c, v_j) in field layout.
pub fn weight_table(domain: &SpatialDomain, grid: &VelocityGrid, spec: &WeightSpec) -> Vec<f64> {
    let mut out = Vec::with_capacity(domain.total_cells() * grid.len());
    for c in 0..domain.total_cells() {
        let x = domain.center(c);
        for &v in &grid.nodes {
            out.push(spec.velocity_weight(v) * crate::domain::weight_w(spec, x, v));
        }
    }
    out
}

/// W(x_c, v_j) in field layout.
pub fn phase_weight_table(domain: &SpatialDomain, grid: &VelocityGrid, spec: &WeightSpec) -> Vec<f64> {
    let mut out = Vec::with_capacity(domain.total_cells() * grid.len());
    for c in 0..domain.total_cells() {
        let x = domain.center(c);
        for &v in &grid.nodes {
            out.push(crate::domain::weight_w(spec, x, v));
        }
    }
    out
}
