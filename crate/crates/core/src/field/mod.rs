//! Deterministic field model: exemplar densities on a uniform 1D or 2D grid.

mod convolve;
mod engine;

pub use convolve::{ConvolutionMethod, Convolver, Stencil};
pub use engine::{FieldEngine, FieldRunConfig, FieldState, RhsEval, StepReport};

use crate::error::{Error, Result};
use crate::model::PhonPoint;

pub const MIN_POINTS_PER_AXIS: usize = 16;

/// Uniform rectangular grid. In 1D the second axis has a single node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    n: [usize; 2],
    h: [f64; 2],
}

impl Grid {
    pub fn new_1d(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(1, &[lo], &[hi], &[n])
    }

    pub fn new_2d(lo: [f64; 2], hi: [f64; 2], n: [usize; 2]) -> Result<Self> {
        Self::new(2, &lo, &hi, &n)
    }

    pub fn new(dim: usize, lo: &[f64], hi: &[f64], n: &[usize]) -> Result<Self> {
        if !(dim == 1 || dim == 2) || lo.len() != dim || hi.len() != dim || n.len() != dim {
            return Err(Error::InvalidParams(format!(
                "grid needs {dim} extents and point counts, got lo={lo:?} hi={hi:?} n={n:?}"
            )));
        }
        let mut g = Grid { dim, lo: [0.0; 2], hi: [0.0; 2], n: [1; 2], h: [1.0; 2] };
        for a in 0..dim {
            if !(lo[a].is_finite() && hi[a].is_finite() && hi[a] > lo[a]) {
                return Err(Error::InvalidParams(format!("grid axis {a}: need lo < hi, got [{}, {}]", lo[a], hi[a])));
            }
            if n[a] < MIN_POINTS_PER_AXIS {
                return Err(Error::InvalidParams(format!(
                    "grid axis {a}: need at least {MIN_POINTS_PER_AXIS} points, got {}",
                    n[a]
                )));
            }
            g.lo[a] = lo[a];
            g.hi[a] = hi[a];
            g.n[a] = n[a];
            g.h[a] = (hi[a] - lo[a]) / (n[a] - 1) as f64;
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Node counts per axis; `[n, 1]` in 1D.
    pub fn points(&self) -> [usize; 2] {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lo(&self, axis: usize) -> f64 {
        self.lo[axis]
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.hi[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + i as f64 * self.h[axis]
    }

    pub fn node(&self, idx: usize) -> PhonPoint {
        let (i0, i1) = (idx / self.n[1], idx % self.n[1]);
        match self.dim {
            1 => PhonPoint::new1(self.coord(0, i0)),
            _ => PhonPoint::new2(self.coord(0, i0), self.coord(1, i1)),
        }
    }

    /// Volume element of a node.
    pub fn cell_volume(&self) -> f64 {
        match self.dim {
            1 => self.h[0],
            _ => self.h[0] * self.h[1],
        }
    }

    /// Trapezoidal quadrature weights, one per node.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let axis_w = |a: usize, i: usize| {
            if self.dim <= a {
                1.0
            } else if i == 0 || i + 1 == self.n[a] {
                0.5 * self.h[a]
            } else {
                self.h[a]
            }
        };
        let mut w = Vec::with_capacity(self.len());
        for i0 in 0..self.n[0] {
            for i1 in 0..self.n[1] {
                w.push(axis_w(0, i0) * axis_w(1, i1));
            }
        }
        w
    }

    /// True when `p` lies inside the grid at least `margin` from every edge.
    pub fn covers(&self, p: &PhonPoint, margin: f64) -> bool {
        (0..self.dim).all(|a| p.get(a) - margin >= self.lo[a] && p.get(a) + margin <= self.hi[a])
    }

    /// Bilinear (linear in 1D) interpolation of nodal `values` at `p`;
    /// zero outside the grid.
    pub fn interpolate(&self, values: &[f64], p: &PhonPoint) -> f64 {
        let locate = |a: usize| -> Option<(usize, f64)> {
            let s = (p.get(a) - self.lo[a]) / self.h[a];
            let last = (self.n[a] - 1) as f64;
            if !(s >= 0.0 && s <= last) {
                return None;
            }
            let i = (s.floor() as usize).min(self.n[a] - 2);
            Some((i, s - i as f64))
        };
        match self.dim {
            1 => match locate(0) {
                Some((i, f)) => values[i] * (1.0 - f) + values[i + 1] * f,
                None => 0.0,
            },
            _ => match (locate(0), locate(1)) {
                (Some((i, f)), Some((j, g))) => {
                    let n1 = self.n[1];
                    let v00 = values[i * n1 + j];
                    let v01 = values[i * n1 + j + 1];
                    let v10 = values[(i + 1) * n1 + j];
                    let v11 = values[(i + 1) * n1 + j + 1];
                    (1.0 - f) * ((1.0 - g) * v00 + g * v01) + f * ((1.0 - g) * v10 + g * v11)
                }
                _ => 0.0,
            },
        }
    }
}

/// Nonnegative nodal density on a grid (weight per unit phonetic volume).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Contract(format!(
                "field has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Contract(format!("density values must be finite and >= 0, found {v}")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    /// Field sampled from `f` at every node; negative samples are clamped.
    pub fn from_fn(grid: Grid, f: impl Fn(&PhonPoint) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.node(i)).max(0.0)).collect();
        Self { grid, values }
    }

    /// Point mass deposited on the surrounding nodes with linear weights,
    /// so that its trapezoidal mass and mean are exact away from the edges.
    pub fn point_mass(grid: Grid, at: &PhonPoint, mass: f64) -> Result<Self> {
        at.check_dim(grid.dim())?;
        let margin = (0..grid.dim()).map(|a| grid.spacing(a)).fold(0.0, f64::max);
        if !grid.covers(at, margin) {
            return Err(Error::InvalidParams(format!("point mass at {at} lies outside the grid interior")));
        }
        let mut values = vec![0.0; grid.len()];
        let n1 = grid.points()[1];
        let split = |a: usize| {
            let s = (at.get(a) - grid.lo(a)) / grid.spacing(a);
            let i = s.floor() as usize;
            [(i, 1.0 - (s - i as f64)), (i + 1, s - i as f64)]
        };
        let density = mass / grid.cell_volume();
        match grid.dim() {
            1 => {
                for (i, w) in split(0) {
                    values[i] += density * w;
                }
            }
            _ => {
                for (i, wi) in split(0) {
                    for (j, wj) in split(1) {
                        values[i * n1 + j] += density * wi * wj;
                    }
                }
            }
        }
        Ok(Self { grid, values })
    }

    /// Isotropic Gaussian bump of standard deviation `sd`, rescaled so that
    /// its trapezoidal mass equals `mass`.
    pub fn gaussian(grid: Grid, centre: &PhonPoint, sd: f64, mass: f64) -> Result<Self> {
        centre.check_dim(grid.dim())?;
        if !(sd > 0.0) {
            return Err(Error::InvalidParams(format!("gaussian spread must be positive, got {sd}")));
        }
        let mut f = Self::from_fn(grid, |p| (-(*p - *centre).norm_sq() / (2.0 * sd * sd)).exp());
        let m = f.mass();
        if !(m > 0.0) {
            return Err(Error::InvalidParams(format!("gaussian at {centre} has no mass on the grid")));
        }
        for v in &mut f.values {
            *v *= mass / m;
        }
        Ok(f)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Trapezoidal integral.
    pub fn mass(&self) -> f64 {
        integrate(&self.grid, &self.values)
    }

    pub fn mean(&self) -> Option<PhonPoint> {
        moments(&self.grid, &self.values).map(|(_, m, _)| m)
    }

    pub fn dispersion(&self) -> Option<f64> {
        moments(&self.grid, &self.values).map(|(_, _, d)| d)
    }

    /// Nodewise sum of fields on one grid.
    pub fn sum(fields: &[DensityField]) -> Result<DensityField> {
        let first = fields.first().ok_or_else(|| Error::Contract("no fields to sum".into()))?;
        let mut values = vec![0.0; first.grid.len()];
        for f in fields {
            if f.grid != first.grid {
                return Err(Error::Contract("fields live on different grids".into()));
            }
            for (acc, v) in values.iter_mut().zip(&f.values) {
                *acc += v;
            }
        }
        Ok(DensityField { grid: first.grid, values })
    }
}

pub(crate) fn integrate(grid: &Grid, values: &[f64]) -> f64 {
    let [n0, n1] = grid.points();
    let h0 = grid.spacing(0);
    let mut total = 0.0;
    if grid.dim() == 1 {
        for (i, v) in values.iter().enumerate() {
            total += if i == 0 || i + 1 == n0 { 0.5 * v } else { *v };
        }
        return total * h0;
    }
    let h1 = grid.spacing(1);
    for i0 in 0..n0 {
        let row = &values[i0 * n1..(i0 + 1) * n1];
        let mut r = 0.0;
        for (i1, v) in row.iter().enumerate() {
            r += if i1 == 0 || i1 + 1 == n1 { 0.5 * v } else { *v };
        }
        total += if i0 == 0 || i0 + 1 == n0 { 0.5 * r } else { r };
    }
    total * h0 * h1
}

/// (mass, mean, dispersion) by trapezoidal quadrature; `None` for a field
/// without positive mass.
pub(crate) fn moments(grid: &Grid, values: &[f64]) -> Option<(f64, PhonPoint, f64)> {
    let w = grid.trapezoid_weights();
    let mut mass = 0.0;
    let mut first = PhonPoint::zero(grid.dim());
    for (i, (&v, &wi)) in values.iter().zip(&w).enumerate() {
        mass += wi * v;
        first = first + (wi * v) * grid.node(i);
    }
    if !(mass > 0.0) {
        return None;
    }
    let mean = (1.0 / mass) * first;
    let mut second = 0.0;
    for (i, (&v, &wi)) in values.iter().zip(&w).enumerate() {
        second += wi * v * (grid.node(i) - mean).norm_sq();
    }
    Some((mass, mean, (second / mass).max(0.0).sqrt()))
}
