//! Uniform space-time grids and the fields that live on them.
//!
//! Values are stored level-major: `(level, y-node, x-node)` with the x index
//! fastest. Level 0 is `t = 0`; levels `1..=nt` are the time steps.

mod io;
mod ops;

pub use io::{read_field, read_mask, write_field, write_mask, FieldFile, FieldMeta, Support};
pub use ops::{
    advection, curl_stream, divergence, laplacian, spatial_gradient, time_derivative,
    trapezoid_weights, zero_mean_project,
};
pub(crate) use ops::{d1, lap_at, project_plane, project_plane_transpose};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub lx: f64,
    pub ly: f64,
    pub t_end: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, nt: usize, lx: f64, ly: f64, t_end: f64) -> Result<Self> {
        let g = Self {
            nx,
            ny,
            nt,
            lx,
            ly,
            t_end,
        };
        g.validate()?;
        Ok(g)
    }

    /// Unit square on `[0, 1]^2 x [0, t_end]`.
    pub fn unit_square(n: usize, nt: usize, t_end: f64) -> Result<Self> {
        Self::new(n, n, nt, 1.0, 1.0, t_end)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 5 || self.ny < 5 {
            return Err(Error::Config(format!(
                "grid.nx and grid.ny must be >= 5 (got {} x {})",
                self.nx, self.ny
            )));
        }
        if self.nt < 2 {
            return Err(Error::Config(format!("grid.nt must be >= 2 (got {})", self.nt)));
        }
        for (name, v) in [("grid.lx", self.lx), ("grid.ly", self.ly), ("grid.t_end", self.t_end)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite (got {v})")));
            }
        }
        for (name, v) in [("hx", self.hx()), ("hy", self.hy()), ("dt", self.dt())] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} is not positive and finite ({v})")));
            }
        }
        Ok(())
    }

    pub fn hx(&self) -> f64 {
        self.lx / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / (self.ny - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.nt as f64
    }

    pub fn levels(&self) -> usize {
        self.nt + 1
    }

    /// Nodes in one spatial slice.
    pub fn plane(&self) -> usize {
        self.nx * self.ny
    }

    pub fn len(&self) -> usize {
        self.levels() * self.plane()
    }

    #[inline]
    pub fn idx(&self, k: usize, j: usize, i: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.hx()
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.hy()
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    pub fn is_boundary(&self, j: usize, i: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    /// Interior nodes per level (the residual lives there).
    pub fn interior_plane(&self) -> usize {
        (self.nx - 2) * (self.ny - 2)
    }

    /// Number of residual samples: interior nodes at levels `1..=nt`.
    pub fn sample_count(&self) -> usize {
        self.nt * self.interior_plane()
    }

    #[inline]
    pub fn sample_index(&self, k: usize, j: usize, i: usize) -> usize {
        ((k - 1) * (self.ny - 2) + (j - 1)) * (self.nx - 2) + (i - 1)
    }

    /// Iterates `(k, j, i)` over interior nodes of levels `1..=nt`, in sample order.
    pub fn samples(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (1..=self.nt).flat_map(move |k| {
            (1..self.ny - 1).flat_map(move |j| (1..self.nx - 1).map(move |i| (k, j, i)))
        })
    }

    pub(crate) fn same_shape(&self, other: &GridSpec) -> Result<()> {
        if self.nx != other.nx || self.ny != other.ny || self.nt != other.nt {
            return Err(Error::Config(format!(
                "grid mismatch: {}x{}x{} vs {}x{}x{}",
                self.nx, self.ny, self.nt, other.nx, other.ny, other.nt
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Config(format!(
                "scalar field has {} values, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        ensure_finite("scalar field", &values)?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Samples `f(x, y, t)` at every node.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.levels() {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    values.push(f(grid.x(i), grid.y(j), grid.t(k)));
                }
            }
        }
        Self { grid, values }
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.grid.plane();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.plane();
        &mut self.values[k * n..(k + 1) * n]
    }

    pub fn at(&self, k: usize, j: usize, i: usize) -> f64 {
        self.values[self.grid.idx(k, j, i)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: GridSpec,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: GridSpec, u1: Vec<f64>, u2: Vec<f64>) -> Result<Self> {
        for c in [&u1, &u2] {
            if c.len() != grid.len() {
                return Err(Error::Config(format!(
                    "vector component has {} values, grid needs {}",
                    c.len(),
                    grid.len()
                )));
            }
        }
        ensure_finite("vector field u1", &u1)?;
        ensure_finite("vector field u2", &u2)?;
        Ok(Self { grid, u1, u2 })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            u1: vec![0.0; grid.len()],
            u2: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64, f64) -> [f64; 2]) -> Self {
        let mut out = Self::zeros(grid);
        for k in 0..grid.levels() {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let [a, b] = f(grid.x(i), grid.y(j), grid.t(k));
                    let n = grid.idx(k, j, i);
                    out.u1[n] = a;
                    out.u2[n] = b;
                }
            }
        }
        out
    }

    pub fn comps(&self) -> [&[f64]; 2] {
        [&self.u1, &self.u2]
    }

    pub fn slice(&self, k: usize) -> VectorSlice {
        let n = self.grid.plane();
        VectorSlice {
            nx: self.grid.nx,
            ny: self.grid.ny,
            u1: self.u1[k * n..(k + 1) * n].to_vec(),
            u2: self.u2[k * n..(k + 1) * n].to_vec(),
        }
    }

    pub fn set_slice(&mut self, k: usize, s: &VectorSlice) {
        let n = self.grid.plane();
        self.u1[k * n..(k + 1) * n].copy_from_slice(&s.u1);
        self.u2[k * n..(k + 1) * n].copy_from_slice(&s.u2);
    }

    pub fn max_abs(&self) -> f64 {
        self.u1
            .iter()
            .zip(&self.u2)
            .fold(0.0, |m, (a, b)| m.max(a.hypot(*b)))
    }

    /// `sum |u|^2` over one level.
    pub fn energy(&self, k: usize) -> f64 {
        let n = self.grid.plane();
        let a = &self.u1[k * n..(k + 1) * n];
        let b = &self.u2[k * n..(k + 1) * n];
        crate::norms::pairwise_sum(&a.iter().zip(b).map(|(x, y)| x * x + y * y).collect::<Vec<_>>())
    }
}

/// One spatial slice of a vector field, e.g. the initial velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSlice {
    pub nx: usize,
    pub ny: usize,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl VectorSlice {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            u1: vec![0.0; nx * ny],
            u2: vec![0.0; nx * ny],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.u1
            .iter()
            .zip(&self.u2)
            .fold(0.0, |m, (a, b)| m.max(a.hypot(*b)))
    }
}

/// Spatial gradient `A_ij = du_i/dx_j`, stored as `(A11, A12, A21, A22)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub grid: GridSpec,
    pub comps: [Vec<f64>; 4],
}

impl TensorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            comps: std::array::from_fn(|_| vec![0.0; grid.len()]),
        }
    }

    pub fn at(&self, n: usize) -> [f64; 4] {
        [self.comps[0][n], self.comps[1][n], self.comps[2][n], self.comps[3][n]]
    }
}
