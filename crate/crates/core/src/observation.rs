//! Observation operators `Q`, data `q` and the misfit `K = Q - q`.
//!
//! Built-in operators depend on the velocity `eta` and its spatial gradient
//! `A` only. The time-derivative and pressure slots exist in
//! [`ObservationKind::evaluate`] but are ignored, so `|K|^2` is trivially
//! convex in them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::grid::{spatial_gradient, GridSpec, TensorField, VectorField};
use crate::norms::WeightedSamples;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationKind {
    MaskedVelocity,
    Vorticity,
    SpeedSquared,
}

impl ObservationKind {
    /// Dimension `N` of the observation space.
    pub fn output_dim(self) -> usize {
        match self {
            Self::MaskedVelocity => 2,
            Self::Vorticity | Self::SpeedSquared => 1,
        }
    }

    pub fn depends_on_time_derivative_or_pressure(self) -> bool {
        false
    }

    /// `Q(eta, A, a, r)`; the `a = du/dt` and `r = pressure` slots are unused.
    pub fn evaluate(self, eta: [f64; 2], a: [f64; 4], _dt_u: [f64; 2], _pressure: f64) -> [f64; 2] {
        match self {
            Self::MaskedVelocity => eta,
            Self::Vorticity => [a[2] - a[1], 0.0],
            Self::SpeedSquared => [eta[0] * eta[0] + eta[1] * eta[1], 0.0],
        }
    }

    /// `dQ/deta` as `N x 2`, row-major.
    pub fn d_eta(self, eta: [f64; 2]) -> [[f64; 2]; 2] {
        match self {
            Self::MaskedVelocity => [[1.0, 0.0], [0.0, 1.0]],
            Self::Vorticity => [[0.0; 2]; 2],
            Self::SpeedSquared => [[2.0 * eta[0], 2.0 * eta[1]], [0.0; 2]],
        }
    }

    /// `dQ/dA` as `N x 4` in `(A11, A12, A21, A22)` order.
    pub fn d_a(self) -> [[f64; 4]; 2] {
        match self {
            Self::Vorticity => [[0.0, -1.0, 1.0, 0.0], [0.0; 4]],
            _ => [[0.0; 4]; 2],
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "masked-velocity" => Ok(Self::MaskedVelocity),
            "vorticity" => Ok(Self::Vorticity),
            "speed-squared" => Ok(Self::SpeedSquared),
            other => Err(Error::Config(format!("observation.kind: unknown kind {other:?}"))),
        }
    }
}

/// Every `stride`-th node in each direction.
pub fn default_mask(nx: usize, ny: usize, stride: usize) -> Vec<bool> {
    let stride = stride.max(1);
    (0..ny)
        .flat_map(|j| (0..nx).map(move |i| i % stride == 0 && j % stride == 0))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub kind: ObservationKind,
    pub grid: GridSpec,
    /// One flag per spatial node; only used by the masked kind.
    pub mask: Vec<bool>,
    /// `N` values per residual sample, interleaved.
    pub data_q: Vec<f64>,
}

impl ObservationModel {
    pub fn new(kind: ObservationKind, grid: GridSpec, mask: Vec<bool>, data_q: Vec<f64>) -> Result<Self> {
        let m = Self {
            kind,
            grid,
            mask,
            data_q,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask.len() != self.grid.plane() {
            return Err(Error::Config(format!(
                "mask has {} entries, grid plane has {}",
                self.mask.len(),
                self.grid.plane()
            )));
        }
        if self.kind == ObservationKind::MaskedVelocity {
            let any = (1..self.grid.ny - 1)
                .any(|j| (1..self.grid.nx - 1).any(|i| self.mask[j * self.grid.nx + i]));
            if !any {
                return Err(Error::Config("observation.mask has no interior node".into()));
            }
        }
        let n = self.kind.output_dim() * self.grid.sample_count();
        if self.data_q.len() != n {
            return Err(Error::Config(format!(
                "observation data has {} values, expected {n}",
                self.data_q.len()
            )));
        }
        ensure_finite("observation data", &self.data_q)
    }

    pub fn output_dim(&self) -> usize {
        self.kind.output_dim()
    }

    #[inline]
    pub(crate) fn active(&self, j: usize, i: usize) -> bool {
        self.kind != ObservationKind::MaskedVelocity || self.mask[j * self.grid.nx + i]
    }
}

/// `K[u]` on the residual samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsField {
    pub grid: GridSpec,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl ObsField {
    pub fn samples(&self) -> WeightedSamples {
        let n = self.grid.sample_count();
        WeightedSamples {
            dim: self.dim,
            values: self.values.clone(),
            weights: vec![1.0 / n as f64; n],
        }
    }
}

fn conform(u: &VectorField, du: &TensorField, model: &ObservationModel) -> Result<()> {
    u.grid.same_shape(&model.grid)?;
    du.grid.same_shape(&model.grid)
}

/// Observation values `Q(u, Du)` at the residual samples (no data offset).
pub(crate) fn predict(u: &VectorField, du: &TensorField, model: &ObservationModel) -> Vec<f64> {
    let g = &model.grid;
    let dim = model.output_dim();
    let mut out = vec![0.0; dim * g.sample_count()];
    for (s, (k, j, i)) in g.samples().enumerate() {
        if !model.active(j, i) {
            continue;
        }
        let n = g.idx(k, j, i);
        let q = model.kind.evaluate([u.u1[n], u.u2[n]], du.at(n), [0.0; 2], 0.0);
        out[s * dim..(s + 1) * dim].copy_from_slice(&q[..dim]);
    }
    out
}

pub fn eval_k(u: &VectorField, du: &TensorField, model: &ObservationModel) -> Result<ObsField> {
    conform(u, du, model)?;
    let g = &model.grid;
    let dim = model.output_dim();
    let mut values = predict(u, du, model);
    for (s, (_, j, i)) in g.samples().enumerate() {
        if model.active(j, i) {
            for c in 0..dim {
                values[s * dim + c] -= model.data_q[s * dim + c];
            }
        }
    }
    Ok(ObsField {
        grid: *g,
        dim,
        values,
    })
}

/// Per sample `N x 2` blocks of `K_eta`, row-major. Zero off the mask.
pub fn eval_k_eta(u: &VectorField, du: &TensorField, model: &ObservationModel) -> Result<Vec<f64>> {
    conform(u, du, model)?;
    let g = &model.grid;
    let dim = model.output_dim();
    let mut out = vec![0.0; dim * 2 * g.sample_count()];
    for (s, (k, j, i)) in g.samples().enumerate() {
        if !model.active(j, i) {
            continue;
        }
        let n = g.idx(k, j, i);
        let d = model.kind.d_eta([u.u1[n], u.u2[n]]);
        for c in 0..dim {
            out[(s * dim + c) * 2] = d[c][0];
            out[(s * dim + c) * 2 + 1] = d[c][1];
        }
    }
    Ok(out)
}

/// Per sample `N x 4` blocks of `K_A`. Zero off the mask.
pub fn eval_k_a(u: &VectorField, du: &TensorField, model: &ObservationModel) -> Result<Vec<f64>> {
    conform(u, du, model)?;
    let g = &model.grid;
    let dim = model.output_dim();
    let d = model.kind.d_a();
    let mut out = vec![0.0; dim * 4 * g.sample_count()];
    for (s, (_, j, i)) in g.samples().enumerate() {
        if !model.active(j, i) {
            continue;
        }
        for c in 0..dim {
            out[(s * dim + c) * 4..(s * dim + c + 1) * 4].copy_from_slice(&d[c]);
        }
    }
    Ok(out)
}

/// Twin-experiment data: `q = Q(u_truth) + noise * xi`, `xi ~ U[-1, 1]` i.i.d.
/// from a ChaCha8 stream seeded with `seed`. Off-mask nodes carry no data.
pub fn synth_data(
    u_truth: &VectorField,
    kind: ObservationKind,
    mask: Vec<bool>,
    noise_amplitude: f64,
    seed: u64,
) -> Result<ObservationModel> {
    if !(noise_amplitude.is_finite() && noise_amplitude >= 0.0) {
        return Err(Error::Config(format!(
            "observation.noise_amplitude must be >= 0 (got {noise_amplitude})"
        )));
    }
    let g = u_truth.grid;
    let du = spatial_gradient(u_truth)?;
    let mut model = ObservationModel {
        kind,
        grid: g,
        mask,
        data_q: vec![0.0; kind.output_dim() * g.sample_count()],
    };
    if model.mask.len() != g.plane() {
        return Err(Error::Config("mask does not match the grid plane".into()));
    }
    let mut q = predict(u_truth, &du, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = kind.output_dim();
    for (s, (_, j, i)) in g.samples().enumerate() {
        if model.active(j, i) {
            for v in &mut q[s * dim..(s + 1) * dim] {
                *v += noise_amplitude * rng.gen_range(-1.0..=1.0);
            }
        }
    }
    model.data_q = q;
    model.validate()?;
    Ok(model)
}
