//! Manufactured Navier–Stokes trajectories with closed-form derivatives.
//!
//! `psi = amp g(t) S(x) S(y)` with `S = sin(pi .)^2`, pressure
//! `g(t) cos(pi x) cos(pi y)`. The velocity vanishes on the boundary of the
//! unit square together with its normal derivative.

use std::f64::consts::PI;

use crate::error::Result;
use crate::grid::{advection, laplacian, spatial_gradient, GridSpec, ScalarField, VectorField};
use crate::nse::{residual_y, PhysicsSetup};

#[derive(Debug, Clone, Copy)]
pub struct Manufactured {
    pub amp: f64,
    /// `t -> (g(t), g'(t))`.
    pub temporal: fn(f64) -> (f64, f64),
    pub nu: f64,
}

/// Exact values at one point.
#[derive(Debug, Clone, Copy)]
pub struct PointValues {
    pub u: [f64; 2],
    pub u_t: [f64; 2],
    /// `(du1/dx, du1/dy, du2/dx, du2/dy)`.
    pub du: [f64; 4],
    pub lap: [f64; 2],
    pub p: f64,
    pub dp: [f64; 2],
}

fn s0(v: f64) -> f64 {
    (PI * v).sin().powi(2)
}

fn s1(v: f64) -> f64 {
    PI * (2.0 * PI * v).sin()
}

fn s2(v: f64) -> f64 {
    2.0 * PI * PI * (2.0 * PI * v).cos()
}

fn s3(v: f64) -> f64 {
    -4.0 * PI.powi(3) * (2.0 * PI * v).sin()
}

impl Manufactured {
    /// `g(t) = 1 + t`, viscosity 0.1.
    pub fn linear_in_time(amp: f64) -> Self {
        Self {
            amp,
            temporal: |t| (1.0 + t, 1.0),
            nu: 0.1,
        }
    }

    /// `g(t) = 1 + sin(3t)`, viscosity 0.1.
    pub fn oscillating_in_time(amp: f64) -> Self {
        Self {
            amp,
            temporal: |t| ((3.0 * t).sin() + 1.0, 3.0 * (3.0 * t).cos()),
            nu: 0.1,
        }
    }

    pub fn at(&self, x: f64, y: f64, t: f64) -> PointValues {
        let (g, gd) = (self.temporal)(t);
        let a = self.amp;
        PointValues {
            u: [a * g * s0(x) * s1(y), -a * g * s1(x) * s0(y)],
            u_t: [a * gd * s0(x) * s1(y), -a * gd * s1(x) * s0(y)],
            du: [
                a * g * s1(x) * s1(y),
                a * g * s0(x) * s2(y),
                -a * g * s2(x) * s0(y),
                -a * g * s1(x) * s1(y),
            ],
            lap: [
                a * g * (s2(x) * s1(y) + s0(x) * s3(y)),
                -a * g * (s3(x) * s0(y) + s1(x) * s2(y)),
            ],
            p: g * (PI * x).cos() * (PI * y).cos(),
            dp: [
                -g * PI * (PI * x).sin() * (PI * y).cos(),
                -g * PI * (PI * x).cos() * (PI * y).sin(),
            ],
        }
    }

    pub fn velocity(&self, g: GridSpec) -> VectorField {
        VectorField::from_fn(g, |x, y, t| self.at(x, y, t).u)
    }

    pub fn pressure(&self, g: GridSpec) -> ScalarField {
        ScalarField::from_fn(g, |x, y, t| self.at(x, y, t).p)
    }

    /// Forcing from the exact derivatives.
    pub fn analytic_forcing(&self, g: GridSpec) -> VectorField {
        let nu = self.nu;
        VectorField::from_fn(g, |x, y, t| {
            let v = self.at(x, y, t);
            [
                v.u_t[0] - nu * v.lap[0] + v.u[0] * v.du[0] + v.u[1] * v.du[1] + v.dp[0],
                v.u_t[1] - nu * v.lap[1] + v.u[0] * v.du[2] + v.u[1] * v.du[3] + v.dp[1],
            ]
        })
    }

    /// Forcing with the exact time derivative and the discrete spatial
    /// operators, so only the time difference contributes to the residual.
    pub fn space_consistent_forcing(&self, g: GridSpec) -> Result<VectorField> {
        let u = self.velocity(g);
        let p = self.pressure(g);
        let adv = advection(&u)?;
        let lap = laplacian(&u)?;
        let dp = spatial_gradient(&VectorField {
            grid: g,
            u1: p.values.clone(),
            u2: p.values,
        })?;
        let mut f = VectorField::from_fn(g, |x, y, t| self.at(x, y, t).u_t);
        for n in 0..g.len() {
            f.u1[n] += -self.nu * lap.u1[n] + adv.u1[n] + dp.comps[0][n];
            f.u2[n] += -self.nu * lap.u2[n] + adv.u2[n] + dp.comps[3][n];
        }
        Ok(f)
    }

    /// Forcing that makes the discrete residual of the sampled trajectory
    /// vanish identically.
    pub fn discrete_forcing(&self, g: GridSpec) -> Result<VectorField> {
        let u = self.velocity(g);
        let p = self.pressure(g);
        let s = PhysicsSetup::new(g, self.nu, 0.5, VectorField::zeros(g), u.slice(0))?;
        residual_y(&u, &p, &s)
    }

    /// `max |y|` of the sampled trajectory under `forcing`.
    pub fn residual_with(&self, g: GridSpec, forcing: VectorField) -> Result<f64> {
        let u = self.velocity(g);
        let p = self.pressure(g);
        let s = PhysicsSetup::new(g, self.nu, 0.5, forcing, u.slice(0))?;
        Ok(residual_y(&u, &p, &s)?.max_abs())
    }

    /// Residual sup on an `n x n` grid with `nt` steps over `[0, 0.5]`;
    /// `space_consistent` isolates the time error.
    pub fn residual_sup(&self, n: usize, nt: usize, space_consistent: bool) -> Result<f64> {
        let g = GridSpec::unit_square(n, nt, 0.5)?;
        let f = if space_consistent {
            self.space_consistent_forcing(g)?
        } else {
            self.analytic_forcing(g)
        };
        self.residual_with(g, f)
    }
}

/// Observed order from errors at successive halvings.
pub fn slopes(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}
