//! Finite-difference operators on node-centred uniform grids.
//!
//! Interior nodes use second-order centred stencils; boundary nodes use
//! one-sided second-order stencils. Every operator is linear except
//! [`advection`].

use super::{GridSpec, ScalarField, TensorField, VectorField, VectorSlice};
use crate::error::{ensure_finite, Error, Result};

#[inline]
fn first(f: impl Fn(usize) -> f64, n: usize, h: f64, i: usize) -> f64 {
    if i == 0 {
        (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
    } else if i + 1 == n {
        (3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) / (2.0 * h)
    } else {
        (f(i + 1) - f(i - 1)) / (2.0 * h)
    }
}

#[inline]
fn second(f: impl Fn(usize) -> f64, n: usize, h: f64, i: usize) -> f64 {
    if i == 0 {
        (2.0 * f(0) - 5.0 * f(1) + 4.0 * f(2) - f(3)) / (h * h)
    } else if i + 1 == n {
        (2.0 * f(n - 1) - 5.0 * f(n - 2) + 4.0 * f(n - 3) - f(n - 4)) / (h * h)
    } else {
        (f(i + 1) - 2.0 * f(i) + f(i - 1)) / (h * h)
    }
}

/// First derivatives `(d/dx, d/dy)` of one plane at node `(j, i)`.
#[inline]
pub(crate) fn d1(plane: &[f64], g: &GridSpec, j: usize, i: usize) -> (f64, f64) {
    let nx = g.nx;
    let dx = first(|m| plane[j * nx + m], nx, g.hx(), i);
    let dy = first(|m| plane[m * nx + i], g.ny, g.hy(), j);
    (dx, dy)
}

#[inline]
pub(crate) fn lap_at(plane: &[f64], g: &GridSpec, j: usize, i: usize) -> f64 {
    let nx = g.nx;
    second(|m| plane[j * nx + m], nx, g.hx(), i) + second(|m| plane[m * nx + i], g.ny, g.hy(), j)
}

/// `u = (dpsi/dy, -dpsi/dx)`.
///
/// The centred discrete divergence of the result vanishes at interior nodes
/// whenever `psi` vanishes on the boundary.
pub fn curl_stream(psi: &ScalarField) -> Result<VectorField> {
    ensure_finite("stream function", &psi.values)?;
    let g = psi.grid;
    let mut u = VectorField::zeros(g);
    for k in 0..g.levels() {
        let plane = psi.level(k);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (dx, dy) = d1(plane, &g, j, i);
                let n = g.idx(k, j, i);
                u.u1[n] = dy;
                u.u2[n] = -dx;
            }
        }
    }
    Ok(u)
}

pub fn spatial_gradient(u: &VectorField) -> Result<TensorField> {
    ensure_finite("velocity u1", &u.u1)?;
    ensure_finite("velocity u2", &u.u2)?;
    let g = u.grid;
    let mut t = TensorField::zeros(g);
    let p = g.plane();
    for k in 0..g.levels() {
        let a = &u.u1[k * p..(k + 1) * p];
        let b = &u.u2[k * p..(k + 1) * p];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let n = g.idx(k, j, i);
                let (ax, ay) = d1(a, &g, j, i);
                let (bx, by) = d1(b, &g, j, i);
                t.comps[0][n] = ax;
                t.comps[1][n] = ay;
                t.comps[2][n] = bx;
                t.comps[3][n] = by;
            }
        }
    }
    Ok(t)
}

pub fn laplacian(u: &VectorField) -> Result<VectorField> {
    ensure_finite("velocity u1", &u.u1)?;
    ensure_finite("velocity u2", &u.u2)?;
    let g = u.grid;
    let mut out = VectorField::zeros(g);
    let p = g.plane();
    for k in 0..g.levels() {
        let a = &u.u1[k * p..(k + 1) * p];
        let b = &u.u2[k * p..(k + 1) * p];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let n = g.idx(k, j, i);
                out.u1[n] = lap_at(a, &g, j, i);
                out.u2[n] = lap_at(b, &g, j, i);
            }
        }
    }
    Ok(out)
}

/// `((u.D)u)_i = u1 du_i/dx + u2 du_i/dy`, pointwise from [`spatial_gradient`].
pub fn advection(u: &VectorField) -> Result<VectorField> {
    let du = spatial_gradient(u)?;
    let mut out = VectorField::zeros(u.grid);
    for n in 0..u.grid.len() {
        let [a11, a12, a21, a22] = du.at(n);
        out.u1[n] = u.u1[n] * a11 + u.u2[n] * a12;
        out.u2[n] = u.u1[n] * a21 + u.u2[n] * a22;
    }
    Ok(out)
}

/// Backward difference `(u^k - u^{k-1}) / dt` for `k >= 1`, with `u^0 := u0`.
/// Level 0 of the output is zero.
pub fn time_derivative(u: &VectorField, u0: &VectorSlice) -> Result<VectorField> {
    let g = u.grid;
    if u0.nx != g.nx || u0.ny != g.ny {
        return Err(Error::Config(format!(
            "initial slice is {}x{}, grid is {}x{}",
            u0.nx, u0.ny, g.nx, g.ny
        )));
    }
    ensure_finite("velocity u1", &u.u1)?;
    ensure_finite("velocity u2", &u.u2)?;
    let p = g.plane();
    let dt = g.dt();
    let mut out = VectorField::zeros(g);
    for k in 1..g.levels() {
        for m in 0..p {
            let (prev1, prev2) = if k == 1 {
                (u0.u1[m], u0.u2[m])
            } else {
                (u.u1[(k - 1) * p + m], u.u2[(k - 1) * p + m])
            };
            out.u1[k * p + m] = (u.u1[k * p + m] - prev1) / dt;
            out.u2[k * p + m] = (u.u2[k * p + m] - prev2) / dt;
        }
    }
    Ok(out)
}

/// `du1/dx + du2/dy` with the same stencils as [`spatial_gradient`].
pub fn divergence(u: &VectorField) -> Result<ScalarField> {
    let du = spatial_gradient(u)?;
    let values = (0..u.grid.len()).map(|n| du.comps[0][n] + du.comps[3][n]).collect();
    Ok(ScalarField {
        grid: u.grid,
        values,
    })
}

/// Normalised trapezoidal weights of one spatial plane (they sum to 1).
pub fn trapezoid_weights(g: &GridSpec) -> Vec<f64> {
    let edge = |m: usize, n: usize| if m == 0 || m + 1 == n { 0.5 } else { 1.0 };
    let total = ((g.nx - 1) * (g.ny - 1)) as f64;
    let mut w = Vec::with_capacity(g.plane());
    for j in 0..g.ny {
        for i in 0..g.nx {
            w.push(edge(i, g.nx) * edge(j, g.ny) / total);
        }
    }
    w
}

pub(crate) fn project_plane(plane: &mut [f64], w: &[f64]) {
    let weighted: Vec<f64> = plane.iter().zip(w).map(|(v, w)| v * w).collect();
    let mean = crate::norms::pairwise_sum(&weighted);
    for v in plane.iter_mut() {
        *v -= mean;
    }
}

/// Transpose of [`project_plane`]: `x - w * sum(x)`.
pub(crate) fn project_plane_transpose(plane: &mut [f64], w: &[f64]) {
    let total = crate::norms::pairwise_sum(plane);
    for (v, w) in plane.iter_mut().zip(w) {
        *v -= w * total;
    }
}

/// Subtracts the trapezoidal spatial mean of every level.
pub fn zero_mean_project(p: &ScalarField) -> Result<ScalarField> {
    ensure_finite("pressure", &p.values)?;
    let w = trapezoid_weights(&p.grid);
    let mut out = p.clone();
    for k in 0..p.grid.levels() {
        project_plane(out.level_mut(k), &w);
    }
    Ok(out)
}
