//! Navier–Stokes residual over the stream-function/pressure parametrisation
//! and a reference forward solver for twin experiments.
//!
//! The velocity at levels `1..=nt` is the centred curl of a stream function
//! that vanishes on the boundary layer and on the first interior layer, with
//! the no-slip trace imposed on boundary nodes. With that clamping the
//! interior velocity space splits orthogonally into `curl(psi)` and
//! centred pressure gradients, so a discrete state with `y = 0` exists and
//! the reference solver finds it.

use crate::error::{ensure_finite, Error, Result};
use crate::grid::{
    d1, lap_at, project_plane, project_plane_transpose, trapezoid_weights, GridSpec, ScalarField,
    VectorField, VectorSlice,
};

use crate::solver::conjugate_gradient;

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsSetup {
    pub grid: GridSpec,
    pub nu: f64,
    /// Weight of the model-error term in the misfit, in `(0, 1)`.
    pub lambda: f64,
    pub f: VectorField,
    pub u0: VectorSlice,
    /// Disables `(u.D)u`; only meant for the linear sanity configuration.
    pub advection: bool,
}

impl PhysicsSetup {
    pub fn new(grid: GridSpec, nu: f64, lambda: f64, f: VectorField, u0: VectorSlice) -> Result<Self> {
        let s = Self {
            grid,
            nu,
            lambda,
            f,
            u0,
            advection: true,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        g.validate()?;
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(Error::Config(format!("physics.nu must be > 0 (got {})", self.nu)));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!(
                "physics.lambda must lie in (0, 1) (got {})",
                self.lambda
            )));
        }
        self.f.grid.same_shape(g)?;
        ensure_finite("forcing u1", &self.f.u1)?;
        ensure_finite("forcing u2", &self.f.u2)?;
        if self.u0.nx != g.nx || self.u0.ny != g.ny {
            return Err(Error::Config("physics.u0 does not match the grid".into()));
        }
        ensure_finite("u0", &self.u0.u1)?;
        ensure_finite("u0", &self.u0.u2)?;
        let scale = self.u0.max_abs();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let m = j * g.nx + i;
                if g.is_boundary(j, i) && self.u0.u1[m].hypot(self.u0.u2[m]) > 1e-12 * (1.0 + scale) {
                    return Err(Error::Config("physics.u0 must vanish on the boundary".into()));
                }
            }
        }
        let (mut div, mut grad) = (0.0f64, 0.0f64);
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                let (ax, ay) = d1(&self.u0.u1, g, j, i);
                let (bx, by) = d1(&self.u0.u2, g, j, i);
                div = div.max((ax + by).abs());
                grad = grad.max(ax.abs().max(ay.abs()).max(bx.abs()).max(by.abs()));
            }
        }
        if div > 1e-10 * grad {
            return Err(Error::Config(format!(
                "physics.u0 is not discretely divergence-free (max |div| = {div:e})"
            )));
        }
        Ok(())
    }
}

/// Free stream-function nodes of one level: `2 <= i, j <= n - 3`.
pub fn free_nodes(g: &GridSpec) -> impl Iterator<Item = (usize, usize)> + '_ {
    (2..g.ny - 2).flat_map(move |j| (2..g.nx - 2).map(move |i| (j, i)))
}

pub fn free_per_level(g: &GridSpec) -> usize {
    (g.nx - 4) * (g.ny - 4)
}

/// Optimisation variables: free stream-function values followed by
/// pressure values at every node, both for levels `1..=nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVector {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ControlVector {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; Self::len_for(&grid)],
        }
    }

    pub fn len_for(g: &GridSpec) -> usize {
        g.nt * (free_per_level(g) + g.plane())
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != Self::len_for(&grid) {
            return Err(Error::Config(format!(
                "control has {} values, grid needs {}",
                values.len(),
                Self::len_for(&grid)
            )));
        }
        ensure_finite("control", &values)?;
        Ok(Self { grid, values })
    }

    fn n_psi(&self) -> usize {
        self.grid.nt * free_per_level(&self.grid)
    }

    pub fn psi(&self) -> &[f64] {
        &self.values[..self.n_psi()]
    }

    pub fn psi_mut(&mut self) -> &mut [f64] {
        let n = self.n_psi();
        &mut self.values[..n]
    }

    pub fn pr(&self) -> &[f64] {
        &self.values[self.n_psi()..]
    }

    pub fn pr_mut(&mut self) -> &mut [f64] {
        let n = self.n_psi();
        &mut self.values[n..]
    }

    /// Builds a control from full-grid stream function and pressure fields
    /// (level 0 and clamped nodes are ignored).
    pub fn from_fields(psi: &ScalarField, p: &ScalarField) -> Result<Self> {
        let g = psi.grid;
        p.grid.same_shape(&g)?;
        let mut c = Self::zeros(g);
        let fl = free_per_level(&g);
        let nodes: Vec<_> = free_nodes(&g).collect();
        for k in 1..=g.nt {
            for (f, &(j, i)) in nodes.iter().enumerate() {
                c.values[(k - 1) * fl + f] = psi.at(k, j, i);
            }
        }
        let pl = g.plane();
        c.pr_mut().copy_from_slice(&p.values[pl..]);
        ensure_finite("control", &c.values)?;
        Ok(c)
    }

    /// Projects every pressure level onto zero trapezoidal mean.
    pub fn normalize_pressure(&mut self) {
        let w = trapezoid_weights(&self.grid);
        let pl = self.grid.plane();
        for level in self.pr_mut().chunks_mut(pl) {
            project_plane(level, &w);
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Full-grid stream function of a control (zero at level 0).
pub fn stream_function(c: &ControlVector) -> ScalarField {
    let g = c.grid;
    let fl = free_per_level(&g);
    let nodes: Vec<_> = free_nodes(&g).collect();
    let mut psi = ScalarField::zeros(g);
    for k in 1..=g.nt {
        for (f, &(j, i)) in nodes.iter().enumerate() {
            psi.values[g.idx(k, j, i)] = c.values[(k - 1) * fl + f];
        }
    }
    psi
}

/// Centred curl at interior nodes, zero on the boundary.
pub(crate) fn curl_plane(psi: &[f64], g: &GridSpec, u1: &mut [f64], u2: &mut [f64]) {
    let nx = g.nx;
    let (ax, ay) = (0.5 / g.hx(), 0.5 / g.hy());
    u1.iter_mut().for_each(|v| *v = 0.0);
    u2.iter_mut().for_each(|v| *v = 0.0);
    for j in 1..g.ny - 1 {
        for i in 1..nx - 1 {
            let m = j * nx + i;
            u1[m] = ay * (psi[m + nx] - psi[m - nx]);
            u2[m] = -ax * (psi[m + 1] - psi[m - 1]);
        }
    }
}

/// Transpose of [`curl_plane`], accumulated into `psib`.
pub(crate) fn curl_plane_t(ub1: &[f64], ub2: &[f64], g: &GridSpec, psib: &mut [f64]) {
    let nx = g.nx;
    let (ax, ay) = (0.5 / g.hx(), 0.5 / g.hy());
    for j in 1..g.ny - 1 {
        for i in 1..nx - 1 {
            let m = j * nx + i;
            psib[m + nx] += ay * ub1[m];
            psib[m - nx] -= ay * ub1[m];
            psib[m + 1] -= ax * ub2[m];
            psib[m - 1] += ax * ub2[m];
        }
    }
}

/// Velocity from a clamped stream function given on one plane: the
/// boundary and first interior layer of `psi` are zeroed first.
pub fn clamped_curl(g: &GridSpec, psi: &[f64]) -> VectorSlice {
    let mut clamped = vec![0.0; g.plane()];
    for (j, i) in free_nodes(g) {
        clamped[j * g.nx + i] = psi[j * g.nx + i];
    }
    let mut s = VectorSlice::zeros(g.nx, g.ny);
    curl_plane(&clamped, g, &mut s.u1, &mut s.u2);
    s
}

/// `(u, p)` for a control: `u^0 = u0`, `u^k = curl(psi^k)` with no-slip
/// boundary values, `p^k` projected to zero mean, `p^0 = 0`.
pub fn state_from_control(c: &ControlVector, setup: &PhysicsSetup) -> Result<(VectorField, ScalarField)> {
    let g = setup.grid;
    c.grid.same_shape(&g)?;
    ensure_finite("control", &c.values)?;
    let pl = g.plane();
    let psi = stream_function(c);
    let mut u = VectorField::zeros(g);
    u.set_slice(0, &setup.u0);
    for k in 1..=g.nt {
        let (a, b) = (&mut u.u1[k * pl..(k + 1) * pl], &mut u.u2[k * pl..(k + 1) * pl]);
        curl_plane(psi.level(k), &g, a, b);
    }
    let w = trapezoid_weights(&g);
    let mut p = ScalarField::zeros(g);
    p.values[pl..].copy_from_slice(c.pr());
    for k in 1..=g.nt {
        project_plane(p.level_mut(k), &w);
    }
    Ok((u, p))
}

#[inline]
fn plane(v: &[f64], k: usize, pl: usize) -> &[f64] {
    &v[k * pl..(k + 1) * pl]
}

/// Residual samples (interleaved `y1, y2`) at interior nodes, levels `1..=nt`.
pub(crate) fn residual_samples(u: &VectorField, p: &ScalarField, setup: &PhysicsSetup) -> Vec<f64> {
    let g = &setup.grid;
    let pl = g.plane();
    let dt = g.dt();
    let mut y = vec![0.0; 2 * g.sample_count()];
    for k in 1..=g.nt {
        let (a, b) = (plane(&u.u1, k, pl), plane(&u.u2, k, pl));
        let (a0, b0) = if k == 1 {
            (&setup.u0.u1[..], &setup.u0.u2[..])
        } else {
            (plane(&u.u1, k - 1, pl), plane(&u.u2, k - 1, pl))
        };
        let pk = p.level(k);
        let (f1, f2) = (plane(&setup.f.u1, k, pl), plane(&setup.f.u2, k, pl));
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                let m = j * g.nx + i;
                let s = g.sample_index(k, j, i);
                let (px, py) = d1(pk, g, j, i);
                let mut r1 = (a[m] - a0[m]) / dt - setup.nu * lap_at(a, g, j, i) + px - f1[m];
                let mut r2 = (b[m] - b0[m]) / dt - setup.nu * lap_at(b, g, j, i) + py - f2[m];
                if setup.advection {
                    let (ax, ay) = d1(a, g, j, i);
                    let (bx, by) = d1(b, g, j, i);
                    r1 += a[m] * ax + b[m] * ay;
                    r2 += a[m] * bx + b[m] * by;
                }
                y[2 * s] = r1;
                y[2 * s + 1] = r2;
            }
        }
    }
    y
}

/// `y = du/dt - nu Lap u + (u.D)u + Dp - f` on interior nodes at levels
/// `1..=nt`; zero elsewhere.
pub fn residual_y(u: &VectorField, p: &ScalarField, setup: &PhysicsSetup) -> Result<VectorField> {
    u.grid.same_shape(&setup.grid)?;
    p.grid.same_shape(&setup.grid)?;
    ensure_finite("velocity u1", &u.u1)?;
    ensure_finite("velocity u2", &u.u2)?;
    ensure_finite("pressure", &p.values)?;
    let g = setup.grid;
    let y = residual_samples(u, p, setup);
    let mut out = VectorField::zeros(g);
    for (s, (k, j, i)) in g.samples().enumerate() {
        let n = g.idx(k, j, i);
        out.u1[n] = y[2 * s];
        out.u2[n] = y[2 * s + 1];
    }
    Ok(out)
}

/// Action of the residual's derivative at `base` on a perturbation
/// `(du, dp)` with `du` at level 0 taken as zero:
/// `d_t du - nu Lap du + (du.D)base + (base.D)du + D dp`.
pub(crate) fn linearized_residual(
    base: &VectorField,
    du: &VectorField,
    dp: &ScalarField,
    setup: &PhysicsSetup,
) -> Vec<f64> {
    let g = &setup.grid;
    let pl = g.plane();
    let dt = g.dt();
    let zero = vec![0.0; pl];
    let mut y = vec![0.0; 2 * g.sample_count()];
    for k in 1..=g.nt {
        let (a, b) = (plane(&du.u1, k, pl), plane(&du.u2, k, pl));
        let (a0, b0) = if k == 1 {
            (&zero[..], &zero[..])
        } else {
            (plane(&du.u1, k - 1, pl), plane(&du.u2, k - 1, pl))
        };
        let (ba, bb) = (plane(&base.u1, k, pl), plane(&base.u2, k, pl));
        let pk = dp.level(k);
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                let m = j * g.nx + i;
                let s = g.sample_index(k, j, i);
                let (px, py) = d1(pk, g, j, i);
                let mut r1 = (a[m] - a0[m]) / dt - setup.nu * lap_at(a, g, j, i) + px;
                let mut r2 = (b[m] - b0[m]) / dt - setup.nu * lap_at(b, g, j, i) + py;
                if setup.advection {
                    let (ax, ay) = d1(a, g, j, i);
                    let (bx, by) = d1(b, g, j, i);
                    let (bax, bay) = d1(ba, g, j, i);
                    let (bbx, bby) = d1(bb, g, j, i);
                    r1 += a[m] * bax + b[m] * bay + ba[m] * ax + bb[m] * ay;
                    r2 += a[m] * bbx + b[m] * bby + ba[m] * bx + bb[m] * by;
                }
                y[2 * s] = r1;
                y[2 * s + 1] = r2;
            }
        }
    }
    y
}

/// Transpose of the residual's derivative at `u`, applied to `ybar` and
/// accumulated into `ubar` (levels `1..=nt`) and `pbar`.
pub(crate) fn residual_adjoint(
    u: &VectorField,
    ybar: &[f64],
    setup: &PhysicsSetup,
    ubar: &mut VectorField,
    pbar: &mut ScalarField,
) {
    let g = &setup.grid;
    let nx = g.nx;
    let pl = g.plane();
    let dt = g.dt();
    let (hx2, hy2) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    let (ax, ay) = (0.5 / g.hx(), 0.5 / g.hy());
    let nu = setup.nu;
    for (s, (k, j, i)) in g.samples().enumerate() {
        let yb = [ybar[2 * s], ybar[2 * s + 1]];
        if yb == [0.0, 0.0] {
            continue;
        }
        let m = j * nx + i;
        let n = k * pl + m;
        let bars = [&mut ubar.u1, &mut ubar.u2];
        for (c, bar) in bars.into_iter().enumerate() {
            let v = yb[c];
            bar[n] += v / dt;
            if k >= 2 {
                bar[n - pl] -= v / dt;
            }
            bar[n] += 2.0 * nu * (hx2 + hy2) * v;
            bar[n + 1] -= nu * hx2 * v;
            bar[n - 1] -= nu * hx2 * v;
            bar[n + nx] -= nu * hy2 * v;
            bar[n - nx] -= nu * hy2 * v;
        }
        if setup.advection {
            let (a, b) = (plane(&u.u1, k, pl), plane(&u.u2, k, pl));
            let (axd, ayd) = d1(a, g, j, i);
            let (bxd, byd) = d1(b, g, j, i);
            ubar.u1[n] += yb[0] * axd + yb[1] * bxd;
            ubar.u2[n] += yb[0] * ayd + yb[1] * byd;
            let (w1, w2) = (a[m], b[m]);
            for (c, bar) in [&mut ubar.u1, &mut ubar.u2].into_iter().enumerate() {
                let v = yb[c];
                bar[n + 1] += v * w1 * ax;
                bar[n - 1] -= v * w1 * ax;
                bar[n + nx] += v * w2 * ay;
                bar[n - nx] -= v * w2 * ay;
            }
        }
        let pb = &mut pbar.values;
        pb[n + 1] += yb[0] * ax;
        pb[n - 1] -= yb[0] * ax;
        pb[n + nx] += yb[1] * ay;
        pb[n - nx] -= yb[1] * ay;
    }
}

/// Transpose of [`state_from_control`] with respect to the control.
pub(crate) fn control_adjoint(ubar: &VectorField, pbar: &ScalarField) -> ControlVector {
    let g = ubar.grid;
    let pl = g.plane();
    let fl = free_per_level(&g);
    let nodes: Vec<_> = free_nodes(&g).collect();
    let w = trapezoid_weights(&g);
    let mut out = ControlVector::zeros(g);
    let mut psib = vec![0.0; pl];
    for k in 1..=g.nt {
        psib.iter_mut().for_each(|v| *v = 0.0);
        curl_plane_t(plane(&ubar.u1, k, pl), plane(&ubar.u2, k, pl), &g, &mut psib);
        for (f, &(j, i)) in nodes.iter().enumerate() {
            out.values[(k - 1) * fl + f] = psib[j * g.nx + i];
        }
        let mut pb = pbar.level(k).to_vec();
        project_plane_transpose(&mut pb, &w);
        out.pr_mut()[(k - 1) * pl..k * pl].copy_from_slice(&pb);
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct ReferenceOptions {
    pub cg_tol: f64,
    pub max_cg: usize,
    pub picard_tol: f64,
    pub max_picard: usize,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self {
            cg_tol: 1e-13,
            max_cg: 20_000,
            picard_tol: 1e-13,
            max_picard: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub u: VectorField,
    pub p: ScalarField,
    /// The same trajectory as a control vector.
    pub control: ControlVector,
    /// `max |y|` of the returned pair.
    pub residual_sup: f64,
}

/// Largest admissible step for the reference solver.
pub fn cfl_bound(g: &GridSpec, u0: &VectorSlice) -> f64 {
    0.5 * g.hx().min(g.hy()) / u0.max_abs().max(1.0)
}

/// Time-steps the discrete equations with `y = 0`.
///
/// Each level solves the curl (vorticity) projection of the momentum
/// equation for the stream function, with diffusion implicit and the
/// advection term resolved by Picard iteration, then recovers the pressure
/// from the discrete Poisson problem `G^T G p = G^T (rhs - M u)`.
pub fn reference_solve(setup: &PhysicsSetup, opts: ReferenceOptions) -> Result<ReferenceSolution> {
    setup.validate()?;
    let g = setup.grid;
    let bound = cfl_bound(&g, &setup.u0);
    if g.dt() > bound {
        return Err(Error::Cfl { dt: g.dt(), bound });
    }
    let nx = g.nx;
    let pl = g.plane();
    let dt = g.dt();
    let nu = setup.nu;
    let fl = free_per_level(&g);
    let nodes: Vec<usize> = free_nodes(&g).map(|(j, i)| j * nx + i).collect();
    let interior: Vec<usize> = (1..g.ny - 1)
        .flat_map(|j| (1..nx - 1).map(move |i| j * nx + i))
        .collect();

    // M v = v / dt - nu Lap v on interior nodes, v = 0 on the boundary.
    let apply_m = |v: &[f64], out: &mut [f64]| {
        for &m in &interior {
            let (j, i) = (m / nx, m % nx);
            out[m] = v[m] / dt - nu * lap_at(v, &g, j, i);
        }
    };
    let scatter = |x: &[f64], psi: &mut [f64]| {
        for (f, &m) in nodes.iter().enumerate() {
            psi[m] = x[f];
        }
    };
    let gather = |psi: &[f64], x: &mut [f64]| {
        for (f, &m) in nodes.iter().enumerate() {
            x[f] = psi[m];
        }
    };
    // A x = C^T M C x
    let apply_a = |x: &[f64], out: &mut [f64]| {
        let mut psi = vec![0.0; pl];
        scatter(x, &mut psi);
        let (mut u1, mut u2) = (vec![0.0; pl], vec![0.0; pl]);
        curl_plane(&psi, &g, &mut u1, &mut u2);
        let (mut m1, mut m2) = (vec![0.0; pl], vec![0.0; pl]);
        apply_m(&u1, &mut m1);
        apply_m(&u2, &mut m2);
        let mut back = vec![0.0; pl];
        curl_plane_t(&m1, &m2, &g, &mut back);
        gather(&back, out);
    };
    let (ax, ay) = (0.5 / g.hx(), 0.5 / g.hy());
    // G^T G p, with G the centred gradient at interior nodes.
    let apply_gtg = |p: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &m in &interior {
            let gx = ax * (p[m + 1] - p[m - 1]);
            let gy = ay * (p[m + nx] - p[m - nx]);
            out[m + 1] += ax * gx;
            out[m - 1] -= ax * gx;
            out[m + nx] += ay * gy;
            out[m - nx] -= ay * gy;
        }
    };

    let mut u = VectorField::zeros(g);
    u.set_slice(0, &setup.u0);
    let mut p = ScalarField::zeros(g);
    let mut control = ControlVector::zeros(g);
    let mut x = vec![0.0; fl];
    let w = trapezoid_weights(&g);

    for k in 1..=g.nt {
        let prev1 = plane(&u.u1, k - 1, pl).to_vec();
        let prev2 = plane(&u.u2, k - 1, pl).to_vec();
        let (f1, f2) = (plane(&setup.f.u1, k, pl), plane(&setup.f.u2, k, pl));
        let (mut u1, mut u2) = (vec![0.0; pl], vec![0.0; pl]);
        let mut psi = vec![0.0; pl];
        let rhs = |u1: &[f64], u2: &[f64]| {
            let (mut r1, mut r2) = (vec![0.0; pl], vec![0.0; pl]);
            for &m in &interior {
                let (j, i) = (m / nx, m % nx);
                r1[m] = prev1[m] / dt + f1[m];
                r2[m] = prev2[m] / dt + f2[m];
                if setup.advection {
                    let (a1x, a1y) = d1(u1, &g, j, i);
                    let (a2x, a2y) = d1(u2, &g, j, i);
                    r1[m] -= u1[m] * a1x + u2[m] * a1y;
                    r2[m] -= u1[m] * a2x + u2[m] * a2y;
                }
            }
            (r1, r2)
        };

        let mut converged = false;
        for _ in 0..opts.max_picard {
            scatter(&x, &mut psi);
            curl_plane(&psi, &g, &mut u1, &mut u2);
            let (r1, r2) = rhs(&u1, &u2);
            let mut back = vec![0.0; pl];
            curl_plane_t(&r1, &r2, &g, &mut back);
            let mut b = vec![0.0; fl];
            gather(&back, &mut b);
            let mut x_new = x.clone();
            conjugate_gradient(apply_a, &b, &mut x_new, opts.cg_tol, opts.max_cg, "stream-function CG")?;
            let change = x_new.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let size = x_new.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            x = x_new;
            if change <= opts.picard_tol * size.max(1e-300) || !setup.advection {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence {
                solver: "Picard advection iteration",
                iterations: opts.max_picard,
                residual: f64::NAN,
            });
        }
        scatter(&x, &mut psi);
        curl_plane(&psi, &g, &mut u1, &mut u2);

        // pressure: G p = rhs(u) - M u in the least-squares sense
        let (r1, r2) = rhs(&u1, &u2);
        let (mut m1, mut m2) = (vec![0.0; pl], vec![0.0; pl]);
        apply_m(&u1, &mut m1);
        apply_m(&u2, &mut m2);
        let mut gtb = vec![0.0; pl];
        for &m in &interior {
            let b1 = r1[m] - m1[m];
            let b2 = r2[m] - m2[m];
            gtb[m + 1] += ax * b1;
            gtb[m - 1] -= ax * b1;
            gtb[m + nx] += ay * b2;
            gtb[m - nx] -= ay * b2;
        }
        let mut pk = vec![0.0; pl];
        conjugate_gradient(apply_gtg, &gtb, &mut pk, 1e-12, opts.max_cg, "pressure Poisson CG")?;
        project_plane(&mut pk, &w);

        u.u1[k * pl..(k + 1) * pl].copy_from_slice(&u1);
        u.u2[k * pl..(k + 1) * pl].copy_from_slice(&u2);
        p.level_mut(k).copy_from_slice(&pk);
        control.values[(k - 1) * fl..k * fl].copy_from_slice(&x);
        control.pr_mut()[(k - 1) * pl..k * pl].copy_from_slice(&pk);
    }
    let y = residual_samples(&u, &p, setup);
    let residual_sup = y
        .chunks(2)
        .fold(0.0f64, |m, v| m.max(v[0].hypot(v[1])));
    Ok(ReferenceSolution {
        u,
        p,
        control,
        residual_sup,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::grid::{divergence, spatial_gradient};
    use crate::mms::Manufactured;

    fn bump(x: f64, y: f64) -> f64 {
        ((PI * x).sin() * (PI * y).sin()).powi(2)
    }

    fn vortex_u0(g: &GridSpec, amp: f64) -> VectorSlice {
        let psi: Vec<f64> = (0..g.ny)
            .flat_map(|j| (0..g.nx).map(move |i| (i, j)))
            .map(|(i, j)| amp * bump(g.x(i), g.y(j)))
            .collect();
        clamped_curl(g, &psi)
    }

    fn setup(g: GridSpec, u0: VectorSlice, f: VectorField) -> PhysicsSetup {
        PhysicsSetup::new(g, 0.05, 0.5, f, u0).unwrap()
    }

    fn random_control(g: GridSpec, seed: u64, scale: f64) -> ControlVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..ControlVector::len_for(&g)).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        ControlVector::from_values(g, v).unwrap()
    }

    #[test]
    fn zero_control_gives_u0_then_rest() {
        let g = GridSpec::unit_square(9, 4, 0.2).unwrap();
        let s = setup(g, vortex_u0(&g, 0.05), VectorField::zeros(g));
        let (u, p) = state_from_control(&ControlVector::zeros(g), &s).unwrap();
        assert_eq!(u.slice(0), s.u0);
        for k in 1..=g.nt {
            let sl = u.slice(k);
            assert!(sl.u1.iter().chain(&sl.u2).all(|v| *v == 0.0));
        }
        assert_eq!(p.max_abs(), 0.0);
    }

    #[test]
    fn replicated_stream_function_is_steady() {
        let g = GridSpec::unit_square(13, 4, 0.2).unwrap();
        let u0 = vortex_u0(&g, 0.1);
        let s = setup(g, u0.clone(), VectorField::zeros(g));
        // recover psi0 from u0 through the Poisson problem -Lap psi = vorticity(u0)
        let psi0_exact = ScalarField::from_fn(g, |x, y, _| 0.1 * bump(x, y));
        let psi_fields = ScalarField {
            grid: g,
            values: (0..g.levels()).flat_map(|_| psi0_exact.level(0).to_vec()).collect(),
        };
        let c = ControlVector::from_fields(&psi_fields, &ScalarField::zeros(g)).unwrap();
        let (u, _) = state_from_control(&c, &s).unwrap();
        for k in 1..=g.nt {
            let sl = u.slice(k);
            let dev = sl.u1.iter().zip(&u0.u1).chain(sl.u2.iter().zip(&u0.u2))
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(dev < 1e-14);
        }
    }

    #[test]
    fn any_control_is_solenoidal_and_no_slip() {
        let g = GridSpec::unit_square(11, 3, 0.1).unwrap();
        let s = setup(g, VectorSlice::zeros(11, 11), VectorField::zeros(g));
        let c = random_control(g, 7, 1.0);
        let (u, p) = state_from_control(&c, &s).unwrap();
        let div = divergence(&u).unwrap();
        let du = spatial_gradient(&u).unwrap();
        let grad = du.comps.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for (k, j, i) in g.samples() {
            assert!(div.values[g.idx(k, j, i)].abs() <= 1e-12 * (1.0 + grad));
        }
        for k in 0..g.levels() {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    if g.is_boundary(j, i) {
                        assert_eq!(u.u1[g.idx(k, j, i)], 0.0);
                        assert_eq!(u.u2[g.idx(k, j, i)], 0.0);
                    }
                }
            }
        }
        let w = trapezoid_weights(&g);
        for k in 1..=g.nt {
            let mean: f64 = p.level(k).iter().zip(&w).map(|(a, b)| a * b).sum();
            assert!(mean.abs() < 1e-14 * (1.0 + p.max_abs()));
        }
    }

    #[test]
    fn trivial_residual() {
        let g = GridSpec::unit_square(7, 3, 0.1).unwrap();
        let s = setup(g, VectorSlice::zeros(7, 7), VectorField::zeros(g));
        let y = residual_y(&VectorField::zeros(g), &ScalarField::zeros(g), &s).unwrap();
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn curl_transpose_is_adjoint() {
        let g = GridSpec::new(9, 7, 2, 1.0, 0.7, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi: Vec<f64> = (0..g.plane()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (v1, v2): (Vec<f64>, Vec<f64>) = (0..g.plane()).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).unzip();
        let (mut u1, mut u2) = (vec![0.0; g.plane()], vec![0.0; g.plane()]);
        curl_plane(&psi, &g, &mut u1, &mut u2);
        let lhs: f64 = u1.iter().zip(&v1).chain(u2.iter().zip(&v2)).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; g.plane()];
        curl_plane_t(&v1, &v2, &g, &mut back);
        let rhs: f64 = back.iter().zip(&psi).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn residual_adjoint_matches_linearization() {
        // <J d, ybar> = <d, J^T ybar> for random base, direction and cotangent
        let g = GridSpec::unit_square(8, 4, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = setup(g, VectorSlice::zeros(8, 8), VectorField::zeros(g));
        let base = state_from_control(&random_control(g, 3, 0.3), &s).unwrap().0;
        let c = random_control(g, 4, 0.3);
        let (du, dp) = state_from_control(&c, &PhysicsSetup { u0: VectorSlice::zeros(8, 8), ..s.clone() }).unwrap();
        let jd = linearized_residual(&base, &du, &dp, &s);
        let ybar: Vec<f64> = (0..jd.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = jd.iter().zip(&ybar).map(|(a, b)| a * b).sum();
        let mut ubar = VectorField::zeros(g);
        let mut pbar = ScalarField::zeros(g);
        residual_adjoint(&base, &ybar, &s, &mut ubar, &mut pbar);
        let cbar = control_adjoint(&ubar, &pbar);
        let rhs: f64 = cbar.values.iter().zip(&c.values).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    /// Manufactured stream function and pressure; `g(t)` is the temporal
    /// profile. Returns velocity and pressure samplers plus analytic
    /// derivatives needed for the forcing.
    #[test]
    fn manufactured_space_convergence() {
        let m = Manufactured::linear_in_time(0.5);
        let e: Vec<f64> = [17, 33, 65].iter().map(|&n| m.residual_sup(n, 4, false).unwrap()).collect();
        for w in e.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((slope - 2.0).abs() <= 0.3, "slope {slope} from {e:?}");
        }
    }

    #[test]
    fn manufactured_time_convergence() {
        let m = Manufactured::oscillating_in_time(0.5);
        let e: Vec<f64> = [8, 16, 32].iter().map(|&nt| m.residual_sup(17, nt, true).unwrap()).collect();
        for w in e.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((slope - 1.0).abs() <= 0.3, "slope {slope} from {e:?}");
        }
    }

    #[test]
    fn reference_zero_orbit() {
        let g = GridSpec::unit_square(9, 4, 0.2).unwrap();
        let s = setup(g, VectorSlice::zeros(9, 9), VectorField::zeros(g));
        let r = reference_solve(&s, ReferenceOptions::default()).unwrap();
        assert_eq!(r.u.max_abs(), 0.0);
        assert_eq!(r.p.max_abs(), 0.0);
    }

    #[test]
    fn reference_vortex_dissipates_energy() {
        let g = GridSpec::unit_square(17, 10, 0.2).unwrap();
        let s = setup(g, vortex_u0(&g, 0.1), VectorField::zeros(g));
        let r = reference_solve(&s, ReferenceOptions::default()).unwrap();
        let e: Vec<f64> = (0..g.levels()).map(|k| r.u.energy(k)).collect();
        assert!(e.windows(2).all(|w| w[1] < w[0]), "{e:?}");
        assert!(r.residual_sup <= 1e-9, "residual {}", r.residual_sup);
    }

    #[test]
    fn reference_forced_flow_has_zero_residual() {
        let g = GridSpec::unit_square(16, 12, 0.25).unwrap();
        let f = VectorField::from_fn(g, |x, y, t| {
            [(2.0 * PI * y).sin() * (PI * x).sin() * (1.0 + t), -(PI * y).sin() * (2.0 * PI * x).cos()]
        });
        let s = setup(g, vortex_u0(&g, 0.05), f);
        let r = reference_solve(&s, ReferenceOptions::default()).unwrap();
        assert!(r.residual_sup <= 1e-8, "residual {}", r.residual_sup);
        // the control reproduces the trajectory
        let (u, p) = state_from_control(&r.control, &s).unwrap();
        let y = residual_y(&u, &p, &s).unwrap();
        assert!(y.max_abs() <= 1e-8);
    }

    #[test]
    fn reference_reproduces_manufactured_trajectory() {
        let nu = 0.1;
        let run = |n: usize, nt: usize| {
            let g = GridSpec::unit_square(n, nt, 0.1).unwrap();
            let mut m = Manufactured::linear_in_time(0.3);
            m.nu = nu;
            let f = m.analytic_forcing(g);
            let exact = m.velocity(g);
            let psi0: Vec<f64> = (0..g.ny)
                .flat_map(|j| (0..g.nx).map(move |i| (i, j)))
                .map(|(i, j)| 0.3 * bump(g.x(i), g.y(j)))
                .collect();
            let s = PhysicsSetup::new(g, nu, 0.5, f, clamped_curl(&g, &psi0)).unwrap();
            let r = reference_solve(&s, ReferenceOptions::default()).unwrap();
            let k = g.nt;
            (1..g.ny - 1)
                .flat_map(|j| (1..g.nx - 1).map(move |i| (j, i)))
                .map(|(j, i)| {
                    let n = g.idx(k, j, i);
                    (r.u.u1[n] - exact.u1[n]).hypot(r.u.u2[n] - exact.u2[n])
                })
                .fold(0.0f64, f64::max)
        };
        let coarse = run(17, 8);
        let fine = run(33, 8);
        // the clamped first layer costs one order near the wall
        assert!(fine < coarse && coarse < 0.2, "{coarse} -> {fine}");
    }

    #[test]
    fn cfl_violation_is_reported() {
        let g = GridSpec::unit_square(33, 2, 1.0).unwrap();
        let s = setup(g, VectorSlice::zeros(33, 33), VectorField::zeros(g));
        assert!(matches!(reference_solve(&s, ReferenceOptions::default()), Err(Error::Cfl { .. })));
    }

    #[test]
    fn setup_validation() {
        let g = GridSpec::unit_square(9, 3, 0.1).unwrap();
        let zero = VectorSlice::zeros(9, 9);
        assert!(PhysicsSetup::new(g, 0.05, 1.5, VectorField::zeros(g), zero.clone()).is_err());
        assert!(PhysicsSetup::new(g, 0.0, 0.5, VectorField::zeros(g), zero.clone()).is_err());
        let mut leaky = zero.clone();
        leaky.u1[0] = 1.0;
        assert!(PhysicsSetup::new(g, 0.05, 0.5, VectorField::zeros(g), leaky).is_err());
        let mut compressible = zero;
        compressible.u1[4 * 9 + 4] = 1.0;
        assert!(PhysicsSetup::new(g, 0.05, 0.5, VectorField::zeros(g), compressible).is_err());
    }
}
