//! Inverse of the linear part of the control-to-residual map, used as a
//! change of variables by the optimiser.
//!
//! Without advection, `u0` and `f`, the residual of a control is
//! `z^k = M u^k - u^(k-1)/dt + G p^k` with `u^k = C psi^k` and
//! `M = I/dt - nu Lap`. Interior velocities split orthogonally into
//! `range(C)` and `range(G)`, so each level can be inverted exactly: `psi`
//! from `C^T M C psi = C^T r`, then `p` from `G^T G p = G^T (r - M C psi)`.
//! Both matrices are factored once. `G^T G` is singular on the parity
//! checkerboards and the four corners; those null vectors are added back
//! as a rank-8 shift so the factor is definite and acts as the
//! pseudo-inverse on the range.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::grid::{lap_at, GridSpec};
use crate::nse::{curl_plane, curl_plane_t, free_nodes, free_per_level, PhysicsSetup};

pub(crate) struct StepInverse {
    grid: GridSpec,
    nu: f64,
    nodes: Vec<usize>,
    interior: Vec<usize>,
    a: Cholesky<f64, Dyn>,
    s: Cholesky<f64, Dyn>,
}

impl StepInverse {
    pub(crate) fn new(setup: &PhysicsSetup) -> Result<Self> {
        let g = setup.grid;
        let nx = g.nx;
        let nodes: Vec<usize> = free_nodes(&g).map(|(j, i)| j * nx + i).collect();
        let interior: Vec<usize> = (1..g.ny - 1)
            .flat_map(|j| (1..nx - 1).map(move |i| j * nx + i))
            .collect();
        let mut this = Self {
            grid: g,
            nu: setup.nu,
            nodes,
            interior,
            a: Cholesky::new(DMatrix::<f64>::identity(1, 1)).unwrap(),
            s: Cholesky::new(DMatrix::<f64>::identity(1, 1)).unwrap(),
        };
        let fl = free_per_level(&g);
        let mut a = DMatrix::<f64>::zeros(fl, fl);
        let mut e = vec![0.0; fl];
        for col in 0..fl {
            e[col] = 1.0;
            let (u1, u2) = this.curl(&e);
            let (m1, m2) = (this.m(&u1), this.m(&u2));
            a.set_column(col, &DVector::from_vec(this.curl_t(&m1, &m2)));
            e[col] = 0.0;
        }
        let pl = g.plane();
        let mut s = DMatrix::<f64>::zeros(pl, pl);
        let mut e = vec![0.0; pl];
        for col in 0..pl {
            e[col] = 1.0;
            let (b1, b2) = this.grad(&e);
            s.set_column(col, &DVector::from_vec(this.grad_t(&b1, &b2)));
            e[col] = 0.0;
        }
        for v in null_vectors(&g) {
            let v = DVector::from_vec(v);
            let scale = 1.0 / v.norm_squared();
            s += scale * &v * v.transpose();
        }
        let factor = |m: DMatrix<f64>, what: &str| {
            Cholesky::new(m).ok_or_else(|| Error::Domain(format!("{what} is not positive definite")))
        };
        this.a = factor(a, "stream-function step matrix")?;
        this.s = factor(s, "shifted pressure matrix")?;
        Ok(this)
    }

    /// Clamped free values to interior velocity planes.
    fn curl(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let pl = self.grid.plane();
        let mut psi = vec![0.0; pl];
        for (v, &m) in x.iter().zip(&self.nodes) {
            psi[m] = *v;
        }
        let (mut u1, mut u2) = (vec![0.0; pl], vec![0.0; pl]);
        curl_plane(&psi, &self.grid, &mut u1, &mut u2);
        (u1, u2)
    }

    fn curl_t(&self, u1: &[f64], u2: &[f64]) -> Vec<f64> {
        let mut back = vec![0.0; self.grid.plane()];
        curl_plane_t(u1, u2, &self.grid, &mut back);
        self.nodes.iter().map(|&m| back[m]).collect()
    }

    fn m(&self, v: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let dt = g.dt();
        let mut out = vec![0.0; g.plane()];
        for &m in &self.interior {
            out[m] = v[m] / dt - self.nu * lap_at(v, g, m / g.nx, m % g.nx);
        }
        out
    }

    /// Centred pressure gradient at interior nodes.
    fn grad(&self, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = &self.grid;
        let nx = g.nx;
        let (ax, ay) = (0.5 / g.hx(), 0.5 / g.hy());
        let (mut b1, mut b2) = (vec![0.0; g.plane()], vec![0.0; g.plane()]);
        for &m in &self.interior {
            b1[m] = ax * (p[m + 1] - p[m - 1]);
            b2[m] = ay * (p[m + nx] - p[m - nx]);
        }
        (b1, b2)
    }

    fn grad_t(&self, b1: &[f64], b2: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let nx = g.nx;
        let (ax, ay) = (0.5 / g.hx(), 0.5 / g.hy());
        let mut out = vec![0.0; g.plane()];
        for &m in &self.interior {
            out[m + 1] += ax * b1[m];
            out[m - 1] -= ax * b1[m];
            out[m + nx] += ay * b2[m];
            out[m - nx] -= ay * b2[m];
        }
        out
    }

    fn solve(f: &Cholesky<f64, Dyn>, b: Vec<f64>) -> Vec<f64> {
        f.solve(&DVector::from_vec(b)).data.into()
    }

    /// Control whose linear residual is `z` (interleaved residual samples).
    pub(crate) fn apply(&self, z: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let pl = g.plane();
        let fl = self.nodes.len();
        let n_psi = g.nt * fl;
        let dt = g.dt();
        let mut c = vec![0.0; n_psi + g.nt * pl];
        let (mut prev1, mut prev2) = (vec![0.0; pl], vec![0.0; pl]);
        for k in 1..=g.nt {
            let (mut r1, mut r2) = (vec![0.0; pl], vec![0.0; pl]);
            let base = (k - 1) * self.interior.len();
            for (t, &m) in self.interior.iter().enumerate() {
                r1[m] = z[2 * (base + t)] + prev1[m] / dt;
                r2[m] = z[2 * (base + t) + 1] + prev2[m] / dt;
            }
            let psi = Self::solve(&self.a, self.curl_t(&r1, &r2));
            let (u1, u2) = self.curl(&psi);
            let (m1, m2) = (self.m(&u1), self.m(&u2));
            for &m in &self.interior {
                r1[m] -= m1[m];
                r2[m] -= m2[m];
            }
            let p = Self::solve(&self.s, self.grad_t(&r1, &r2));
            c[(k - 1) * fl..k * fl].copy_from_slice(&psi);
            c[n_psi + (k - 1) * pl..n_psi + k * pl].copy_from_slice(&p);
            prev1 = u1;
            prev2 = u2;
        }
        c
    }

    /// Transpose of [`StepInverse::apply`].
    pub(crate) fn apply_t(&self, cbar: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let pl = g.plane();
        let fl = self.nodes.len();
        let n_psi = g.nt * fl;
        let dt = g.dt();
        let ni = self.interior.len();
        let mut zbar = vec![0.0; 2 * g.nt * ni];
        let (mut carry1, mut carry2) = (vec![0.0; pl], vec![0.0; pl]);
        for k in (1..=g.nt).rev() {
            let w = Self::solve(&self.s, cbar[n_psi + (k - 1) * pl..n_psi + k * pl].to_vec());
            let (q1, q2) = self.grad(&w);
            let (mq1, mq2) = (self.m(&q1), self.m(&q2));
            for &m in &self.interior {
                carry1[m] -= mq1[m];
                carry2[m] -= mq2[m];
            }
            let mut psib = self.curl_t(&carry1, &carry2);
            for (a, b) in psib.iter_mut().zip(&cbar[(k - 1) * fl..k * fl]) {
                *a += b;
            }
            let t = Self::solve(&self.a, psib);
            let (c1, c2) = self.curl(&t);
            let base = (k - 1) * ni;
            for (s, &m) in self.interior.iter().enumerate() {
                let (r1, r2) = (q1[m] + c1[m], q2[m] + c2[m]);
                zbar[2 * (base + s)] = r1;
                zbar[2 * (base + s) + 1] = r2;
                carry1[m] = r1 / dt;
                carry2[m] = r2 / dt;
            }
        }
        zbar
    }
}

/// Null space of the centred gradient on one plane: parity classes
/// without corners, and the four corners.
fn null_vectors(g: &GridSpec) -> Vec<Vec<f64>> {
    let (nx, ny) = (g.nx, g.ny);
    let corner = |j: usize, i: usize| (j == 0 || j + 1 == ny) && (i == 0 || i + 1 == nx);
    let mut out = Vec::with_capacity(8);
    for (pj, pi) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let mut v = vec![0.0; g.plane()];
        for j in 0..ny {
            for i in 0..nx {
                if j % 2 == pj && i % 2 == pi && !corner(j, i) {
                    v[j * nx + i] = 1.0;
                }
            }
        }
        out.push(v);
    }
    for (j, i) in [(0, 0), (0, nx - 1), (ny - 1, 0), (ny - 1, nx - 1)] {
        let mut v = vec![0.0; g.plane()];
        v[j * nx + i] = 1.0;
        out.push(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::grid::{ScalarField, VectorField, VectorSlice};
    use crate::nse::{residual_samples, state_from_control, ControlVector};

    fn linear_setup(nx: usize, ny: usize) -> PhysicsSetup {
        let g = GridSpec::new(nx, ny, 4, 1.0, 0.8, 0.2).unwrap();
        PhysicsSetup {
            grid: g,
            nu: 0.07,
            lambda: 0.5,
            f: VectorField::zeros(g),
            u0: VectorSlice::zeros(nx, ny),
            advection: false,
        }
    }

    fn residual_of(c: &[f64], setup: &PhysicsSetup) -> Vec<f64> {
        let cv = ControlVector::from_values(setup.grid, c.to_vec()).unwrap();
        let (u, p) = state_from_control(&cv, setup).unwrap();
        residual_samples(&u, &p, setup)
    }

    #[test]
    fn inverts_the_linear_residual() {
        for (nx, ny) in [(9, 9), (10, 7)] {
            let setup = linear_setup(nx, ny);
            let inv = StepInverse::new(&setup).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(nx as u64);
            let z: Vec<f64> = (0..2 * setup.grid.sample_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let back = residual_of(&inv.apply(&z), &setup);
            let err = back.iter().zip(&z).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-9, "{nx}x{ny}: {err:e}");
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let setup = linear_setup(8, 9);
        let inv = StepInverse::new(&setup).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z: Vec<f64> = (0..2 * setup.grid.sample_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..ControlVector::len_for(&setup.grid)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = inv.apply(&z).iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = inv.apply_t(&c).iter().zip(&z).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn null_vectors_are_invisible_to_the_gradient() {
        let setup = linear_setup(7, 8);
        let g = setup.grid;
        for v in null_vectors(&g) {
            let mut p = ScalarField::zeros(g);
            p.level_mut(2).copy_from_slice(&v);
            let u = VectorField::zeros(g);
            let y = residual_samples(&u, &p, &setup);
            assert!(y.iter().all(|x| x.abs() < 1e-12));
        }
    }
}
