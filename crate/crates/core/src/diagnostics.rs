//! Dual-weight measures, their concentration, the density estimate, and
//! Euler–Lagrange residuals at computed minimisers.
//!
//! Measures live on the residual samples with normalised cell volumes, so
//! the total variation of `M_p(h) dx` is at most one.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{spatial_gradient, GridSpec, ScalarField, TensorField, VectorField};
use crate::misfit::evaluate;
use crate::norms::{dual_weight, euclid, PExponent, WeightedSamples};
use crate::nse::{clamped_curl, linearized_residual, ControlVector, PhysicsSetup};
use crate::observation::{eval_k_a, eval_k_eta, ObsField, ObservationModel};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub dim: usize,
    /// Interleaved vector density per cell.
    pub density: Vec<f64>,
    pub cell_volume: Vec<f64>,
    /// `|h|` of the field the measure was built from.
    pub field_magnitude: Vec<f64>,
}

impl DiscreteMeasure {
    /// `|m|(cell s)`.
    pub fn cell_mass(&self, s: usize) -> f64 {
        self.cell_volume[s] * euclid(&self.density[s * self.dim..(s + 1) * self.dim])
    }

    pub fn len(&self) -> usize {
        self.cell_volume.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_volume.is_empty()
    }

    pub fn mass(&self) -> f64 {
        (0..self.len()).map(|s| self.cell_mass(s)).sum()
    }

    fn max_field(&self) -> f64 {
        self.field_magnitude.iter().fold(0.0, |m, v| m.max(*v))
    }

    /// Pairing `sum_s vol_s m_s . v_s` with an interleaved vector field.
    pub fn pair(&self, v: &[f64]) -> f64 {
        (0..self.len())
            .map(|s| {
                let a = &self.density[s * self.dim..(s + 1) * self.dim];
                let b = &v[s * self.dim..(s + 1) * self.dim];
                self.cell_volume[s] * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
            })
            .sum()
    }
}

/// `M_p(h) dx` for a sampled field.
pub fn build_measure(h: &WeightedSamples, p: f64) -> Result<DiscreteMeasure> {
    let w = dual_weight(h, PExponent::finite(p)?)?;
    let zero = h.values.iter().all(|v| *v == 0.0);
    Ok(DiscreteMeasure {
        dim: h.dim,
        density: if zero { vec![0.0; h.values.len()] } else { w.values },
        cell_volume: h.weights.clone(),
        field_magnitude: h.magnitudes(),
    })
}

/// Residual samples of a full-grid vector field (interior, levels `1..=nt`).
pub fn interior_samples(y: &VectorField) -> WeightedSamples {
    let g = &y.grid;
    let n = g.sample_count();
    let mut values = Vec::with_capacity(2 * n);
    for (k, j, i) in g.samples() {
        let m = g.idx(k, j, i);
        values.push(y.u1[m]);
        values.push(y.u2[m]);
    }
    WeightedSamples {
        dim: 2,
        values,
        weights: vec![1.0 / n as f64; n],
    }
}

/// `sigma_p = M_p(y_p) dx`.
pub fn build_sigma(y_p: &VectorField, p: f64) -> Result<DiscreteMeasure> {
    build_measure(&interior_samples(y_p), p)
}

/// `Sigma_p = M_p(K[u_p]) dx`.
#[allow(non_snake_case)]
pub fn build_Sigma(k_p: &ObsField, p: f64) -> Result<DiscreteMeasure> {
    build_measure(&k_p.samples(), p)
}

/// Total variation of `m` on `{|field| < max|field| - eps}`.
pub fn concentration_mass(m: &DiscreteMeasure, eps: f64) -> Result<f64> {
    let top = m.max_field();
    if !(eps > 0.0 && eps < top) {
        return Err(Error::Domain(format!("need 0 < eps < max|field| = {top} (got {eps})")));
    }
    Ok((0..m.len())
        .filter(|&s| m.field_magnitude[s] < top - eps)
        .map(|s| m.cell_mass(s))
        .sum())
}

/// Fraction of the mass of `m` carried by cells with `|field| >= max - tol`.
pub fn sigma_infty_support_check(m: &DiscreteMeasure, tol: f64) -> f64 {
    let top = m.max_field();
    let total = m.mass();
    if total == 0.0 {
        return 1.0;
    }
    let near: f64 = (0..m.len())
        .filter(|&s| m.field_magnitude[s] >= top - tol)
        .map(|s| m.cell_mass(s))
        .sum();
    near / total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// `(1 - eps / (2 M - eps))^(p - 1)`.
pub fn density_rhs(m_sup: f64, eps: f64, p: f64) -> f64 {
    (1.0 - eps / (2.0 * m_sup - eps)).powf(p - 1.0)
}

/// Density estimate on `A = {|y_p| <= M - eps}` intersected with `subset`:
/// `sigma_p(A n B) / |A n B|` against [`density_rhs`]. `m_sup` stands in
/// for the sup of the limit field.
pub fn density_bound_check(
    y_p: &WeightedSamples,
    p: f64,
    eps: f64,
    m_sup: f64,
    subset: &[bool],
) -> Result<DensityCheck> {
    if !(m_sup > 0.0 && eps > 0.0 && eps < m_sup) {
        return Err(Error::Domain(format!("need 0 < eps < M (got eps = {eps}, M = {m_sup})")));
    }
    if subset.len() != y_p.len() {
        return Err(Error::Config("density check subset does not match the samples".into()));
    }
    let sigma = build_measure(y_p, p)?;
    let (mut num, mut den) = (0.0, 0.0);
    for s in 0..y_p.len() {
        if subset[s] && sigma.field_magnitude[s] <= m_sup - eps {
            num += sigma.cell_mass(s);
            den += sigma.cell_volume[s];
        }
    }
    if den == 0.0 {
        return Err(Error::Domain("density check set is empty".into()));
    }
    let lhs = num / den;
    let rhs = density_rhs(m_sup, eps, p);
    Ok(DensityCheck {
        lhs,
        rhs,
        pass: lhs <= rhs * (1.0 + 1e-8),
    })
}

/// A velocity test `curl(psi)` vanishing at `t = 0` with a pressure test.
#[derive(Debug, Clone, PartialEq)]
pub struct TestPair {
    /// Stream function of the velocity test (zero at level 0).
    pub psi: ScalarField,
    pub velocity: VectorField,
    pub pressure: ScalarField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestBank {
    pub pairs: Vec<TestPair>,
}

fn sin2(s: f64) -> f64 {
    if (0.0..=1.0).contains(&s) {
        (PI * s).sin().powi(2)
    } else {
        0.0
    }
}

impl TestBank {
    /// Twelve pairs: bump stream functions at three widths, two placements
    /// and two temporal profiles; four cosine pressures at three temporal
    /// profiles.
    pub fn standard(g: &GridSpec) -> Self {
        let (x0, y0) = (2.0 * g.hx(), 2.0 * g.hy());
        let (wx, wy) = (g.lx - 4.0 * g.hx(), g.ly - 4.0 * g.hy());
        let t_end = g.t_end;
        let mut pairs = Vec::with_capacity(12);
        for n in 0..12 {
            let scale = 1 + (n / 4) % 3;
            let placement = (n / 2) % 2;
            let profile = n % 2;
            let (bx, by) = (wx / scale as f64, wy / scale as f64);
            let (ax, ay) = if placement == 0 {
                (x0, y0)
            } else {
                (x0 + wx - bx, y0 + wy - by)
            };
            let twist = scale == 1 && placement == 1;
            let mut velocity = VectorField::zeros(*g);
            let mut psi_field = ScalarField::zeros(*g);
            for k in 1..=g.nt {
                let t = g.t(k) / t_end;
                let amp = if profile == 0 { t } else { (0.5 * PI * t).sin() };
                let psi: Vec<f64> = (0..g.ny)
                    .flat_map(|j| (0..g.nx).map(move |i| (i, j)))
                    .map(|(i, j)| {
                        let (sx, sy) = ((g.x(i) - ax) / bx, (g.y(j) - ay) / by);
                        let mut v = amp * sin2(sx) * sin2(sy);
                        if twist {
                            v *= (PI * sx).cos();
                        }
                        v
                    })
                    .collect();
                velocity.set_slice(k, &clamped_curl(g, &psi));
                psi_field.level_mut(k).copy_from_slice(&psi);
            }
            let mode = n % 4;
            let tprof = n % 3;
            let (lx, ly) = (g.lx, g.ly);
            let mut pressure = ScalarField::from_fn(*g, |x, y, t| {
                let s = match tprof {
                    0 => 1.0,
                    1 => t / t_end,
                    _ => (PI * t / t_end).cos(),
                };
                let (cx, cy) = ((PI * x / lx).cos(), (PI * y / ly).cos());
                s * match mode {
                    0 => cx,
                    1 => cy,
                    2 => cx * cy,
                    _ => (2.0 * PI * x / lx).cos() * cy,
                }
            });
            pressure.level_mut(0).iter_mut().for_each(|v| *v = 0.0);
            pressure = crate::grid::zero_mean_project(&pressure).expect("finite test pressure");
            pairs.push(TestPair {
                psi: psi_field,
                velocity,
                pressure,
            });
        }
        Self { pairs }
    }
}

fn rms(values: &[f64], chunk: usize) -> f64 {
    let n = values.len() / chunk;
    (values.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt()
}

/// Quantities at one control that every pairing needs.
struct Linearization<'a> {
    setup: &'a PhysicsSetup,
    u: VectorField,
    my: WeightedSamples,
    mk: WeightedSamples,
    k_eta: Vec<f64>,
    k_a: Vec<f64>,
    dim: usize,
}

impl<'a> Linearization<'a> {
    fn new(c: &ControlVector, p: f64, setup: &'a PhysicsSetup, model: &ObservationModel) -> Result<Self> {
        let pe = PExponent::finite(p)?;
        let ev = evaluate(c, setup, model)?;
        Ok(Self {
            setup,
            my: dual_weight(&ev.y, pe)?,
            mk: dual_weight(&ev.k, pe)?,
            k_eta: eval_k_eta(&ev.u, &ev.du, model)?,
            k_a: eval_k_a(&ev.u, &ev.du, model)?,
            dim: ev.k.dim,
            u: ev.u,
        })
    }

    /// `K_eta u + K_A : Du` on the samples, `N` values each.
    fn observation(&self, u: &VectorField, du: &TensorField) -> Vec<f64> {
        let g = &self.setup.grid;
        let dim = self.dim;
        let mut out = vec![0.0; dim * g.sample_count()];
        for (s, (k, j, i)) in g.samples().enumerate() {
            let n = g.idx(k, j, i);
            let a = du.at(n);
            for cpt in 0..dim {
                let row = s * dim + cpt;
                out[row] = self.k_eta[2 * row] * u.u1[n]
                    + self.k_eta[2 * row + 1] * u.u2[n]
                    + (0..4).map(|q| self.k_a[4 * row + q] * a[q]).sum::<f64>();
            }
        }
        out
    }

    /// `(<Sigma_p, K_eta u + K_A : Du>, <sigma_p, lin. residual>)` and the test norm.
    fn velocity_pairings(&self, u: &VectorField) -> Result<(f64, f64, f64)> {
        let g = self.setup.grid;
        let w = 1.0 / g.sample_count() as f64;
        let du = spatial_gradient(u)?;
        let obs = self.observation(u, &du);
        let obs_pair = w * obs.iter().zip(&self.mk.values).map(|(a, b)| a * b).sum::<f64>();
        let zero_p = ScalarField::zeros(g);
        let lin = linearized_residual(&self.u, u, &zero_p, self.setup);
        let model_pair = w * lin.iter().zip(&self.my.values).map(|(a, b)| a * b).sum::<f64>();
        let plain = PhysicsSetup {
            nu: 0.0,
            advection: false,
            ..self.setup.clone()
        };
        let dt_u = linearized_residual(&VectorField::zeros(g), u, &zero_p, &plain);
        let grads: Vec<f64> = g.samples().flat_map(|(k, j, i)| du.at(g.idx(k, j, i))).collect();
        let norm = rms(&interior_samples(u).values, 2) + rms(&grads, 4) + rms(&dt_u, 2);
        Ok((obs_pair, model_pair, norm))
    }

    /// `(<sigma_p, D p>, test norm)`.
    fn pressure_pairing(&self, pr: &ScalarField) -> (f64, f64) {
        let g = self.setup.grid;
        let w = 1.0 / g.sample_count() as f64;
        let zero_u = VectorField::zeros(g);
        let dp = linearized_residual(&zero_u, &zero_u, pr, self.setup);
        let pairing = w * dp.iter().zip(&self.my.values).map(|(a, b)| a * b).sum::<f64>();
        let ps: Vec<f64> = g.samples().map(|(k, j, i)| pr.at(k, j, i)).collect();
        (pairing, rms(&ps, 1) + rms(&dp, 2))
    }
}

/// Euler–Lagrange defects `(r_momentum, r_pressure)` at control `c`,
/// maximised over the bank and normalised by the test norms.
///
/// The momentum defect is `(1 - lambda) <Sigma_p, K_eta u + K_A : Du>
/// + lambda <sigma_p, d_t u - nu Lap u + (u.D)u_p + (u_p.D)u>`; the pressure
/// defect is `<sigma_p, D p>`.
pub fn el_residual(
    c: &ControlVector,
    p: f64,
    setup: &PhysicsSetup,
    model: &ObservationModel,
    bank: &TestBank,
) -> Result<(f64, f64)> {
    if bank.pairs.is_empty() {
        return Err(Error::Config("Euler-Lagrange test bank is empty".into()));
    }
    let lin = Linearization::new(c, p, setup, model)?;
    let lambda = setup.lambda;
    let per_pair: Vec<(f64, f64)> = bank
        .pairs
        .par_iter()
        .map(|pair| -> Result<(f64, f64)> {
            let (obs, mdl, norm_u) = lin.velocity_pairings(&pair.velocity)?;
            let (pp, norm_p) = lin.pressure_pairing(&pair.pressure);
            Ok((((1.0 - lambda) * obs + lambda * mdl).abs() / norm_u, pp.abs() / norm_p))
        })
        .collect::<Result<_>>()?;
    Ok(per_pair
        .into_iter()
        .fold((0.0f64, 0.0f64), |(a, b), (m, q)| (a.max(m), b.max(q))))
}

/// One row per test pair: `<Sigma_p, K_eta u + K_A : Du>`, `<sigma_p, lin. residual(u)>`
/// and `<sigma_p, D p>`. Tracked across stages as a weak* Cauchy table.
pub fn pairing_table(
    c: &ControlVector,
    p: f64,
    setup: &PhysicsSetup,
    model: &ObservationModel,
    bank: &TestBank,
) -> Result<Vec<[f64; 3]>> {
    let lin = Linearization::new(c, p, setup, model)?;
    bank.pairs
        .par_iter()
        .map(|pair| {
            let (obs, mdl, _) = lin.velocity_pairings(&pair.velocity)?;
            Ok([obs, mdl, lin.pressure_pairing(&pair.pressure).0])
        })
        .collect()
}
