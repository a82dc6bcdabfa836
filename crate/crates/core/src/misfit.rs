//! The `L^p` and `L^inf` misfits over a control vector and the exact
//! reverse-mode gradient of `E_p`.
//!
//! `E_p = (1 - lambda) ||K[u]||_p + lambda ||y||_p` with dotted norms over
//! the residual samples (interior nodes, levels `1..=nt`, equal weights).

use crate::error::Result;
use crate::grid::{spatial_gradient, ScalarField, TensorField, VectorField};
use crate::norms::{dotted_lp_norm, dual_weight_raw, sup_norm, PExponent, WeightedSamples};
use crate::nse::{
    control_adjoint, residual_adjoint, residual_samples, state_from_control, ControlVector,
    PhysicsSetup,
};
use crate::observation::{eval_k, ObservationModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisfitReport {
    pub p: PExponent,
    /// `E_p`, or `E_inf` when `p` is infinite.
    pub e_p: f64,
    pub term_k: f64,
    pub term_y: f64,
    pub sup_k: f64,
    pub sup_y: f64,
}

/// Everything the misfit chain produces for one control.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub u: VectorField,
    pub p: ScalarField,
    pub du: TensorField,
    pub y: WeightedSamples,
    pub k: WeightedSamples,
}

pub fn evaluate(c: &ControlVector, setup: &PhysicsSetup, model: &ObservationModel) -> Result<Evaluation> {
    let (u, p) = state_from_control(c, setup)?;
    let du = spatial_gradient(&u)?;
    let k = eval_k(&u, &du, model)?.samples();
    let y = WeightedSamples {
        dim: 2,
        values: residual_samples(&u, &p, setup),
        weights: k.weights.clone(),
    };
    Ok(Evaluation { u, p, du, y, k })
}

impl Evaluation {
    pub fn report(&self, lambda: f64, p: PExponent) -> Result<MisfitReport> {
        let (sup_k, sup_y) = (sup_norm(&self.k), sup_norm(&self.y));
        let (nk, ny) = match p {
            PExponent::Infinity => (sup_k, sup_y),
            PExponent::Finite(_) => (dotted_lp_norm(&self.k, p)?, dotted_lp_norm(&self.y, p)?),
        };
        let term_k = (1.0 - lambda) * nk;
        let term_y = lambda * ny;
        Ok(MisfitReport {
            p,
            e_p: term_k + term_y,
            term_k,
            term_y,
            sup_k,
            sup_y,
        })
    }
}

pub fn assemble_e_p(
    c: &ControlVector,
    setup: &PhysicsSetup,
    model: &ObservationModel,
    p: f64,
) -> Result<MisfitReport> {
    let p = PExponent::finite(p)?;
    evaluate(c, setup, model)?.report(setup.lambda, p)
}

pub fn assemble_e_inf(c: &ControlVector, setup: &PhysicsSetup, model: &ObservationModel) -> Result<MisfitReport> {
    evaluate(c, setup, model)?.report(setup.lambda, PExponent::Infinity)
}

pub fn gradient_e_p(
    c: &ControlVector,
    setup: &PhysicsSetup,
    model: &ObservationModel,
    p: f64,
) -> Result<ControlVector> {
    Ok(value_and_gradient(c, setup, model, p)?.1)
}

/// `E_p` and its gradient with respect to the control in one pass.
pub fn value_and_gradient(
    c: &ControlVector,
    setup: &PhysicsSetup,
    model: &ObservationModel,
    p: f64,
) -> Result<(MisfitReport, ControlVector)> {
    let pe = PExponent::finite(p)?;
    let ev = evaluate(c, setup, model)?;
    let report = ev.report(setup.lambda, pe)?;
    let g = setup.grid;
    let lambda = setup.lambda;

    // d||h||/dh_s = w_s M_p(h)_s
    let mut ybar = dual_weight_raw(&ev.y, p);
    for (v, w) in ybar.chunks_mut(2).zip(&ev.y.weights) {
        v.iter_mut().for_each(|x| *x *= lambda * w);
    }
    let mut kbar = dual_weight_raw(&ev.k, p);
    let dim = ev.k.dim;
    for (v, w) in kbar.chunks_mut(dim).zip(&ev.k.weights) {
        v.iter_mut().for_each(|x| *x *= (1.0 - lambda) * w);
    }

    let mut ubar = VectorField::zeros(g);
    let mut pbar = ScalarField::zeros(g);
    let nx = g.nx;
    let (ax, ay) = (0.5 / g.hx(), 0.5 / g.hy());
    let d_a = model.kind.d_a();
    for (s, (k, j, i)) in g.samples().enumerate() {
        if !model.active(j, i) {
            continue;
        }
        let n = g.idx(k, j, i);
        let d_eta = model.kind.d_eta([ev.u.u1[n], ev.u.u2[n]]);
        let mut abar = [0.0; 4];
        for c in 0..dim {
            let kb = kbar[s * dim + c];
            ubar.u1[n] += kb * d_eta[c][0];
            ubar.u2[n] += kb * d_eta[c][1];
            for (a, d) in abar.iter_mut().zip(&d_a[c]) {
                *a += kb * d;
            }
        }
        if abar != [0.0; 4] {
            ubar.u1[n + 1] += abar[0] * ax;
            ubar.u1[n - 1] -= abar[0] * ax;
            ubar.u1[n + nx] += abar[1] * ay;
            ubar.u1[n - nx] -= abar[1] * ay;
            ubar.u2[n + 1] += abar[2] * ax;
            ubar.u2[n - 1] -= abar[2] * ax;
            ubar.u2[n + nx] += abar[3] * ay;
            ubar.u2[n - nx] -= abar[3] * ay;
        }
    }
    residual_adjoint(&ev.u, &ybar, setup, &mut ubar, &mut pbar);
    Ok((report, control_adjoint(&ubar, &pbar)))
}

/// Worst relative gap between `<grad E_p, d>` and the central difference
/// `(E_p(c + eps d) - E_p(c - eps d)) / 2 eps` over `dirs`.
pub fn directional_fd_check(
    c: &ControlVector,
    setup: &PhysicsSetup,
    model: &ObservationModel,
    p: f64,
    dirs: &[ControlVector],
    eps: f64,
) -> Result<f64> {
    let grad = gradient_e_p(c, setup, model, p)?;
    let mut worst = 0.0f64;
    for dir in dirs {
        let analytic: f64 = grad.values.iter().zip(&dir.values).map(|(a, b)| a * b).sum();
        let shifted = |t: f64| -> Result<f64> {
            let v = c.values.iter().zip(&dir.values).map(|(a, b)| a + t * b).collect();
            Ok(assemble_e_p(&ControlVector::from_values(c.grid, v)?, setup, model, p)?.e_p)
        };
        let fd = (shifted(eps)? - shifted(-eps)?) / (2.0 * eps);
        let scale = analytic.abs().max(fd.abs());
        if scale > 0.0 {
            worst = worst.max((analytic - fd).abs() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::grid::{GridSpec, VectorSlice};
    use crate::nse::{clamped_curl, reference_solve, ReferenceOptions};
    use crate::observation::{default_mask, synth_data, ObservationKind};

    fn vortex(g: &GridSpec, amp: f64) -> VectorSlice {
        let psi: Vec<f64> = (0..g.ny)
            .flat_map(|j| (0..g.nx).map(move |i| (i, j)))
            .map(|(i, j)| amp * ((PI * g.x(i)).sin() * (PI * g.y(j)).sin()).powi(2))
            .collect();
        clamped_curl(g, &psi)
    }

    fn problem(kind: ObservationKind, lambda: f64) -> (PhysicsSetup, ObservationModel) {
        let g = GridSpec::unit_square(8, 6, 0.3).unwrap();
        let f = VectorField::from_fn(g, |x, y, _| [(PI * y).sin(), (PI * x).sin() * 0.5]);
        let setup = PhysicsSetup {
            grid: g,
            nu: 0.05,
            lambda,
            f,
            u0: vortex(&g, 0.2),
            advection: true,
        };
        let truth = reference_solve(&setup, ReferenceOptions::default()).unwrap();
        let model = synth_data(&truth.u, kind, default_mask(8, 8, 2), 0.05, 11).unwrap();
        (setup, model)
    }

    fn random(g: GridSpec, seed: u64, scale: f64) -> ControlVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..ControlVector::len_for(&g)).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        ControlVector::from_values(g, v).unwrap()
    }

    fn directional_check(kind: ObservationKind, p: f64, seed: u64) {
        let (setup, model) = problem(kind, 0.5);
        let g = setup.grid;
        let c = random(g, seed, 0.05);
        let dirs: Vec<_> = (0..20).map(|d| random(g, 1000 + seed * 100 + d, 1.0)).collect();
        let rel = directional_fd_check(&c, &setup, &model, p, &dirs, 1e-6).unwrap();
        assert!(rel <= 1e-5, "{kind:?} p={p}: rel {rel:e}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        for (s, p) in [2.0, 6.0].into_iter().enumerate() {
            directional_check(ObservationKind::MaskedVelocity, p, s as u64);
        }
    }

    #[test]
    fn gradient_matches_for_nonlinear_observations() {
        directional_check(ObservationKind::Vorticity, 4.0, 3);
        directional_check(ObservationKind::SpeedSquared, 3.0, 4);
    }

    #[test]
    fn truth_control_hits_the_floor() {
        let (mut setup, _) = problem(ObservationKind::MaskedVelocity, 0.5);
        let truth = reference_solve(&setup, ReferenceOptions::default()).unwrap();
        let model = synth_data(&truth.u, ObservationKind::MaskedVelocity, default_mask(8, 8, 2), 0.0, 0).unwrap();
        for lambda in [0.3, 0.5] {
            setup.lambda = lambda;
            for p in [2.0, 8.0, 64.0] {
                let r = assemble_e_p(&truth.control, &setup, &model, p).unwrap();
                assert!((r.e_p - 1.0 / p).abs() < 1e-9, "{} vs {}", r.e_p, 1.0 / p);
                assert!((r.term_k - (1.0 - lambda) / p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn near_unit_lambda_is_the_residual_norm() {
        let (mut setup, model) = problem(ObservationKind::MaskedVelocity, 0.999);
        setup.lambda = 0.999;
        let c = random(setup.grid, 5, 0.1);
        let r = assemble_e_p(&c, &setup, &model, 4.0).unwrap();
        let (u, p) = state_from_control(&c, &setup).unwrap();
        let y = crate::nse::residual_y(&u, &p, &setup).unwrap();
        let g = setup.grid;
        let vals: Vec<f64> = g.samples().flat_map(|(k, j, i)| {
            let n = g.idx(k, j, i);
            [y.u1[n], y.u2[n]]
        }).collect();
        let direct = dotted_lp_norm(&WeightedSamples::uniform(2, vals).unwrap(), PExponent::Finite(4.0)).unwrap();
        assert!((r.term_y - 0.999 * direct).abs() < 1e-14);
        assert!((r.e_p - direct).abs() <= 0.001 * (r.term_k / 0.001 + direct) + 1e-12);
    }

    #[test]
    fn data_offset_only_moves_the_observation_term() {
        let (setup, _) = problem(ObservationKind::MaskedVelocity, 0.5);
        let g = setup.grid;
        let truth = reference_solve(&setup, ReferenceOptions::default()).unwrap();
        let mask = default_mask(8, 8, 1);
        let base = synth_data(&truth.u, ObservationKind::MaskedVelocity, mask.clone(), 0.0, 0).unwrap();
        let offset = |scale: f64| {
            let mut m = base.clone();
            for (s, (_, j, i)) in g.samples().enumerate() {
                let d = 0.3 * (1.0 + (j * 7 + i) as f64 / 50.0);
                m.data_q[2 * s] += scale * d;
            }
            m
        };
        let c = ControlVector::zeros(g);
        let p = 4.0;
        let r1 = assemble_e_p(&c, &setup, &offset(1.0), p).unwrap();
        let r2 = assemble_e_p(&c, &setup, &offset(2.0), p).unwrap();
        assert_eq!(r1.term_y, r2.term_y);
        // direct recomputation of term_K from K = Q(0) - q = -(q)
        let direct = |m: &ObservationModel| {
            let vals: Vec<f64> = m.data_q.iter().map(|v| -v).collect();
            0.5 * dotted_lp_norm(&WeightedSamples::uniform(2, vals).unwrap(), PExponent::Finite(p)).unwrap()
        };
        assert!((r1.term_k - direct(&offset(1.0))).abs() < 1e-14);
        assert!((r2.term_k - direct(&offset(2.0))).abs() < 1e-14);
        assert!(r2.term_k > r1.term_k);
    }

    #[test]
    fn zero_configuration_has_zero_sup_misfit() {
        let g = GridSpec::unit_square(7, 3, 0.1).unwrap();
        let setup = PhysicsSetup::new(g, 0.1, 0.5, VectorField::zeros(g), VectorSlice::zeros(7, 7)).unwrap();
        let model = ObservationModel::new(
            ObservationKind::MaskedVelocity,
            g,
            default_mask(7, 7, 1),
            vec![0.0; 2 * g.sample_count()],
        )
        .unwrap();
        let r = assemble_e_inf(&ControlVector::zeros(g), &setup, &model).unwrap();
        assert_eq!(r.e_p, 0.0);
        let grad = gradient_e_p(&ControlVector::zeros(g), &setup, &model, 8.0).unwrap();
        assert!(grad.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_misfit_sup() {
        let g = GridSpec::unit_square(7, 3, 0.1).unwrap();
        let setup = PhysicsSetup::new(g, 0.1, 0.25, VectorField::zeros(g), VectorSlice::zeros(7, 7)).unwrap();
        let model = ObservationModel::new(
            ObservationKind::Vorticity,
            g,
            default_mask(7, 7, 1),
            vec![-0.8; g.sample_count()],
        )
        .unwrap();
        let r = assemble_e_inf(&ControlVector::zeros(g), &setup, &model).unwrap();
        assert!((r.e_p - 0.75 * 0.8).abs() < 1e-15);
    }

    #[test]
    fn e_p_approaches_e_inf() {
        let (setup, model) = problem(ObservationKind::MaskedVelocity, 0.5);
        let c = random(setup.grid, 9, 0.2);
        let inf = assemble_e_inf(&c, &setup, &model).unwrap().e_p;
        let mut prev = f64::INFINITY;
        for p in [16.0, 32.0, 64.0, 128.0] {
            let e = assemble_e_p(&c, &setup, &model, p).unwrap().e_p;
            assert!(e <= inf + 1.0 / p + 1e-12);
            let gap = (e - inf).abs();
            assert!(gap < prev);
            prev = gap;
        }
    }

    #[test]
    fn floor_holds_for_random_controls() {
        let (setup, model) = problem(ObservationKind::SpeedSquared, 0.4);
        for seed in 0..5 {
            let c = random(setup.grid, seed, 0.3);
            for p in [2.0, 10.0, 100.0] {
                let r = assemble_e_p(&c, &setup, &model, p).unwrap();
                assert!(r.term_k >= 0.6 / p * (1.0 - 1e-12));
                assert!(r.term_y >= 0.4 / p * (1.0 - 1e-12));
                assert!((r.e_p - r.term_k - r.term_y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gradient_splits_across_channels() {
        let (setup, model) = problem(ObservationKind::MaskedVelocity, 0.5);
        let c = random(setup.grid, 21, 0.1);
        let p = 6.0;
        let channel = |lambda: f64| {
            let s = PhysicsSetup { lambda, ..setup.clone() };
            gradient_e_p(&c, &s, &model, p).unwrap()
        };
        let (only_k, only_y, mixed) = (channel(0.0), channel(1.0), channel(0.3));
        for ((a, b), m) in only_k.values.iter().zip(&only_y.values).zip(&mixed.values) {
            let comb = 0.7 * a + 0.3 * b;
            assert!((comb - m).abs() <= 1e-13 * (1.0 + m.abs()));
        }
    }
}
