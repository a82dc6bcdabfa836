//! Limited-memory BFGS with Armijo backtracking, and the `p`-continuation
//! loop over an increasing list of exponents.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::misfit::{assemble_e_inf, value_and_gradient, MisfitReport};
use crate::nse::{ControlVector, PhysicsSetup};
use crate::observation::ObservationModel;
use crate::precond::StepInverse;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimOptions {
    pub max_iters: usize,
    /// Stop when `|g| <= grad_tol * max(1, |g(c0)|)`.
    pub grad_tol: f64,
    pub memory: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-6,
            memory: 10,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
        }
    }
}

impl OptimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(Error::Config(format!("optimizer.grad_tol must be > 0 (got {})", self.grad_tol)));
        }
        if self.memory == 0 {
            return Err(Error::Config("optimizer.memory must be >= 1".into()));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::Config(format!("optimizer.armijo_c must lie in (0, 1) (got {})", self.armijo_c)));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Config(format!("optimizer.backtrack must lie in (0, 1) (got {})", self.backtrack)));
        }
        if self.max_backtracks == 0 {
            return Err(Error::Config("optimizer.max_backtracks must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSchedule {
    pub p_list: Vec<f64>,
    pub warm_start: bool,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        Self {
            p_list: vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0],
            warm_start: true,
        }
    }
}

impl ContinuationSchedule {
    pub fn validate(&self) -> Result<()> {
        let first = *self
            .p_list
            .first()
            .ok_or_else(|| Error::Config("schedule.p_list must not be empty".into()))?;
        if !(first >= 2.0) {
            return Err(Error::Config(format!("schedule.p_list must start at >= 2 (got {first})")));
        }
        if self.p_list.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("schedule.p_list entries must be finite".into()));
        }
        if self.p_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("schedule.p_list must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Gradient tolerance of the stage at exponent `p`.
    pub fn stage_tol(&self, global: f64, p: f64) -> f64 {
        global * (self.p_list[0] / p).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iter: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The line search failed even along steepest descent.
    pub stalled: bool,
    pub trace: Vec<TraceEntry>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimises `f` from `x0`; `f` returns value and gradient. Evaluation
/// errors inside the line search count as rejected trial points.
pub fn lbfgs<F>(mut f: F, x0: Vec<f64>, opts: &OptimOptions) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    opts.validate()?;
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::Domain("objective is not finite at the starting point".into()));
    }
    let target = opts.grad_tol * norm(&g).max(1.0);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut trace = vec![TraceEntry {
        iter: 0,
        value: fx,
        grad_norm: norm(&g),
        step: 0.0,
    }];
    let mut stalled = false;
    let mut iterations = 0;
    while iterations < opts.max_iters && norm(&g) > target {
        let mut d = two_loop(&g, &hist);
        if dot(&g, &d) >= 0.0 {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
        }
        let mut found = line_search(&mut f, &x, fx, &g, &d, hist.is_empty(), opts);
        if found.is_none() && !hist.is_empty() {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            found = line_search(&mut f, &x, fx, &g, &d, true, opts);
        }
        let Some((t, x_new, f_new, g_new)) = found else {
            stalled = true;
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * norm(&s) * norm(&yv) && sy > 0.0 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, yv, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        iterations += 1;
        trace.push(TraceEntry {
            iter: iterations,
            value: fx,
            grad_norm: norm(&g),
            step: t,
        });
    }
    let grad_norm = norm(&g);
    Ok(LbfgsOutcome {
        converged: grad_norm <= target,
        x,
        value: fx,
        grad: g,
        grad_norm,
        iterations,
        stalled,
        trace,
    })
}

fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alpha = vec![0.0; hist.len()];
    for (a, (s, y, rho)) in alpha.iter_mut().zip(hist).rev() {
        *a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= *a * yi);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (a, (s, y, rho)) in alpha.iter().zip(hist) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

type Trial = (f64, Vec<f64>, f64, Vec<f64>);

fn line_search<F>(
    f: &mut F,
    x: &[f64],
    fx: f64,
    g: &[f64],
    d: &[f64],
    steepest: bool,
    opts: &OptimOptions,
) -> Option<Trial>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let slope = dot(g, d);
    let mut t = if steepest { (1.0 / norm(d)).min(1.0) } else { 1.0 };
    for _ in 0..=opts.max_backtracks {
        let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        if let Ok((ft, gt)) = f(&xt) {
            if ft.is_finite() && ft < fx && ft <= fx + opts.armijo_c * t * slope {
                return Some((t, xt, ft, gt));
            }
        }
        t *= opts.backtrack;
    }
    None
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub control: ControlVector,
    pub report: MisfitReport,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stalled: bool,
    pub trace: Vec<TraceEntry>,
}

/// Minimises `E_p` from `c0`.
///
/// The search runs in the coordinates `z` of `c = c0 + J^-1 z`, where `J`
/// is the linear part of the control-to-residual map, so `z` is roughly the
/// model error itself; `grad_tol` applies to the gradient in those
/// coordinates.
pub fn minimize_e_p(
    c0: &ControlVector,
    setup: &PhysicsSetup,
    model: &ObservationModel,
    p: f64,
    opts: &OptimOptions,
) -> Result<MinimizeResult> {
    let grid = c0.grid;
    let inv = StepInverse::new(setup)?;
    let lift = |z: &[f64]| ControlVector {
        grid,
        values: c0.values.iter().zip(inv.apply(z)).map(|(a, b)| a + b).collect(),
    };
    let objective = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (r, g) = value_and_gradient(&lift(z), setup, model, p)?;
        Ok((r.e_p, inv.apply_t(&g.values)))
    };
    let out = lbfgs(objective, vec![0.0; 2 * grid.sample_count()], opts)?;
    let control = if out.iterations == 0 { c0.clone() } else { lift(&out.x) };
    let report = crate::misfit::assemble_e_p(&control, setup, model, p)?;
    Ok(MinimizeResult {
        control,
        report,
        grad_norm: out.grad_norm,
        iterations: out.iterations,
        converged: out.converged,
        stalled: out.stalled,
        trace: out.trace,
    })
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub p: f64,
    pub grad_tol: f64,
    pub result: MinimizeResult,
    /// `E_inf` and sup norms at the stage minimiser.
    pub e_inf: MisfitReport,
    pub wall_time_ms: f64,
}

pub fn run_continuation(
    c0: &ControlVector,
    setup: &PhysicsSetup,
    model: &ObservationModel,
    schedule: &ContinuationSchedule,
    opts: &OptimOptions,
) -> Result<Vec<Stage>> {
    schedule.validate()?;
    let mut stages: Vec<Stage> = Vec::with_capacity(schedule.p_list.len());
    for &p in &schedule.p_list {
        let start = match stages.last() {
            Some(s) if schedule.warm_start => &s.result.control,
            _ => c0,
        };
        let stage_opts = OptimOptions {
            grad_tol: schedule.stage_tol(opts.grad_tol, p),
            ..*opts
        };
        let clock = std::time::Instant::now();
        let result = minimize_e_p(start, setup, model, p, &stage_opts)?;
        let wall_time_ms = clock.elapsed().as_secs_f64() * 1e3;
        if !result.converged {
            log::warn!(
                "stage p = {p} stopped after {} iterations with |g| = {:e}",
                result.iterations,
                result.grad_norm
            );
        }
        let e_inf = assemble_e_inf(&result.control, setup, model)?;
        stages.push(Stage {
            p,
            grad_tol: stage_opts.grad_tol,
            result,
            e_inf,
            wall_time_ms,
        });
    }
    Ok(stages)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::grid::{GridSpec, VectorField, VectorSlice};
    use crate::observation::{default_mask, ObservationKind};

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let out = lbfgs(rosenbrock, vec![-1.2, 1.0], &OptimOptions { grad_tol: 1e-10, ..Default::default() }).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-8 && (out.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let g = GridSpec::unit_square(7, 3, 0.1).unwrap();
        let setup = PhysicsSetup::new(g, 0.1, 0.5, VectorField::zeros(g), VectorSlice::zeros(7, 7)).unwrap();
        let model = ObservationModel::new(
            ObservationKind::MaskedVelocity,
            g,
            default_mask(7, 7, 1),
            vec![0.0; 2 * g.sample_count()],
        )
        .unwrap();
        let c0 = ControlVector::zeros(g);
        let r = minimize_e_p(&c0, &setup, &model, 4.0, &OptimOptions::default()).unwrap();
        assert!(r.iterations <= 1 && r.converged);
        assert_eq!(r.control, c0);
        assert!((r.report.e_p - 0.25).abs() < 1e-15);
    }

    #[test]
    fn schedule_validation() {
        let bad = |p_list: Vec<f64>| ContinuationSchedule { p_list, warm_start: true }.validate().is_err();
        assert!(bad(vec![]));
        assert!(bad(vec![1.5, 4.0]));
        assert!(bad(vec![2.0, 2.0]));
        assert!(bad(vec![2.0, f64::INFINITY]));
        assert!(!bad(vec![2.0, 3.0]));
        assert!(OptimOptions { memory: 0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn trace_is_strictly_decreasing(a in -3.0f64..3.0, b in -3.0f64..3.0, p in 2.0f64..12.0) {
            // a dotted-norm flavoured objective: smooth, non-quadratic
            let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
                let r = |v: f64| (v * v + 1.0 / (p * p)).sqrt();
                let terms = [x[0] - 1.0, x[1] + 0.5 * x[0], x[0] * x[1] - 0.3];
                let s: f64 = terms.iter().map(|t| r(*t).powf(p)).sum::<f64>() / 3.0;
                let val = s.powf(1.0 / p);
                let coef: Vec<f64> = terms.iter().map(|t| r(*t).powf(p - 2.0) * t * s.powf(1.0 / p - 1.0) / 3.0).collect();
                let g = vec![coef[0] + 0.5 * coef[1] + coef[2] * x[1], coef[1] + coef[2] * x[0]];
                Ok((val, g))
            };
            let out = lbfgs(f, vec![a, b], &OptimOptions { max_iters: 60, ..Default::default() }).unwrap();
            for w in out.trace.windows(2) {
                prop_assert!(w[1].value < w[0].value);
            }
        }
    }
}
