//! Twin experiment: truth from the reference solver, synthetic data,
//! p-continuation, diagnostics and artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use super::config::ExperimentConfig;
use super::svg::{heatmap, line_plot, Series};
use crate::diagnostics::{
    build_measure, concentration_mass, density_bound_check, el_residual, pairing_table,
    sigma_infty_support_check, DensityCheck, TestBank,
};
use crate::error::Result;
use crate::grid::{write_field, write_mask, FieldFile, VectorField};
use crate::misfit::{assemble_e_p, evaluate};
use crate::nse::{reference_solve, stream_function, ControlVector, PhysicsSetup, ReferenceOptions, ReferenceSolution};
use crate::observation::{synth_data, ObservationModel};
use crate::optimizer::{run_continuation, Stage};

/// Fractions of `max |field|` used for the sub-level concentration masses.
pub const CONC_FRACTIONS: [f64; 3] = [0.05, 0.1, 0.2];
/// Density check `eps` as a fraction of `M = max |y|` at the last stage.
pub const DENSITY_EPS_FRACTION: f64 = 0.2;
/// Support tolerance for `Sigma_p` as a fraction of `max |K|`.
pub const SUPPORT_TOL_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct StageDiagnostics {
    pub p: f64,
    pub sigma_mass: f64,
    pub big_sigma_mass: f64,
    /// `concentration_mass(sigma_p, f * max|y_p|)` for `f` in [`CONC_FRACTIONS`].
    pub conc: [f64; 3],
    pub density_eps: f64,
    /// `None` when the sub-level set is empty.
    pub density: Option<DensityCheck>,
    pub support_fraction: f64,
    pub r_momentum: f64,
    pub r_pressure: f64,
    /// Per test pair: `Sigma`, `sigma` velocity pairings and the `sigma` pressure pairing.
    pub pairings: Vec<[f64; 3]>,
}

impl StageDiagnostics {
    /// `false` only when the density check ran and failed.
    pub fn density_ok(&self) -> bool {
        self.density.is_none_or(|d| d.pass)
    }
}

#[derive(Debug, Clone)]
pub struct TwinRun {
    pub config: ExperimentConfig,
    pub setup: PhysicsSetup,
    pub truth: ReferenceSolution,
    pub model: ObservationModel,
    pub stages: Vec<Stage>,
    /// `E_p` of the truth control at each stage exponent.
    pub truth_e_p: Vec<f64>,
    pub diagnostics: Vec<StageDiagnostics>,
    pub timings: Vec<(String, f64)>,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(*x))
}

/// Diagnostics of every stage; `M` for the density check comes from the
/// last one. When `M <= resolution` the limit residual is numerically zero,
/// the estimate is vacuous and the check is skipped.
pub fn diagnose(
    stages: &[Stage],
    setup: &PhysicsSetup,
    model: &ObservationModel,
    bank: &TestBank,
    resolution: f64,
) -> Result<Vec<StageDiagnostics>> {
    let evals = stages
        .iter()
        .map(|s| evaluate(&s.result.control, setup, model))
        .collect::<Result<Vec<_>>>()?;
    let m_sup = evals.last().map_or(0.0, |e| max_of(&e.y.magnitudes()));
    let eps = DENSITY_EPS_FRACTION * m_sup;
    let mut out = Vec::with_capacity(stages.len());
    for (s, ev) in stages.iter().zip(&evals) {
        let sigma = build_measure(&ev.y, s.p)?;
        let big_sigma = build_measure(&ev.k, s.p)?;
        let y_max = max_of(&ev.y.magnitudes());
        let conc = CONC_FRACTIONS.map(|f| concentration_mass(&sigma, f * y_max).unwrap_or(f64::NAN));
        let all = vec![true; ev.y.len()];
        let density = if m_sup > resolution {
            density_bound_check(&ev.y, s.p, eps, m_sup, &all).ok()
        } else {
            None
        };
        let k_max = max_of(&ev.k.magnitudes());
        let (r_momentum, r_pressure) = el_residual(&s.result.control, s.p, setup, model, bank)?;
        out.push(StageDiagnostics {
            p: s.p,
            sigma_mass: sigma.mass(),
            big_sigma_mass: big_sigma.mass(),
            conc,
            density_eps: eps,
            density,
            support_fraction: sigma_infty_support_check(&big_sigma, SUPPORT_TOL_FRACTION * k_max),
            r_momentum,
            r_pressure,
            pairings: pairing_table(&s.result.control, s.p, setup, model, bank)?,
        });
    }
    Ok(out)
}

/// Runs the pipeline without touching the filesystem.
pub fn run_twin(config: &ExperimentConfig) -> Result<TwinRun> {
    config.validate()?;
    let mut timings = Vec::new();
    let clock = Instant::now();
    let truth = reference_solve(&config.truth_setup()?, ReferenceOptions::default())?;
    timings.push(("truth".to_string(), clock.elapsed().as_secs_f64() * 1e3));
    let setup = config.setup()?;
    let ob = &config.observation;
    let model = synth_data(&truth.u, ob.kind, config.mask()?, ob.noise_amplitude, ob.seed)?;
    let g = setup.grid;
    let stages = run_continuation(&ControlVector::zeros(g), &setup, &model, &config.schedule, &config.optimizer)?;
    for s in &stages {
        timings.push((format!("stage p={}", s.p), s.wall_time_ms));
    }
    let truth_e_p = stages
        .iter()
        .map(|s| assemble_e_p(&truth.control, &setup, &model, s.p).map(|r| r.e_p))
        .collect::<Result<Vec<_>>>()?;
    let clock = Instant::now();
    let diagnostics = diagnose(&stages, &setup, &model, &TestBank::standard(&g), config.optimizer.grad_tol)?;
    timings.push(("diagnostics".to_string(), clock.elapsed().as_secs_f64() * 1e3));
    Ok(TwinRun {
        config: config.clone(),
        setup,
        truth,
        model,
        stages,
        truth_e_p,
        diagnostics,
        timings,
    })
}

fn tag(p: f64) -> String {
    if p.fract() == 0.0 {
        format!("p{}", p as i64)
    } else {
        format!("p{}", p.to_string().replace('.', "_"))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

pub fn stages_csv(run: &TwinRun) -> String {
    let mut s = String::from("p,iterations,e_p,e_inf,grad_norm,grad_tol,converged,stalled,e_p_truth\n");
    for (st, et) in run.stages.iter().zip(&run.truth_e_p) {
        let r = &st.result;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            st.p, r.iterations, r.report.e_p, st.e_inf.e_p, r.grad_norm, st.grad_tol, r.converged, r.stalled, et
        );
    }
    s
}

pub fn misfit_csv(run: &TwinRun) -> String {
    let mut s = String::from("p,e_p,term_K,term_y,sup_K,sup_y,grad_norm,iterations\n");
    for st in &run.stages {
        let r = &st.result.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            st.p, r.e_p, r.term_k, r.term_y, r.sup_k, r.sup_y, st.result.grad_norm, st.result.iterations
        );
    }
    s
}

pub fn diagnostics_csv(run: &TwinRun) -> String {
    let mut s = String::from(
        "p,sigma_mass,Sigma_mass,conc_0.05,conc_0.1,conc_0.2,density_eps,density_lhs,density_rhs,density_pass,Sigma_support_fraction,r_momentum,r_pressure\n",
    );
    for d in &run.diagnostics {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            d.p,
            d.sigma_mass,
            d.big_sigma_mass,
            d.conc[0],
            d.conc[1],
            d.conc[2],
            d.density_eps,
            opt(d.density.map(|x| x.lhs)),
            opt(d.density.map(|x| x.rhs)),
            d.density.map_or("na".to_string(), |x| x.pass.to_string()),
            d.support_fraction,
            d.r_momentum,
            d.r_pressure
        );
    }
    s
}

pub fn pairings_csv(run: &TwinRun) -> String {
    let mut s = String::from("p,test,Sigma_velocity,sigma_velocity,sigma_pressure\n");
    for d in &run.diagnostics {
        for (n, row) in d.pairings.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{},{}", d.p, n, row[0], row[1], row[2]);
        }
    }
    s
}

pub fn traces_csv(run: &TwinRun) -> String {
    let mut s = String::from("p,iter,value,grad_norm,step\n");
    for st in &run.stages {
        for t in &st.result.trace {
            let _ = writeln!(s, "{},{},{},{},{}", st.p, t.iter, t.value, t.grad_norm, t.step);
        }
    }
    s
}

fn timings_csv(run: &TwinRun) -> String {
    let mut s = String::from("phase,wall_time_ms\n");
    for (phase, ms) in &run.timings {
        let _ = writeln!(s, "{phase},{ms:.3}");
    }
    s
}

/// Writes all artifacts of `run` below `out`.
pub fn write_twin(run: &TwinRun, out: &Path, plots: bool) -> Result<()> {
    let g = run.setup.grid;
    fs::create_dir_all(out.join("checkpoints"))?;
    fs::write(out.join("config.toml"), run.config.to_toml())?;
    write_field(&out.join("truth_u"), &FieldFile::vector(&run.truth.u))?;
    write_field(&out.join("truth_p"), &FieldFile::scalar("p", &run.truth.p))?;
    let names: Vec<String> = (0..run.model.output_dim()).map(|c| format!("q{}", c + 1)).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    write_field(&out.join("q"), &FieldFile::samples(g, &names, &run.model.data_q))?;
    write_mask(&out.join("mask.txt"), g.nx, &run.model.mask)?;
    for st in &run.stages {
        let base = out.join("checkpoints").join(tag(st.p));
        let c = &st.result.control;
        write_field(&with_suffix(&base, "_psi"), &FieldFile::scalar("psi", &stream_function(c)))?;
        let (_, pr) = crate::nse::state_from_control(c, &run.setup)?;
        write_field(&with_suffix(&base, "_pressure"), &FieldFile::scalar("p", &pr))?;
    }
    fs::write(out.join("stages.csv"), stages_csv(run))?;
    fs::write(out.join("misfit.csv"), misfit_csv(run))?;
    fs::write(out.join("diagnostics.csv"), diagnostics_csv(run))?;
    fs::write(out.join("pairings.csv"), pairings_csv(run))?;
    fs::write(out.join("traces.csv"), traces_csv(run))?;
    fs::write(out.join("timings.csv"), timings_csv(run))?;
    if plots {
        write_plots(run, &out.join("plots"))?;
    }
    Ok(())
}

fn with_suffix(base: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn write_plots(run: &TwinRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let ep: Vec<(f64, f64)> = run.stages.iter().map(|s| (s.p, s.result.report.e_p)).collect();
    let einf: Vec<(f64, f64)> = run.stages.iter().map(|s| (s.p, s.e_inf.e_p)).collect();
    let truth: Vec<(f64, f64)> = run.stages.iter().zip(&run.truth_e_p).map(|(s, e)| (s.p, *e)).collect();
    fs::write(
        dir.join("e_p.svg"),
        line_plot(
            "misfit along the continuation",
            "p",
            "value",
            true,
            &[
                Series { label: "E_p(c_p)", color: "black", points: ep },
                Series { label: "E_inf(c_p)", color: "firebrick", points: einf },
                Series { label: "E_p(truth)", color: "steelblue", points: truth },
            ],
        ),
    )?;
    let conc: Vec<(f64, f64)> = run.diagnostics.iter().map(|d| (d.p, d.conc[1])).collect();
    let frac: Vec<(f64, f64)> = run.diagnostics.iter().map(|d| (d.p, 1.0 - d.support_fraction)).collect();
    fs::write(
        dir.join("concentration.svg"),
        line_plot(
            "dual-weight mass away from the maximum",
            "p",
            "mass",
            true,
            &[
                Series { label: "sigma_p, |y| < 0.9 max", color: "black", points: conc },
                Series { label: "Sigma_p off support", color: "darkorange", points: frac },
            ],
        ),
    )?;
    if let Some(last) = run.stages.last() {
        let ev = evaluate(&last.result.control, &run.setup, &run.model)?;
        let g = run.setup.grid;
        let (w, h) = (g.nx - 2, g.ny - 2);
        let per_level = w * h;
        let mags = ev.y.magnitudes();
        let top = &mags[(g.nt - 1) * per_level..];
        fs::write(
            dir.join("y_final.svg"),
            heatmap(&format!("|y| at t = T, p = {}", last.p), w, h, top),
        )?;
    }
    Ok(())
}

/// Velocity of a control, e.g. to compare a stage against the truth.
pub fn control_velocity(c: &ControlVector, setup: &PhysicsSetup) -> Result<VectorField> {
    Ok(crate::nse::state_from_control(c, setup)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "[grid]\nnx = 8\nny = 8\nnt = 6\nt_end = 0.2\n[schedule]\np_list = [2, 4]\n";

    #[test]
    fn minimal_zero_noise_run() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let run = run_twin(&cfg).unwrap();
        assert_eq!(run.stages.len(), 2);
        assert!(run.stages[0].result.report.e_p <= 0.5 + 1e-6, "{}", run.stages[0].result.report.e_p);
        for (s, et) in run.stages.iter().zip(&run.truth_e_p) {
            assert!(s.result.report.e_p <= et + 1e-6);
        }
        let csv = stages_csv(&run);
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(pairings_csv(&run).lines().count(), 1 + 2 * 12);
    }

    #[test]
    fn artifacts_and_determinism() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        write_twin(&run_twin(&cfg).unwrap(), &a, true).unwrap();
        write_twin(&run_twin(&cfg).unwrap(), &b, false).unwrap();
        for f in ["stages.csv", "misfit.csv", "diagnostics.csv", "pairings.csv", "traces.csv", "truth_u.bin", "q.meta"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
        assert!(a.join("plots/e_p.svg").exists() && a.join("plots/y_final.svg").exists());
        assert!(!b.join("plots").exists());
        assert!(a.join("checkpoints/p4_psi.meta").exists());
        let back = crate::grid::read_field(&a.join("truth_u")).unwrap().into_vector().unwrap();
        assert_eq!(back.u1, run_twin(&cfg).unwrap().truth.u.u1);
    }
}
