//! Property suites behind `linfvar verify`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{read_field, write_field, FieldFile, GridSpec, VectorField};
use crate::misfit::directional_fd_check;
use crate::mms::{slopes, Manufactured};
use crate::norms::{
    dotted_lp_norm, dual_weight, holder_gap, lp_norm, OscillatingSequence, PExponent, WeightedSamples,
};
use crate::nse::{clamped_curl, reference_solve, ControlVector, PhysicsSetup, ReferenceOptions};
use crate::observation::{default_mask, synth_data, ObservationKind};

pub const SUITES: [&str; 5] = ["norms", "gradients", "mms", "counter-example", "checksum"];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        pass,
        detail,
    }
}

fn random_samples(rng: &mut ChaCha8Rng, n: usize) -> WeightedSamples {
    let scale = 10f64.powf(rng.gen_range(-2.0..1.0));
    let values = (0..2 * n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    WeightedSamples::new(2, values, raw.iter().map(|w| w / total).collect()).expect("valid samples")
}

fn norms_suite() -> Result<SuiteReport> {
    let ps = [1.5, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst_holder = f64::NEG_INFINITY;
    let mut worst_ball = 0.0f64;
    for _ in 0..200 {
        let h = random_samples(&mut rng, 24);
        for (i, &q) in ps.iter().enumerate() {
            for &p in &ps[i..] {
                let lhs = dotted_lp_norm(&h, PExponent::Finite(q))?;
                let rhs = dotted_lp_norm(&h, PExponent::Finite(p))? + holder_gap(PExponent::Finite(q), PExponent::Finite(p))?;
                worst_holder = worst_holder.max(lhs - rhs);
            }
        }
        for p in [2.0, 8.0, 32.0, 128.0] {
            let m = dual_weight(&h, PExponent::Finite(p))?;
            worst_ball = worst_ball.max(lp_norm(&m, PExponent::Finite(p).conjugate())?);
        }
    }
    let zero = WeightedSamples::uniform(2, vec![0.0; 20])?;
    let mut worst_zero = 0.0f64;
    for &p in &ps {
        worst_zero = worst_zero.max((dotted_lp_norm(&zero, PExponent::Finite(p))? - 1.0 / p).abs());
    }
    Ok(SuiteReport {
        suite: "norms",
        checks: vec![
            check("modified Hölder", worst_holder <= 1e-10, format!("max lhs - rhs = {worst_holder:e}")),
            check("dual weight in unit ball", worst_ball <= 1.0 + 1e-10, format!("max norm = {worst_ball}")),
            check("zero field norm is 1/p", worst_zero == 0.0, format!("max gap = {worst_zero:e}")),
        ],
    })
}

/// Small forced problem with noisy masked-velocity data, shared with the acceptance tests.
pub fn gradient_problem() -> Result<(PhysicsSetup, crate::observation::ObservationModel)> {
    let g = GridSpec::unit_square(8, 6, 0.3)?;
    let psi: Vec<f64> = (0..g.ny)
        .flat_map(|j| (0..g.nx).map(move |i| (i, j)))
        .map(|(i, j)| 0.2 * ((PI * g.x(i)).sin() * (PI * g.y(j)).sin()).powi(2))
        .collect();
    let f = VectorField::from_fn(g, |x, y, _| [(PI * y).sin(), 0.5 * (PI * x).sin()]);
    let setup = PhysicsSetup::new(g, 0.05, 0.5, f, clamped_curl(&g, &psi))?;
    let truth = reference_solve(&setup, ReferenceOptions::default())?;
    let model = synth_data(&truth.u, ObservationKind::MaskedVelocity, default_mask(8, 8, 2), 0.05, 11)?;
    Ok((setup, model))
}

fn random_control(g: GridSpec, rng: &mut ChaCha8Rng, scale: f64) -> Result<ControlVector> {
    let v = (0..ControlVector::len_for(&g)).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
    ControlVector::from_values(g, v)
}

fn gradients_suite() -> Result<SuiteReport> {
    let (setup, model) = gradient_problem()?;
    let g = setup.grid;
    let mut checks = Vec::new();
    for (seed, p) in [(1u64, 2.0), (2, 6.0)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_control(g, &mut rng, 0.05)?;
        let dirs = (0..20).map(|_| random_control(g, &mut rng, 1.0)).collect::<Result<Vec<_>>>()?;
        let rel = directional_fd_check(&c, &setup, &model, p, &dirs, 1e-6)?;
        checks.push(check(&format!("directional derivatives, p = {p}"), rel <= 1e-5, format!("max rel {rel:e}")));
    }
    Ok(SuiteReport {
        suite: "gradients",
        checks,
    })
}

fn mms_suite() -> Result<SuiteReport> {
    let m = Manufactured::linear_in_time(0.5);
    let g = GridSpec::unit_square(17, 6, 0.5)?;
    let f = m.discrete_forcing(g)?;
    let scale = f.max_abs().max(1.0);
    let r = m.residual_with(g, f)?;
    let space: Vec<f64> = [17, 33, 65].iter().map(|&n| m.residual_sup(n, 4, false)).collect::<Result<_>>()?;
    let osc = Manufactured::oscillating_in_time(0.5);
    let time: Vec<f64> = [8, 16, 32].iter().map(|&nt| osc.residual_sup(17, nt, true)).collect::<Result<_>>()?;
    let (ss, ts) = (slopes(&space), slopes(&time));
    Ok(SuiteReport {
        suite: "mms",
        checks: vec![
            check("consistent forcing", r <= 1e-12 * scale, format!("max |y| = {r:e}, scale {scale:.3}")),
            check("space order 2", ss.iter().all(|s| (s - 2.0).abs() <= 0.3), format!("slopes {ss:.3?}")),
            check("time order 1", ts.iter().all(|s| (s - 1.0).abs() <= 0.3), format!("slopes {ts:.3?}")),
        ],
    })
}

fn counter_example_suite() -> Result<SuiteReport> {
    let mut checks = Vec::new();
    for p in [4usize, 16, 64] {
        let s = OscillatingSequence::new(p, 8)?;
        let norm = lp_norm(&s.samples(), PExponent::Finite(p as f64))?;
        let pairing = s.pairing_unit_interval();
        let dist = s.l1_distance_unit_interval();
        checks.push(check(
            &format!("oscillating sequence, p = {p}"),
            (norm - 1.0).abs() <= 1e-12 && pairing.abs() <= 1e-12 && (dist - 1.0).abs() <= 1e-12,
            format!("norm {norm}, pairing {pairing:e}, L1 gap {dist}"),
        ));
    }
    Ok(SuiteReport {
        suite: "counter-example",
        checks,
    })
}

fn meta_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            meta_files(&path, out)?;
        } else if path.extension().is_some_and(|x| x == "meta") {
            out.push(path.with_extension(""));
        }
    }
    Ok(())
}

fn checksum_suite(dir: Option<&Path>) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    match dir {
        Some(d) => {
            let mut bases = Vec::new();
            meta_files(d, &mut bases)?;
            if bases.is_empty() {
                checks.push(check("field files", false, format!("no field files under {}", d.display())));
            }
            for b in bases {
                let name = b.strip_prefix(d).unwrap_or(&b).display().to_string();
                match read_field(&b) {
                    Ok(_) => checks.push(check(&name, true, "checksum ok".into())),
                    Err(e) => checks.push(check(&name, false, e.to_string())),
                }
            }
        }
        None => {
            let g = GridSpec::unit_square(6, 3, 0.1)?;
            let f = VectorField::from_fn(g, |x, y, t| [x * y + t, (x - y) * 1e-300]);
            let dir = std::env::temp_dir().join(format!("linfvar-verify-{}", std::process::id()));
            std::fs::create_dir_all(&dir)?;
            let base = dir.join("roundtrip");
            write_field(&base, &FieldFile::vector(&f))?;
            let back = read_field(&base)?.into_vector()?;
            let exact = back.u1.iter().zip(&f.u1).chain(back.u2.iter().zip(&f.u2)).all(|(a, b)| a.to_bits() == b.to_bits());
            let mut bytes = std::fs::read(base.with_extension("bin"))?;
            bytes[3] ^= 1;
            std::fs::write(base.with_extension("bin"), bytes)?;
            let detected = matches!(read_field(&base), Err(Error::Checksum { .. }));
            let _ = std::fs::remove_dir_all(&dir);
            checks.push(check("bit-exact round trip", exact, String::new()));
            checks.push(check("corruption detected", detected, String::new()));
        }
    }
    Ok(SuiteReport {
        suite: "checksum",
        checks,
    })
}

/// Runs one named suite; `field_dir` points the checksum suite at existing files.
pub fn run_suite(name: &str, field_dir: Option<&Path>) -> Result<SuiteReport> {
    match name {
        "norms" => norms_suite(),
        "gradients" => gradients_suite(),
        "mms" => mms_suite(),
        "counter-example" => counter_example_suite(),
        "checksum" => checksum_suite(field_dir),
        other => Err(Error::Config(format!(
            "unknown suite {other:?}; expected one of {}",
            SUITES.join(", ")
        ))),
    }
}

/// Runs all suites, or those named in the comma-separated `filter`.
pub fn run_verify(filter: Option<&str>, field_dir: Option<&Path>) -> Result<Vec<SuiteReport>> {
    let names: Vec<&str> = match filter {
        Some(f) => f.split(',').map(str::trim).filter(|s| !s.is_empty()).collect(),
        None => SUITES.to_vec(),
    };
    if names.is_empty() {
        return Err(Error::Config("--suite names no suite".into()));
    }
    names.into_iter().map(|n| run_suite(n, field_dir)).collect()
}

pub fn format_table(reports: &[SuiteReport]) -> String {
    let mut s = String::new();
    for r in reports {
        for c in &r.checks {
            let _ = writeln!(
                s,
                "{:<16} {:<34} {}  {}",
                r.suite,
                c.name,
                if c.pass { "PASS" } else { "FAIL" },
                c.detail
            );
        }
    }
    s
}
