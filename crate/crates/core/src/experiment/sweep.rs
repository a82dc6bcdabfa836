//! One twin run per value of a configuration parameter.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::ExperimentConfig;
use super::twin::{run_twin, write_twin, TwinRun};
use crate::error::{Error, Result};

/// Runs `param = value` for every value and writes `run_<n>/` plus a
/// combined `sweep.csv` keyed by the value.
pub fn run_sweep(
    base: &ExperimentConfig,
    param: &str,
    values: &[String],
    out: &Path,
    plots: bool,
) -> Result<Vec<(String, TwinRun)>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    // validate every variant before running any
    let configs = values
        .iter()
        .map(|v| base.with_override(param, v))
        .collect::<Result<Vec<_>>>()?;
    let mut runs = Vec::with_capacity(values.len());
    let mut table = format!("{param},p,e_p,term_K,term_y,sup_K,sup_y,e_inf,grad_norm,iterations,converged\n");
    for (n, (value, cfg)) in values.iter().zip(configs).enumerate() {
        log::info!("sweep {param} = {value}");
        let run = run_twin(&cfg)?;
        write_twin(&run, &out.join(format!("run_{n}")), plots)?;
        for st in &run.stages {
            let r = &st.result.report;
            let _ = writeln!(
                table,
                "{value},{},{},{},{},{},{},{},{},{},{}",
                st.p,
                r.e_p,
                r.term_k,
                r.term_y,
                r.sup_k,
                r.sup_y,
                st.e_inf.e_p,
                st.result.grad_norm,
                st.result.iterations,
                st.result.converged
            );
        }
        runs.push((value.clone(), run));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("sweep.csv"), table)?;
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "[grid]\nnx = 8\nny = 8\nnt = 6\nt_end = 0.2\n[schedule]\np_list = [2, 4]\n";

    #[test]
    fn lambda_sweep_writes_runs_and_table() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let vals: Vec<String> = ["0.25", "0.5", "0.75"].map(String::from).to_vec();
        let runs = run_sweep(&cfg, "lambda", &vals, dir.path(), false).unwrap();
        assert_eq!(runs.len(), 3);
        for n in 0..3 {
            assert!(dir.path().join(format!("run_{n}/stages.csv")).exists());
        }
        let table = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(table.lines().count(), 1 + 3 * 2);
        assert!(table.starts_with("lambda,"));
    }

    #[test]
    fn noise_raises_the_observation_floor() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let vals: Vec<String> = ["0", "0.05"].map(String::from).to_vec();
        let runs = run_sweep(&cfg, "noise_amplitude", &vals, dir.path(), false).unwrap();
        let last = |r: &TwinRun| r.stages.last().unwrap().result.report.term_k;
        assert!(last(&runs[1].1) > last(&runs[0].1));
    }

    #[test]
    fn bad_sweeps_are_rejected() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(run_sweep(&cfg, "lambda", &[], dir.path(), false).is_err());
        assert!(run_sweep(&cfg, "lambda", &["0.5".into(), "7".into()], dir.path(), false).is_err());
        assert!(!dir.path().join("run_0").exists());
    }
}
