//! Experiment configuration: a TOML file with one table per block.
//!
//! ```toml
//! [grid]
//! nx = 16
//! ny = 16
//! nt = 12
//! t_end = 0.3
//!
//! [physics]
//! nu = 0.02
//! lambda = 0.5
//! forcing = "gyre"          # none | gyre
//! truth_forcing = "gyre"    # defaults to `forcing`
//! u0 = "vortex"             # zero | vortex
//!
//! [observation]
//! kind = "masked-velocity"  # masked-velocity | vorticity | speed-squared
//! mask_stride = 2
//! noise_amplitude = 0.0
//! seed = 7
//!
//! [schedule]
//! p_list = [2, 4, 8, 16, 32, 64, 128]
//!
//! [optimizer]
//! max_iters = 500
//!
//! [output]
//! directory = "runs/twin"
//! plots = true
//! ```
//!
//! Every key has a default except the grid sizes; unknown keys are errors.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, VectorField, VectorSlice};
use crate::nse::{cfl_bound, clamped_curl, PhysicsSetup};
use crate::observation::{default_mask, ObservationKind};
use crate::optimizer::{ContinuationSchedule, OptimOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    #[serde(default = "one")]
    pub lx: f64,
    #[serde(default = "one")]
    pub ly: f64,
    #[serde(default = "one")]
    pub t_end: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingPreset {
    None,
    /// `a (pi sin(pi x) cos(pi y), -pi cos(pi x) sin(pi y))` in scaled coordinates.
    Gyre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialPreset {
    Zero,
    /// Curl of `a sin(pi x)^2 sin(pi y)^2`.
    Vortex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsBlock {
    pub nu: f64,
    pub lambda: f64,
    pub forcing: ForcingPreset,
    pub forcing_amplitude: f64,
    /// Forcing that generates the truth; differs from `forcing` to inject
    /// model error.
    pub truth_forcing: Option<ForcingPreset>,
    pub u0: InitialPreset,
    pub u0_amplitude: f64,
    pub advection: bool,
}

impl Default for PhysicsBlock {
    fn default() -> Self {
        Self {
            nu: 0.02,
            lambda: 0.5,
            forcing: ForcingPreset::Gyre,
            forcing_amplitude: 1.0,
            truth_forcing: None,
            u0: InitialPreset::Vortex,
            u0_amplitude: 0.3,
            advection: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationBlock {
    pub kind: ObservationKind,
    pub mask_stride: usize,
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl Default for ObservationBlock {
    fn default() -> Self {
        Self {
            kind: ObservationKind::MaskedVelocity,
            mask_stride: 2,
            noise_amplitude: 0.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: PathBuf,
    pub plots: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("runs/twin"),
            plots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridBlock,
    #[serde(default)]
    pub physics: PhysicsBlock,
    #[serde(default)]
    pub observation: ObservationBlock,
    #[serde(default)]
    pub schedule: ContinuationSchedule,
    #[serde(default)]
    pub optimizer: OptimOptions,
    #[serde(default)]
    pub output: OutputBlock,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite (got {v})")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let g = &self.grid;
        GridSpec::new(g.nx, g.ny, g.nt, g.lx, g.ly, g.t_end)
    }

    /// Checks every block, including the CFL bound of the initial velocity.
    pub fn validate(&self) -> Result<()> {
        let g = self.grid()?;
        let ph = &self.physics;
        positive("physics.nu", ph.nu)?;
        if !(0.01..=0.99).contains(&ph.lambda) {
            return Err(Error::Config(format!(
                "physics.lambda must lie in [0.01, 0.99] (got {})",
                ph.lambda
            )));
        }
        if !(ph.forcing_amplitude.is_finite() && ph.forcing_amplitude >= 0.0) {
            return Err(Error::Config(format!(
                "physics.forcing_amplitude must be >= 0 (got {})",
                ph.forcing_amplitude
            )));
        }
        if !ph.u0_amplitude.is_finite() {
            return Err(Error::Config("physics.u0_amplitude must be finite".into()));
        }
        let ob = &self.observation;
        if ob.mask_stride == 0 || ob.mask_stride >= g.nx.min(g.ny) {
            return Err(Error::Config(format!(
                "observation.mask_stride must lie in [1, {}) (got {})",
                g.nx.min(g.ny),
                ob.mask_stride
            )));
        }
        if !(ob.noise_amplitude.is_finite() && ob.noise_amplitude >= 0.0) {
            return Err(Error::Config(format!(
                "observation.noise_amplitude must be >= 0 (got {})",
                ob.noise_amplitude
            )));
        }
        self.schedule.validate()?;
        self.optimizer.validate()?;
        let bound = cfl_bound(&g, &self.initial_velocity()?);
        if g.dt() > bound {
            return Err(Error::Cfl { dt: g.dt(), bound });
        }
        self.setup()?;
        self.truth_setup()?;
        Ok(())
    }

    pub fn initial_velocity(&self) -> Result<VectorSlice> {
        let g = self.grid()?;
        Ok(match self.physics.u0 {
            InitialPreset::Zero => VectorSlice::zeros(g.nx, g.ny),
            InitialPreset::Vortex => {
                let a = self.physics.u0_amplitude;
                let psi: Vec<f64> = (0..g.ny)
                    .flat_map(|j| (0..g.nx).map(move |i| (i, j)))
                    .map(|(i, j)| a * ((PI * g.x(i) / g.lx).sin() * (PI * g.y(j) / g.ly).sin()).powi(2))
                    .collect();
                clamped_curl(&g, &psi)
            }
        })
    }

    fn forcing(&self, preset: ForcingPreset) -> Result<VectorField> {
        let g = self.grid()?;
        let a = self.physics.forcing_amplitude;
        Ok(match preset {
            ForcingPreset::None => VectorField::zeros(g),
            ForcingPreset::Gyre => VectorField::from_fn(g, |x, y, _| {
                let (sx, sy) = (PI * x / g.lx, PI * y / g.ly);
                [a * PI * sx.sin() * sy.cos(), -a * PI * sx.cos() * sy.sin()]
            }),
        })
    }

    /// The physics seen by the assimilation.
    pub fn setup(&self) -> Result<PhysicsSetup> {
        self.setup_with(self.physics.forcing)
    }

    /// The physics that generates the truth.
    pub fn truth_setup(&self) -> Result<PhysicsSetup> {
        self.setup_with(self.physics.truth_forcing.unwrap_or(self.physics.forcing))
    }

    fn setup_with(&self, preset: ForcingPreset) -> Result<PhysicsSetup> {
        let mut s = PhysicsSetup::new(
            self.grid()?,
            self.physics.nu,
            self.physics.lambda,
            self.forcing(preset)?,
            self.initial_velocity()?,
        )?;
        s.advection = self.physics.advection;
        Ok(s)
    }

    pub fn mask(&self) -> Result<Vec<bool>> {
        let g = self.grid()?;
        Ok(default_mask(g.nx, g.ny, self.observation.mask_stride))
    }

    /// Replaces one value given as `block.key` or a key unique across blocks.
    pub fn with_override(&self, param: &str, value: &str) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).expect("round trip");
        let (block, key) = match param.split_once('.') {
            Some((b, k)) => (b.to_string(), k.to_string()),
            None => {
                let owners: Vec<&String> = doc
                    .iter()
                    .filter(|(_, v)| v.as_table().is_some_and(|t| t.contains_key(param)))
                    .map(|(b, _)| b)
                    .collect();
                match owners.as_slice() {
                    [one] => ((*one).clone(), param.to_string()),
                    [] => return Err(Error::Config(format!("unknown sweep parameter {param:?}"))),
                    _ => return Err(Error::Config(format!("ambiguous sweep parameter {param:?}; use block.key"))),
                }
            }
        };
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .or_else(|_| toml::from_str::<toml::Table>(&format!("v = {value:?}")))
            .map_err(|e| Error::Config(format!("cannot parse value {value:?}: {}", e.message())))?
            .remove("v")
            .expect("parsed key");
        let table = doc
            .entry(block.clone())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{block} is not a block")))?;
        table.insert(key, parsed);
        Self::from_toml(&toml::to_string(&doc).expect("serialise"))
            .map_err(|e| Error::Config(format!("{param} = {value}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[grid]\nnx = 8\nny = 8\nnt = 6\nt_end = 0.2\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.physics.lambda, 0.5);
        assert_eq!(c.schedule.p_list.len(), 7);
        assert_eq!(c.optimizer.max_iters, 500);
        assert_eq!(c.observation.kind, ObservationKind::MaskedVelocity);
    }

    #[test]
    fn integer_exponents_parse() {
        let c = ExperimentConfig::from_toml(&format!("{MINIMAL}[schedule]\np_list = [2, 4]\n")).unwrap();
        assert_eq!(c.schedule.p_list, vec![2.0, 4.0]);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = |extra: &str| ExperimentConfig::from_toml(&format!("{MINIMAL}{extra}")).unwrap_err().to_string();
        assert!(bad("[physics]\nlambda = 1.5\n").contains("physics.lambda"));
        assert!(bad("[physics]\nnu = -1.0\n").contains("physics.nu"));
        assert!(bad("[physics]\nviscosity = 1.0\n").contains("viscosity"));
        assert!(bad("[observation]\nmask_stride = 0\n").contains("observation.mask_stride"));
        assert!(bad("[schedule]\np_list = [4, 2]\n").contains("schedule.p_list"));
        assert!(bad("[optimizer]\nmemory = 0\n").contains("optimizer.memory"));
        assert!(bad("[physics]\nforcing = \"storm\"\n").contains("storm"));
        assert!(ExperimentConfig::from_toml("[grid]\nnx = 8\n").is_err());
    }

    #[test]
    fn cfl_is_checked_at_load() {
        let e = ExperimentConfig::from_toml(
            "[grid]\nnx = 33\nny = 33\nnt = 2\nt_end = 1.0\n[physics]\nu0_amplitude = 5.0\n",
        )
        .unwrap_err();
        assert!(matches!(e, Error::Cfl { .. }), "{e}");
    }

    #[test]
    fn overrides() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.with_override("lambda", "0.25").unwrap().physics.lambda, 0.25);
        assert_eq!(c.with_override("observation.noise_amplitude", "0.05").unwrap().observation.noise_amplitude, 0.05);
        assert_eq!(c.with_override("kind", "vorticity").unwrap().observation.kind, ObservationKind::Vorticity);
        assert!(c.with_override("lambda", "2").is_err());
        assert!(c.with_override("nonsense", "1").is_err());
        let round = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn model_error_preset() {
        let c = ExperimentConfig::from_toml(&format!(
            "{MINIMAL}[physics]\nforcing = \"none\"\ntruth_forcing = \"gyre\"\n"
        ))
        .unwrap();
        assert_eq!(c.setup().unwrap().f.max_abs(), 0.0);
        assert!(c.truth_setup().unwrap().f.max_abs() > 1.0);
    }
}
