//! Browser bindings for three small linfvar experiments.

use wasm_bindgen::prelude::*;

use linfvar::experiment::{run_twin, ExperimentConfig};
use linfvar::norms::{dotted_lp_norm, dual_weight, lp_norm, OscillatingSequence, PExponent, WeightedSamples};
use linfvar::nse::{residual_y, state_from_control};
use linfvar::{Error, Result};

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Two bumps of heights 1 and `second` on `[0, 1]`, sampled at `n` midpoints.
fn bumps(n: usize, second: f64) -> WeightedSamples {
    let values = (0..n)
        .map(|i| {
            let x = (i as f64 + 0.5) / n as f64;
            (-((x - 0.3) / 0.08).powi(2)).exp() + second * (-((x - 0.7) / 0.12).powi(2)).exp()
        })
        .collect();
    WeightedSamples {
        dim: 1,
        values,
        weights: vec![1.0 / n as f64; n],
    }
}

/// Dual weight `M_p(h)` of a two-bump profile, one value per sample.
/// As `p` grows the weight piles up on the taller bump.
pub fn weight_profile(n: usize, p: f64, second: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    Ok(dual_weight(&bumps(n, second), PExponent::finite(p)?)?.values)
}

#[wasm_bindgen]
pub fn dual_weight_profile(n: usize, p: f64, second: f64) -> std::result::Result<Vec<f64>, JsError> {
    weight_profile(n, p, second).map_err(js)
}

/// The profile itself and its dotted norm at `p`; the last entry is the norm.
#[wasm_bindgen]
pub fn bump_profile(n: usize, p: f64, second: f64) -> std::result::Result<Vec<f64>, JsError> {
    let h = bumps(n.max(1), second);
    let norm = PExponent::finite(p).and_then(|e| dotted_lp_norm(&h, e)).map_err(js)?;
    let mut out = h.values;
    out.push(norm);
    Ok(out)
}

#[wasm_bindgen]
pub struct TwinSummary {
    p: Vec<f64>,
    e_p: Vec<f64>,
    e_inf: Vec<f64>,
    iterations: Vec<f64>,
    n: usize,
    y_final: Vec<f64>,
}

#[wasm_bindgen]
impl TwinSummary {
    pub fn p(&self) -> Vec<f64> {
        self.p.clone()
    }
    pub fn e_p(&self) -> Vec<f64> {
        self.e_p.clone()
    }
    pub fn e_inf(&self) -> Vec<f64> {
        self.e_inf.clone()
    }
    pub fn iterations(&self) -> Vec<f64> {
        self.iterations.clone()
    }
    /// Grid side length of `y_final`.
    pub fn n(&self) -> usize {
        self.n
    }
    /// `|y|` of the last stage at the final time, row-major.
    pub fn y_final(&self) -> Vec<f64> {
        self.y_final.clone()
    }
}

/// Small twin experiment on an 8x8 grid with continuation `2, 4, .., p_max`.
pub fn small_twin(p_max: f64, lambda: f64, noise: f64, model_error: bool) -> Result<TwinSummary> {
    let mut ps = vec![2.0];
    while ps.last().unwrap() * 2.0 <= p_max {
        ps.push(ps.last().unwrap() * 2.0);
    }
    let text = format!(
        "[grid]\nnx = 8\nny = 8\nnt = 6\nt_end = 0.2\n\
         [physics]\nlambda = {lambda}\nforcing = \"{}\"\ntruth_forcing = \"gyre\"\n\
         [observation]\nnoise_amplitude = {noise}\n\
         [schedule]\np_list = {ps:?}\n\
         [optimizer]\nmax_iters = 2000\n\
         [output]\nplots = false\n",
        if model_error { "none" } else { "gyre" }
    );
    let run = run_twin(&ExperimentConfig::from_toml(&text)?)?;
    let last = run.stages.last().expect("nonempty schedule");
    let (u, pr) = state_from_control(&last.result.control, &run.setup)?;
    let y = residual_y(&u, &pr, &run.setup)?;
    let g = run.setup.grid;
    let k = g.nt;
    let y_final = (0..g.plane())
        .map(|m| {
            let n = k * g.plane() + m;
            y.u1[n].hypot(y.u2[n])
        })
        .collect();
    Ok(TwinSummary {
        p: run.stages.iter().map(|s| s.p).collect(),
        e_p: run.stages.iter().map(|s| s.result.report.e_p).collect(),
        e_inf: run.stages.iter().map(|s| s.e_inf.e_p).collect(),
        iterations: run.stages.iter().map(|s| s.result.iterations as f64).collect(),
        n: g.nx,
        y_final,
    })
}

#[wasm_bindgen]
pub fn run_small_twin(
    p_max: f64,
    lambda: f64,
    noise: f64,
    model_error: bool,
) -> std::result::Result<TwinSummary, JsError> {
    small_twin(p_max, lambda, noise, model_error).map_err(js)
}

/// Oscillating sequence on `(0, 2)` for even `p`: the samples followed by
/// its `L^p` norm, its integral over `(0, 1)` and its `L^1` distance to the
/// weak* limit on `(0, 1)`.
pub fn sequence(p: usize, refine: usize) -> Result<Vec<f64>> {
    let s = OscillatingSequence::new(p, refine)?;
    let norm = lp_norm(&s.samples(), PExponent::Finite(p as f64))?;
    let mut out = s.y.clone();
    out.extend([norm, s.pairing_unit_interval(), s.l1_distance_unit_interval()]);
    Ok(out)
}

#[wasm_bindgen]
pub fn oscillating_sequence(p: usize, refine: usize) -> std::result::Result<Vec<f64>, JsError> {
    sequence(p, refine).map_err(js)
}
