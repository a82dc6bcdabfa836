//! Regularised dotted norms, sup norms and the dual-weight map.
//!
//! All norms are normalised: integrals are averages against quadrature
//! weights that sum to one. Powers are evaluated in log space after
//! factoring out the sample maximum so that `p = 128` stays finite.

use crate::error::{ensure_finite, Error, Result};

/// Integrability exponent. Finite values must be `>= 1`; `p = 1` is only
/// meaningful for the dotted norm (lower endpoint of the Hölder bound).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PExponent {
    Finite(f64),
    Infinity,
}

impl PExponent {
    pub fn finite(p: f64) -> Result<Self> {
        if p.is_finite() && p >= 1.0 {
            Ok(Self::Finite(p))
        } else {
            Err(Error::Domain(format!("exponent must be finite and >= 1 (got {p})")))
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Self::Finite(p) => p,
            Self::Infinity => f64::INFINITY,
        }
    }

    /// `p' = p / (p - 1)`; infinite for `p = 1`, one for `p = inf`.
    pub fn conjugate(self) -> Self {
        match self {
            Self::Finite(p) if p == 1.0 => Self::Infinity,
            Self::Finite(p) => Self::Finite(p / (p - 1.0)),
            Self::Infinity => Self::Finite(1.0),
        }
    }

    fn require_finite(self) -> Result<f64> {
        match self {
            Self::Finite(p) => Ok(p),
            Self::Infinity => Err(Error::Domain("operation needs a finite exponent".into())),
        }
    }
}

/// Vector samples in `R^dim` with quadrature weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    pub dim: usize,
    /// Interleaved: sample `s` occupies `values[s*dim..(s+1)*dim]`.
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightedSamples {
    pub fn new(dim: usize, values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != dim * weights.len() {
            return Err(Error::Config(format!(
                "{} values do not form {} samples of dimension {dim}",
                values.len(),
                weights.len()
            )));
        }
        ensure_finite("samples", &values)?;
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("quadrature weights must be finite and >= 0".into()));
        }
        if !weights.is_empty() {
            let total = pairwise_sum(&weights);
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("quadrature weights sum to {total}, not 1")));
            }
        }
        Ok(Self {
            dim,
            values,
            weights,
        })
    }

    /// Equal weights `1 / len`.
    pub fn uniform(dim: usize, values: Vec<f64>) -> Result<Self> {
        let n = if dim == 0 { 0 } else { values.len() / dim };
        Self::new(dim, values, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        &self.values[s * self.dim..(s + 1) * self.dim]
    }

    /// Euclidean magnitude of every sample.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.chunks(self.dim).map(euclid).collect()
    }
}

#[inline]
pub(crate) fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Pairwise (cascade) summation in a fixed order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// `|v|_(p) = sqrt(|v|^2 + p^-2)`.
pub fn reg_abs(v: &[f64], p: PExponent) -> Result<f64> {
    let p = p.require_finite()?;
    Ok(reg_abs_raw(v, p))
}

#[inline]
pub(crate) fn reg_abs_raw(v: &[f64], p: f64) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() + 1.0 / (p * p)).sqrt()
}

/// `log(sum_i w_i exp(a_i))` with the maximum factored out.
fn log_weighted_sum_exp(a: &[f64], w: &[f64]) -> f64 {
    let m = a
        .iter()
        .zip(w)
        .filter(|(_, w)| **w > 0.0)
        .fold(f64::NEG_INFINITY, |m, (a, _)| m.max(*a));
    if m == f64::NEG_INFINITY {
        return m;
    }
    let terms: Vec<f64> = a.iter().zip(w).map(|(a, w)| w * (a - m).exp()).collect();
    m + pairwise_sum(&terms).ln()
}

/// Natural log of the dotted norm.
pub(crate) fn log_dotted_norm(h: &WeightedSamples, p: f64) -> f64 {
    let a: Vec<f64> = h
        .values
        .chunks(h.dim)
        .map(|v| p * reg_abs_raw(v, p).ln())
        .collect();
    log_weighted_sum_exp(&a, &h.weights) / p
}

/// `|| |h|_(p) ||_{L^p}`, normalised; never below `1/p`.
pub fn dotted_lp_norm(h: &WeightedSamples, p: PExponent) -> Result<f64> {
    let p = p.require_finite()?;
    if h.is_empty() {
        return Err(Error::Domain("dotted norm of an empty sample set".into()));
    }
    if h.values.iter().all(|v| *v == 0.0) {
        return Ok(1.0 / p);
    }
    Ok(log_dotted_norm(h, p).exp())
}

/// Plain normalised `L^q` norm of the magnitudes (no regularisation).
pub fn lp_norm(h: &WeightedSamples, q: PExponent) -> Result<f64> {
    if h.is_empty() {
        return Err(Error::Domain("norm of an empty sample set".into()));
    }
    let q = match q {
        PExponent::Infinity => return Ok(sup_norm(h)),
        PExponent::Finite(q) => q,
    };
    let mags = h.magnitudes();
    let m = sup_norm(h);
    if m == 0.0 {
        return Ok(0.0);
    }
    let terms: Vec<f64> = mags.iter().zip(&h.weights).map(|(r, w)| w * (r / m).powf(q)).collect();
    Ok(m * pairwise_sum(&terms).powf(1.0 / q))
}

/// Largest magnitude among samples with positive weight.
pub fn sup_norm(h: &WeightedSamples) -> f64 {
    h.values
        .chunks(h.dim)
        .zip(&h.weights)
        .filter(|(_, w)| **w > 0.0)
        .fold(0.0, |m, (v, _)| m.max(euclid(v)))
}

/// `M_p(V) = |V|_(p)^{p-2} V / ||V||^{p-1}`, pointwise, same weights as `h`.
pub fn dual_weight(h: &WeightedSamples, p: PExponent) -> Result<WeightedSamples> {
    let p = p.require_finite()?;
    if h.is_empty() {
        return Err(Error::Domain("dual weight of an empty sample set".into()));
    }
    ensure_finite("dual weight input", &h.values)?;
    Ok(WeightedSamples {
        dim: h.dim,
        values: dual_weight_raw(h, p),
        weights: h.weights.clone(),
    })
}

pub(crate) fn dual_weight_raw(h: &WeightedSamples, p: f64) -> Vec<f64> {
    let log_norm = log_dotted_norm(h, p);
    let mut out = Vec::with_capacity(h.values.len());
    for v in h.values.chunks(h.dim) {
        let s = ((p - 2.0) * reg_abs_raw(v, p).ln() - (p - 1.0) * log_norm).exp();
        out.extend(v.iter().map(|x| s * x));
    }
    out
}

/// Additive term of the dotted Hölder bound, `sqrt(q^-2 - p^-2)`.
pub fn holder_gap(q: PExponent, p: PExponent) -> Result<f64> {
    let q = q.require_finite()?;
    let p = match p {
        PExponent::Infinity => return Ok(1.0 / q),
        PExponent::Finite(p) => p,
    };
    if q > p {
        return Err(Error::Domain(format!("need q <= p (got q = {q}, p = {p})")));
    }
    Ok((1.0 / (q * q) - 1.0 / (p * p)).max(0.0).sqrt())
}

/// The one-dimensional oscillating sequence on `(0, 2)`: `+1, -1` blocks
/// of width `1/p` on `(0, 1)` and `+1` on `(1, 2)`. Its weak* limit is the
/// indicator of `(1, 2)`, but the convergence is not strong.
#[derive(Debug, Clone)]
pub struct OscillatingSequence {
    pub p: usize,
    /// Cell midpoints of a grid aligned to the breakpoints `m / p`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub width: f64,
}

impl OscillatingSequence {
    /// `refine` cells per block of width `1/p`; `p` must be even.
    pub fn new(p: usize, refine: usize) -> Result<Self> {
        if p < 2 || p % 2 != 0 || refine == 0 {
            return Err(Error::Domain(format!(
                "oscillating sequence needs even p >= 2 and refine >= 1 (got p = {p}, refine = {refine})"
            )));
        }
        let cells = 2 * p * refine;
        let width = 1.0 / (p * refine) as f64;
        let mut x = Vec::with_capacity(cells);
        let mut y = Vec::with_capacity(cells);
        for c in 0..cells {
            let block = c / refine;
            x.push((c as f64 + 0.5) * width);
            y.push(if block >= p || block % 2 == 0 { 1.0 } else { -1.0 });
        }
        Ok(Self { p, x, y, width })
    }

    pub fn limit(x: f64) -> f64 {
        if x > 1.0 {
            1.0
        } else {
            0.0
        }
    }

    /// Samples with normalised weights on `(0, 2)`.
    pub fn samples(&self) -> WeightedSamples {
        let n = self.y.len();
        WeightedSamples {
            dim: 1,
            values: self.y.clone(),
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// `int_0^1 y_p dx`.
    pub fn pairing_unit_interval(&self) -> f64 {
        let terms: Vec<f64> = self
            .x
            .iter()
            .zip(&self.y)
            .filter(|(x, _)| **x < 1.0)
            .map(|(_, y)| y * self.width)
            .collect();
        pairwise_sum(&terms)
    }

    /// `int_0^1 |y_p - y_inf| dx`.
    pub fn l1_distance_unit_interval(&self) -> f64 {
        let terms: Vec<f64> = self
            .x
            .iter()
            .zip(&self.y)
            .filter(|(x, _)| **x < 1.0)
            .map(|(x, y)| (y - Self::limit(*x)).abs() * self.width)
            .collect();
        pairwise_sum(&terms)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn fp(p: f64) -> PExponent {
        PExponent::finite(p).unwrap()
    }

    fn random_samples(rng: &mut ChaCha8Rng, dim: usize, n: usize, scale: f64) -> WeightedSamples {
        let values = (0..dim * n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        WeightedSamples::new(dim, values, raw.iter().map(|w| w / total).collect()).unwrap()
    }

    /// Direct evaluation without any log-space tricks.
    fn naive_dotted(h: &WeightedSamples, p: f64) -> f64 {
        h.values
            .chunks(h.dim)
            .zip(&h.weights)
            .map(|(v, w)| w * reg_abs_raw(v, p).powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }

    #[test]
    fn reg_abs_values() {
        assert!((reg_abs(&[0.0, 0.0], fp(10.0)).unwrap() - 0.1).abs() < 1e-15);
        let r = reg_abs(&[3.0, 0.0], fp(2.0)).unwrap();
        assert!((r - 9.25f64.sqrt()).abs() < 1e-15);
        assert!((r - 3.04138).abs() < 1e-5);
        let mut prev = f64::INFINITY;
        for k in 1..=10 {
            let r = reg_abs(&[0.3, -0.4], fp(2f64.powi(k))).unwrap();
            assert!(r < prev && r > 0.5);
            prev = r;
        }
        assert!(reg_abs(&[1.0], PExponent::Infinity).is_err());
    }

    #[test]
    fn dotted_norm_closed_forms() {
        let zero = WeightedSamples::uniform(2, vec![0.0; 20]).unwrap();
        for p in [1.5, 2.0, 8.0, 128.0] {
            assert!((dotted_lp_norm(&zero, fp(p)).unwrap() - 1.0 / p).abs() < 1e-15);
        }
        let c = WeightedSamples::uniform(2, [0.6, -0.8].repeat(7)).unwrap();
        for p in [2.0f64, 16.0] {
            let expect = (1.0 + 1.0 / (p * p)).sqrt();
            assert!((dotted_lp_norm(&c, fp(p)).unwrap() - expect).abs() < 1e-14);
        }
        let empty = WeightedSamples::uniform(1, vec![]).unwrap();
        assert!(matches!(dotted_lp_norm(&empty, fp(2.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn dotted_norm_of_identity_on_unit_interval() {
        let n = 20_000;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let h = WeightedSamples::uniform(1, x).unwrap();
        let p = 64.0;
        let v = dotted_lp_norm(&h, fp(p)).unwrap();
        // plain norm (1/(p+1))^(1/p) below, Minkowski with the 1/p channel above
        let plain = (1.0 / (p + 1.0)).powf(1.0 / p);
        assert!(v >= plain * (1.0 - 1e-6) && v <= plain + 1.0 / p, "{v}");
    }

    #[test]
    fn log_space_matches_naive_where_naive_is_safe() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let h = random_samples(&mut rng, 2, 40, 2.0);
            for p in [1.0, 2.0, 6.0, 20.0] {
                let a = dotted_lp_norm(&h, fp(p)).unwrap();
                let b = naive_dotted(&h, p);
                assert!((a - b).abs() <= 1e-13 * b);
            }
        }
    }

    #[test]
    fn high_exponent_does_not_overflow() {
        let h = WeightedSamples::uniform(1, vec![1e3, -2e3, 5e2]).unwrap();
        let v = dotted_lp_norm(&h, fp(128.0)).unwrap();
        assert!(v.is_finite() && v <= 2e3 + 1e-9 && v > 1.9e3);
        let m = dual_weight(&h, fp(128.0)).unwrap();
        assert!(m.values.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn sup_norm_cases() {
        assert_eq!(sup_norm(&WeightedSamples::uniform(2, vec![0.0; 8]).unwrap()), 0.0);
        let mut v = vec![0.0; 10];
        v[6] = 3.0;
        v[7] = -4.0;
        assert_eq!(sup_norm(&WeightedSamples::uniform(2, v).unwrap()), 5.0);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_samples(&mut rng, 3, 50, 1.0);
        let brute = (0..h.len())
            .map(|s| h.sample(s).iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        assert_eq!(sup_norm(&h), brute);
    }

    #[test]
    fn dual_weight_closed_forms() {
        let c = WeightedSamples::uniform(2, [1.0, 0.0].repeat(5)).unwrap();
        let m = dual_weight(&c, fp(2.0)).unwrap();
        for s in 0..m.len() {
            assert!((m.sample(s)[0] - 1.0 / 1.25f64.sqrt()).abs() < 1e-15);
            assert!((m.sample(s)[0] - 0.894427).abs() < 1e-6);
            assert_eq!(m.sample(s)[1], 0.0);
        }
        let z = WeightedSamples::uniform(2, vec![0.0; 6]).unwrap();
        assert!(dual_weight(&z, fp(8.0)).unwrap().values.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn holder_gap_values() {
        assert_eq!(holder_gap(fp(3.0), fp(3.0)).unwrap(), 0.0);
        let g = holder_gap(fp(2.0), fp(4.0)).unwrap();
        assert!((g - 3f64.sqrt() / 4.0).abs() < 1e-15);
        assert!((g - 0.433013).abs() < 1e-6);
        assert_eq!(holder_gap(fp(2.0), PExponent::Infinity).unwrap(), 0.5);
        assert!((holder_gap(fp(2.0), fp(1e9)).unwrap() - 0.5).abs() < 1e-12);
        assert!(holder_gap(fp(4.0), fp(2.0)).is_err());
    }

    #[test]
    fn sup_convergence_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let h = random_samples(&mut rng, 2, 60, 1.5);
            let sup = sup_norm(&h);
            let errs: Vec<f64> = (1..=9)
                .map(|k| (dotted_lp_norm(&h, fp(2f64.powi(k))).unwrap() - sup).abs())
                .collect();
            // the maximising sample alone bounds the norm from below
            let mags = h.magnitudes();
            let top = (0..mags.len()).max_by(|a, b| mags[*a].total_cmp(&mags[*b])).unwrap();
            for (k, e) in errs.iter().enumerate() {
                let p = 2f64.powi(k as i32 + 1);
                let lower = sup * h.weights[top].powf(1.0 / p);
                let upper = (sup * sup + 1.0 / (p * p)).sqrt();
                assert!(*e <= (sup - lower).max(upper - sup) + 1e-12);
            }
            // eventually decreasing
            assert!(errs.windows(2).skip(4).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn oscillating_sequence_is_not_strongly_convergent() {
        for p in [4usize, 16, 64] {
            let s = OscillatingSequence::new(p, 8).unwrap();
            let h = s.samples();
            let norm = lp_norm(&h, fp(p as f64)).unwrap();
            assert!((norm - 1.0).abs() <= 1e-12);
            assert_eq!(sup_norm(&h), 1.0);
            assert!(s.pairing_unit_interval().abs() <= 1e-12);
            assert!((s.l1_distance_unit_interval() - 1.0).abs() <= 1e-12);
        }
        assert!(OscillatingSequence::new(5, 2).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn modified_holder(seed in any::<u64>(), qi in 0usize..8, di in 0usize..8, scale in 0.01f64..10.0) {
            let ps = [1.0, 1.5, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
            let q = ps[qi];
            let p = ps[(qi + di).min(8)];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_samples(&mut rng, 2, 30, scale);
            let lhs = dotted_lp_norm(&h, fp(q)).unwrap();
            let rhs = dotted_lp_norm(&h, fp(p)).unwrap() + holder_gap(fp(q), fp(p)).unwrap();
            prop_assert!(lhs <= rhs + 1e-10, "q={} p={} {} > {}", q, p, lhs, rhs);
        }

        #[test]
        fn dual_weight_in_unit_ball(seed in any::<u64>(), pi in 0usize..4, scale in 1e-3f64..1e3) {
            let p = [2.0, 8.0, 32.0, 128.0][pi];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_samples(&mut rng, 2, 40, scale);
            let m = dual_weight(&h, fp(p)).unwrap();
            let n = lp_norm(&m, fp(p).conjugate()).unwrap();
            prop_assert!(n <= 1.0 + 1e-10, "{}", n);
        }

        #[test]
        fn duality_identity(seed in any::<u64>(), pi in 0usize..4, scale in 1e-2f64..10.0) {
            let p = [2.0, 6.0, 32.0, 128.0][pi];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_samples(&mut rng, 2, 25, scale);
            let m = dual_weight(&h, fp(p)).unwrap();
            let norm = dotted_lp_norm(&h, fp(p)).unwrap();
            let mut pairing = 0.0;
            let mut reg = 0.0;
            for s in 0..h.len() {
                let v = h.sample(s);
                let w = h.weights[s];
                pairing += w * v.iter().zip(m.sample(s)).map(|(a, b)| a * b).sum::<f64>();
                let r = reg_abs_raw(v, p);
                reg += w * ((p - 2.0) * r.ln() - (p - 1.0) * norm.ln()).exp();
            }
            let total = pairing + reg / (p * p);
            prop_assert!((total - norm).abs() <= 1e-10 * norm);
        }
    }
}
