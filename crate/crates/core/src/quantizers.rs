//! Scalar phase quantizers and their smooth training-time surrogates.
//!
//! All quantizers share a [`QuantizerSpec`]: `levels` uniformly spaced values
//! from `lower` to `upper` inclusive, `step = (upper - lower) / (levels - 1)`.
//! The hard quantizer ([`hard_quantize`]) is what evaluation always uses; the
//! soft variants exist to give training useful gradients:
//!
//! * [`psq_eval`] — a sum of shifted sigmoids, one per level transition. It is
//!   smooth, strictly increasing, *not* clamped outside the range (inputs far
//!   below `lower` still receive an exponentially small but nonzero pull), and
//!   converges pointwise to the hard staircase as the temperature grows.
//! * [`dsq_eval`] — a per-cell tanh surrogate that *is* clamped to the range,
//!   with zero gradient outside it.
//! * Straight-through ([`ste_forward`]) — hard forward, identity backward.
//! * Gumbel-softmax ([`gs_forward_train`], [`gs_eval`]) — a categorical
//!   relaxation over the level set with per-weight logits.

use rand::Rng;

use crate::error::{Error, Result};

/// Uniform quantization grid: `levels` values spaced `step` apart from
/// `lower` to `upper` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    pub lower: f64,
    pub upper: f64,
    pub levels: u32,
    /// Spacing between adjacent levels, `(upper - lower) / (levels - 1)`.
    pub step: f64,
}

impl QuantizerSpec {
    /// Build a spec, validating `levels >= 2`, `upper > lower`, and finiteness.
    pub fn new(lower: f64, upper: f64, levels: u32) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidParam(format!(
                "quantizer bounds must be finite, got [{lower}, {upper}]"
            )));
        }
        if upper <= lower {
            return Err(Error::InvalidParam(format!(
                "quantizer upper bound {upper} must exceed lower bound {lower}"
            )));
        }
        if levels < 2 {
            return Err(Error::InvalidParam(format!(
                "quantizer needs at least 2 levels, got {levels}"
            )));
        }
        let step = (upper - lower) / (levels - 1) as f64;
        Ok(Self {
            lower,
            upper,
            levels,
            step,
        })
    }

    /// The i-th level value, `lower + i * step`.
    pub fn level(&self, i: u32) -> f64 {
        self.lower + i as f64 * self.step
    }

    /// All level values in ascending order.
    pub fn level_values(&self) -> Vec<f64> {
        (0..self.levels).map(|i| self.level(i)).collect()
    }

    /// Midpoint between levels i and i+1 (the i-th transition center),
    /// `lower + (i + 0.5) * step`, for `i < levels - 1`.
    pub fn transition(&self, i: u32) -> f64 {
        self.lower + (i as f64 + 0.5) * self.step
    }
}

/// Reparameterized temperature `tau = 1 / (|k| + gamma)`.
///
/// `k` is the trainable scalar; `gamma > 0` bounds the temperature from above
/// by `1 / gamma`, so the surrogate can approach but never reach the
/// zero-gradient hard limit during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureParam {
    pub k: f64,
    pub gamma: f64,
}

impl TemperatureParam {
    pub fn new(k: f64, gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma <= 0.0 || !k.is_finite() {
            return Err(Error::InvalidParam(format!(
                "temperature parameter needs finite k and gamma > 0, got k={k} gamma={gamma}"
            )));
        }
        Ok(Self { k, gamma })
    }

    /// `tau = 1 / (|k| + gamma)`.
    pub fn temperature(&self) -> f64 {
        temperature_from_k(self.k, self.gamma)
    }

    /// `d tau / d k = -sign(k) / (|k| + gamma)^2`; the subgradient at `k = 0`
    /// is taken as 0.
    pub fn temperature_grad_k(&self) -> f64 {
        temperature_grad_k(self.k, self.gamma)
    }
}

/// Temperature from its trainable parameter: `1 / (|k| + gamma)`.
pub fn temperature_from_k(k: f64, gamma: f64) -> f64 {
    1.0 / (k.abs() + gamma)
}

/// Derivative of [`temperature_from_k`] with respect to `k` (0 at `k = 0`).
pub fn temperature_grad_k(k: f64, gamma: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        let d = k.abs() + gamma;
        -k.signum() / (d * d)
    }
}

/// Numerically stable logistic function, exact at the saturated ends.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the logistic function, `sigmoid(x) * (1 - sigmoid(x))`.
pub fn sigmoid_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Hard staircase quantizer: clamps below `lower` and at/above `upper`,
/// otherwise rounds to the nearest level (ties away from zero).
///
/// The result is always a member of the level set, computed as
/// `lower + round((x - lower) / step) * step` so it is bit-identical to
/// [`QuantizerSpec::level`] of the corresponding index.
pub fn hard_quantize(x: f64, spec: &QuantizerSpec) -> f64 {
    if x < spec.lower {
        spec.lower
    } else if x >= spec.upper {
        spec.upper
    } else {
        spec.lower + ((x - spec.lower) / spec.step).round() * spec.step
    }
}

/// Smooth staircase: `lower + sum_i step * sigmoid(tau * (x - transition_i))`.
///
/// Strictly increasing in `x` for any finite `tau > 0` and mathematically
/// confined to the open interval `(lower, upper)`; in `f64` the sigmoids
/// saturate exactly, so far inputs at large `tau` evaluate to the closed
/// endpoints. Inputs outside the range are *not* clamped — they keep an
/// exponentially small gradient, which distinguishes this surrogate from
/// [`dsq_eval`].
pub fn psq_eval(x: f64, tau: f64, spec: &QuantizerSpec) -> f64 {
    let mut q = spec.lower;
    for i in 0..spec.levels - 1 {
        q += spec.step * sigmoid(tau * (x - spec.transition(i)));
    }
    q
}

/// `d psq / d x = step * tau * sum_i sigmoid'(tau * (x - transition_i))`.
///
/// Strictly positive for finite `tau` (up to floating-point underflow far
/// outside the range).
pub fn psq_grad_input(x: f64, tau: f64, spec: &QuantizerSpec) -> f64 {
    let mut g = 0.0;
    for i in 0..spec.levels - 1 {
        g += sigmoid_derivative(tau * (x - spec.transition(i)));
    }
    spec.step * tau * g
}

/// `d psq / d tau = step * sum_i (x - transition_i) * sigmoid'(tau * (x - transition_i))`.
pub fn psq_grad_temperature(x: f64, tau: f64, spec: &QuantizerSpec) -> f64 {
    let mut g = 0.0;
    for i in 0..spec.levels - 1 {
        let d = x - spec.transition(i);
        g += d * sigmoid_derivative(tau * d);
    }
    spec.step * g
}

/// Straight-through forward pass: identical to [`hard_quantize`]. The
/// backward pass treats the quantizer as the identity (gradient passes
/// through unchanged), which the network backward implements by skipping the
/// quantizer factor.
pub fn ste_forward(x: f64, spec: &QuantizerSpec) -> f64 {
    hard_quantize(x, spec)
}

/// Index of the cell `[level_i, level_{i+1}]` containing `x`, clamped to the
/// valid cell range.
fn dsq_cell(x: f64, spec: &QuantizerSpec) -> u32 {
    let i = ((x - spec.lower) / spec.step).floor();
    if i < 0.0 {
        0
    } else {
        (i as u32).min(spec.levels - 2)
    }
}

/// Per-cell tanh surrogate, clamped to `[lower, upper]`.
///
/// Within cell i the output is
/// `level_i + (step / 2) * (1 + tanh(tau * (x - transition_i)) / tanh(tau * step / 2))`,
/// which meets the cell endpoints exactly and passes through the cell center
/// at `x = transition_i`.
pub fn dsq_eval(x: f64, tau: f64, spec: &QuantizerSpec) -> f64 {
    if x <= spec.lower {
        return spec.lower;
    }
    if x >= spec.upper {
        return spec.upper;
    }
    let i = dsq_cell(x, spec);
    let center = spec.transition(i);
    let norm = (tau * spec.step / 2.0).tanh();
    spec.level(i) + spec.step / 2.0 * (1.0 + (tau * (x - center)).tanh() / norm)
}

/// Derivative of [`dsq_eval`] with respect to `x`: zero outside the range,
/// the per-cell tanh slope inside.
pub fn dsq_grad_input(x: f64, tau: f64, spec: &QuantizerSpec) -> f64 {
    if x <= spec.lower || x >= spec.upper {
        return 0.0;
    }
    let i = dsq_cell(x, spec);
    let center = spec.transition(i);
    let norm = (tau * spec.step / 2.0).tanh();
    let t = (tau * (x - center)).tanh();
    spec.step / 2.0 * tau * (1.0 - t * t) / norm
}

/// Initial per-level logits for the categorical relaxation of a phase value:
/// `logit_i = -scale * (phi - level_i)^2` with `scale = 8 / step^2`, so the
/// nearest level starts most probable.
pub fn gs_init_logits(phi: f64, spec: &QuantizerSpec, out: &mut [f64]) {
    assert_eq!(out.len(), spec.levels as usize);
    let scale = 8.0 / (spec.step * spec.step);
    for (i, o) in out.iter_mut().enumerate() {
        let d = phi - spec.level(i as u32);
        *o = -scale * d * d;
    }
}

/// Draw standard Gumbel noise into `out`.
pub fn sample_gumbel<R: Rng>(rng: &mut R, out: &mut [f64]) {
    for o in out.iter_mut() {
        // Uniform in (0, 1): nudge away from 0 so the double log stays finite.
        let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        *o = -(-u.ln()).ln();
    }
}

/// Training-time categorical relaxation: softmax of `(logits + noise) / temp`
/// over the level set, returning the convex combination of levels. The
/// probabilities are written to `probs_out` for the backward pass, where
/// `d value / d logit_j = probs[j] * (level_j - value) / temp`.
pub fn gs_forward_train(
    logits: &[f64],
    noise: &[f64],
    temp: f64,
    spec: &QuantizerSpec,
    probs_out: &mut [f64],
) -> f64 {
    let n = spec.levels as usize;
    assert_eq!(logits.len(), n);
    assert_eq!(noise.len(), n);
    assert_eq!(probs_out.len(), n);
    assert!(temp > 0.0, "gumbel-softmax temperature must be positive");
    let mut zmax = f64::NEG_INFINITY;
    for i in 0..n {
        let z = (logits[i] + noise[i]) / temp;
        probs_out[i] = z;
        if z > zmax {
            zmax = z;
        }
    }
    let mut sum = 0.0;
    for p in probs_out.iter_mut() {
        *p = (*p - zmax).exp();
        sum += *p;
    }
    let mut value = 0.0;
    for (i, p) in probs_out.iter_mut().enumerate() {
        *p /= sum;
        value += *p * spec.level(i as u32);
    }
    value
}

/// Evaluation-time value of the categorical relaxation: the level with the
/// largest logit, ties resolved toward the lowest index.
pub fn gs_eval(logits: &[f64], spec: &QuantizerSpec) -> f64 {
    assert_eq!(logits.len(), spec.levels as usize);
    let mut best = 0usize;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    spec.level(best as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn q4() -> QuantizerSpec {
        QuantizerSpec::new(0.0, 1.99 * PI, 4).unwrap()
    }

    #[test]
    fn spec_validates_inputs() {
        assert!(QuantizerSpec::new(0.0, 1.0, 1).is_err());
        assert!(QuantizerSpec::new(1.0, 1.0, 2).is_err());
        assert!(QuantizerSpec::new(0.0, f64::NAN, 2).is_err());
        let s = QuantizerSpec::new(0.0, 3.0, 4).unwrap();
        assert_eq!(s.step, 1.0);
        assert_eq!(s.level_values(), vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn hard_quantize_clamps_and_rounds() {
        let s = q4();
        assert_eq!(hard_quantize(-1.0, &s), 0.0);
        assert_eq!(hard_quantize(s.upper, &s), s.upper);
        assert_eq!(hard_quantize(s.upper + 5.0, &s), s.upper);
        // 0.4*pi sits nearest the first interior level (~0.663*pi).
        let q = hard_quantize(0.4 * PI, &s);
        assert_eq!(q, s.level(1));
        assert!((q / PI - 0.663).abs() < 1e-3);
        // Ties round away from zero: exactly between level 0 and 1 -> level 1.
        assert_eq!(hard_quantize(0.5 * s.step, &s), s.level(1));
    }

    #[test]
    fn hard_quantize_lands_on_levels_bitwise() {
        let s = QuantizerSpec::new(-0.7, 2.3, 5).unwrap();
        let levels = s.level_values();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let x = s.lower - 2.0 * s.step + rng.gen::<f64>() * (s.upper - s.lower + 4.0 * s.step);
            let q = hard_quantize(x, &s);
            assert!(
                levels.contains(&q),
                "quantized value {q} not in level set {levels:?}"
            );
        }
    }

    #[test]
    fn sigmoid_basics() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
        for &x in &[700.0, 1000.0, -700.0, -1000.0] {
            let s = sigmoid(x);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        }
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid_derivative(0.0), 0.25);
    }

    #[test]
    fn sigmoid_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..1000 {
            let x = (rng.gen::<f64>() - 0.5) * 40.0;
            let fd = (sigmoid(x + h) - sigmoid(x - h)) / (2.0 * h);
            let g = sigmoid_derivative(x);
            // The absolute floor covers rounding noise in the saturated tails,
            // where the centered difference subtracts two values near 1.
            assert!(
                (fd - g).abs() <= 1e-6 * g + 1e-9,
                "x={x}: fd={fd} analytic={g}"
            );
        }
    }

    #[test]
    fn psq_saturates_to_levels_at_high_temperature() {
        let s = q4();
        let tau = 1e4;
        assert!((psq_eval(s.lower, tau, &s) - s.lower).abs() <= 1e-6 * s.step);
        // The first transition midpoint maps to itself (sigmoid(0) = 1/2).
        let mid = s.lower + s.step / 2.0;
        assert!((psq_eval(mid, tau, &s) - mid).abs() <= 1e-6 * s.step);
        for i in 0..s.levels {
            let x = s.level(i);
            assert!((psq_eval(x, tau, &s) - x).abs() <= 1e-9 * s.step);
        }
    }

    #[test]
    fn psq_stays_strictly_inside_range_at_moderate_temperature() {
        let s = q4();
        for &tau in &[0.5, 2.0, 4.0] {
            for i in 0..=1000 {
                let x = s.lower - s.step + i as f64 / 1000.0 * (s.upper - s.lower + 2.0 * s.step);
                let q = psq_eval(x, tau, &s);
                assert!(
                    q > s.lower && q < s.upper,
                    "psq({x}, {tau}) = {q} escaped range"
                );
            }
        }
    }

    #[test]
    fn psq_is_strictly_increasing() {
        for levels in [2u32, 4] {
            let s = QuantizerSpec::new(0.0, 1.99 * PI, levels).unwrap();
            for &tau in &[0.5, 2.0] {
                let mut prev = f64::NEG_INFINITY;
                for i in 0..=2000 {
                    let x =
                        s.lower - s.step / 2.0 + i as f64 / 2000.0 * (s.upper - s.lower + s.step);
                    let q = psq_eval(x, tau, &s);
                    assert!(q > prev, "psq not strictly increasing at x={x} tau={tau}");
                    prev = q;
                }
            }
        }
    }

    #[test]
    fn psq_converges_to_hard_quantizer() {
        // Sup distance to the hard staircase over a dense grid, excluding a
        // band of step/20 around each transition, must shrink to 1e-3*step by
        // tau = 1e4 and decrease monotonically over the tau ladder.
        let s = q4();
        let taus = [1.0, 5.0, 20.0, 100.0, 1e4];
        let mut sups = Vec::new();
        for &tau in &taus {
            let mut sup: f64 = 0.0;
            for i in 0..=10_000 {
                let x = s.lower - s.step + i as f64 / 10_000.0 * (s.upper - s.lower + 2.0 * s.step);
                let near_transition =
                    (0..s.levels - 1).any(|t| (x - s.transition(t)).abs() < s.step / 20.0);
                if near_transition {
                    continue;
                }
                sup = sup.max((psq_eval(x, tau, &s) - hard_quantize(x, &s)).abs());
            }
            sups.push(sup);
        }
        assert!(sups[4] <= 1e-3 * s.step, "sup at tau=1e4 was {}", sups[4]);
        for w in sups.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "sup distance not monotone: {sups:?}");
        }
    }

    #[test]
    fn psq_grad_input_positive_and_peaked_at_transitions() {
        let s = q4();
        let g = psq_grad_input(s.lower - 10.0 * s.step, 2.0, &s);
        assert!(g > 0.0, "gradient must stay strictly positive, got {g}");
        let at_mid = psq_grad_input(s.transition(0), 10.0, &s);
        assert!((at_mid - s.step * 10.0 * 0.25).abs() <= 1e-6);
    }

    #[test]
    fn psq_gradients_match_finite_differences() {
        let s = q4();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..2000 {
            let x = s.lower - s.step / 4.0 + rng.gen::<f64>() * (s.upper - s.lower + s.step / 2.0);
            let tau = 0.5 + rng.gen::<f64>() * 9.5;
            let fd_x = (psq_eval(x + h, tau, &s) - psq_eval(x - h, tau, &s)) / (2.0 * h);
            let gx = psq_grad_input(x, tau, &s);
            // Absolute floor 1e-8 covers centered-difference rounding noise
            // (~5e-10 for values of this magnitude at h=1e-6).
            assert!(
                (fd_x - gx).abs() <= 1e-5 * gx.abs() + 1e-8,
                "d/dx mismatch at x={x} tau={tau}: fd={fd_x} analytic={gx}"
            );
            let fd_t = (psq_eval(x, tau + h, &s) - psq_eval(x, tau - h, &s)) / (2.0 * h);
            let gt = psq_grad_temperature(x, tau, &s);
            assert!(
                (fd_t - gt).abs() <= 1e-5 * gt.abs() + 1e-8,
                "d/dtau mismatch at x={x} tau={tau}: fd={fd_t} analytic={gt}"
            );
        }
    }

    #[test]
    fn temperature_reparameterization() {
        let gamma = 0.05;
        assert_eq!(temperature_from_k(0.0, gamma), 1.0 / gamma);
        assert_eq!(temperature_grad_k(0.0, gamma), 0.0);
        assert!((temperature_from_k(0.95, gamma) - 1.0).abs() < 1e-12);
        let h = 1e-7;
        for &k in &[0.3, -0.3, 1.7, -0.02] {
            let fd =
                (temperature_from_k(k + h, gamma) - temperature_from_k(k - h, gamma)) / (2.0 * h);
            let g = temperature_grad_k(k, gamma);
            assert!((fd - g).abs() <= 1e-5 * g.abs());
        }
        let tp = TemperatureParam::new(0.95, gamma).unwrap();
        assert!((tp.temperature() - 1.0).abs() < 1e-12);
        assert!(TemperatureParam::new(0.1, 0.0).is_err());
    }

    #[test]
    fn dsq_interpolates_each_cell() {
        let s = q4();
        let tau = 3.0;
        // Cell centers map to cell midpoints, cell edges to the levels.
        for i in 0..s.levels - 1 {
            let c = s.transition(i);
            assert!((dsq_eval(c, tau, &s) - (s.level(i) + s.step / 2.0)).abs() < 1e-12);
        }
        for i in 0..s.levels {
            let x = s.level(i);
            assert!(
                (dsq_eval(x, tau, &s) - x).abs() < 1e-9,
                "level {i} not fixed"
            );
        }
        // Continuity across interior cell boundaries.
        for i in 1..s.levels - 1 {
            let x = s.level(i);
            let below = dsq_eval(x - 1e-9, tau, &s);
            let above = dsq_eval(x + 1e-9, tau, &s);
            assert!((below - above).abs() < 1e-6);
        }
        // Clamped with zero gradient outside the range.
        assert_eq!(dsq_eval(s.lower - 1.0, tau, &s), s.lower);
        assert_eq!(dsq_eval(s.upper + 1.0, tau, &s), s.upper);
        assert_eq!(dsq_grad_input(s.lower - 1.0, tau, &s), 0.0);
        assert_eq!(dsq_grad_input(s.upper + 1.0, tau, &s), 0.0);
    }

    #[test]
    fn dsq_gradient_matches_finite_difference_inside_cells() {
        let s = q4();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-7;
        let mut checked = 0;
        while checked < 1000 {
            let x = s.lower + rng.gen::<f64>() * (s.upper - s.lower);
            let tau = 0.5 + rng.gen::<f64>() * 5.0;
            // Stay away from the non-smooth cell edges and range boundary.
            let edge_dist = (0..s.levels)
                .map(|i| (x - s.level(i)).abs())
                .fold(f64::INFINITY, f64::min);
            if edge_dist < 1e-4 {
                continue;
            }
            let fd = (dsq_eval(x + h, tau, &s) - dsq_eval(x - h, tau, &s)) / (2.0 * h);
            let g = dsq_grad_input(x, tau, &s);
            assert!(
                (fd - g).abs() <= 1e-5 * g.abs().max(1e-7),
                "dsq d/dx mismatch at x={x} tau={tau}: fd={fd} analytic={g}"
            );
            checked += 1;
        }
    }

    #[test]
    fn gs_init_puts_the_nearest_level_first() {
        let s = q4();
        let mut logits = vec![0.0; 4];
        // Away from exact midpoints the argmax of the initial logits must
        // agree with the hard quantizer.
        for i in 0..=997 {
            let x =
                s.lower - s.step + (i as f64 + 0.013) / 998.0 * (s.upper - s.lower + 2.0 * s.step);
            gs_init_logits(x, &s, &mut logits);
            assert_eq!(gs_eval(&logits, &s), hard_quantize(x, &s), "at phi={x}");
        }
        // Exactly between two levels both logits tie; eval takes the lower.
        gs_init_logits(s.transition(1), &s, &mut logits);
        assert_eq!(logits[1], logits[2]);
        assert_eq!(gs_eval(&logits, &s), s.level(1));
    }

    #[test]
    fn gs_train_sample_is_a_convex_combination() {
        let s = q4();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut logits = vec![0.0; 4];
        let mut noise = vec![0.0; 4];
        let mut probs = vec![0.0; 4];
        for _ in 0..500 {
            let phi = rng.gen::<f64>() * s.upper;
            gs_init_logits(phi, &s, &mut logits);
            sample_gumbel(&mut rng, &mut noise);
            let v = gs_forward_train(&logits, &noise, 5.0, &s, &mut probs);
            assert!(v >= s.lower && v <= s.upper);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gs_concentrates_as_temperature_anneals() {
        let s = q4();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut logits = vec![0.0; 4];
        let mut noise = vec![0.0; 4];
        let mut probs = vec![0.0; 4];
        gs_init_logits(1.1 * PI, &s, &mut logits);
        sample_gumbel(&mut rng, &mut noise);
        // Winner under the fixed noise draw.
        let target = {
            let z: Vec<f64> = logits.iter().zip(&noise).map(|(l, g)| l + g).collect();
            gs_eval(&z, &s)
        };
        let mut prev = f64::INFINITY;
        for &temp in &[10.0, 1.0, 0.1, 0.01] {
            let v = gs_forward_train(&logits, &noise, temp, &s, &mut probs);
            let dist = (v - target).abs();
            assert!(
                dist <= prev + 1e-12,
                "not concentrating: {dist} after {prev}"
            );
            prev = dist;
        }
        assert!(prev < 1e-3 * s.step);
    }

    #[test]
    fn gs_logit_gradient_matches_finite_difference() {
        let s = q4();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut logits = vec![0.0; 4];
        let mut noise = vec![0.0; 4];
        let mut probs = vec![0.0; 4];
        gs_init_logits(0.9 * PI, &s, &mut logits);
        sample_gumbel(&mut rng, &mut noise);
        let temp = 2.5;
        let v = gs_forward_train(&logits, &noise, temp, &s, &mut probs);
        let h = 1e-6;
        for j in 0..4 {
            let mut lp = logits.clone();
            lp[j] += h;
            let mut lm = logits.clone();
            lm[j] -= h;
            let mut scratch = vec![0.0; 4];
            let fd = (gs_forward_train(&lp, &noise, temp, &s, &mut scratch)
                - gs_forward_train(&lm, &noise, temp, &s, &mut scratch))
                / (2.0 * h);
            let g = probs[j] * (s.level(j as u32) - v) / temp;
            assert!(
                (fd - g).abs() <= 1e-6 * g.abs().max(1e-8),
                "logit {j}: fd={fd} g={g}"
            );
        }
    }
}
