//! Fixed banks of log-spaced decay time constants and the half-life
//! matching mixture over them.
//!
//! A target time constant `τ` is represented by softmax weights over the
//! bank, `w_i ∝ exp(-(ln τ - ln τ̃_i)²)`. The mixture of exponentials does
//! not reproduce `exp(-t/τ)` exactly (it decays faster early and slower
//! late), but its half-life tracks `τ·ln 2` closely for targets inside the
//! bank.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::math::{softmax_in_place, Vector};

/// Ratio between neighbouring scales built by [`build_bank`].
pub const SCALE_STEP: f64 = 3.162_277_660_168_379_5; // 10^(1/2)

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimescaleBank {
    taus: Vec<f64>,
    log_taus: Vec<f64>,
}

impl TimescaleBank {
    /// Bank from explicit, strictly ascending positive scales.
    pub fn from_taus(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return contract("timescale bank needs at least one scale");
        }
        if taus.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return contract("timescales must be finite and positive");
        }
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return contract("timescales must be strictly ascending");
        }
        let log_taus = taus.iter().map(|t| t.ln()).collect();
        Ok(TimescaleBank { taus, log_taus })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn log_taus(&self) -> &[f64] {
        &self.log_taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn shortest(&self) -> f64 {
        self.taus[0]
    }

    pub fn longest(&self) -> f64 {
        self.taus[self.taus.len() - 1]
    }

    /// Midpoint of the bank in log space, `ln sqrt(τ̃_1 τ̃_M)`.
    pub fn log_center(&self) -> f64 {
        0.5 * (self.log_taus[0] + self.log_taus[self.log_taus.len() - 1])
    }
}

/// Scales `tau_min · 10^(i/2)` for `i = 0, 1, ...` up to and including the
/// first one that reaches `tau_max`.
pub fn build_bank(tau_min: f64, tau_max: f64) -> Result<TimescaleBank> {
    if !(tau_min.is_finite() && tau_max.is_finite() && tau_min > 0.0 && tau_min < tau_max) {
        return contract(format!(
            "bank bounds must satisfy 0 < tau_min < tau_max (got {tau_min}, {tau_max})"
        ));
    }
    let mut taus = vec![tau_min];
    let mut i = 1;
    while *taus.last().unwrap() < tau_max * (1.0 - 1e-12) {
        taus.push(tau_min * 10f64.powf(i as f64 / 2.0));
        i += 1;
    }
    TimescaleBank::from_taus(taus)
}

/// Mixture weights over the bank; sums to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleWeights(Vec<f64>);

impl ScaleWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return contract("scale weights must be finite and nonnegative");
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return contract(format!("scale weights sum to {sum}, not 1"));
        }
        Ok(ScaleWeights(weights))
    }

    /// All mass on scale `index`.
    pub fn delta(m: usize, index: usize) -> Self {
        let mut w = vec![0.0; m];
        w[index] = 1.0;
        ScaleWeights(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Softmax over `-(ln_target - ln τ̃_i)²`.
pub fn scale_weights(ln_tau_target: f64, bank: &TimescaleBank) -> ScaleWeights {
    let mut w = vec![0.0; bank.len()];
    scale_weights_into(ln_tau_target, bank.log_taus(), &mut w);
    ScaleWeights(w)
}

#[inline]
pub(crate) fn scale_weights_into(ln_target: f64, log_taus: &[f64], out: &mut [f64]) {
    for (o, l) in out.iter_mut().zip(log_taus) {
        let d = ln_target - l;
        *o = -d * d;
    }
    softmax_in_place(out);
}

/// `exp(-dt/τ̃_i)` for each scale.
pub fn decay_factors(bank: &TimescaleBank, dt: f64) -> Result<Vector> {
    if !dt.is_finite() || dt < 0.0 {
        return contract(format!(
            "elapsed time must be finite and nonnegative (got {dt})"
        ));
    }
    Ok(Vector::from_vec_unchecked(
        bank.taus().iter().map(|tau| (-dt / tau).exp()).collect(),
    ))
}

/// `Σ_i w_i exp(-t/τ̃_i)`.
pub fn mixture_decay(w: &ScaleWeights, bank: &TimescaleBank, t: f64) -> f64 {
    w.0.iter()
        .zip(bank.taus())
        .map(|(wi, tau)| wi * (-t / tau).exp())
        .sum()
}

/// Time at which the mixture decays to one half, by bisection to 1e-9.
pub fn mixture_half_life(w: &ScaleWeights, bank: &TimescaleBank) -> f64 {
    let mut lo = 0.0;
    let mut hi = bank.longest() * std::f64::consts::LN_2 * 10.0;
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mixture_decay(w, bank, mid) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One row of the half-life comparison: target scale, its true half-life,
/// and the half-life of its bank mixture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfLifePoint {
    pub tau: f64,
    pub true_half_life: f64,
    pub mixture_half_life: f64,
}

/// Half-life comparison for `n` targets log-uniformly spaced strictly inside
/// the bank (endpoints excluded).
pub fn half_life_curve(bank: &TimescaleBank, n: usize) -> Vec<HalfLifePoint> {
    half_life_curve_between(bank, bank.shortest(), bank.longest(), n)
}

/// As [`half_life_curve`] for targets strictly inside `(tau_lo, tau_hi)`.
pub fn half_life_curve_between(
    bank: &TimescaleBank,
    tau_lo: f64,
    tau_hi: f64,
    n: usize,
) -> Vec<HalfLifePoint> {
    let (lo, hi) = (tau_lo.ln(), tau_hi.ln());
    (1..=n)
        .map(|i| {
            let ln_tau = lo + (hi - lo) * i as f64 / (n + 1) as f64;
            let tau = ln_tau.exp();
            HalfLifePoint {
                tau,
                true_half_life: tau * std::f64::consts::LN_2,
                mixture_half_life: mixture_half_life(&scale_weights(ln_tau, bank), bank),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn build_bank_examples() {
        let b = build_bank(1.0, 10.0).unwrap();
        assert_eq!(b.len(), 3);
        assert!((b.taus()[1] - 3.1623).abs() < 1e-4);
        assert!((b.taus()[2] - 10.0).abs() < 1e-12);

        let b = build_bank(1.0, 1000.0).unwrap();
        assert_eq!(b.len(), 7);
        assert!((b.longest() - 1000.0).abs() < 1e-9);
        for w in b.taus().windows(2) {
            assert!((w[1] / w[0] - SCALE_STEP).abs() < 1e-12);
        }

        // top scale rounds up past tau_max
        let b = build_bank(1.0, 11.0).unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.longest() >= 11.0);
    }

    #[test]
    fn bank_sizes_for_paper_ranges() {
        // 1.5 to 4 decades of range give 4..=9 scales
        for (decades, m) in [(1.5, 4), (2.0, 5), (2.5, 6), (3.0, 7), (3.5, 8), (4.0, 9)] {
            let b = build_bank(0.1, 0.1 * 10f64.powf(decades)).unwrap();
            assert_eq!(b.len(), m, "decades {decades}");
        }
    }

    #[test]
    fn build_bank_rejects_bad_bounds() {
        assert!(build_bank(0.0, 1.0).is_err());
        assert!(build_bank(-1.0, 1.0).is_err());
        assert!(build_bank(5.0, 5.0).is_err());
        assert!(build_bank(10.0, 1.0).is_err());
    }

    #[test]
    fn scale_weights_examples() {
        let b = build_bank(1.0, 10.0).unwrap();
        let w = scale_weights(SCALE_STEP.ln(), &b);
        // e^{-d²}/(1+2e^{-d²}), d = ln 10^{1/2}
        let e = (-(SCALE_STEP.ln().powi(2))).exp();
        let expect = [
            e / (1.0 + 2.0 * e),
            1.0 / (1.0 + 2.0 * e),
            e / (1.0 + 2.0 * e),
        ];
        for (got, want) in w.as_slice().iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((w.as_slice()[0] - 0.1735).abs() < 1e-4);
        assert!((w.as_slice()[1] - 0.6530).abs() < 1e-4);

        let b = build_bank(1.0, 1000.0).unwrap();
        let w = scale_weights(b.log_taus()[3], &b);
        assert!((w.as_slice()[2] - w.as_slice()[4]).abs() < 1e-15);
        assert!((w.as_slice()[1] - w.as_slice()[5]).abs() < 1e-15);

        let w = scale_weights(-30.0, &b);
        assert!((w.as_slice()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decay_factor_examples() {
        let b = build_bank(2.0, 200.0).unwrap();
        assert!(decay_factors(&b, 0.0).unwrap().iter().all(|&f| f == 1.0));
        let f = decay_factors(&b, b.taus()[2] * LN_2).unwrap();
        assert!((f[2] - 0.5).abs() < 1e-15);
        assert!(decay_factors(&b, 1e9).unwrap().iter().all(|&f| f < 1e-300));
        assert!(decay_factors(&b, -1.0).is_err());
    }

    #[test]
    fn mixture_decay_examples() {
        let b = build_bank(1.0, 100.0).unwrap();
        let w = scale_weights(2.0, &b);
        assert!((mixture_decay(&w, &b, 0.0) - 1.0).abs() < 1e-15);
        let d = ScaleWeights::delta(b.len(), 2);
        assert!((mixture_decay(&d, &b, b.taus()[2]) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn mixture_has_heavy_tail() {
        // Past the half-life the mixture sits above the single exponential
        // with the same half-life.
        let b = build_bank(1.0, 1000.0).unwrap();
        for tau in [10.0, 20.0, 50.0, 100.0] {
            let w = scale_weights(f64::ln(tau), &b);
            let hl = mixture_half_life(&w, &b);
            let matched = hl / LN_2;
            for k in 1..=20 {
                let t = hl * (1.0 + 0.5 * k as f64);
                assert!(
                    mixture_decay(&w, &b, t) > (-t / matched).exp(),
                    "tau {tau} t {t}"
                );
            }
        }
    }

    #[test]
    fn half_life_of_delta_weights() {
        let b = build_bank(1.0, 100.0).unwrap();
        for i in 0..b.len() {
            let hl = mixture_half_life(&ScaleWeights::delta(b.len(), i), &b);
            assert!((hl - b.taus()[i] * LN_2).abs() < 1e-8);
        }
    }

    /// Brute-force scan of the half-life ratio over a fine interior grid.
    fn worst_ratio_scan(bank: &TimescaleBank, n: usize) -> f64 {
        half_life_curve(bank, n)
            .iter()
            .map(|p| {
                let r = p.mixture_half_life / p.true_half_life;
                r.max(1.0 / r)
            })
            .fold(1.0, f64::max)
    }

    #[test]
    fn half_life_within_tolerance_inside_wide_banks() {
        // Scanned worst case on a 50-point interior grid is ×/÷1.225 for a
        // 7-scale bank and ×/÷1.205 for 9 scales.
        for (lo, hi) in [(1.0, 1000.0), (0.5, 300.0), (0.1, 1000.0)] {
            let b = build_bank(lo, hi).unwrap();
            assert!(b.len() >= 7);
            assert!(worst_ratio_scan(&b, 50) <= 1.25);
        }
        // The match degrades toward the extreme edges of the bank.
        let b = build_bank(1.0, 1000.0).unwrap();
        let w = scale_weights(b.log_taus()[6], &b);
        let r = mixture_half_life(&w, &b) / (b.longest() * LN_2);
        assert!(r < 0.78 && r > 0.76);
    }

    #[test]
    fn half_life_monotone_on_scan() {
        let b = build_bank(1.0, 1000.0).unwrap();
        let curve = half_life_curve(&b, 400);
        for w in curve.windows(2) {
            assert!(w[1].mixture_half_life > w[0].mixture_half_life);
        }
    }

    proptest! {
        #[test]
        fn scale_weights_normalized_and_shift_invariant(target in -20.0f64..20.0, shift in -5.0f64..5.0) {
            let b = build_bank(0.3, 3000.0).unwrap();
            let w = scale_weights(target, &b);
            prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            // shifting both the target and the bank leaves the weights unchanged
            let shifted = TimescaleBank::from_taus(
                b.taus().iter().map(|t| t * shift.exp()).collect()
            ).unwrap();
            let w2 = scale_weights(target + shift, &shifted);
            for (a, c) in w.as_slice().iter().zip(w2.as_slice()) {
                prop_assert!((a - c).abs() <= 1e-12);
            }
        }

        #[test]
        fn scale_weights_unimodal(target in -5.0f64..12.0) {
            let b = build_bank(0.1, 1e4).unwrap();
            let w = scale_weights(target, &b);
            let s = w.as_slice();
            let peak = (0..s.len()).max_by(|&i, &j| s[i].total_cmp(&s[j])).unwrap();
            prop_assert!(s[..=peak].windows(2).all(|p| p[0] <= p[1]));
            prop_assert!(s[peak..].windows(2).all(|p| p[0] >= p[1]));
        }

        #[test]
        fn decay_semigroup(dt1 in 0.0f64..50.0, dt2 in 0.0f64..50.0) {
            let b = build_bank(0.5, 500.0).unwrap();
            let f1 = decay_factors(&b, dt1).unwrap();
            let f2 = decay_factors(&b, dt2).unwrap();
            let f12 = decay_factors(&b, dt1 + dt2).unwrap();
            for i in 0..b.len() {
                let prod = f1[i] * f2[i];
                prop_assert!((prod - f12[i]).abs() <= 1e-12 * f12[i].max(1e-300));
            }
        }

        #[test]
        fn half_life_increases_with_target(u in 0.001f64..0.998, du in 0.0005f64..0.001) {
            let b = build_bank(1.0, 1000.0).unwrap();
            let lo = b.log_taus()[0];
            let span = b.log_taus()[6] - lo;
            let a = mixture_half_life(&scale_weights(lo + u * span, &b), &b);
            let c = mixture_half_life(&scale_weights(lo + (u + du) * span, &b), &b);
            prop_assert!(c > a);
        }
    }
}
