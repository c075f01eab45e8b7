//! Double-double arithmetic and a loss evaluator built on it.
//!
//! Central differences at `eps = 1e-5` lose about ten digits to
//! cancellation, which in plain `f64` leaves an absolute noise floor near
//! `1e-10` in the difference quotient. Evaluating the loss with ~32
//! significant digits pushes that floor far below any gradient worth
//! checking. This is a separate, straightforward implementation of the
//! forward pass, so it also serves as an independent check on it.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::autodiff::{scored_targets, Target, PROB_FLOOR};
use crate::cells::HeadKind;
use crate::datasets::EventSequence;
use crate::model::{Arch, ModelParams};

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub(crate) struct Dd {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

/// `|r| ≤ ln2 / 2^11`, so terms past `r^11 / 11!` are below 1e-40.
const TAYLOR_TERMS: usize = 11;

fn inverse_factorials() -> &'static [Dd; TAYLOR_TERMS + 1] {
    static TABLE: std::sync::OnceLock<[Dd; TAYLOR_TERMS + 1]> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [Dd::ONE; TAYLOR_TERMS + 1];
        for n in 1..=TAYLOR_TERMS {
            t[n] = t[n - 1] / Dd::new(n as f64);
        }
        t
    })
}

impl Dd {
    pub(crate) const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub(crate) const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub(crate) fn new(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub(crate) fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn mul_f64(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        Dd { hi, lo }
    }

    fn ldexp(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    pub(crate) fn exp(self) -> Dd {
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        if self.hi > 709.0 {
            return Dd::new(f64::INFINITY);
        }
        // x = k ln 2 + r, then exp(r) = exp(r / 2^10)^(2^10).
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).ldexp(-10);
        let coef = inverse_factorials();
        let mut sum = coef[TAYLOR_TERMS];
        for c in coef[..TAYLOR_TERMS].iter().rev() {
            sum = sum * r + *c;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.ldexp(k as i32)
    }

    pub(crate) fn ln(self) -> Dd {
        let mut y = Dd::new(self.hi.ln());
        // one Newton step doubles the f64 starting accuracy
        y = y + self * (-y).exp() - Dd::ONE;
        y
    }

    pub(crate) fn sigmoid(self) -> Dd {
        if self.hi >= 0.0 {
            Dd::ONE / (Dd::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (Dd::ONE + e)
        }
    }

    pub(crate) fn tanh(self) -> Dd {
        let neg = self.hi < 0.0;
        let a = if neg { -self } else { self };
        let e = (a.mul_f64(-2.0)).exp();
        let t = (Dd::ONE - e) / (Dd::ONE + e);
        if neg {
            -t
        } else {
            t
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::new(q3)
    }
}

struct Gate {
    w: Vec<Dd>,
    u: Vec<Dd>,
    b: Vec<Dd>,
}

impl Gate {
    fn pre(&self, x: &[f64], h: &[Dd]) -> Vec<Dd> {
        let (ni, nh) = (x.len(), h.len());
        (0..self.b.len())
            .map(|j| {
                let mut acc = self.b[j];
                for (c, &xc) in x.iter().enumerate() {
                    if xc != 0.0 {
                        acc = acc + self.w[j * ni + c].mul_f64(xc);
                    }
                }
                for c in 0..nh {
                    acc = acc + self.u[j * nh + c] * h[c];
                }
                acc
            })
            .collect()
    }
}

/// Mean loss of `seq` with parameter `(block, index)` shifted by `delta`,
/// evaluated in double-double arithmetic.
pub(crate) fn perturbed_objective(
    model: &ModelParams,
    seq: &EventSequence,
    coord: (usize, usize),
    delta: f64,
) -> Dd {
    let mut blocks: Vec<Vec<Dd>> = model
        .blocks()
        .iter()
        .map(|b| b.iter().map(|&v| Dd::new(v)).collect())
        .collect();
    let (b, i) = coord;
    blocks[b][i] = blocks[b][i] + Dd::new(delta);
    let mut it = blocks.into_iter();
    let mut gate = || Gate {
        w: it.next().unwrap(),
        u: it.next().unwrap(),
        b: it.next().unwrap(),
    };
    let (gr, gq, gs) = (gate(), gate(), gate());
    let w_out = it.next().unwrap();
    let b_out = it.next().unwrap();

    let spec = &model.spec;
    let hdim = spec.hidden;
    let n = seq.len();
    let dts = seq.dts();
    let mut outputs: Vec<Vec<Dd>> = Vec::new();
    let mut h = vec![Dd::ZERO; hdim];
    let m = model.bank.as_ref().map_or(0, |b| b.len());
    let mut traces = vec![vec![Dd::ZERO; hdim]; m];

    for k in 0..n {
        let mut x = vec![0.0; spec.input_dim()];
        x[seq.events[k].label] = 1.0;
        if spec.arch == Arch::Gru {
            x[spec.vocab] = spec.dt_feature.apply(if k > 0 { dts[k - 1] } else { 0.0 });
            x[spec.vocab + 1] = spec.dt_feature.apply(dts[k]);
        }
        match &model.bank {
            None => {
                let r: Vec<Dd> = gr.pre(&x, &h).into_iter().map(Dd::sigmoid).collect();
                let rh: Vec<Dd> = r.iter().zip(&h).map(|(a, b)| *a * *b).collect();
                let q: Vec<Dd> = gq.pre(&x, &rh).into_iter().map(Dd::tanh).collect();
                let s: Vec<Dd> = gs.pre(&x, &h).into_iter().map(Dd::sigmoid).collect();
                for j in 0..hdim {
                    h[j] = (Dd::ONE - s[j]) * h[j] + s[j] * q[j];
                }
            }
            Some(bank) => {
                let logs = bank.log_taus();
                let weights = |ln_tau: &[Dd]| -> Vec<Vec<Dd>> {
                    // weights[i][j] over scales i for unit j
                    let mut w = vec![vec![Dd::ZERO; hdim]; m];
                    for j in 0..hdim {
                        let z: Vec<Dd> = logs
                            .iter()
                            .map(|&l| {
                                let d = ln_tau[j] - Dd::new(l);
                                -(d * d)
                            })
                            .collect();
                        let top = z.iter().fold(z[0], |a, &b| if b > a { b } else { a });
                        let e: Vec<Dd> = z.iter().map(|&v| (v - top).exp()).collect();
                        let total = e.iter().fold(Dd::ZERO, |a, &b| a + b);
                        for i in 0..m {
                            w[i][j] = e[i] / total;
                        }
                    }
                    w
                };
                let r = weights(&gr.pre(&x, &h));
                let rho: Vec<Dd> = (0..hdim)
                    .map(|j| (0..m).fold(Dd::ZERO, |a, i| a + r[i][j] * traces[i][j]))
                    .collect();
                let q: Vec<Dd> = gq.pre(&x, &rho).into_iter().map(Dd::tanh).collect();
                let s = weights(&gs.pre(&x, &h));
                let decay: Vec<f64> = bank
                    .taus()
                    .iter()
                    .map(|t| {
                        if spec.arch == Arch::CtGru {
                            (-dts[k] / t).exp()
                        } else {
                            1.0
                        }
                    })
                    .collect();
                h = vec![Dd::ZERO; hdim];
                for i in 0..m {
                    for j in 0..hdim {
                        let v = (Dd::ONE - s[i][j]) * traces[i][j] + s[i][j] * q[j];
                        traces[i][j] = v.mul_f64(decay[i]);
                        h[j] = h[j] + traces[i][j];
                    }
                }
            }
        }
        if spec.head != HeadKind::SequenceLogistic || k + 1 == n {
            let z: Vec<Dd> = (0..b_out.len())
                .map(|o| (0..hdim).fold(b_out[o], |a, j| a + w_out[o * hdim + j] * h[j]))
                .collect();
            let out = match spec.head {
                HeadKind::LabelSoftmax => {
                    let top = z.iter().fold(z[0], |a, &b| if b > a { b } else { a });
                    let e: Vec<Dd> = z.iter().map(|&v| (v - top).exp()).collect();
                    let total = e.iter().fold(Dd::ZERO, |a, &b| a + b);
                    e.into_iter().map(|v| v / total).collect()
                }
                _ => z.into_iter().map(Dd::sigmoid).collect(),
            };
            outputs.push(out);
        }
    }

    let targets = scored_targets(seq);
    if targets.is_empty() {
        return Dd::ZERO;
    }
    let mut total = Dd::ZERO;
    for &(idx, target) in &targets {
        let p = match target {
            Target::Label(y) => outputs[idx][y],
            Target::Bit { unit, value } => {
                if value {
                    outputs[idx][unit]
                } else {
                    Dd::ONE - outputs[idx][unit]
                }
            }
        };
        let p = if p.hi < PROB_FLOOR {
            Dd::new(PROB_FLOOR)
        } else {
            p
        };
        total = total - p.ln();
    }
    total / Dd::new(targets.len() as f64)
}

/// Central difference `(L(θ+ε) - L(θ-ε)) / 2ε` in double-double.
pub(crate) fn central_difference(
    model: &ModelParams,
    seq: &EventSequence,
    coord: (usize, usize),
    eps: f64,
) -> f64 {
    let up = perturbed_objective(model, seq, coord, eps);
    let down = perturbed_objective(model, seq, coord, -eps);
    ((up - down) / Dd::new(2.0 * eps)).to_f64()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Dd, b: f64, tol: f64) -> bool {
        (a.to_f64() - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn arithmetic_beyond_f64() {
        // (1 + 2^-80) - 1 survives in double-double.
        let tiny = 2f64.powi(-80);
        let x = Dd::ONE + Dd::new(tiny);
        assert_eq!((x - Dd::ONE).to_f64(), tiny);
        let third = Dd::ONE / Dd::new(3.0);
        let back = third * Dd::new(3.0) - Dd::ONE;
        assert!(back.to_f64().abs() < 1e-31);
    }

    #[test]
    fn transcendental_functions() {
        for x in [-30.0, -2.5, -0.1, 0.0, 1e-3, 0.7, 3.0, 40.0] {
            let d = Dd::new(x);
            assert!(close(d.exp(), x.exp(), 2e-16), "exp {x}");
            assert!(close(d.tanh(), x.tanh(), 2e-16) || x == 0.0, "tanh {x}");
            assert!(
                close(d.sigmoid(), crate::math::sigmoid(x), 2e-16),
                "sigmoid {x}"
            );
            // exp and ln invert each other to near double-double precision
            let round = d.exp().ln() - d;
            assert!(
                round.to_f64().abs() < 1e-29 * x.abs().max(1.0),
                "ln(exp({x}))"
            );
        }
        // e = exp(1) to about 29 digits
        let e = Dd::ONE.exp();
        let err = e - Dd::new(std::f64::consts::E) - Dd::new(1.445_646_891_729_250_1e-16);
        assert!(err.to_f64().abs() < 1e-28, "{err:?}");
        assert!(close(Dd::new(2.0).ln(), std::f64::consts::LN_2, 1e-16));
    }
}
