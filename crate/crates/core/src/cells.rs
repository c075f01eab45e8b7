//! Forward dynamics of the GRU and the continuous-time GRU (CT-GRU).
//!
//! Both cells share the same nine parameter blocks. In the GRU the `r` and
//! `s` blocks produce gate pre-activations; in the CT-GRU they produce
//! `ln τ` for retrieval and storage directly, which are turned into
//! per-unit softmax weights over the timescale bank.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, contract, Result};
use crate::math::{sigmoid, softmax_in_place, Matrix, Vector};
use crate::timescales::{scale_weights_into, TimescaleBank};

/// `W x + U h + b` for one gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vector,
}

impl GateParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        GateParams {
            w: Matrix::zeros(hidden, input),
            u: Matrix::zeros(hidden, hidden),
            b: Vector::zeros(hidden),
        }
    }

    #[inline]
    fn preactivation(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut out = self.b.to_vec();
        self.w.mul_vec_add(x, &mut out);
        self.u.mul_vec_add(h, &mut out);
        out
    }

    fn validate(&self, name: &str, hidden: usize, input: usize) -> Result<()> {
        if self.w.rows() != hidden || self.w.cols() != input {
            return contract(format!("{name}: W must be {hidden}x{input}"));
        }
        if self.u.rows() != hidden || self.u.cols() != hidden {
            return contract(format!("{name}: U must be {hidden}x{hidden}"));
        }
        check_dim("gate bias", hidden, self.b.len())
    }
}

/// Retrieval (`r`), event-detection (`q`) and storage (`s`) blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub r: GateParams,
    pub q: GateParams,
    pub s: GateParams,
}

impl GruParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        GruParams {
            r: GateParams::zeros(hidden, input),
            q: GateParams::zeros(hidden, input),
            s: GateParams::zeros(hidden, input),
        }
    }

    pub fn hidden(&self) -> usize {
        self.q.b.len()
    }

    pub fn input_dim(&self) -> usize {
        self.q.w.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, i) = (self.hidden(), self.input_dim());
        if h == 0 {
            return contract("hidden size must be positive");
        }
        self.r.validate("r", h, i)?;
        self.q.validate("q", h, i)?;
        self.s.validate("s", h, i)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtGruParams {
    pub gates: GruParams,
    pub bank: TimescaleBank,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruState {
    pub h: Vector,
}

impl GruState {
    pub fn zeros(hidden: usize) -> Self {
        GruState {
            h: Vector::zeros(hidden),
        }
    }
}

/// Per-scale traces (`M × H`, row `i` is scale `i`) and their column sums.
#[derive(Clone, Debug, PartialEq)]
pub struct CtGruState {
    pub h_hat: Matrix,
    pub h: Vector,
}

impl CtGruState {
    pub fn zeros(scales: usize, hidden: usize) -> Self {
        CtGruState {
            h_hat: Matrix::zeros(scales, hidden),
            h: Vector::zeros(hidden),
        }
    }

    pub fn from_traces(h_hat: Matrix) -> Self {
        let h = column_sums(&h_hat);
        CtGruState { h_hat, h }
    }
}

fn column_sums(m: &Matrix) -> Vector {
    let mut h = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (acc, v) in h.iter_mut().zip(m.row(i)) {
            *acc += v;
        }
    }
    Vector::from_vec_unchecked(h)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruTrace {
    pub h_prev: Vec<f64>,
    pub r: Vec<f64>,
    pub q: Vec<f64>,
    pub s: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CtGruTrace {
    pub h_hat_prev: Matrix,
    pub h_prev: Vec<f64>,
    pub ln_tau_r: Vec<f64>,
    /// Retrieval weights, `M × H`.
    pub r: Matrix,
    pub retrieved: Vec<f64>,
    pub q: Vec<f64>,
    pub ln_tau_s: Vec<f64>,
    /// Storage weights, `M × H`.
    pub s: Matrix,
    pub decay: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepTrace {
    Gru(GruTrace),
    CtGru(CtGruTrace),
}

fn check_step_dims(p: &GruParams, h: usize, x: usize) -> Result<()> {
    check_dim("hidden state", p.hidden(), h)?;
    check_dim("input", p.input_dim(), x)
}

pub fn gru_step(p: &GruParams, h_prev: &GruState, x: &[f64]) -> Result<(GruState, StepTrace)> {
    check_step_dims(p, h_prev.h.len(), x.len())?;
    let (h, trace) = gru_step_raw(p, &h_prev.h, x);
    Ok((GruState { h }, StepTrace::Gru(trace)))
}

pub(crate) fn gru_step_raw(p: &GruParams, h_prev: &[f64], x: &[f64]) -> (Vector, GruTrace) {
    let mut r = p.r.preactivation(x, h_prev);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let gated: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut q = p.q.preactivation(x, &gated);
    q.iter_mut().for_each(|v| *v = v.tanh());

    let mut s = p.s.preactivation(x, h_prev);
    s.iter_mut().for_each(|v| *v = sigmoid(*v));

    let h: Vec<f64> = h_prev
        .iter()
        .zip(&q)
        .zip(&s)
        .map(|((hp, qi), si)| (1.0 - si) * hp + si * qi)
        .collect();
    let trace = GruTrace {
        h_prev: h_prev.to_vec(),
        r,
        q,
        s,
    };
    (Vector::from_vec_unchecked(h), trace)
}

/// One CT-GRU event. `dt` is the lag to the next event; the new event is
/// stored first and the traces then decay over `dt`.
pub fn ctgru_step(
    p: &CtGruParams,
    st: &CtGruState,
    x: &[f64],
    dt: f64,
) -> Result<(CtGruState, StepTrace)> {
    ctgru_step_checked(p, st, x, dt, true)
}

/// As [`ctgru_step`] with the decay factor fixed at one.
pub fn ctgru_step_nodecay(
    p: &CtGruParams,
    st: &CtGruState,
    x: &[f64],
    dt: f64,
) -> Result<(CtGruState, StepTrace)> {
    ctgru_step_checked(p, st, x, dt, false)
}

fn ctgru_step_checked(
    p: &CtGruParams,
    st: &CtGruState,
    x: &[f64],
    dt: f64,
    decay: bool,
) -> Result<(CtGruState, StepTrace)> {
    check_step_dims(&p.gates, st.h.len(), x.len())?;
    check_dim("trace scales", p.bank.len(), st.h_hat.rows())?;
    check_dim("trace units", p.gates.hidden(), st.h_hat.cols())?;
    if !(dt >= 0.0 && dt.is_finite()) {
        return contract(format!("dt must be finite and nonnegative (got {dt})"));
    }
    let factors = decay_vector(&p.bank, dt, decay);
    let (next, trace) = ctgru_step_raw(&p.gates, &p.bank, st, x, factors);
    Ok((next, StepTrace::CtGru(trace)))
}

pub(crate) fn decay_vector(bank: &TimescaleBank, dt: f64, decay: bool) -> Vec<f64> {
    if decay {
        bank.taus().iter().map(|tau| (-dt / tau).exp()).collect()
    } else {
        vec![1.0; bank.len()]
    }
}

/// Fills `out` (`M × H`) with per-unit softmax weights over the bank.
fn scale_weight_matrix(ln_tau: &[f64], log_taus: &[f64], out: &mut Matrix) {
    let m = log_taus.len();
    let mut col = vec![0.0; m];
    for (j, &lt) in ln_tau.iter().enumerate() {
        scale_weights_into(lt, log_taus, &mut col);
        for (i, &c) in col.iter().enumerate() {
            out.set(i, j, c);
        }
    }
}

pub(crate) fn ctgru_step_raw(
    gates: &GruParams,
    bank: &TimescaleBank,
    st: &CtGruState,
    x: &[f64],
    decay: Vec<f64>,
) -> (CtGruState, CtGruTrace) {
    let m = bank.len();
    let hdim = gates.hidden();
    let log_taus = bank.log_taus();

    let ln_tau_r = gates.r.preactivation(x, &st.h);
    let mut r = Matrix::zeros(m, hdim);
    scale_weight_matrix(&ln_tau_r, log_taus, &mut r);

    let mut retrieved = vec![0.0; hdim];
    for i in 0..m {
        for ((acc, w), v) in retrieved.iter_mut().zip(r.row(i)).zip(st.h_hat.row(i)) {
            *acc += w * v;
        }
    }

    let mut q = gates.q.preactivation(x, &retrieved);
    q.iter_mut().for_each(|v| *v = v.tanh());

    let ln_tau_s = gates.s.preactivation(x, &st.h);
    let mut s = Matrix::zeros(m, hdim);
    scale_weight_matrix(&ln_tau_s, log_taus, &mut s);

    let mut h_hat = Matrix::zeros(m, hdim);
    let mut h = vec![0.0; hdim];
    for i in 0..m {
        let d = decay[i];
        let prev = st.h_hat.row(i);
        let si = s.row(i);
        let out = h_hat.row_mut(i);
        for j in 0..hdim {
            let v = ((1.0 - si[j]) * prev[j] + si[j] * q[j]) * d;
            out[j] = v;
            h[j] += v;
        }
    }

    let trace = CtGruTrace {
        h_hat_prev: st.h_hat.clone(),
        h_prev: st.h.to_vec(),
        ln_tau_r,
        r,
        retrieved,
        q,
        ln_tau_s,
        s,
        decay,
    };
    (
        CtGruState {
            h_hat,
            h: Vector::from_vec_unchecked(h),
        },
        trace,
    )
}

/// Two-scale CT-GRU that tracks a GRU.
///
/// Over two scales the softmax weight on the long scale is
/// `logistic(2d (ln τ - m))` with `d = ln τ_long - ln τ_short` and `m` the
/// log midpoint, so scaling the `r`/`s` blocks by `1/(2d)` and shifting their
/// bias by `m` reproduces the GRU gates exactly. The remaining mismatch comes
/// only from the finite decay of the two scales.
pub fn ctgru_from_gru(g: &GruParams, tau_short: f64, tau_long: f64) -> Result<CtGruParams> {
    if !(tau_short > 0.0 && tau_short < tau_long && tau_long.is_finite()) {
        return contract(format!(
            "need 0 < tau_short < tau_long (got {tau_short}, {tau_long})"
        ));
    }
    g.validate()?;
    let bank = TimescaleBank::from_taus(vec![tau_short, tau_long])?;
    let d = tau_long.ln() - tau_short.ln();
    let mid = bank.log_center();
    let map = |gate: &GateParams| {
        let scale = 1.0 / (2.0 * d);
        let mut w = gate.w.clone();
        w.scale(scale);
        let mut u = gate.u.clone();
        u.scale(scale);
        let b = Vector::from_vec_unchecked(gate.b.iter().map(|v| v * scale + mid).collect());
        GateParams { w, u, b }
    };
    Ok(CtGruParams {
        gates: GruParams {
            r: map(&g.r),
            q: g.q.clone(),
            s: map(&g.s),
        },
        bank,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// Softmax over next-event labels.
    LabelSoftmax,
    /// One logistic unit per label; only the realized label is scored.
    PolarityLogistic,
    /// A single logistic unit read at the end of the sequence.
    SequenceLogistic,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::LabelSoftmax => "label-softmax",
            HeadKind::PolarityLogistic => "polarity-logistic",
            HeadKind::SequenceLogistic => "sequence-logistic",
        }
    }
}

pub fn output_head(h: &[f64], w_out: &Matrix, b_out: &[f64], kind: HeadKind) -> Result<Vector> {
    check_dim("output head input", w_out.cols(), h.len())?;
    check_dim("output head bias", w_out.rows(), b_out.len())?;
    if kind == HeadKind::SequenceLogistic && w_out.rows() != 1 {
        return Err(crate::Error::DimensionMismatch {
            op: "sequence-logistic head",
            expected: 1,
            got: w_out.rows(),
        });
    }
    Ok(Vector::from_vec_unchecked(head_raw(h, w_out, b_out, kind)))
}

#[inline]
pub(crate) fn head_raw(h: &[f64], w_out: &Matrix, b_out: &[f64], kind: HeadKind) -> Vec<f64> {
    let mut z = b_out.to_vec();
    w_out.mul_vec_add(h, &mut z);
    match kind {
        HeadKind::LabelSoftmax => softmax_in_place(&mut z),
        HeadKind::PolarityLogistic | HeadKind::SequenceLogistic => {
            z.iter_mut().for_each(|v| *v = sigmoid(*v))
        }
    }
    z
}
