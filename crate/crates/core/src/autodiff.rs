//! Sequence forward pass, loss, and exact backpropagation through time.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::cells::{
    ctgru_step_raw, decay_vector, gru_step_raw, head_raw, CtGruState, CtGruTrace, GruTrace,
    HeadKind,
};
use crate::datasets::{Event, EventSequence, Targets};
use crate::error::{check_dim, contract, Error, Result};
use crate::math::{Matrix, RngStream, Vector};
use crate::model::{Arch, Gradients, ModelParams, ModelSpec, BLOCK_NAMES};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

static CLAMP_COUNT: AtomicU64 = AtomicU64::new(0);

/// Number of probabilities clamped to [`PROB_FLOOR`] since process start.
pub fn clamp_count() -> u64 {
    CLAMP_COUNT.load(Ordering::Relaxed)
}

/// A scored prediction: output index plus what it should predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    /// Index of the true next label under a softmax head.
    Label(usize),
    /// Value of a single logistic unit.
    Bit { unit: usize, value: bool },
}

/// The targets scored for `seq`, each paired with the output it reads.
///
/// Label and polarity heads emit one output per event; the output after
/// event `k` is scored against event `k + 1`, so the last output is never
/// scored. The classification head emits one output after the last event.
pub fn scored_targets(seq: &EventSequence) -> Vec<(usize, Target)> {
    let ev = &seq.events;
    match &seq.targets {
        Targets::NextLabel => (1..ev.len())
            .map(|k| (k - 1, Target::Label(ev[k].label)))
            .collect(),
        Targets::Polarity(bits) => (1..ev.len())
            .map(|k| {
                (
                    k - 1,
                    Target::Bit {
                        unit: ev[k].label,
                        value: bits[k],
                    },
                )
            })
            .collect(),
        Targets::Class(c) => vec![(0, Target::Bit { unit: 0, value: *c })],
    }
}

/// Per-step values needed by the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub inputs: Vec<Vec<f64>>,
    /// Hidden state after each event.
    pub hidden: Vec<Vec<f64>>,
    steps: Steps,
}

#[derive(Clone, Debug)]
enum Steps {
    Gru(Vec<GruTrace>),
    CtGru(Vec<CtGruTrace>),
}

fn check_sequence(spec: &ModelSpec, seq: &EventSequence) -> Result<()> {
    seq.validate(spec.vocab)?;
    let want = crate::model::head_for_task(seq.task());
    if want != spec.head {
        return contract(format!(
            "sequence {} needs a {} head, model has {}",
            seq.id,
            want.name(),
            spec.head.name()
        ));
    }
    Ok(())
}

fn fill_input(spec: &ModelSpec, events: &[Event], dts: &[f64], k: usize, x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = 0.0);
    x[events[k].label] = 1.0;
    if spec.arch == Arch::Gru {
        let prev = if k > 0 { dts[k - 1] } else { 0.0 };
        x[spec.vocab] = spec.dt_feature.apply(prev);
        x[spec.vocab + 1] = spec.dt_feature.apply(dts[k]);
    }
}

fn run(
    model: &ModelParams,
    seq: &EventSequence,
    keep: bool,
) -> Result<(Vec<Vector>, Option<ForwardCache>)> {
    let spec = &model.spec;
    check_sequence(spec, seq)?;
    let n = seq.len();
    let dts = seq.dts();
    let final_only = spec.head == HeadKind::SequenceLogistic;
    let mut outputs = Vec::with_capacity(if final_only { 1 } else { n });
    let mut inputs = Vec::new();
    let mut hidden = Vec::new();
    let mut x = vec![0.0; spec.input_dim()];

    let emit = |k: usize, h: &[f64], outputs: &mut Vec<Vector>| {
        if !final_only || k + 1 == n {
            let o = head_raw(h, &model.w_out, &model.b_out, spec.head);
            outputs.push(Vector::from_vec_unchecked(o));
        }
    };

    let steps = match &model.bank {
        None => {
            let mut traces = Vec::new();
            let mut h = Vector::zeros(spec.hidden);
            for k in 0..n {
                fill_input(spec, &seq.events, &dts, k, &mut x);
                let (next, tr) = gru_step_raw(&model.gates, &h, &x);
                h = next;
                emit(k, &h, &mut outputs);
                if keep {
                    traces.push(tr);
                    inputs.push(x.clone());
                    hidden.push(h.to_vec());
                }
            }
            Steps::Gru(traces)
        }
        Some(bank) => {
            let decays = spec.arch == Arch::CtGru;
            let mut traces = Vec::new();
            let mut st = CtGruState::zeros(bank.len(), spec.hidden);
            for k in 0..n {
                fill_input(spec, &seq.events, &dts, k, &mut x);
                let factors = decay_vector(bank, dts[k], decays);
                let (next, tr) = ctgru_step_raw(&model.gates, bank, &st, &x, factors);
                st = next;
                emit(k, &st.h, &mut outputs);
                if keep {
                    traces.push(tr);
                    inputs.push(x.clone());
                    hidden.push(st.h.to_vec());
                }
            }
            Steps::CtGru(traces)
        }
    };
    if outputs.iter().any(|o| o.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("outputs of sequence {}", seq.id)));
    }
    let cache = keep.then_some(ForwardCache {
        inputs,
        hidden,
        steps,
    });
    Ok((outputs, cache))
}

/// Runs the model over `seq` and keeps what the backward pass needs.
pub fn forward_sequence(
    model: &ModelParams,
    seq: &EventSequence,
) -> Result<(Vec<Vector>, ForwardCache)> {
    let (outputs, cache) = run(model, seq, true)?;
    Ok((outputs, cache.expect("cache requested")))
}

/// Outputs only, without storing per-step state.
pub fn predict(model: &ModelParams, seq: &EventSequence) -> Result<Vec<Vector>> {
    Ok(run(model, seq, false)?.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValue {
    /// Summed negative log-likelihood over scored targets.
    pub total: f64,
    pub targets: usize,
    pub clamped: usize,
}

impl LossValue {
    /// Mean negative log-likelihood per scored target (zero if none).
    pub fn mean(&self) -> f64 {
        if self.targets == 0 {
            0.0
        } else {
            self.total / self.targets as f64
        }
    }
}

fn clamped_nll(p: f64, clamped: &mut usize) -> f64 {
    if p < PROB_FLOOR {
        *clamped += 1;
        -PROB_FLOOR.ln()
    } else {
        -p.ln()
    }
}

/// Negative log-likelihood of the scored targets of `seq` under `outputs`.
pub fn loss(outputs: &[Vector], seq: &EventSequence) -> Result<LossValue> {
    let mut value = LossValue::default();
    for (idx, target) in scored_targets(seq) {
        let o = outputs
            .get(idx)
            .ok_or_else(|| Error::Contract(format!("missing output {idx}")))?;
        let p = match target {
            Target::Label(y) => *o
                .get(y)
                .ok_or_else(|| Error::Contract("label out of range".into()))?,
            Target::Bit { unit, value } => {
                let p1 = *o
                    .get(unit)
                    .ok_or_else(|| Error::Contract("unit out of range".into()))?;
                if value {
                    p1
                } else {
                    1.0 - p1
                }
            }
        };
        value.total += clamped_nll(p, &mut value.clamped);
        value.targets += 1;
    }
    if value.clamped > 0 {
        CLAMP_COUNT.fetch_add(value.clamped as u64, Ordering::Relaxed);
        log::warn!(
            "clamped {} probabilities in sequence {}",
            value.clamped,
            seq.id
        );
    }
    Ok(value)
}

/// Mean loss of `model` on `seq`.
pub fn sequence_objective(model: &ModelParams, seq: &EventSequence) -> Result<f64> {
    Ok(loss(&predict(model, seq)?, seq)?.mean())
}

/// Gradient of the mean loss ([`LossValue::mean`]) with respect to every
/// parameter.
pub fn backward_sequence(
    model: &ModelParams,
    seq: &EventSequence,
    outputs: &[Vector],
    cache: &ForwardCache,
) -> Result<Gradients> {
    let spec = &model.spec;
    let n = seq.len();
    check_dim("cached steps", n, cache.hidden.len())?;
    let hdim = spec.hidden;
    let mut grads = Gradients::zeros_like(model);

    // Loss gradient with respect to each hidden state, via the head.
    let targets = scored_targets(seq);
    let weight = if targets.is_empty() {
        0.0
    } else {
        1.0 / targets.len() as f64
    };
    let mut head_gh = vec![0.0; n * hdim];
    for (idx, target) in targets {
        let o = &outputs[idx];
        let step = if spec.head == HeadKind::SequenceLogistic {
            n - 1
        } else {
            idx
        };
        let mut g = vec![0.0; o.len()];
        match target {
            Target::Label(y) => {
                for (gi, oi) in g.iter_mut().zip(o.iter()) {
                    *gi = oi * weight;
                }
                g[y] -= weight;
            }
            Target::Bit { unit, value } => {
                g[unit] = (o[unit] - if value { 1.0 } else { 0.0 }) * weight;
            }
        }
        let h = &cache.hidden[step];
        grads.w_out.add_outer(&g, h);
        for (b, gi) in grads.b_out.iter_mut().zip(&g) {
            *b += gi;
        }
        model
            .w_out
            .tmul_vec_add(&g, &mut head_gh[step * hdim..(step + 1) * hdim]);
    }

    match &cache.steps {
        Steps::Gru(traces) => backward_gru(model, cache, traces, &head_gh, &mut grads),
        Steps::CtGru(traces) => backward_ctgru(model, cache, traces, &head_gh, &mut grads),
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite(format!("gradient of sequence {}", seq.id)));
    }
    Ok(grads)
}

fn backward_gru(
    model: &ModelParams,
    cache: &ForwardCache,
    traces: &[GruTrace],
    head_gh: &[f64],
    grads: &mut Gradients,
) {
    let hdim = model.spec.hidden;
    let p = &model.gates;
    let mut gh = vec![0.0; hdim];
    let mut g_aq = vec![0.0; hdim];
    let mut g_ar = vec![0.0; hdim];
    let mut g_as = vec![0.0; hdim];
    let mut rh = vec![0.0; hdim];
    for k in (0..traces.len()).rev() {
        let tr = &traces[k];
        let x = &cache.inputs[k];
        for (a, b) in gh.iter_mut().zip(&head_gh[k * hdim..(k + 1) * hdim]) {
            *a += b;
        }
        let mut g_rh = vec![0.0; hdim];
        for j in 0..hdim {
            let (q, s, hp) = (tr.q[j], tr.s[j], tr.h_prev[j]);
            g_aq[j] = gh[j] * s * (1.0 - q * q);
            g_as[j] = gh[j] * (q - hp) * s * (1.0 - s);
            gh[j] *= 1.0 - s;
            rh[j] = tr.r[j] * hp;
        }
        p.q.u.tmul_vec_add(&g_aq, &mut g_rh);
        for j in 0..hdim {
            let r = tr.r[j];
            g_ar[j] = g_rh[j] * tr.h_prev[j] * r * (1.0 - r);
            gh[j] += g_rh[j] * r;
        }
        p.r.u.tmul_vec_add(&g_ar, &mut gh);
        p.s.u.tmul_vec_add(&g_as, &mut gh);

        let g = &mut grads.gates;
        accumulate_gate(&mut g.q, &g_aq, x, &rh);
        accumulate_gate(&mut g.r, &g_ar, x, &tr.h_prev);
        accumulate_gate(&mut g.s, &g_as, x, &tr.h_prev);
    }
}

fn accumulate_gate(g: &mut crate::cells::GateParams, ga: &[f64], x: &[f64], h: &[f64]) {
    add_outer_sparse(&mut g.w, ga, x);
    g.u.add_outer(ga, h);
    for (b, v) in g.b.iter_mut().zip(ga) {
        *b += v;
    }
}

/// `m += a bᵀ`, skipping zero entries of `b` (inputs are mostly one-hot).
fn add_outer_sparse(m: &mut Matrix, a: &[f64], b: &[f64]) {
    for (c, &bc) in b.iter().enumerate() {
        if bc != 0.0 {
            for (r, &ar) in a.iter().enumerate() {
                let v = m.get(r, c) + ar * bc;
                m.set(r, c, v);
            }
        }
    }
}

/// Backward through the scale-softmax: given `g_w[i][j]` for weights
/// `w[i][j] = softmax_i(-(a_j - l_i)²)`, returns `∂L/∂a_j`.
fn scale_softmax_backward(w: &Matrix, g_w: &[f64], a: &[f64], log_taus: &[f64], out: &mut [f64]) {
    let (m, hdim) = (w.rows(), w.cols());
    for j in 0..hdim {
        let mut dot = 0.0;
        for i in 0..m {
            dot += w.get(i, j) * g_w[i * hdim + j];
        }
        let mut acc = 0.0;
        for i in 0..m {
            let gz = w.get(i, j) * (g_w[i * hdim + j] - dot);
            acc += gz * -2.0 * (a[j] - log_taus[i]);
        }
        out[j] = acc;
    }
}

fn backward_ctgru(
    model: &ModelParams,
    cache: &ForwardCache,
    traces: &[CtGruTrace],
    head_gh: &[f64],
    grads: &mut Gradients,
) {
    let hdim = model.spec.hidden;
    let bank = model.bank.as_ref().expect("CT-GRU has a bank");
    let m = bank.len();
    let log_taus = bank.log_taus();
    let p = &model.gates;

    // Gradient with respect to the traces after the current step; the part
    // that flows through the summed state is kept separately and broadcast.
    let mut g_hat = vec![0.0; m * hdim];
    let mut g_h = vec![0.0; hdim];
    let mut g_s = vec![0.0; m * hdim];
    let mut g_r = vec![0.0; m * hdim];
    let mut g_q = vec![0.0; hdim];
    let mut g_as = vec![0.0; hdim];
    let mut g_ar = vec![0.0; hdim];
    let mut g_aq = vec![0.0; hdim];
    for k in (0..traces.len()).rev() {
        let tr = &traces[k];
        let x = &cache.inputs[k];
        for (a, b) in g_h.iter_mut().zip(&head_gh[k * hdim..(k + 1) * hdim]) {
            *a += b;
        }
        g_q.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            let d = tr.decay[i];
            let prev = tr.h_hat_prev.row(i);
            let s = tr.s.row(i);
            for j in 0..hdim {
                let idx = i * hdim + j;
                let g_pre = (g_hat[idx] + g_h[j]) * d;
                g_hat[idx] = g_pre * (1.0 - s[j]);
                g_s[idx] = g_pre * (tr.q[j] - prev[j]);
                g_q[j] += g_pre * s[j];
            }
        }
        scale_softmax_backward(&tr.s, &g_s, &tr.ln_tau_s, log_taus, &mut g_as);
        for j in 0..hdim {
            g_aq[j] = g_q[j] * (1.0 - tr.q[j] * tr.q[j]);
        }
        let mut g_rho = vec![0.0; hdim];
        p.q.u.tmul_vec_add(&g_aq, &mut g_rho);
        for i in 0..m {
            let prev = tr.h_hat_prev.row(i);
            let r = tr.r.row(i);
            for j in 0..hdim {
                let idx = i * hdim + j;
                g_hat[idx] += g_rho[j] * r[j];
                g_r[idx] = g_rho[j] * prev[j];
            }
        }
        scale_softmax_backward(&tr.r, &g_r, &tr.ln_tau_r, log_taus, &mut g_ar);

        g_h.iter_mut().for_each(|v| *v = 0.0);
        p.r.u.tmul_vec_add(&g_ar, &mut g_h);
        p.s.u.tmul_vec_add(&g_as, &mut g_h);

        let g = &mut grads.gates;
        accumulate_gate(&mut g.q, &g_aq, x, &tr.retrieved);
        accumulate_gate(&mut g.r, &g_ar, x, &tr.h_prev);
        accumulate_gate(&mut g.s, &g_as, x, &tr.h_prev);
    }
}

/// Loss and gradient for one sequence.
pub fn sequence_gradient(
    model: &ModelParams,
    seq: &EventSequence,
) -> Result<(LossValue, Gradients)> {
    let (outputs, cache) = forward_sequence(model, seq)?;
    let value = loss(&outputs, seq)?;
    let grads = backward_sequence(model, seq, &outputs, &cache)?;
    Ok((value, grads))
}

/// Minimum number of coordinates compared by [`finite_diff_check`].
pub const MIN_CHECKED_COORDS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockError {
    pub block: &'static str,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub blocks: Vec<BlockError>,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient against central differences with step
/// `eps` on a sample of coordinates: every coordinate if there are at most
/// [`MIN_CHECKED_COORDS`], otherwise up to eight from every block plus a
/// uniform sample of the rest.
///
/// The perturbed losses are evaluated in double-double arithmetic by an
/// independent forward implementation.
pub fn finite_diff_check(
    model: &ModelParams,
    seq: &EventSequence,
    eps: f64,
    rng: &mut RngStream,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return contract(format!(
            "finite-difference step must lie in [1e-7, 1e-3] (got {eps})"
        ));
    }
    model.validate()?;
    let (_, grads) = sequence_gradient(model, seq)?;

    let sizes: Vec<usize> = model.blocks().iter().map(|b| b.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut coords: Vec<(usize, usize)> = Vec::new();
    if total <= MIN_CHECKED_COORDS {
        for (b, &len) in sizes.iter().enumerate() {
            coords.extend((0..len).map(|i| (b, i)));
        }
    } else {
        let mut rest = Vec::new();
        for (b, &len) in sizes.iter().enumerate() {
            let mut idx: Vec<usize> = (0..len).collect();
            rng.shuffle(&mut idx);
            let take = len.min(8);
            coords.extend(idx[..take].iter().map(|&i| (b, i)));
            rest.extend(idx[take..].iter().map(|&i| (b, i)));
        }
        rng.shuffle(&mut rest);
        let need = MIN_CHECKED_COORDS.saturating_sub(coords.len());
        coords.extend(rest.into_iter().take(need));
    }

    let mut blocks: Vec<BlockError> = BLOCK_NAMES
        .iter()
        .map(|&block| BlockError {
            block,
            checked: 0,
            max_rel_error: 0.0,
        })
        .collect();
    for &(b, i) in &coords {
        let numeric = crate::precise::central_difference(model, seq, (b, i), eps);
        let err = relative_error(grads.blocks()[b][i], numeric);
        let entry = &mut blocks[b];
        entry.checked += 1;
        entry.max_rel_error = entry.max_rel_error.max(err);
    }
    Ok(GradCheckReport {
        max_rel_error: blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max),
        checked: coords.len(),
        blocks,
    })
}

/// Weight scale used by the gradient checks.
pub const INSTANCE_WEIGHT_STD: f64 = 0.5;

/// A random model and sequence for gradient checking.
///
/// Weights are normal with standard deviation `scale`; CT-GRU gate biases
/// are centred on the bank. Lags are log-uniform across the bank range.
pub fn random_instance(
    rng: &mut RngStream,
    spec: ModelSpec,
    steps: usize,
    scale: f64,
) -> Result<(ModelParams, EventSequence)> {
    if steps == 0 {
        return contract("instance needs at least one event");
    }
    let mut model = ModelParams::zeros(spec)?;
    for block in model.blocks_mut() {
        block.iter_mut().for_each(|v| *v = rng.normal() * scale);
    }
    let (lo, hi) = match &model.bank {
        Some(bank) => {
            let c = bank.log_center();
            for b in [&mut model.gates.r.b, &mut model.gates.s.b] {
                b.iter_mut().for_each(|v| *v += c);
            }
            (bank.shortest(), bank.longest())
        }
        None => (0.5, 30.0),
    };
    let vocab = model.spec.vocab;
    let mut t = 0.0;
    let events: Vec<Event> = (0..steps)
        .map(|k| {
            if k > 0 {
                t += rng.log_uniform(lo, hi);
            }
            Event::new(rng.below(vocab), t)
        })
        .collect();
    let targets = match model.spec.head {
        HeadKind::LabelSoftmax => Targets::NextLabel,
        HeadKind::PolarityLogistic => {
            Targets::Polarity((0..steps).map(|_| rng.bernoulli(0.5)).collect())
        }
        HeadKind::SequenceLogistic => Targets::Class(rng.bernoulli(0.5)),
    };
    let seq = EventSequence {
        id: rng.below(1 << 20) as u64,
        events,
        targets,
    };
    Ok((model, seq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{ctgru_step, gru_step, output_head, CtGruParams, GruState, StepTrace};

    fn spec(arch: Arch, head: HeadKind) -> ModelSpec {
        let s = ModelSpec::new(arch, 4, 3, head);
        if arch.is_ctgru() {
            s.with_bank(0.5, 50.0)
        } else {
            s
        }
    }

    const HEADS: [HeadKind; 3] = [
        HeadKind::LabelSoftmax,
        HeadKind::PolarityLogistic,
        HeadKind::SequenceLogistic,
    ];

    #[test]
    fn forward_matches_public_steps() {
        let mut rng = RngStream::new(11);
        for arch in [Arch::Gru, Arch::CtGru] {
            let (model, seq) =
                random_instance(&mut rng, spec(arch, HeadKind::LabelSoftmax), 6, 0.7).unwrap();
            let outs = predict(&model, &seq).unwrap();
            let dts = seq.dts();
            let mut gs = GruState::zeros(4);
            let ct = model.bank.clone().map(|bank| CtGruParams {
                gates: model.gates.clone(),
                bank,
            });
            let mut cs = CtGruState::zeros(model.bank.as_ref().map_or(1, |b| b.len()), 4);
            for (k, e) in seq.events.iter().enumerate() {
                let mut x = Vector::one_hot(model.spec.input_dim(), e.label);
                let h = match &ct {
                    None => {
                        x[3] = if k > 0 { dts[k - 1].ln_1p() } else { 0.0 };
                        x[4] = dts[k].ln_1p();
                        let (next, t) = gru_step(&model.gates, &gs, &x).unwrap();
                        assert!(matches!(t, StepTrace::Gru(_)));
                        gs = next;
                        gs.h.clone()
                    }
                    Some(p) => {
                        cs = ctgru_step(p, &cs, &x, dts[k]).unwrap().0;
                        cs.h.clone()
                    }
                };
                let o =
                    output_head(&h, &model.w_out, &model.b_out, HeadKind::LabelSoftmax).unwrap();
                assert_eq!(o, outs[k]);
            }
        }
    }

    #[test]
    fn output_counts() {
        let mut rng = RngStream::new(2);
        for head in HEADS {
            let (model, seq) = random_instance(&mut rng, spec(Arch::CtGru, head), 7, 0.5).unwrap();
            let outs = predict(&model, &seq).unwrap();
            let expected = if head == HeadKind::SequenceLogistic {
                1
            } else {
                7
            };
            assert_eq!(outs.len(), expected);
            let (model, seq) = random_instance(&mut rng, spec(Arch::Gru, head), 1, 0.5).unwrap();
            assert_eq!(predict(&model, &seq).unwrap().len(), 1);
        }
    }

    #[test]
    fn loss_examples() {
        let seq = EventSequence {
            id: 0,
            events: vec![Event::new(0, 0.0), Event::new(1, 1.0), Event::new(1, 2.0)],
            targets: Targets::NextLabel,
        };
        let outs = vec![
            Vector::from_vec(vec![0.25, 0.5, 0.25]).unwrap(),
            Vector::from_vec(vec![0.0, 0.0, 1.0]).unwrap(),
            Vector::from_vec(vec![1.0, 0.0, 0.0]).unwrap(),
        ];
        let before = clamp_count();
        let l = loss(&outs, &seq).unwrap();
        assert_eq!(l.targets, 2);
        assert_eq!(l.clamped, 1);
        assert!(clamp_count() > before);
        let expected = (-(0.5f64).ln() - PROB_FLOOR.ln()) / 2.0;
        assert!((l.mean() - expected).abs() < 1e-12);

        let seq = EventSequence {
            id: 1,
            events: vec![Event::new(2, 0.0), Event::new(1, 3.0)],
            targets: Targets::Polarity(vec![true, false]),
        };
        let outs = vec![
            Vector::from_vec(vec![0.9, 0.2, 0.9]).unwrap(),
            Vector::from_vec(vec![0.5, 0.5, 0.5]).unwrap(),
        ];
        let l = loss(&outs, &seq).unwrap();
        assert_eq!(l.targets, 1);
        assert!((l.mean() + (0.8f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn single_event_label_sequence_has_no_targets() {
        let mut rng = RngStream::new(5);
        let (model, seq) =
            random_instance(&mut rng, spec(Arch::Gru, HeadKind::LabelSoftmax), 1, 0.5).unwrap();
        let (l, g) = sequence_gradient(&model, &seq).unwrap();
        assert_eq!(l.targets, 0);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn rejects_mismatched_head() {
        let mut rng = RngStream::new(5);
        let (model, _) =
            random_instance(&mut rng, spec(Arch::Gru, HeadKind::LabelSoftmax), 3, 0.5).unwrap();
        let (_, seq) = random_instance(
            &mut rng,
            spec(Arch::Gru, HeadKind::SequenceLogistic),
            3,
            0.5,
        )
        .unwrap();
        assert!(predict(&model, &seq).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngStream::new(123);
        for arch in Arch::ALL {
            for head in HEADS {
                for _ in 0..3 {
                    let (model, seq) =
                        random_instance(&mut rng, spec(arch, head), 12, 0.6).unwrap();
                    let report = finite_diff_check(&model, &seq, 1e-5, &mut rng).unwrap();
                    assert!(
                        report.max_rel_error < 1e-4,
                        "{arch:?} {head:?}: {:?}",
                        report.blocks
                    );
                }
            }
        }
    }

    #[test]
    fn output_bias_gradient_single_step() {
        // With one event and a classification head, dL/db_q = s ⊙ (1 - q²) ⊙ dL/dh.
        let mut rng = RngStream::new(9);
        let (model, seq) = random_instance(
            &mut rng,
            spec(Arch::GruNoDt, HeadKind::SequenceLogistic),
            1,
            0.8,
        )
        .unwrap();
        let (outs, cache) = forward_sequence(&model, &seq).unwrap();
        let g = backward_sequence(&model, &seq, &outs, &cache).unwrap();
        let Steps::Gru(tr) = &cache.steps else {
            panic!()
        };
        let t = if seq.class().unwrap() { 1.0 } else { 0.0 };
        let dz = outs[0][0] - t;
        for j in 0..4 {
            let dh = model.w_out.get(0, j) * dz;
            let want = tr[0].s[j] * (1.0 - tr[0].q[j].powi(2)) * dh;
            assert!((g.gates.q.b[j] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn eps_outside_range_is_rejected() {
        let mut rng = RngStream::new(1);
        let (model, seq) =
            random_instance(&mut rng, spec(Arch::Gru, HeadKind::LabelSoftmax), 3, 0.5).unwrap();
        assert!(finite_diff_check(&model, &seq, 1e-2, &mut rng).is_err());
        assert!(finite_diff_check(&model, &seq, 1e-9, &mut rng).is_err());
    }

    #[test]
    fn small_models_check_every_coordinate() {
        let mut rng = RngStream::new(4);
        let s = ModelSpec::new(Arch::GruNoDt, 2, 2, HeadKind::SequenceLogistic);
        let (model, seq) = random_instance(&mut rng, s, 4, 0.5).unwrap();
        let report = finite_diff_check(&model, &seq, 1e-5, &mut rng).unwrap();
        assert_eq!(report.checked, model.num_params());
        let (model, seq) =
            random_instance(&mut rng, spec(Arch::CtGru, HeadKind::LabelSoftmax), 4, 0.5).unwrap();
        let report = finite_diff_check(&model, &seq, 1e-5, &mut rng).unwrap();
        assert!(report.checked >= MIN_CHECKED_COORDS.min(model.num_params()));
        assert!(report.blocks.iter().all(|b| b.checked > 0));
    }
}
