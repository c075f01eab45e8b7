//! Initialization, RMSprop, early stopping and hidden-size selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{loss, predict, sequence_gradient};
use crate::datasets::{Dataset, EventSequence};
use crate::error::{contract, Error, Result};
use crate::math::{fnv1a, orthonormal_rows, RngStream, Vector};
use crate::metrics::{baseline_metrics, MetricsAccumulator, MetricsBundle};
use crate::model::{Arch, DtFeature, Gradients, ModelParams, ModelSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
    /// Candidate hidden sizes; the one with the best validation loss wins.
    pub hidden_sizes: Vec<usize>,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Standard deviation of the normal draws for input and output weights.
    pub init_std: f64,
    pub dt_feature: DtFeature,
    /// CT-GRU bank bounds; derived from the training data when absent.
    pub bank: Option<(f64, f64)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            rms_decay: 0.9,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            val_fraction: 0.15,
            seed: 0,
            hidden_sizes: vec![20],
            clip_norm: Some(5.0),
            init_std: 0.1,
            dt_feature: DtFeature::Log1p,
            bank: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.epsilon, self.init_std];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return contract("learning rate, epsilon and init std must be positive");
        }
        if !(0.0..1.0).contains(&self.rms_decay) {
            return contract("rms decay must lie in [0, 1)");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return contract("validation fraction must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return contract("batch size and max epochs must be positive");
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return contract("hidden sizes must be a nonempty list of positive sizes");
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return contract("clip norm must be positive");
            }
        }
        Ok(())
    }

    /// Stable 64-bit hash of the configuration, as hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(json.as_bytes()))
    }
}

/// Initial parameters: orthonormal recurrent rows, zero gate biases (CT-GRU
/// storage/retrieval biases at the bank's log centre), normal input and
/// output weights with standard deviation `init_std`.
pub fn init_model(rng: &RngStream, spec: ModelSpec, init_std: f64) -> Result<ModelParams> {
    let mut model = ModelParams::zeros(spec)?;
    let h = model.spec.hidden;
    let centre = model.bank.as_ref().map(|b| b.log_center());
    for (name, gate) in [
        ("r", &mut model.gates.r),
        ("q", &mut model.gates.q),
        ("s", &mut model.gates.s),
    ] {
        gate.u = orthonormal_rows(&mut rng.split(&format!("U_{name}")), h, h)?;
        let mut wr = rng.split(&format!("W_{name}"));
        gate.w
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = wr.normal() * init_std);
        if let (Some(c), "r" | "s") = (centre, name) {
            gate.b.iter_mut().for_each(|v| *v = c);
        }
    }
    let mut wr = rng.split("W_out");
    model
        .w_out
        .as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = wr.normal() * init_std);
    Ok(model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rmsprop {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    mean_sq: Gradients,
}

impl Rmsprop {
    pub fn new(model: &ModelParams, learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        Rmsprop {
            learning_rate,
            decay,
            epsilon,
            mean_sq: Gradients::zeros_like(model),
        }
    }

    /// `v ← ρv + (1-ρ)g²; θ ← θ - lr·g/(√v + ε)`.
    pub fn update(&mut self, model: &mut ModelParams, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient passed to RMSprop".into()));
        }
        let (rho, lr, eps) = (self.decay, self.learning_rate, self.epsilon);
        for ((theta, g), v) in model
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(self.mean_sq.blocks_mut())
        {
            for ((t, &gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = rho * *vi + (1.0 - rho) * gi * gi;
                *t -= lr * gi / (vi.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Bank bounds from the data: the 5th percentile of positive inter-event
/// gaps up to the longest sequence span.
pub fn auto_bank_bounds(data: &Dataset) -> Result<(f64, f64)> {
    let mut gaps: Vec<f64> = data
        .sequences
        .iter()
        .flat_map(|s| s.events.windows(2).map(|w| w[1].time - w[0].time))
        .filter(|g| *g > 0.0)
        .collect();
    if gaps.is_empty() {
        return contract("cannot derive timescales: no positive inter-event gaps");
    }
    gaps.sort_by(f64::total_cmp);
    let lo = gaps[(gaps.len() - 1) * 5 / 100];
    let span = data
        .sequences
        .iter()
        .map(EventSequence::span)
        .fold(0.0, f64::max);
    let hi = if span > lo { span } else { lo * 10.0 };
    Ok((lo, hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub hidden: usize,
    /// Epoch zero is the untrained model.
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub best_val_loss: f64,
    pub diverged: Option<String>,
    /// Probabilities clamped to the floor while training this candidate.
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arch: Arch,
    pub config: TrainConfig,
    pub config_hash: String,
    pub seed: u64,
    pub bank: Option<(f64, f64)>,
    pub train_sequences: usize,
    pub val_sequences: usize,
    pub candidates: Vec<CandidateRecord>,
    pub selected_hidden: usize,
    pub selected_epoch: usize,
    pub test_metrics: Option<MetricsBundle>,
    pub baseline: Option<MetricsBundle>,
    pub clamped_probabilities: u64,
}

impl RunRecord {
    /// One JSON object per epoch of every candidate, then the full record.
    pub fn json_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for c in &self.candidates {
            for e in &c.epochs {
                let v = serde_json::json!({
                    "hidden": c.hidden,
                    "epoch": e.epoch,
                    "train_loss": e.train_loss,
                    "val_loss": e.val_loss,
                });
                lines.push(v.to_string());
            }
        }
        lines.push(serde_json::to_string(self).expect("record serializes"));
        lines
    }
}

/// Mean per-sequence loss.
pub fn dataset_loss(model: &ModelParams, data: &[EventSequence]) -> Result<f64> {
    Ok(loss_and_clamps(model, data)?.0)
}

fn loss_and_clamps(model: &ModelParams, data: &[EventSequence]) -> Result<(f64, usize)> {
    if data.is_empty() {
        return Ok((0.0, 0));
    }
    let losses: Vec<(f64, usize)> = data
        .par_iter()
        .map(|s| loss(&predict(model, s)?, s).map(|l| (l.mean(), l.clamped)))
        .collect::<Result<_>>()?;
    let total: f64 = losses.iter().map(|l| l.0).sum();
    Ok((total / data.len() as f64, losses.iter().map(|l| l.1).sum()))
}

/// Summed gradient and summed loss over `batch`, reduced in input order so
/// the result does not depend on the thread count.
fn batch_gradient(
    model: &ModelParams,
    batch: &[&EventSequence],
) -> Result<(Gradients, f64, usize)> {
    let parts: Vec<(f64, usize, Gradients)> = batch
        .par_iter()
        .map(|s| sequence_gradient(model, s).map(|(l, g)| (l.mean(), l.clamped, g)))
        .collect::<Result<_>>()?;
    let mut total = Gradients::zeros_like(model);
    let mut loss_sum = 0.0;
    let mut clamped = 0;
    for (l, c, g) in &parts {
        total.add_assign(g);
        loss_sum += l;
        clamped += c;
    }
    Ok((total, loss_sum, clamped))
}

fn train_candidate(
    spec: ModelSpec,
    config: &TrainConfig,
    train: &[EventSequence],
    val: &[EventSequence],
    rng: &RngStream,
) -> (Option<ModelParams>, CandidateRecord) {
    let mut record = CandidateRecord {
        hidden: spec.hidden,
        epochs: Vec::new(),
        selected_epoch: 0,
        best_val_loss: f64::INFINITY,
        diverged: None,
        clamped: 0,
    };
    let result = (|| -> Result<ModelParams> {
        let mut model = init_model(&rng.split("init"), spec, config.init_std)?;
        let mut opt = Rmsprop::new(
            &model,
            config.learning_rate,
            config.rms_decay,
            config.epsilon,
        );
        let (initial, c1) = loss_and_clamps(&model, val)?;
        let (train0, c2) = loss_and_clamps(&model, train)?;
        record.clamped += c1 + c2;
        record.epochs.push(EpochRecord {
            epoch: 0,
            train_loss: train0,
            val_loss: initial,
        });
        let mut best = model.clone();
        record.best_val_loss = initial;
        let mut stale = 0;
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 1..=config.max_epochs {
            rng.split_indexed("epoch", epoch as u64).shuffle(&mut order);
            let mut loss_sum = 0.0;
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<&EventSequence> = chunk.iter().map(|&i| &train[i]).collect();
                let (mut grads, l, c) = batch_gradient(&model, &batch)?;
                loss_sum += l;
                record.clamped += c;
                grads.scale(1.0 / batch.len() as f64);
                if let Some(c) = config.clip_norm {
                    let norm = grads.norm();
                    if norm > c {
                        grads.scale(c / norm);
                    }
                }
                opt.update(&mut model, &grads)?;
            }
            let (val_loss, c) = loss_and_clamps(&model, val)?;
            record.clamped += c;
            let train_loss = loss_sum / train.len() as f64;
            log::info!(
                "hidden {} epoch {epoch}: train {train_loss:.5} val {val_loss:.5}",
                record.hidden
            );
            record.epochs.push(EpochRecord {
                epoch,
                train_loss,
                val_loss,
            });
            if !val_loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "validation loss {val_loss} at epoch {epoch}"
                )));
            }
            if val_loss < record.best_val_loss {
                record.best_val_loss = val_loss;
                record.selected_epoch = epoch;
                best = model.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale > config.patience {
                    break;
                }
            }
        }
        Ok(best)
    })();
    match result {
        Ok(model) => (Some(model), record),
        Err(e) => {
            log::warn!("hidden size {} abandoned: {e}", record.hidden);
            record.diverged = Some(e.to_string());
            record.best_val_loss = f64::NAN;
            (None, record)
        }
    }
}

/// Splits off a validation set, trains one model per candidate hidden size
/// with early stopping, and returns the candidate with the lowest
/// validation loss (restored to its best epoch).
///
/// `spec.hidden` is ignored in favour of `config.hidden_sizes`; missing
/// CT-GRU bank bounds come from `config.bank` or the training data.
pub fn train(
    spec: ModelSpec,
    config: &TrainConfig,
    data: &Dataset,
) -> Result<(ModelParams, RunRecord)> {
    config.validate()?;
    if data.sequences.len() < 2 {
        return contract("training needs at least two sequences");
    }
    let mut spec = spec;
    if spec.vocab != data.vocab {
        return contract(format!(
            "model vocabulary {} does not match data vocabulary {}",
            spec.vocab, data.vocab
        ));
    }
    spec.dt_feature = config.dt_feature;
    if spec.arch.is_ctgru() && spec.bank.is_none() {
        spec.bank = Some(match config.bank {
            Some(b) => b,
            None => auto_bank_bounds(data)?,
        });
    }

    let rng = RngStream::new(config.seed);
    let mut idx: Vec<usize> = (0..data.sequences.len()).collect();
    rng.split("validation-split").shuffle(&mut idx);
    let n_val = ((data.sequences.len() as f64 * config.val_fraction).round() as usize)
        .clamp(1, data.sequences.len() - 1);
    let val: Vec<EventSequence> = idx[..n_val]
        .iter()
        .map(|&i| data.sequences[i].clone())
        .collect();
    let train: Vec<EventSequence> = idx[n_val..]
        .iter()
        .map(|&i| data.sequences[i].clone())
        .collect();

    let mut best: Option<(ModelParams, f64)> = None;
    let mut candidates = Vec::new();
    for &hidden in &config.hidden_sizes {
        let cand_spec = ModelSpec {
            hidden,
            ..spec.clone()
        };
        let cand_rng = rng.split_indexed("candidate", hidden as u64);
        let (model, record) = train_candidate(cand_spec, config, &train, &val, &cand_rng);
        if let Some(model) = model {
            if best.as_ref().is_none_or(|(_, l)| record.best_val_loss < *l) {
                best = Some((model, record.best_val_loss));
            }
        }
        candidates.push(record);
    }
    let (model, _) =
        best.ok_or_else(|| Error::Divergence("every hidden-size candidate diverged".into()))?;
    let selected = candidates
        .iter()
        .find(|c| c.hidden == model.spec.hidden)
        .expect("selected candidate recorded");
    let record = RunRecord {
        arch: spec.arch,
        config: config.clone(),
        config_hash: config.hash(),
        seed: config.seed,
        bank: spec.bank,
        train_sequences: train.len(),
        val_sequences: val.len(),
        selected_hidden: model.spec.hidden,
        selected_epoch: selected.selected_epoch,
        test_metrics: None,
        baseline: None,
        clamped_probabilities: candidates.iter().map(|c| c.clamped as u64).sum(),
        candidates,
    };
    Ok((model, record))
}

/// Outputs for every sequence, in order.
pub fn predict_dataset(model: &ModelParams, data: &Dataset) -> Result<Vec<Vec<Vector>>> {
    data.sequences
        .par_iter()
        .map(|s| predict(model, s))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricsBundle,
    /// Previous-event baseline on the same sequences.
    pub baseline: MetricsBundle,
    /// Correctness of each scored target, in dataset order.
    pub hits: Vec<bool>,
}

/// Test metrics plus the baseline; the baseline's majority class comes
/// from `train` when given, otherwise from `test`.
pub fn evaluate(
    model: &ModelParams,
    test: &Dataset,
    train: Option<&Dataset>,
) -> Result<Evaluation> {
    if model.spec.vocab != test.vocab {
        return contract(format!(
            "model vocabulary {} does not match data vocabulary {}",
            model.spec.vocab, test.vocab
        ));
    }
    let outputs = predict_dataset(model, test)?;
    let mut acc = MetricsAccumulator::new();
    for (o, s) in outputs.iter().zip(&test.sequences) {
        acc.add_sequence(o, s)?;
    }
    Ok(Evaluation {
        metrics: acc.finish(),
        baseline: baseline_metrics(test, train.unwrap_or(test)),
        hits: acc.hits().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::HeadKind;
    use crate::datasets::SyntheticTask;
    use crate::model::head_for_task;

    fn spec_for(arch: Arch, data: &Dataset, hidden: usize) -> ModelSpec {
        ModelSpec::new(arch, hidden, data.vocab, head_for_task(data.task))
    }

    #[test]
    fn init_rules() {
        let spec = ModelSpec::new(Arch::CtGru, 12, 6, HeadKind::LabelSoftmax).with_bank(1.0, 10.0);
        let m = init_model(&RngStream::new(4), spec, 0.1).unwrap();
        assert_eq!(m.bank.as_ref().unwrap().len(), 3);
        for gate in [&m.gates.r, &m.gates.q, &m.gates.s] {
            for i in 0..12 {
                for j in 0..12 {
                    let d = crate::math::dot(gate.u.row(i), gate.u.row(j));
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((d - want).abs() < 1e-10);
                }
            }
        }
        for b in m.gates.s.b.iter().chain(m.gates.r.b.iter()) {
            assert!((b - 10f64.sqrt().ln()).abs() < 1e-12);
            assert!((b - 1.1513).abs() < 1e-4);
        }
        assert!(m.gates.q.b.iter().all(|b| *b == 0.0));
        let w: Vec<f64> = [&m.gates.r.w, &m.gates.q.w, &m.gates.s.w, &m.w_out]
            .iter()
            .flat_map(|w| w.as_slice().to_vec())
            .collect();
        let sd = (w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.015, "{sd}");
    }

    #[test]
    fn rmsprop_rules() {
        let spec = ModelSpec::new(Arch::GruNoDt, 3, 2, HeadKind::LabelSoftmax);
        let mut m = init_model(&RngStream::new(1), spec, 0.1).unwrap();
        let before = m.clone();
        let mut opt = Rmsprop::new(&m, 1e-3, 0.9, 1e-8);
        let zero = Gradients::zeros_like(&m);
        opt.update(&mut m, &zero).unwrap();
        assert_eq!(m, before);

        let mut g = Gradients::zeros_like(&m);
        for b in g.blocks_mut() {
            b.iter_mut().for_each(|v| *v = -0.37);
        }
        let mut prev = m.clone();
        let mut step = 0.0;
        for _ in 0..300 {
            opt.update(&mut m, &g).unwrap();
            step = m.b_out[0] - prev.b_out[0];
            prev = m.clone();
        }
        assert!((step - 1e-3).abs() < 1e-9, "{step}");

        let mut bad = Gradients::zeros_like(&m);
        bad.b_out[0] = f64::NAN;
        assert!(opt.update(&mut m, &bad).is_err());
    }

    #[test]
    fn config_validation_and_hash() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hash(), TrainConfig::default().hash());
        let d = TrainConfig {
            val_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(d.validate().is_err());
        assert_ne!(
            c.hash(),
            TrainConfig {
                seed: 1,
                ..c.clone()
            }
            .hash()
        );
    }

    #[test]
    fn training_is_deterministic_and_restores_best() {
        let data = SyntheticTask::WorkingMemory
            .generate(&RngStream::new(3), 120)
            .unwrap();
        let config = TrainConfig {
            max_epochs: 4,
            hidden_sizes: vec![4, 6],
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        for arch in [Arch::Gru, Arch::CtGru] {
            let spec = spec_for(arch, &data, 0);
            let (m1, r1) = train(spec.clone(), &config, &data).unwrap();
            let (m2, r2) = train(spec, &config, &data).unwrap();
            assert_eq!(m1, m2);
            assert_eq!(r1, r2);
            assert_eq!(r1.candidates.len(), 2);
            assert!([4, 6].contains(&r1.selected_hidden));
            let chosen = r1
                .candidates
                .iter()
                .find(|c| c.hidden == r1.selected_hidden)
                .unwrap();
            let min = chosen
                .epochs
                .iter()
                .map(|e| e.val_loss)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(chosen.best_val_loss, min);
            assert_eq!(chosen.epochs[chosen.selected_epoch].val_loss, min);
            for c in &r1.candidates {
                assert!(c.best_val_loss >= chosen.best_val_loss);
            }
            // the returned parameters are the best epoch's
            let n_val = r1.val_sequences;
            let mut idx: Vec<usize> = (0..data.len()).collect();
            RngStream::new(config.seed)
                .split("validation-split")
                .shuffle(&mut idx);
            let val: Vec<EventSequence> = idx[..n_val]
                .iter()
                .map(|&i| data.sequences[i].clone())
                .collect();
            assert!((dataset_loss(&m1, &val).unwrap() - min).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_patience_stops_after_first_bad_epoch() {
        let data = SyntheticTask::WorkingMemory
            .generate(&RngStream::new(5), 60)
            .unwrap();
        let config = TrainConfig {
            max_epochs: 50,
            patience: 0,
            hidden_sizes: vec![3],
            learning_rate: 0.5,
            clip_norm: None,
            ..TrainConfig::default()
        };
        let (_, r) = train(spec_for(Arch::Gru, &data, 3), &config, &data).unwrap();
        let e = &r.candidates[0].epochs;
        let last = e.len() - 1;
        assert!(last < 50);
        // every epoch but the last improved on the one before
        for w in e[..last].windows(2) {
            assert!(w[1].val_loss < w[0].val_loss);
        }
        assert!(
            e[last].val_loss
                >= e[..last]
                    .iter()
                    .map(|x| x.val_loss)
                    .fold(f64::INFINITY, f64::min)
        );
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        let data = SyntheticTask::Cluster
            .generate(&RngStream::new(5), 10)
            .unwrap();
        let spec = ModelSpec::new(Arch::Gru, 4, 5, HeadKind::SequenceLogistic);
        assert!(train(spec.clone(), &TrainConfig::default(), &data).is_err());
        let m = init_model(&RngStream::new(0), spec, 0.1).unwrap();
        assert!(evaluate(&m, &data, None).is_err());
    }

    #[test]
    fn auto_bounds_follow_the_data() {
        let data = SyntheticTask::Cluster
            .generate(&RngStream::new(5), 50)
            .unwrap();
        let (lo, hi) = auto_bank_bounds(&data).unwrap();
        // exponential(1) gaps: 5th percentile near -ln(0.95) ≈ 0.051
        assert!(lo > 0.03 && lo < 0.08, "{lo}");
        let span = data.sequences.iter().map(|s| s.span()).fold(0.0, f64::max);
        assert_eq!(hi, span);
    }
}
