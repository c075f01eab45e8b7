//! Accuracy, log-likelihood, AUC, and the previous-event baselines.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{scored_targets, Target, PROB_FLOOR};
use crate::datasets::{Dataset, EventSequence, Targets, Task};
use crate::error::{check_dim, Result};
use crate::math::Vector;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Binary outputs count as correct when within 0.5 of the target.
#[inline]
pub fn binary_correct(output: f64, target: bool) -> bool {
    (output - if target { 1.0 } else { 0.0 }).abs() < 0.5
}

/// Fraction of argmax matches (label tasks).
pub fn label_accuracy(outputs: &[&[f64]], targets: &[usize]) -> Result<f64> {
    check_dim("label accuracy", outputs.len(), targets.len())?;
    if targets.is_empty() {
        return Ok(0.0);
    }
    let hits = outputs
        .iter()
        .zip(targets)
        .filter(|(o, &t)| argmax(o) == t)
        .count();
    Ok(hits as f64 / targets.len() as f64)
}

/// Fraction of outputs within 0.5 of their binary target.
pub fn binary_accuracy(outputs: &[f64], targets: &[bool]) -> Result<f64> {
    check_dim("binary accuracy", outputs.len(), targets.len())?;
    if targets.is_empty() {
        return Ok(0.0);
    }
    let hits = outputs
        .iter()
        .zip(targets)
        .filter(|(&o, &t)| binary_correct(o, t))
        .count();
    Ok(hits as f64 / targets.len() as f64)
}

/// Mann–Whitney AUC with midranks for ties. `None` unless both classes are
/// present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    if scores.len() != labels.len() {
        return None;
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 || scores.iter().any(|s| s.is_nan()) {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares the mean rank
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub accuracy: f64,
    /// Mean of `ln p` over scored targets; absent for point predictions.
    pub mean_log_likelihood: Option<f64>,
    /// Binary tasks only.
    pub auc: Option<f64>,
    /// Number of scored targets.
    pub n: usize,
}

impl MetricsBundle {
    pub const CSV_HEADER: &'static str = "accuracy,mean_log_likelihood,auc,n";

    pub fn csv_fields(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.10}"));
        format!(
            "{:.10},{},{},{}",
            self.accuracy,
            opt(self.mean_log_likelihood),
            opt(self.auc),
            self.n
        )
    }
}

/// Running sums for [`MetricsBundle`] that merge associatively.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    n: usize,
    correct: usize,
    log_lik: f64,
    scores: Vec<f64>,
    labels: Vec<bool>,
    /// Per scored target, whether it was predicted correctly.
    hits: Vec<bool>,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scores the model outputs for one sequence.
    pub fn add_sequence(&mut self, outputs: &[Vector], seq: &EventSequence) -> Result<()> {
        for (idx, target) in scored_targets(seq) {
            let o = outputs.get(idx).ok_or_else(|| {
                crate::Error::Contract(format!("sequence {} lacks output {idx}", seq.id))
            })?;
            let (hit, p) = match target {
                Target::Label(y) => (argmax(o) == y, o[y]),
                Target::Bit { unit, value } => {
                    self.scores.push(o[unit]);
                    self.labels.push(value);
                    let p = if value { o[unit] } else { 1.0 - o[unit] };
                    (binary_correct(o[unit], value), p)
                }
            };
            self.n += 1;
            self.correct += hit as usize;
            self.hits.push(hit);
            self.log_lik += p.max(PROB_FLOOR).ln();
        }
        Ok(())
    }

    pub fn merge(&mut self, other: MetricsAccumulator) {
        self.n += other.n;
        self.correct += other.correct;
        self.log_lik += other.log_lik;
        self.scores.extend(other.scores);
        self.labels.extend(other.labels);
        self.hits.extend(other.hits);
    }

    /// Correctness of each scored target, in the order added.
    pub fn hits(&self) -> &[bool] {
        &self.hits
    }

    pub fn finish(&self) -> MetricsBundle {
        let n = self.n.max(1) as f64;
        MetricsBundle {
            accuracy: self.correct as f64 / n,
            mean_log_likelihood: Some(self.log_lik / n),
            auc: auc(&self.scores, &self.labels),
            n: self.n,
        }
    }
}

/// A point prediction of the previous-event baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselinePrediction {
    Label(usize),
    Bit(bool),
    /// No earlier event to copy; scored as incorrect.
    Abstain,
}

/// Previous-event baseline for one sequence, aligned with
/// [`scored_targets`]. Label tasks predict that the next label repeats the
/// current one. Polarity tasks repeat the outcome of the last occurrence of
/// the same item, abstaining on an item's first occurrence. Classification
/// predicts `majority`.
pub fn baseline_predict(seq: &EventSequence, majority: bool) -> Vec<BaselinePrediction> {
    let ev = &seq.events;
    match &seq.targets {
        Targets::NextLabel => (1..ev.len())
            .map(|k| BaselinePrediction::Label(ev[k - 1].label))
            .collect(),
        Targets::Polarity(bits) => {
            let mut last: HashMap<usize, bool> = HashMap::new();
            let mut out = Vec::with_capacity(ev.len().saturating_sub(1));
            last.insert(ev[0].label, bits[0]);
            for k in 1..ev.len() {
                out.push(match last.get(&ev[k].label) {
                    Some(&b) => BaselinePrediction::Bit(b),
                    None => BaselinePrediction::Abstain,
                });
                last.insert(ev[k].label, bits[k]);
            }
            out
        }
        Targets::Class(_) => vec![BaselinePrediction::Bit(majority)],
    }
}

/// Majority class of a classification set; ties go to the negative class.
pub fn majority_class(data: &Dataset) -> bool {
    let pos = data
        .sequences
        .iter()
        .filter(|s| s.class() == Some(true))
        .count();
    2 * pos > data.sequences.len()
}

/// Accuracy of the previous-event baseline on `test`; the majority class
/// for classification comes from `train`.
pub fn baseline_metrics(test: &Dataset, train: &Dataset) -> MetricsBundle {
    let majority = test.task == Task::Classification && majority_class(train);
    let mut n = 0;
    let mut correct = 0;
    for seq in &test.sequences {
        let preds = baseline_predict(seq, majority);
        for ((_, target), pred) in scored_targets(seq).into_iter().zip(preds) {
            n += 1;
            correct += match (target, pred) {
                (Target::Label(y), BaselinePrediction::Label(p)) => y == p,
                (Target::Bit { value, .. }, BaselinePrediction::Bit(b)) => value == b,
                _ => false,
            } as usize;
        }
    }
    MetricsBundle {
        accuracy: correct as f64 / n.max(1) as f64,
        mean_log_likelihood: None,
        auc: None,
        n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Event;
    use proptest::prelude::*;

    /// Exhaustive pair count: P(pos > neg) + P(tie) / 2.
    fn auc_pairs(scores: &[f64], labels: &[bool]) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]),
            Some(0.75)
        );
        assert_eq!(
            auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]),
            Some(1.0)
        );
        assert_eq!(auc(&[0.5; 4], &[false, true, false, true]), Some(0.5));
        assert_eq!(auc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn accuracy_rules() {
        assert!(binary_correct(0.49, false));
        assert!(!binary_correct(0.51, false));
        assert!(!binary_correct(0.5, false));
        assert_eq!(argmax(&[0.3, 0.3, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
        let outs: Vec<&[f64]> = vec![&[0.2, 0.8], &[0.5, 0.5], &[0.9, 0.1]];
        assert_eq!(label_accuracy(&outs, &[1, 0, 1]).unwrap(), 2.0 / 3.0);
        assert_eq!(binary_accuracy(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
    }

    #[test]
    fn uniform_softmax_accuracy_is_chance() {
        let mut rng = crate::math::RngStream::new(8);
        let events: Vec<Event> = (0..24001)
            .map(|k| Event::new(rng.below(12), k as f64))
            .collect();
        let n = events.len();
        let seq = EventSequence {
            id: 0,
            events,
            targets: Targets::NextLabel,
        };
        let outs = vec![Vector::from_vec(vec![1.0 / 12.0; 12]).unwrap(); n];
        let mut acc = MetricsAccumulator::new();
        acc.add_sequence(&outs, &seq).unwrap();
        let m = acc.finish();
        assert!((m.accuracy - 1.0 / 12.0).abs() < 0.01, "{}", m.accuracy);
        assert!((m.mean_log_likelihood.unwrap() + 12f64.ln()).abs() < 1e-9);
        assert_eq!(m.auc, None);
    }

    #[test]
    fn baselines() {
        let seq = EventSequence {
            id: 0,
            events: (0..5).map(|k| Event::new(3, k as f64)).collect(),
            targets: Targets::NextLabel,
        };
        let data = Dataset::new(Task::LabelPrediction, 4, vec![seq]).unwrap();
        assert_eq!(baseline_metrics(&data, &data).accuracy, 1.0);

        let seq = EventSequence {
            id: 1,
            events: [0, 1, 0, 1, 2]
                .iter()
                .enumerate()
                .map(|(k, &l)| Event::new(l, k as f64))
                .collect(),
            targets: Targets::Polarity(vec![true, false, true, true, false]),
        };
        let preds = baseline_predict(&seq, false);
        assert_eq!(
            preds,
            vec![
                BaselinePrediction::Abstain,
                BaselinePrediction::Bit(true),
                BaselinePrediction::Bit(false),
                BaselinePrediction::Abstain,
            ]
        );
        let data = Dataset::new(Task::PolarityPrediction, 3, vec![seq]).unwrap();
        assert_eq!(baseline_metrics(&data, &data).accuracy, 0.25);
    }

    #[test]
    fn merge_matches_single_pass() {
        let mut rng = crate::math::RngStream::new(2);
        let seqs: Vec<EventSequence> = (0..6)
            .map(|i| EventSequence {
                id: i,
                events: vec![Event::new(0, 0.0)],
                targets: Targets::Class(rng.bernoulli(0.5)),
            })
            .collect();
        let outs: Vec<Vec<Vector>> = (0..6)
            .map(|_| vec![Vector::from_vec(vec![rng.uniform()]).unwrap()])
            .collect();
        let mut whole = MetricsAccumulator::new();
        let mut a = MetricsAccumulator::new();
        let mut b = MetricsAccumulator::new();
        for (i, (o, s)) in outs.iter().zip(&seqs).enumerate() {
            whole.add_sequence(o, s).unwrap();
            if i < 3 { &mut a } else { &mut b }
                .add_sequence(o, s)
                .unwrap();
        }
        a.merge(b);
        assert_eq!(a.finish(), whole.finish());
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(
            data in prop::collection::vec((0u8..6, any::<bool>()), 1..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 5.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            let a = auc(&scores, &labels);
            let b = auc_pairs(&scores, &labels);
            match (a, b) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn auc_invariant_under_monotone_maps(
            data in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            let mapped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(auc(&scores, &labels), auc(&mapped, &labels));
        }
    }
}
