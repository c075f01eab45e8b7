//! Event sequences, the six synthetic tasks, and the on-disk sequence format.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::math::RngStream;

mod cluster;
mod disperse;
mod format;
pub mod hawkes;
mod remembering;
mod rhythm;
mod working_memory;

pub use cluster::{cluster_label, gen_cluster, CLUSTER_WINDOW};
pub use disperse::{disperse_label, gen_disperse, DISPERSE_MAX_LAG, DISPERSE_MIN_LAG};
pub use format::{read_sequences, sequences_to_string, write_sequences, FORMAT_MAGIC};
pub use hawkes::{
    gen_hawkes_dataset, gen_hawkes_dataset_with, sim_hawkes, HawkesParams, HawkesTaskConfig,
    Horizon,
};
pub use remembering::{gen_remembering, remembering_targets, REMEMBER_THRESHOLD};
pub use rhythm::{gen_rhythm, rhythm_label, RHYTHM_LAGS};
pub use working_memory::{gen_working_memory, working_memory_label, WmLagConfig, WM_DURATIONS};

/// What a sequence is supervised on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Predict the label of event `k+1` after event `k`.
    #[serde(rename = "label-pred")]
    LabelPrediction,
    /// Predict a binary property of event `k+1` after event `k`.
    #[serde(rename = "polarity-pred")]
    PolarityPrediction,
    /// One binary class per sequence.
    Classification,
}

impl Task {
    pub fn tag(self) -> &'static str {
        match self {
            Task::LabelPrediction => "label-pred",
            Task::PolarityPrediction => "polarity-pred",
            Task::Classification => "classification",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Task> {
        match tag {
            "label-pred" => Some(Task::LabelPrediction),
            "polarity-pred" => Some(Task::PolarityPrediction),
            "classification" => Some(Task::Classification),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub label: usize,
    pub time: f64,
}

impl Event {
    pub fn new(label: usize, time: f64) -> Self {
        Event { label, time }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    /// Targets are the labels of the following events.
    NextLabel,
    /// One bit per event.
    Polarity(Vec<bool>),
    /// One bit for the whole sequence.
    Class(bool),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub id: u64,
    pub events: Vec<Event>,
    pub targets: Targets,
}

impl EventSequence {
    pub fn task(&self) -> Task {
        match self.targets {
            Targets::NextLabel => Task::LabelPrediction,
            Targets::Polarity(_) => Task::PolarityPrediction,
            Targets::Class(_) => Task::Classification,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// `Δt_k = t_{k+1} - t_k`, with zero after the final event.
    pub fn dts(&self) -> Vec<f64> {
        let mut dts: Vec<f64> = self
            .events
            .windows(2)
            .map(|w| w[1].time - w[0].time)
            .collect();
        if !self.events.is_empty() {
            dts.push(0.0);
        }
        dts
    }

    pub fn span(&self) -> f64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }

    pub fn class(&self) -> Option<bool> {
        match self.targets {
            Targets::Class(c) => Some(c),
            _ => None,
        }
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.events.is_empty() {
            return contract(format!("sequence {} is empty", self.id));
        }
        for e in &self.events {
            if e.label >= vocab {
                return contract(format!(
                    "sequence {}: label {} outside vocabulary of {vocab}",
                    self.id, e.label
                ));
            }
            if !(e.time.is_finite() && e.time >= 0.0) {
                return contract(format!("sequence {}: bad timestamp {}", self.id, e.time));
            }
        }
        if self.events.windows(2).any(|w| w[1].time < w[0].time) {
            return contract(format!("sequence {}: timestamps decrease", self.id));
        }
        if let Targets::Polarity(bits) = &self.targets {
            if bits.len() != self.events.len() {
                return contract(format!(
                    "sequence {}: {} polarity targets for {} events",
                    self.id,
                    bits.len(),
                    self.events.len()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: Task,
    pub vocab: usize,
    pub sequences: Vec<EventSequence>,
}

impl Dataset {
    pub fn new(task: Task, vocab: usize, sequences: Vec<EventSequence>) -> Result<Self> {
        let d = Dataset {
            task,
            vocab,
            sequences,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.sequences {
            if s.task() != self.task {
                return contract(format!(
                    "sequence {} is {} in a {} dataset",
                    s.id,
                    s.task().tag(),
                    self.task.tag()
                ));
            }
            s.validate(self.vocab)?;
        }
        Ok(())
    }

    /// Dataset over a subset of the sequences, by index.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            task: self.task,
            vocab: self.vocab,
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
        }
    }

    pub fn stats(&self) -> DatasetStats {
        let n = self.sequences.len();
        let lens: Vec<usize> = self.sequences.iter().map(EventSequence::len).collect();
        let events: usize = lens.iter().sum();
        let span: f64 = self.sequences.iter().map(EventSequence::span).sum();
        let positives = self
            .sequences
            .iter()
            .filter(|s| s.class() == Some(true))
            .count();
        let (pol_pos, pol_n) = self
            .sequences
            .iter()
            .filter_map(|s| match &s.targets {
                Targets::Polarity(bits) => Some(bits),
                _ => None,
            })
            .fold((0, 0), |(p, t), bits| {
                (p + bits.iter().filter(|b| **b).count(), t + bits.len())
            });
        DatasetStats {
            sequences: n,
            events,
            min_len: lens.iter().copied().min().unwrap_or(0),
            max_len: lens.iter().copied().max().unwrap_or(0),
            mean_len: if n > 0 { events as f64 / n as f64 } else { 0.0 },
            event_rate: if span > 0.0 {
                (events - n) as f64 / span
            } else {
                0.0
            },
            positive_fraction: match self.task {
                Task::Classification if n > 0 => Some(positives as f64 / n as f64),
                Task::PolarityPrediction if pol_n > 0 => Some(pol_pos as f64 / pol_n as f64),
                _ => None,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sequences: usize,
    pub events: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub mean_len: f64,
    /// Events per time unit, pooled over sequences.
    pub event_rate: f64,
    pub positive_fraction: Option<f64>,
}

/// The six synthetic benchmarks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticTask {
    WorkingMemory,
    Cluster,
    Remembering,
    Rhythm,
    Hawkes,
    Disperse,
}

impl SyntheticTask {
    pub const ALL: [SyntheticTask; 6] = [
        SyntheticTask::WorkingMemory,
        SyntheticTask::Cluster,
        SyntheticTask::Remembering,
        SyntheticTask::Rhythm,
        SyntheticTask::Hawkes,
        SyntheticTask::Disperse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticTask::WorkingMemory => "working-memory",
            SyntheticTask::Cluster => "cluster",
            SyntheticTask::Remembering => "remembering",
            SyntheticTask::Rhythm => "rhythm",
            SyntheticTask::Hawkes => "hawkes",
            SyntheticTask::Disperse => "disperse",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        SyntheticTask::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn generate(self, rng: &RngStream, n: usize) -> Result<Dataset> {
        match self {
            SyntheticTask::WorkingMemory => gen_working_memory(rng, n),
            SyntheticTask::Cluster => gen_cluster(rng, n),
            SyntheticTask::Remembering => gen_remembering(rng, n),
            SyntheticTask::Rhythm => gen_rhythm(rng, n),
            SyntheticTask::Hawkes => gen_hawkes_dataset(rng, n),
            SyntheticTask::Disperse => gen_disperse(rng, n),
        }
    }
}

/// Exactly `n/2` positives (rounded down), in shuffled order.
pub(crate) fn balanced_classes(rng: &RngStream, n: usize) -> Vec<bool> {
    let mut classes: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    rng.split("class-order").shuffle(&mut classes);
    classes
}

/// Times from cumulative exponential gaps, first event at time zero.
pub(crate) fn exponential_times(rng: &mut RngStream, n: usize, mean_gap: f64) -> Vec<f64> {
    let mut t = 0.0;
    (0..n)
        .map(|i| {
            if i > 0 {
                t += rng.exponential(mean_gap);
            }
            t
        })
        .collect()
}

/// Relabels each sequence by order of first appearance (first new label is
/// 0, the next new one 1, ...); labels past `cap - 1` collapse onto
/// `cap - 1`.
pub fn reindex_by_first_appearance(data: &Dataset, cap: Option<usize>) -> Result<Dataset> {
    if cap == Some(0) {
        return contract("reindex cap must be positive");
    }
    let mut vocab = 0;
    let sequences = data
        .sequences
        .iter()
        .map(|s| {
            let mut map = std::collections::HashMap::new();
            let events = s
                .events
                .iter()
                .map(|e| {
                    let next = map.len();
                    let mut id = *map.entry(e.label).or_insert(next);
                    if let Some(c) = cap {
                        id = id.min(c - 1);
                    }
                    vocab = vocab.max(id + 1);
                    Event::new(id, e.time)
                })
                .collect();
            EventSequence {
                id: s.id,
                events,
                targets: s.targets.clone(),
            }
        })
        .collect();
    Dataset::new(data.task, vocab, sequences)
}
