use std::collections::HashMap;

use super::{Dataset, Event, EventSequence, Targets, Task};
use crate::error::{contract, Result};
use crate::math::RngStream;

/// An event is "remembered" if its label recurred within this many time units.
pub const REMEMBER_THRESHOLD: f64 = 310.0;
const VOCAB: usize = 12;
const LENGTH: usize = 100;
const LAGS: [f64; 3] = [1.0, 10.0, 100.0];

/// Per-event targets: 1 iff the same label occurred at most
/// [`REMEMBER_THRESHOLD`] earlier; first occurrences are 0.
pub fn remembering_targets(events: &[Event]) -> Vec<bool> {
    let mut last: HashMap<usize, f64> = HashMap::new();
    events
        .iter()
        .map(|e| {
            let hit = last
                .get(&e.label)
                .is_some_and(|&t| e.time - t <= REMEMBER_THRESHOLD);
            last.insert(e.label, e.time);
            hit
        })
        .collect()
}

pub fn gen_remembering(rng: &RngStream, n: usize) -> Result<Dataset> {
    if n == 0 {
        return contract("need at least one sequence");
    }
    let sequences = (0..n)
        .map(|i| {
            let mut r = rng.split_indexed("remembering", i as u64);
            let mut t = 0.0;
            let events: Vec<Event> = (0..LENGTH)
                .map(|k| {
                    if k > 0 {
                        t += LAGS[r.below(LAGS.len())];
                    }
                    Event::new(r.below(VOCAB), t)
                })
                .collect();
            let targets = remembering_targets(&events);
            EventSequence {
                id: i as u64,
                events,
                targets: Targets::Polarity(targets),
            }
        })
        .collect();
    Dataset::new(Task::PolarityPrediction, VOCAB, sequences)
}
