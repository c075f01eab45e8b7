use super::{balanced_classes, exponential_times, Dataset, Event, EventSequence, Targets, Task};
use crate::error::{contract, Result};
use crate::math::RngStream;

/// Maximum span of the `a`, `b`, `c` pattern.
pub const CLUSTER_WINDOW: f64 = 6.0;
const VOCAB: usize = 12;
const LENGTH: usize = 100;
const PATTERN: [usize; 3] = [0, 1, 2];

/// True if labels 0, 1 and 2 all occur, in any order, within a span of at
/// most [`CLUSTER_WINDOW`].
pub fn cluster_label(events: &[Event]) -> bool {
    for (i, start) in events.iter().enumerate() {
        if !PATTERN.contains(&start.label) {
            continue;
        }
        let mut seen = [false; 3];
        seen[start.label] = true;
        for e in &events[i + 1..] {
            if e.time - start.time > CLUSTER_WINDOW {
                break;
            }
            if PATTERN.contains(&e.label) {
                seen[e.label] = true;
            }
        }
        if seen.iter().all(|s| *s) {
            return true;
        }
    }
    false
}

fn random_events(r: &mut RngStream) -> Vec<Event> {
    exponential_times(r, LENGTH, 1.0)
        .into_iter()
        .map(|t| Event::new(r.below(VOCAB), t))
        .collect()
}

/// Relabels three events inside one window with a permutation of the pattern.
fn inject_pattern(r: &mut RngStream, events: &mut [Event]) {
    loop {
        let i = r.below(events.len() - 2);
        let within: Vec<usize> = (i + 1..events.len())
            .take_while(|&j| events[j].time - events[i].time <= CLUSTER_WINDOW)
            .collect();
        if within.len() < 2 {
            continue;
        }
        let a = r.below(within.len());
        let mut b = r.below(within.len() - 1);
        if b >= a {
            b += 1;
        }
        let mut labels = PATTERN;
        r.shuffle(&mut labels);
        events[i].label = labels[0];
        events[within[a]].label = labels[1];
        events[within[b]].label = labels[2];
        return;
    }
}

pub fn gen_cluster(rng: &RngStream, n: usize) -> Result<Dataset> {
    if n == 0 {
        return contract("need at least one sequence");
    }
    let classes = balanced_classes(rng, n);
    let sequences = classes
        .iter()
        .enumerate()
        .map(|(i, &positive)| {
            let mut r = rng.split_indexed("cluster", i as u64);
            let events = if positive {
                let mut events = random_events(&mut r);
                inject_pattern(&mut r, &mut events);
                events
            } else {
                loop {
                    let events = random_events(&mut r);
                    if !cluster_label(&events) {
                        break events;
                    }
                }
            };
            debug_assert_eq!(cluster_label(&events), positive);
            EventSequence {
                id: i as u64,
                events,
                targets: Targets::Class(positive),
            }
        })
        .collect();
    Dataset::new(Task::Classification, VOCAB, sequences)
}
