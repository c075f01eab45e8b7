use super::{balanced_classes, exponential_times, Dataset, Event, EventSequence, Targets, Task};
use crate::error::{contract, Result};
use crate::math::RngStream;

pub const DISPERSE_MIN_LAG: f64 = 9.0;
pub const DISPERSE_MAX_LAG: f64 = 11.0;
const VOCAB: usize = 12;
const LENGTH: usize = 100;
const FIRST: usize = 0;
const SECOND: usize = 1;

/// True if some `a` is followed by a `b` whose lag lies in [9, 11].
pub fn disperse_label(events: &[Event]) -> bool {
    // times are sorted, so each `a` only needs the events in its lag window
    events.iter().enumerate().any(|(i, a)| {
        a.label == FIRST
            && events[i + 1..]
                .iter()
                .take_while(|e| e.time - a.time <= DISPERSE_MAX_LAG)
                .any(|e| e.label == SECOND && e.time - a.time >= DISPERSE_MIN_LAG)
    })
}

fn random_events(r: &mut RngStream) -> Vec<Event> {
    exponential_times(r, LENGTH, 1.0)
        .into_iter()
        .map(|t| Event::new(r.below(VOCAB), t))
        .collect()
}

pub fn gen_disperse(rng: &RngStream, n: usize) -> Result<Dataset> {
    if n == 0 {
        return contract("need at least one sequence");
    }
    let classes = balanced_classes(rng, n);
    let sequences = classes
        .iter()
        .enumerate()
        .map(|(i, &positive)| {
            let mut r = rng.split_indexed("disperse", i as u64);
            let events = if positive {
                let mut events = random_events(&mut r);
                loop {
                    let a = r.below(events.len() - 1);
                    let partners: Vec<usize> = (a + 1..events.len())
                        .filter(|&j| {
                            let lag = events[j].time - events[a].time;
                            (DISPERSE_MIN_LAG..=DISPERSE_MAX_LAG).contains(&lag)
                        })
                        .collect();
                    if partners.is_empty() {
                        continue;
                    }
                    let b = partners[r.below(partners.len())];
                    events[a].label = FIRST;
                    events[b].label = SECOND;
                    break events;
                }
            } else {
                loop {
                    let events = random_events(&mut r);
                    if !disperse_label(&events) {
                        break events;
                    }
                }
            };
            debug_assert_eq!(disperse_label(&events), positive);
            EventSequence {
                id: i as u64,
                events,
                targets: Targets::Class(positive),
            }
        })
        .collect();
    Dataset::new(Task::Classification, VOCAB, sequences)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(pairs: &[(usize, f64)]) -> Vec<Event> {
        let mut events: Vec<Event> = (0..40)
            .map(|k| Event::new(2 + k % 10, k as f64 * 0.75))
            .collect();
        events.extend(pairs.iter().map(|&(l, t)| Event::new(l, t)));
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        events
    }

    #[test]
    fn lag_examples() {
        assert!(disperse_label(&seq(&[(FIRST, 5.0), (SECOND, 15.0)])));
        assert!(!disperse_label(&seq(&[(FIRST, 5.0), (SECOND, 25.0)])));
        assert!(!disperse_label(&seq(&[(SECOND, 5.0), (FIRST, 15.0)])));
        assert!(disperse_label(&seq(&[(FIRST, 5.0), (SECOND, 14.0)])));
        assert!(disperse_label(&seq(&[(FIRST, 5.0), (SECOND, 16.0)])));
    }

    #[test]
    fn generated_classes_match() {
        let d = gen_disperse(&RngStream::new(9), 200).unwrap();
        assert_eq!(d.stats().positive_fraction, Some(0.5));
        for s in &d.sequences {
            assert_eq!(s.len(), LENGTH);
            assert_eq!(Some(disperse_label(&s.events)), s.class());
        }
    }
}
