use super::{balanced_classes, Dataset, Event, EventSequence, Targets, Task};
use crate::error::{contract, Result};
use crate::math::RngStream;

/// Lag that must follow each of `a`..`d`.
pub const RHYTHM_LAGS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
const SYMBOLS: usize = 100;
const END: usize = 4;
const VOCAB: usize = 5;

/// True if every lag after `a`..`d` matches [`RHYTHM_LAGS`].
pub fn rhythm_label(events: &[Event]) -> bool {
    events
        .windows(2)
        .all(|w| match RHYTHM_LAGS.get(w[0].label) {
            Some(&lag) => (w[1].time - w[0].time - lag).abs() < 1e-9,
            None => true,
        })
}

pub fn gen_rhythm(rng: &RngStream, n: usize) -> Result<Dataset> {
    if n == 0 {
        return contract("need at least one sequence");
    }
    let classes = balanced_classes(rng, n);
    let sequences = classes
        .iter()
        .enumerate()
        .map(|(i, &positive)| {
            let mut r = rng.split_indexed("rhythm", i as u64);
            let labels: Vec<usize> = (0..SYMBOLS).map(|_| r.below(RHYTHM_LAGS.len())).collect();
            let mut lags: Vec<f64> = labels.iter().map(|&l| RHYTHM_LAGS[l]).collect();
            if !positive {
                // double or halve between one and four of the lags
                let count = 1 + r.below(4);
                let mut positions: Vec<usize> = (0..SYMBOLS).collect();
                r.shuffle(&mut positions);
                for &p in &positions[..count] {
                    lags[p] *= if r.bernoulli(0.5) { 2.0 } else { 0.5 };
                }
            }
            let mut t = 0.0;
            let mut events = Vec::with_capacity(SYMBOLS + 1);
            for (&label, &lag) in labels.iter().zip(&lags) {
                events.push(Event::new(label, t));
                t += lag;
            }
            events.push(Event::new(END, t));
            debug_assert_eq!(rhythm_label(&events), positive);
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

    #[test]
    fn rule_examples() {
        let labels = [0, 3, 1, 2, 0];
        let mut t = 0.0;
        let mut events = Vec::new();
        for &l in &labels {
            events.push(Event::new(l, t));
            t += RHYTHM_LAGS[l];
        }
        events.push(Event::new(END, t));
        assert!(rhythm_label(&events));

        let mut doubled = events.clone();
        for e in &mut doubled[3..] {
            e.time += RHYTHM_LAGS[1];
        }
        assert!(!rhythm_label(&doubled));
        // same label stream, different lags, different class
        let a: Vec<usize> = events.iter().map(|e| e.label).collect();
        let b: Vec<usize> = doubled.iter().map(|e| e.label).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn generated_classes_match() {
        let d = gen_rhythm(&RngStream::new(3), 200).unwrap();
        assert_eq!(d.stats().positive_fraction, Some(0.5));
        for s in &d.sequences {
            assert_eq!(s.len(), SYMBOLS + 1);
            assert_eq!(s.events.last().unwrap().label, END);
            assert_eq!(Some(rhythm_label(&s.events)), s.class());
        }
    }
}
