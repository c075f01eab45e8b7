use std::collections::HashMap;

use super::{balanced_classes, Dataset, Event, EventSequence, Targets, Task};
use crate::error::{contract, Result};
use crate::math::RngStream;

/// Store durations for the `s`, `m` and `l` commands.
pub const WM_DURATIONS: [f64; 3] = [1.0, 10.0, 100.0];

pub const WM_VOCAB: usize = 6;
const FIRST_SYMBOL: usize = 3;

/// Lag distribution for the working-memory task. Elapsed time between a
/// store and its probe is drawn log-uniformly as a fraction of the
/// commanded duration, from `positive` for live items and from `expired`
/// for stale ones.
#[derive(Clone, Debug, PartialEq)]
pub struct WmLagConfig {
    pub positive: (f64, f64),
    pub expired: (f64, f64),
    /// Share of negatives that probe a symbol that was never stored.
    pub unstored_share: f64,
    /// Range for lags that do not affect the answer.
    pub free_lag: (f64, f64),
}

impl Default for WmLagConfig {
    fn default() -> Self {
        WmLagConfig {
            positive: (0.02, 0.8),
            expired: (1.25, 25.0),
            unstored_share: 1.0 / 3.0,
            free_lag: (0.05, 200.0),
        }
    }
}

fn is_command(label: usize) -> bool {
    label < FIRST_SYMBOL
}

/// Answer to the final probe: a symbol counts as stored while the time since
/// its store command is below the commanded duration. Probes do not refresh
/// storage. Returns `None` if the last event is not a symbol.
pub fn working_memory_label(events: &[Event]) -> Option<bool> {
    let (probe, history) = events.split_last()?;
    if is_command(probe.label) || probe.label >= WM_VOCAB {
        return None;
    }
    let mut stored: HashMap<usize, (f64, f64)> = HashMap::new();
    let mut pending: Option<f64> = None;
    for e in history {
        if is_command(e.label) {
            pending = Some(WM_DURATIONS[e.label]);
        } else if let Some(duration) = pending.take() {
            stored.insert(e.label, (e.time, duration));
        }
    }
    Some(match stored.get(&probe.label) {
        Some(&(at, duration)) => probe.time - at < duration,
        None => false,
    })
}

pub fn gen_working_memory(rng: &RngStream, n: usize) -> Result<Dataset> {
    gen_working_memory_with(rng, n, &WmLagConfig::default())
}

pub fn gen_working_memory_with(rng: &RngStream, n: usize, cfg: &WmLagConfig) -> Result<Dataset> {
    if n == 0 {
        return contract("need at least one sequence");
    }
    let classes = balanced_classes(rng, n);
    let mut sequences = Vec::with_capacity(n);
    for (i, &positive) in classes.iter().enumerate() {
        let mut r = rng.split_indexed("working-memory", i as u64);
        let cmds = [r.below(3), r.below(3)];
        let mut symbols = [0, 1, 2];
        r.shuffle(&mut symbols);

        let unstored = !positive && r.bernoulli(cfg.unstored_share);
        let (t1, t2, probe) = if unstored {
            (
                r.log_uniform(cfg.free_lag.0, cfg.free_lag.1),
                r.log_uniform(cfg.free_lag.0, cfg.free_lag.1),
                symbols[2],
            )
        } else {
            let which = r.below(2);
            let (lo, hi) = if positive { cfg.positive } else { cfg.expired };
            let elapsed = WM_DURATIONS[cmds[which]] * r.log_uniform(lo, hi);
            if which == 0 {
                let first = elapsed * r.uniform_range(0.05, 0.95);
                (first, elapsed - first, symbols[0])
            } else {
                (
                    r.log_uniform(cfg.free_lag.0, cfg.free_lag.1),
                    elapsed,
                    symbols[1],
                )
            }
        };
        let events = vec![
            Event::new(cmds[0], 0.0),
            Event::new(FIRST_SYMBOL + symbols[0], 0.0),
            Event::new(cmds[1], t1),
            Event::new(FIRST_SYMBOL + symbols[1], t1),
            Event::new(FIRST_SYMBOL + probe, t1 + t2),
        ];
        debug_assert_eq!(working_memory_label(&events), Some(positive));
        sequences.push(EventSequence {
            id: i as u64,
            events,
            targets: Targets::Class(positive),
        });
    }
    Dataset::new(Task::Classification, WM_VOCAB, sequences)
}
