//! Exponential-kernel Hawkes processes.
//!
//! Intensity: `λ(t) = μ + (α/τ) Σ_{t_i < t} exp(-(t - t_i)/τ)`. The process
//! is Markov in the excess intensity `λ - μ`, which lets the simulator draw
//! each inter-event time exactly (no thinning, no time grid): the next
//! event is the earlier of a background arrival at rate `μ` and the first
//! arrival of the decaying self-excited component, whose distribution has a
//! closed-form inverse.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{Dataset, Event, EventSequence, Targets, Task};
use crate::error::{contract, Result};
use crate::math::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    pub mu: f64,
    pub alpha: f64,
    pub tau: f64,
}

impl HawkesParams {
    pub fn new(mu: f64, alpha: f64, tau: f64) -> Result<Self> {
        let p = HawkesParams { mu, alpha, tau };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return contract(format!(
                "Hawkes base rate must be positive (got {})",
                self.mu
            ));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return contract(format!(
                "Hawkes excitation must lie in [0, 1) for a stationary process (got {})",
                self.alpha
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return contract(format!(
                "Hawkes time constant must be positive (got {})",
                self.tau
            ));
        }
        Ok(())
    }

    /// Long-run event rate `μ / (1 - α)`.
    pub fn stationary_rate(&self) -> f64 {
        self.mu / (1.0 - self.alpha)
    }

    /// Expected excess intensity `λ - μ` of the stationary process.
    pub fn stationary_excess(&self) -> f64 {
        self.alpha * self.stationary_rate()
    }

    fn jump(&self) -> f64 {
        self.alpha / self.tau
    }
}

/// Stateful exact simulator; yields one event time per call.
#[derive(Clone, Debug)]
pub struct HawkesSimulator {
    params: HawkesParams,
    time: f64,
    /// `λ(t+) - μ` just after the last event.
    excess: f64,
}

impl HawkesSimulator {
    pub fn new(params: HawkesParams) -> Result<Self> {
        Self::starting_at(params, 0.0)
    }

    /// An empty process whose clock starts at `time`.
    pub fn starting_at(params: HawkesParams, time: f64) -> Result<Self> {
        params.validate()?;
        Ok(HawkesSimulator {
            params,
            time,
            excess: 0.0,
        })
    }

    pub fn next_event(&mut self, rng: &mut RngStream) -> f64 {
        let p = &self.params;
        let background = -rng.uniform_open0().ln() / p.mu;
        let excited = if self.excess > 0.0 {
            let d = 1.0 + rng.uniform_open0().ln() / (p.tau * self.excess);
            if d > 0.0 {
                -p.tau * d.ln()
            } else {
                f64::INFINITY
            }
        } else {
            f64::INFINITY
        };
        let wait = background.min(excited);
        self.time += wait;
        self.excess = self.excess * (-wait / p.tau).exp() + p.jump();
        self.time
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    /// All events in `(0, T]`.
    Time(f64),
    /// Exactly this many events.
    Count(usize),
}

/// Event times of a single process started empty at time zero.
pub fn sim_hawkes(rng: &mut RngStream, p: HawkesParams, horizon: Horizon) -> Result<Vec<f64>> {
    let mut sim = HawkesSimulator::new(p)?;
    let mut times = Vec::new();
    match horizon {
        Horizon::Time(end) => loop {
            let t = sim.next_event(rng);
            if t > end {
                break;
            }
            times.push(t);
        },
        Horizon::Count(n) => {
            times.extend((0..n).map(|_| sim.next_event(rng)));
        }
    }
    Ok(times)
}

/// `Λ(t_k) - Λ(t_{k-1})` for each event (with `t_{-1} = 0`); Exp(1) if the
/// times really come from `p`.
pub fn compensator_residuals(times: &[f64], p: &HawkesParams) -> Vec<f64> {
    let mut prev = 0.0;
    let mut excess = 0.0;
    times
        .iter()
        .map(|&t| {
            let gap = t - prev;
            let decay = (-gap / p.tau).exp();
            let r = p.mu * gap + excess * p.tau * (1.0 - decay);
            excess = excess * decay + p.jump();
            prev = t;
            r
        })
        .collect()
}

/// Log-likelihood of one process's event times observed on `[0, end]`,
/// for a process started empty at time zero.
pub fn log_likelihood(times: &[f64], p: &HawkesParams, end: f64) -> f64 {
    log_likelihood_from(times, p, end, 0.0)
}

/// As [`log_likelihood`], with excess intensity `initial_excess` at time
/// zero carried in from unobserved earlier events.
pub fn log_likelihood_from(times: &[f64], p: &HawkesParams, end: f64, initial_excess: f64) -> f64 {
    let mut ll = 0.0;
    let mut prev = 0.0;
    let mut excess = initial_excess;
    for &t in times {
        excess *= (-(t - prev) / p.tau).exp();
        ll += (p.mu + excess).ln();
        excess += p.jump();
        prev = t;
    }
    let compensator = p.mu * end
        + initial_excess * p.tau * (1.0 - (-end / p.tau).exp())
        + times
            .iter()
            .map(|&t| p.alpha * (1.0 - (-(end - t) / p.tau).exp()))
            .sum::<f64>();
    ll - compensator
}

/// Settings for the multi-label Hawkes benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HawkesTaskConfig {
    pub mu: f64,
    pub alpha: f64,
    /// One time constant per label; permuted across labels per sequence.
    pub taus: Vec<f64>,
    pub min_len: usize,
    pub max_len: usize,
    /// Each label's process runs for `burn_in · τ / (1 - α)` time units
    /// before observation starts, so the observed window is (very nearly)
    /// stationary. Zero starts every process empty at time zero.
    pub burn_in: f64,
}

impl Default for HawkesTaskConfig {
    fn default() -> Self {
        HawkesTaskConfig {
            mu: 0.02,
            alpha: 0.5,
            taus: (1..=12).map(|k| f64::from(1u32 << k)).collect(),
            min_len: 240,
            max_len: 1020,
            burn_in: 10.0,
        }
    }
}

impl HawkesTaskConfig {
    pub fn labels(&self) -> usize {
        self.taus.len()
    }

    pub fn params(&self, tau: f64) -> Result<HawkesParams> {
        HawkesParams::new(self.mu, self.alpha, tau)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return contract("Hawkes sequence length range is empty");
        }
        if self.taus.is_empty() {
            return contract("Hawkes task needs at least one label");
        }
        if !(self.burn_in >= 0.0 && self.burn_in.is_finite()) {
            return contract(format!(
                "burn-in must be a finite nonnegative multiple (got {})",
                self.burn_in
            ));
        }
        for &tau in &self.taus {
            self.params(tau)?;
        }
        Ok(())
    }

    fn burn_in_time(&self, tau: f64) -> f64 {
        self.burn_in * tau / (1.0 - self.alpha)
    }
}

#[derive(PartialEq)]
struct Pending {
    time: f64,
    label: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on time, ties by label
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.label.cmp(&self.label))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn gen_hawkes_dataset(rng: &RngStream, n: usize) -> Result<Dataset> {
    Ok(gen_hawkes_dataset_with(rng, n, &HawkesTaskConfig::default())?.0)
}

/// Generates the dataset and, per sequence, the time constant assigned to
/// each label.
pub fn gen_hawkes_dataset_with(
    rng: &RngStream,
    n: usize,
    cfg: &HawkesTaskConfig,
) -> Result<(Dataset, Vec<Vec<f64>>)> {
    if n == 0 {
        return contract("need at least one sequence");
    }
    cfg.validate()?;
    let labels = cfg.labels();
    let mut sequences = Vec::with_capacity(n);
    let mut assignments = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng.split_indexed("hawkes", i as u64);
        let len = cfg.min_len + r.below(cfg.max_len - cfg.min_len + 1);
        let mut taus = cfg.taus.clone();
        r.shuffle(&mut taus);

        let mut streams: Vec<(HawkesSimulator, RngStream)> = taus
            .iter()
            .enumerate()
            .map(|(label, &tau)| {
                let p = cfg.params(tau).expect("validated");
                let sim =
                    HawkesSimulator::starting_at(p, -cfg.burn_in_time(tau)).expect("validated");
                (sim, r.split_indexed("label", label as u64))
            })
            .collect();
        let mut heap: BinaryHeap<Pending> = streams
            .iter_mut()
            .enumerate()
            .map(|(label, (sim, lr))| {
                let mut time = sim.next_event(lr);
                while time < 0.0 {
                    time = sim.next_event(lr);
                }
                Pending { time, label }
            })
            .collect();
        let mut events = Vec::with_capacity(len);
        while events.len() < len {
            let next = heap.pop().expect("one pending event per label");
            events.push(Event::new(next.label, next.time));
            let (sim, lr) = &mut streams[next.label];
            heap.push(Pending {
                time: sim.next_event(lr),
                label: next.label,
            });
        }
        sequences.push(EventSequence {
            id: i as u64,
            events,
            targets: Targets::NextLabel,
        });
        assignments.push(taus);
    }
    Ok((
        Dataset::new(Task::LabelPrediction, labels, sequences)?,
        assignments,
    ))
}

/// Next-label distribution from per-label event histories: the probability
/// of label `l` is `λ_l(t)` normalized over labels, evaluated at the time
/// `t = now + dt_next` of the next event.
pub fn hawkes_oracle_predict(
    histories: &[Vec<f64>],
    params: &[HawkesParams],
    now: f64,
    dt_next: f64,
) -> Result<Vec<f64>> {
    if histories.len() != params.len() {
        return contract("one parameter set per label history required");
    }
    let t = now + dt_next;
    let mut lambdas: Vec<f64> = histories
        .iter()
        .zip(params)
        .map(|(times, p)| {
            p.mu + times
                .iter()
                .filter(|&&ti| ti < t)
                .map(|&ti| p.jump() * (-(t - ti) / p.tau).exp())
                .sum::<f64>()
        })
        .collect();
    let total: f64 = lambdas.iter().sum();
    lambdas.iter_mut().for_each(|l| *l /= total);
    Ok(lambdas)
}

/// Maximum-likelihood predictor for the multi-label Hawkes task.
///
/// `μ` and `α` are known; the label-to-time-constant assignment is chosen to
/// maximize the whole sequence's likelihood. Because the labels are
/// independent processes, the sequence likelihood is a sum of per-label
/// terms, and the best assignment is found exactly by dynamic programming
/// over subsets of time constants.
#[derive(Clone, Debug)]
pub struct HawkesOracle {
    pub assignment: Vec<HawkesParams>,
    /// Excess intensity per label at time zero. For stationary data this is
    /// the expected contribution of the unobserved history.
    pub initial_excess: Vec<f64>,
}

impl HawkesOracle {
    pub fn fit(seq: &EventSequence, cfg: &HawkesTaskConfig) -> Result<Self> {
        cfg.validate()?;
        let labels = cfg.labels();
        if labels > 16 {
            return contract("oracle supports between 1 and 16 labels");
        }
        let candidates: Vec<HawkesParams> = cfg
            .taus
            .iter()
            .map(|&tau| cfg.params(tau))
            .collect::<Result<_>>()?;
        let prior = |p: &HawkesParams| {
            if cfg.burn_in > 0.0 {
                p.stationary_excess()
            } else {
                0.0
            }
        };
        let mut per_label: Vec<Vec<f64>> = vec![Vec::new(); labels];
        for e in &seq.events {
            if e.label >= labels {
                return contract(format!(
                    "label {} outside oracle's {labels} labels",
                    e.label
                ));
            }
            per_label[e.label].push(e.time);
        }
        let end = seq.events.last().map_or(0.0, |e| e.time);
        // score[l][c]: log-likelihood of label l's events under candidate c
        let score: Vec<Vec<f64>> = per_label
            .iter()
            .map(|times| {
                candidates
                    .iter()
                    .map(|p| log_likelihood_from(times, p, end, prior(p)))
                    .collect()
            })
            .collect();

        // best[mask]: best total for labels 0..popcount(mask) using candidates in mask
        let full = 1usize << labels;
        let mut best = vec![f64::NEG_INFINITY; full];
        let mut choice = vec![usize::MAX; full];
        best[0] = 0.0;
        for mask in 0..full {
            if best[mask] == f64::NEG_INFINITY {
                continue;
            }
            let label = mask.count_ones() as usize;
            if label == labels {
                continue;
            }
            for (c, s) in score[label].iter().enumerate() {
                if mask & (1 << c) != 0 {
                    continue;
                }
                let next = mask | (1 << c);
                let v = best[mask] + s;
                if v > best[next] {
                    best[next] = v;
                    choice[next] = c;
                }
            }
        }
        let mut assignment = vec![candidates[0]; labels];
        let mut mask = full - 1;
        for label in (0..labels).rev() {
            let c = choice[mask];
            assignment[label] = candidates[c];
            mask &= !(1 << c);
        }
        let initial_excess = assignment.iter().map(prior).collect();
        Ok(HawkesOracle {
            assignment,
            initial_excess,
        })
    }

    /// Distribution over the label of event `k+1`, for `k = 0..len-1`.
    pub fn predict_sequence(&self, seq: &EventSequence) -> Vec<Vec<f64>> {
        let labels = self.assignment.len();
        let mut excess = self.initial_excess.clone();
        debug_assert_eq!(excess.len(), labels);
        let mut last_time = 0.0;
        let mut out = Vec::with_capacity(seq.len().saturating_sub(1));
        for (k, e) in seq.events.iter().enumerate() {
            // fold event k into its label's excess intensity
            let dt = e.time - last_time;
            for (x, p) in excess.iter_mut().zip(&self.assignment) {
                *x *= (-dt / p.tau).exp();
            }
            excess[e.label] += self.assignment[e.label].jump();
            last_time = e.time;
            let Some(next) = seq.events.get(k + 1) else {
                break;
            };
            let gap = next.time - e.time;
            let mut lambdas: Vec<f64> = excess
                .iter()
                .zip(&self.assignment)
                .map(|(x, p)| p.mu + x * (-gap / p.tau).exp())
                .collect();
            let total: f64 = lambdas.iter().sum();
            lambdas.iter_mut().for_each(|l| *l /= total);
            out.push(lambdas);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_explosive_params() {
        assert!(HawkesParams::new(0.1, 1.0, 2.0).is_err());
        assert!(HawkesParams::new(0.0, 0.5, 2.0).is_err());
        assert!(HawkesParams::new(0.1, 0.5, 0.0).is_err());
        assert!(sim_hawkes(
            &mut RngStream::new(1),
            HawkesParams {
                mu: 0.1,
                alpha: 1.2,
                tau: 1.0
            },
            Horizon::Count(5)
        )
        .is_err());
    }

    #[test]
    fn times_strictly_increase() {
        let p = HawkesParams::new(0.5, 0.8, 0.3).unwrap();
        let t = sim_hawkes(&mut RngStream::new(3), p, Horizon::Count(20_000)).unwrap();
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        assert!(t[0] > 0.0);
    }

    #[test]
    fn poisson_when_unexcited() {
        let p = HawkesParams::new(0.25, 0.0, 3.0).unwrap();
        let t = sim_hawkes(&mut RngStream::new(5), p, Horizon::Count(100_000)).unwrap();
        let mean_gap = t.last().unwrap() / t.len() as f64;
        assert!((mean_gap - 4.0).abs() < 0.05 * 4.0, "{mean_gap}");
    }

    #[test]
    fn stationary_rate_for_several_time_constants() {
        for (i, tau) in [0.3, 2.0, 50.0].into_iter().enumerate() {
            let p = HawkesParams::new(0.2, 0.5, tau).unwrap();
            let t = sim_hawkes(
                &mut RngStream::new(40 + i as u64),
                p,
                Horizon::Count(200_000),
            )
            .unwrap();
            let rate = t.len() as f64 / t.last().unwrap();
            assert!((rate - 0.4).abs() < 0.04 * 0.4, "tau {tau}: {rate}");
            let r = compensator_residuals(&t, &p);
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            assert!((mean - 1.0).abs() < 0.01, "tau {tau}: {mean}");
        }
    }

    #[test]
    fn time_horizon_respected() {
        let p = HawkesParams::new(0.3, 0.4, 2.0).unwrap();
        let t = sim_hawkes(&mut RngStream::new(8), p, Horizon::Time(500.0)).unwrap();
        assert!(t.iter().all(|&x| x <= 500.0));
        assert!(!t.is_empty());
    }

    #[test]
    fn residuals_reduce_to_scaled_gaps_for_poisson() {
        let p = HawkesParams::new(2.0, 0.0, 1.0).unwrap();
        let r = compensator_residuals(&[0.5, 1.25, 3.0], &p);
        assert_eq!(r, vec![1.0, 1.5, 3.5]);
    }

    #[test]
    fn likelihood_of_poisson() {
        let p = HawkesParams::new(0.5, 0.0, 1.0).unwrap();
        let ll = log_likelihood(&[1.0, 2.0, 3.0], &p, 10.0);
        assert!((ll - (3.0 * 0.5f64.ln() - 5.0)).abs() < 1e-12);
    }

    #[test]
    fn dataset_is_sorted_and_sized() {
        let (d, taus) =
            gen_hawkes_dataset_with(&RngStream::new(4), 6, &HawkesTaskConfig::default()).unwrap();
        for (s, t) in d.sequences.iter().zip(&taus) {
            assert!((240..=1020).contains(&s.len()));
            assert!(s.events.windows(2).all(|w| w[1].time >= w[0].time));
            let mut sorted = t.clone();
            sorted.sort_by(f64::total_cmp);
            assert_eq!(sorted, HawkesTaskConfig::default().taus);
        }
    }

    #[test]
    fn oracle_uniform_without_excitation() {
        let cfg = HawkesTaskConfig {
            alpha: 0.0,
            min_len: 50,
            max_len: 60,
            ..HawkesTaskConfig::default()
        };
        let (d, _) = gen_hawkes_dataset_with(&RngStream::new(2), 1, &cfg).unwrap();
        let oracle = HawkesOracle::fit(&d.sequences[0], &cfg).unwrap();
        for dist in oracle.predict_sequence(&d.sequences[0]) {
            assert!(dist.iter().all(|p| (p - 1.0 / 12.0).abs() < 1e-12));
        }
    }

    #[test]
    fn burst_dominates_right_after() {
        let mu = 0.02;
        let params: Vec<HawkesParams> = [2.0, 4096.0, 64.0]
            .iter()
            .map(|&tau| HawkesParams::new(mu, 0.5, tau).unwrap())
            .collect();
        let histories = vec![vec![100.0, 100.4, 100.9], vec![10.0, 60.0], vec![80.0]];
        let dist = hawkes_oracle_predict(&histories, &params, 100.9, 0.1).unwrap();
        let argmax = (0..3).max_by(|&a, &b| dist[a].total_cmp(&dist[b])).unwrap();
        assert_eq!(argmax, 0);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sequence_predictions_match_direct_intensity() {
        let cfg = HawkesTaskConfig {
            min_len: 80,
            max_len: 80,
            burn_in: 0.0,
            ..HawkesTaskConfig::default()
        };
        let (d, _) = gen_hawkes_dataset_with(&RngStream::new(12), 1, &cfg).unwrap();
        let seq = &d.sequences[0];
        let oracle = HawkesOracle::fit(seq, &cfg).unwrap();
        let preds = oracle.predict_sequence(seq);
        let mut histories = vec![Vec::new(); 12];
        for k in 0..seq.len() - 1 {
            let e = seq.events[k];
            histories[e.label].push(e.time);
            let gap = seq.events[k + 1].time - e.time;
            let direct =
                hawkes_oracle_predict(&histories, &oracle.assignment, e.time, gap).unwrap();
            for (a, b) in direct.iter().zip(&preds[k]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn assignment_search_matches_brute_force() {
        let cfg = HawkesTaskConfig {
            taus: vec![1.0, 16.0, 256.0, 4096.0],
            min_len: 300,
            max_len: 300,
            ..HawkesTaskConfig::default()
        };
        let (d, _) = gen_hawkes_dataset_with(&RngStream::new(6), 3, &cfg).unwrap();
        for seq in &d.sequences {
            let oracle = HawkesOracle::fit(seq, &cfg).unwrap();
            let end = seq.events.last().unwrap().time;
            let times: Vec<Vec<f64>> = (0..4)
                .map(|l| {
                    seq.events
                        .iter()
                        .filter(|e| e.label == l)
                        .map(|e| e.time)
                        .collect()
                })
                .collect();
            let total = |perm: &[usize]| -> f64 {
                perm.iter()
                    .enumerate()
                    .map(|(l, &c)| {
                        let p = cfg.params(cfg.taus[c]).unwrap();
                        log_likelihood_from(&times[l], &p, end, p.stationary_excess())
                    })
                    .sum()
            };
            let mut best = f64::NEG_INFINITY;
            let mut perm = [0usize, 1, 2, 3];
            permute(&mut perm, 0, &mut |p| best = best.max(total(p)));
            let chosen: Vec<usize> = oracle
                .assignment
                .iter()
                .map(|p| cfg.taus.iter().position(|&t| t == p.tau).unwrap())
                .collect();
            assert!((total(&chosen) - best).abs() < 1e-9);
        }
    }

    #[test]
    fn stationary_oracle_adds_decaying_prior() {
        let cfg = HawkesTaskConfig {
            taus: vec![2.0, 64.0, 1024.0],
            min_len: 40,
            max_len: 40,
            ..HawkesTaskConfig::default()
        };
        let (d, _) = gen_hawkes_dataset_with(&RngStream::new(21), 1, &cfg).unwrap();
        let seq = &d.sequences[0];
        let oracle = HawkesOracle::fit(seq, &cfg).unwrap();
        let preds = oracle.predict_sequence(seq);
        for k in 0..seq.len() - 1 {
            let t = seq.events[k + 1].time;
            let lambdas: Vec<f64> = oracle
                .assignment
                .iter()
                .enumerate()
                .map(|(l, p)| {
                    let own: f64 = seq.events[..=k]
                        .iter()
                        .filter(|e| e.label == l)
                        .map(|e| p.alpha / p.tau * (-(t - e.time) / p.tau).exp())
                        .sum();
                    p.mu + p.stationary_excess() * (-t / p.tau).exp() + own
                })
                .collect();
            let total: f64 = lambdas.iter().sum();
            for (a, b) in lambdas.iter().zip(&preds[k]) {
                assert!((a / total - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn burn_in_equalizes_label_rates() {
        // pooled per-label rates within the window, fast vs slow labels
        let cfg = HawkesTaskConfig {
            taus: vec![2.0, 4096.0],
            min_len: 400,
            max_len: 400,
            ..HawkesTaskConfig::default()
        };
        let (d, taus) = gen_hawkes_dataset_with(&RngStream::new(30), 200, &cfg).unwrap();
        let (mut fast, mut slow, mut span) = (0usize, 0usize, 0.0);
        for (s, t) in d.sequences.iter().zip(&taus) {
            span += s.events.last().unwrap().time;
            for e in &s.events {
                if t[e.label] == 2.0 {
                    fast += 1;
                } else {
                    slow += 1;
                }
            }
        }
        let (fast, slow) = (fast as f64 / span, slow as f64 / span);
        assert!((fast - 0.04).abs() < 0.004, "{fast}");
        // the slow label is bursty on the window's scale, so its estimate is noisier
        assert!((slow - 0.04).abs() < 0.01, "{slow}");
    }

    fn permute(items: &mut [usize; 4], k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, visit);
            items.swap(k, i);
        }
    }
}
