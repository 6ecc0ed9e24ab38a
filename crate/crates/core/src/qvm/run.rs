//! Whole-program execution: repeated steps, measurement ensembles and
//! shot sampling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::isa::{InstructionClass, Reg, Word};

use super::machine::{measure_partition, Machine, SimError};
use super::state::QState;

/// One measurement outcome along a history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Outcome {
    pub pc: i64,
    pub reg: Reg,
    pub value: Word,
}

/// One ensemble member: the outcomes that led to it, their joint
/// probability, and the (normalized) state after them.
#[derive(Debug, Clone)]
pub struct Member {
    pub history: Vec<Outcome>,
    pub prob: f64,
    pub state: QState,
}

impl Member {
    pub fn values(&self) -> Vec<Word> {
        self.history.iter().map(|o| o.value).collect()
    }
}

/// Distribution of the `ordinal`-th measurement, marginalized over all
/// histories that reach it at `pc`.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub ordinal: usize,
    pub pc: i64,
    pub reg: Reg,
    /// Probability that execution reaches this measurement at all.
    pub reach: f64,
    /// Conditional distribution given `reach`.
    pub dist: BTreeMap<Word, f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    /// Largest cycle count over all ensemble members.
    pub cycles: u64,
    pub peak_branches: usize,
    pub merges: u64,
    pub pruned_mass: f64,
    pub class_histogram: BTreeMap<InstructionClass, u64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub ensemble: Vec<Member>,
    pub events: Vec<Event>,
    pub stats: RunStats,
    /// Mass still running when the cycle limit was hit.
    pub unhalted_mass: f64,
    pub crashed_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EventReport {
    pub pc: i64,
    pub reg: String,
    pub reach: f64,
    pub dist: BTreeMap<Word, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub cycles: u64,
    pub peak_branches: usize,
    pub merges: u64,
    pub pruned_mass: f64,
    pub class_histogram: BTreeMap<String, u64>,
}

/// The JSON-facing summary of a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub events: Vec<EventReport>,
    pub stats: StatsReport,
    pub unhalted_mass: f64,
    pub crashed_mass: f64,
}

impl RunStats {
    pub fn report(&self) -> StatsReport {
        StatsReport {
            cycles: self.cycles,
            peak_branches: self.peak_branches,
            merges: self.merges,
            pruned_mass: self.pruned_mass,
            class_histogram: self.class_histogram.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

impl RunResult {
    pub fn report(&self) -> RunReport {
        RunReport {
            events: self
                .events
                .iter()
                .map(|e| EventReport { pc: e.pc, reg: e.reg.alias(), reach: e.reach, dist: e.dist.clone() })
                .collect(),
            stats: self.stats.report(),
            unhalted_mass: self.unhalted_mass,
            crashed_mass: self.crashed_mass,
        }
    }

    /// Total probability over ensemble members.
    pub fn total_prob(&self) -> f64 {
        self.ensemble.iter().map(|m| m.prob).sum()
    }
}

#[derive(Default)]
struct EventAcc {
    reach: f64,
    dist: BTreeMap<Word, f64>,
}

impl Machine<'_> {
    pub fn run(&self) -> Result<RunResult, SimError> {
        self.run_observed(|_| {})
    }

    /// Runs to completion, calling `observe` on the initial state and after
    /// every cycle of every ensemble member.
    pub fn run_observed(&self, mut observe: impl FnMut(&QState)) -> Result<RunResult, SimError> {
        let init = self.init_state()?;
        observe(&init);
        let mut stats = RunStats { peak_branches: init.len(), ..RunStats::default() };
        let mut events: BTreeMap<(usize, i64, Reg), EventAcc> = BTreeMap::new();
        let mut pending = vec![Member { history: Vec::new(), prob: 1.0, state: init }];
        let mut done = Vec::new();
        let (mut unhalted, mut crashed) = (0.0, 0.0);

        while let Some(mut m) = pending.pop() {
            loop {
                if m.state.all_stopped() || m.state.cycle >= self.limits.max_cycles {
                    let (_, c, a) = m.state.mass_split();
                    unhalted += a * m.prob;
                    crashed += c * m.prob;
                    stats.cycles = stats.cycles.max(m.state.cycle);
                    done.push(m);
                    break;
                }
                if let Some((pc, reg)) = self.pending_measurement(&m.state)? {
                    let active = m.state.branches.iter().filter(|(c, _)| c.is_active()).count() as u64;
                    *stats.class_histogram.entry(InstructionClass::Measurement).or_default() += active;
                    let ev = events.entry((m.history.len(), pc, reg)).or_default();
                    ev.reach += m.prob;
                    let parts = measure_partition(&m.state, reg);
                    // Pushed in reverse so that members pop in outcome order.
                    for (value, p, q) in parts.into_iter().rev() {
                        *ev.dist.entry(value).or_default() += p * m.prob;
                        let q = self.advance_measured(&q);
                        observe(&q);
                        let mut history = m.history.clone();
                        history.push(Outcome { pc, reg, value });
                        pending.push(Member { history, prob: p * m.prob, state: q });
                    }
                    break;
                }
                let (next, info) = self.step_detailed(&m.state)?;
                stats.merges += info.merges;
                stats.pruned_mass += info.pruned_mass * m.prob;
                for (k, v) in info.classes {
                    *stats.class_histogram.entry(k).or_default() += v;
                }
                stats.peak_branches = stats.peak_branches.max(next.len());
                observe(&next);
                m.state = next;
            }
        }

        done.sort_by(|a, b| a.history.cmp(&b.history));
        let events = events
            .into_iter()
            .map(|((ordinal, pc, reg), acc)| Event {
                ordinal,
                pc,
                reg,
                reach: acc.reach,
                dist: acc.dist.into_iter().map(|(v, p)| (v, p / acc.reach)).collect(),
            })
            .collect();
        Ok(RunResult { ensemble: done, events, stats, unhalted_mass: unhalted, crashed_mass: crashed })
    }

    /// Draws `shots` complete measurement histories and histograms each
    /// measurement site. Deterministic for a given seed.
    pub fn sample_run(&self, shots: u64, seed: u64) -> Result<SampleResult, SimError> {
        let exact = self.run()?;
        Ok(sample_ensemble(&exact, shots, seed))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Histogram {
    pub ordinal: usize,
    pub pc: i64,
    pub reg: String,
    pub counts: BTreeMap<Word, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SampleResult {
    pub shots: u64,
    pub seed: u64,
    pub histograms: Vec<Histogram>,
}

/// Samples histories from an exact ensemble. Choosing a member with its
/// joint probability is the same as drawing each outcome from its
/// conditional partition and collapsing, one measurement at a time.
pub fn sample_ensemble(exact: &RunResult, shots: u64, seed: u64) -> SampleResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = exact.total_prob();
    let mut counts: BTreeMap<(usize, i64, Reg), BTreeMap<Word, u64>> = BTreeMap::new();
    for _ in 0..shots {
        let u: f64 = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = exact.ensemble.len() - 1;
        for (i, m) in exact.ensemble.iter().enumerate() {
            acc += m.prob;
            if u < acc {
                pick = i;
                break;
            }
        }
        for (k, o) in exact.ensemble[pick].history.iter().enumerate() {
            *counts.entry((k, o.pc, o.reg)).or_default().entry(o.value).or_default() += 1;
        }
    }
    SampleResult {
        shots,
        seed,
        histograms: counts
            .into_iter()
            .map(|((ordinal, pc, reg), counts)| Histogram { ordinal, pc, reg: reg.alias(), counts })
            .collect(),
    }
}
