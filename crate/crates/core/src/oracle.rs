//! Brute-force ground truth.
//!
//! [`bruteforce_slot_min`] minimizes the per-slot drift-plus-penalty
//! objective over the whole feasible allocation set, including serving empty
//! queues, with its own objective evaluation. [`offline_optimal_drops`]
//! enumerates every action sequence of a tiny instance with full knowledge
//! of the future.

use thiserror::Error;

use crate::model::{apply_slot, channel_power, PowerAllocation, SystemConfig, UserQueue};
use crate::policy::{Policy, SlotView, VirtualQueues};
use crate::sim::{run, ForcedTraces, LogStride, SimError};

pub const MAX_TINY_USERS: usize = 4;
pub const MAX_TINY_HORIZON: u64 = 8;
/// Upper bound on `(n_users + 1)^horizon` for offline enumeration.
pub const MAX_SEQUENCES: u64 = 400_000;

/// Absolute slack for the finite-horizon budget `sum_t p_i(t) <= H * gamma_i`,
/// absorbing the rounding of `H * gamma_i`.
pub const BUDGET_SLACK: f64 = 1e-9;

/// The whole feasible set for one slot: idle, then one candidate per user at
/// its channel-conditioned level.
pub fn feasible_allocations(view: &SlotView<'_>) -> Vec<PowerAllocation> {
    let n = view.n_users();
    std::iter::once(PowerAllocation::idle(n))
        .chain((0..n).map(|i| PowerAllocation::serve(n, i, channel_power(view.channels[i], view.config))))
        .collect()
}

fn slot_objective(view: &SlotView<'_>, backlog: &VirtualQueues, alloc: &PowerAllocation) -> f64 {
    let users = &view.config.users;
    let mut urgency = 0.0;
    for (j, user) in users.iter().enumerate() {
        let transmitting = alloc.powers()[j] > 0.0;
        urgency += match view.head_deadlines[j] {
            Some(d) if !transmitting => f64::from(user.deadline + 1 - d) / f64::from(user.deadline),
            _ => 0.0,
        };
    }
    let mut pressure = 0.0;
    for (j, user) in users.iter().enumerate() {
        pressure += backlog.get(j) * (alloc.powers()[j] - user.power_budget);
    }
    view.config.penalty_weight * urgency + pressure
}

/// Minimum of the per-slot objective over every feasible allocation; the
/// first minimum in [`feasible_allocations`] order wins.
pub fn bruteforce_slot_min(view: &SlotView<'_>, backlog: &VirtualQueues) -> (PowerAllocation, f64) {
    let mut best: Option<(PowerAllocation, f64)> = None;
    for alloc in feasible_allocations(view) {
        let value = slot_objective(view, backlog, &alloc);
        if best.as_ref().is_none_or(|(_, incumbent)| value < *incumbent) {
            best = Some((alloc, value));
        }
    }
    best.expect("idle is always feasible")
}

/// Per-candidate objective values in [`feasible_allocations`] order.
pub fn objective_table(view: &SlotView<'_>, backlog: &VirtualQueues) -> Vec<(PowerAllocation, f64)> {
    feasible_allocations(view)
        .into_iter()
        .map(|alloc| {
            let value = slot_objective(view, backlog, &alloc);
            (alloc, value)
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("tiny instance: {0}")]
    Shape(String),
    #[error("enumeration of {sequences} action sequences exceeds the limit of {MAX_SEQUENCES}")]
    TooLarge { sequences: u64 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// A small fully scripted scenario: `config.horizon` is the horizon `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyInstance {
    pub config: SystemConfig,
    pub traces: ForcedTraces,
}

impl TinyInstance {
    pub fn validate(&self) -> Result<(), OracleError> {
        self.config.validate().map_err(|e| OracleError::Shape(e.to_string()))?;
        let n = self.config.n_users();
        let h = self.config.horizon;
        if n > MAX_TINY_USERS {
            return Err(OracleError::Shape(format!("{n} users, at most {MAX_TINY_USERS}")));
        }
        if h > MAX_TINY_HORIZON {
            return Err(OracleError::Shape(format!("horizon {h}, at most {MAX_TINY_HORIZON}")));
        }
        let exact = |len: usize| len as u64 == h;
        if !exact(self.traces.channels.len()) || !exact(self.traces.arrivals.len()) {
            return Err(OracleError::Shape(format!("traces must be exactly {h} slots long")));
        }
        if self.traces.channels.iter().any(|row| row.len() != n)
            || self.traces.arrivals.iter().any(|row| row.len() != n)
        {
            return Err(OracleError::Shape(format!("every trace slot needs {n} entries")));
        }
        Ok(())
    }

    fn initial_queues(&self) -> Result<Vec<UserQueue>, OracleError> {
        let n = self.config.n_users();
        if self.traces.initial_backlog.is_empty() {
            return Ok(vec![UserQueue::new(); n]);
        }
        if self.traces.initial_backlog.len() != n {
            return Err(OracleError::Shape(format!("initial backlog needs {n} queues")));
        }
        self.traces
            .initial_backlog
            .iter()
            .zip(&self.config.users)
            .map(|(packets, user)| {
                UserQueue::from_deadlines(packets.iter().copied(), user.deadline)
                    .map_err(|e| OracleError::Shape(e.to_string()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineOptimum {
    pub min_drops: u64,
    /// One optimal allocation per slot; the lexicographically first optimum
    /// with actions ordered idle, user 1, user 2, ...
    pub witness: Vec<PowerAllocation>,
}

struct Search<'a> {
    instance: &'a TinyInstance,
    enforce_budget: bool,
    budget_caps: Vec<f64>,
    actions: Vec<usize>,
    best: Option<(u64, Vec<usize>)>,
}

impl Search<'_> {
    fn allocation(&self, slot: usize, action: usize) -> PowerAllocation {
        let n = self.instance.config.n_users();
        match action {
            0 => PowerAllocation::idle(n),
            a => {
                let channel = self.instance.traces.channels[slot][a - 1];
                PowerAllocation::serve(n, a - 1, channel_power(channel, &self.instance.config))
            }
        }
    }

    fn explore(&mut self, slot: usize, queues: &[UserQueue], drops: u64, power: &[f64]) {
        if self.best.as_ref().is_some_and(|(best, _)| drops >= *best) {
            return;
        }
        if slot as u64 == self.instance.config.horizon {
            self.best = Some((drops, self.actions.clone()));
            return;
        }
        let n = self.instance.config.n_users();
        for action in 0..=n {
            let alloc = self.allocation(slot, action);
            let mut spent = power.to_vec();
            spent.iter_mut().zip(alloc.powers()).for_each(|(s, p)| *s += p);
            if self.enforce_budget && spent.iter().zip(&self.budget_caps).any(|(s, cap)| *s > *cap) {
                continue;
            }
            let mut next = queues.to_vec();
            let outcomes =
                apply_slot(&mut next, &alloc, &self.instance.traces.arrivals[slot], &self.instance.config);
            let slot_drops = outcomes.iter().filter(|o| o.dropped).count() as u64;
            self.actions.push(action);
            self.explore(slot + 1, &next, drops + slot_drops, &spent);
            self.actions.pop();
        }
    }
}

/// Minimum total drops over all action sequences of the instance. With
/// `enforce_budget`, sequences must keep `(1/H) sum_t p_i(t) <= gamma_i`
/// for every user.
pub fn offline_optimal_drops(instance: &TinyInstance, enforce_budget: bool) -> Result<OfflineOptimum, OracleError> {
    instance.validate()?;
    let n = instance.config.n_users() as u64;
    let h = instance.config.horizon;
    let sequences = (n + 1).checked_pow(h as u32).unwrap_or(u64::MAX);
    if sequences > MAX_SEQUENCES {
        return Err(OracleError::TooLarge { sequences });
    }
    let queues = instance.initial_queues()?;
    let mut search = Search {
        instance,
        enforce_budget,
        budget_caps: instance.config.users.iter().map(|u| u.power_budget * h as f64 + BUDGET_SLACK).collect(),
        actions: Vec::with_capacity(h as usize),
        best: None,
    };
    search.explore(0, &queues, 0, &vec![0.0; n as usize]);
    let (min_drops, actions) = search.best.take().expect("always idling satisfies every budget");
    let witness = actions.iter().enumerate().map(|(t, &a)| search.allocation(t, a)).collect();
    Ok(OfflineOptimum { min_drops, witness })
}

/// Total drops when `policy` runs the instance's scripted traces.
pub fn policy_drops(instance: &TinyInstance, policy: &mut dyn Policy) -> Result<u64, OracleError> {
    instance.validate()?;
    let result = run(&instance.config, policy, Some(&instance.traces), LogStride::Every(1))?;
    Ok(result.users.iter().map(|u| u.counters.dropped).sum())
}

/// Finite-horizon power sums of an allocation sequence, per user.
pub fn power_sums(sequence: &[PowerAllocation], n_users: usize) -> Vec<f64> {
    let mut sums = vec![0.0; n_users];
    for alloc in sequence {
        sums.iter_mut().zip(alloc.powers()).for_each(|(s, p)| *s += p);
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChannelState, UserParams};
    use ChannelState::*;

    fn single_user(gamma: f64) -> SystemConfig {
        let user = UserParams { arrival_prob: 0.0, deadline: 5, power_budget: gamma, bad_channel_prob: 0.6 };
        SystemConfig::uniform(1, user, 1.0, 2.0, 60.0)
    }

    fn view<'a>(c: &'a SystemConfig, head: Option<u32>) -> SlotView<'a> {
        SlotView {
            slot: 0,
            channels: vec![Good],
            head_deadlines: vec![head],
            queue_lengths: vec![usize::from(head.is_some())],
            config: c,
        }
    }

    #[test]
    fn bruteforce_examples() {
        let c = single_user(0.6);
        assert_eq!(bruteforce_slot_min(&view(&c, None), &VirtualQueues::zeros(1)), (PowerAllocation::idle(1), 0.0));
        let (alloc, value) = bruteforce_slot_min(&view(&c, Some(1)), &VirtualQueues::zeros(1));
        assert_eq!((alloc, value), (PowerAllocation::serve(1, 0, 1.0), 0.0));
        let (alloc, value) = bruteforce_slot_min(&view(&c, Some(1)), &VirtualQueues::from_backlogs(vec![100.0]));
        assert_eq!(alloc, PowerAllocation::idle(1));
        assert!(value.abs() < 1e-12);
    }

    #[test]
    fn feasible_set_includes_serving_empty_queues() {
        let c = single_user(0.6);
        let all = feasible_allocations(&view(&c, None));
        assert_eq!(all, vec![PowerAllocation::idle(1), PowerAllocation::serve(1, 0, 1.0)]);
    }

    fn instance(gamma: f64, deadline: u32, channels: &[ChannelState], backlog: &[u32]) -> TinyInstance {
        let mut config = single_user(gamma);
        config.users[0].deadline = deadline;
        config.horizon = channels.len() as u64;
        TinyInstance {
            config,
            traces: ForcedTraces {
                channels: channels.iter().map(|&s| vec![s]).collect(),
                arrivals: vec![vec![false]; channels.len()],
                initial_backlog: vec![backlog.to_vec()],
            },
        }
    }

    #[test]
    fn two_slot_table_instance_needs_no_drops() {
        let inst = instance(1.5, 3, &[Bad, Good, Good], &[1, 3]);
        let opt = offline_optimal_drops(&inst, true).unwrap();
        assert_eq!(opt.min_drops, 0);
        let sums = power_sums(&opt.witness, 1);
        assert!(sums[0] <= 4.5);
        // Every budget-feasible zero-drop plan must spend the Bad-slot P_high on the first packet.
        assert_eq!(opt.witness[0].powers(), &[2.0]);
    }

    #[test]
    fn forced_drop_under_zero_budget() {
        let inst = instance(0.0, 5, &[Good], &[1]);
        assert_eq!(offline_optimal_drops(&inst, true).unwrap().min_drops, 1);
        assert_eq!(offline_optimal_drops(&inst, false).unwrap().min_drops, 0);
    }

    #[test]
    fn no_arrivals_no_drops() {
        let inst = instance(0.0, 5, &[Good, Bad, Good, Good], &[]);
        let opt = offline_optimal_drops(&inst, true).unwrap();
        assert_eq!(opt.min_drops, 0);
        assert!(opt.witness.iter().all(|a| a.total_power() == 0.0));
    }

    #[test]
    fn oversized_instances_are_rejected() {
        let mut inst = instance(0.5, 5, &[Good; 8], &[]);
        assert!(offline_optimal_drops(&inst, true).is_ok());
        inst.config.horizon = 9;
        inst.traces.channels.push(vec![Good]);
        inst.traces.arrivals.push(vec![false]);
        assert!(matches!(offline_optimal_drops(&inst, true), Err(OracleError::Shape(_))));
    }
}
