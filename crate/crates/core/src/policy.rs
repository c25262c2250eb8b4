//! Per-slot decision makers behind one [`Policy`] interface: the
//! drift-plus-penalty power allocator (DPA), earliest-deadline-first, and a
//! fixed-trace replay policy.

use thiserror::Error;

use crate::model::{channel_power, surrogate_cost, ChannelState, Deadline, PowerAllocation, SystemConfig, UserQueue};

/// What a policy observes at the start of a slot.
#[derive(Debug, Clone)]
pub struct SlotView<'a> {
    /// Zero-based slot index.
    pub slot: u64,
    pub channels: Vec<ChannelState>,
    /// Head-of-queue remaining deadline per user; `None` iff the queue is empty.
    pub head_deadlines: Vec<Option<Deadline>>,
    pub queue_lengths: Vec<usize>,
    pub config: &'a SystemConfig,
}

impl<'a> SlotView<'a> {
    pub fn from_queues(slot: u64, channels: Vec<ChannelState>, queues: &[UserQueue], config: &'a SystemConfig) -> Self {
        Self {
            slot,
            channels,
            head_deadlines: queues.iter().map(UserQueue::head_deadline).collect(),
            queue_lengths: queues.iter().map(UserQueue::len).collect(),
            config,
        }
    }

    pub fn n_users(&self) -> usize {
        self.channels.len()
    }
}

/// Virtual-queue backlogs `X_i`, one per user, always nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualQueues(Vec<f64>);

impl VirtualQueues {
    pub fn zeros(n_users: usize) -> Self {
        Self(vec![0.0; n_users])
    }

    /// Panics if any backlog is negative or not finite.
    pub fn from_backlogs(backlogs: Vec<f64>) -> Self {
        assert!(
            backlogs.iter().all(|x| x.is_finite() && *x >= 0.0),
            "virtual queue backlogs must be finite and nonnegative"
        );
        Self(backlogs)
    }

    pub fn backlogs(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, user: usize) -> f64 {
        self.0[user]
    }

    /// In-place form of [`virtual_queue_update`].
    pub fn update(&mut self, alloc: &PowerAllocation, config: &SystemConfig) {
        for ((x, &p), user) in self.0.iter_mut().zip(alloc.powers()).zip(&config.users) {
            *x = (*x - user.power_budget).max(0.0) + p;
        }
    }
}

/// `X_i <- max(X_i - gamma_i, 0) + p_i` for every user.
pub fn virtual_queue_update(backlog: &VirtualQueues, alloc: &PowerAllocation, config: &SystemConfig) -> VirtualQueues {
    let mut next = backlog.clone();
    next.update(alloc, config);
    next
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub allocation: PowerAllocation,
    /// Minimized objective, reported by DPA only.
    pub objective_value: Option<f64>,
}

impl PolicyDecision {
    fn plain(allocation: PowerAllocation) -> Self {
        Self { allocation, objective_value: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("fixed trace has {len} slots, no allocation for slot {slot}")]
    TraceExhausted { slot: u64, len: usize },
}

pub trait Policy: Send {
    fn name(&self) -> &'static str;

    fn decide(&mut self, view: &SlotView<'_>, backlog: &VirtualQueues) -> Result<PolicyDecision, PolicyError>;
}

/// Drift-plus-penalty objective of a feasible candidate:
/// `V * sum_j f_j + sum_j X_j * (p_j - gamma_j)`.
///
/// `f_j` is evaluated with user `j` served only if it has power and a packet.
pub fn dpa_objective(candidate: &PowerAllocation, view: &SlotView<'_>, backlog: &VirtualQueues) -> f64 {
    let config = view.config;
    let mut cost = 0.0;
    for (j, user) in config.users.iter().enumerate() {
        let served = candidate.is_serving(j) && view.queue_lengths[j] > 0;
        cost += surrogate_cost(user.deadline, view.head_deadlines[j], served);
    }
    let mut drift = 0.0;
    for (j, user) in config.users.iter().enumerate() {
        drift += backlog.get(j) * (candidate.powers()[j] - user.power_budget);
    }
    config.penalty_weight * cost + drift
}

/// How an equal objective value competes with the incumbent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    /// Replace the incumbent only on strict improvement: the first minimum
    /// in candidate order wins.
    #[default]
    FirstMinimum,
    /// Replace on ties too. Only used as a negative control for the oracle
    /// equivalence check.
    LastMinimum,
}

impl TieRule {
    fn replaces(self, incumbent: f64, candidate: f64) -> bool {
        match self {
            TieRule::FirstMinimum => candidate < incumbent,
            TieRule::LastMinimum => candidate <= incumbent,
        }
    }
}

/// Exhaustive per-slot minimization over idle plus one serve candidate per
/// nonempty queue, idle first, then ascending user index.
pub fn dpa_decide(view: &SlotView<'_>, backlog: &VirtualQueues) -> PolicyDecision {
    dpa_decide_with(view, backlog, TieRule::FirstMinimum)
}

pub fn dpa_decide_with(view: &SlotView<'_>, backlog: &VirtualQueues, tie_rule: TieRule) -> PolicyDecision {
    let n = view.n_users();
    let mut best = PowerAllocation::idle(n);
    let mut best_value = dpa_objective(&best, view, backlog);
    for user in (0..n).filter(|&i| view.queue_lengths[i] > 0) {
        let candidate = PowerAllocation::serve(n, user, channel_power(view.channels[user], view.config));
        let value = dpa_objective(&candidate, view, backlog);
        if tie_rule.replaces(best_value, value) {
            best = candidate;
            best_value = value;
        }
    }
    PolicyDecision { allocation: best, objective_value: Some(best_value) }
}

/// Serves the user whose head packet expires soonest (lowest index on ties),
/// ignoring power budgets.
pub fn edf_decide(view: &SlotView<'_>) -> PolicyDecision {
    let n = view.n_users();
    let urgent = view
        .head_deadlines
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.map(|d| (d, i)))
        .min();
    let allocation = match urgent {
        Some((_, user)) => PowerAllocation::serve(n, user, channel_power(view.channels[user], view.config)),
        None => PowerAllocation::idle(n),
    };
    PolicyDecision::plain(allocation)
}

pub fn fixed_trace_decide(view: &SlotView<'_>, trace: &[PowerAllocation]) -> Result<PolicyDecision, PolicyError> {
    usize::try_from(view.slot)
        .ok()
        .and_then(|t| trace.get(t))
        .map(|alloc| PolicyDecision::plain(alloc.clone()))
        .ok_or(PolicyError::TraceExhausted { slot: view.slot, len: trace.len() })
}

#[derive(Debug, Clone, Default)]
pub struct Dpa {
    pub tie_rule: TieRule,
}

impl Dpa {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Policy for Dpa {
    fn name(&self) -> &'static str {
        "dpa"
    }

    fn decide(&mut self, view: &SlotView<'_>, backlog: &VirtualQueues) -> Result<PolicyDecision, PolicyError> {
        Ok(dpa_decide_with(view, backlog, self.tie_rule))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Edf;

impl Policy for Edf {
    fn name(&self) -> &'static str {
        "edf"
    }

    fn decide(&mut self, view: &SlotView<'_>, _backlog: &VirtualQueues) -> Result<PolicyDecision, PolicyError> {
        Ok(edf_decide(view))
    }
}

/// Replays a pre-scripted allocation per slot.
#[derive(Debug, Clone)]
pub struct FixedTrace {
    trace: Vec<PowerAllocation>,
}

impl FixedTrace {
    pub fn new(trace: Vec<PowerAllocation>) -> Self {
        Self { trace }
    }
}

impl Policy for FixedTrace {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn decide(&mut self, view: &SlotView<'_>, _backlog: &VirtualQueues) -> Result<PolicyDecision, PolicyError> {
        fixed_trace_decide(view, &self.trace)
    }
}
