//! Seeded slot loop.
//!
//! Each slot runs: observe channels, policy decides, service, drop check,
//! deadline tick, arrival admission, then metric and virtual-queue updates.
//! Random draws per slot happen in a fixed order: one channel draw for each
//! user in index order, then one arrival draw for each user in index order.
//! With forced traces no random numbers are drawn at all.
//!
//! The engine maintains the virtual queues for every policy, so the
//! sample-path budget inequality `avg_power - gamma <= X / t` is checked for
//! EDF and fixed traces too.

use std::time::{Duration, Instant};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{
    apply_slot, validate_allocation, AllocationViolation, ChannelState, ConfigError, Deadline, PowerAllocation,
    QueueError, SlotOutcome, SystemConfig, UserQueue,
};
use crate::policy::{Policy, PolicyError, SlotView, VirtualQueues};

/// Identifies the generator family and draw contract in output metadata.
pub const GENERATOR_ID: &str = "chacha8-u53-v1";

/// Absolute slack for the per-slot budget inequality check.
pub const BUDGET_CHECK_TOLERANCE: f64 = 1e-9;

/// Above this horizon the default logging stride decimates records.
pub const FULL_LOG_HORIZON: u64 = 10_000;

#[derive(Debug, Clone)]
pub struct SlotRng(ChaCha8Rng);

impl SlotRng {
    pub fn from_seed(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in [0, 1) from the top 53 bits of one 64-bit draw.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

/// One independent draw per user: Bad with that user's `bad_channel_prob`.
pub fn sample_channels(rng: &mut SlotRng, config: &SystemConfig) -> Vec<ChannelState> {
    config
        .users
        .iter()
        .map(|u| if rng.bernoulli(u.bad_channel_prob) { ChannelState::Bad } else { ChannelState::Good })
        .collect()
}

pub fn sample_arrivals(rng: &mut SlotRng, config: &SystemConfig) -> Vec<bool> {
    config.users.iter().map(|u| rng.bernoulli(u.arrival_prob)).collect()
}

/// Pre-scripted channels and arrivals replacing the random draws, plus an
/// optional initial backlog (head-to-tail remaining deadlines per user).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForcedTraces {
    pub channels: Vec<Vec<ChannelState>>,
    pub arrivals: Vec<Vec<bool>>,
    /// Empty means every queue starts empty.
    pub initial_backlog: Vec<Vec<Deadline>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogStride {
    /// Every slot up to [`FULL_LOG_HORIZON`] slots, otherwise about
    /// `FULL_LOG_HORIZON` evenly spaced records.
    #[default]
    Auto,
    Every(u64),
}

impl LogStride {
    pub fn resolve(self, horizon: u64) -> u64 {
        match self {
            LogStride::Every(n) => n.max(1),
            LogStride::Auto if horizon <= FULL_LOG_HORIZON => 1,
            LogStride::Auto => horizon.div_ceil(FULL_LOG_HORIZON),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{what} trace has {len} slots, horizon is {horizon}")]
    TraceTooShort { what: &'static str, len: usize, horizon: u64 },
    #[error("{what} trace slot {slot} has {found} entries, expected {expected}")]
    TraceShape { what: &'static str, slot: usize, expected: usize, found: usize },
    #[error("initial backlog has {found} queues, expected {expected}")]
    BacklogShape { expected: usize, found: usize },
    #[error("initial backlog of user {}: {source}", .user + 1)]
    InitialBacklog { user: usize, source: QueueError },
    #[error("policy failed at slot {slot}: {source}")]
    Policy { slot: u64, source: PolicyError },
    #[error("policy {policy} produced an infeasible allocation at slot {slot}: {violation}")]
    InvalidAllocation { slot: u64, policy: &'static str, violation: AllocationViolation },
    #[error("horizon of {0} slots already reached")]
    HorizonReached(u64),
    #[error("{check} violated at slot {slot} for user {}: {detail}", .user + 1)]
    InvariantViolated { slot: u64, user: usize, check: &'static str, detail: String },
}

/// Cumulative per-user counters; averages are derived from these at read
/// time.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UserCounters {
    pub arrivals: u64,
    pub served: u64,
    pub dropped: u64,
    pub power_sum: f64,
    pub cost_sum: f64,
    /// Slots in which the user was allocated nonzero power.
    pub transmissions: u64,
}

impl UserCounters {
    pub fn averages(&self, slots: u64) -> RunningAverages {
        if slots == 0 {
            return RunningAverages::default();
        }
        let t = slots as f64;
        RunningAverages {
            drop_rate: self.dropped as f64 / t,
            avg_power: self.power_sum / t,
            avg_cost: self.cost_sum / t,
        }
    }

    /// Mean power over slots in which the user transmitted.
    pub fn power_per_transmission(&self) -> f64 {
        if self.transmissions == 0 {
            0.0
        } else {
            self.power_sum / self.transmissions as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningAverages {
    pub drop_rate: f64,
    pub avg_power: f64,
    pub avg_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    /// Zero-based index of the slot just executed; averages cover `slot + 1` slots.
    pub slot: u64,
    pub channels: Vec<ChannelState>,
    /// Head deadlines seen by the policy at the start of the slot.
    pub head_deadlines: Vec<Option<Deadline>>,
    pub allocation: PowerAllocation,
    pub objective_value: Option<f64>,
    pub outcomes: Vec<SlotOutcome>,
    /// Virtual-queue backlogs after this slot's update.
    pub backlog: Vec<f64>,
    pub queue_lengths: Vec<usize>,
    pub averages: Vec<RunningAverages>,
}

/// Single-run state: queues, virtual queues, counters and generator.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    config: &'a SystemConfig,
    traces: Option<&'a ForcedTraces>,
    queues: Vec<UserQueue>,
    backlog: VirtualQueues,
    counters: Vec<UserCounters>,
    rng: SlotRng,
    slot: u64,
}

impl<'a> Simulator<'a> {
    pub fn new(config: &'a SystemConfig) -> Result<Self, SimError> {
        config.validate()?;
        let n = config.n_users();
        Ok(Self {
            config,
            traces: None,
            queues: vec![UserQueue::new(); n],
            backlog: VirtualQueues::zeros(n),
            counters: vec![UserCounters::default(); n],
            rng: SlotRng::from_seed(config.seed),
            slot: 0,
        })
    }

    pub fn with_traces(config: &'a SystemConfig, traces: &'a ForcedTraces) -> Result<Self, SimError> {
        let mut sim = Self::new(config)?;
        let n = config.n_users();
        check_trace("channel", &traces.channels, n, config.horizon)?;
        check_trace("arrival", &traces.arrivals, n, config.horizon)?;
        if !traces.initial_backlog.is_empty() {
            if traces.initial_backlog.len() != n {
                return Err(SimError::BacklogShape { expected: n, found: traces.initial_backlog.len() });
            }
            for (user, (packets, params)) in traces.initial_backlog.iter().zip(&config.users).enumerate() {
                let queue = UserQueue::from_deadlines(packets.iter().copied(), params.deadline)
                    .map_err(|source| SimError::InitialBacklog { user, source })?;
                // Pre-loaded packets count as arrivals so conservation holds from slot 0.
                sim.counters[user].arrivals = queue.len() as u64;
                sim.queues[user] = queue;
            }
        }
        sim.traces = Some(traces);
        Ok(sim)
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn queues(&self) -> &[UserQueue] {
        &self.queues
    }

    pub fn backlog(&self) -> &VirtualQueues {
        &self.backlog
    }

    pub fn counters(&self) -> &[UserCounters] {
        &self.counters
    }

    pub fn is_finished(&self) -> bool {
        self.slot >= self.config.horizon
    }

    /// Executes one slot.
    pub fn step(&mut self, policy: &mut dyn Policy) -> Result<SlotRecord, SimError> {
        if self.is_finished() {
            return Err(SimError::HorizonReached(self.config.horizon));
        }
        let t = self.slot;
        let (channels, arrivals) = match self.traces {
            Some(traces) => (traces.channels[t as usize].clone(), traces.arrivals[t as usize].clone()),
            None => {
                let channels = sample_channels(&mut self.rng, self.config);
                (channels, sample_arrivals(&mut self.rng, self.config))
            }
        };

        let view = SlotView::from_queues(t, channels, &self.queues, self.config);
        let decision = policy
            .decide(&view, &self.backlog)
            .map_err(|source| SimError::Policy { slot: t, source })?;
        validate_allocation(&decision.allocation, &view.channels, self.config).map_err(|violation| {
            SimError::InvalidAllocation { slot: t, policy: policy.name(), violation }
        })?;
        let allocation = decision.allocation;

        let outcomes = apply_slot(&mut self.queues, &allocation, &arrivals, self.config);
        self.backlog.update(&allocation, self.config);
        for ((c, o), &p) in self.counters.iter_mut().zip(&outcomes).zip(allocation.powers()) {
            c.arrivals += u64::from(o.arrival);
            c.served += u64::from(o.served);
            c.dropped += u64::from(o.dropped);
            c.power_sum += p;
            c.cost_sum += o.surrogate_cost;
            c.transmissions += u64::from(p > 0.0);
        }
        self.slot += 1;
        self.check_invariants()?;

        Ok(SlotRecord {
            slot: t,
            channels: view.channels,
            head_deadlines: view.head_deadlines,
            allocation,
            objective_value: decision.objective_value,
            outcomes,
            backlog: self.backlog.backlogs().to_vec(),
            queue_lengths: self.queues.iter().map(UserQueue::len).collect(),
            averages: self.counters.iter().map(|c| c.averages(self.slot)).collect(),
        })
    }

    fn check_invariants(&self) -> Result<(), SimError> {
        let t = self.slot;
        let violation = |user, check, detail| Err(SimError::InvariantViolated { slot: t - 1, user, check, detail });
        for (user, ((c, q), params)) in self.counters.iter().zip(&self.queues).zip(&self.config.users).enumerate() {
            let accounted = c.served + c.dropped + q.len() as u64;
            if c.arrivals != accounted {
                return violation(
                    user,
                    "conservation",
                    format!("arrivals {} != served {} + dropped {} + backlog {}", c.arrivals, c.served, c.dropped, q.len()),
                );
            }
            let avg_power = c.power_sum / t as f64;
            let slack = self.backlog.get(user) / t as f64;
            if avg_power - params.power_budget > slack + BUDGET_CHECK_TOLERANCE {
                return violation(
                    user,
                    "budget inequality",
                    format!("avg power {avg_power} - budget {} > X/t {slack}", params.power_budget),
                );
            }
            if c.power_sum > t as f64 * self.config.p_high {
                return violation(user, "power bound", format!("power sum {} over {t} slots", c.power_sum));
            }
        }
        Ok(())
    }
}

fn check_trace<T>(what: &'static str, trace: &[Vec<T>], n: usize, horizon: u64) -> Result<(), SimError> {
    if (trace.len() as u64) < horizon {
        return Err(SimError::TraceTooShort { what, len: trace.len(), horizon });
    }
    if let Some((slot, row)) = trace.iter().enumerate().find(|(_, row)| row.len() != n) {
        return Err(SimError::TraceShape { what, slot, expected: n, found: row.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserSummary {
    pub averages: RunningAverages,
    pub counters: UserCounters,
    pub final_backlog: f64,
    /// `X_i(T) / T`, zero for an empty horizon.
    pub backlog_over_t: f64,
    pub power_per_transmission: f64,
    pub queue_length: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: SystemConfig,
    pub policy: &'static str,
    pub generator: &'static str,
    pub slots: u64,
    pub stride: u64,
    pub users: Vec<UserSummary>,
    /// Every `stride`-th record plus the final one.
    pub records: Vec<SlotRecord>,
    pub wall_time: Duration,
}

/// Compares everything except wall-clock time.
impl PartialEq for RunResult {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.policy == other.policy
            && self.generator == other.generator
            && self.slots == other.slots
            && self.stride == other.stride
            && self.users == other.users
            && self.records == other.records
    }
}

/// Runs `config.horizon` slots from the empty initial state.
pub fn run(
    config: &SystemConfig,
    policy: &mut dyn Policy,
    traces: Option<&ForcedTraces>,
    stride: LogStride,
) -> Result<RunResult, SimError> {
    run_observed(config, policy, traces, stride, |_| {})
}

/// Like [`run`], additionally handing every slot's record to `observer`.
pub fn run_observed(
    config: &SystemConfig,
    policy: &mut dyn Policy,
    traces: Option<&ForcedTraces>,
    stride: LogStride,
    mut observer: impl FnMut(&SlotRecord),
) -> Result<RunResult, SimError> {
    let started = Instant::now();
    let mut sim = match traces {
        Some(traces) => Simulator::with_traces(config, traces)?,
        None => Simulator::new(config)?,
    };
    let horizon = config.horizon;
    let stride = stride.resolve(horizon);
    let mut records = Vec::new();
    while !sim.is_finished() {
        let record = sim.step(policy)?;
        observer(&record);
        let elapsed = record.slot + 1;
        if elapsed % stride == 0 || elapsed == horizon {
            records.push(record);
        }
    }

    let users = sim
        .counters
        .iter()
        .zip(sim.backlog.backlogs())
        .zip(&sim.queues)
        .map(|((c, &x), q)| UserSummary {
            averages: c.averages(horizon),
            counters: *c,
            final_backlog: x,
            backlog_over_t: if horizon == 0 { 0.0 } else { x / horizon as f64 },
            power_per_transmission: c.power_per_transmission(),
            queue_length: q.len(),
        })
        .collect();

    Ok(RunResult {
        config: config.clone(),
        policy: policy.name(),
        generator: GENERATOR_ID,
        slots: horizon,
        stride,
        users,
        records,
        wall_time: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UserParams;
    use crate::policy::{Dpa, FixedTrace};

    fn config(n: usize, bad: f64, arrival: f64, horizon: u64) -> SystemConfig {
        let user = UserParams { arrival_prob: arrival, deadline: 5, power_budget: 0.6, bad_channel_prob: bad };
        let mut c = SystemConfig::uniform(n, user, 1.0, 2.0, 60.0);
        c.horizon = horizon;
        c.seed = 7;
        c
    }

    struct Idle;

    impl Policy for Idle {
        fn name(&self) -> &'static str {
            "idle"
        }
        fn decide(&mut self, view: &SlotView<'_>, _: &VirtualQueues) -> Result<crate::policy::PolicyDecision, PolicyError> {
            Ok(crate::policy::PolicyDecision { allocation: PowerAllocation::idle(view.n_users()), objective_value: None })
        }
    }

    #[test]
    fn degenerate_channel_and_arrival_probabilities() {
        let mut rng = SlotRng::from_seed(1);
        for _ in 0..100 {
            assert!(sample_channels(&mut rng, &config(3, 1.0, 0.0, 1)).iter().all(|&s| s == ChannelState::Bad));
            assert!(sample_channels(&mut rng, &config(3, 0.0, 0.0, 1)).iter().all(|&s| s == ChannelState::Good));
            assert!(sample_arrivals(&mut rng, &config(3, 0.5, 0.0, 1)).iter().all(|&a| !a));
            assert!(sample_arrivals(&mut rng, &config(3, 0.5, 1.0, 1)).iter().all(|&a| a));
        }
    }

    #[test]
    fn empty_system_idle_step_drains_virtual_queue() {
        let c = config(2, 0.6, 0.0, 3);
        let mut sim = Simulator::new(&c).unwrap();
        sim.backlog = VirtualQueues::from_backlogs(vec![1.0, 0.5]);
        let rec = sim.step(&mut Idle).unwrap();
        assert!(rec.outcomes.iter().all(|o| !o.served && !o.dropped && !o.arrival));
        assert!((rec.backlog[0] - 0.4).abs() < 1e-12);
        assert_eq!(rec.backlog[1], 0.0);
    }

    #[test]
    fn step_past_horizon_errors() {
        let c = config(1, 0.6, 0.4, 1);
        let mut sim = Simulator::new(&c).unwrap();
        sim.step(&mut Dpa::new()).unwrap();
        assert!(matches!(sim.step(&mut Dpa::new()), Err(SimError::HorizonReached(1))));
    }

    #[test]
    fn zero_horizon_gives_empty_result() {
        let c = config(2, 0.6, 0.4, 0);
        let r = run(&c, &mut Dpa::new(), None, LogStride::Auto).unwrap();
        assert_eq!(r.slots, 0);
        assert!(r.records.is_empty());
        assert!(r.users.iter().all(|u| u.averages == RunningAverages::default() && u.backlog_over_t == 0.0));
    }

    #[test]
    fn short_traces_are_rejected() {
        let c = config(1, 0.6, 0.4, 3);
        let traces = ForcedTraces {
            channels: vec![vec![ChannelState::Good]; 2],
            arrivals: vec![vec![false]; 3],
            initial_backlog: vec![],
        };
        assert!(matches!(
            run(&c, &mut Dpa::new(), Some(&traces), LogStride::Auto),
            Err(SimError::TraceTooShort { what: "channel", len: 2, horizon: 3 })
        ));
    }

    #[test]
    fn infeasible_fixed_trace_is_reported() {
        let c = config(1, 1.0, 0.0, 1);
        let mut policy = FixedTrace::new(vec![PowerAllocation::from_powers(vec![1.0])]);
        let err = run(&c, &mut policy, None, LogStride::Auto).unwrap_err();
        assert!(matches!(err, SimError::InvalidAllocation { slot: 0, policy: "fixed", .. }));
    }

    #[test]
    fn stride_resolution() {
        assert_eq!(LogStride::Auto.resolve(10_000), 1);
        assert_eq!(LogStride::Auto.resolve(100_000), 10);
        assert_eq!(LogStride::Auto.resolve(100_001), 11);
        assert_eq!(LogStride::Every(0).resolve(5), 1);
        let c = config(1, 0.6, 0.4, 25);
        let r = run(&c, &mut Dpa::new(), None, LogStride::Every(10)).unwrap();
        let logged: Vec<u64> = r.records.iter().map(|rec| rec.slot).collect();
        assert_eq!(logged, vec![9, 19, 24]);
    }
}
