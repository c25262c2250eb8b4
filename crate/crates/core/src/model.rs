//! System model: channel states, power feasibility, per-user packet queues and
//! the deterministic single-slot dynamics shared by the simulator and the
//! oracles.
//!
//! User indices are zero-based throughout the API. Human-facing output
//! (CSV, reports, error messages) numbers users from 1.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

/// Remaining slots before a packet expires, or a queue's packet deadline.
pub type Deadline = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelState {
    /// Deep fading; a transmission needs the high power level.
    Bad,
    /// Mild fading; the low power level suffices.
    Good,
}

impl ChannelState {
    pub fn as_char(self) -> char {
        match self {
            ChannelState::Bad => 'B',
            ChannelState::Good => 'G',
        }
    }
}

impl fmt::Display for ChannelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Per-user scenario parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct UserParams {
    /// Bernoulli packet arrival probability per slot.
    pub arrival_prob: f64,
    /// Packet deadline in slots, uniform across the user's queue.
    pub deadline: Deadline,
    /// Allowed long-run average power.
    pub power_budget: f64,
    /// Probability that the channel is Bad in a slot.
    pub bad_channel_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub p_low: f64,
    pub p_high: f64,
    pub users: Vec<UserParams>,
    /// Weight `V` of the penalty term in the drift-plus-penalty objective.
    pub penalty_weight: f64,
    pub horizon: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid {field}{}: {reason}", user.map(|u| format!(" (user {})", u + 1)).unwrap_or_default())]
pub struct ConfigError {
    pub field: &'static str,
    pub user: Option<usize>,
    pub reason: String,
}

impl ConfigError {
    fn new(field: &'static str, user: Option<usize>, reason: impl Into<String>) -> Self {
        Self { field, user, reason: reason.into() }
    }
}

impl SystemConfig {
    /// `n` identical users with the given per-user parameters.
    pub fn uniform(n: usize, user: UserParams, p_low: f64, p_high: f64, penalty_weight: f64) -> Self {
        Self {
            p_low,
            p_high,
            users: vec![user; n],
            penalty_weight,
            horizon: 0,
            seed: 0,
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.users.is_empty() {
            return Err(ConfigError::new("n_users", None, "must be at least 1"));
        }
        if !(self.p_low.is_finite() && self.p_low > 0.0) {
            return Err(ConfigError::new("p_low", None, format!("must be positive, got {}", self.p_low)));
        }
        if !(self.p_high.is_finite() && self.p_high > self.p_low) {
            return Err(ConfigError::new(
                "p_high",
                None,
                format!("must exceed p_low={}, got {}", self.p_low, self.p_high),
            ));
        }
        if !(self.penalty_weight.is_finite() && self.penalty_weight > 0.0) {
            return Err(ConfigError::new("V", None, format!("must be positive, got {}", self.penalty_weight)));
        }
        for (i, u) in self.users.iter().enumerate() {
            check_probability("arrival_prob", i, u.arrival_prob)?;
            check_probability("bad_channel_prob", i, u.bad_channel_prob)?;
            if u.deadline < 1 {
                return Err(ConfigError::new("deadline", Some(i), "must be at least 1 slot"));
            }
            if !(u.power_budget.is_finite() && (0.0..=self.p_high).contains(&u.power_budget)) {
                return Err(ConfigError::new(
                    "power_budget",
                    Some(i),
                    format!("must lie in [0, p_high={}], got {}", self.p_high, u.power_budget),
                ));
            }
        }
        Ok(())
    }
}

fn check_probability(field: &'static str, user: usize, p: f64) -> Result<(), ConfigError> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ConfigError::new(field, Some(user), format!("must lie in [0, 1], got {p}")))
    }
}

/// The nonzero power level a transmission needs on `channel`.
pub fn channel_power(channel: ChannelState, config: &SystemConfig) -> f64 {
    match channel {
        ChannelState::Bad => config.p_high,
        ChannelState::Good => config.p_low,
    }
}

/// The powers a single user may select on `channel`: idle or the
/// channel-conditioned level.
pub fn selectable_powers(channel: ChannelState, config: &SystemConfig) -> [f64; 2] {
    [0.0, channel_power(channel, config)]
}

/// Per-slot power vector. At most one entry is nonzero once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation(Vec<f64>);

impl PowerAllocation {
    pub fn idle(n_users: usize) -> Self {
        Self(vec![0.0; n_users])
    }

    pub fn serve(n_users: usize, user: usize, power: f64) -> Self {
        let mut powers = vec![0.0; n_users];
        powers[user] = power;
        Self(powers)
    }

    pub fn from_powers(powers: Vec<f64>) -> Self {
        Self(powers)
    }

    pub fn powers(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Serving indicator: true iff the user is allocated positive power.
    pub fn is_serving(&self, user: usize) -> bool {
        self.0[user] > 0.0
    }

    /// The first user with nonzero power, if any.
    pub fn active_user(&self) -> Option<usize> {
        self.0.iter().position(|&p| p > 0.0)
    }

    pub fn total_power(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl fmt::Display for PowerAllocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|p| p.to_string()).collect();
        write!(f, "({})", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocationViolation {
    #[error("allocation has {found} entries, expected one per user ({expected})")]
    LengthMismatch { expected: usize, found: usize },
    #[error("multiple transmitters: users {}", .users.iter().map(|u| (u + 1).to_string()).collect::<Vec<_>>().join(", "))]
    MultipleTransmitters { users: Vec<usize> },
    #[error("wrong level for channel: user {} has power {power} on a {channel} channel (allowed 0 or {allowed})", .user + 1)]
    WrongLevel { user: usize, power: f64, channel: ChannelState, allowed: f64 },
}

/// Checks the single-transmitter rule and channel-conditioned power levels.
pub fn validate_allocation(
    alloc: &PowerAllocation,
    channels: &[ChannelState],
    config: &SystemConfig,
) -> Result<(), AllocationViolation> {
    let n = channels.len();
    if alloc.len() != n {
        return Err(AllocationViolation::LengthMismatch { expected: n, found: alloc.len() });
    }
    let active: Vec<usize> = (0..n).filter(|&i| alloc.powers()[i] != 0.0).collect();
    if active.len() > 1 {
        return Err(AllocationViolation::MultipleTransmitters { users: active });
    }
    for &user in &active {
        let power = alloc.powers()[user];
        let allowed = channel_power(channels[user], config);
        if power != allowed {
            return Err(AllocationViolation::WrongLevel { user, power, channel: channels[user], allowed });
        }
    }
    Ok(())
}

/// Per-slot urgency cost of one user: zero when served or empty, otherwise
/// `(m - (d - 1)) / m` for head deadline `d`, reaching 1 when the head
/// packet is about to be dropped.
pub fn surrogate_cost(deadline: Deadline, head: Option<Deadline>, served: bool) -> f64 {
    match head {
        Some(d) if !served => {
            debug_assert!(d >= 1 && d <= deadline, "head deadline {d} outside [1, {deadline}]");
            f64::from(deadline - d + 1) / f64::from(deadline)
        }
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueueError {
    #[error("remaining deadline {value} outside [1, {deadline}]")]
    OutOfRange { value: Deadline, deadline: Deadline },
    #[error("remaining deadlines must strictly increase from head to tail")]
    NotIncreasing,
}

/// FIFO of per-packet remaining-deadline counters. The head is the oldest
/// packet; counters strictly increase towards the tail.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UserQueue {
    packets: VecDeque<Deadline>,
}

impl UserQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a queue from head-to-tail remaining deadlines, checking them
    /// against the queue's deadline `m`.
    pub fn from_deadlines(
        remaining: impl IntoIterator<Item = Deadline>,
        deadline: Deadline,
    ) -> Result<Self, QueueError> {
        let packets: VecDeque<Deadline> = remaining.into_iter().collect();
        if let Some(&value) = packets.iter().find(|&&d| d < 1 || d > deadline) {
            return Err(QueueError::OutOfRange { value, deadline });
        }
        if packets.iter().zip(packets.iter().skip(1)).any(|(a, b)| a >= b) {
            return Err(QueueError::NotIncreasing);
        }
        Ok(Self { packets })
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn head_deadline(&self) -> Option<Deadline> {
        self.packets.front().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = Deadline> + '_ {
        self.packets.iter().copied()
    }

    /// Advances the queue by one slot: service, drop check, deadline tick,
    /// then arrival admission. Returns whether the head packet was dropped.
    ///
    /// Serving an empty queue is a no-op for the queue.
    pub fn advance(&mut self, served: bool, arrival: bool, deadline: Deadline) -> bool {
        if served {
            self.packets.pop_front();
        }
        let dropped = !served && self.packets.front() == Some(&1);
        if dropped {
            self.packets.pop_front();
        }
        for d in self.packets.iter_mut() {
            *d -= 1;
        }
        if arrival {
            self.packets.push_back(deadline);
        }
        dropped
    }
}

pub fn head_deadline(queue: &UserQueue) -> Option<Deadline> {
    queue.head_deadline()
}

/// Value-returning form of [`UserQueue::advance`].
pub fn advance_queue(queue: &UserQueue, served: bool, arrival: bool, deadline: Deadline) -> (UserQueue, bool) {
    let mut next = queue.clone();
    let dropped = next.advance(served, arrival, deadline);
    (next, dropped)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SlotOutcome {
    pub served: bool,
    pub dropped: bool,
    pub arrival: bool,
    pub surrogate_cost: f64,
}

/// Applies one slot of queue dynamics for all users under an already
/// validated allocation. A user counts as served only when it is allocated
/// power and has a packet.
pub fn apply_slot(
    queues: &mut [UserQueue],
    alloc: &PowerAllocation,
    arrivals: &[bool],
    config: &SystemConfig,
) -> Vec<SlotOutcome> {
    queues
        .iter_mut()
        .zip(&config.users)
        .enumerate()
        .map(|(i, (queue, user))| {
            let served = alloc.is_serving(i) && !queue.is_empty();
            let cost = surrogate_cost(user.deadline, queue.head_deadline(), served);
            let dropped = queue.advance(served, arrivals[i], user.deadline);
            SlotOutcome { served, dropped, arrival: arrivals[i], surrogate_cost: cost }
        })
        .collect()
}
