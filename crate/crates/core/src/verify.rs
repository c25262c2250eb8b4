//! On-demand self-checks: oracle equivalence of the DPA decision, soundness
//! of skipping empty queues, per-slot conservation and budget inequality in
//! long runs, the scripted three-slot replay, and offline drop bounds.
//!
//! Random cases come from [`SlotRng`], so every check is reproducible from
//! its seed.

use std::fmt;

use crate::experiment::{replay, Preset};
use crate::model::{ChannelState, SystemConfig, UserParams, UserQueue};
use crate::oracle::{bruteforce_slot_min, objective_table, offline_optimal_drops, policy_drops, TinyInstance};
use crate::policy::{dpa_decide_with, Dpa, Edf, Policy, SlotView, TieRule, VirtualQueues};
use crate::sim::{run_observed, ForcedTraces, LogStride, SlotRng, BUDGET_CHECK_TOLERANCE};

fn index(rng: &mut SlotRng, n: usize) -> usize {
    ((rng.uniform() * n as f64) as usize).min(n - 1)
}

/// A random but internally consistent single-slot situation.
#[derive(Debug, Clone)]
pub struct RandomSlotCase {
    pub config: SystemConfig,
    pub channels: Vec<ChannelState>,
    pub queues: Vec<UserQueue>,
    pub backlog: VirtualQueues,
}

const BUDGET_GRID: [f64; 6] = [0.0, 0.5, 0.6, 1.0, 1.5, 2.0];

impl RandomSlotCase {
    /// `1..=max_users` users, `V` in {1, 60}, backlogs in [0, 100]. Backlogs
    /// and budgets are often drawn from coarse grids so exact ties occur.
    pub fn generate(rng: &mut SlotRng, max_users: usize) -> Self {
        let n = 1 + index(rng, max_users);
        let penalty_weight = if rng.bernoulli(0.5) { 1.0 } else { 60.0 };
        let users: Vec<UserParams> = (0..n)
            .map(|_| UserParams {
                arrival_prob: 0.5,
                deadline: 1 + index(rng, 6) as u32,
                power_budget: if rng.bernoulli(0.5) { BUDGET_GRID[index(rng, BUDGET_GRID.len())] } else { 2.0 * rng.uniform() },
                bad_channel_prob: 0.5,
            })
            .collect();
        let channels = (0..n).map(|_| if rng.bernoulli(0.5) { ChannelState::Bad } else { ChannelState::Good }).collect();
        let queues = users
            .iter()
            .map(|u| {
                let packets: Vec<u32> = (1..=u.deadline).filter(|_| rng.bernoulli(0.5)).collect();
                UserQueue::from_deadlines(packets, u.deadline).expect("sorted subset of 1..=m")
            })
            .collect();
        let backlog = (0..n)
            .map(|_| {
                let x = 100.0 * rng.uniform();
                match index(rng, 6) {
                    0 => 0.0,
                    1 | 2 => x.floor(),
                    _ => x,
                }
            })
            .collect();
        let config = SystemConfig { p_low: 1.0, p_high: 2.0, users, penalty_weight, horizon: 1, seed: 0 };
        Self { config, channels, queues, backlog: VirtualQueues::from_backlogs(backlog) }
    }

    pub fn view(&self) -> SlotView<'_> {
        SlotView::from_queues(0, self.channels.clone(), &self.queues, &self.config)
    }
}

/// Random fully scripted instance: budgets uniform in `[0, p_high]`,
/// deadlines in 1..=4, Bernoulli(0.5) arrivals, Bad channels w.p. 0.6,
/// empty initial queues, `V = 60`.
pub fn random_tiny_instance(rng: &mut SlotRng, n_users: usize, horizon: u64) -> TinyInstance {
    let users = (0..n_users)
        .map(|_| UserParams {
            arrival_prob: 0.5,
            deadline: 1 + index(rng, 4) as u32,
            power_budget: 2.0 * rng.uniform(),
            bad_channel_prob: 0.6,
        })
        .collect();
    let config = SystemConfig { p_low: 1.0, p_high: 2.0, users, penalty_weight: 60.0, horizon, seed: 0 };
    let channels = (0..horizon)
        .map(|_| (0..n_users).map(|_| if rng.bernoulli(0.6) { ChannelState::Bad } else { ChannelState::Good }).collect())
        .collect();
    let arrivals = (0..horizon).map(|_| (0..n_users).map(|_| rng.bernoulli(0.5)).collect()).collect();
    TinyInstance { config, traces: ForcedTraces { channels, arrivals, initial_backlog: Vec::new() } }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for check in &self.checks {
            writeln!(f, "{check}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub views: usize,
    pub max_users: usize,
    pub seed: u64,
    /// Tie rule handed to DPA; flipping it is the negative control.
    pub tie_rule: TieRule,
    pub horizon: u64,
    pub tiny_instances: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { views: 10_000, max_users: 4, seed: 0, tie_rule: TieRule::FirstMinimum, horizon: 20_000, tiny_instances: 200 }
    }
}

/// DPA's decision against full enumeration: bit-identical objective and
/// identical allocation on every random view.
pub fn check_oracle_equivalence(views: usize, max_users: usize, seed: u64, tie_rule: TieRule) -> CheckResult {
    let mut rng = SlotRng::from_seed(seed);
    let mut mismatches = 0usize;
    let mut first = None;
    for k in 0..views {
        let case = RandomSlotCase::generate(&mut rng, max_users);
        let view = case.view();
        let decision = dpa_decide_with(&view, &case.backlog, tie_rule);
        let (alloc, value) = bruteforce_slot_min(&view, &case.backlog);
        let same_value = decision.objective_value.map(f64::to_bits) == Some(value.to_bits());
        if !same_value || decision.allocation != alloc {
            mismatches += 1;
            first.get_or_insert_with(|| {
                format!(
                    "view {k}: dpa {} ({:?}) vs oracle {alloc} ({value})",
                    decision.allocation, decision.objective_value
                )
            });
        }
    }
    CheckResult {
        name: "oracle equivalence",
        passed: mismatches == 0,
        detail: match first {
            None => format!("{views} views, N <= {max_users}, all identical"),
            Some(first) => format!("{mismatches} of {views} views differ; first: {first}"),
        },
    }
}

/// Serving an empty queue never strictly beats idling.
pub fn check_empty_queue_candidates(views: usize, max_users: usize, seed: u64) -> CheckResult {
    let mut rng = SlotRng::from_seed(seed ^ 0x5eed);
    let mut violations = 0usize;
    for _ in 0..views {
        let case = RandomSlotCase::generate(&mut rng, max_users);
        let view = case.view();
        let table = objective_table(&view, &case.backlog);
        let idle = table[0].1;
        violations += table[1..]
            .iter()
            .enumerate()
            .filter(|(i, (_, value))| view.queue_lengths[*i] == 0 && *value < idle)
            .count();
    }
    CheckResult {
        name: "empty-queue candidates",
        passed: violations == 0,
        detail: format!("{violations} strict improvements over idle in {views} views"),
    }
}

fn scenario(horizon: u64, seed: u64) -> SystemConfig {
    let user = UserParams { arrival_prob: 0.4, deadline: 5, power_budget: 0.6, bad_channel_prob: 0.6 };
    let mut config = SystemConfig::uniform(2, user, 1.0, 2.0, 60.0);
    config.horizon = horizon;
    config.seed = seed;
    config
}

/// Conservation and the budget inequality at every slot, re-derived from
/// the per-slot records independently of the engine's own checks.
pub fn check_run_invariants(policy: &mut dyn Policy, horizon: u64, seed: u64) -> CheckResult {
    let config = scenario(horizon, seed);
    let n = config.n_users();
    let mut arrivals = vec![0u64; n];
    let mut served = vec![0u64; n];
    let mut dropped = vec![0u64; n];
    let mut power = vec![0.0f64; n];
    let mut failures = Vec::new();
    let outcome = run_observed(&config, policy, None, LogStride::Auto, |rec| {
        let t = (rec.slot + 1) as f64;
        for i in 0..n {
            let o = rec.outcomes[i];
            arrivals[i] += u64::from(o.arrival);
            served[i] += u64::from(o.served);
            dropped[i] += u64::from(o.dropped);
            power[i] += rec.allocation.powers()[i];
            if arrivals[i] != served[i] + dropped[i] + rec.queue_lengths[i] as u64 && failures.len() < 3 {
                failures.push(format!("conservation at slot {} user {}", rec.slot, i + 1));
            }
            let gap = power[i] / t - config.users[i].power_budget - rec.backlog[i] / t;
            if gap > BUDGET_CHECK_TOLERANCE && failures.len() < 3 {
                failures.push(format!("budget inequality at slot {} user {}: gap {gap}", rec.slot, i + 1));
            }
        }
    });
    let name = "run invariants";
    match outcome {
        Err(e) => CheckResult { name, passed: false, detail: format!("{}: {e}", policy.name()) },
        Ok(_) if !failures.is_empty() => {
            CheckResult { name, passed: false, detail: format!("{}: {}", policy.name(), failures.join("; ")) }
        }
        Ok(_) => CheckResult { name, passed: true, detail: format!("{}: {horizon} slots, seed {seed}", policy.name()) },
    }
}

/// The scripted replay: drops 1 and 0, averages 1/3 and 1 over all slots,
/// 1 and 1.5 per transmitting slot.
pub fn check_replay() -> CheckResult {
    let expected = [(1u64, 1.0 / 3.0, 1.0), (0, 1.0, 1.5)];
    let mut details = Vec::new();
    let mut passed = true;
    for (spec, (drops, avg, per_tx)) in Preset::Table1.specs().iter().zip(expected) {
        match replay(spec) {
            Ok(result) => {
                let u = &result.users[0];
                let ok = u.counters.dropped == drops
                    && (u.averages.avg_power - avg).abs() < 1e-12
                    && (u.power_per_transmission - per_tx).abs() < 1e-12;
                passed &= ok;
                details.push(format!(
                    "drops {} avg {:.4} per-tx {}",
                    u.counters.dropped, u.averages.avg_power, u.power_per_transmission
                ));
            }
            Err(e) => {
                passed = false;
                details.push(e.to_string());
            }
        }
    }
    CheckResult { name: "scripted replay", passed, detail: details.join(" | ") }
}

/// Offline drop bounds that hold for every policy: the unconstrained
/// offline optimum bounds DPA from below, and relaxing the budget never
/// increases the optimum.
pub fn check_offline_bounds(instances: usize, seed: u64) -> CheckResult {
    let mut rng = SlotRng::from_seed(seed ^ 0x0ff1);
    let mut failures = Vec::new();
    for k in 0..instances {
        let inst = random_tiny_instance(&mut rng, 2, 6);
        let relaxed = offline_optimal_drops(&inst, false).map(|o| o.min_drops);
        let constrained = offline_optimal_drops(&inst, true).map(|o| o.min_drops);
        let dpa = policy_drops(&inst, &mut Dpa::new());
        match (relaxed, constrained, dpa) {
            (Ok(r), Ok(c), Ok(d)) if r <= c && r <= d => {}
            (r, c, d) => failures.push(format!("instance {k}: relaxed {r:?} constrained {c:?} dpa {d:?}")),
        }
    }
    CheckResult {
        name: "offline bounds",
        passed: failures.is_empty(),
        detail: failures.first().cloned().unwrap_or_else(|| format!("{instances} instances, N=2, H=6")),
    }
}

pub fn verify(options: &VerifyOptions) -> Report {
    let mut checks = vec![
        check_oracle_equivalence(options.views, options.max_users, options.seed, options.tie_rule),
        check_empty_queue_candidates(options.views, options.max_users, options.seed),
    ];
    let mut dpa = Dpa { tie_rule: options.tie_rule };
    checks.push(check_run_invariants(&mut dpa, options.horizon, options.seed));
    checks.push(check_run_invariants(&mut Edf, options.horizon, options.seed));
    checks.push(check_replay());
    checks.push(check_offline_bounds(options.tiny_instances, options.seed));
    Report { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_checks_pass_quickly() {
        let options = VerifyOptions { views: 2_000, horizon: 2_000, tiny_instances: 20, ..Default::default() };
        let report = verify(&options);
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn flipped_tie_rule_is_caught() {
        let check = check_oracle_equivalence(2_000, 4, 0, TieRule::LastMinimum);
        assert!(!check.passed, "{check}");
    }

    #[test]
    fn random_cases_are_consistent() {
        let mut rng = SlotRng::from_seed(3);
        for _ in 0..500 {
            let case = RandomSlotCase::generate(&mut rng, 4);
            case.config.validate().unwrap();
            let view = case.view();
            assert!((1..=4).contains(&view.n_users()));
            for (h, len) in view.head_deadlines.iter().zip(&view.queue_lengths) {
                assert_eq!(h.is_some(), *len > 0);
            }
            assert!(case.backlog.backlogs().iter().all(|x| (0.0..=100.0).contains(x)));
        }
    }
}
