//! Decodes bytes into a single-slot view and checks DPA against full
//! enumeration.

#![no_main]
use libfuzzer_sys::fuzz_target;

use dpasim::model::{ChannelState, SystemConfig, UserParams, UserQueue};
use dpasim::oracle::bruteforce_slot_min;
use dpasim::policy::{dpa_decide, SlotView, VirtualQueues};

fuzz_target!(|data: &[u8]| {
    let mut bytes = data.iter().copied();
    let mut next = || bytes.next().unwrap_or(0);
    let n = usize::from(next() % 4) + 1;
    let v = f64::from(next()) + 1.0;
    let mut users = Vec::new();
    let mut channels = Vec::new();
    let mut queues = Vec::new();
    let mut backlog = Vec::new();
    for _ in 0..n {
        let deadline = u32::from(next() % 8) + 1;
        let power_budget = f64::from(next()) / 127.5;
        users.push(UserParams { arrival_prob: 0.5, deadline, power_budget, bad_channel_prob: 0.5 });
        let flags = next();
        channels.push(if flags & 1 == 0 { ChannelState::Bad } else { ChannelState::Good });
        let mask = next();
        queues.push(UserQueue::from_deadlines((1..=deadline).filter(|d| mask & (1 << (d - 1)) != 0), deadline).unwrap());
        backlog.push(f64::from(u16::from_le_bytes([next(), next()])) / 64.0);
    }
    let config = SystemConfig { p_low: 1.0, p_high: 2.0, users, penalty_weight: v, horizon: 1, seed: 0 };
    let view = SlotView::from_queues(0, channels, &queues, &config);
    let backlog = VirtualQueues::from_backlogs(backlog);
    let decision = dpa_decide(&view, &backlog);
    let (alloc, value) = bruteforce_slot_min(&view, &backlog);
    assert_eq!(decision.allocation, alloc);
    assert_eq!(decision.objective_value.map(f64::to_bits), Some(value.to_bits()));
});
