use proptest::prelude::*;

use dpasim::config_file::parse_spec;
use dpasim::model::{advance_queue, ChannelState, PowerAllocation, SystemConfig, UserParams, UserQueue};
use dpasim::policy::{dpa_decide, edf_decide, Dpa, Edf, FixedTrace, Policy, SlotView, VirtualQueues};
use dpasim::sim::{run, run_observed, LogStride, BUDGET_CHECK_TOLERANCE};

fn user_params() -> impl Strategy<Value = UserParams> {
    (0.0..=1.0f64, 1u32..=6, 0.0..=2.0f64, 0.0..=1.0f64).prop_map(|(arrival_prob, deadline, power_budget, bad)| {
        UserParams { arrival_prob, deadline, power_budget, bad_channel_prob: bad }
    })
}

fn system_config() -> impl Strategy<Value = SystemConfig> {
    (prop::collection::vec(user_params(), 1..=4), 0.1..5.0f64, any::<u64>()).prop_map(|(users, v, seed)| {
        SystemConfig { p_low: 1.0, p_high: 2.0, users, penalty_weight: v, horizon: 300, seed }
    })
}

fn queue(deadline: u32) -> impl Strategy<Value = UserQueue> {
    prop::collection::btree_set(1..=deadline, 0..=deadline as usize)
        .prop_map(move |set| UserQueue::from_deadlines(set, deadline).unwrap())
}

fn channel() -> impl Strategy<Value = ChannelState> {
    prop_oneof![Just(ChannelState::Bad), Just(ChannelState::Good)]
}

fn policy_by_index(k: usize, horizon: u64, n: usize) -> Box<dyn Policy> {
    match k {
        0 => Box::new(Dpa::new()),
        1 => Box::new(Edf),
        _ => Box::new(FixedTrace::new(vec![PowerAllocation::idle(n); horizon as usize])),
    }
}

proptest! {
    #[test]
    fn queue_advance_keeps_ordering_and_bounds(
        (m, q) in (1u32..=8).prop_flat_map(|m| (Just(m), queue(m))),
        served in any::<bool>(),
        arrival in any::<bool>(),
    ) {
        let (next, dropped) = advance_queue(&q, served, arrival, m);
        let d: Vec<u32> = next.iter().collect();
        prop_assert!(d.iter().all(|&x| x >= 1 && x <= m));
        prop_assert!(d.windows(2).all(|w| w[0] < w[1]));
        let diff = next.len() as i64 - q.len() as i64;
        prop_assert!((-1..=1).contains(&diff));
        // A drop happens only to an unserved head packet with one slot left.
        prop_assert_eq!(dropped, !served && q.head_deadline() == Some(1));
        if arrival {
            prop_assert_eq!(d.last().copied(), Some(m));
        }
    }

    #[test]
    fn simulation_invariants_hold_every_slot(config in system_config(), k in 0usize..3) {
        let n = config.n_users();
        let mut policy = policy_by_index(k, config.horizon, n);
        let mut totals = vec![(0u64, 0u64, 0u64); n];
        let mut power = vec![0.0f64; n];
        let mut prev_avg = vec![0.0f64; n];
        let mut failures = Vec::new();
        run_observed(&config, policy.as_mut(), None, LogStride::Every(1), |rec| {
            let t = (rec.slot + 1) as f64;
            if rec.allocation.powers().iter().filter(|&&p| p != 0.0).count() > 1 {
                failures.push(format!("slot {}: two transmitters", rec.slot));
            }
            for i in 0..n {
                let o = &rec.outcomes[i];
                totals[i].0 += u64::from(o.arrival);
                totals[i].1 += u64::from(o.served);
                totals[i].2 += u64::from(o.dropped);
                if totals[i].0 != totals[i].1 + totals[i].2 + rec.queue_lengths[i] as u64 {
                    failures.push(format!("slot {}: conservation for user {i}", rec.slot));
                }
                if !(0.0..=1.0).contains(&o.surrogate_cost) || rec.backlog[i] < 0.0 {
                    failures.push(format!("slot {}: cost or backlog out of range", rec.slot));
                }
                if rec.head_deadlines[i].is_some_and(|d| d < 1) {
                    failures.push(format!("slot {}: deadline below 1", rec.slot));
                }
                let p = rec.allocation.powers()[i];
                power[i] += p;
                let gamma = config.users[i].power_budget;
                if power[i] / t - gamma > rec.backlog[i] / t + BUDGET_CHECK_TOLERANCE {
                    failures.push(format!("slot {}: budget inequality for user {i}", rec.slot));
                }
                let avg = rec.averages[i].avg_power;
                let recurrence = prev_avg[i] + (p - prev_avg[i]) / t;
                if (avg - recurrence).abs() > 1e-12 {
                    failures.push(format!("slot {}: running average {avg} vs {recurrence}", rec.slot));
                }
                prev_avg[i] = avg;
            }
        }).unwrap();
        prop_assert!(failures.is_empty(), "{:?}", failures);
    }

    #[test]
    fn runs_are_deterministic(config in system_config(), k in 0usize..2) {
        let n = config.n_users();
        let a = run(&config, policy_by_index(k, config.horizon, n).as_mut(), None, LogStride::Every(7)).unwrap();
        let b = run(&config, policy_by_index(k, config.horizon, n).as_mut(), None, LogStride::Every(7)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn edf_ignores_weights_backlogs_and_budgets(
        (config, channels, queues) in system_config().prop_flat_map(|c| {
            let n = c.n_users();
            let queues: Vec<_> = c.users.iter().map(|u| queue(u.deadline)).collect();
            (Just(c), prop::collection::vec(channel(), n), queues)
        }),
        v in 0.1..100.0f64,
        xs in prop::collection::vec(0.0..100.0f64, 4),
        gammas in prop::collection::vec(0.0..=2.0f64, 4),
    ) {
        let view = SlotView::from_queues(0, channels.clone(), &queues, &config);
        let base = edf_decide(&view).allocation;
        let mut other = config.clone();
        other.penalty_weight = v;
        for (u, g) in other.users.iter_mut().zip(&gammas) {
            u.power_budget = *g;
        }
        let view = SlotView::from_queues(0, channels, &queues, &other);
        let mut edf = Edf;
        let backlog = VirtualQueues::from_backlogs(xs[..config.n_users()].to_vec());
        prop_assert_eq!(edf.decide(&view, &backlog).unwrap().allocation, base);
    }

    // With every quantity dyadic the objective is computed exactly, so a
    // budget change shifts all candidates by the same constant.
    #[test]
    fn dpa_choice_is_invariant_to_constant_shifts(
        n in 1usize..=4,
        deadline_exp in 0u32..=2,
        v in 1u32..=100,
        seed in any::<u64>(),
        gammas_a in prop::collection::vec(0u32..=8, 4),
        gammas_b in prop::collection::vec(0u32..=8, 4),
        half_xs in prop::collection::vec(0u32..=200, 4),
        channels in prop::collection::vec(channel(), 4),
        heads in prop::collection::vec(prop::option::of(0u32..4), 4),
    ) {
        let m = 1u32 << deadline_exp;
        let user = UserParams { arrival_prob: 0.5, deadline: m, power_budget: 0.0, bad_channel_prob: 0.5 };
        let mut config = SystemConfig::uniform(n, user, 1.0, 2.0, f64::from(v));
        config.seed = seed;
        let queues: Vec<UserQueue> = heads[..n]
            .iter()
            .map(|h| match h {
                Some(d) => UserQueue::from_deadlines([d % m + 1], m).unwrap(),
                None => UserQueue::new(),
            })
            .collect();
        let backlog = VirtualQueues::from_backlogs(half_xs[..n].iter().map(|&x| f64::from(x) / 2.0).collect());
        let decide = |gammas: &[u32]| {
            let mut c = config.clone();
            for (u, &g) in c.users.iter_mut().zip(gammas) {
                u.power_budget = f64::from(g) / 4.0;
            }
            let view = SlotView::from_queues(0, channels[..n].to_vec(), &queues, &c);
            dpa_decide(&view, &backlog).allocation
        };
        prop_assert_eq!(decide(&gammas_a), decide(&gammas_b));
    }

    #[test]
    fn spec_render_round_trips(
        config in system_config(),
        policy in prop_oneof![Just("dpa"), Just("edf")],
        seeds in prop::collection::btree_set(0u64..1000, 1..5),
        sweep_v in prop::option::of(prop::collection::vec(0.5..100.0f64, 1..4)),
        sweep_lambda in prop::option::of(prop::collection::vec(0.0..=1.0f64, 1..4)),
        stride in prop::option::of(1u64..50),
    ) {
        let list = |v: &[String]| format!("[{}]", v.join(", "));
        let per_user = |f: &dyn Fn(&UserParams) -> String| list(&config.users.iter().map(f).collect::<Vec<_>>());
        let mut text = format!(
            "policy = {policy}\nn_users = {}\nV = {}\nhorizon = 50\nseeds = {}\n\
             arrival_prob = {}\ndeadline = {}\npower_budget = {}\nbad_channel_prob = {}\n",
            config.n_users(),
            config.penalty_weight,
            list(&seeds.iter().map(u64::to_string).collect::<Vec<_>>()),
            per_user(&|u| u.arrival_prob.to_string()),
            per_user(&|u| u.deadline.to_string()),
            per_user(&|u| u.power_budget.to_string()),
            per_user(&|u| u.bad_channel_prob.to_string()),
        );
        if let Some(vs) = &sweep_v {
            text += &format!("sweep.V = {}\n", list(&vs.iter().map(f64::to_string).collect::<Vec<_>>()));
        }
        if let Some(ls) = &sweep_lambda {
            text += &format!("sweep.arrival_prob = {}\n", list(&ls.iter().map(f64::to_string).collect::<Vec<_>>()));
        }
        if let Some(s) = stride {
            text += &format!("stride = {s}\n");
        }
        let spec = parse_spec(&text).unwrap();
        prop_assert_eq!(spec.base.users.clone(), config.users.clone());
        let again = parse_spec(&spec.render()).unwrap();
        prop_assert_eq!(&again, &spec);
        let expected_points = sweep_v.map_or(1, |v| v.len()) * sweep_lambda.map_or(1, |l| l.len());
        prop_assert_eq!(spec.sweep_points().len(), expected_points);
    }

    #[test]
    fn parser_never_panics(text in "[a-zA-Z_.=\\[\\],0-9 #\n/:-]{0,200}") {
        let _ = parse_spec(&text);
    }
}
