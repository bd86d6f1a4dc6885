//! End-to-end call flow through a deployed world: registration, INVITE
//! setup across the full unit chain, media, and teardown.

use unity_sim::harness::scenario::ScenarioConfig;
use unity_sim::harness::{run_experiment, RunSpec, TRAFFIC_START};
use unity_sim::sim::{ArrivalKind, CallOutcome, World};
use unity_sim::{parse_descriptor, Descriptor, SimTime, UaId};

fn quiet_scenario(subscribers: u32) -> ScenarioConfig {
    ScenarioConfig {
        call_rate_milli: 0,
        call_duration_us: 20_000_000,
        subscribers,
        rereg_rate_milli: 0,
        warmup_us: 1_000_000,
        measurement_us: 60_000_000,
        arrival: ArrivalKind::Deterministic,
        seed: 7,
    }
}

/// World with everyone registered and no background traffic.
fn settled_world(descriptor: &str, subscribers: u32) -> World {
    let desc = parse_descriptor(Descriptor::golden(descriptor).unwrap()).unwrap();
    let scenario = quiet_scenario(subscribers);
    let plan = scenario.plan(TRAFFIC_START);
    let window = scenario.window(TRAFFIC_START);
    let mut world = World::new(&desc, plan, scenario.seed, window);
    world.start_traffic(None);
    world.run_to(SimTime(5_000_000));
    world
}

#[test]
fn two_party_call_establishes_and_tears_down() {
    let mut world = settled_world("DIST", 4);
    assert_eq!(world.counters.registrations, 4);

    let now = world.kernel.now();
    let call = world.start_call(now, UaId(0), UaId(1));
    world.run_to(SimTime(60_000_000));

    let c = &world.calls[call as usize];
    assert_eq!(c.outcome, CallOutcome::TornDown, "outcome: {:?}", c.outcome);
    assert!(c.t_rx.is_some() && c.t_tx.is_some());
    let latency = (c.t_tx.unwrap() - c.t_rx.unwrap()).0;
    assert!(latency > 0 && latency < 1_000_000, "setup took {latency}us");
    assert!(c.answered.is_some());

    assert_eq!(world.counters.attempted, 1);
    assert_eq!(world.counters.established, 1);
    assert_eq!(world.counters.torn_down, 1);
    assert_eq!(world.counters.failed, 0);
    assert_eq!(world.open_calls(), 0);

    // Every per-call unit spawned must have been torn down again.
    assert!(world.counters.per_call_spawned > 0);
    assert_eq!(
        world.counters.per_call_spawned,
        world.counters.per_call_terminated
    );
    assert_eq!(world.live_per_call_units(), 0);

    // Nothing may vanish without being handled in a fault-free run.
    assert_eq!(world.counters.dead_letters, 0);
    assert_eq!(world.counters.msg_sent, world.counters.msg_handled);

    // The mixer clocked 20 ms frames while the call was up.
    assert!(!world.samples.media.is_empty(), "no media frames sampled");
}

#[test]
fn calls_before_registration_are_rejected() {
    let desc = parse_descriptor(Descriptor::golden("DIST").unwrap()).unwrap();
    let scenario = quiet_scenario(4);
    let plan = scenario.plan(TRAFFIC_START);
    let window = scenario.window(TRAFFIC_START);
    let mut world = World::new(&desc, plan, scenario.seed, window);
    // No registration storm: the edge never bound any identity.
    let call = world.start_call(SimTime::ZERO, UaId(0), UaId(1));
    world.run_to(SimTime(10_000_000));
    assert_eq!(world.calls[call as usize].outcome, CallOutcome::Failed(403));
    assert_eq!(world.counters.failed, 1);
    assert_eq!(world.open_calls(), 0);
}

#[test]
fn concurrent_calls_share_the_fabric_without_interference() {
    let mut world = settled_world("DIST", 8);
    let now = world.kernel.now();
    for i in 0..4u32 {
        world.start_call(now, UaId(2 * i), UaId(2 * i + 1));
    }
    world.run_to(SimTime(60_000_000));
    assert_eq!(world.counters.attempted, 4);
    assert_eq!(world.counters.established, 4);
    assert_eq!(world.counters.torn_down, 4);
    assert_eq!(world.live_per_call_units(), 0);
    assert_eq!(world.counters.msg_sent, world.counters.msg_handled);
}

#[test]
fn zero_inter_pouch_cost_keeps_the_message_sequence() {
    // The same deployment with free inter-pouch links must exchange
    // exactly as many messages, only faster: placement never changes
    // behavior, just timing.
    let base = parse_descriptor(Descriptor::golden("DIST").unwrap()).unwrap();
    let mut zero = Descriptor::golden("DIST").unwrap().to_string();
    zero.push_str("\n[network]\ninter_ms = 0\n");
    let zero = parse_descriptor(&zero).unwrap();

    let scenario = ScenarioConfig {
        call_rate_milli: 60_000,
        call_duration_us: 5_000_000,
        subscribers: 10,
        rereg_rate_milli: 0,
        warmup_us: 5_000_000,
        measurement_us: 30_000_000,
        arrival: ArrivalKind::Deterministic,
        seed: 3,
    };
    let run = |desc: &Descriptor| {
        let plan = scenario.plan(TRAFFIC_START);
        let window = scenario.window(TRAFFIC_START);
        let mut world = World::new(desc, plan, scenario.seed, window);
        world.start_traffic(None);
        world.run_to(SimTime(70_000_000));
        world.drain(SimTime(120_000_000));
        world
    };
    let a = run(&base);
    let b = run(&zero);

    assert_eq!(a.counters.msg_sent, b.counters.msg_sent);
    assert_eq!(a.counters.msg_handled, b.counters.msg_handled);
    assert_eq!(a.counters.units_spawned, b.counters.units_spawned);
    assert_eq!(a.counters.established, b.counters.established);
    assert!(a.counters.established > 0);

    // Same calls, same pouches, different clock.
    for (ca, cb) in a.calls.iter().zip(b.calls.iter()) {
        assert_eq!(ca.outcome, cb.outcome);
        assert_eq!(ca.c_orig.map(|u| u.pouch), cb.c_orig.map(|u| u.pouch));
        assert_eq!(ca.c_term.map(|u| u.pouch), cb.c_term.map(|u| u.pouch));
    }
    let lat = |w: &World, i: usize| {
        let c = &w.calls[i];
        (c.t_tx.unwrap() - c.t_rx.unwrap()).0
    };
    assert!(
        lat(&a, 0) > lat(&b, 0),
        "inter-pouch hops must cost time in the base deployment"
    );
}

#[test]
fn identical_seeds_reproduce_the_run_bit_for_bit() {
    let spec = RunSpec {
        descriptor: parse_descriptor(Descriptor::golden("DIST").unwrap()).unwrap(),
        descriptor_name: "DIST".to_string(),
        scenario: ScenarioConfig {
            call_rate_milli: 30_000,
            call_duration_us: 10_000_000,
            subscribers: 20,
            rereg_rate_milli: 10_000,
            warmup_us: 10_000_000,
            measurement_us: 30_000_000,
            arrival: ArrivalKind::Exponential,
            seed: 42,
        },
        scenario_name: "inline".to_string(),
        seed: 42,
        kill: None,
    };
    let x = run_experiment(&spec);
    let y = run_experiment(&spec);
    use unity_sim::harness::report::{calls_csv, cpu_csv, media_csv, summary_json};
    assert_eq!(calls_csv(&x), calls_csv(&y));
    assert_eq!(cpu_csv(&x), cpu_csv(&y));
    assert_eq!(media_csv(&x), media_csv(&y));
    assert_eq!(summary_json(&x), summary_json(&y));
    assert!(x.drained && y.drained);
}
