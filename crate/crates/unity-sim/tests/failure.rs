//! Fault injection: a pouch dies mid-run. Damage must stay confined to the
//! calls that had a session unit there, the selector must stop routing to
//! the corpse, and every conservation law must survive the loss.

use unity_sim::harness::scenario::ScenarioConfig;
use unity_sim::harness::{run_experiment, RunSpec};
use unity_sim::sim::{ArrivalKind, CallOutcome, ScaleKind};
use unity_sim::{parse_descriptor, Descriptor, PouchId, SimTime};

const KILL_AT: SimTime = SimTime(250_000_000);

fn kill_spec(descriptor: &str, pouch: u32) -> RunSpec {
    let scenario = ScenarioConfig {
        call_rate_milli: 24_000,
        call_duration_us: 100_000_000,
        subscribers: 100,
        rereg_rate_milli: 0,
        warmup_us: 120_000_000,
        measurement_us: 240_000_000,
        arrival: ArrivalKind::Deterministic,
        seed: 11,
    };
    RunSpec {
        descriptor: parse_descriptor(Descriptor::golden(descriptor).unwrap()).unwrap(),
        descriptor_name: descriptor.to_string(),
        scenario,
        scenario_name: "kill-probe".to_string(),
        seed: 11,
        kill: Some((KILL_AT, PouchId(pouch))),
    }
}

#[test]
fn dist_kill_confines_damage_to_calls_on_the_dead_pouch() {
    let killed = PouchId(3);
    let result = run_experiment(&kill_spec("DIST", killed.0));
    let world = &result.world;
    assert!(result.drained, "calls left open after drain");

    let dropped: Vec<_> = world
        .calls
        .iter()
        .filter(|c| c.outcome == CallOutcome::Dropped)
        .collect();
    assert!(!dropped.is_empty(), "the kill should catch live calls");
    for c in &dropped {
        assert!(
            c.unit_pouches.contains(&killed),
            "call {} dropped without a unit on the dead pouch",
            c.id
        );
    }

    // Calls the selector placed clear of the dead pouch must be untouched,
    // whether they started before or after the kill.
    for c in &world.calls {
        if !c.unit_pouches.contains(&killed) {
            assert_eq!(
                c.outcome,
                CallOutcome::TornDown,
                "call {} had no unit on the dead pouch yet ended {:?}",
                c.id,
                c.outcome
            );
        }
    }

    // Once the platform declares the pouch down, nothing gets placed there.
    let down_at = world
        .scale_events
        .iter()
        .find(|e| matches!(e.kind, ScaleKind::PouchDown(p) if p == killed))
        .map(|e| e.at)
        .expect("the dead pouch was never declared down");
    assert!(down_at > KILL_AT && down_at < KILL_AT + unity_sim::SimDuration(5_000_000));
    for c in &world.calls {
        if c.arrived >= down_at {
            assert!(
                !c.unit_pouches.contains(&killed),
                "call {} was placed on the dead pouch after detection",
                c.id
            );
        }
    }

    // Conservation under loss: nothing vanishes unaccounted.
    let ct = &world.counters;
    assert!(ct.units_lost > 0);
    assert_eq!(ct.msg_sent, ct.msg_handled + ct.dead_letters);
    assert_eq!(ct.per_call_spawned, ct.per_call_terminated + ct.per_call_lost);
    assert_eq!(world.live_per_call_units(), 0);
}

#[test]
fn pinned_session_pouch_kill_fails_every_subsequent_attempt() {
    // NO3 pins every session (C) unit to one pouch; losing it takes the
    // control plane down with it even though the platform stays up.
    let result = run_experiment(&kill_spec("NO3", 2));
    let world = &result.world;

    let after: Vec<_> = world.calls.iter().filter(|c| c.arrived >= KILL_AT).collect();
    assert!(after.len() > 20, "not enough post-kill attempts to judge");
    for c in &after {
        assert!(
            c.outcome != CallOutcome::TornDown && c.answered.is_none(),
            "call {} arrived after the session pouch died yet reached {:?}",
            c.id,
            c.outcome
        );
    }

    // Calls in flight at the kill die with their session units.
    for c in &world.calls {
        if c.arrived < KILL_AT && c.outcome == CallOutcome::Dropped {
            assert!(c.unit_pouches.contains(&PouchId(2)));
        }
    }

    let ct = &world.counters;
    assert_eq!(ct.msg_sent, ct.msg_handled + ct.dead_letters);
    assert_eq!(ct.per_call_spawned, ct.per_call_terminated + ct.per_call_lost);
    assert_eq!(world.live_per_call_units(), 0);
    assert!(result.drained);
}
