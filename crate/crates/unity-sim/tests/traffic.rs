//! Offered-load behavior: outcome conservation, warmup exclusion, mean
//! setup latency non-decreasing in call rate, and a registration-only run.

use unity_sim::harness::metrics::{latency_samples, mean_us};
use unity_sim::harness::scenario::ScenarioConfig;
use unity_sim::harness::{run_experiment, RunResult, RunSpec};
use unity_sim::sim::ArrivalKind;
use unity_sim::{parse_descriptor, Descriptor};

fn dist_run(call_rate_milli: u64, rereg_rate_milli: u64, subscribers: u32) -> RunResult {
    let scenario = ScenarioConfig {
        call_rate_milli,
        call_duration_us: 200_000_000,
        subscribers,
        rereg_rate_milli,
        warmup_us: 240_000_000,
        measurement_us: 300_000_000,
        arrival: ArrivalKind::Deterministic,
        seed: 5,
    };
    let spec = RunSpec {
        descriptor: parse_descriptor(Descriptor::golden("DIST").unwrap()).unwrap(),
        descriptor_name: "DIST".to_string(),
        scenario,
        scenario_name: "load-sweep".to_string(),
        seed: 5,
        kill: None,
    };
    run_experiment(&spec)
}

#[test]
fn setup_latency_is_non_decreasing_in_offered_rate() {
    let mut means = Vec::new();
    for rate_per_min in [10u64, 20, 30, 60] {
        let result = dist_run(rate_per_min * 1000, 20_000, 200);
        assert!(result.drained, "rate {rate_per_min}/min failed to drain");
        let c = &result.world.counters;

        // Outcome conservation, per run.
        assert_eq!(
            c.attempted,
            c.established + c.failed + c.abandoned,
            "outcome conservation at {rate_per_min}/min"
        );
        assert_eq!(c.failed, 0, "clean run must not fail calls");

        // Warmup exclusion: nothing sampled before the window opens.
        let open = result.window.0;
        assert!(result.world.samples.cpu.iter().all(|s| s.at >= open));

        let samples = latency_samples(&result.world, result.window);
        assert!(
            samples.len() as u64 >= rate_per_min * 4,
            "window too thin at {rate_per_min}/min"
        );
        means.push(mean_us(&samples).unwrap());
    }

    for pair in means.windows(2) {
        assert!(
            pair[1] >= pair[0],
            "mean setup latency decreased under added load: {means:?}"
        );
    }
    assert!(
        means[3] > means[0],
        "sextupling the rate must cost something: {means:?}"
    );
}

#[test]
fn registration_only_run_produces_no_calls() {
    let result = dist_run(0, 12_000, 50);
    assert!(result.drained);
    let c = &result.world.counters;
    assert_eq!(c.attempted, 0);
    assert_eq!(c.established, 0);
    assert!(
        c.registrations > 50,
        "initial storm plus re-registrations, got {}",
        c.registrations
    );
    assert!(latency_samples(&result.world, result.window).is_empty());
    assert!(result.world.samples.media.is_empty());
    assert_eq!(c.msg_sent, c.msg_handled + c.dead_letters);
}
