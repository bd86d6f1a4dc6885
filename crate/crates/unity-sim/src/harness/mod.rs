//! Experiment harness: scenario loading, the run loop around a [`World`],
//! metric aggregation, report emission, and the multi-configuration
//! experiment matrix.

pub mod matrix;
pub mod metrics;
pub mod report;
pub mod scenario;

use std::path::Path;

use thiserror::Error;

use crate::descriptor::{parse_descriptor, Descriptor, DescriptorError};
use crate::kernel::PouchId;
use crate::sim::World;
use crate::time::{SimDuration, SimTime};

use metrics::{build_summary, Summary};
use scenario::{parse_scenario, ScenarioConfig, ScenarioError};

/// Call arrivals begin here; the registration storm precedes them at t=0.
pub const TRAFFIC_START: SimTime = SimTime(10_000_000);

/// Extra virtual time allowed for teardown once arrivals stop.
const DRAIN_GRACE: SimDuration = SimDuration(30_000_000);

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("descriptor {0:?} is neither a built-in name nor a readable file")]
    UnknownDescriptor(String),
    #[error("scenario {0:?} is neither a built-in name nor a readable file")]
    UnknownScenario(String),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Resolve a descriptor reference: a golden name (`NO1`..`NO5`, `DIST`)
/// or a path to a descriptor file.
pub fn load_descriptor_ref(reference: &str) -> Result<Descriptor, HarnessError> {
    if let Some(text) = Descriptor::golden(reference) {
        return Ok(parse_descriptor(text)?);
    }
    let path = Path::new(reference);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        return Ok(parse_descriptor(&text)?);
    }
    Err(HarnessError::UnknownDescriptor(reference.to_string()))
}

/// Resolve a scenario reference: a golden name (`paper`) or a path.
pub fn load_scenario_ref(reference: &str) -> Result<ScenarioConfig, HarnessError> {
    if let Some(text) = ScenarioConfig::golden(reference) {
        return Ok(parse_scenario(text)?);
    }
    let path = Path::new(reference);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        return Ok(parse_scenario(&text)?);
    }
    Err(HarnessError::UnknownScenario(reference.to_string()))
}

/// One experiment: a deployment, a traffic profile, a seed, and an
/// optional fault injection.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub descriptor: Descriptor,
    pub descriptor_name: String,
    pub scenario: ScenarioConfig,
    pub scenario_name: String,
    pub seed: u64,
    /// Kill this pouch at this instant (fault-injection experiments).
    pub kill: Option<(SimTime, PouchId)>,
}

impl RunSpec {
    pub fn new(
        descriptor_name: &str,
        scenario_name: &str,
        seed: u64,
    ) -> Result<Self, HarnessError> {
        Ok(RunSpec {
            descriptor: load_descriptor_ref(descriptor_name)?,
            descriptor_name: descriptor_name.to_string(),
            scenario: load_scenario_ref(scenario_name)?,
            scenario_name: scenario_name.to_string(),
            seed,
            kill: None,
        })
    }
}

/// A finished run: the final world (samples, counters, logs) plus the
/// computed summary.
pub struct RunResult {
    pub world: World,
    pub summary: Summary,
    pub window: (SimTime, SimTime),
    pub drained: bool,
}

/// Drive one experiment start to finish: deploy, registration storm,
/// offered traffic through warmup and measurement, then a drain period
/// until every call has unwound.
pub fn run_experiment(spec: &RunSpec) -> RunResult {
    let plan = spec.scenario.plan(TRAFFIC_START);
    let window = spec.scenario.window(TRAFFIC_START);
    let call_duration = plan.call_duration;
    let mut world = World::new(&spec.descriptor, plan, spec.seed, window);
    world.start_traffic(spec.kill);
    world.run_to(window.1);
    let cap = window.1 + call_duration + CALL_GUARD_MARGIN + DRAIN_GRACE;
    let drained = world.drain(cap);
    let summary = build_summary(
        &world,
        &spec.descriptor_name,
        &spec.scenario_name,
        spec.seed,
        window,
        drained,
    );
    RunResult { world, summary, window, drained }
}

/// Calls admitted right at the window edge may still wait out the setup
/// guard before failing; give the drain room for that.
const CALL_GUARD_MARGIN: SimDuration = SimDuration(10_000_000);
