//! `unity` — run deployment experiments against the simulated telephony
//! core and emit CSV/JSON reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use unity_sim::harness::matrix::{run_experiment_matrix, ExperimentConfig};
use unity_sim::harness::report::write_reports;
use unity_sim::harness::{load_descriptor_ref, run_experiment, RunSpec};
use unity_sim::{PouchId, SimTime};

#[derive(Parser)]
#[command(
    name = "unity",
    version,
    about = "Deterministic deployment experiments for a unit-based telephony core"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write its report set.
    Run {
        /// Built-in name (NO1..NO5, DIST) or path to a descriptor file.
        #[arg(long)]
        descriptor: String,
        /// Built-in name (paper) or path to a scenario file.
        #[arg(long, default_value = "paper")]
        scenario: String,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        /// Report directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Fault injection: kill a pouch at this virtual time.
        #[arg(long, requires = "kill_pouch")]
        kill_at_ms: Option<u64>,
        /// Fault injection: which pouch to kill.
        #[arg(long, requires = "kill_at_ms")]
        kill_pouch: Option<u32>,
    },
    /// Run several configurations with the same scenario and seed and
    /// rank them.
    Matrix {
        /// Comma-separated descriptor references.
        #[arg(long, value_delimiter = ',', default_value = "NO1,NO2,NO3,NO4,NO5,DIST")]
        configs: Vec<String>,
        #[arg(long, default_value = "paper")]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Independent replicas per configuration (replica i uses seed+i).
        #[arg(long, default_value_t = 1)]
        replicas: u32,
    },
    /// Parse a descriptor and check its invariants.
    Validate {
        #[arg(long)]
        descriptor: String,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn main() -> ExitCode {
    // Bad flags are configuration errors (exit 1), not runtime failures;
    // help/version are not errors at all.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.cmd {
        Cmd::Run { descriptor, scenario, seed, out, kill_at_ms, kill_pouch } => {
            run_cmd(&descriptor, &scenario, seed, &out, kill_at_ms.zip(kill_pouch))
        }
        Cmd::Matrix { configs, scenario, seed, out, replicas } => {
            matrix_cmd(&configs, &scenario, seed, &out, replicas)
        }
        Cmd::Validate { descriptor } => match load_descriptor_ref(&descriptor) {
            Ok(desc) => {
                let mode = if desc.mode.is_pinned() { "pinned" } else { "distributed" };
                println!(
                    "ok: {} pool(s), {} pouches, mode {}",
                    desc.pools.len(),
                    desc.total_initial_pouches(),
                    mode,
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("invalid descriptor: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
    }
}

fn run_cmd(
    descriptor: &str,
    scenario: &str,
    seed: Option<u64>,
    out: &std::path::Path,
    kill: Option<(u64, u32)>,
) -> ExitCode {
    let mut spec = match RunSpec::new(descriptor, scenario, 0) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    spec.seed = seed.unwrap_or(spec.scenario.seed);
    spec.kill = kill.map(|(ms, p)| (SimTime(ms * 1_000), PouchId(p)));
    if let Some((at, pouch)) = spec.kill {
        if pouch.0 >= spec.descriptor.total_initial_pouches() {
            eprintln!("configuration error: pouch {} does not exist at start", pouch.0);
            return ExitCode::from(EXIT_CONFIG);
        }
        println!("fault injection: killing pouch {} at {} ms", pouch.0, at.0 / 1000);
    }

    let result = run_experiment(&spec);
    if let Err(e) = write_reports(out, &result) {
        eprintln!("report write failed: {e}");
        return ExitCode::from(EXIT_RUNTIME);
    }

    let s = &result.summary;
    println!(
        "{}: attempted {} established {} failed {} abandoned {} dropped {}",
        spec.descriptor_name,
        s.counters.attempted,
        s.counters.established,
        s.counters.failed,
        s.counters.abandoned,
        s.counters.dropped,
    );
    if let Some(l) = &s.setup_latency {
        println!(
            "setup latency: n={} mean={:.3} ms stddev={:.3} ms p95={:.3} ms",
            l.count, l.mean_ms, l.stddev_ms, l.p95_ms
        );
    }
    if let Some(m) = &s.media {
        println!(
            "media: {} frames, jitter stddev {:.3} ms",
            m.frames, m.jitter_stddev_ms
        );
    }
    println!("reports written to {}", out.display());

    // A finished run must satisfy the conservation laws; anything else is
    // a defect in the simulation itself, not an experiment outcome.
    let c = &result.world.counters;
    let conserved = c.msg_sent == c.msg_handled + c.dead_letters
        && c.per_call_spawned == c.per_call_terminated + c.per_call_lost
        && result.world.live_per_call_units() == 0;
    if !conserved {
        eprintln!(
            "runtime assertion failure: conservation violated \
             (sent {} handled {} dead {}, spawned {} terminated {} lost {}, live {})",
            c.msg_sent,
            c.msg_handled,
            c.dead_letters,
            c.per_call_spawned,
            c.per_call_terminated,
            c.per_call_lost,
            result.world.live_per_call_units(),
        );
        return ExitCode::from(EXIT_RUNTIME);
    }
    if !result.drained {
        eprintln!("runtime assertion failure: calls still open after drain");
        return ExitCode::from(EXIT_RUNTIME);
    }
    ExitCode::SUCCESS
}

fn matrix_cmd(
    configs: &[String],
    scenario: &str,
    seed: Option<u64>,
    out: &std::path::Path,
    replicas: u32,
) -> ExitCode {
    let entries: Vec<ExperimentConfig> = configs
        .iter()
        .map(|c| {
            let mut e = ExperimentConfig::new(c, scenario);
            e.replicas = replicas;
            e
        })
        .collect();
    let seed = seed.unwrap_or(1);
    let rows = match run_experiment_matrix(&entries, seed, Some(out)) {
        Ok(r) => r,
        Err(unity_sim::harness::HarnessError::Io(e)) => {
            eprintln!("report write failed: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    println!(
        "{:<8} {:>12} {:>12} {:>12} {:>8} {:>8} {:>7}",
        "config", "mean_ms", "jitter_ms", "established", "lat#", "jit#", "wall_s"
    );
    for r in &rows {
        println!(
            "{:<8} {:>12} {:>12} {:>12} {:>8} {:>8} {:>7.1}",
            r.config,
            r.mean_setup_ms.map(|v| format!("{v:.3}")).unwrap_or_default(),
            r.jitter_stddev_ms.map(|v| format!("{v:.3}")).unwrap_or_default(),
            r.established,
            r.latency_rank,
            r.jitter_rank,
            r.wall_s,
        );
    }
    println!("reports written to {}", out.display());
    ExitCode::SUCCESS
}
