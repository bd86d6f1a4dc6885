//! The experiment matrix: run several deployment configurations against
//! the same traffic profile and seed, and rank them on control-plane
//! latency and data-plane jitter.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::metrics::Summary;
use super::{run_experiment, HarnessError, RunSpec};

/// One matrix entry: which deployment, which traffic, how many replicas.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub descriptor: String,
    pub scenario: String,
    pub replicas: u32,
}

impl ExperimentConfig {
    pub fn new(descriptor: &str, scenario: &str) -> Self {
        ExperimentConfig {
            descriptor: descriptor.to_string(),
            scenario: scenario.to_string(),
            replicas: 1,
        }
    }
}

pub struct MatrixRow {
    pub config: String,
    pub replicas: u32,
    /// Replica-averaged aggregates.
    pub mean_setup_ms: Option<f64>,
    pub stddev_setup_ms: Option<f64>,
    pub p95_setup_ms: Option<f64>,
    pub jitter_stddev_ms: Option<f64>,
    pub mean_cpu: f64,
    pub established: u64,
    pub failed: u64,
    /// 1 = lowest mean setup latency among the rows.
    pub latency_rank: usize,
    /// 1 = lowest media jitter among the rows.
    pub jitter_rank: usize,
    /// Summary of each replica, in seed order.
    pub summaries: Vec<Summary>,
    /// Wall-clock seconds spent simulating this row.
    pub wall_s: f64,
}

/// Run every configuration with the same base seed; replica `i` of a
/// config runs with `seed + i`. When `out` is given, each run's full
/// report set is written as soon as the run finishes, so only summaries
/// stay in memory.
pub fn run_experiment_matrix(
    configs: &[ExperimentConfig],
    seed: u64,
    out: Option<&Path>,
) -> Result<Vec<MatrixRow>, HarnessError> {
    let mut rows = Vec::with_capacity(configs.len());
    for config in configs {
        let replicas = config.replicas.max(1);
        let mut summaries = Vec::with_capacity(replicas as usize);
        let started = std::time::Instant::now();
        for replica in 0..replicas {
            let spec =
                RunSpec::new(&config.descriptor, &config.scenario, seed + u64::from(replica))?;
            let run = run_experiment(&spec);
            if let Some(dir) = out {
                let sub = if replicas > 1 {
                    dir.join(format!("{}-r{}", config.descriptor, replica))
                } else {
                    dir.join(&config.descriptor)
                };
                super::report::write_reports(&sub, &run)?;
            }
            summaries.push(run.summary);
        }
        let wall_s = started.elapsed().as_secs_f64();
        let mean_of = |f: &dyn Fn(&Summary) -> Option<f64>| -> Option<f64> {
            let vals: Vec<f64> = summaries.iter().filter_map(f).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        let mean_setup_ms = mean_of(&|s| s.setup_latency.as_ref().map(|l| l.mean_ms));
        let stddev_setup_ms = mean_of(&|s| s.setup_latency.as_ref().map(|l| l.stddev_ms));
        let p95_setup_ms = mean_of(&|s| s.setup_latency.as_ref().map(|l| l.p95_ms));
        let jitter_stddev_ms = mean_of(&|s| s.media.as_ref().map(|m| m.jitter_stddev_ms));
        let mean_cpu = mean_of(&|s| Some(s.cpu.overall_mean_utilization)).unwrap_or(0.0);
        let established: u64 = summaries.iter().map(|s| s.counters.established).sum();
        let failed: u64 = summaries.iter().map(|s| s.counters.failed).sum();
        rows.push(MatrixRow {
            config: config.descriptor.clone(),
            replicas,
            mean_setup_ms,
            stddev_setup_ms,
            p95_setup_ms,
            jitter_stddev_ms,
            mean_cpu,
            established,
            failed,
            latency_rank: 0,
            jitter_rank: 0,
            summaries,
            wall_s,
        });
    }
    assign_ranks(&mut rows);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("matrix.csv"), matrix_csv(&rows))?;
    }
    Ok(rows)
}

fn assign_ranks(rows: &mut [MatrixRow]) {
    let rank_by = |key: &dyn Fn(&MatrixRow) -> Option<f64>, rows: &[MatrixRow]| -> Vec<usize> {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| {
            let ka = key(&rows[a]).unwrap_or(f64::INFINITY);
            let kb = key(&rows[b]).unwrap_or(f64::INFINITY);
            ka.partial_cmp(&kb).expect("no NaN rank keys").then(a.cmp(&b))
        });
        let mut ranks = vec![0usize; rows.len()];
        for (rank, idx) in order.into_iter().enumerate() {
            ranks[idx] = rank + 1;
        }
        ranks
    };
    let latency = rank_by(&|r| r.mean_setup_ms, rows);
    let jitter = rank_by(&|r| r.jitter_stddev_ms, rows);
    for (i, row) in rows.iter_mut().enumerate() {
        row.latency_rank = latency[i];
        row.jitter_rank = jitter[i];
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

pub fn matrix_csv(rows: &[MatrixRow]) -> String {
    let mut out = String::from(
        "config,replicas,mean_setup_ms,stddev_setup_ms,p95_setup_ms,\
         jitter_stddev_ms,mean_cpu_utilization,established,failed,\
         latency_rank,jitter_rank\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.3},{},{},{},{}",
            r.config,
            r.replicas,
            opt(r.mean_setup_ms),
            opt(r.stddev_setup_ms),
            opt(r.p95_setup_ms),
            opt(r.jitter_stddev_ms),
            r.mean_cpu,
            r.established,
            r.failed,
            r.latency_rank,
            r.jitter_rank,
        );
    }
    out
}
