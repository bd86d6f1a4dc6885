//! Aggregation over a finished run: latency, CPU, media-drift and
//! outcome summaries, plus the fitting/correlation helpers the
//! experiment comparisons are built on.
//!
//! Aggregates are computed from integer samples in a fixed order, so a
//! given run always produces bit-identical summaries.

use serde::Serialize;
use thiserror::Error;

use crate::kernel::PouchId;
use crate::sim::{CallOutcome, ScaleKind, World};
use crate::time::SimTime;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no samples inside the measurement window")]
    EmptyWindow,
}

// ----------------------------------------------------------------------
// Scalar helpers (integer microsecond inputs)
// ----------------------------------------------------------------------

pub fn mean_us(xs: &[u64]) -> Result<f64, MetricsError> {
    if xs.is_empty() {
        return Err(MetricsError::EmptyWindow);
    }
    let sum: u128 = xs.iter().map(|&x| u128::from(x)).sum();
    Ok(sum as f64 / xs.len() as f64)
}

/// Population standard deviation.
pub fn stddev_us(xs: &[u64]) -> Result<f64, MetricsError> {
    let m = mean_us(xs)?;
    let var = xs
        .iter()
        .map(|&x| {
            let d = x as f64 - m;
            d * d
        })
        .sum::<f64>()
        / xs.len() as f64;
    Ok(var.sqrt())
}

/// 95th percentile (nearest-rank on a sorted copy).
pub fn p95_us(xs: &[u64]) -> Result<u64, MetricsError> {
    if xs.is_empty() {
        return Err(MetricsError::EmptyWindow);
    }
    let mut sorted = xs.to_vec();
    sorted.sort_unstable();
    let rank = (sorted.len() * 95).div_ceil(100);
    Ok(sorted[rank.max(1) - 1])
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line through `(x, y)` points. Needs two distinct x
/// values to be meaningful.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<LinearFit, MetricsError> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(MetricsError::EmptyWindow);
    }
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let mx = sx / n;
    let my = sy / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::EmptyWindow);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let e = p.1 - (slope * p.0 + intercept);
            e * e
        })
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit { slope, intercept, r2 })
}

/// Spearman rank correlation. Ties get average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(MetricsError::EmptyWindow);
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let pts: Vec<(f64, f64)> = rx.into_iter().zip(ry).collect();
    // Pearson correlation of the ranks.
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let vx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let vy: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(MetricsError::EmptyWindow);
    }
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("no NaN in rank input"));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn ms(us: u64) -> f64 {
    round3(us as f64 / 1000.0)
}

// ----------------------------------------------------------------------
// Run summary
// ----------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CounterSummary {
    pub attempted: u64,
    pub established: u64,
    pub torn_down: u64,
    pub failed: u64,
    pub abandoned: u64,
    pub dropped: u64,
    pub registrations: u64,
    pub msg_sent: u64,
    pub msg_handled: u64,
    pub dead_letters: u64,
    pub units_spawned: u64,
    pub units_terminated: u64,
    pub units_lost: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowCounts {
    pub attempted: u64,
    pub established: u64,
    pub failed: u64,
    pub abandoned: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcurrentSummary {
    pub min: u32,
    pub max: u32,
    pub mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PouchCpu {
    pub pouch: u32,
    pub samples: usize,
    pub mean_utilization: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CpuSummary {
    pub overall_mean_utilization: f64,
    pub per_pouch: Vec<PouchCpu>,
    /// Utilization-vs-concurrency line, when the run saw at least two
    /// concurrency levels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<LinearFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MediaSummary {
    pub frames: usize,
    pub mean_offset_ms: f64,
    pub jitter_stddev_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleEventSummary {
    pub t_ms: f64,
    pub event: String,
    pub pouch: u32,
    pub mean_utilization: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub descriptor: String,
    pub scenario: String,
    pub seed: u64,
    pub window_start_ms: f64,
    pub window_end_ms: f64,
    pub drained: bool,
    pub counters: CounterSummary,
    pub in_window: WindowCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concurrent_calls: Option<ConcurrentSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setup_latency: Option<LatencySummary>,
    pub cpu: CpuSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub media: Option<MediaSummary>,
    pub scale_events: Vec<ScaleEventSummary>,
}

/// Setup-latency samples (µs) for calls that entered during the window
/// and completed signaling setup, in call order.
pub fn latency_samples(world: &World, window: (SimTime, SimTime)) -> Vec<u64> {
    world
        .calls
        .iter()
        .filter(|c| {
            c.t_rx.is_some_and(|t| t >= window.0 && t < window.1) && c.t_tx.is_some()
        })
        .map(|c| (c.t_tx.unwrap() - c.t_rx.unwrap()).0)
        .collect()
}

pub fn build_summary(
    world: &World,
    descriptor: &str,
    scenario: &str,
    seed: u64,
    window: (SimTime, SimTime),
    drained: bool,
) -> Summary {
    let c = &world.counters;
    let counters = CounterSummary {
        attempted: c.attempted,
        established: c.established,
        torn_down: c.torn_down,
        failed: c.failed,
        abandoned: c.abandoned,
        dropped: c.dropped,
        registrations: c.registrations,
        msg_sent: c.msg_sent,
        msg_handled: c.msg_handled,
        dead_letters: c.dead_letters,
        units_spawned: c.units_spawned,
        units_terminated: c.units_terminated,
        units_lost: c.units_lost,
    };

    let mut in_window = WindowCounts {
        attempted: 0,
        established: 0,
        failed: 0,
        abandoned: 0,
        dropped: 0,
    };
    for call in &world.calls {
        if !call.t_rx.is_some_and(|t| t >= window.0 && t < window.1) {
            continue;
        }
        in_window.attempted += 1;
        match call.outcome {
            CallOutcome::Established | CallOutcome::TornDown => in_window.established += 1,
            CallOutcome::Failed(_) => in_window.failed += 1,
            CallOutcome::Abandoned => in_window.abandoned += 1,
            CallOutcome::Dropped => in_window.dropped += 1,
            CallOutcome::Pending => {}
        }
    }

    let lat = latency_samples(world, window);
    let setup_latency = if lat.is_empty() {
        None
    } else {
        Summary::latency_of(&lat)
    };

    let cpu_samples = &world.samples.cpu;
    let concurrent_calls = if cpu_samples.is_empty() {
        None
    } else {
        let min = cpu_samples.iter().map(|s| s.concurrent).min().unwrap();
        let max = cpu_samples.iter().map(|s| s.concurrent).max().unwrap();
        let sum: u64 = cpu_samples.iter().map(|s| u64::from(s.concurrent)).sum();
        Some(ConcurrentSummary {
            min,
            max,
            mean: round3(sum as f64 / cpu_samples.len() as f64),
        })
    };

    let mut by_pouch: std::collections::BTreeMap<PouchId, (u64, usize)> =
        std::collections::BTreeMap::new();
    for s in cpu_samples {
        let e = by_pouch.entry(s.pouch).or_default();
        e.0 += u64::from(s.util_milli);
        e.1 += 1;
    }
    let per_pouch: Vec<PouchCpu> = by_pouch
        .iter()
        .map(|(p, (sum, n))| PouchCpu {
            pouch: p.0,
            samples: *n,
            mean_utilization: round3(*sum as f64 / (*n as f64 * 1000.0)),
        })
        .collect();
    let overall_mean_utilization = if cpu_samples.is_empty() {
        0.0
    } else {
        let sum: u64 = cpu_samples.iter().map(|s| u64::from(s.util_milli)).sum();
        round3(sum as f64 / (cpu_samples.len() as f64 * 1000.0))
    };

    // Mean utilization at each concurrency level seen in the window.
    let mut by_level: std::collections::BTreeMap<u32, (u64, usize)> =
        std::collections::BTreeMap::new();
    for s in cpu_samples {
        let e = by_level.entry(s.concurrent).or_default();
        e.0 += u64::from(s.util_milli);
        e.1 += 1;
    }
    let fit = if by_level.len() >= 2 {
        let pts: Vec<(f64, f64)> = by_level
            .iter()
            .map(|(lvl, (sum, n))| (f64::from(*lvl), *sum as f64 / (*n as f64 * 1000.0)))
            .collect();
        linear_fit(&pts).ok()
    } else {
        None
    };

    let media = if world.samples.media.is_empty() {
        None
    } else {
        let offsets: Vec<u64> = world.samples.media.iter().map(|m| m.offset_us).collect();
        Some(MediaSummary {
            frames: offsets.len(),
            mean_offset_ms: round3(mean_us(&offsets).unwrap() / 1000.0),
            jitter_stddev_ms: round3(stddev_us(&offsets).unwrap() / 1000.0),
        })
    };

    let scale_events = world
        .scale_events
        .iter()
        .map(|e| {
            let (label, pouch) = match e.kind {
                ScaleKind::AddPouch(p) => ("scale-out", p.0),
                ScaleKind::RemovePouch(p) => ("scale-in", p.0),
                ScaleKind::PouchDown(p) => ("pouch-down", p.0),
            };
            ScaleEventSummary {
                t_ms: ms(e.at.0),
                event: label.to_string(),
                pouch,
                mean_utilization: round3(f64::from(e.mean_util_milli) / 1000.0),
            }
        })
        .collect();

    Summary {
        descriptor: descriptor.to_string(),
        scenario: scenario.to_string(),
        seed,
        window_start_ms: ms(window.0 .0),
        window_end_ms: ms(window.1 .0),
        drained,
        counters,
        in_window,
        concurrent_calls,
        setup_latency,
        cpu: CpuSummary { overall_mean_utilization, per_pouch, fit },
        media,
        scale_events,
    }
}

impl Summary {
    fn latency_of(samples: &[u64]) -> Option<LatencySummary> {
        Some(LatencySummary {
            count: samples.len(),
            mean_ms: round3(mean_us(samples).ok()? / 1000.0),
            stddev_ms: round3(stddev_us(samples).ok()? / 1000.0),
            p95_ms: ms(p95_us(samples).ok()?),
        })
    }
}
