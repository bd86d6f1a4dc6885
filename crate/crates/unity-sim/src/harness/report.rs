//! Report files for one run: per-call, per-pouch, and per-frame CSVs, a
//! JSON summary, and the consolidated log. Comma delimiter, `.` decimal
//! point, LF endings; empty stores still get their header lines so the
//! schema is always discoverable.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::ids::consolidate_logs;

use super::RunResult;

fn fmt_ms(us: u64) -> String {
    format!("{}.{:03}", us / 1000, us % 1000)
}

pub fn calls_csv(result: &RunResult) -> String {
    let (start, end) = result.window;
    let mut out = String::from(
        "call_id,t_invite_rx_ms,t_invite_tx_ms,setup_latency_ms,orig,term,outcome\n",
    );
    for call in &result.world.calls {
        let Some(rx) = call.t_rx else { continue };
        if rx < start || rx >= end {
            continue;
        }
        let tx = call.t_tx.map(|t| fmt_ms(t.0)).unwrap_or_default();
        let latency = call
            .t_tx
            .map(|t| fmt_ms((t - rx).0))
            .unwrap_or_default();
        let orig = call.c_orig.map(|a| a.pouch.0.to_string()).unwrap_or_default();
        let term = call.c_term.map(|a| a.pouch.0.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            call.id,
            fmt_ms(rx.0),
            tx,
            latency,
            orig,
            term,
            call.outcome.label(),
        );
    }
    out
}

pub fn cpu_csv(result: &RunResult) -> String {
    let mut out = String::from("t_ms,pouch_id,utilization,concurrent_calls\n");
    for s in &result.world.samples.cpu {
        let _ = writeln!(
            out,
            "{},{},{}.{:03},{}",
            fmt_ms(s.at.0),
            s.pouch.0,
            s.util_milli / 1000,
            s.util_milli % 1000,
            s.concurrent,
        );
    }
    out
}

pub fn media_csv(result: &RunResult) -> String {
    let mut out = String::from("call_id,frame_k,offset_ms\n");
    for m in &result.world.samples.media {
        let _ = writeln!(out, "{},{},{}", m.call, m.k, fmt_ms(m.offset_us));
    }
    out
}

pub fn summary_json(result: &RunResult) -> String {
    let mut s = serde_json::to_string_pretty(&result.summary).expect("summary serializes");
    s.push('\n');
    s
}

/// Write the full report set into `dir`, creating it if needed.
pub fn write_reports(dir: &Path, result: &RunResult) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("calls.csv"), calls_csv(result))?;
    fs::write(dir.join("cpu.csv"), cpu_csv(result))?;
    fs::write(dir.join("media.csv"), media_csv(result))?;
    fs::write(dir.join("summary.json"), summary_json(result))?;
    fs::write(dir.join("unity.log.tsv"), consolidate_logs(&result.world.logs))?;
    Ok(())
}
