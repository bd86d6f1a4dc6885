//! Scenario files: the offered traffic profile for one experiment run.
//!
//! Flat `key = value` text, one setting per line, `#` comments. Rates are
//! per minute and may carry up to three decimals; durations are seconds
//! with up to six. Everything becomes exact integers (milli-rates,
//! microseconds) at parse time so runs stay bit-reproducible.

use thiserror::Error;

use crate::sim::ArrivalKind;
use crate::time::{SimDuration, SimTime};
use crate::TrafficPlan;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioConfig {
    /// Milli-calls per minute (30 000 = 30 calls/min). Zero means a
    /// registration-only run.
    pub call_rate_milli: u64,
    pub call_duration_us: u64,
    pub subscribers: u32,
    /// Milli-re-registrations per minute; zero disables background
    /// registration refresh.
    pub rereg_rate_milli: u64,
    pub warmup_us: u64,
    pub measurement_us: u64,
    pub arrival: ArrivalKind,
    pub seed: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {key} must not be negative")]
    NegativeRate { line: usize, key: String },
}

impl ScenarioConfig {
    /// The built-in reference profile (also shipped as
    /// `scenarios/paper.scn`): 30 calls/min held for 200 s against 200
    /// subscribers with 20 re-registrations/min, measured for ten minutes
    /// after a four-minute warmup.
    pub fn paper() -> Self {
        ScenarioConfig {
            call_rate_milli: 30_000,
            call_duration_us: 200_000_000,
            subscribers: 200,
            rereg_rate_milli: 20_000,
            warmup_us: 240_000_000,
            measurement_us: 600_000_000,
            arrival: ArrivalKind::Deterministic,
            seed: 1,
        }
    }

    /// Text of a built-in golden scenario.
    pub fn golden(name: &str) -> Option<&'static str> {
        match name {
            "paper" => Some(include_str!("../../scenarios/paper.scn")),
            _ => None,
        }
    }

    /// Offered-traffic plan for the simulator, with arrivals starting at
    /// `start` and running through warmup plus measurement.
    pub fn plan(&self, start: SimTime) -> TrafficPlan {
        TrafficPlan {
            start,
            phases: vec![(
                self.call_rate_milli,
                SimDuration(self.warmup_us + self.measurement_us),
            )],
            call_duration: SimDuration(self.call_duration_us),
            rereg_interval_us: if self.rereg_rate_milli > 0 {
                Some(60_000_000_000 / self.rereg_rate_milli)
            } else {
                None
            },
            subscribers: self.subscribers,
            arrival: self.arrival,
        }
    }

    /// Measurement window for a plan built by [`ScenarioConfig::plan`].
    pub fn window(&self, start: SimTime) -> (SimTime, SimTime) {
        let open = start + SimDuration(self.warmup_us);
        (open, open + SimDuration(self.measurement_us))
    }
}

/// Parse a non-negative decimal into fixed-point with `scale` fractional
/// digits (e.g. scale 3: "7.5" -> 7500).
fn parse_fixed(s: &str, scale: u32) -> Option<u64> {
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if frac_part.len() > scale as usize {
        return None;
    }
    let int: u64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let mut frac: u64 = 0;
    if !frac_part.is_empty() {
        frac = frac_part.parse().ok()?;
        frac *= 10u64.pow(scale - frac_part.len() as u32);
    }
    int.checked_mul(10u64.pow(scale))?.checked_add(frac)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let mut call_rate = None;
    let mut duration = None;
    let mut subscribers = None;
    let mut rereg = 0u64;
    let mut warmup = 60_000_000u64;
    let mut measurement = 600_000_000u64;
    let mut arrival = ArrivalKind::Deterministic;
    let mut seed = 1u64;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(ScenarioError::Syntax {
                line,
                msg: format!("expected key = value, got {body:?}"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        let negative = value.starts_with('-');
        let fixed = |scale: u32| -> Result<u64, ScenarioError> {
            if negative {
                return Err(ScenarioError::NegativeRate { line, key: key.to_string() });
            }
            parse_fixed(value, scale).ok_or_else(|| ScenarioError::Syntax {
                line,
                msg: format!("bad number {value:?} for {key}"),
            })
        };
        match key {
            "call-rate" => call_rate = Some(fixed(3)?),
            "call-duration" => duration = Some(fixed(6)?),
            "subscriber-count" => {
                if negative {
                    return Err(ScenarioError::NegativeRate { line, key: key.to_string() });
                }
                let n: u32 = value.parse().map_err(|_| ScenarioError::Syntax {
                    line,
                    msg: format!("bad count {value:?}"),
                })?;
                subscribers = Some(n);
            }
            "re-registration-rate" => rereg = fixed(3)?,
            "warmup" => warmup = fixed(6)?,
            "measurement-window" => measurement = fixed(6)?,
            "arrival" => {
                arrival = match value {
                    "deterministic" => ArrivalKind::Deterministic,
                    "exponential" => ArrivalKind::Exponential,
                    _ => {
                        return Err(ScenarioError::Syntax {
                            line,
                            msg: format!("arrival must be deterministic or exponential, got {value:?}"),
                        })
                    }
                };
            }
            "seed" => {
                seed = value.parse().map_err(|_| ScenarioError::Syntax {
                    line,
                    msg: format!("bad seed {value:?}"),
                })?;
            }
            _ => {
                return Err(ScenarioError::Syntax {
                    line,
                    msg: format!("unknown key {key:?}"),
                })
            }
        }
    }

    let missing = |what: &str| ScenarioError::Syntax { line: 0, msg: format!("missing {what}") };
    Ok(ScenarioConfig {
        call_rate_milli: call_rate.ok_or_else(|| missing("call-rate"))?,
        call_duration_us: duration.ok_or_else(|| missing("call-duration"))?,
        subscribers: subscribers.ok_or_else(|| missing("subscriber-count"))?,
        rereg_rate_milli: rereg,
        warmup_us: warmup,
        measurement_us: measurement,
        arrival,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_paper_scenario_round_trips() {
        let parsed = parse_scenario(ScenarioConfig::golden("paper").unwrap()).unwrap();
        assert_eq!(parsed, ScenarioConfig::paper());
    }

    #[test]
    fn fractional_rates_become_exact_milli() {
        let cfg = parse_scenario(
            "call-rate = 7.5\ncall-duration = 200\nsubscriber-count = 50\n",
        )
        .unwrap();
        assert_eq!(cfg.call_rate_milli, 7_500);
        assert_eq!(cfg.call_duration_us, 200_000_000);
        assert_eq!(cfg.rereg_rate_milli, 0);
    }

    #[test]
    fn zero_rate_is_a_valid_registration_only_run() {
        let cfg = parse_scenario(
            "call-rate = 0\ncall-duration = 10\nsubscriber-count = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.call_rate_milli, 0);
        assert!(cfg.plan(SimTime::ZERO).first_arrival().is_none());
    }

    #[test]
    fn negative_duration_is_rejected() {
        let err = parse_scenario(
            "call-rate = 30\ncall-duration = -1\nsubscriber-count = 5\n",
        )
        .unwrap_err();
        assert!(matches!(err, ScenarioError::NegativeRate { line: 2, .. }));
    }

    #[test]
    fn unknown_keys_and_bad_lines_are_syntax_errors() {
        assert!(matches!(
            parse_scenario("frobnicate = 3\n"),
            Err(ScenarioError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_scenario("call-rate 30\n"),
            Err(ScenarioError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn window_excludes_warmup() {
        let cfg = ScenarioConfig::paper();
        let (open, close) = cfg.window(SimTime(10_000_000));
        assert_eq!(open, SimTime(250_000_000));
        assert_eq!(close, SimTime(850_000_000));
    }
}
