//! Information Distribution Service: an in-memory topic bus with
//! subscription bookkeeping, plus the Log Gathering Service that turns the
//! run's log stream into one consolidated, totally ordered TSV file.
//!
//! The bus itself holds no messages: `publish` resolves the current
//! subscriber list and the caller transports the payload (with network
//! delay) to each of them. There is no replay — late subscribers bootstrap
//! via an on-demand snapshot from the orchestrator.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::kernel::PouchId;
use crate::time::SimTime;

/// The closed set of bus topics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Topic {
    ResourceUtilization,
    ResolvingUpdates,
    SystemStatus,
    GlobalConfig,
    LogEntries,
}

pub const ALL_TOPICS: [Topic; 5] = [
    Topic::ResourceUtilization,
    Topic::ResolvingUpdates,
    Topic::SystemStatus,
    Topic::GlobalConfig,
    Topic::LogEntries,
];

impl Topic {
    pub fn name(self) -> &'static str {
        match self {
            Topic::ResourceUtilization => "resource-utilization",
            Topic::ResolvingUpdates => "resolving-updates",
            Topic::SystemStatus => "system-status",
            Topic::GlobalConfig => "global-config",
            Topic::LogEntries => "log-entries",
        }
    }

    pub fn parse(name: &str) -> Result<Topic, IdsError> {
        ALL_TOPICS
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| IdsError::UnknownTopic(name.to_string()))
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdsError {
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubscriptionId(u64);

/// Subscription registry. `S` identifies a subscriber — the simulation uses
/// one routable address type for units and services alike.
#[derive(Debug)]
pub struct Bus<S> {
    topics: BTreeMap<Topic, Vec<(SubscriptionId, S)>>,
    next_id: u64,
}

impl<S: Copy> Bus<S> {
    pub fn new() -> Self {
        Bus { topics: ALL_TOPICS.iter().map(|&t| (t, Vec::new())).collect(), next_id: 0 }
    }

    /// Register interest; the subscriber sees messages published strictly
    /// after this call. Duplicate subscriptions yield duplicate deliveries.
    pub fn subscribe(&mut self, topic: Topic, who: S) -> SubscriptionId {
        let id = SubscriptionId(self.next_id);
        self.next_id += 1;
        self.topics.get_mut(&topic).expect("closed topic set").push((id, who));
        id
    }

    pub fn unsubscribe(&mut self, id: SubscriptionId) -> bool {
        for subs in self.topics.values_mut() {
            if let Some(i) = subs.iter().position(|(sid, _)| *sid == id) {
                subs.remove(i);
                return true;
            }
        }
        false
    }

    /// Current subscribers in subscription order; the caller delivers the
    /// payload to each (publish order is preserved per subscriber because
    /// transport delay per endpoint pair is constant).
    pub fn subscribers(&self, topic: Topic) -> impl Iterator<Item = S> + '_ {
        self.topics[&topic].iter().map(|&(_, s)| s)
    }

    pub fn subscriber_count(&self, topic: Topic) -> usize {
        self.topics[&topic].len()
    }
}

impl<S: Copy> Default for Bus<S> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Severity {
    Debug,
    Info,
    Warn,
    Error,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Debug => "debug",
            Severity::Info => "info",
            Severity::Warn => "warn",
            Severity::Error => "error",
        }
    }
}

/// One log line as emitted by a unit or service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub at: SimTime,
    pub pouch: PouchId,
    pub unit: String,
    pub severity: Severity,
    pub call_id: Option<String>,
    pub text: String,
}

pub const LOG_HEADER: &str = "ts_ms\tpouch\tunit\tseverity\tcall_id\ttext";

/// Sort and consolidate the collected log stream: total order is
/// (timestamp, pouch, arrival sequence), emitted as TSV with a header.
pub fn consolidate_logs(entries: &[LogEntry]) -> String {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by_key(|&i| (entries[i].at, entries[i].pouch, i));
    let mut out = String::with_capacity(64 * (entries.len() + 1));
    out.push_str(LOG_HEADER);
    out.push('\n');
    for i in order {
        let e = &entries[i];
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.at,
            e.pouch,
            e.unit,
            e.severity.as_str(),
            e.call_id.as_deref().unwrap_or(""),
            e.text
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topic_names_round_trip() {
        for t in ALL_TOPICS {
            assert_eq!(Topic::parse(t.name()), Ok(t));
        }
        assert_eq!(
            Topic::parse("telemetry"),
            Err(IdsError::UnknownTopic("telemetry".into()))
        );
    }

    #[test]
    fn publish_reaches_each_current_subscriber_once() {
        let mut bus: Bus<u32> = Bus::new();
        bus.subscribe(Topic::ResolvingUpdates, 1);
        bus.subscribe(Topic::ResolvingUpdates, 2);
        bus.subscribe(Topic::ResolvingUpdates, 3);
        let got: Vec<u32> = bus.subscribers(Topic::ResolvingUpdates).collect();
        assert_eq!(got, [1, 2, 3]);
        // Other topics are unaffected.
        assert_eq!(bus.subscriber_count(Topic::LogEntries), 0);
    }

    #[test]
    fn no_subscribers_means_no_deliveries() {
        let bus: Bus<u32> = Bus::new();
        assert_eq!(bus.subscribers(Topic::SystemStatus).count(), 0);
    }

    #[test]
    fn duplicate_subscription_duplicates_delivery() {
        let mut bus: Bus<u32> = Bus::new();
        let a = bus.subscribe(Topic::GlobalConfig, 9);
        let b = bus.subscribe(Topic::GlobalConfig, 9);
        assert_ne!(a, b);
        assert_eq!(bus.subscribers(Topic::GlobalConfig).count(), 2);
    }

    #[test]
    fn unsubscribe_stops_delivery() {
        let mut bus: Bus<u32> = Bus::new();
        let id = bus.subscribe(Topic::ResourceUtilization, 5);
        assert!(bus.unsubscribe(id));
        assert!(!bus.unsubscribe(id));
        assert_eq!(bus.subscribers(Topic::ResourceUtilization).count(), 0);
    }

    fn entry(at_us: u64, pouch: u32, text: &str) -> LogEntry {
        LogEntry {
            at: SimTime(at_us),
            pouch: PouchId(pouch),
            unit: "C#1".into(),
            severity: Severity::Info,
            call_id: Some("c1".into()),
            text: text.into(),
        }
    }

    #[test]
    fn logs_sort_by_time_then_pouch_then_arrival() {
        let entries = vec![
            entry(5_000, 2, "late"),
            entry(3_000, 1, "early"),
            entry(5_000, 1, "tie-low-pouch"),
            entry(5_000, 1, "tie-second-arrival"),
        ];
        let out = consolidate_logs(&entries);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], LOG_HEADER);
        assert!(lines[1].contains("early"));
        assert!(lines[2].contains("tie-low-pouch"));
        assert!(lines[3].contains("tie-second-arrival"));
        assert!(lines[4].contains("late"));
        assert!(lines[1].starts_with("3.000\tpouch-1"));
    }

    #[test]
    fn empty_log_is_header_only() {
        assert_eq!(consolidate_logs(&[]), format!("{LOG_HEADER}\n"));
    }
}
