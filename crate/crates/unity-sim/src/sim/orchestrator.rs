//! Management and monitoring orchestration: silence-based failure
//! detection, resolve-truth snapshots for late-joining pouches, capacity
//! elasticity for flat deployments, and operator configuration pushes.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ids::{Severity, Topic};
use crate::kernel::PouchId;
use crate::time::{SimDuration, SimTime};
use crate::unit::{UnitAddress, UnitId};
use sip_codec::Codec;

use super::units::UnitBody;
use super::{
    parse_codec_list, BusClient, BusMsg, CallOutcome, Payload, ScaleEvent, ScaleKind, World,
    MONITOR_INTERVAL,
};
use crate::kernel::UaId;

/// A pouch that misses this many consecutive utilization intervals is
/// declared down.
pub const SILENT_INTERVALS: u64 = 3;

#[derive(Debug, Clone, Copy)]
struct Track {
    util_milli: u32,
    at: SimTime,
}

/// Orchestrator state: the latest utilization sample per pouch and a
/// fold of every resolving update, kept so a freshly added pouch can be
/// handed a complete service snapshot.
#[derive(Debug)]
pub struct Mmo {
    interval_us: u64,
    pub default_codecs: Vec<Codec>,
    tracked: BTreeMap<PouchId, Track>,
    service_units: BTreeMap<UnitId, UnitAddress>,
    last_scale: Option<SimTime>,
}

impl Mmo {
    pub fn new(interval_us: u64, default_codecs: Vec<Codec>) -> Self {
        Mmo {
            interval_us,
            default_codecs,
            tracked: BTreeMap::new(),
            service_units: BTreeMap::new(),
            last_scale: None,
        }
    }

    pub fn register_pouch(&mut self, pouch: PouchId, now: SimTime) {
        self.tracked.insert(pouch, Track { util_milli: 0, at: now });
    }

    fn forget_pouch(&mut self, pouch: PouchId) {
        self.tracked.remove(&pouch);
        self.service_units.retain(|_, a| a.pouch != pouch);
    }

    fn on_util(&mut self, pouch: PouchId, util_milli: u32, at: SimTime) {
        if let Some(t) = self.tracked.get_mut(&pouch) {
            *t = Track { util_milli, at };
        }
    }

    fn fold_resolving(&mut self, addr: UnitAddress, up: bool) {
        if addr.unit_type.service_key().is_none() {
            return;
        }
        if up {
            self.service_units.insert(addr.id, addr);
        } else {
            self.service_units.remove(&addr.id);
        }
    }

    /// Live service units, in id order, for seeding a new pouch's tables.
    pub fn snapshot(&self) -> Vec<UnitAddress> {
        self.service_units.values().copied().collect()
    }

    fn silent_after(&self) -> SimDuration {
        SimDuration(self.interval_us * SILENT_INTERVALS)
    }

    /// Pouches whose latest sample is fresh enough to reason from.
    fn fresh_utils(&self, now: SimTime) -> Vec<(PouchId, u32)> {
        let horizon = self.silent_after();
        self.tracked
            .iter()
            .filter(|(_, t)| now - t.at <= horizon)
            .map(|(&p, t)| (p, t.util_milli))
            .collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown configuration key {0:?}")]
    UnknownConfigKey(String),
    #[error("invalid value {value:?} for {key}")]
    InvalidConfigValue { key: &'static str, value: String },
}

impl World {
    pub(crate) fn mmo_on_bus(&mut self, now: SimTime, _topic: Topic, msg: BusMsg) {
        match msg {
            BusMsg::Util { pouch, util_milli, .. } => self.mmo.on_util(pouch, util_milli, now),
            BusMsg::Resolving { addr, up } => self.mmo.fold_resolving(addr, up),
            _ => {}
        }
    }

    /// One patrol pass: declare silent pouches down, then rebalance
    /// capacity when the deployment is flat and thresholds say so.
    pub(crate) fn on_mmo_patrol(&mut self, now: SimTime) {
        let horizon = self.mmo.silent_after();
        let silent: Vec<PouchId> = self
            .mmo
            .tracked
            .iter()
            .filter(|(_, t)| now - t.at > horizon)
            .map(|(&p, _)| p)
            .collect();
        for pouch in silent {
            self.declare_down(now, pouch);
        }
        if !self.mode.is_pinned() {
            self.elasticity_step(now);
        }
        let _ = self.kernel.schedule(now + MONITOR_INTERVAL, Payload::MmoPatrol);
    }

    fn declare_down(&mut self, now: SimTime, pouch: PouchId) {
        self.mmo.forget_pouch(pouch);
        self.purge_pouch_units(pouch);
        self.scale_events.push(ScaleEvent {
            at: now,
            kind: ScaleKind::PouchDown(pouch),
            mean_util_milli: 0,
        });
        self.log(
            now,
            pouch,
            "MMO".to_string(),
            Severity::Warn,
            None,
            format!("{pouch} silent for {SILENT_INTERVALS} intervals, declared down"),
        );
        self.publish(now, None, Topic::SystemStatus, BusMsg::PouchDown { pouch });
        self.reap_dropped_calls(now);
    }

    /// Platform cleanup after a pouch loss: the surviving units of a call
    /// that died with the pouch can never make progress, so terminate them
    /// and retire the stranded signaling state on both edges.
    fn reap_dropped_calls(&mut self, now: SimTime) {
        let dropped: std::collections::BTreeSet<u32> = self
            .calls
            .iter()
            .filter(|c| c.outcome == CallOutcome::Dropped)
            .map(|c| c.id)
            .collect();
        if dropped.is_empty() {
            return;
        }
        let orphans: Vec<UnitAddress> = self
            .units
            .values()
            .filter(|r| r.call_of().is_some_and(|c| dropped.contains(&c)))
            .map(|r| r.addr)
            .collect();
        for addr in orphans {
            self.log(
                now,
                addr.pouch,
                "MMO".to_string(),
                Severity::Info,
                None,
                format!("{addr} orphaned by pouch loss, terminating"),
            );
            self.terminate_local(now, addr);
        }
        let edges: Vec<(u32, String, UaId, UaId)> = dropped
            .iter()
            .map(|&id| {
                let c = &self.calls[id as usize];
                (id, c.sip_call_id.clone(), c.caller, c.callee)
            })
            .collect();
        let siph = self.base.siph.id;
        for (call, sip_id, caller, callee) in edges {
            if let Some(UnitBody::SipH(st)) = self.units.get_mut(&siph).map(|r| &mut r.body) {
                st.forget_call(call, &sip_id);
            }
            self.uas[caller.0 as usize].forget_dialog(&sip_id);
            self.uas[callee.0 as usize].forget_dialog(&sip_id);
        }
    }

    fn elasticity_step(&mut self, now: SimTime) {
        let fresh = self.mmo.fresh_utils(now);
        if fresh.is_empty() {
            return;
        }
        let mean =
            (fresh.iter().map(|&(_, u)| u as u64).sum::<u64>() / fresh.len() as u64) as u32;
        let cooled = self
            .mmo
            .last_scale
            .map_or(true, |t| now - t >= SimDuration(self.elasticity.cooldown_us));
        if !cooled {
            return;
        }
        if mean > self.elasticity.cpu_high_milli {
            self.scale_out(now, mean);
        } else if mean < self.elasticity.cpu_low_milli {
            self.scale_in(now, mean);
        }
    }

    fn scale_out(&mut self, now: SimTime, mean: u32) {
        let Some(pi) = self.pools.iter().position(|p| p.live < p.max) else {
            return;
        };
        let (pool_id, speed) = (self.pools[pi].id.clone(), self.pools[pi].speed_milli);
        let pouch = self
            .kernel
            .add_pouch(&pool_id, speed)
            .expect("pool speed validated at load");
        debug_assert_eq!(self.pouch_pool.len(), pouch.0 as usize);
        self.pouch_pool.push(pi);
        self.pools[pi].live += 1;
        self.add_cmw(pouch, self.mmo.default_codecs.clone())
            .expect("fresh pouch id");
        self.bus.subscribe(Topic::ResolvingUpdates, BusClient::Cmw(pouch));
        self.bus.subscribe(Topic::SystemStatus, BusClient::Cmw(pouch));
        self.bus.subscribe(Topic::GlobalConfig, BusClient::Cmw(pouch));
        // The orchestrator hands the newcomer its view of the world so it
        // can resolve services without waiting for organic updates.
        for addr in self.mmo.snapshot() {
            if let Some(cmw) = self.cmws.get_mut(&pouch) {
                cmw.fold_resolving(addr, true);
            }
        }
        self.mmo.register_pouch(pouch, now);
        self.mmo.last_scale = Some(now);
        self.publish(
            now,
            None,
            Topic::SystemStatus,
            BusMsg::PouchUp { pouch, pool: pool_id },
        );
        self.publish(now, None, Topic::SystemStatus, BusMsg::Scale { pouch, added: true });
        let _ = self
            .kernel
            .schedule(now + MONITOR_INTERVAL, Payload::MonitorTick { pouch });
        self.scale_events.push(ScaleEvent {
            at: now,
            kind: ScaleKind::AddPouch(pouch),
            mean_util_milli: mean,
        });
        self.log(
            now,
            pouch,
            "MMO".to_string(),
            Severity::Info,
            None,
            format!("scaled out to {pouch} (mean load {mean}‰)"),
        );
    }

    fn scale_in(&mut self, now: SimTime, mean: u32) {
        // Only an idle pouch whose pool stays at or above its initial size
        // may be retired; highest ordinal first so ids stay compact.
        let candidate = self
            .kernel
            .alive_pouches()
            .into_iter()
            .rev()
            .find(|&p| {
                let pi = self.pouch_pool[p.0 as usize];
                self.pools[pi].live > self.pools[pi].initial && self.live_units_on(p) == 0
            });
        let Some(pouch) = candidate else { return };
        let pi = self.pouch_pool[pouch.0 as usize];
        self.kernel.kill(pouch).expect("alive candidate");
        self.pools[pi].live -= 1;
        self.cmws.remove(&pouch);
        self.mmo.forget_pouch(pouch);
        self.mmo.last_scale = Some(now);
        self.publish(now, None, Topic::SystemStatus, BusMsg::PouchDown { pouch });
        self.publish(now, None, Topic::SystemStatus, BusMsg::Scale { pouch, added: false });
        self.scale_events.push(ScaleEvent {
            at: now,
            kind: ScaleKind::RemovePouch(pouch),
            mean_util_milli: mean,
        });
        self.log(
            now,
            pouch,
            "MMO".to_string(),
            Severity::Info,
            None,
            format!("scaled in, retired {pouch} (mean load {mean}‰)"),
        );
    }

    /// Operator configuration push. The key/value pair is validated here,
    /// then fanned out on the global configuration topic; each pouch
    /// applies it when the update arrives.
    pub fn push_config(&mut self, now: SimTime, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "supported-codecs" => {
                let parsed = parse_codec_list(value);
                if parsed.is_empty() {
                    return Err(ConfigError::InvalidConfigValue {
                        key: "supported-codecs",
                        value: value.to_string(),
                    });
                }
            }
            "log-level" => {
                let level = match value {
                    "debug" => Severity::Debug,
                    "info" => Severity::Info,
                    "warn" => Severity::Warn,
                    "error" => Severity::Error,
                    _ => {
                        return Err(ConfigError::InvalidConfigValue {
                            key: "log-level",
                            value: value.to_string(),
                        })
                    }
                };
                self.log_level = level;
            }
            other => return Err(ConfigError::UnknownConfigKey(other.to_string())),
        }
        self.publish(
            now,
            None,
            Topic::GlobalConfig,
            BusMsg::Config { key: key.to_string(), value: value.to_string() },
        );
        Ok(())
    }
}
