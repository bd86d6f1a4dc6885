//! Discrete-event engine: virtual clock, total event order, a single-core
//! FIFO CPU per pouch, and a constant-delay network between endpoints.
//!
//! The kernel is payload-agnostic: callers schedule values of their own
//! payload type `P` and receive them back, in deterministic order, from
//! [`Kernel::next_until`]. All state lives in ordered containers and all
//! arithmetic is integral, so a run is a pure function of its inputs.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use thiserror::Error;

use crate::time::{SimDuration, SimTime};

/// Identifies one pouch (a single-core VM) within a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PouchId(pub u32);

impl std::fmt::Display for PouchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "pouch-{}", self.0)
    }
}

/// Identifies a user agent outside the pouch pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UaId(pub u32);

/// A message source or destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    Pouch(PouchId),
    Ua(UaId),
}

/// Handle for a scheduled event; encodes its slot in the total order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventId {
    at: SimTime,
    seq: u64,
}

/// Constant one-way delays between endpoint classes, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    pub intra_pouch_us: u64,
    pub inter_pouch_us: u64,
    pub ua_us: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { intra_pouch_us: 0, inter_pouch_us: 500, ua_us: 1_000 }
    }
}

/// Minimum pouch speed factor, in milli-units (0.1x reference).
pub const MIN_SPEED_MILLI: u32 = 100;

/// How much busy-interval history each pouch retains for utilization
/// queries.
pub const UTILIZATION_HORIZON: SimDuration = SimDuration(120_000_000);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("cannot schedule at {at:?}: clock already at {now:?}")]
    SchedulingInPast { at: SimTime, now: SimTime },
    #[error("{0} is dead")]
    PouchDead(PouchId),
    #[error("unknown endpoint {0:?}")]
    UnknownEndpoint(Endpoint),
    #[error("speed factor {0} milli below minimum {MIN_SPEED_MILLI}")]
    InvalidSpeed(u32),
    #[error("window {window:?} exceeds available history {limit:?}")]
    WindowTooLarge { window: SimDuration, limit: SimDuration },
    #[error("window must be positive")]
    EmptyWindow,
}

#[derive(Debug)]
struct PouchState {
    pool: String,
    speed_milli: u32,
    busy_until: SimTime,
    cumulative_busy: SimDuration,
    alive: bool,
    /// Bumped on kill so completions submitted before death never fire.
    epoch: u32,
    /// Closed busy intervals, merged when contiguous, pruned beyond the
    /// utilization horizon. Interval ends may lie in the future.
    intervals: VecDeque<(SimTime, SimTime)>,
}

#[derive(Debug)]
enum Stored<P> {
    Timer(P),
    WorkDone { pouch: PouchId, epoch: u32, payload: P },
    Delivery { to: Endpoint, payload: P },
}

/// The event kernel. `P` is the caller's payload type, handed back verbatim
/// when its event fires.
#[derive(Debug)]
pub struct Kernel<P> {
    clock: SimTime,
    seq: u64,
    queue: BTreeMap<(SimTime, u64), Stored<P>>,
    pouches: Vec<PouchState>,
    uas: u32,
    network: NetworkConfig,
    events_processed: u64,
    dropped_deliveries: u64,
    dropped_completions: u64,
    dropped: Vec<P>,
}

impl<P> Kernel<P> {
    pub fn new(network: NetworkConfig) -> Self {
        Kernel {
            clock: SimTime::ZERO,
            seq: 0,
            queue: BTreeMap::new(),
            pouches: Vec::new(),
            uas: 0,
            network,
            events_processed: 0,
            dropped_deliveries: 0,
            dropped_completions: 0,
            dropped: Vec::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }

    /// Deliveries addressed to pouches that were dead on arrival.
    pub fn dropped_deliveries(&self) -> u64 {
        self.dropped_deliveries
    }

    /// Work completions voided by a kill between submission and completion.
    pub fn dropped_completions(&self) -> u64 {
        self.dropped_completions
    }

    /// Payloads consumed without firing (dead-pouch deliveries, voided
    /// completions) since the last call. The driver owns their accounting.
    pub fn take_dropped(&mut self) -> Vec<P> {
        std::mem::take(&mut self.dropped)
    }

    pub fn network(&self) -> NetworkConfig {
        self.network
    }

    /// Add a pouch to the pool. Speed is in milli-units of the reference
    /// pouch (1000 = 1.0x).
    pub fn add_pouch(&mut self, pool: &str, speed_milli: u32) -> Result<PouchId, KernelError> {
        if speed_milli < MIN_SPEED_MILLI {
            return Err(KernelError::InvalidSpeed(speed_milli));
        }
        let id = PouchId(self.pouches.len() as u32);
        self.pouches.push(PouchState {
            pool: pool.to_string(),
            speed_milli,
            busy_until: self.clock,
            cumulative_busy: SimDuration::ZERO,
            alive: true,
            epoch: 0,
            intervals: VecDeque::new(),
        });
        Ok(id)
    }

    pub fn add_ua(&mut self) -> UaId {
        let id = UaId(self.uas);
        self.uas += 1;
        id
    }

    fn pouch(&self, id: PouchId) -> Result<&PouchState, KernelError> {
        self.pouches
            .get(id.0 as usize)
            .ok_or(KernelError::UnknownEndpoint(Endpoint::Pouch(id)))
    }

    pub fn pouch_count(&self) -> u32 {
        self.pouches.len() as u32
    }

    pub fn is_alive(&self, id: PouchId) -> bool {
        self.pouches.get(id.0 as usize).map(|p| p.alive) == Some(true)
    }

    pub fn pool_of(&self, id: PouchId) -> Result<&str, KernelError> {
        Ok(self.pouch(id)?.pool.as_str())
    }

    pub fn speed_milli_of(&self, id: PouchId) -> Result<u32, KernelError> {
        Ok(self.pouch(id)?.speed_milli)
    }

    /// All pouch ids that are currently alive, in id order.
    pub fn alive_pouches(&self) -> Vec<PouchId> {
        self.pouches
            .iter()
            .enumerate()
            .filter(|(_, p)| p.alive)
            .map(|(i, _)| PouchId(i as u32))
            .collect()
    }

    fn check_endpoint(&self, e: Endpoint) -> Result<(), KernelError> {
        let known = match e {
            Endpoint::Pouch(p) => (p.0 as usize) < self.pouches.len(),
            Endpoint::Ua(u) => u.0 < self.uas,
        };
        if known {
            Ok(())
        } else {
            Err(KernelError::UnknownEndpoint(e))
        }
    }

    fn push(&mut self, at: SimTime, stored: Stored<P>) -> EventId {
        let seq = self.seq;
        self.seq += 1;
        self.queue.insert((at, seq), stored);
        EventId { at, seq }
    }

    /// Schedule a plain timer event.
    pub fn schedule(&mut self, at: SimTime, payload: P) -> Result<EventId, KernelError> {
        if at < self.clock {
            return Err(KernelError::SchedulingInPast { at, now: self.clock });
        }
        Ok(self.push(at, Stored::Timer(payload)))
    }

    /// Remove a not-yet-fired event. Returns false when it already fired or
    /// was cancelled before.
    pub fn cancel(&mut self, id: EventId) -> bool {
        self.queue.remove(&(id.at, id.seq)).is_some()
    }

    /// Queue `cost_us` of reference-speed work on a pouch's single core. The
    /// payload fires when the work completes: at `max(now, busy-until)`
    /// plus the cost scaled by the pouch speed. Returns the completion time.
    pub fn execute_work(
        &mut self,
        pouch: PouchId,
        cost_us: u64,
        payload: P,
    ) -> Result<SimTime, KernelError> {
        let now = self.clock;
        let state = self
            .pouches
            .get_mut(pouch.0 as usize)
            .ok_or(KernelError::UnknownEndpoint(Endpoint::Pouch(pouch)))?;
        if !state.alive {
            return Err(KernelError::PouchDead(pouch));
        }
        let smilli = u64::from(state.speed_milli);
        let dur = SimDuration((cost_us * 1_000 + smilli / 2) / smilli);
        let start = state.busy_until.max(now);
        let done = start + dur;
        state.busy_until = done;
        state.cumulative_busy += dur;
        if dur > SimDuration::ZERO {
            match state.intervals.back_mut() {
                Some(last) if last.1 == start => last.1 = done,
                _ => state.intervals.push_back((start, done)),
            }
        }
        let cutoff = SimTime(now.0.saturating_sub(UTILIZATION_HORIZON.0));
        while state.intervals.front().is_some_and(|iv| iv.1 < cutoff) {
            state.intervals.pop_front();
        }
        let epoch = state.epoch;
        self.push(done, Stored::WorkDone { pouch, epoch, payload });
        Ok(done)
    }

    /// Send a payload between endpoints; it arrives after the class delay
    /// (intra-pouch, inter-pouch, or UA leg). Arrival at a dead pouch is
    /// silently dropped and counted. Returns the delivery time.
    pub fn transmit(
        &mut self,
        from: Endpoint,
        to: Endpoint,
        payload: P,
    ) -> Result<SimTime, KernelError> {
        self.check_endpoint(from)?;
        self.check_endpoint(to)?;
        let delay = match (from, to) {
            (Endpoint::Ua(_), _) | (_, Endpoint::Ua(_)) => self.network.ua_us,
            (Endpoint::Pouch(a), Endpoint::Pouch(b)) if a == b => self.network.intra_pouch_us,
            (Endpoint::Pouch(_), Endpoint::Pouch(_)) => self.network.inter_pouch_us,
        };
        let at = self.clock + SimDuration(delay);
        self.push(at, Stored::Delivery { to, payload });
        Ok(at)
    }

    /// Mark a pouch dead: queued work is voided, in-flight deliveries to it
    /// will be dropped, and busy accounting is truncated to now.
    pub fn kill(&mut self, pouch: PouchId) -> Result<(), KernelError> {
        let now = self.clock;
        let state = self
            .pouches
            .get_mut(pouch.0 as usize)
            .ok_or(KernelError::UnknownEndpoint(Endpoint::Pouch(pouch)))?;
        if !state.alive {
            return Ok(());
        }
        state.alive = false;
        state.epoch += 1;
        if state.busy_until > now {
            state.cumulative_busy.0 -= (state.busy_until - now).0;
            state.busy_until = now;
            while state.intervals.back().is_some_and(|iv| iv.0 >= now) {
                state.intervals.pop_back();
            }
            if let Some(last) = state.intervals.back_mut() {
                if last.1 > now {
                    last.1 = now;
                }
            }
        }
        Ok(())
    }

    /// Busy microseconds accrued within `[now − window, now]`.
    pub fn busy_in_window(
        &self,
        pouch: PouchId,
        window: SimDuration,
    ) -> Result<u64, KernelError> {
        if window == SimDuration::ZERO {
            return Err(KernelError::EmptyWindow);
        }
        let elapsed = SimDuration(self.clock.0);
        let limit = elapsed.min(UTILIZATION_HORIZON);
        if window > limit {
            return Err(KernelError::WindowTooLarge { window, limit });
        }
        let state = self.pouch(pouch)?;
        let lo = self.clock.0 - window.0;
        let hi = self.clock.0;
        let mut busy = 0;
        for &(s, e) in &state.intervals {
            let s = s.0.max(lo);
            let e = e.0.min(hi);
            if e > s {
                busy += e - s;
            }
        }
        Ok(busy)
    }

    /// Busy fraction of the window, in [0, 1].
    pub fn cpu_utilization(
        &self,
        pouch: PouchId,
        window: SimDuration,
    ) -> Result<f64, KernelError> {
        let busy = self.busy_in_window(pouch, window)?;
        Ok(busy as f64 / window.0 as f64)
    }

    /// Busy permille of the window (exact integer arithmetic), in 0..=1000.
    pub fn utilization_milli(
        &self,
        pouch: PouchId,
        window: SimDuration,
    ) -> Result<u32, KernelError> {
        let busy = self.busy_in_window(pouch, window)?;
        Ok((busy * 1_000 / window.0) as u32)
    }

    /// Pop the next event at or before `t_end`, advancing the clock to its
    /// fire time. Returns `None` when no such event remains (the clock is
    /// then left where it was; see [`Kernel::advance_to`]). Dead-pouch
    /// deliveries and stale completions are consumed and counted here.
    pub fn next_until(&mut self, t_end: SimTime) -> Option<(SimTime, P)> {
        loop {
            let (&(at, _), _) = self.queue.first_key_value()?;
            if at > t_end {
                return None;
            }
            let ((at, _), stored) = self.queue.pop_first().expect("peeked entry");
            debug_assert!(at >= self.clock, "event order violates causality");
            self.clock = at;
            self.events_processed += 1;
            match stored {
                Stored::Timer(p) => return Some((at, p)),
                Stored::WorkDone { pouch, epoch, payload } => {
                    let state = &self.pouches[pouch.0 as usize];
                    if state.alive && state.epoch == epoch {
                        return Some((at, payload));
                    }
                    self.dropped_completions += 1;
                    self.dropped.push(payload);
                }
                Stored::Delivery { to, payload } => match to {
                    Endpoint::Pouch(p) if !self.pouches[p.0 as usize].alive => {
                        self.dropped_deliveries += 1;
                        self.dropped.push(payload);
                    }
                    _ => return Some((at, payload)),
                },
            }
        }
    }

    /// Move the clock forward to `t` (no-op if already past it).
    pub fn advance_to(&mut self, t: SimTime) {
        self.clock = self.clock.max(t);
    }

    /// Drain and dispatch all events up to and including `t_end`, leaving
    /// the clock at `t_end`. Returns how many events were dispatched.
    pub fn run_until(
        &mut self,
        t_end: SimTime,
        mut handler: impl FnMut(&mut Self, SimTime, P),
    ) -> u64 {
        let mut n = 0;
        while let Some((t, p)) = self.next_until(t_end) {
            n += 1;
            handler(self, t, p);
        }
        self.advance_to(t_end);
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel() -> Kernel<&'static str> {
        Kernel::new(NetworkConfig::default())
    }

    #[test]
    fn same_time_events_fire_in_scheduling_order() {
        let mut k = kernel();
        k.schedule(SimTime(5_000), "A").unwrap();
        k.schedule(SimTime(5_000), "B").unwrap();
        let mut seen = Vec::new();
        k.run_until(SimTime(10_000), |_, _, p| seen.push(p));
        assert_eq!(seen, ["A", "B"]);
    }

    #[test]
    fn event_at_now_fires_before_later_events() {
        let mut k = kernel();
        k.schedule(SimTime(50), "later").unwrap();
        k.schedule(SimTime(0), "now").unwrap();
        let mut seen = Vec::new();
        k.run_until(SimTime(100), |_, _, p| seen.push(p));
        assert_eq!(seen, ["now", "later"]);
    }

    #[test]
    fn scheduling_in_past_is_rejected() {
        let mut k = kernel();
        k.schedule(SimTime(10), "x").unwrap();
        k.run_until(SimTime(10), |_, _, _| {});
        assert_eq!(
            k.schedule(SimTime(9), "y"),
            Err(KernelError::SchedulingInPast { at: SimTime(9), now: SimTime(10) })
        );
    }

    #[test]
    fn run_until_on_empty_queue_advances_clock() {
        let mut k = kernel();
        let n = k.run_until(SimTime(100_000), |_, _, _| {});
        assert_eq!(n, 0);
        assert_eq!(k.now(), SimTime(100_000));
    }

    #[test]
    fn run_until_processes_only_due_events() {
        let mut k = kernel();
        for t in [10_000, 20_000, 30_000] {
            k.schedule(SimTime(t), "e").unwrap();
        }
        let n = k.run_until(SimTime(25_000), |_, _, _| {});
        assert_eq!(n, 2);
        assert_eq!(k.now(), SimTime(25_000));
        assert_eq!(k.run_until(SimTime(35_000), |_, _, _| {}), 1);
    }

    #[test]
    fn handler_scheduled_due_event_fires_in_same_call() {
        let mut k = kernel();
        k.schedule(SimTime(10), "first").unwrap();
        let mut seen = Vec::new();
        k.run_until(SimTime(20), |k, t, p| {
            seen.push(p);
            if p == "first" {
                k.schedule(t, "chained").unwrap();
            }
        });
        assert_eq!(seen, ["first", "chained"]);
    }

    #[test]
    fn cancel_prevents_firing() {
        let mut k = kernel();
        let id = k.schedule(SimTime(10), "x").unwrap();
        assert!(k.cancel(id));
        assert!(!k.cancel(id));
        assert_eq!(k.run_until(SimTime(20), |_, _, _| {}), 0);
    }

    #[test]
    fn work_on_idle_pouch_completes_after_cost() {
        let mut k = kernel();
        let p = k.add_pouch("cu", 1_000).unwrap();
        k.schedule(SimTime(10_000), "go").unwrap();
        let mut done = None;
        k.run_until(SimTime(20_000), |k, _, ev| {
            if ev == "go" {
                k.execute_work(p, 2_000, "done").unwrap();
            } else {
                done = Some(k.now());
            }
        });
        assert_eq!(done, Some(SimTime(12_000)));
    }

    #[test]
    fn work_on_busy_pouch_queues_fifo() {
        let mut k = kernel();
        let p = k.add_pouch("cu", 1_000).unwrap();
        // First job runs 10..15 ms; the second, submitted at 10, waits.
        k.schedule(SimTime(10_000), "go").unwrap();
        let mut order = Vec::new();
        k.run_until(SimTime(30_000), |k, t, ev| match ev {
            "go" => {
                k.execute_work(p, 5_000, "first").unwrap();
                let done = k.execute_work(p, 2_000, "second").unwrap();
                assert_eq!(done, SimTime(17_000));
            }
            other => order.push((other, t)),
        });
        assert_eq!(
            order,
            [("first", SimTime(15_000)), ("second", SimTime(17_000))]
        );
    }

    #[test]
    fn fast_pouch_scales_cost() {
        let mut k = kernel();
        let p = k.add_pouch("fast", 2_000).unwrap();
        let done = k.execute_work(p, 2_000, "d").unwrap();
        assert_eq!(done, SimTime(1_000));
        let slow = k.add_pouch("slow", 500).unwrap();
        let done = k.execute_work(slow, 2_000, "d").unwrap();
        assert_eq!(done, SimTime(4_000));
    }

    #[test]
    fn zero_cost_work_respects_fifo_position() {
        let mut k = kernel();
        let p = k.add_pouch("cu", 1_000).unwrap();
        k.execute_work(p, 5_000, "big").unwrap();
        let done = k.execute_work(p, 0, "free").unwrap();
        assert_eq!(done, SimTime(5_000));
        let mut order = Vec::new();
        k.run_until(SimTime(5_000), |_, _, p| order.push(p));
        assert_eq!(order, ["big", "free"]);
    }

    #[test]
    fn too_slow_pouch_is_rejected() {
        let mut k = kernel();
        assert_eq!(k.add_pouch("x", 99).unwrap_err(), KernelError::InvalidSpeed(99));
    }

    #[test]
    fn transmit_delays_by_endpoint_class() {
        let mut k = kernel();
        let p1 = k.add_pouch("a", 1_000).unwrap();
        let p2 = k.add_pouch("a", 1_000).unwrap();
        let ua = k.add_ua();
        let e1 = Endpoint::Pouch(p1);
        let e2 = Endpoint::Pouch(p2);
        let eu = Endpoint::Ua(ua);
        assert_eq!(k.transmit(e1, e1, "m").unwrap(), SimTime(0));
        assert_eq!(k.transmit(e1, e2, "m").unwrap(), SimTime(500));
        assert_eq!(k.transmit(eu, e1, "m").unwrap(), SimTime(1_000));
        assert_eq!(k.transmit(e1, eu, "m").unwrap(), SimTime(1_000));
        assert_eq!(
            k.transmit(e1, Endpoint::Ua(UaId(7)), "m").unwrap_err(),
            KernelError::UnknownEndpoint(Endpoint::Ua(UaId(7)))
        );
    }

    #[test]
    fn delivery_to_dead_pouch_is_dropped_and_counted() {
        let mut k = kernel();
        let p1 = k.add_pouch("a", 1_000).unwrap();
        let p2 = k.add_pouch("a", 1_000).unwrap();
        k.transmit(Endpoint::Pouch(p1), Endpoint::Pouch(p2), "m").unwrap();
        k.kill(p2).unwrap();
        let n = k.run_until(SimTime(1_000), |_, _, _| {});
        assert_eq!(n, 0);
        assert_eq!(k.dropped_deliveries(), 1);
    }

    #[test]
    fn kill_voids_pending_work() {
        let mut k = kernel();
        let p = k.add_pouch("a", 1_000).unwrap();
        k.execute_work(p, 5_000, "w").unwrap();
        k.kill(p).unwrap();
        let n = k.run_until(SimTime(10_000), |_, _, _| {});
        assert_eq!(n, 0);
        assert_eq!(k.dropped_completions(), 1);
        assert!(matches!(
            k.execute_work(p, 1_000, "w"),
            Err(KernelError::PouchDead(_))
        ));
    }

    #[test]
    fn utilization_counts_busy_share_of_window() {
        let mut k = kernel();
        let p = k.add_pouch("a", 1_000).unwrap();
        // 250 ms of work starting at t=0, then idle until t=1000 ms.
        k.execute_work(p, 250_000, "w").unwrap();
        k.run_until(SimTime(1_000_000), |_, _, _| {});
        let w = SimDuration::from_millis(1_000);
        assert_eq!(k.cpu_utilization(p, w).unwrap(), 0.25);
        assert_eq!(k.utilization_milli(p, w).unwrap(), 250);
        // A window covering only idle time.
        assert_eq!(
            k.cpu_utilization(p, SimDuration::from_millis(500)).unwrap(),
            0.0
        );
    }

    #[test]
    fn utilization_saturates_at_one() {
        let mut k = kernel();
        let p = k.add_pouch("a", 1_000).unwrap();
        k.execute_work(p, 2_000_000, "w").unwrap();
        k.run_until(SimTime(1_000_000), |_, _, _| {});
        let w = SimDuration::from_millis(1_000);
        assert_eq!(k.cpu_utilization(p, w).unwrap(), 1.0);
    }

    #[test]
    fn utilization_window_must_fit_history() {
        let mut k = kernel();
        let p = k.add_pouch("a", 1_000).unwrap();
        k.run_until(SimTime(10_000), |_, _, _| {});
        // Larger than elapsed time.
        assert!(matches!(
            k.cpu_utilization(p, SimDuration::from_millis(11)),
            Err(KernelError::WindowTooLarge { .. })
        ));
        assert_eq!(
            k.cpu_utilization(p, SimDuration::ZERO),
            Err(KernelError::EmptyWindow)
        );
        // Larger than the retained horizon, even when elapsed time allows.
        k.run_until(SimTime(200_000_000), |_, _, _| {});
        assert!(matches!(
            k.cpu_utilization(p, SimDuration(150_000_000)),
            Err(KernelError::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn cumulative_busy_is_conserved() {
        let mut k = kernel();
        let a = k.add_pouch("x", 1_000).unwrap();
        let b = k.add_pouch("x", 2_000).unwrap();
        k.execute_work(a, 3_000, "w").unwrap();
        k.execute_work(a, 1_000, "w").unwrap();
        k.execute_work(b, 3_000, "w").unwrap();
        k.run_until(SimTime(10_000), |_, _, _| {});
        let total: u64 = [a, b]
            .iter()
            .map(|&p| k.busy_in_window(p, SimDuration::from_millis(10)).unwrap())
            .sum();
        // 3000 + 1000 at speed 1.0, plus 3000 at speed 2.0 → 1500.
        assert_eq!(total, 5_500);
    }
}
