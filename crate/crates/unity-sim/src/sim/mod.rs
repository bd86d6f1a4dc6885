//! Runtime world: pouches, middleware state, telephony units and the
//! dispatch loop that ties them to the event kernel.
//!
//! The `World` owns everything a single simulation run touches. Message
//! passing between units goes through [`World::send`]: the kernel applies
//! the network delay class, delivery charges the destination pouch with the
//! handler cost (in quantum-sized slices so long jobs interleave), and the
//! unit's handler logic runs when the final slice completes. All shared
//! state lives in ordered containers so a run is a pure function of
//! (descriptor, scenario, seed).

pub mod hss;
pub mod media;
pub mod orchestrator;
pub mod units;

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore as _;
use thiserror::Error;

use crate::descriptor::{CostModel, DeploymentMode, Descriptor, ElasticityConfig};
use crate::ids::{Bus, LogEntry, Severity, Topic};
use crate::kernel::{Endpoint, Kernel, PouchId, UaId};
use crate::nss::LoadView;
use crate::rng::RandomStreams;
use crate::sim::hss::{Hss, Profile};
use crate::sim::orchestrator::Mmo;
use crate::sim::units::{UaState, UnitRec};
use crate::time::{SimDuration, SimTime};
use crate::unit::{UnitAddress, UnitId, UnitType};
use sip_codec::{Codec, SdpBody, SipMessage};

/// Pouches publish a utilization sample once per interval; the patrol and
/// staleness rules are all expressed in multiples of it.
pub const MONITOR_INTERVAL: SimDuration = SimDuration(1_000_000);

/// A call still pending this long after arrival is failed with a 500.
pub const CALL_GUARD: SimDuration = SimDuration(5_000_000);

/// Who emitted or receives a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sender {
    Unit(UnitAddress),
    Ua(UaId),
    /// Deploy-time wiring, orchestration commands, locally synthesized
    /// replies. Transmits intra-pouch (zero delay).
    System,
}

/// Outcome of a profile fetch as seen by the requester.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProfileResult {
    Found(Profile),
    NotFound,
    /// Directory chain unavailable (no live front end or agent).
    Unavailable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaceFailure {
    NoEligiblePouch,
}

/// How the negotiator should obtain the mixer for its side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MediaRole {
    /// Originating side: spawn a mixer on the given pouch.
    SpawnMixer(PouchId),
    /// Terminating side: the originating mixer already exists.
    Join(UnitAddress),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegotiatedMedia {
    pub answer: SdpBody,
    pub mixer: UnitAddress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegotiateFailure {
    NoCommonCodec,
    MixerUnavailable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegKind {
    Primary,
    Conference,
}

/// Context handed from the originating session unit to a terminating one.
#[derive(Debug, Clone)]
pub struct ForwardCtx {
    pub call: u32,
    pub invite: SipMessage,
    pub answer: SdpBody,
    pub mixer: UnitAddress,
    pub orig: UnitAddress,
    pub leg: LegKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TelephonyEvent {
    Answered { call: u32 },
    Ending { call: u32 },
    ConferenceAdd { call: u32, target: String },
}

/// The protocol between units. SIP signaling travels parsed; the UA edge
/// carries raw bytes so the codec sits on the ingress path.
#[derive(Debug, Clone)]
pub enum UnitMsg {
    /// Raw SIP from a UA, parsed by the handler unit.
    SipText(String),
    /// Parsed SIP between units.
    Sip(SipMessage),
    /// Session handoff to the peer side's session unit.
    ForwardInvite(Box<ForwardCtx>),
    PlaceRequest {
        call: Option<u32>,
        queries: Vec<(UnitType, String)>,
    },
    PlaceReply {
        call: Option<u32>,
        results: Vec<(UnitType, Result<PouchId, PlaceFailure>)>,
    },
    ProfileQuery { impu: String },
    ProfileReply {
        impu: String,
        result: ProfileResult,
        cache_hit: bool,
    },
    DiahQuery { impu: String },
    DiahReply { impu: String, result: ProfileResult },
    NegotiateRequest {
        call: u32,
        offer: SdpBody,
        media: MediaRole,
    },
    NegotiateReply {
        call: u32,
        result: Result<NegotiatedMedia, NegotiateFailure>,
    },
    MediaStart { call: u32 },
    MediaAddLeg { call: u32 },
    MediaStop { call: u32 },
    TEvent(TelephonyEvent),
    Dtmf {
        call: u32,
        digits: String,
        target: Option<String>,
    },
    /// Middleware control: remove the destination unit. Handled by the
    /// pouch middleware at delivery, idempotently, at zero cost.
    Terminate,
}

#[derive(Debug, Clone)]
pub struct Envelope {
    pub from: Sender,
    pub to: UnitAddress,
    pub msg: UnitMsg,
}

/// Initial state shipped with a spawn command.
#[derive(Debug, Clone)]
pub enum UnitInit {
    SipH,
    Nss,
    H,
    Diah,
    C { call: u32, side: Side },
    T { call: u32, side: Side, adhoc: bool, c: UnitAddress },
    A { call: u32, side: Side },
    M { call: u32 },
}

impl UnitInit {
    pub fn unit_type(&self) -> UnitType {
        match self {
            UnitInit::SipH => UnitType::SipH,
            UnitInit::Nss => UnitType::Nss,
            UnitInit::H => UnitType::H,
            UnitInit::Diah => UnitType::Diah,
            UnitInit::C { .. } => UnitType::C,
            UnitInit::T { .. } => UnitType::T,
            UnitInit::A { .. } => UnitType::A,
            UnitInit::M { .. } => UnitType::M,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Orig,
    Term,
    Third,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Orig => "orig",
            Side::Term => "term",
            Side::Third => "third",
        }
    }
}

/// Bus subscribers. Middleware instances subscribe per pouch; the
/// orchestrator and the selector service are singletons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusClient {
    Cmw(PouchId),
    Nss,
    Mmo,
}

#[derive(Debug, Clone)]
pub enum BusMsg {
    Util {
        pouch: PouchId,
        util_milli: u32,
        units: u32,
        dead_letters: u64,
    },
    Resolving { addr: UnitAddress, up: bool },
    PouchDown { pouch: PouchId },
    PouchUp { pouch: PouchId, pool: String },
    Scale { pouch: PouchId, added: bool },
    Config { key: String, value: String },
    Log(LogEntry),
}

/// Scheduled UA behavior.
#[derive(Debug, Clone)]
pub enum UaAction {
    SendRegister,
    SendBye { sip_call_id: String },
    SendDtmf {
        sip_call_id: String,
        digits: String,
        target: String,
    },
}

/// Everything the kernel can hand back to the dispatch loop.
#[derive(Debug, Clone)]
pub enum Payload {
    Deliver(Envelope),
    /// One CPU quantum of a handler; `remaining_us` still to burn. The
    /// handler logic runs when the last slice completes.
    Slice { env: Envelope, remaining_us: u64 },
    SpawnCmd { addr: UnitAddress, init: UnitInit },
    /// CPU cost of unit activation; completion is a no-op.
    SpawnWork { unit: UnitId },
    UaRx { ua: UaId, text: String },
    UaAct { ua: UaId, act: UaAction },
    Bus {
        client: BusClient,
        topic: Topic,
        msg: BusMsg,
    },
    MediaTick { unit: UnitId, k: u64 },
    MediaWork { unit: UnitId, k: u64 },
    MonitorTick { pouch: PouchId },
    MmoPatrol,
    CallArrival { k: u64 },
    Rereg { n: u64 },
    CallGuard { call: u32 },
    KillPouch { pouch: PouchId },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpawnError {
    #[error("target {0} is not alive")]
    PouchDead(PouchId),
    #[error("{unit_type:?} is not pinned to {pouch}")]
    PinningViolation { unit_type: UnitType, pouch: PouchId },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ResolveError {
    #[error("`{0}` is not a resolvable service")]
    ServiceUnknown(String),
    #[error("no live instance of {0}")]
    NoLiveInstance(&'static str),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CmwError {
    #[error("{0} already has a middleware instance")]
    DuplicateCmw(PouchId),
}

/// Per-pouch middleware: resolve table, round-robin cursors, the local
/// profile cache and dead-letter accounting.
#[derive(Debug)]
pub struct CmwRt {
    pub pouch: PouchId,
    resolve: BTreeMap<&'static str, Vec<UnitAddress>>,
    rr: BTreeMap<&'static str, usize>,
    cache: BTreeMap<String, Profile>,
    pub supported_codecs: Vec<Codec>,
    pub dead_letters: u64,
}

impl CmwRt {
    fn new(pouch: PouchId, supported_codecs: Vec<Codec>) -> Self {
        CmwRt {
            pouch,
            resolve: BTreeMap::new(),
            rr: BTreeMap::new(),
            cache: BTreeMap::new(),
            supported_codecs,
            dead_letters: 0,
        }
    }

    /// Fold one resolving update into the table. Only service units carry a
    /// resolve key; per-session unit updates pass through untouched.
    fn fold_resolving(&mut self, addr: UnitAddress, up: bool) {
        let Some(key) = addr.unit_type.service_key() else {
            return;
        };
        let list = self.resolve.entry(key).or_default();
        if up {
            if !list.contains(&addr) {
                list.push(addr);
            }
        } else {
            list.retain(|a| *a != addr);
        }
    }

    fn prune_pouch(&mut self, pouch: PouchId) {
        for list in self.resolve.values_mut() {
            list.retain(|a| a.pouch != pouch);
        }
    }

    fn next_instance(&mut self, key: &'static str) -> Option<UnitAddress> {
        let list = self.resolve.get(key)?;
        if list.is_empty() {
            return None;
        }
        let cursor = self.rr.entry(key).or_insert(0);
        let addr = list[*cursor % list.len()];
        *cursor = (*cursor % list.len()) + 1;
        Some(addr)
    }

    pub fn cached_profile(&self, impu: &str) -> Option<&Profile> {
        self.cache.get(impu)
    }

    pub fn resolve_entries(&self, key: &str) -> &[UnitAddress] {
        self.resolve.get(key).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallOutcome {
    Pending,
    Established,
    TornDown,
    Failed(u16),
    Abandoned,
    Dropped,
}

impl CallOutcome {
    pub fn is_terminal(self) -> bool {
        !matches!(self, CallOutcome::Pending | CallOutcome::Established)
    }

    /// Column value for the call report.
    pub fn label(self) -> String {
        match self {
            CallOutcome::Pending => "pending".to_string(),
            CallOutcome::Established | CallOutcome::TornDown => "established".to_string(),
            CallOutcome::Failed(code) => format!("failed:{code}"),
            CallOutcome::Abandoned => "abandoned".to_string(),
            CallOutcome::Dropped => "dropped".to_string(),
        }
    }
}

/// One call attempt, from INVITE emission to teardown.
#[derive(Debug)]
pub struct Call {
    pub id: u32,
    pub sip_call_id: String,
    pub caller: UaId,
    pub callee: UaId,
    pub caller_impu: String,
    pub callee_impu: String,
    pub arrived: SimTime,
    pub t_rx: Option<SimTime>,
    pub t_tx: Option<SimTime>,
    pub answered: Option<SimTime>,
    pub outcome: CallOutcome,
    pub c_orig: Option<UnitAddress>,
    pub c_term: Option<UnitAddress>,
    pub t_orig: Option<UnitAddress>,
    pub negotiated: Option<Codec>,
    /// Every pouch a per-session unit of this call was placed on.
    pub unit_pouches: BTreeSet<PouchId>,
    pub conference: bool,
}

#[derive(Debug, Default)]
pub struct Counters {
    pub msg_sent: u64,
    pub msg_handled: u64,
    pub dead_letters: u64,
    pub units_spawned: u64,
    pub units_terminated: u64,
    /// Units that disappeared with a dead pouch rather than by teardown.
    pub units_lost: u64,
    pub per_call_spawned: u64,
    pub per_call_terminated: u64,
    pub per_call_lost: u64,
    pub attempted: u64,
    pub established: u64,
    pub torn_down: u64,
    pub failed: u64,
    pub abandoned: u64,
    pub dropped: u64,
    pub registrations: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct CpuSample {
    pub at: SimTime,
    pub pouch: PouchId,
    pub util_milli: u32,
    pub concurrent: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct MediaSample {
    pub call: u32,
    pub k: u64,
    pub offset_us: u64,
}

#[derive(Debug, Default)]
pub struct Samples {
    pub cpu: Vec<CpuSample>,
    pub media: Vec<MediaSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalKind {
    Deterministic,
    Exponential,
}

/// Offered traffic: piecewise-constant rate phases starting at `start`.
#[derive(Debug, Clone)]
pub struct TrafficPlan {
    pub start: SimTime,
    /// (milli-calls per minute, span) pairs; a zero rate is a quiet phase.
    pub phases: Vec<(u64, SimDuration)>,
    pub call_duration: SimDuration,
    /// Microseconds between re-registrations, if any.
    pub rereg_interval_us: Option<u64>,
    pub subscribers: u32,
    pub arrival: ArrivalKind,
}

impl TrafficPlan {
    pub fn end(&self) -> SimTime {
        let total: u64 = self.phases.iter().map(|(_, d)| d.0).sum();
        self.start + SimDuration(total)
    }

    /// First arrival instant, if the plan offers any traffic at all.
    pub fn first_arrival(&self) -> Option<SimTime> {
        let mut t = self.start;
        for &(rate, span) in &self.phases {
            if rate > 0 && span > SimDuration::ZERO {
                return Some(t);
            }
            t = t + span;
        }
        None
    }

    fn phase_at(&self, t: SimTime) -> Option<(u64, SimTime, SimTime)> {
        let mut s = self.start;
        for &(rate, span) in &self.phases {
            let e = s + span;
            if t >= s && t < e {
                return Some((rate, s, e));
            }
            s = e;
        }
        None
    }

    fn next_phase_start_after(&self, t: SimTime) -> Option<SimTime> {
        let mut s = self.start;
        for &(rate, span) in &self.phases {
            if s > t && rate > 0 && span > SimDuration::ZERO {
                return Some(s);
            }
            s = s + span;
        }
        None
    }

    /// Next deterministic arrival strictly after one at `t`.
    fn next_deterministic(&self, t: SimTime) -> Option<SimTime> {
        let (rate, _, end) = self.phase_at(t)?;
        debug_assert!(rate > 0);
        let spacing = 60_000_000_000 / rate;
        let cand = t + SimDuration(spacing);
        if cand < end {
            Some(cand)
        } else {
            self.next_phase_start_after(t)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleKind {
    AddPouch(PouchId),
    RemovePouch(PouchId),
    PouchDown(PouchId),
}

#[derive(Debug, Clone, Copy)]
pub struct ScaleEvent {
    pub at: SimTime,
    pub kind: ScaleKind,
    pub mean_util_milli: u32,
}

#[derive(Debug)]
struct PoolRuntime {
    id: String,
    speed_milli: u32,
    max: u32,
    initial: u32,
    live: u32,
}

/// Addresses of the deploy-time service singletons.
#[derive(Debug, Clone, Copy)]
pub struct BaseAddrs {
    pub siph: UnitAddress,
    pub nss: UnitAddress,
    pub h: UnitAddress,
    pub diah: UnitAddress,
}

pub struct World {
    pub kernel: Kernel<Payload>,
    pub costs: CostModel,
    pub mode: DeploymentMode,
    pub elasticity: ElasticityConfig,
    pools: Vec<PoolRuntime>,
    pouch_pool: Vec<usize>,
    cmws: BTreeMap<PouchId, CmwRt>,
    pub bus: Bus<BusClient>,
    pub(crate) units: BTreeMap<UnitId, UnitRec>,
    next_unit: u64,
    pouch_units: BTreeMap<PouchId, BTreeSet<UnitId>>,
    live_c: BTreeMap<PouchId, u32>,
    live_c_by_call: BTreeMap<(PouchId, u32), u32>,
    pub hss: Hss,
    pub(crate) nss_view: LoadView,
    pub base: BaseAddrs,
    pub mmo: Mmo,
    pub(crate) uas: Vec<UaState>,
    pub calls: Vec<Call>,
    pub(crate) call_index: BTreeMap<String, u32>,
    pub counters: Counters,
    pub samples: Samples,
    pub logs: Vec<LogEntry>,
    pub log_level: Severity,
    window: (SimTime, SimTime),
    pub(crate) rng: RandomStreams,
    pub plan: TrafficPlan,
    pub scale_events: Vec<ScaleEvent>,
    pub(crate) concurrent: u32,
    open_calls: u32,
}

impl World {
    /// Builds the world, adds the initial pouches and UAs, places the base
    /// service units and starts the monitoring clocks. Traffic is armed
    /// separately by [`World::start_traffic`].
    pub fn new(desc: &Descriptor, plan: TrafficPlan, seed: u64, window: (SimTime, SimTime)) -> Self {
        let default_codecs = vec![Codec::Pcmu, Codec::Pcma, Codec::TelephoneEvent];
        let mut kernel = Kernel::new(desc.network);
        let mut pools = Vec::new();
        let mut pouch_pool = Vec::new();
        let mut pouch_ids = Vec::new();
        for (pi, p) in desc.pools.iter().enumerate() {
            pools.push(PoolRuntime {
                id: p.id.clone(),
                speed_milli: p.speed_milli,
                max: p.max,
                initial: p.initial,
                live: p.initial,
            });
            for _ in 0..p.initial {
                let id = kernel
                    .add_pouch(&p.id, p.speed_milli)
                    .expect("descriptor-validated pool speed");
                pouch_pool.push(pi);
                pouch_ids.push(id);
            }
        }
        let mut uas = Vec::new();
        for n in 0..plan.subscribers {
            let ua = kernel.add_ua();
            debug_assert_eq!(ua.0, n);
            uas.push(UaState::new(ua, n));
        }
        let hss = Hss::generate(plan.subscribers);

        let mut world = World {
            kernel,
            costs: desc.costs.clone(),
            mode: desc.mode.clone(),
            elasticity: desc.elasticity.clone(),
            pools,
            pouch_pool,
            cmws: BTreeMap::new(),
            bus: Bus::new(),
            units: BTreeMap::new(),
            next_unit: 1,
            pouch_units: BTreeMap::new(),
            live_c: BTreeMap::new(),
            live_c_by_call: BTreeMap::new(),
            hss,
            nss_view: LoadView::new(MONITOR_INTERVAL.0),
            // Placeholder until the base units are placed below.
            base: BaseAddrs {
                siph: UnitAddress { unit_type: UnitType::SipH, id: UnitId(0), pouch: PouchId(0) },
                nss: UnitAddress { unit_type: UnitType::Nss, id: UnitId(0), pouch: PouchId(0) },
                h: UnitAddress { unit_type: UnitType::H, id: UnitId(0), pouch: PouchId(0) },
                diah: UnitAddress { unit_type: UnitType::Diah, id: UnitId(0), pouch: PouchId(0) },
            },
            mmo: Mmo::new(MONITOR_INTERVAL.0, default_codecs.clone()),
            uas,
            calls: Vec::new(),
            call_index: BTreeMap::new(),
            counters: Counters::default(),
            samples: Samples::default(),
            logs: Vec::new(),
            log_level: Severity::Info,
            window,
            rng: RandomStreams::new(seed),
            plan,
            scale_events: Vec::new(),
            concurrent: 0,
            open_calls: 0,
        };
        world.deploy(&pouch_ids, default_codecs);
        world
    }

    fn deploy(&mut self, pouches: &[PouchId], default_codecs: Vec<Codec>) {
        for &p in pouches {
            self.add_cmw(p, default_codecs.clone())
                .expect("fresh pouch cannot carry a middleware instance yet");
            self.bus.subscribe(Topic::ResolvingUpdates, BusClient::Cmw(p));
            self.bus.subscribe(Topic::SystemStatus, BusClient::Cmw(p));
            self.bus.subscribe(Topic::GlobalConfig, BusClient::Cmw(p));
            self.nss_view.register_pouch(p, SimTime::ZERO);
            self.mmo.register_pouch(p, SimTime::ZERO);
        }
        self.bus.subscribe(Topic::ResourceUtilization, BusClient::Nss);
        self.bus.subscribe(Topic::SystemStatus, BusClient::Nss);
        self.bus.subscribe(Topic::ResourceUtilization, BusClient::Mmo);
        self.bus.subscribe(Topic::ResolvingUpdates, BusClient::Mmo);

        // Base service singletons. Pinned layouts dictate their pouches;
        // the flat layout keeps them together on the lowest-ordinal pouch.
        let place = |w: &World, t: UnitType| -> PouchId {
            match w.mode.eligible(t) {
                Some(ordinals) => PouchId(ordinals[0]),
                None => PouchId(0),
            }
        };
        let siph = self.insert_unit(SimTime::ZERO, place(self, UnitType::SipH), UnitInit::SipH);
        let nss = self.insert_unit(SimTime::ZERO, place(self, UnitType::Nss), UnitInit::Nss);
        let h = self.insert_unit(SimTime::ZERO, place(self, UnitType::H), UnitInit::H);
        let diah = self.insert_unit(SimTime::ZERO, place(self, UnitType::Diah), UnitInit::Diah);
        self.base = BaseAddrs { siph, nss, h, diah };

        for &p in pouches {
            self.kernel
                .schedule(SimTime::ZERO + MONITOR_INTERVAL, Payload::MonitorTick { pouch: p })
                .expect("scheduling at a future instant");
        }
        // Patrol runs half a period out of phase so each pass sees the
        // samples published at the preceding tick.
        self.kernel
            .schedule(
                SimTime(MONITOR_INTERVAL.0 + MONITOR_INTERVAL.0 / 2),
                Payload::MmoPatrol,
            )
            .expect("scheduling at a future instant");
    }

    // ------------------------------------------------------------------
    // Middleware mechanics
    // ------------------------------------------------------------------

    pub fn add_cmw(&mut self, pouch: PouchId, supported_codecs: Vec<Codec>) -> Result<(), CmwError> {
        if self.cmws.contains_key(&pouch) {
            return Err(CmwError::DuplicateCmw(pouch));
        }
        self.cmws.insert(pouch, CmwRt::new(pouch, supported_codecs));
        self.pouch_units.entry(pouch).or_default();
        Ok(())
    }

    pub fn cmw(&self, pouch: PouchId) -> Option<&CmwRt> {
        self.cmws.get(&pouch)
    }

    /// Total dead letters across the run (middleware-level: messages whose
    /// destination unit was gone at delivery or at work completion).
    pub fn dead_letters(&self) -> u64 {
        self.counters.dead_letters
    }

    pub fn live_c_units(&self, pouch: PouchId) -> u32 {
        self.live_c.get(&pouch).copied().unwrap_or(0)
    }

    pub fn unit_exists(&self, id: UnitId) -> bool {
        self.units.contains_key(&id)
    }

    pub fn live_units_on(&self, pouch: PouchId) -> usize {
        self.pouch_units.get(&pouch).map(BTreeSet::len).unwrap_or(0)
    }

    /// Live per-session units (anything that is not a base service).
    pub fn live_per_call_units(&self) -> usize {
        self.units
            .values()
            .filter(|r| !r.addr.unit_type.is_base_service())
            .count()
    }

    /// Session-state contention multiplier, in permille: the destination
    /// session unit itself plus every live session unit of *other* calls on
    /// the executing pouch. Units of the same call share one session state
    /// and do not contend with each other.
    fn contention_milli(&self, pouch: PouchId, call: u32) -> u64 {
        let total = u64::from(self.live_c_units(pouch));
        let same = u64::from(
            self.live_c_by_call
                .get(&(pouch, call))
                .copied()
                .unwrap_or(0),
        );
        1_000 + self.costs.c_contention_milli * (1 + total.saturating_sub(same))
    }

    fn contended(&self, base: u64, pouch: PouchId, call: u32) -> u64 {
        base * self.contention_milli(pouch, call) / 1_000
    }

    /// Call id of the destination session unit, if it is one.
    fn destination_call(&self, env: &Envelope) -> Option<u32> {
        self.units.get(&env.to.id).and_then(UnitRec::session_call)
    }

    /// CPU charge for a delivered message, evaluated at delivery time.
    fn handler_cost(&self, env: &Envelope) -> u64 {
        let t = env.to.unit_type;
        let p = env.to.pouch;
        match (&env.msg, t) {
            (UnitMsg::SipText(_), UnitType::SipH) | (UnitMsg::Sip(_), UnitType::SipH) => {
                self.costs.siph_route_us
            }
            (UnitMsg::Sip(m), UnitType::C) => {
                let call = self.destination_call(env).unwrap_or(0);
                match m.method() {
                    Some(sip_codec::Method::Invite) => {
                        self.contended(self.costs.c_setup_us, p, call)
                    }
                    Some(sip_codec::Method::Bye) => {
                        self.contended(self.costs.bye_handle_us, p, call)
                    }
                    _ => 0,
                }
            }
            (UnitMsg::ForwardInvite(_), UnitType::C) => {
                let call = self.destination_call(env).unwrap_or(0);
                self.contended(self.costs.c_setup_us, p, call)
            }
            (UnitMsg::ProfileQuery { .. }, UnitType::H) => self.costs.h_query_us,
            (UnitMsg::DiahQuery { .. }, UnitType::Diah) => self.costs.diah_query_us,
            (UnitMsg::NegotiateRequest { .. }, UnitType::A) => self.costs.a_negotiate_us,
            (UnitMsg::TEvent(_), UnitType::T) | (UnitMsg::Dtmf { .. }, UnitType::T) => {
                self.costs.t_event_us
            }
            _ => 0,
        }
    }

    /// Queue a message. The network delay class comes from the endpoints;
    /// the handler cost is charged at delivery. Public so scripted
    /// scenarios can inject traffic at arbitrary addresses.
    pub fn send(&mut self, from: Sender, to: UnitAddress, msg: UnitMsg) {
        self.counters.msg_sent += 1;
        let from_ep = match from {
            Sender::Unit(a) => Endpoint::Pouch(a.pouch),
            Sender::Ua(u) => Endpoint::Ua(u),
            Sender::System => Endpoint::Pouch(to.pouch),
        };
        let env = Envelope { from, to, msg };
        let _ = self
            .kernel
            .transmit(from_ep, Endpoint::Pouch(to.pouch), Payload::Deliver(env));
    }

    pub(crate) fn send_ua(&mut self, from: UnitAddress, ua: UaId, text: String) {
        let _ = self.kernel.transmit(
            Endpoint::Pouch(from.pouch),
            Endpoint::Ua(ua),
            Payload::UaRx { ua, text },
        );
    }

    /// Resolve a service through the middleware of `pouch`, round-robin
    /// across the live instances its table knows about.
    pub fn resolve(&mut self, pouch: PouchId, service: &str) -> Result<UnitAddress, ResolveError> {
        let key = match service {
            "SIP-handler" => "SIP-handler",
            "NSS" => "NSS",
            "HSS-frontend" => "HSS-frontend",
            "Diameter" => "Diameter",
            other => return Err(ResolveError::ServiceUnknown(other.to_string())),
        };
        let cmw = self
            .cmws
            .get_mut(&pouch)
            .expect("resolve goes through a deployed pouch");
        cmw.next_instance(key).ok_or(ResolveError::NoLiveInstance(key))
    }

    /// Allocate an address and ship a spawn command to the target pouch.
    /// The address is usable immediately; activation work is charged on the
    /// target when the command arrives.
    pub fn spawn_unit(
        &mut self,
        target: PouchId,
        unit_type: UnitType,
        init: UnitInit,
    ) -> Result<UnitAddress, SpawnError> {
        if let Some(ordinals) = self.mode.eligible(unit_type) {
            if !ordinals.contains(&target.0) {
                return Err(SpawnError::PinningViolation { unit_type, pouch: target });
            }
        }
        if !self.kernel.is_alive(target) {
            return Err(SpawnError::PouchDead(target));
        }
        let addr = self.alloc_addr(unit_type, target);
        let from = Endpoint::Pouch(target);
        let _ = self
            .kernel
            .transmit(from, Endpoint::Pouch(target), Payload::SpawnCmd { addr, init });
        Ok(addr)
    }

    fn alloc_addr(&mut self, unit_type: UnitType, pouch: PouchId) -> UnitAddress {
        let id = UnitId(self.next_unit);
        self.next_unit += 1;
        UnitAddress { unit_type, id, pouch }
    }

    /// Create the unit record now (deploy-time and spawn-command arrival).
    fn insert_unit(&mut self, now: SimTime, pouch: PouchId, init: UnitInit) -> UnitAddress {
        let unit_type = init.unit_type();
        let addr = self.alloc_addr(unit_type, pouch);
        self.activate_unit(now, addr, init);
        addr
    }

    fn activate_unit(&mut self, now: SimTime, addr: UnitAddress, init: UnitInit) {
        let session_call = match &init {
            UnitInit::C { call, .. } => Some(*call),
            _ => None,
        };
        let rec = UnitRec::build(addr, init);
        self.units.insert(addr.id, rec);
        self.pouch_units.entry(addr.pouch).or_default().insert(addr.id);
        if let Some(call) = session_call {
            *self.live_c.entry(addr.pouch).or_insert(0) += 1;
            *self.live_c_by_call.entry((addr.pouch, call)).or_insert(0) += 1;
        }
        self.counters.units_spawned += 1;
        if !addr.unit_type.is_base_service() {
            self.counters.per_call_spawned += 1;
        }
        self.publish(now, Some(addr.pouch), Topic::ResolvingUpdates, BusMsg::Resolving { addr, up: true });
    }

    /// Remove a unit: resolve tables learn, counters balance. Idempotent.
    fn terminate_local(&mut self, now: SimTime, addr: UnitAddress) {
        let Some(rec) = self.units.remove(&addr.id) else {
            return;
        };
        if let Some(set) = self.pouch_units.get_mut(&addr.pouch) {
            set.remove(&addr.id);
        }
        if let Some(call) = rec.session_call() {
            if let Some(n) = self.live_c.get_mut(&addr.pouch) {
                *n = n.saturating_sub(1);
            }
            if let Some(n) = self.live_c_by_call.get_mut(&(addr.pouch, call)) {
                *n = n.saturating_sub(1);
                if *n == 0 {
                    self.live_c_by_call.remove(&(addr.pouch, call));
                }
            }
        }
        self.counters.units_terminated += 1;
        if !addr.unit_type.is_base_service() {
            self.counters.per_call_terminated += 1;
        }
        self.publish(now, Some(addr.pouch), Topic::ResolvingUpdates, BusMsg::Resolving { addr, up: false });
    }

    fn dead_letter(&mut self, env: &Envelope) {
        self.counters.dead_letters += 1;
        if let Some(cmw) = self.cmws.get_mut(&env.to.pouch) {
            cmw.dead_letters += 1;
        }
    }

    /// Write off every unit record stranded on a dead pouch.
    pub(crate) fn purge_pouch_units(&mut self, pouch: PouchId) {
        let ids: Vec<UnitId> = self
            .pouch_units
            .get(&pouch)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        for id in ids {
            if let Some(rec) = self.units.remove(&id) {
                self.counters.units_lost += 1;
                if !rec.addr.unit_type.is_base_service() {
                    self.counters.per_call_lost += 1;
                }
            }
        }
        self.pouch_units.remove(&pouch);
        self.live_c.remove(&pouch);
        self.live_c_by_call.retain(|&(p, _), _| p != pouch);
    }

    /// Fan a message out to the topic's subscribers. Deliveries ride the
    /// normal transport: middleware instances hear with transit delay, the
    /// orchestrator (co-resident with nothing) hears immediately.
    pub(crate) fn publish(
        &mut self,
        now: SimTime,
        from_pouch: Option<PouchId>,
        topic: Topic,
        msg: BusMsg,
    ) {
        let subs: Vec<BusClient> = self.bus.subscribers(topic).collect();
        for client in subs {
            let payload = Payload::Bus { client, topic, msg: msg.clone() };
            match client {
                BusClient::Cmw(p) => {
                    let src = from_pouch.unwrap_or(p);
                    let _ = self
                        .kernel
                        .transmit(Endpoint::Pouch(src), Endpoint::Pouch(p), payload);
                }
                BusClient::Nss => {
                    let p = self.base.nss.pouch;
                    let src = from_pouch.unwrap_or(p);
                    let _ = self
                        .kernel
                        .transmit(Endpoint::Pouch(src), Endpoint::Pouch(p), payload);
                }
                BusClient::Mmo => {
                    let _ = self.kernel.schedule(now, payload);
                }
            }
        }
    }

    /// Profile fetch seen from `requester`: the pouch-local cache answers
    /// for a tenth of the query cost with no messages; a miss walks the
    /// resolver to the front end and on to the directory agent.
    pub(crate) fn fetch_profile(&mut self, now: SimTime, requester: UnitAddress, impu: String) {
        let _ = now;
        let pouch = requester.pouch;
        let cached = self
            .cmws
            .get(&pouch)
            .and_then(|c| c.cache.get(&impu))
            .cloned();
        if let Some(profile) = cached {
            let env = Envelope {
                from: Sender::System,
                to: requester,
                msg: UnitMsg::ProfileReply {
                    impu,
                    result: ProfileResult::Found(profile),
                    cache_hit: true,
                },
            };
            self.counters.msg_sent += 1;
            let cost = self.costs.h_cache_hit_us;
            let _ = self
                .kernel
                .execute_work(pouch, cost, Payload::Slice { env, remaining_us: 0 });
            return;
        }
        match self.resolve(pouch, "HSS-frontend") {
            Ok(h) => self.send(Sender::Unit(requester), h, UnitMsg::ProfileQuery { impu }),
            Err(_) => {
                let env = Envelope {
                    from: Sender::System,
                    to: requester,
                    msg: UnitMsg::ProfileReply {
                        impu,
                        result: ProfileResult::Unavailable,
                        cache_hit: false,
                    },
                };
                self.counters.msg_sent += 1;
                let _ = self
                    .kernel
                    .execute_work(pouch, 0, Payload::Slice { env, remaining_us: 0 });
            }
        }
    }

    /// Ask the selector service where to put units. Falls back to an
    /// all-errors reply if no selector instance is resolvable.
    pub(crate) fn place_request(
        &mut self,
        requester: UnitAddress,
        call: Option<u32>,
        queries: Vec<(UnitType, String)>,
    ) {
        match self.resolve(requester.pouch, "NSS") {
            Ok(nss) => self.send(
                Sender::Unit(requester),
                nss,
                UnitMsg::PlaceRequest { call, queries },
            ),
            Err(_) => {
                let results = queries
                    .into_iter()
                    .map(|(t, _)| (t, Err(PlaceFailure::NoEligiblePouch)))
                    .collect();
                let env = Envelope {
                    from: Sender::System,
                    to: requester,
                    msg: UnitMsg::PlaceReply { call, results },
                };
                self.counters.msg_sent += 1;
                let _ = self.kernel.execute_work(
                    requester.pouch,
                    0,
                    Payload::Slice { env, remaining_us: 0 },
                );
            }
        }
    }

    // ------------------------------------------------------------------
    // Event loop
    // ------------------------------------------------------------------

    /// Drive the world to `t_end` (inclusive). Returns events processed.
    pub fn run_to(&mut self, t_end: SimTime) -> u64 {
        let mut n = 0;
        while let Some((now, payload)) = self.kernel.next_until(t_end) {
            self.dispatch(now, payload);
            self.account_dropped();
            n += 1;
        }
        self.account_dropped();
        self.kernel.advance_to(t_end);
        n
    }

    /// Book payloads the kernel consumed without firing. A message that was
    /// sent but will never reach a handler is a dead letter; everything else
    /// (spawn commands, media work, monitoring) has no conservation law.
    fn account_dropped(&mut self) {
        for payload in self.kernel.take_dropped() {
            match payload {
                Payload::Deliver(env) | Payload::Slice { env, .. } => self.dead_letter(&env),
                _ => {}
            }
        }
    }

    /// Run until no call is open any more, bounded by `hard_cap`.
    /// Returns true when everything drained.
    pub fn drain(&mut self, hard_cap: SimTime) -> bool {
        while self.open_calls > 0 && self.kernel.now() < hard_cap {
            let step = self.kernel.now() + SimDuration(1_000_000);
            self.run_to(step.min(hard_cap));
        }
        self.open_calls == 0
    }

    pub fn open_calls(&self) -> u32 {
        self.open_calls
    }

    pub fn live_units(&self) -> usize {
        self.units.len()
    }

    pub fn concurrent_calls(&self) -> u32 {
        self.concurrent
    }

    fn dispatch(&mut self, now: SimTime, payload: Payload) {
        match payload {
            Payload::Deliver(env) => self.on_deliver(now, env),
            Payload::Slice { env, remaining_us } => self.on_slice(now, env, remaining_us),
            Payload::SpawnCmd { addr, init } => {
                self.activate_unit(now, addr, init);
                let _ = self.kernel.execute_work(
                    addr.pouch,
                    self.costs.spawn_us,
                    Payload::SpawnWork { unit: addr.id },
                );
            }
            Payload::SpawnWork { .. } => {}
            Payload::UaRx { ua, text } => self.ua_rx(now, ua, text),
            Payload::UaAct { ua, act } => self.ua_act(now, ua, act),
            Payload::Bus { client, topic, msg } => self.on_bus(now, client, topic, msg),
            Payload::MediaTick { unit, k } => self.on_media_tick(now, unit, k),
            Payload::MediaWork { unit, k } => self.on_media_work(now, unit, k),
            Payload::MonitorTick { pouch } => self.on_monitor_tick(now, pouch),
            Payload::MmoPatrol => self.on_mmo_patrol(now),
            Payload::CallArrival { k } => self.on_call_arrival(now, k),
            Payload::Rereg { n } => self.on_rereg(now, n),
            Payload::CallGuard { call } => self.on_call_guard(now, call),
            Payload::KillPouch { pouch } => self.kill_pouch(now, pouch),
        }
    }

    fn on_deliver(&mut self, now: SimTime, env: Envelope) {
        if matches!(env.msg, UnitMsg::Terminate) {
            // Middleware control: no cost, idempotent, never dead-letters.
            self.counters.msg_handled += 1;
            self.terminate_local(now, env.to);
            return;
        }
        if !self.units.contains_key(&env.to.id) {
            self.dead_letter(&env);
            return;
        }
        // A miss reply warms the requesting pouch's cache as it lands.
        if let UnitMsg::ProfileReply {
            impu,
            result: ProfileResult::Found(profile),
            cache_hit: false,
        } = &env.msg
        {
            if let Some(cmw) = self.cmws.get_mut(&env.to.pouch) {
                cmw.cache.insert(impu.clone(), profile.clone());
            }
        }
        let cost = self.handler_cost(&env);
        let step = cost.min(self.costs.cpu_quantum_us);
        let remaining_us = cost - step;
        let _ = self
            .kernel
            .execute_work(env.to.pouch, step, Payload::Slice { env, remaining_us });
    }

    fn on_slice(&mut self, now: SimTime, env: Envelope, remaining_us: u64) {
        if remaining_us > 0 {
            let step = remaining_us.min(self.costs.cpu_quantum_us);
            let _ = self.kernel.execute_work(
                env.to.pouch,
                step,
                Payload::Slice { env, remaining_us: remaining_us - step },
            );
            return;
        }
        if !self.units.contains_key(&env.to.id) {
            // The unit went away while its work was queued; the cycles are
            // burned but the message is lost.
            self.dead_letter(&env);
            return;
        }
        self.counters.msg_handled += 1;
        self.handle_envelope(now, env);
    }

    // ------------------------------------------------------------------
    // Monitoring
    // ------------------------------------------------------------------

    fn on_monitor_tick(&mut self, now: SimTime, pouch: PouchId) {
        if !self.kernel.is_alive(pouch) {
            return;
        }
        let util_milli = self
            .kernel
            .utilization_milli(pouch, MONITOR_INTERVAL)
            .unwrap_or(0);
        let units = self.live_units_on(pouch) as u32;
        let dead_letters = self.cmws.get(&pouch).map(|c| c.dead_letters).unwrap_or(0);
        self.publish(
            now,
            Some(pouch),
            Topic::ResourceUtilization,
            BusMsg::Util { pouch, util_milli, units, dead_letters },
        );
        if now >= self.window.0 && now < self.window.1 {
            self.samples.cpu.push(CpuSample {
                at: now,
                pouch,
                util_milli,
                concurrent: self.concurrent,
            });
        }
        let _ = self
            .kernel
            .schedule(now + MONITOR_INTERVAL, Payload::MonitorTick { pouch });
    }

    fn on_bus(&mut self, now: SimTime, client: BusClient, topic: Topic, msg: BusMsg) {
        match client {
            BusClient::Cmw(p) => {
                let Some(cmw) = self.cmws.get_mut(&p) else { return };
                match msg {
                    BusMsg::Resolving { addr, up } => cmw.fold_resolving(addr, up),
                    BusMsg::PouchDown { pouch } => cmw.prune_pouch(pouch),
                    BusMsg::Config { key, value } => {
                        if key == "supported-codecs" {
                            cmw.supported_codecs = parse_codec_list(&value);
                        }
                    }
                    _ => {}
                }
            }
            BusClient::Nss => match msg {
                BusMsg::Util { pouch, util_milli, .. } => {
                    let _ = self.nss_view.update(pouch, util_milli, now);
                }
                BusMsg::PouchDown { pouch } => self.nss_view.remove_pouch(pouch),
                BusMsg::PouchUp { pouch, .. } => self.nss_view.register_pouch(pouch, now),
                _ => {}
            },
            BusClient::Mmo => self.mmo_on_bus(now, topic, msg),
        }
    }

    // ------------------------------------------------------------------
    // Failure injection
    // ------------------------------------------------------------------

    /// Kill a pouch: CPU state is voided and in-flight deliveries to it
    /// will drop. Every call with a session unit there — established or
    /// still in setup — dies with it. Detection by the rest of the system
    /// is monitoring-driven; cleanup of the surviving halves happens when
    /// the platform declares the pouch down.
    pub fn kill_pouch(&mut self, now: SimTime, pouch: PouchId) {
        if !self.kernel.is_alive(pouch) {
            return;
        }
        self.kernel.kill(pouch).expect("known pouch");
        if let Some(pi) = self.pouch_pool.get(pouch.0 as usize) {
            self.pools[*pi].live = self.pools[*pi].live.saturating_sub(1);
        }
        self.log(
            now,
            pouch,
            "kernel".to_string(),
            Severity::Warn,
            None,
            format!("{pouch} killed"),
        );
        let doomed: Vec<u32> = self
            .calls
            .iter()
            .filter(|c| c.unit_pouches.contains(&pouch) && !c.outcome.is_terminal())
            .map(|c| c.id)
            .collect();
        for id in doomed {
            self.mark_dropped(now, id, pouch);
        }
    }

    // ------------------------------------------------------------------
    // Call bookkeeping
    // ------------------------------------------------------------------

    pub(crate) fn mark_established(&mut self, now: SimTime, call: u32) {
        let c = &mut self.calls[call as usize];
        if c.outcome != CallOutcome::Pending {
            return;
        }
        c.outcome = CallOutcome::Established;
        c.answered = Some(now);
        self.counters.established += 1;
        self.concurrent += 1;
    }

    pub(crate) fn mark_torn_down(&mut self, now: SimTime, call: u32) {
        let c = &mut self.calls[call as usize];
        if c.outcome != CallOutcome::Established {
            return;
        }
        c.outcome = CallOutcome::TornDown;
        self.counters.torn_down += 1;
        self.open_calls = self.open_calls.saturating_sub(1);
        let sip_id = c.sip_call_id.clone();
        self.log(
            now,
            self.base.siph.pouch,
            "harness".to_string(),
            Severity::Info,
            Some(sip_id),
            "call torn down".to_string(),
        );
    }

    pub(crate) fn mark_dropped(&mut self, now: SimTime, call: u32, pouch: PouchId) {
        let c = &mut self.calls[call as usize];
        if c.outcome.is_terminal() {
            return;
        }
        let was_established = c.outcome == CallOutcome::Established;
        c.outcome = CallOutcome::Dropped;
        self.counters.dropped += 1;
        if was_established {
            self.concurrent = self.concurrent.saturating_sub(1);
        }
        self.open_calls = self.open_calls.saturating_sub(1);
        let sip_id = c.sip_call_id.clone();
        self.log(
            now,
            pouch,
            "harness".to_string(),
            Severity::Warn,
            Some(sip_id),
            "call dropped with its pouch".to_string(),
        );
    }

    pub(crate) fn mark_failed(&mut self, now: SimTime, call: u32, code: u16) {
        let c = &mut self.calls[call as usize];
        if c.outcome.is_terminal() {
            return;
        }
        let was_established = c.outcome == CallOutcome::Established;
        c.outcome = CallOutcome::Failed(code);
        self.counters.failed += 1;
        if was_established {
            self.concurrent = self.concurrent.saturating_sub(1);
        }
        self.open_calls = self.open_calls.saturating_sub(1);
        let sip_id = c.sip_call_id.clone();
        self.log(
            now,
            self.base.siph.pouch,
            "harness".to_string(),
            Severity::Info,
            Some(sip_id),
            format!("call failed with {code}"),
        );
    }

    pub(crate) fn mark_abandoned(&mut self, _now: SimTime, call: u32) {
        let c = &mut self.calls[call as usize];
        if c.outcome.is_terminal() {
            return;
        }
        c.outcome = CallOutcome::Abandoned;
        self.counters.abandoned += 1;
        self.open_calls = self.open_calls.saturating_sub(1);
    }

    pub(crate) fn new_call(&mut self, now: SimTime, caller: UaId, callee: UaId) -> u32 {
        let id = self.calls.len() as u32;
        let sip_call_id = format!("call-{id:08}@unity");
        let caller_impu = self.uas[caller.0 as usize].impu.clone();
        let callee_impu = self.uas[callee.0 as usize].impu.clone();
        self.call_index.insert(sip_call_id.clone(), id);
        self.calls.push(Call {
            id,
            sip_call_id,
            caller,
            callee,
            caller_impu,
            callee_impu,
            arrived: now,
            t_rx: None,
            t_tx: None,
            answered: None,
            outcome: CallOutcome::Pending,
            c_orig: None,
            c_term: None,
            t_orig: None,
            negotiated: None,
            unit_pouches: BTreeSet::new(),
            conference: false,
        });
        self.counters.attempted += 1;
        self.open_calls += 1;
        id
    }

    pub(crate) fn call_by_sip_id(&self, sip_call_id: &str) -> Option<u32> {
        self.call_index.get(sip_call_id).copied().or_else(|| {
            // Conference legs derive their dialog id from the parent's.
            let base = sip_call_id.strip_suffix("-leg3")?;
            self.call_index.get(base).copied()
        })
    }

    pub fn window(&self) -> (SimTime, SimTime) {
        self.window
    }

    pub fn in_window(&self, t: SimTime) -> bool {
        t >= self.window.0 && t < self.window.1
    }

    // ------------------------------------------------------------------
    // Logging
    // ------------------------------------------------------------------

    pub(crate) fn log(
        &mut self,
        at: SimTime,
        pouch: PouchId,
        unit: String,
        severity: Severity,
        call_id: Option<String>,
        text: String,
    ) {
        if severity < self.log_level {
            return;
        }
        let entry = LogEntry { at, pouch, unit, severity, call_id, text };
        if self.bus.subscriber_count(Topic::LogEntries) > 0 {
            self.publish(at, Some(pouch), Topic::LogEntries, BusMsg::Log(entry.clone()));
        }
        self.logs.push(entry);
    }

    // ------------------------------------------------------------------
    // Traffic arming (used by the run harness and tests)
    // ------------------------------------------------------------------

    /// Schedule the registration storm, the first arrival, the re-register
    /// cadence and any kill injection.
    pub fn start_traffic(&mut self, kill: Option<(SimTime, PouchId)>) {
        let storm_at = SimTime::ZERO;
        for ua in 0..self.plan.subscribers {
            let _ = self.kernel.schedule(
                storm_at,
                Payload::UaAct { ua: UaId(ua), act: UaAction::SendRegister },
            );
        }
        if let Some(first) = self.plan.first_arrival() {
            let _ = self.kernel.schedule(first, Payload::CallArrival { k: 0 });
        }
        if self.plan.rereg_interval_us.is_some() {
            let first = self.plan.start + SimDuration(self.plan.rereg_interval_us.unwrap());
            if first < self.plan.end() {
                let _ = self.kernel.schedule(first, Payload::Rereg { n: 0 });
            }
        }
        if let Some((at, pouch)) = kill {
            let _ = self.kernel.schedule(at, Payload::KillPouch { pouch });
        }
    }

    /// Next arrival after the one that just fired at `now`.
    pub(crate) fn schedule_next_arrival(&mut self, now: SimTime, k: u64) {
        let next = match self.plan.arrival {
            ArrivalKind::Deterministic => self.plan.next_deterministic(now),
            ArrivalKind::Exponential => {
                let (rate, _, _) = match self.plan.phase_at(now) {
                    Some(p) => p,
                    None => return,
                };
                let mean_us = 60_000_000_000.0 / rate as f64;
                let raw = self.rng.stream("traffic-arrivals").next_u64();
                let u = (raw as f64 + 0.5) / (u64::MAX as f64 + 1.0);
                let dt = (-(u.ln()) * mean_us).round().max(1.0) as u64;
                let cand = now + SimDuration(dt);
                if self.plan.phase_at(cand).map(|(r, _, _)| r > 0) == Some(true) {
                    Some(cand)
                } else {
                    self.plan.next_phase_start_after(now)
                }
            }
        };
        if let Some(at) = next {
            let _ = self.kernel.schedule(at, Payload::CallArrival { k: k + 1 });
        }
    }
}

pub(crate) fn parse_codec_list(value: &str) -> Vec<Codec> {
    value
        .split(',')
        .filter_map(|tok| match tok.trim() {
            "PCMU" => Some(Codec::Pcmu),
            "PCMA" => Some(Codec::Pcma),
            "G729" => Some(Codec::G729),
            "TE" | "telephone-event" => Some(Codec::TelephoneEvent),
            _ => None,
        })
        .collect()
}
