//! Unit behavior: the SIP handler, placement selector agent, directory
//! front end and agent, per-call session/negotiation/telephony units, and
//! the user-agent endpoints that drive traffic from the edge.

use std::collections::BTreeMap;

use sip_codec::{
    build_response, negotiate, parse_message, serialize_message, serialize_sdp, CSeq, Method,
    NameAddr, SdpBody, SipMessage, StartLine,
};

use crate::ids::Severity;
use crate::kernel::{PouchId, UaId};
use crate::nss::{select_pouch, DEFAULT_OVERLOAD_MILLI};
use crate::sim::hss::{bare_id, impu_of};
use crate::sim::media::MState;
use crate::time::{SimDuration, SimTime};
use crate::unit::{UnitAddress, UnitType};

use super::{
    Envelope, ForwardCtx, LegKind, MediaRole, NegotiateFailure, NegotiatedMedia, PlaceFailure,
    Payload, ProfileResult, Sender, Side, TelephonyEvent, UaAction, UnitInit, UnitMsg, World,
    CALL_GUARD,
};

// ----------------------------------------------------------------------
// Unit records
// ----------------------------------------------------------------------

#[derive(Debug)]
pub(crate) struct UnitRec {
    pub addr: UnitAddress,
    pub body: UnitBody,
}

impl UnitRec {
    pub(crate) fn build(addr: UnitAddress, init: UnitInit) -> Self {
        let body = match init {
            UnitInit::SipH => UnitBody::SipH(SipHState::default()),
            UnitInit::Nss => UnitBody::Nss,
            UnitInit::H => UnitBody::H(HState::default()),
            UnitInit::Diah => UnitBody::Diah,
            UnitInit::C { call, side } => UnitBody::C(CState::new(call, side)),
            UnitInit::T { call, side, adhoc, c } => {
                UnitBody::T(TState { call, side, adhoc, c })
            }
            UnitInit::A { call, side } => UnitBody::A(AState { call, side }),
            UnitInit::M { call } => UnitBody::M(MState::new(call)),
        };
        UnitRec { addr, body }
    }

    /// Call id when this is a session (C) unit.
    pub(crate) fn session_call(&self) -> Option<u32> {
        match &self.body {
            UnitBody::C(st) => Some(st.call),
            _ => None,
        }
    }

    /// Call id for any per-call unit (C, T, A, M).
    pub(crate) fn call_of(&self) -> Option<u32> {
        match &self.body {
            UnitBody::C(st) => Some(st.call),
            UnitBody::T(st) => Some(st.call),
            UnitBody::A(st) => Some(st.call),
            UnitBody::M(st) => Some(st.call),
            _ => None,
        }
    }
}

#[derive(Debug)]
pub(crate) enum UnitBody {
    SipH(SipHState),
    Nss,
    H(HState),
    Diah,
    C(CState),
    A(AState),
    T(TState),
    M(MState),
}

// ----------------------------------------------------------------------
// SIP handler
// ----------------------------------------------------------------------

/// Dialog routing entry: which UA sits on each edge and which session
/// units own each side of the signaling path.
#[derive(Debug)]
struct DialogRoute {
    caller: UaId,
    callee: Option<UaId>,
    orig: Option<UnitAddress>,
    term: Option<UnitAddress>,
}

#[derive(Debug, Default)]
pub(crate) struct SipHState {
    /// Registrar: bound public identities and the UA holding the binding.
    bindings: BTreeMap<String, UaId>,
    /// REGISTER transactions awaiting a profile fetch, keyed by identity.
    pending_regs: BTreeMap<String, Vec<(UaId, SipMessage)>>,
    /// INVITEs awaiting session-unit placement, keyed by call id.
    pending_invites: BTreeMap<u32, SipMessage>,
    dialogs: BTreeMap<String, DialogRoute>,
}

impl SipHState {
    /// Drop every transaction tied to one call. Platform-level cleanup for
    /// calls whose session units were lost with their pouch; the dialog can
    /// never progress, so keeping it would only leak.
    pub(crate) fn forget_call(&mut self, call: u32, sip_call_id: &str) {
        self.pending_invites.remove(&call);
        self.dialogs.remove(sip_call_id);
        self.dialogs.remove(&format!("{sip_call_id}-leg3"));
    }
}

fn siph_handle(w: &mut World, now: SimTime, addr: UnitAddress, st: &mut SipHState, env: Envelope) {
    match env.msg {
        UnitMsg::SipText(text) => {
            let msg = match parse_message(&text) {
                Ok(m) => m,
                Err(e) => {
                    w.log(
                        now,
                        addr.pouch,
                        addr.to_string(),
                        Severity::Warn,
                        None,
                        format!("unparseable message from edge dropped: {e}"),
                    );
                    return;
                }
            };
            let Sender::Ua(ua) = env.from else {
                // Units hand over parsed messages; raw text only enters at
                // the edge.
                return;
            };
            siph_from_ua(w, now, addr, st, ua, msg);
        }
        UnitMsg::Sip(msg) => {
            let Sender::Unit(from) = env.from else { return };
            siph_from_unit(w, now, addr, st, from, msg);
        }
        UnitMsg::PlaceReply { call: Some(call), results } => {
            siph_place_reply(w, now, addr, st, call, results);
        }
        UnitMsg::ProfileReply { impu, result, .. } => {
            siph_profile_reply(w, now, addr, st, impu, result);
        }
        _ => {}
    }
}

fn siph_from_ua(
    w: &mut World,
    now: SimTime,
    addr: UnitAddress,
    st: &mut SipHState,
    ua: UaId,
    msg: SipMessage,
) {
    if msg.is_request() {
        match msg.method().expect("request has a method") {
            Method::Register => {
                let impu = msg.to.uri.clone();
                st.pending_regs.entry(impu.clone()).or_default().push((ua, msg));
                w.fetch_profile(now, addr, impu);
            }
            Method::Invite => siph_invite_from_ua(w, now, addr, st, ua, msg),
            _ => {
                // In-dialog request: route by dialog and sender side.
                let Some(route) = st.dialogs.get(&msg.call_id) else {
                    w.log(
                        now,
                        addr.pouch,
                        addr.to_string(),
                        Severity::Warn,
                        Some(msg.call_id.clone()),
                        "request for unknown dialog dropped".to_string(),
                    );
                    return;
                };
                let target = if ua == route.caller { route.orig } else { route.term };
                if let Some(unit) = target {
                    w.send(Sender::Unit(addr), unit, UnitMsg::Sip(msg));
                }
            }
        }
        return;
    }
    // Response from an edge: callee answers flow to the terminating side.
    let Some(route) = st.dialogs.get(&msg.call_id) else { return };
    let target = if ua == route.caller { route.orig } else { route.term };
    if let Some(unit) = target {
        w.send(Sender::Unit(addr), unit, UnitMsg::Sip(msg));
    }
}

fn siph_invite_from_ua(
    w: &mut World,
    now: SimTime,
    addr: UnitAddress,
    st: &mut SipHState,
    ua: UaId,
    msg: SipMessage,
) {
    let caller_impu = msg.from.uri.clone();
    if !st.bindings.contains_key(&caller_impu) {
        let resp = build_response(&msg, 403, None).expect("INVITE is a request");
        w.send_ua(addr, ua, serialize_message(&resp));
        w.log(
            now,
            addr.pouch,
            addr.to_string(),
            Severity::Info,
            Some(msg.call_id.clone()),
            format!("rejected INVITE from unregistered {caller_impu}"),
        );
        return;
    }
    let Some(call) = w.call_by_sip_id(&msg.call_id) else {
        // Out-of-plan INVITE (nothing tracks it); drop after logging.
        w.log(
            now,
            addr.pouch,
            addr.to_string(),
            Severity::Warn,
            Some(msg.call_id.clone()),
            "INVITE without a tracked call dropped".to_string(),
        );
        return;
    };
    let trying = build_response(&msg, 100, None).expect("INVITE is a request");
    w.send_ua(addr, ua, serialize_message(&trying));
    st.dialogs.insert(
        msg.call_id.clone(),
        DialogRoute { caller: ua, callee: None, orig: None, term: None },
    );
    let caller_bare = bare_id(&caller_impu).to_string();
    st.pending_invites.insert(call, msg);
    w.place_request(addr, Some(call), vec![(UnitType::C, caller_bare)]);
}

fn siph_place_reply(
    w: &mut World,
    now: SimTime,
    addr: UnitAddress,
    st: &mut SipHState,
    call: u32,
    results: Vec<(UnitType, Result<PouchId, PlaceFailure>)>,
) {
    let Some(invite) = st.pending_invites.remove(&call) else { return };
    let Some(route) = st.dialogs.get_mut(&invite.call_id) else { return };
    let placed = results
        .into_iter()
        .find(|(t, _)| *t == UnitType::C)
        .and_then(|(_, r)| r.ok());
    let Some(pouch) = placed else {
        let resp = build_response(&invite, 503, None).expect("INVITE is a request");
        let caller = route.caller;
        st.dialogs.remove(&invite.call_id);
        w.send_ua(addr, caller, serialize_message(&resp));
        return;
    };
    match w.spawn_unit(pouch, UnitType::C, UnitInit::C { call, side: Side::Orig }) {
        Ok(c) => {
            route.orig = Some(c);
            w.calls[call as usize].c_orig = Some(c);
            w.calls[call as usize].unit_pouches.insert(pouch);
            w.send(Sender::Unit(addr), c, UnitMsg::Sip(invite));
        }
        Err(e) => {
            let resp = build_response(&invite, 503, None).expect("INVITE is a request");
            let caller = route.caller;
            st.dialogs.remove(&invite.call_id);
            w.send_ua(addr, caller, serialize_message(&resp));
            w.log(
                now,
                addr.pouch,
                addr.to_string(),
                Severity::Error,
                None,
                format!("session unit spawn failed: {e}"),
            );
        }
    }
}

fn siph_profile_reply(
    w: &mut World,
    now: SimTime,
    addr: UnitAddress,
    st: &mut SipHState,
    impu: String,
    result: ProfileResult,
) {
    let Some(waiters) = st.pending_regs.remove(&impu) else { return };
    for (ua, req) in waiters {
        let status = match &result {
            ProfileResult::Found(_) => {
                st.bindings.insert(impu.clone(), ua);
                w.hss.bind(&impu, ua);
                // The profile cached here was snapshotted before the bind;
                // the registrar owns the binding, so it writes through.
                if let Some(cmw) = w.cmws.get_mut(&addr.pouch) {
                    if let Some(p) = cmw.cache.get_mut(&impu) {
                        p.registered = true;
                    }
                }
                w.counters.registrations += 1;
                200
            }
            ProfileResult::NotFound => 404,
            ProfileResult::Unavailable => 503,
        };
        let resp = build_response(&req, status, None).expect("REGISTER is a request");
        w.send_ua(addr, ua, serialize_message(&resp));
        if status != 200 {
            w.log(
                now,
                addr.pouch,
                addr.to_string(),
                Severity::Warn,
                None,
                format!("registration of {impu} answered {status}"),
            );
        }
    }
}

fn siph_from_unit(
    w: &mut World,
    now: SimTime,
    addr: UnitAddress,
    st: &mut SipHState,
    from: UnitAddress,
    msg: SipMessage,
) {
    if msg.is_request() && msg.method() == Some(Method::Invite) {
        // Terminating leg headed for an edge. A dialog entry may not exist
        // yet (conference legs derive a fresh dialog id).
        let callee_impu = msg.to.uri.clone();
        let Some(&callee) = st.bindings.get(&callee_impu) else {
            let resp = build_response(&msg, 480, None).expect("INVITE is a request");
            w.send(Sender::Unit(addr), from, UnitMsg::Sip(resp));
            return;
        };
        let entry = st.dialogs.entry(msg.call_id.clone()).or_insert_with(|| DialogRoute {
            caller: w
                .call_by_sip_id(&msg.call_id)
                .map(|c| w.calls[c as usize].caller)
                .unwrap_or(UaId(u32::MAX)),
            callee: None,
            orig: None,
            term: None,
        });
        entry.callee = Some(callee);
        entry.term = Some(from);
        if let Some(call) = w.call_by_sip_id(&msg.call_id) {
            if !msg.call_id.ends_with("-leg3") {
                w.calls[call as usize].t_tx = Some(now);
            }
        }
        w.send_ua(addr, callee, serialize_message(&msg));
        return;
    }
    // Everything else follows the recorded route: messages from the
    // originating side head to the caller, the rest to the callee.
    let Some(route) = st.dialogs.get(&msg.call_id) else { return };
    let to_caller = route.orig == Some(from);
    let target = if to_caller { Some(route.caller) } else { route.callee };
    let Some(ua) = target else { return };
    let done = match &msg.start {
        StartLine::Response { status, .. } => {
            msg.cseq.method == Method::Bye || (msg.cseq.method == Method::Invite && *status >= 300)
        }
        StartLine::Request { .. } => false,
    };
    w.send_ua(addr, ua, serialize_message(&msg));
    if done {
        st.dialogs.remove(&msg.call_id);
    }
    let _ = now;
}

// ----------------------------------------------------------------------
// Placement selector agent
// ----------------------------------------------------------------------

fn nss_handle(w: &mut World, now: SimTime, addr: UnitAddress, env: Envelope) {
    let UnitMsg::PlaceRequest { call, queries } = env.msg else { return };
    let Sender::Unit(requester) = env.from else { return };
    let mut results = Vec::with_capacity(queries.len());
    for (unit_type, subscriber) in queries {
        let eligible: Vec<PouchId> = match w.mode.eligible(unit_type) {
            Some(ordinals) => ordinals
                .iter()
                .map(|&o| PouchId(o))
                .filter(|p| w.nss_view.contains(*p))
                .collect(),
            None => w.nss_view.pouches().collect(),
        };
        let pick = select_pouch(&subscriber, &eligible, &w.nss_view, now, DEFAULT_OVERLOAD_MILLI)
            .map_err(|_| PlaceFailure::NoEligiblePouch);
        results.push((unit_type, pick));
    }
    w.send(Sender::Unit(addr), requester, UnitMsg::PlaceReply { call, results });
}

// ----------------------------------------------------------------------
// Directory front end and agent
// ----------------------------------------------------------------------

#[derive(Debug, Default)]
pub(crate) struct HState {
    /// Outstanding queries in FIFO order: identity and who asked.
    pending: Vec<(String, UnitAddress)>,
}

fn h_handle(w: &mut World, now: SimTime, addr: UnitAddress, st: &mut HState, env: Envelope) {
    match env.msg {
        UnitMsg::ProfileQuery { impu } => {
            let Sender::Unit(requester) = env.from else { return };
            match w.resolve(addr.pouch, "Diameter") {
                Ok(diah) => {
                    st.pending.push((impu.clone(), requester));
                    w.send(Sender::Unit(addr), diah, UnitMsg::DiahQuery { impu });
                }
                Err(_) => {
                    w.log(
                        now,
                        addr.pouch,
                        addr.to_string(),
                        Severity::Error,
                        None,
                        "no directory agent resolvable".to_string(),
                    );
                    w.send(
                        Sender::Unit(addr),
                        requester,
                        UnitMsg::ProfileReply {
                            impu,
                            result: ProfileResult::Unavailable,
                            cache_hit: false,
                        },
                    );
                }
            }
        }
        UnitMsg::DiahReply { impu, result } => {
            let Some(pos) = st.pending.iter().position(|(i, _)| *i == impu) else { return };
            let (_, requester) = st.pending.remove(pos);
            w.send(
                Sender::Unit(addr),
                requester,
                UnitMsg::ProfileReply { impu, result, cache_hit: false },
            );
        }
        _ => {}
    }
}

fn diah_handle(w: &mut World, _now: SimTime, addr: UnitAddress, env: Envelope) {
    let UnitMsg::DiahQuery { impu } = env.msg else { return };
    let Sender::Unit(h) = env.from else { return };
    let result = match w.hss.lookup(&impu) {
        Some(p) => ProfileResult::Found(p.clone()),
        None => ProfileResult::NotFound,
    };
    w.send(Sender::Unit(addr), h, UnitMsg::DiahReply { impu, result });
}

// ----------------------------------------------------------------------
// Session unit
// ----------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CPhase {
    Start,
    Fetching,
    PlacingUnits,
    Negotiating,
    PlacingPeer,
    Ringing,
    Confirmed,
    PlacingConf,
    AwaitingConf,
    Ending,
    Closed,
}

#[derive(Debug)]
pub(crate) struct CState {
    call: u32,
    side: Side,
    phase: CPhase,
    leg: LegKind,
    invite: Option<SipMessage>,
    offer: Option<SdpBody>,
    adhoc: bool,
    t: Option<UnitAddress>,
    a: Option<UnitAddress>,
    m: Option<UnitAddress>,
    peer: Option<UnitAddress>,
    third: Option<UnitAddress>,
    third_invite: Option<SipMessage>,
    third_to_tag: Option<String>,
    mixer: Option<UnitAddress>,
    answer: Option<SdpBody>,
    conf_target: Option<String>,
    pending_byes: u8,
    primary_bye_ok: Option<SipMessage>,
}

impl CState {
    fn new(call: u32, side: Side) -> Self {
        CState {
            call,
            side,
            phase: CPhase::Start,
            leg: LegKind::Primary,
            invite: None,
            offer: None,
            adhoc: false,
            t: None,
            a: None,
            m: None,
            peer: None,
            third: None,
            third_invite: None,
            third_to_tag: None,
            mixer: None,
            answer: None,
            conf_target: None,
            pending_byes: 0,
            primary_bye_ok: None,
        }
    }

    fn is_orig(&self) -> bool {
        self.side == Side::Orig
    }
}

fn c_handle(w: &mut World, now: SimTime, addr: UnitAddress, st: &mut CState, env: Envelope) {
    match env.msg {
        UnitMsg::Sip(msg) if msg.is_request() => c_request(w, now, addr, st, env.from, msg),
        UnitMsg::Sip(msg) => c_response(w, now, addr, st, env.from, msg),
        UnitMsg::ForwardInvite(ctx) => c_forwarded(w, now, addr, st, *ctx),
        UnitMsg::ProfileReply { result, .. } => c_profile(w, now, addr, st, result),
        UnitMsg::PlaceReply { results, .. } => c_placed(w, now, addr, st, results),
        UnitMsg::NegotiateReply { result, .. } => c_negotiated(w, now, addr, st, result),
        UnitMsg::TEvent(TelephonyEvent::ConferenceAdd { target, .. }) => {
            c_conference_add(w, now, addr, st, target)
        }
        _ => {}
    }
}

/// Fail the call from the originating side: answer the edge and retire
/// whatever this unit has spawned so far.
fn c_fail_orig(w: &mut World, now: SimTime, addr: UnitAddress, st: &mut CState, status: u16) {
    if let Some(invite) = &st.invite {
        let resp = build_response(invite, status, None).expect("stored INVITE is a request");
        if let Ok(siph) = w.resolve(addr.pouch, "SIP-handler") {
            w.send(Sender::Unit(addr), siph, UnitMsg::Sip(resp));
        }
    }
    w.log(
        now,
        addr.pouch,
        addr.to_string(),
        Severity::Info,
        Some(w.calls[st.call as usize].sip_call_id.clone()),
        format!("call setup failed, answering {status}"),
    );
    c_retire(w, addr, st);
}

/// Fail the call from a terminating leg: answer the peer session unit.
fn c_fail_term(w: &mut World, now: SimTime, addr: UnitAddress, st: &mut CState, status: u16) {
    if let (Some(invite), Some(peer)) = (&st.invite, st.peer) {
        let resp = build_response(invite, status, None).expect("stored INVITE is a request");
        w.send(Sender::Unit(addr), peer, UnitMsg::Sip(resp));
    }
    w.log(
        now,
        addr.pouch,
        addr.to_string(),
        Severity::Info,
        Some(w.calls[st.call as usize].sip_call_id.clone()),
        format!("terminating leg failed, answering {status}"),
    );
    c_retire(w, addr, st);
}

/// Terminate own dependents and self.
fn c_retire(w: &mut World, addr: UnitAddress, st: &mut CState) {
    for unit in [st.t, st.a, st.m].into_iter().flatten() {
        w.send(Sender::Unit(addr), unit, UnitMsg::Terminate);
    }
    st.phase = CPhase::Closed;
    w.send(Sender::Unit(addr), addr, UnitMsg::Terminate);
}

fn c_request(
    w: &mut World,
    now: SimTime,
    addr: UnitAddress,
    st: &mut CState,
    from: Sender,
    msg: SipMessage,
) {
    match msg.method().expect("request has a method") {
        Method::Invite => {
            // Originating leg entry point.
            if !st.is_orig() || st.phase != CPhase::Start {
                return;
            }
            let offer = msg
                .body
                .as_deref()
                .and_then(|b| sip_codec::parse_sdp(b).ok());
            let Some(offer) = offer else {
                st.invite = Some(msg);
                c_fail_orig(w, now, addr, st, 488);
                return;
            };
            let impu = msg.from.uri.clone();
            st.invite = Some(msg);
            st.offer = Some(offer);
            st.phase = CPhase::Fetching;
            w.fetch_profile(now, addr, impu);
        }
        Method::Ack => {
            if st.is_orig() {
                // Caller confirmed: media starts, features arm, peer learns.
                st.phase = CPhase::Confirmed;
                if let Some(m) = st.m {
                    w.send(Sender::Unit(addr), m, UnitMsg::MediaStart { call: st.call });
                }
                if let Some(t) = st.t {
                    w.send(
                        Sender::Unit(addr),
                        t,
                        UnitMsg::TEvent(TelephonyEvent::Answered { call: st.call }),
                    );
                }
                if let Some(peer) = st.peer {
                    w.send(Sender::Unit(addr), peer, UnitMsg::Sip(msg));
                }
            } else {
                st.phase = CPhase::Confirmed;
                if let Some(t) = st.t {
                    w.send(
                        Sender::Unit(addr),
                        t,
                        UnitMsg::TEvent(TelephonyEvent::Answered { call: st.call }),
                    );
                }
                if st.leg == LegKind::Conference {
                    if let Some(mixer) = st.mixer {
                        w.send(Sender::Unit(addr), mixer, UnitMsg::MediaAddLeg { call: st.call });
                    }
                }
                if let Ok(siph) = w.resolve(addr.pouch, "SIP-handler") {
                    w.send(Sender::Unit(addr), siph, UnitMsg::Sip(msg));
                }
            }
        }
        Method::Bye => {
            if st.is_orig() {
                c_orig_bye(w, now, addr, st, from, msg);
            } else {
                // Relay toward the edge; features see the end of the call.
                st.phase = CPhase::Ending;
                if let Some(t) = st.t {
                    w.send(
                        Sender::Unit(addr),
                        t,
                        UnitMsg::TEvent(TelephonyEvent::Ending { call: st.call }),
                    );
                }
                if let Ok(siph) = w.resolve(addr.pouch, "SIP-handler") {
                    w.send(Sender::Unit(addr), siph, UnitMsg::Sip(msg));
                }
            }
        }
        _ => {}
    }
}

fn c_orig_bye(
    w: &mut World,
    now: SimTime,
    addr: UnitAddress,
    st: &mut CState,
    from: Sender,
    msg: SipMessage,
) {
    if st.phase == CPhase::Ending || st.phase == CPhase::Closed {
        return;
    }
    let established = st.phase == CPhase::Confirmed || st.phase == CPhase::AwaitingConf;
    if !established {
        // Teardown before answer: the attempt is abandoned.
        w.mark_abandoned(now, st.call);
    }
    st.phase = CPhase::Ending;
    st.pending_byes = 1 + u8::from(st.third.is_some());
    if let Some(t) = st.t {
        w.send(
            Sender::Unit(addr),
            t,
            UnitMsg::TEvent(TelephonyEvent::Ending { call: st.call }),
        );
    }
    if let Some(m) = st.m {
        w.send(Sender::Unit(addr), m, UnitMsg::MediaStop { call: st.call });
    }
    if let Some(peer) = st.peer {
        w.send(Sender::Unit(addr), peer, UnitMsg::Sip(msg));
    } else {
        // Nothing downstream yet: answer the BYE ourselves.
        st.pending_byes = 0;
        if let Some(invite) = &st.invite {
            let mut bye_ok = build_response(invite, 200, None).expect("request");
            bye_ok.cseq = CSeq { seq: 2, method: Method::Bye };
            if let Ok(siph) = w.resolve(addr.pouch, "SIP-handler") {
                w.send(Sender::Unit(addr), siph, UnitMsg::Sip(bye_ok));
            }
        }
        c_retire(w, addr, st);
    }
    if let (Some(third), Some(inv)) = (st.third, st.third_invite.clone()) {
        let mut bye = SipMessage {
            start: StartLine::Request { method: Method::Bye, uri: inv.to.uri.clone() },
            via: inv.via.clone(),
            from: inv.from.clone(),
            to: inv.to.clone(),
            call_id: inv.call_id.clone(),
            cseq: CSeq { seq: 2, method: Method::Bye },
            contact: None,
            content_type: None,
            extra: Vec::new(),
            body: None,
        };
        if let Some(tag) = &st.third_to_tag {
            bye.to.tag = Some(tag.clone());
        }
        w.send(Sender::Unit(addr), third, UnitMsg::Sip(bye));
    }
    let _ = from;
}

fn c_response(
    w: &mut World,
    now: SimTime,
    addr: UnitAddress,
    st: &mut CState,
    from: Sender,
    msg: SipMessage,
) {
    let status = msg.status().expect("response has a status");
    let from_unit = match from {
        Sender::Unit(a) => Some(a),
        _ => None,
    };
    if st.is_orig() {
        if from_unit.is_some() && from_unit == st.third {
            // Conference leg progress is absorbed here; the edge only ever
            // sees the primary dialog.
            if msg.cseq.method == Method::Invite && status == 200 {
                st.third_to_tag = msg.to.tag.clone();
                let inv = st.third_invite.clone().expect("leg INVITE stored");
                let ack = SipMessage {
                    start: StartLine::Request { method: Method::Ack, uri: inv.to.uri.clone() },
                    via: inv.via.clone(),
                    from: inv.from.clone(),
                    to: msg.to.clone(),
                    call_id: inv.call_id.clone(),
                    cseq: CSeq { seq: 1, method: Method::Ack },
                    contact: None,
                    content_type: None,
                    extra: Vec::new(),
                    body: None,
                };
                if let Some(third) = st.third {
                    w.send(Sender::Unit(addr), third, UnitMsg::Sip(ack));
                }
                st.phase = CPhase::Confirmed;
                w.calls[st.call as usize].conference = true;
                w.log(
                    now,
                    addr.pouch,
                    addr.to_string(),
                    Severity::Info,
                    Some(w.calls[st.call as usize].sip_call_id.clone()),
                    "conference leg established".to_string(),
                );
            } else if msg.cseq.method == Method::Invite && status >= 300 {
                st.third = None;
                st.third_invite = None;
                st.phase = CPhase::Confirmed;
                w.log(
                    now,
                    addr.pouch,
                    addr.to_string(),
                    Severity::Warn,
                    Some(w.calls[st.call as usize].sip_call_id.clone()),
                    format!("conference leg failed with {status}"),
                );
            } else if msg.cseq.method == Method::Bye {
                c_bye_settled(w, addr, st, msg);
            }
            return;
        }
        if msg.cseq.method == Method::Bye {
            c_bye_settled(w, addr, st, msg);
            return;
        }
        // Primary-leg progress: relay to the edge.
        if msg.cseq.method == Method::Invite && status >= 300 && st.phase != CPhase::Closed {
            // The terminating side gave up; it cleans itself, we clean ours.
            if let Ok(siph) = w.resolve(addr.pouch, "SIP-handler") {
                w.send(Sender::Unit(addr), siph, UnitMsg::Sip(msg));
            }
            c_retire(w, addr, st);
            return;
        }
        if status >= 180 && msg.cseq.method == Method::Invite {
            st.phase = if status < 200 { CPhase::Ringing } else { st.phase };
        }
        if let Ok(siph) = w.resolve(addr.pouch, "SIP-handler") {
            w.send(Sender::Unit(addr), siph, UnitMsg::Sip(msg));
        }
    } else {
        // Terminating side: edge responses head to the peer session unit.
        if msg.cseq.method == Method::Bye {
            if let Some(peer) = st.peer {
                w.send(Sender::Unit(addr), peer, UnitMsg::Sip(msg));
            }
            c_retire(w, addr, st);
            return;
        }
        if msg.cseq.method == Method::Invite && status >= 300 {
            if let Some(peer) = st.peer {
                w.send(Sender::Unit(addr), peer, UnitMsg::Sip(msg));
            }
            c_retire(w, addr, st);
            return;
        }
        if let Some(peer) = st.peer {
            w.send(Sender::Unit(addr), peer, UnitMsg::Sip(msg));
        }
    }
}

/// One teardown acknowledgment accounted for; when all legs have answered,
/// the edge gets the primary acknowledgment and this side retires.
fn c_bye_settled(w: &mut World, addr: UnitAddress, st: &mut CState, msg: SipMessage) {
    if !msg.call_id.ends_with("-leg3") {
        st.primary_bye_ok = Some(msg);
    }
    st.pending_byes = st.pending_byes.saturating_sub(1);
    if st.pending_byes > 0 {
        return;
    }
    if let Some(ok) = st.primary_bye_ok.take() {
        if let Ok(siph) = w.resolve(addr.pouch, "SIP-handler") {
            w.send(Sender::Unit(addr), siph, UnitMsg::Sip(ok));
        }
    }
    c_retire(w, addr, st);
}

fn c_forwarded(w: &mut World, now: SimTime, addr: UnitAddress, st: &mut CState, ctx: ForwardCtx) {
    if st.phase != CPhase::Start {
        return;
    }
    let impu = ctx.invite.to.uri.clone();
    st.leg = ctx.leg;
    st.invite = Some(ctx.invite);
    st.offer = Some(ctx.answer);
    st.mixer = Some(ctx.mixer);
    st.peer = Some(ctx.orig);
    st.phase = CPhase::Fetching;
    w.fetch_profile(now, addr, impu);
}

fn c_profile(w: &mut World, now: SimTime, addr: UnitAddress, st: &mut CState, result: ProfileResult) {
    if st.phase != CPhase::Fetching {
        return;
    }
    let fail = |w: &mut World, st: &mut CState, code: u16| {
        if st.is_orig() {
            c_fail_orig(w, now, addr, st, code);
        } else {
            c_fail_term(w, now, addr, st, code);
        }
    };
    let profile = match result {
        ProfileResult::Found(p) => p,
        ProfileResult::NotFound => return fail(w, st, 404),
        ProfileResult::Unavailable => return fail(w, st, 500),
    };
    if !profile.mmtel {
        return fail(w, st, 403);
    }
    if !st.is_orig() && !profile.registered {
        return fail(w, st, 480);
    }
    st.adhoc = profile.adhoc_conf;
    let bare = bare_id(&profile.impu).to_string();
    st.phase = CPhase::PlacingUnits;
    let queries = if st.is_orig() {
        vec![
            (UnitType::T, bare.clone()),
            (UnitType::A, bare.clone()),
            (UnitType::M, bare),
        ]
    } else {
        vec![(UnitType::T, bare.clone()), (UnitType::A, bare)]
    };
    w.place_request(addr, Some(st.call), queries);
}

fn c_placed(
    w: &mut World,
    now: SimTime,
    addr: UnitAddress,
    st: &mut CState,
    results: Vec<(UnitType, Result<PouchId, PlaceFailure>)>,
) {
    match st.phase {
        CPhase::PlacingUnits => c_units_placed(w, now, addr, st, results),
        CPhase::PlacingPeer => c_peer_placed(w, now, addr, st, results),
        CPhase::PlacingConf => c_conf_placed(w, now, addr, st, results),
        _ => {}
    }
}

fn pick(results: &[(UnitType, Result<PouchId, PlaceFailure>)], t: UnitType) -> Option<PouchId> {
    results.iter().find(|(ty, _)| *ty == t).and_then(|(_, r)| r.ok())
}

fn c_units_placed(
    w: &mut World,
    now: SimTime,
    addr: UnitAddress,
    st: &mut CState,
    results: Vec<(UnitType, Result<PouchId, PlaceFailure>)>,
) {
    let fail = |w: &mut World, st: &mut CState| {
        if st.is_orig() {
            c_fail_orig(w, now, addr, st, 503);
        } else {
            c_fail_term(w, now, addr, st, 503);
        }
    };
    let (Some(tp), Some(ap)) = (pick(&results, UnitType::T), pick(&results, UnitType::A)) else {
        return fail(w, st);
    };
    let mp = pick(&results, UnitType::M);
    if st.is_orig() && mp.is_none() {
        return fail(w, st);
    }
    let side = st.side;
    let t = match w.spawn_unit(
        tp,
        UnitType::T,
        UnitInit::T { call: st.call, side, adhoc: st.adhoc, c: addr },
    ) {
        Ok(a) => a,
        Err(_) => return fail(w, st),
    };
    let a = match w.spawn_unit(ap, UnitType::A, UnitInit::A { call: st.call, side }) {
        Ok(a) => a,
        Err(_) => return fail(w, st),
    };
    st.t = Some(t);
    st.a = Some(a);
    {
        let call = &mut w.calls[st.call as usize];
        call.unit_pouches.insert(tp);
        call.unit_pouches.insert(ap);
        if st.is_orig() {
            call.t_orig = Some(t);
        }
    }
    let offer = st.offer.clone().expect("offer stored before placement");
    let media = if st.is_orig() {
        MediaRole::SpawnMixer(mp.expect("checked above"))
    } else {
        MediaRole::Join(st.mixer.expect("terminating leg knows its mixer"))
    };
    st.phase = CPhase::Negotiating;
    w.send(
        Sender::Unit(addr),
        a,
        UnitMsg::NegotiateRequest { call: st.call, offer, media },
    );
}

fn c_negotiated(
    w: &mut World,
    now: SimTime,
    addr: UnitAddress,
    st: &mut CState,
    result: Result<NegotiatedMedia, NegotiateFailure>,
) {
    if st.phase != CPhase::Negotiating {
        return;
    }
    let media = match result {
        Ok(m) => m,
        Err(NegotiateFailure::NoCommonCodec) => {
            if st.is_orig() {
                c_fail_orig(w, now, addr, st, 488);
            } else {
                c_fail_term(w, now, addr, st, 488);
            }
            return;
        }
        Err(NegotiateFailure::MixerUnavailable) => {
            if st.is_orig() {
                c_fail_orig(w, now, addr, st, 503);
            } else {
                c_fail_term(w, now, addr, st, 503);
            }
            return;
        }
    };
    if st.is_orig() {
        st.m = Some(media.mixer);
        st.mixer = Some(media.mixer);
        st.answer = Some(media.answer.clone());
        w.calls[st.call as usize].negotiated = media.answer.codecs.first().copied();
        let callee_bare = bare_id(&w.calls[st.call as usize].callee_impu).to_string();
        st.phase = CPhase::PlacingPeer;
        w.place_request(addr, Some(st.call), vec![(UnitType::C, callee_bare)]);
    } else {
        st.answer = Some(media.answer.clone());
        // Send the narrowed INVITE out the edge.
        let mut invite = st.invite.clone().expect("stored at handoff");
        invite.body = Some(serialize_sdp(&media.answer));
        invite.content_type = Some("application/sdp".to_string());
        st.phase = CPhase::Ringing;
        if let Ok(siph) = w.resolve(addr.pouch, "SIP-handler") {
            w.send(Sender::Unit(addr), siph, UnitMsg::Sip(invite));
        }
    }
}

fn c_peer_placed(
    w: &mut World,
    now: SimTime,
    addr: UnitAddress,
    st: &mut CState,
    results: Vec<(UnitType, Result<PouchId, PlaceFailure>)>,
) {
    let Some(pouch) = pick(&results, UnitType::C) else {
        c_fail_orig(w, now, addr, st, 503);
        return;
    };
    let peer = match w.spawn_unit(pouch, UnitType::C, UnitInit::C { call: st.call, side: Side::Term }) {
        Ok(c) => c,
        Err(_) => {
            c_fail_orig(w, now, addr, st, 503);
            return;
        }
    };
    st.peer = Some(peer);
    {
        let call = &mut w.calls[st.call as usize];
        call.c_term = Some(peer);
        call.unit_pouches.insert(pouch);
    }
    let ctx = ForwardCtx {
        call: st.call,
        invite: st.invite.clone().expect("stored on entry"),
        answer: st.answer.clone().expect("negotiated before placing peer"),
        mixer: st.mixer.expect("negotiated before placing peer"),
        orig: addr,
        leg: LegKind::Primary,
    };
    st.phase = CPhase::Ringing;
    w.send(Sender::Unit(addr), peer, UnitMsg::ForwardInvite(Box::new(ctx)));
}

fn c_conference_add(w: &mut World, now: SimTime, addr: UnitAddress, st: &mut CState, target: String) {
    if !st.is_orig() || st.phase != CPhase::Confirmed || st.third.is_some() {
        return;
    }
    st.conf_target = Some(target.clone());
    st.phase = CPhase::PlacingConf;
    w.log(
        now,
        addr.pouch,
        addr.to_string(),
        Severity::Info,
        Some(w.calls[st.call as usize].sip_call_id.clone()),
        format!("adding conference leg to {target}"),
    );
    w.place_request(addr, Some(st.call), vec![(UnitType::C, bare_id(&target).to_string())]);
}

fn c_conf_placed(
    w: &mut World,
    now: SimTime,
    addr: UnitAddress,
    st: &mut CState,
    results: Vec<(UnitType, Result<PouchId, PlaceFailure>)>,
) {
    let back_to_confirmed = |w: &mut World, st: &mut CState, why: &str| {
        st.phase = CPhase::Confirmed;
        st.conf_target = None;
        w.log(
            now,
            addr.pouch,
            addr.to_string(),
            Severity::Warn,
            Some(w.calls[st.call as usize].sip_call_id.clone()),
            format!("conference leg setup aborted: {why}"),
        );
    };
    let Some(target) = st.conf_target.clone() else {
        return back_to_confirmed(w, st, "no target recorded");
    };
    let Some(pouch) = pick(&results, UnitType::C) else {
        return back_to_confirmed(w, st, "no eligible pouch");
    };
    let third = match w.spawn_unit(pouch, UnitType::C, UnitInit::C { call: st.call, side: Side::Third })
    {
        Ok(c) => c,
        Err(_) => return back_to_confirmed(w, st, "spawn rejected"),
    };
    w.calls[st.call as usize].unit_pouches.insert(pouch);
    let base = st.invite.clone().expect("stored on entry");
    let answer = st.answer.clone().expect("negotiated");
    let invite = SipMessage {
        start: StartLine::Request { method: Method::Invite, uri: target.clone() },
        via: base.via.clone(),
        from: base.from.clone(),
        to: NameAddr::new(target),
        call_id: format!("{}-leg3", base.call_id),
        cseq: CSeq { seq: 1, method: Method::Invite },
        contact: base.contact.clone(),
        content_type: Some("application/sdp".to_string()),
        extra: Vec::new(),
        body: Some(serialize_sdp(&answer)),
    };
    st.third = Some(third);
    st.third_invite = Some(invite.clone());
    st.phase = CPhase::AwaitingConf;
    let ctx = ForwardCtx {
        call: st.call,
        invite,
        answer,
        mixer: st.mixer.expect("negotiated"),
        orig: addr,
        leg: LegKind::Conference,
    };
    w.send(Sender::Unit(addr), third, UnitMsg::ForwardInvite(Box::new(ctx)));
}

// ----------------------------------------------------------------------
// Negotiation unit
// ----------------------------------------------------------------------

#[derive(Debug)]
pub(crate) struct AState {
    call: u32,
    #[allow(dead_code)]
    side: Side,
}

fn a_handle(w: &mut World, _now: SimTime, addr: UnitAddress, st: &mut AState, env: Envelope) {
    let UnitMsg::NegotiateRequest { call, offer, media } = env.msg else { return };
    let Sender::Unit(requester) = env.from else { return };
    let supported = w
        .cmw(addr.pouch)
        .map(|c| c.supported_codecs.clone())
        .unwrap_or_default();
    let port = 30_000u16.wrapping_add((call % 10_000) as u16);
    let result = match negotiate(&offer, &supported, &format!("media-{}.unity", addr.pouch.0), port)
    {
        Err(_) => Err(NegotiateFailure::NoCommonCodec),
        Ok(answer) => match media {
            MediaRole::Join(mixer) => Ok(NegotiatedMedia { answer, mixer }),
            MediaRole::SpawnMixer(pouch) => {
                match w.spawn_unit(pouch, UnitType::M, UnitInit::M { call }) {
                    Ok(mixer) => {
                        w.calls[call as usize].unit_pouches.insert(pouch);
                        Ok(NegotiatedMedia { answer, mixer })
                    }
                    Err(_) => Err(NegotiateFailure::MixerUnavailable),
                }
            }
        },
    };
    w.send(
        Sender::Unit(addr),
        requester,
        UnitMsg::NegotiateReply { call: st.call, result },
    );
}

// ----------------------------------------------------------------------
// Telephony feature unit
// ----------------------------------------------------------------------

#[derive(Debug)]
pub(crate) struct TState {
    call: u32,
    #[allow(dead_code)]
    side: Side,
    adhoc: bool,
    c: UnitAddress,
}

fn t_handle(w: &mut World, now: SimTime, addr: UnitAddress, st: &mut TState, env: Envelope) {
    match env.msg {
        UnitMsg::TEvent(ev) => {
            let what = match ev {
                TelephonyEvent::Answered { .. } => "answered",
                TelephonyEvent::Ending { .. } => "ending",
                TelephonyEvent::ConferenceAdd { .. } => return,
            };
            w.log(
                now,
                addr.pouch,
                addr.to_string(),
                Severity::Debug,
                Some(w.calls[st.call as usize].sip_call_id.clone()),
                format!("telephony event: {what}"),
            );
        }
        UnitMsg::Dtmf { call, digits, target } => {
            let sip_id = w.calls[st.call as usize].sip_call_id.clone();
            if digits == "*3" {
                if !st.adhoc {
                    w.log(
                        now,
                        addr.pouch,
                        addr.to_string(),
                        Severity::Warn,
                        Some(sip_id),
                        "ad-hoc conferencing not provisioned; DTMF ignored".to_string(),
                    );
                    return;
                }
                let Some(target) = target else {
                    w.log(
                        now,
                        addr.pouch,
                        addr.to_string(),
                        Severity::Warn,
                        Some(sip_id),
                        "conference request without a target ignored".to_string(),
                    );
                    return;
                };
                w.send(
                    Sender::Unit(addr),
                    st.c,
                    UnitMsg::TEvent(TelephonyEvent::ConferenceAdd { call, target }),
                );
            } else {
                w.log(
                    now,
                    addr.pouch,
                    addr.to_string(),
                    Severity::Debug,
                    Some(sip_id),
                    format!("DTMF {digits} observed"),
                );
            }
        }
        _ => {}
    }
}

// ----------------------------------------------------------------------
// Dispatch
// ----------------------------------------------------------------------

impl World {
    /// Run the destination unit's handler logic. The record is taken out
    /// for the duration so handlers can borrow the world freely; every
    /// state change to *other* units happens through queued messages.
    pub(crate) fn handle_envelope(&mut self, now: SimTime, env: Envelope) {
        let id = env.to.id;
        let Some(mut rec) = self.units.remove(&id) else { return };
        let addr = rec.addr;
        match &mut rec.body {
            UnitBody::SipH(st) => siph_handle(self, now, addr, st, env),
            UnitBody::Nss => nss_handle(self, now, addr, env),
            UnitBody::H(st) => h_handle(self, now, addr, st, env),
            UnitBody::Diah => diah_handle(self, now, addr, env),
            UnitBody::C(st) => c_handle(self, now, addr, st, env),
            UnitBody::A(st) => a_handle(self, now, addr, st, env),
            UnitBody::T(st) => t_handle(self, now, addr, st, env),
            UnitBody::M(st) => crate::sim::media::m_handle(self, now, addr, st, env),
        }
        self.units.insert(id, rec);
    }
}

// ----------------------------------------------------------------------
// User agents
// ----------------------------------------------------------------------

#[derive(Debug)]
struct UaDialog {
    call: u32,
    invite: SipMessage,
    remote_tag: Option<String>,
    answered: bool,
    bye_sent: bool,
}

#[derive(Debug)]
pub(crate) struct UaState {
    pub id: UaId,
    pub impu: String,
    n: u32,
    reg_cseq: u32,
    dialogs: BTreeMap<String, UaDialog>,
}

impl UaState {
    /// Abandon a dialog without signaling (the network side is gone).
    pub(crate) fn forget_dialog(&mut self, sip_call_id: &str) {
        self.dialogs.remove(sip_call_id);
    }

    pub(crate) fn new(id: UaId, n: u32) -> Self {
        let impu = impu_of(&format!("user{:04}", n + 1));
        UaState { id, impu, n, reg_cseq: 0, dialogs: BTreeMap::new() }
    }
}

fn ua_via(n: u32) -> Vec<String> {
    vec![format!("SIP/2.0/UDP ua{n}.unity")]
}

fn ua_contact(n: u32) -> Option<String> {
    Some(format!("sip:ua{n}@ua{n}.unity"))
}

fn ua_offer(n: u32, call: u32) -> SdpBody {
    SdpBody {
        owner: format!("ua{n}"),
        session_id: u64::from(call) + 1,
        session_version: 1,
        address: format!("ua{n}.unity"),
        port: 40_000u16.wrapping_add((n % 20_000) as u16),
        codecs: vec![
            sip_codec::Codec::Pcmu,
            sip_codec::Codec::Pcma,
            sip_codec::Codec::TelephoneEvent,
        ],
    }
}

fn ua_register_msg(ua: &mut UaState) -> SipMessage {
    ua.reg_cseq += 1;
    SipMessage {
        start: StartLine::Request { method: Method::Register, uri: "sip:unity".to_string() },
        via: ua_via(ua.n),
        from: NameAddr::with_tag(ua.impu.clone(), format!("rt{}", ua.reg_cseq)),
        to: NameAddr::new(ua.impu.clone()),
        call_id: format!("reg-{}@ua{}.unity", ua.id.0, ua.n),
        cseq: CSeq { seq: ua.reg_cseq, method: Method::Register },
        contact: ua_contact(ua.n),
        content_type: None,
        extra: Vec::new(),
        body: None,
    }
}

fn ua_invite_msg(ua: &UaState, callee_impu: &str, sip_call_id: &str, call: u32) -> SipMessage {
    let offer = ua_offer(ua.n, call);
    SipMessage {
        start: StartLine::Request { method: Method::Invite, uri: callee_impu.to_string() },
        via: ua_via(ua.n),
        from: NameAddr::with_tag(ua.impu.clone(), format!("ct{call:08}")),
        to: NameAddr::new(callee_impu.to_string()),
        call_id: sip_call_id.to_string(),
        cseq: CSeq { seq: 1, method: Method::Invite },
        contact: ua_contact(ua.n),
        content_type: Some("application/sdp".to_string()),
        extra: Vec::new(),
        body: Some(serialize_sdp(&offer)),
    }
}

fn ua_in_dialog(dialog: &UaDialog, method: Method, seq: u32) -> SipMessage {
    let inv = &dialog.invite;
    let mut to = inv.to.clone();
    if let Some(tag) = &dialog.remote_tag {
        to.tag = Some(tag.clone());
    }
    SipMessage {
        start: StartLine::Request { method, uri: inv.to.uri.clone() },
        via: inv.via.clone(),
        from: inv.from.clone(),
        to,
        call_id: inv.call_id.clone(),
        cseq: CSeq { seq, method },
        contact: None,
        content_type: None,
        extra: Vec::new(),
        body: None,
    }
}

impl World {
    pub(crate) fn ua_rx(&mut self, now: SimTime, ua: UaId, text: String) {
        let msg = match parse_message(&text) {
            Ok(m) => m,
            Err(_) => return,
        };
        if msg.is_request() {
            self.ua_request(now, ua, msg);
        } else {
            self.ua_response(now, ua, msg);
        }
    }

    fn ua_request(&mut self, now: SimTime, ua: UaId, msg: SipMessage) {
        let siph = self.base.siph;
        let idx = ua.0 as usize;
        match msg.method().expect("request has a method") {
            Method::Invite => {
                let call = self.call_by_sip_id(&msg.call_id).unwrap_or(u32::MAX);
                let ringing = build_response(&msg, 180, None).expect("request");
                let body = msg
                    .body
                    .clone()
                    .map(|b| ("application/sdp".to_string(), b));
                let ok = build_response(&msg, 200, body).expect("request");
                self.uas[idx].dialogs.insert(
                    msg.call_id.clone(),
                    UaDialog {
                        call,
                        invite: msg,
                        remote_tag: None,
                        answered: false,
                        bye_sent: false,
                    },
                );
                self.send(Sender::Ua(ua), siph, UnitMsg::SipText(serialize_message(&ringing)));
                self.send(Sender::Ua(ua), siph, UnitMsg::SipText(serialize_message(&ok)));
            }
            Method::Ack => {
                if let Some(d) = self.uas[idx].dialogs.get_mut(&msg.call_id) {
                    d.answered = true;
                }
            }
            Method::Bye => {
                let ok = build_response(&msg, 200, None).expect("request");
                self.uas[idx].dialogs.remove(&msg.call_id);
                self.send(Sender::Ua(ua), siph, UnitMsg::SipText(serialize_message(&ok)));
            }
            _ => {}
        }
        let _ = now;
    }

    fn ua_response(&mut self, now: SimTime, ua: UaId, msg: SipMessage) {
        let status = msg.status().expect("response has a status");
        let idx = ua.0 as usize;
        let Some(dialog) = self.uas[idx].dialogs.get_mut(&msg.call_id) else { return };
        let call = dialog.call;
        match msg.cseq.method {
            Method::Invite => {
                if status < 200 {
                    return;
                }
                if status < 300 {
                    if dialog.answered {
                        return;
                    }
                    dialog.answered = true;
                    dialog.remote_tag = msg.to.tag.clone();
                    let ack = ua_in_dialog(dialog, Method::Ack, 1);
                    let bye_at = now + self.plan.call_duration;
                    let sip_call_id = msg.call_id.clone();
                    self.mark_established(now, call);
                    let siph = self.base.siph;
                    self.send(Sender::Ua(ua), siph, UnitMsg::SipText(serialize_message(&ack)));
                    let _ = self.kernel.schedule(
                        bye_at,
                        Payload::UaAct { ua, act: UaAction::SendBye { sip_call_id } },
                    );
                } else {
                    self.uas[idx].dialogs.remove(&msg.call_id);
                    if call != u32::MAX {
                        self.mark_failed(now, call, status);
                    }
                }
            }
            Method::Bye => {
                if status < 200 {
                    return;
                }
                self.uas[idx].dialogs.remove(&msg.call_id);
                if call != u32::MAX {
                    self.mark_torn_down(now, call);
                }
            }
            _ => {}
        }
    }

    pub(crate) fn ua_act(&mut self, now: SimTime, ua: UaId, act: UaAction) {
        let siph = self.base.siph;
        let idx = ua.0 as usize;
        match act {
            UaAction::SendRegister => {
                let msg = ua_register_msg(&mut self.uas[idx]);
                self.send(Sender::Ua(ua), siph, UnitMsg::SipText(serialize_message(&msg)));
            }
            UaAction::SendBye { sip_call_id } => {
                let Some(dialog) = self.uas[idx].dialogs.get_mut(&sip_call_id) else { return };
                if !dialog.answered || dialog.bye_sent {
                    return;
                }
                dialog.bye_sent = true;
                let call = dialog.call;
                let bye = ua_in_dialog(dialog, Method::Bye, 2);
                // The speech path ends when the endpoint hangs up, even
                // though signaling still has to unwind.
                if call != u32::MAX
                    && self.calls[call as usize].outcome == super::CallOutcome::Established
                {
                    self.concurrent = self.concurrent.saturating_sub(1);
                }
                self.send(Sender::Ua(ua), siph, UnitMsg::SipText(serialize_message(&bye)));
            }
            UaAction::SendDtmf { sip_call_id, digits, target } => {
                let Some(dialog) = self.uas[idx].dialogs.get(&sip_call_id) else { return };
                let call = dialog.call;
                if call == u32::MAX {
                    return;
                }
                let Some(t) = self.calls[call as usize].t_orig else { return };
                self.send(
                    Sender::Ua(ua),
                    t,
                    UnitMsg::Dtmf { call, digits, target: Some(target) },
                );
            }
        }
        let _ = now;
    }

    // ------------------------------------------------------------------
    // Traffic
    // ------------------------------------------------------------------

    pub(crate) fn on_call_arrival(&mut self, now: SimTime, k: u64) {
        let n = u64::from(self.plan.subscribers);
        if n >= 2 {
            // Uniform pair with callee != caller, drawn from a stream of
            // its own so pairing never perturbs placement or arrivals.
            let caller = self.rng.next_below("traffic-pairs", n);
            let mut callee = self.rng.next_below("traffic-pairs", n - 1);
            if callee >= caller {
                callee += 1;
            }
            self.start_call(now, UaId(caller as u32), UaId(callee as u32));
        }
        self.schedule_next_arrival(now, k);
    }

    /// Caller hangs up immediately, answered or not (cancel-equivalent:
    /// a BYE during setup abandons the attempt). Scripted-scenario hook.
    pub fn abandon_call(&mut self, now: SimTime, call: u32) {
        let caller = self.calls[call as usize].caller;
        let sip_call_id = self.calls[call as usize].sip_call_id.clone();
        let idx = caller.0 as usize;
        let Some(dialog) = self.uas[idx].dialogs.get_mut(&sip_call_id) else {
            return;
        };
        if dialog.bye_sent {
            return;
        }
        dialog.bye_sent = true;
        let bye = ua_in_dialog(dialog, Method::Bye, 2);
        if self.calls[call as usize].outcome == super::CallOutcome::Established {
            self.concurrent = self.concurrent.saturating_sub(1);
        }
        let siph = self.base.siph;
        self.send(Sender::Ua(caller), siph, UnitMsg::SipText(serialize_message(&bye)));
        let _ = now;
    }

    /// Have the calling UA send DTMF digits mid-call (conference trigger
    /// when the digits are the configured sequence and the caller has the
    /// conference feature). Also used directly by scripted scenarios.
    pub fn send_dtmf(&mut self, now: SimTime, call: u32, digits: &str, target: &str) {
        let caller = self.calls[call as usize].caller;
        let sip_call_id = self.calls[call as usize].sip_call_id.clone();
        self.ua_act(
            now,
            caller,
            UaAction::SendDtmf {
                sip_call_id,
                digits: digits.to_string(),
                target: target.to_string(),
            },
        );
    }

    /// Originate one call now. Also used directly by scripted scenarios.
    pub fn start_call(&mut self, now: SimTime, caller: UaId, callee: UaId) -> u32 {
        let call = self.new_call(now, caller, callee);
        let sip_call_id = self.calls[call as usize].sip_call_id.clone();
        let callee_impu = self.calls[call as usize].callee_impu.clone();
        let invite = ua_invite_msg(&self.uas[caller.0 as usize], &callee_impu, &sip_call_id, call);
        self.uas[caller.0 as usize].dialogs.insert(
            sip_call_id,
            UaDialog {
                call,
                invite: invite.clone(),
                remote_tag: None,
                answered: false,
                bye_sent: false,
            },
        );
        // Signaling reaches the handler after the edge hop; the receive
        // stamp marks that arrival.
        self.calls[call as usize].t_rx = Some(now + SimDuration(self.kernel.network().ua_us));
        let siph = self.base.siph;
        self.send(Sender::Ua(caller), siph, UnitMsg::SipText(serialize_message(&invite)));
        let _ = self
            .kernel
            .schedule(now + CALL_GUARD, Payload::CallGuard { call });
        call
    }

    pub(crate) fn on_rereg(&mut self, now: SimTime, n: u64) {
        let ua = UaId((n % u64::from(self.plan.subscribers)) as u32);
        self.ua_act(now, ua, UaAction::SendRegister);
        if let Some(interval) = self.plan.rereg_interval_us {
            let next = now + SimDuration(interval);
            if next < self.plan.end() {
                let _ = self.kernel.schedule(next, Payload::Rereg { n: n + 1 });
            }
        }
    }

    pub(crate) fn on_call_guard(&mut self, now: SimTime, call: u32) {
        if self.calls[call as usize].outcome != super::CallOutcome::Pending {
            return;
        }
        let caller = self.calls[call as usize].caller;
        let sip_call_id = self.calls[call as usize].sip_call_id.clone();
        self.log(
            now,
            self.base.siph.pouch,
            "harness".to_string(),
            Severity::Warn,
            Some(sip_call_id.clone()),
            "call setup timed out".to_string(),
        );
        // Synthesize the timeout answer so the endpoint cleans up; the
        // bookkeeping happens when the response lands.
        let invite = self.uas[caller.0 as usize]
            .dialogs
            .get(&sip_call_id)
            .map(|d| d.invite.clone());
        self.mark_failed(now, call, 500);
        if let Some(invite) = invite {
            let resp = build_response(&invite, 500, None).expect("request");
            let _ = self.kernel.schedule(
                now,
                Payload::UaRx { ua: caller, text: serialize_message(&resp) },
            );
        }
    }
}
