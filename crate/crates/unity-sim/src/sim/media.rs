//! Media mixer unit: periodic frame work and drift accounting.
//!
//! A mixer charges CPU once per frame period, scaled by the number of
//! legs it mixes. Frame deadlines stay anchored to the activation instant
//! (t0 + k * period) so queueing delay shows up as a per-frame offset
//! instead of accumulating.

use crate::ids::Severity;
use crate::time::{SimDuration, SimTime};
use crate::unit::{UnitAddress, UnitId};

use super::{Envelope, MediaSample, Payload, UnitMsg, World};

/// RTP-style frame period.
pub const MEDIA_FRAME_US: u64 = 20_000;

#[derive(Debug)]
pub(crate) struct MState {
    pub call: u32,
    pub legs: u32,
    /// Voice mixing (conference) costs more per frame than forwarding.
    pub mixing: bool,
    pub active: bool,
    pub t0: SimTime,
}

impl MState {
    pub(crate) fn new(call: u32) -> Self {
        MState { call, legs: 2, mixing: false, active: false, t0: SimTime::ZERO }
    }
}

pub(crate) fn m_handle(
    w: &mut World,
    now: SimTime,
    addr: UnitAddress,
    st: &mut MState,
    env: Envelope,
) {
    match env.msg {
        UnitMsg::MediaStart { .. } => {
            if st.active {
                return;
            }
            st.active = true;
            st.legs = 2;
            st.mixing = false;
            st.t0 = now;
            let _ = w.kernel.schedule(
                now + SimDuration(MEDIA_FRAME_US),
                Payload::MediaTick { unit: addr.id, k: 1 },
            );
        }
        UnitMsg::MediaAddLeg { .. } => {
            st.legs = 3;
            st.mixing = true;
            w.log(
                now,
                addr.pouch,
                addr.to_string(),
                Severity::Debug,
                Some(w.calls[st.call as usize].sip_call_id.clone()),
                "mixing third leg".to_string(),
            );
        }
        UnitMsg::MediaStop { .. } => {
            st.active = false;
        }
        _ => {}
    }
}

impl World {
    /// Frame deadline reached: charge the mixing work for this frame and
    /// arm the next deadline.
    pub(crate) fn on_media_tick(&mut self, _now: SimTime, unit: UnitId, k: u64) {
        let Some(rec) = self.units.get(&unit) else { return };
        let super::units::UnitBody::M(st) = &rec.body else { return };
        if !st.active {
            return;
        }
        let pouch = rec.addr.pouch;
        let mut cost = u64::from(self.costs.m_frame_leg_us) * u64::from(st.legs);
        if st.mixing {
            cost = cost * 3 / 2;
        }
        let next = st.t0 + SimDuration((k + 1) * MEDIA_FRAME_US);
        if self
            .kernel
            .execute_work(pouch, cost, Payload::MediaWork { unit, k })
            .is_err()
        {
            return;
        }
        let _ = self.kernel.schedule(next, Payload::MediaTick { unit, k: k + 1 });
    }

    /// Frame work finished: how late relative to the ideal deadline?
    pub(crate) fn on_media_work(&mut self, now: SimTime, unit: UnitId, k: u64) {
        let Some(rec) = self.units.get(&unit) else { return };
        let super::units::UnitBody::M(st) = &rec.body else { return };
        let ideal = st.t0 + SimDuration(k * MEDIA_FRAME_US);
        if !self.in_window(ideal) {
            return;
        }
        let offset_us = (now - ideal).0;
        let call = st.call;
        self.samples.media.push(MediaSample { call, k, offset_us });
    }
}
