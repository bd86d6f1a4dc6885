//! Shared unit vocabulary: the eight capability-unit types and the address
//! every message is routed by.

use std::fmt;

use crate::kernel::PouchId;

/// The capability unit kinds making up the telephony core.
///
/// Base service units (`SIPh`, `Nss`, `H`, `Diah`) are singletons placed at
/// deploy time; per-call units (`C`, `A`, `T`, `M`) are spawned per service
/// request and terminated with the call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnitType {
    /// SIP handler: UA-facing parse/route front end.
    SipH,
    /// Node selector service agent.
    Nss,
    /// HSS front end with per-pouch profile cache.
    H,
    /// Diameter adapter between H and the subscriber database.
    Diah,
    /// Call session control, one per call side.
    C,
    /// Application/media controller: codec negotiation, media plumbing.
    A,
    /// Telephony service logic (MMTEL triggers, DTMF supplementary services).
    T,
    /// Media processor: 20 ms frame loop, mixing for conferences.
    M,
}

pub const ALL_UNIT_TYPES: [UnitType; 8] = [
    UnitType::SipH,
    UnitType::Nss,
    UnitType::H,
    UnitType::Diah,
    UnitType::C,
    UnitType::A,
    UnitType::T,
    UnitType::M,
];

impl UnitType {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitType::SipH => "SIPh",
            UnitType::Nss => "NSS",
            UnitType::H => "H",
            UnitType::Diah => "Diah",
            UnitType::C => "C",
            UnitType::A => "A",
            UnitType::T => "T",
            UnitType::M => "M",
        }
    }

    pub fn from_token(tok: &str) -> Option<UnitType> {
        match tok {
            "SIPh" => Some(UnitType::SipH),
            "NSS" => Some(UnitType::Nss),
            "H" => Some(UnitType::H),
            "Diah" => Some(UnitType::Diah),
            "C" => Some(UnitType::C),
            "A" => Some(UnitType::A),
            "T" => Some(UnitType::T),
            "M" => Some(UnitType::M),
            _ => None,
        }
    }

    /// Base service units exist from deploy to shutdown; the rest live per
    /// call.
    pub fn is_base_service(self) -> bool {
        matches!(
            self,
            UnitType::SipH | UnitType::Nss | UnitType::H | UnitType::Diah
        )
    }

    /// Key under which this type is advertised in resolve tables, if it is a
    /// resolvable service at all. Per-call units are addressed directly.
    pub fn service_key(self) -> Option<&'static str> {
        match self {
            UnitType::SipH => Some("SIP-handler"),
            UnitType::Nss => Some("NSS"),
            UnitType::H => Some("HSS-frontend"),
            UnitType::Diah => Some("Diameter"),
            _ => None,
        }
    }
}

impl fmt::Display for UnitType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// System-wide unique instance number, never reused within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UnitId(pub u64);

/// Where a unit lives. The full triple travels in every envelope so
/// placement is transparent to senders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UnitAddress {
    pub unit_type: UnitType,
    pub id: UnitId,
    pub pouch: PouchId,
}

impl fmt::Display for UnitAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}@{}", self.unit_type, self.id.0, self.pouch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_round_trip() {
        for t in ALL_UNIT_TYPES {
            assert_eq!(UnitType::from_token(t.as_str()), Some(t));
        }
        assert_eq!(UnitType::from_token("Q"), None);
        assert_eq!(UnitType::from_token("siph"), None);
    }

    #[test]
    fn base_service_split() {
        let base: Vec<_> = ALL_UNIT_TYPES
            .into_iter()
            .filter(|t| t.is_base_service())
            .collect();
        assert_eq!(
            base,
            [UnitType::SipH, UnitType::Nss, UnitType::H, UnitType::Diah]
        );
    }

    #[test]
    fn only_base_services_resolve() {
        for t in ALL_UNIT_TYPES {
            assert_eq!(t.service_key().is_some(), t.is_base_service());
        }
    }
}
