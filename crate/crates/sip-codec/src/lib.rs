//! SIP/SDP subset codec used by the Unity testbed.
//!
//! Scope is the signaling subset the testbed exercises: REGISTER, INVITE,
//! ACK and BYE requests plus their responses, and an SDP audio description
//! with offer/answer codec negotiation. Parsing is tolerant (LF accepted as
//! a line terminator, header names case-insensitive); serialization is
//! strict (CRLF line endings, canonical header order, recomputed
//! Content-Length). `parse(serialize(m))` reproduces `m` field for field.

mod message;
mod sdp;

pub use message::{
    build_response, parse_message, reason_phrase, response_matches, serialize_message, CSeq,
    DialogKey, Method, NameAddr, SipError, SipMessage, StartLine,
};
pub use sdp::{negotiate, parse_sdp, serialize_sdp, Codec, SdpBody, SdpError};

/// FNV-1a 64-bit hash, the deterministic hash used across the testbed
/// (placement keys, generated dialog tags).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::fnv1a64;

    #[test]
    fn fnv_reference_vectors() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
