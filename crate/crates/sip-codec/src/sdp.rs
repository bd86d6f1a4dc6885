use thiserror::Error;

/// Audio codecs in the supported subset plus the DTMF event pseudo-codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Codec {
    Pcmu,
    Pcma,
    G729,
    TelephoneEvent,
}

impl Codec {
    pub fn payload_type(self) -> u8 {
        match self {
            Codec::Pcmu => 0,
            Codec::Pcma => 8,
            Codec::G729 => 18,
            Codec::TelephoneEvent => 101,
        }
    }

    pub fn encoding(self) -> &'static str {
        match self {
            Codec::Pcmu => "PCMU/8000",
            Codec::Pcma => "PCMA/8000",
            Codec::G729 => "G729/8000",
            Codec::TelephoneEvent => "telephone-event/8000",
        }
    }

    /// True for real audio codecs; the event pseudo-codec cannot carry a call
    /// by itself.
    pub fn is_audio(self) -> bool {
        !matches!(self, Codec::TelephoneEvent)
    }

    fn from_static_pt(pt: u8) -> Option<Codec> {
        match pt {
            0 => Some(Codec::Pcmu),
            8 => Some(Codec::Pcma),
            18 => Some(Codec::G729),
            _ => None,
        }
    }

    fn from_encoding(enc: &str) -> Option<Codec> {
        match enc {
            "PCMU/8000" => Some(Codec::Pcmu),
            "PCMA/8000" => Some(Codec::Pcma),
            "G729/8000" => Some(Codec::G729),
            "telephone-event/8000" => Some(Codec::TelephoneEvent),
            _ => None,
        }
    }
}

/// One audio media description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SdpBody {
    pub owner: String,
    pub session_id: u64,
    pub session_version: u64,
    pub address: String,
    pub port: u16,
    pub codecs: Vec<Codec>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SdpError {
    #[error("no m=audio line")]
    MissingMediaLine,
    #[error("no c= connection line")]
    MissingConnection,
    #[error("media port {0} outside 1024..=65535")]
    BadPort(u32),
    #[error("payload type {0} has no rtpmap and is not a known static assignment")]
    UnknownPayloadType(u8),
    #[error("unsupported rtpmap encoding: {0:?}")]
    UnknownCodec(String),
    #[error("malformed SDP line: {0:?}")]
    MalformedLine(String),
    #[error("offer and supported set share no audio codec")]
    NoCommonCodec,
}

/// Parse the SDP subset: v=, o=, c=, m=audio and a=rtpmap. Unknown a= lines
/// are ignored; unknown payload types are an error. Accepts CRLF or LF.
pub fn parse_sdp(text: &str) -> Result<SdpBody, SdpError> {
    let mut owner = String::from("-");
    let mut session_id = 0u64;
    let mut session_version = 0u64;
    let mut address = None;
    let mut media: Option<(u32, Vec<u8>)> = None;
    let mut rtpmap: Vec<(u8, String)> = Vec::new();

    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (kind, value) = line
            .split_once('=')
            .ok_or_else(|| SdpError::MalformedLine(line.to_string()))?;
        match kind {
            "o" => {
                // o=<owner> <sess-id> <sess-version> IN IP4 <addr>
                let mut it = value.split_whitespace();
                owner = it.next().unwrap_or("-").to_string();
                session_id = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| SdpError::MalformedLine(line.to_string()))?;
                session_version = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| SdpError::MalformedLine(line.to_string()))?;
            }
            "c" => {
                // c=IN IP4 <addr>
                let addr = value
                    .split_whitespace()
                    .nth(2)
                    .ok_or_else(|| SdpError::MalformedLine(line.to_string()))?;
                address = Some(addr.to_string());
            }
            "m" => {
                let mut it = value.split_whitespace();
                if it.next() != Some("audio") {
                    continue; // other media kinds are outside the subset
                }
                let port: u32 = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| SdpError::MalformedLine(line.to_string()))?;
                if it.next() != Some("RTP/AVP") {
                    return Err(SdpError::MalformedLine(line.to_string()));
                }
                let mut pts = Vec::new();
                for tok in it {
                    let pt: u8 = tok
                        .parse()
                        .map_err(|_| SdpError::MalformedLine(line.to_string()))?;
                    pts.push(pt);
                }
                if pts.is_empty() {
                    return Err(SdpError::MalformedLine(line.to_string()));
                }
                if media.is_none() {
                    media = Some((port, pts));
                }
            }
            "a" => {
                if let Some(rest) = value.strip_prefix("rtpmap:") {
                    let (pt, enc) = rest
                        .split_once(' ')
                        .ok_or_else(|| SdpError::MalformedLine(line.to_string()))?;
                    let pt: u8 = pt
                        .trim()
                        .parse()
                        .map_err(|_| SdpError::MalformedLine(line.to_string()))?;
                    rtpmap.push((pt, enc.trim().to_string()));
                }
            }
            _ => {}
        }
    }

    let (port, pts) = media.ok_or(SdpError::MissingMediaLine)?;
    let address = address.ok_or(SdpError::MissingConnection)?;
    if !(1024..=65535).contains(&port) {
        return Err(SdpError::BadPort(port));
    }

    let mut codecs = Vec::with_capacity(pts.len());
    for pt in pts {
        let mapped = rtpmap.iter().find(|(p, _)| *p == pt);
        let codec = match mapped {
            Some((_, enc)) => {
                Codec::from_encoding(enc).ok_or_else(|| SdpError::UnknownCodec(enc.clone()))?
            }
            None => Codec::from_static_pt(pt).ok_or(SdpError::UnknownPayloadType(pt))?,
        };
        if !codecs.contains(&codec) {
            codecs.push(codec);
        }
    }

    Ok(SdpBody {
        owner,
        session_id,
        session_version,
        address,
        port: port as u16,
        codecs,
    })
}

/// Serialize with CRLF endings. rtpmap attributes are emitted only for
/// dynamic payload types.
pub fn serialize_sdp(sdp: &SdpBody) -> String {
    let mut out = String::with_capacity(160);
    out.push_str("v=0\r\n");
    out.push_str(&format!(
        "o={} {} {} IN IP4 {}\r\n",
        sdp.owner, sdp.session_id, sdp.session_version, sdp.address
    ));
    out.push_str("s=-\r\n");
    out.push_str(&format!("c=IN IP4 {}\r\n", sdp.address));
    out.push_str("t=0 0\r\n");
    let pts: Vec<String> = sdp
        .codecs
        .iter()
        .map(|c| c.payload_type().to_string())
        .collect();
    out.push_str(&format!("m=audio {} RTP/AVP {}\r\n", sdp.port, pts.join(" ")));
    for c in &sdp.codecs {
        if c.payload_type() >= 96 {
            out.push_str(&format!("a=rtpmap:{} {}\r\n", c.payload_type(), c.encoding()));
        }
    }
    out
}

/// Offer/answer: pick the first offered audio codec that the answerer
/// supports, carrying the event pseudo-codec along when both sides list it.
/// The answer points at the answerer's own address and port.
pub fn negotiate(
    offer: &SdpBody,
    supported: &[Codec],
    address: &str,
    port: u16,
) -> Result<SdpBody, SdpError> {
    let chosen = offer
        .codecs
        .iter()
        .copied()
        .find(|c| c.is_audio() && supported.contains(c))
        .ok_or(SdpError::NoCommonCodec)?;
    let mut codecs = vec![chosen];
    if offer.codecs.contains(&Codec::TelephoneEvent)
        && supported.contains(&Codec::TelephoneEvent)
    {
        codecs.push(Codec::TelephoneEvent);
    }
    Ok(SdpBody {
        owner: offer.owner.clone(),
        session_id: offer.session_id,
        session_version: offer.session_version.wrapping_add(1),
        address: address.to_string(),
        port,
        codecs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offer_text() -> String {
        concat!(
            "v=0\r\n",
            "o=alice 1001 1 IN IP4 10.0.0.1\r\n",
            "s=-\r\n",
            "c=IN IP4 10.0.0.1\r\n",
            "t=0 0\r\n",
            "m=audio 49170 RTP/AVP 0 8 101\r\n",
            "a=rtpmap:101 telephone-event/8000\r\n"
        )
        .to_string()
    }

    #[test]
    fn parses_offer() {
        let sdp = parse_sdp(&offer_text()).unwrap();
        assert_eq!(sdp.owner, "alice");
        assert_eq!(sdp.port, 49170);
        assert_eq!(
            sdp.codecs,
            vec![Codec::Pcmu, Codec::Pcma, Codec::TelephoneEvent]
        );
    }

    #[test]
    fn parse_serialize_fixed_point() {
        let sdp = parse_sdp(&offer_text()).unwrap();
        let s1 = serialize_sdp(&sdp);
        let sdp2 = parse_sdp(&s1).unwrap();
        assert_eq!(sdp, sdp2);
        assert_eq!(s1, serialize_sdp(&sdp2));
    }

    #[test]
    fn lf_only_is_accepted() {
        let sdp = parse_sdp(&offer_text().replace("\r\n", "\n")).unwrap();
        assert_eq!(sdp.codecs.len(), 3);
    }

    #[test]
    fn negotiation_picks_first_common_audio_codec() {
        let offer = parse_sdp(&offer_text()).unwrap();
        let answer = negotiate(
            &offer,
            &[Codec::Pcma, Codec::Pcmu, Codec::TelephoneEvent],
            "10.0.0.2",
            40000,
        )
        .unwrap();
        // PCMU is offered first, so it wins even though the answerer lists
        // PCMA first.
        assert_eq!(answer.codecs, vec![Codec::Pcmu, Codec::TelephoneEvent]);
        assert_eq!(answer.address, "10.0.0.2");
        assert_eq!(answer.port, 40000);
    }

    #[test]
    fn event_codec_is_dropped_when_answerer_lacks_it() {
        let offer = parse_sdp(&offer_text()).unwrap();
        let answer = negotiate(&offer, &[Codec::Pcmu], "10.0.0.2", 40000).unwrap();
        assert_eq!(answer.codecs, vec![Codec::Pcmu]);
    }

    #[test]
    fn disjoint_codec_sets_fail() {
        let mut offer = parse_sdp(&offer_text()).unwrap();
        offer.codecs = vec![Codec::G729];
        assert_eq!(
            negotiate(&offer, &[Codec::Pcmu, Codec::Pcma], "a", 40000),
            Err(SdpError::NoCommonCodec)
        );
    }

    #[test]
    fn event_codec_alone_cannot_carry_a_call() {
        let mut offer = parse_sdp(&offer_text()).unwrap();
        offer.codecs = vec![Codec::TelephoneEvent];
        assert_eq!(
            negotiate(&offer, &[Codec::Pcmu, Codec::TelephoneEvent], "a", 40000),
            Err(SdpError::NoCommonCodec)
        );
    }

    #[test]
    fn privileged_port_is_rejected() {
        let text = offer_text().replace("m=audio 49170", "m=audio 80");
        assert_eq!(parse_sdp(&text), Err(SdpError::BadPort(80)));
    }

    #[test]
    fn dynamic_pt_without_rtpmap_is_rejected() {
        let text = offer_text()
            .replace(" 0 8 101", " 0 8 97")
            .replace("a=rtpmap:101 telephone-event/8000\r\n", "");
        assert_eq!(parse_sdp(&text), Err(SdpError::UnknownPayloadType(97)));
    }

    #[test]
    fn unknown_encoding_is_rejected() {
        let text = offer_text().replace("telephone-event/8000", "OPUS/48000");
        assert_eq!(
            parse_sdp(&text),
            Err(SdpError::UnknownCodec("OPUS/48000".into()))
        );
    }
}
