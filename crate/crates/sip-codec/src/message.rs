use std::fmt;

use thiserror::Error;

/// Request methods in the supported subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Register,
    Invite,
    Ack,
    Bye,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Register => "REGISTER",
            Method::Invite => "INVITE",
            Method::Ack => "ACK",
            Method::Bye => "BYE",
        }
    }

    fn from_token(tok: &str) -> Option<Method> {
        match tok {
            "REGISTER" => Some(Method::Register),
            "INVITE" => Some(Method::Invite),
            "ACK" => Some(Method::Ack),
            "BYE" => Some(Method::Bye),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// First line of a message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StartLine {
    Request { method: Method, uri: String },
    Response { status: u16, reason: String },
}

/// From/To header value: a URI plus an optional tag parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameAddr {
    pub uri: String,
    pub tag: Option<String>,
}

impl NameAddr {
    pub fn new(uri: impl Into<String>) -> Self {
        NameAddr { uri: uri.into(), tag: None }
    }

    pub fn with_tag(uri: impl Into<String>, tag: impl Into<String>) -> Self {
        NameAddr { uri: uri.into(), tag: Some(tag.into()) }
    }
}

/// CSeq header: sequence number and method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CSeq {
    pub seq: u32,
    pub method: Method,
}

/// A parsed SIP message.
///
/// `extra` holds headers outside the canonical set, in order of appearance;
/// they survive round trips verbatim. Content-Length is derived from `body`
/// at serialization time and never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SipMessage {
    pub start: StartLine,
    pub via: Vec<String>,
    pub from: NameAddr,
    pub to: NameAddr,
    pub call_id: String,
    pub cseq: CSeq,
    pub contact: Option<String>,
    pub content_type: Option<String>,
    pub extra: Vec<(String, String)>,
    pub body: Option<String>,
}

impl SipMessage {
    pub fn is_request(&self) -> bool {
        matches!(self.start, StartLine::Request { .. })
    }

    pub fn method(&self) -> Option<Method> {
        match self.start {
            StartLine::Request { method, .. } => Some(method),
            StartLine::Response { .. } => None,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self.start {
            StartLine::Response { status, .. } => Some(status),
            StartLine::Request { .. } => None,
        }
    }

    /// Dialog identity of this message.
    pub fn dialog_key(&self) -> DialogKey {
        DialogKey {
            call_id: self.call_id.clone(),
            from_tag: self.from.tag.clone(),
            to_tag: self.to.tag.clone(),
        }
    }
}

/// Dialog identity: call-id plus the two tags. The to-tag is absent until a
/// dialog-establishing response (>= 180) assigns one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DialogKey {
    pub call_id: String,
    pub from_tag: Option<String>,
    pub to_tag: Option<String>,
}

impl DialogKey {
    /// Two keys refer to the same dialog when call-id and from-tag agree and
    /// the to-tags agree wherever both are present (one side may not have
    /// learned the to-tag yet).
    pub fn same_dialog(&self, other: &DialogKey) -> bool {
        self.call_id == other.call_id
            && self.from_tag == other.from_tag
            && match (&self.to_tag, &other.to_tag) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            }
    }
}

/// A response answers a request when call-id and the full CSeq match.
pub fn response_matches(req: &SipMessage, resp: &SipMessage) -> bool {
    req.is_request()
        && !resp.is_request()
        && req.call_id == resp.call_id
        && req.cseq == resp.cseq
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SipError {
    #[error("malformed start line: {0:?}")]
    MalformedStartLine(String),
    #[error("unsupported method: {0:?}")]
    UnsupportedMethod(String),
    #[error("missing mandatory header: {0}")]
    MissingMandatoryHeader(&'static str),
    #[error("duplicate header: {0:?}")]
    DuplicateHeader(String),
    #[error("malformed header line: {0:?}")]
    MalformedHeader(String),
    #[error("bad Content-Length: declared {declared}, body has {actual} bytes")]
    BadContentLength { declared: usize, actual: usize },
    #[error("CSeq method {cseq} does not match request method {request}")]
    BadCSeqMethod { cseq: String, request: String },
    #[error("message is empty")]
    Empty,
    #[error("cannot build a response from a response")]
    NotARequest,
}

/// Split raw text into header lines and the byte-exact body after the first
/// blank line. Accepts CRLF or bare LF as line terminators.
fn split_head_body(input: &str) -> (Vec<&str>, Option<&str>) {
    let mut lines = Vec::new();
    let mut rest = input;
    loop {
        match rest.find('\n') {
            None => {
                let line = rest.trim_end_matches('\r');
                if !line.is_empty() {
                    lines.push(line);
                }
                return (lines, None);
            }
            Some(i) => {
                let line = rest[..i].trim_end_matches('\r');
                let tail = &rest[i + 1..];
                if line.is_empty() {
                    return (lines, Some(tail));
                }
                lines.push(line);
                rest = tail;
            }
        }
    }
}

fn parse_start_line(line: &str) -> Result<StartLine, SipError> {
    if let Some(rest) = line.strip_prefix("SIP/2.0 ") {
        let mut it = rest.splitn(2, ' ');
        let code = it.next().unwrap_or("");
        let reason = it.next().unwrap_or("").to_string();
        let status: u16 = code
            .parse()
            .map_err(|_| SipError::MalformedStartLine(line.to_string()))?;
        if !(100..=699).contains(&status) {
            return Err(SipError::MalformedStartLine(line.to_string()));
        }
        return Ok(StartLine::Response { status, reason });
    }
    let parts: Vec<&str> = line.split(' ').filter(|s| !s.is_empty()).collect();
    if parts.len() != 3 || parts[2] != "SIP/2.0" {
        return Err(SipError::MalformedStartLine(line.to_string()));
    }
    let method = Method::from_token(parts[0])
        .ok_or_else(|| SipError::UnsupportedMethod(parts[0].to_string()))?;
    Ok(StartLine::Request { method, uri: parts[1].to_string() })
}

fn parse_name_addr(value: &str) -> NameAddr {
    // Accept "<uri>;params" or "uri;params"; the only parameter kept is tag.
    let value = value.trim();
    let (uri_part, params) = if let Some(start) = value.find('<') {
        match value[start..].find('>') {
            Some(end_rel) => {
                let uri = &value[start + 1..start + end_rel];
                let after = &value[start + end_rel + 1..];
                (uri.trim(), after)
            }
            None => (value, ""),
        }
    } else {
        match value.find(';') {
            Some(i) => (value[..i].trim(), &value[i..]),
            None => (value, ""),
        }
    };
    let mut tag = None;
    for p in params.split(';') {
        let p = p.trim();
        if let Some(t) = p.strip_prefix("tag=") {
            tag = Some(t.trim().to_string());
        }
    }
    NameAddr { uri: uri_part.to_string(), tag }
}

fn serialize_name_addr(n: &NameAddr) -> String {
    match &n.tag {
        Some(t) => format!("<{}>;tag={}", n.uri, t),
        None => format!("<{}>", n.uri),
    }
}

/// Parse one SIP message. Mandatory headers: From, To, Call-ID, CSeq.
pub fn parse_message(input: &str) -> Result<SipMessage, SipError> {
    let (lines, raw_body) = split_head_body(input);
    let mut it = lines.into_iter();
    let start = parse_start_line(it.next().ok_or(SipError::Empty)?)?;

    let mut via = Vec::new();
    let mut from = None;
    let mut to = None;
    let mut call_id: Option<String> = None;
    let mut cseq_raw: Option<String> = None;
    let mut contact = None;
    let mut content_type = None;
    let mut content_length: Option<usize> = None;
    let mut extra = Vec::new();

    for line in it {
        let (name, value) = line
            .split_once(':')
            .ok_or_else(|| SipError::MalformedHeader(line.to_string()))?;
        let name = name.trim();
        let value = value.trim();
        let set_unique = |slot: &mut Option<String>| -> Result<(), SipError> {
            if slot.is_some() {
                return Err(SipError::DuplicateHeader(name.to_string()));
            }
            *slot = Some(value.to_string());
            Ok(())
        };
        match name.to_ascii_lowercase().as_str() {
            "via" => via.push(value.to_string()),
            "from" => {
                if from.is_some() {
                    return Err(SipError::DuplicateHeader(name.to_string()));
                }
                from = Some(parse_name_addr(value));
            }
            "to" => {
                if to.is_some() {
                    return Err(SipError::DuplicateHeader(name.to_string()));
                }
                to = Some(parse_name_addr(value));
            }
            "call-id" => set_unique(&mut call_id)?,
            "cseq" => set_unique(&mut cseq_raw)?,
            "contact" => set_unique(&mut contact)?,
            "content-type" => set_unique(&mut content_type)?,
            "content-length" => {
                if content_length.is_some() {
                    return Err(SipError::DuplicateHeader(name.to_string()));
                }
                content_length = Some(
                    value
                        .parse()
                        .map_err(|_| SipError::MalformedHeader(line.to_string()))?,
                );
            }
            _ => extra.push((name.to_string(), value.to_string())),
        }
    }

    let from = from.ok_or(SipError::MissingMandatoryHeader("From"))?;
    let to = to.ok_or(SipError::MissingMandatoryHeader("To"))?;
    let call_id = call_id.ok_or(SipError::MissingMandatoryHeader("Call-ID"))?;
    let cseq_raw = cseq_raw.ok_or(SipError::MissingMandatoryHeader("CSeq"))?;
    if call_id.is_empty() {
        return Err(SipError::MalformedHeader("Call-ID:".to_string()));
    }

    let (num, meth_tok) = cseq_raw
        .split_once(' ')
        .ok_or_else(|| SipError::MalformedHeader(format!("CSeq: {cseq_raw}")))?;
    let seq: u32 = num
        .trim()
        .parse()
        .map_err(|_| SipError::MalformedHeader(format!("CSeq: {cseq_raw}")))?;
    let meth_tok = meth_tok.trim();
    let cseq_method = Method::from_token(meth_tok)
        .ok_or_else(|| SipError::MalformedHeader(format!("CSeq: {cseq_raw}")))?;
    if let StartLine::Request { method, .. } = start {
        if cseq_method != method {
            return Err(SipError::BadCSeqMethod {
                cseq: meth_tok.to_string(),
                request: method.as_str().to_string(),
            });
        }
    }

    let body = match (content_length, raw_body) {
        (Some(declared), raw) => {
            let raw = raw.unwrap_or("");
            if raw.len() != declared {
                return Err(SipError::BadContentLength { declared, actual: raw.len() });
            }
            if declared == 0 {
                None
            } else {
                Some(raw.to_string())
            }
        }
        (None, Some(raw)) if !raw.is_empty() => Some(raw.to_string()),
        (None, _) => None,
    };

    Ok(SipMessage {
        start,
        via,
        from,
        to,
        call_id,
        cseq: CSeq { seq, method: cseq_method },
        contact,
        content_type,
        extra,
        body,
    })
}

/// Serialize with CRLF endings and canonical header order: Via, From, To,
/// Call-ID, CSeq, Contact, Content-Type, Content-Length, then the remaining
/// headers in insertion order. Content-Length is recomputed from the body.
pub fn serialize_message(msg: &SipMessage) -> String {
    let mut out = String::with_capacity(256 + msg.body.as_deref().map_or(0, str::len));
    match &msg.start {
        StartLine::Request { method, uri } => {
            out.push_str(method.as_str());
            out.push(' ');
            out.push_str(uri);
            out.push_str(" SIP/2.0\r\n");
        }
        StartLine::Response { status, reason } => {
            out.push_str("SIP/2.0 ");
            out.push_str(&status.to_string());
            out.push(' ');
            out.push_str(reason);
            out.push_str("\r\n");
        }
    }
    for v in &msg.via {
        out.push_str("Via: ");
        out.push_str(v);
        out.push_str("\r\n");
    }
    out.push_str("From: ");
    out.push_str(&serialize_name_addr(&msg.from));
    out.push_str("\r\nTo: ");
    out.push_str(&serialize_name_addr(&msg.to));
    out.push_str("\r\nCall-ID: ");
    out.push_str(&msg.call_id);
    out.push_str("\r\nCSeq: ");
    out.push_str(&msg.cseq.seq.to_string());
    out.push(' ');
    out.push_str(msg.cseq.method.as_str());
    out.push_str("\r\n");
    if let Some(c) = &msg.contact {
        out.push_str("Contact: ");
        out.push_str(c);
        out.push_str("\r\n");
    }
    if let Some(ct) = &msg.content_type {
        out.push_str("Content-Type: ");
        out.push_str(ct);
        out.push_str("\r\n");
    }
    let body_len = msg.body.as_deref().map_or(0, str::len);
    out.push_str("Content-Length: ");
    out.push_str(&body_len.to_string());
    out.push_str("\r\n");
    for (name, value) in &msg.extra {
        out.push_str(name);
        out.push_str(": ");
        out.push_str(value);
        out.push_str("\r\n");
    }
    out.push_str("\r\n");
    if let Some(b) = &msg.body {
        out.push_str(b);
    }
    out
}

/// Standard reason phrases for the status codes the testbed emits.
pub fn reason_phrase(status: u16) -> &'static str {
    match status {
        100 => "Trying",
        180 => "Ringing",
        200 => "OK",
        403 => "Forbidden",
        404 => "Not Found",
        480 => "Temporarily Unavailable",
        481 => "Call/Transaction Does Not Exist",
        486 => "Busy Here",
        488 => "Not Acceptable Here",
        500 => "Server Internal Error",
        503 => "Service Unavailable",
        _ => "Unknown",
    }
}

/// Build a response to `req`. Copies Via, From, To, Call-ID and CSeq. A
/// dialog-establishing response (status >= 180) is given a deterministic
/// to-tag when the request carried none; provisional 100 never gets one.
pub fn build_response(
    req: &SipMessage,
    status: u16,
    body: Option<(String, String)>,
) -> Result<SipMessage, SipError> {
    if !req.is_request() {
        return Err(SipError::NotARequest);
    }
    let mut to = req.to.clone();
    if status >= 180 && to.tag.is_none() {
        let h = crate::fnv1a64(format!("{}|{}", req.call_id, req.cseq.seq).as_bytes());
        to.tag = Some(format!("ut{h:016x}"));
    }
    let (content_type, body) = match body {
        Some((ct, b)) => (Some(ct), Some(b)),
        None => (None, None),
    };
    Ok(SipMessage {
        start: StartLine::Response { status, reason: reason_phrase(status).to_string() },
        via: req.via.clone(),
        from: req.from.clone(),
        to,
        call_id: req.call_id.clone(),
        cseq: req.cseq.clone(),
        contact: None,
        content_type,
        extra: Vec::new(),
        body,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_invite() -> String {
        concat!(
            "INVITE sip:bob@unity SIP/2.0\r\n",
            "From: <sip:alice@unity>;tag=a1\r\n",
            "To: <sip:bob@unity>\r\n",
            "Call-ID: c1\r\n",
            "CSeq: 1 INVITE\r\n",
            "Content-Length: 0\r\n",
            "\r\n"
        )
        .to_string()
    }

    #[test]
    fn parses_minimal_invite() {
        let m = parse_message(&minimal_invite()).unwrap();
        assert_eq!(m.method(), Some(Method::Invite));
        assert_eq!(m.call_id, "c1");
        assert_eq!(m.cseq, CSeq { seq: 1, method: Method::Invite });
        assert_eq!(m.from.tag.as_deref(), Some("a1"));
        assert!(m.to.tag.is_none());
        assert!(m.body.is_none());
    }

    #[test]
    fn lf_only_input_is_accepted() {
        let text = minimal_invite().replace("\r\n", "\n");
        let m = parse_message(&text).unwrap();
        assert_eq!(m.call_id, "c1");
    }

    #[test]
    fn serialize_is_crlf_and_canonical_order() {
        let m = parse_message(&minimal_invite()).unwrap();
        let s = serialize_message(&m);
        assert!(s.contains("\r\n"));
        assert!(!s.replace("\r\n", "").contains('\n'));
        let from_pos = s.find("From:").unwrap();
        let to_pos = s.find("\r\nTo:").unwrap();
        let cid_pos = s.find("\r\nCall-ID:").unwrap();
        let cseq_pos = s.find("\r\nCSeq:").unwrap();
        assert!(from_pos < to_pos && to_pos < cid_pos && cid_pos < cseq_pos);
    }

    #[test]
    fn parse_serialize_fixed_point() {
        let m = parse_message(&minimal_invite()).unwrap();
        let s1 = serialize_message(&m);
        let m2 = parse_message(&s1).unwrap();
        assert_eq!(m, m2);
        assert_eq!(s1, serialize_message(&m2));
    }

    #[test]
    fn missing_call_id_is_rejected() {
        let text = minimal_invite().replace("Call-ID: c1\r\n", "");
        assert_eq!(
            parse_message(&text),
            Err(SipError::MissingMandatoryHeader("Call-ID"))
        );
    }

    #[test]
    fn cseq_method_mismatch_is_rejected() {
        let text = minimal_invite().replace("CSeq: 1 INVITE", "CSeq: 1 BYE");
        assert!(matches!(
            parse_message(&text),
            Err(SipError::BadCSeqMethod { .. })
        ));
    }

    #[test]
    fn content_length_must_match_body() {
        let text = minimal_invite().replace("Content-Length: 0", "Content-Length: 5");
        assert_eq!(
            parse_message(&text),
            Err(SipError::BadContentLength { declared: 5, actual: 0 })
        );
    }

    #[test]
    fn unknown_headers_round_trip_in_order() {
        let text = minimal_invite().replace(
            "Content-Length: 0\r\n",
            "Content-Length: 0\r\nX-Alpha: 1\r\nX-Beta: two\r\n",
        );
        let m = parse_message(&text).unwrap();
        assert_eq!(
            m.extra,
            vec![
                ("X-Alpha".to_string(), "1".to_string()),
                ("X-Beta".to_string(), "two".to_string())
            ]
        );
        let m2 = parse_message(&serialize_message(&m)).unwrap();
        assert_eq!(m.extra, m2.extra);
    }

    #[test]
    fn response_inherits_identity_and_gets_to_tag() {
        let req = parse_message(&minimal_invite()).unwrap();
        let r100 = build_response(&req, 100, None).unwrap();
        assert!(r100.to.tag.is_none());
        let r180 = build_response(&req, 180, None).unwrap();
        let r200 = build_response(&req, 200, None).unwrap();
        assert!(r180.to.tag.is_some());
        // Same dialog: 180 and 200 carry the same deterministic tag.
        assert_eq!(r180.to.tag, r200.to.tag);
        assert_eq!(r200.call_id, req.call_id);
        assert_eq!(r200.cseq, req.cseq);
        assert_eq!(r200.from, req.from);
        assert!(response_matches(&req, &r200));
    }

    #[test]
    fn response_to_response_is_rejected() {
        let req = parse_message(&minimal_invite()).unwrap();
        let resp = build_response(&req, 200, None).unwrap();
        assert_eq!(build_response(&resp, 200, None), Err(SipError::NotARequest));
    }

    #[test]
    fn unsupported_method_is_rejected() {
        let text = minimal_invite().replace("INVITE sip:bob@unity", "OPTIONS sip:bob@unity");
        // CSeq still says INVITE but the start line fails first.
        assert!(matches!(
            parse_message(&text),
            Err(SipError::UnsupportedMethod(_))
        ));
    }

    #[test]
    fn dialog_key_matching_tolerates_missing_to_tag() {
        let req = parse_message(&minimal_invite()).unwrap();
        let resp = build_response(&req, 200, None).unwrap();
        assert!(req.dialog_key().same_dialog(&resp.dialog_key()));
        let mut other = resp.dialog_key();
        other.to_tag = Some("different".into());
        assert!(!resp.dialog_key().same_dialog(&other));
    }
}
