//! Corpus-driven parser checks. Every `tests/corpus/*.sip` file has a JSON
//! sidecar stating whether it must parse and, if so, a few key fields; valid
//! messages must also survive a serialize/parse round trip unchanged.

use std::fs;
use std::path::PathBuf;

use serde_json::Value;
use sip_codec::{parse_message, serialize_message, SipError, StartLine};

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

fn error_name(e: &SipError) -> &'static str {
    match e {
        SipError::MalformedStartLine(_) => "MalformedStartLine",
        SipError::UnsupportedMethod(_) => "UnsupportedMethod",
        SipError::MissingMandatoryHeader(_) => "MissingMandatoryHeader",
        SipError::DuplicateHeader(_) => "DuplicateHeader",
        SipError::MalformedHeader(_) => "MalformedHeader",
        SipError::BadContentLength { .. } => "BadContentLength",
        SipError::BadCSeqMethod { .. } => "BadCSeqMethod",
        SipError::Empty => "Empty",
        SipError::NotARequest => "NotARequest",
    }
}

#[test]
fn corpus_is_large_enough() {
    let n = fs::read_dir(corpus_dir())
        .unwrap()
        .filter(|e| {
            e.as_ref().unwrap().path().extension().map(|x| x == "sip") == Some(true)
        })
        .count();
    assert!(n >= 30, "corpus has only {n} messages");
}

#[test]
fn corpus_messages_match_sidecars() {
    let mut checked = 0;
    for entry in fs::read_dir(corpus_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().map(|x| x == "sip") != Some(true) {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        let side: Value =
            serde_json::from_str(&fs::read_to_string(path.with_extension("json")).unwrap())
                .unwrap();
        let name = path.file_stem().unwrap().to_string_lossy().to_string();
        let result = parse_message(&text);
        match side["expect"].as_str().unwrap() {
            "ok" => {
                let msg = result.unwrap_or_else(|e| panic!("{name}: expected ok, got {e}"));
                match (&msg.start, side["kind"].as_str().unwrap()) {
                    (StartLine::Request { method, .. }, "request") => {
                        if let Some(m) = side["method"].as_str() {
                            assert_eq!(method.as_str(), m, "{name}: method");
                        }
                    }
                    (StartLine::Response { status, .. }, "response") => {
                        if let Some(s) = side["status"].as_u64() {
                            assert_eq!(u64::from(*status), s, "{name}: status");
                        }
                    }
                    (start, kind) => panic!("{name}: expected {kind}, parsed {start:?}"),
                }
                if let Some(cid) = side["call_id"].as_str() {
                    assert_eq!(msg.call_id, cid, "{name}: call id");
                }
                if let Some(n) = side["via_count"].as_u64() {
                    assert_eq!(msg.via.len() as u64, n, "{name}: via count");
                }
                if let Some(n) = side["body_len"].as_u64() {
                    assert_eq!(
                        msg.body.as_deref().map_or(0, |b| b.len() as u64),
                        n,
                        "{name}: body length"
                    );
                }
                if let Some(n) = side["extra_count"].as_u64() {
                    assert_eq!(msg.extra.len() as u64, n, "{name}: extra header count");
                }
                if let Some(n) = side["cseq"].as_u64() {
                    assert_eq!(u64::from(msg.cseq.seq), n, "{name}: cseq");
                }
                if !side["from_tag"].is_null() || side.get("from_tag").is_some() {
                    if let Some(t) = side.get("from_tag") {
                        assert_eq!(
                            msg.from.tag.as_deref(),
                            t.as_str(),
                            "{name}: from tag"
                        );
                    }
                }
                if let Some(t) = side.get("to_tag") {
                    assert_eq!(msg.to.tag.as_deref(), t.as_str(), "{name}: to tag");
                }
                if let Some(u) = side["from_uri"].as_str() {
                    assert_eq!(msg.from.uri, u, "{name}: from uri");
                }
                // Canonical form is a fixed point of parse∘serialize.
                let canon = serialize_message(&msg);
                let reparsed = parse_message(&canon)
                    .unwrap_or_else(|e| panic!("{name}: canonical form failed to parse: {e}"));
                assert_eq!(msg, reparsed, "{name}: round trip changed the message");
                assert_eq!(canon, serialize_message(&reparsed), "{name}: not a fixed point");
            }
            "err" => {
                let err = match result {
                    Err(e) => e,
                    Ok(_) => panic!("{name}: expected a parse error"),
                };
                assert_eq!(
                    error_name(&err),
                    side["error"].as_str().unwrap(),
                    "{name}: wrong error kind ({err})"
                );
            }
            other => panic!("{name}: bad sidecar expect={other}"),
        }
        checked += 1;
    }
    assert!(checked >= 30);
}
