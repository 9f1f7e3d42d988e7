//! Text envelope for the serialized comparison path.
//!
//! `{"src":<id>,"dst":<id>,"payload":"<base64>"}` with standard padded
//! base64. The payload is transformed, copied into a fresh allocation and
//! parsed back on the other side, which is the work the zero-copy planes
//! avoid.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::error::TransferError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedMessage {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedMessage {
    pub source_fn: u32,
    pub target_fn: u32,
    pub payload: Vec<u8>,
}

const PAYLOAD_KEY: &str = ",\"payload\":\"";

/// Base64 length for `n` input bytes: `4 * ceil(n / 3)`.
pub fn encoded_payload_len(n: usize) -> usize {
    n.div_ceil(3) * 4
}

/// Envelope bytes that are not payload for the given ids.
pub fn envelope_overhead(source_fn: u32, target_fn: u32) -> usize {
    format!("{{\"src\":{source_fn},\"dst\":{target_fn}{PAYLOAD_KEY}\"}}").len()
}

pub fn serialize(payload: &[u8], source_fn: u32, target_fn: u32) -> SerializedMessage {
    let mut text = String::with_capacity(encoded_payload_len(payload.len()) + envelope_overhead(source_fn, target_fn));
    text.push_str(&format!("{{\"src\":{source_fn},\"dst\":{target_fn}{PAYLOAD_KEY}"));
    STANDARD.encode_string(payload, &mut text);
    text.push_str("\"}");
    SerializedMessage { text }
}

fn parse_id(field: &str, s: &str) -> Result<u32, TransferError> {
    s.parse()
        .map_err(|_| TransferError::malformed(format!("envelope field `{field}` is not a u32: `{s}`")))
}

pub fn deserialize(msg: &str) -> Result<DecodedMessage, TransferError> {
    let bad = |what: &str| TransferError::malformed(format!("malformed envelope: {what}"));
    let rest = msg.strip_prefix("{\"src\":").ok_or_else(|| bad("missing src"))?;
    let (src, rest) = rest.split_once(",\"dst\":").ok_or_else(|| bad("missing dst"))?;
    let (dst, rest) = rest.split_once(PAYLOAD_KEY).ok_or_else(|| bad("missing payload"))?;
    let body = rest.strip_suffix("\"}").ok_or_else(|| bad("unterminated payload"))?;
    let payload = STANDARD
        .decode(body)
        .map_err(|e| TransferError::malformed(format!("payload is not base64: {e}")))?;
    Ok(DecodedMessage {
        source_fn: parse_id("src", src)?,
        target_fn: parse_id("dst", dst)?,
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ErrorKind;
    use crate::payload::generate;
    use proptest::prelude::*;

    #[test]
    fn known_base64() {
        let m = serialize(b"abc", 1, 2);
        assert_eq!(m.text, r#"{"src":1,"dst":2,"payload":"YWJj"}"#);
        let d = deserialize(&m.text).unwrap();
        assert_eq!((d.source_fn, d.target_fn, d.payload.as_slice()), (1, 2, &b"abc"[..]));
    }

    #[test]
    fn empty_payload() {
        let m = serialize(&[], 5, 6);
        assert!(m.text.contains("\"payload\":\"\""));
        assert!(deserialize(&m.text).unwrap().payload.is_empty());
    }

    #[test]
    fn one_mib_length_formula() {
        let data = generate(3, 1 << 20);
        let m = serialize(&data, 10, 200);
        assert_eq!(m.text.len(), 4 * (1usize << 20).div_ceil(3) + envelope_overhead(10, 200));
        assert_eq!(deserialize(&m.text).unwrap().payload, data);
    }

    #[test]
    fn malformed_inputs() {
        for bad in [
            "",
            "{\"src\":1}",
            r#"{"src":x,"dst":2,"payload":"YWJj"}"#,
            r#"{"src":1,"dst":2,"payload":"Y!Jj"}"#,
            r#"{"src":1,"dst":2,"payload":"YWJj"#,
        ] {
            assert_eq!(deserialize(bad).unwrap_err().kind, ErrorKind::FrameMalformed, "{bad}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_and_size_bound(data in proptest::collection::vec(any::<u8>(), 0..3000), s in any::<u32>(), d in any::<u32>()) {
            let m = serialize(&data, s, d);
            prop_assert!(m.text.len() >= (4 * data.len()).div_ceil(3));
            let back = deserialize(&m.text).unwrap();
            prop_assert_eq!(back.payload, data);
            prop_assert_eq!((back.source_fn, back.target_fn), (s, d));
        }
    }
}
