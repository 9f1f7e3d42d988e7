//! Fixed 40-byte frame header preceding every kernel and network payload.
//!
//! Layout, all integers little-endian:
//!
//! | bytes  | field        |
//! |--------|--------------|
//! | 0..4   | magic `RRNR` |
//! | 4      | version (1)  |
//! | 5      | msg_type     |
//! | 6..8   | flags        |
//! | 8..24  | workflow_id  |
//! | 24..28 | source_fn    |
//! | 28..32 | target_fn    |
//! | 32..40 | payload_len  |
//!
//! Payload bytes never pass through this codec; they are streamed after
//! the header by the transports.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use crate::error::TransferError;

pub const HEADER_LEN: usize = 40;
pub const MAGIC: [u8; 4] = *b"RRNR";
pub const VERSION: u8 = 1;

/// Set when the payload travelled through the pipe-splicing path.
pub const FLAG_ZERO_COPY: u16 = 1;
const KNOWN_FLAGS: u16 = FLAG_ZERO_COPY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Data = 1,
    Ack = 2,
    Register = 3,
    Error = 4,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<MsgType> {
        match v {
            1 => Some(MsgType::Data),
            2 => Some(MsgType::Ack),
            3 => Some(MsgType::Register),
            4 => Some(MsgType::Error),
            _ => None,
        }
    }

    /// ACK and REGISTER frames never carry a payload.
    pub fn carries_payload(self) -> bool {
        matches!(self, MsgType::Data | MsgType::Error)
    }
}

/// 16 opaque bytes naming a workflow; printed and parsed as 32 hex digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct WorkflowId(pub [u8; 16]);

impl WorkflowId {
    pub const fn new(bytes: [u8; 16]) -> Self {
        WorkflowId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        use core::fmt::Write;
        let mut s = String::with_capacity(32);
        for b in self.0 {
            let _ = write!(s, "{b:02x}");
        }
        s
    }
}

impl fmt::Debug for WorkflowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WorkflowId({})", self.to_hex())
    }
}

impl fmt::Display for WorkflowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWorkflowIdError;

impl fmt::Display for ParseWorkflowIdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("workflow id must be exactly 32 hex digits")
    }
}

impl core::error::Error for ParseWorkflowIdError {}

impl FromStr for WorkflowId {
    type Err = ParseWorkflowIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.len() != 32 || !s.is_ascii() {
            return Err(ParseWorkflowIdError);
        }
        let mut out = [0u8; 16];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| ParseWorkflowIdError)?;
        }
        Ok(WorkflowId(out))
    }
}

/// Decoded frame header. Magic and version are implied constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameHeader {
    pub msg_type: MsgType,
    pub flags: u16,
    pub workflow_id: WorkflowId,
    pub source_fn: u32,
    pub target_fn: u32,
    pub payload_len: u64,
}

impl FrameHeader {
    pub fn data(workflow_id: WorkflowId, source_fn: u32, target_fn: u32, payload_len: u64) -> Self {
        FrameHeader {
            msg_type: MsgType::Data,
            flags: 0,
            workflow_id,
            source_fn,
            target_fn,
            payload_len,
        }
    }

    /// ACK answering `to`: routing reversed, no payload.
    pub fn ack_for(to: &FrameHeader) -> Self {
        FrameHeader {
            msg_type: MsgType::Ack,
            flags: 0,
            workflow_id: to.workflow_id,
            source_fn: to.target_fn,
            target_fn: to.source_fn,
            payload_len: 0,
        }
    }

    /// ERROR frame whose payload is a UTF-8 message of `message_len` bytes.
    pub fn error_for(to: &FrameHeader, message_len: usize) -> Self {
        FrameHeader {
            msg_type: MsgType::Error,
            flags: 0,
            workflow_id: to.workflow_id,
            source_fn: to.target_fn,
            target_fn: to.source_fn,
            payload_len: message_len as u64,
        }
    }

    pub fn zero_copy(&self) -> bool {
        self.flags & FLAG_ZERO_COPY != 0
    }

    pub fn with_zero_copy(mut self, used: bool) -> Self {
        if used {
            self.flags |= FLAG_ZERO_COPY;
        } else {
            self.flags &= !FLAG_ZERO_COPY;
        }
        self
    }

    pub fn validate(&self) -> Result<(), TransferError> {
        if self.flags & !KNOWN_FLAGS != 0 {
            return Err(TransferError::malformed("reserved flag bits set"));
        }
        if !self.msg_type.carries_payload() && self.payload_len != 0 {
            return Err(TransferError::malformed("ACK/REGISTER frame with nonzero payload_len"));
        }
        Ok(())
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4] = VERSION;
        out[5] = self.msg_type as u8;
        out[6..8].copy_from_slice(&self.flags.to_le_bytes());
        out[8..24].copy_from_slice(&self.workflow_id.0);
        out[24..28].copy_from_slice(&self.source_fn.to_le_bytes());
        out[28..32].copy_from_slice(&self.target_fn.to_le_bytes());
        out[32..40].copy_from_slice(&self.payload_len.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8; HEADER_LEN]) -> Result<Self, TransferError> {
        if bytes[0..4] != MAGIC {
            return Err(TransferError::malformed("bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(TransferError::malformed(alloc::format!("unsupported version {}", bytes[4])));
        }
        let msg_type = MsgType::from_u8(bytes[5])
            .ok_or_else(|| TransferError::malformed(alloc::format!("unknown msg_type {}", bytes[5])))?;
        let mut workflow = [0u8; 16];
        workflow.copy_from_slice(&bytes[8..24]);
        let header = FrameHeader {
            msg_type,
            flags: u16::from_le_bytes([bytes[6], bytes[7]]),
            workflow_id: WorkflowId(workflow),
            source_fn: u32::from_le_bytes(bytes[24..28].try_into().unwrap()),
            target_fn: u32::from_le_bytes(bytes[28..32].try_into().unwrap()),
            payload_len: u64::from_le_bytes(bytes[32..40].try_into().unwrap()),
        };
        header.validate()?;
        Ok(header)
    }

    /// Like [`FrameHeader::decode`] but for an arbitrary slice, which must be
    /// exactly [`HEADER_LEN`] bytes.
    pub fn decode_slice(bytes: &[u8]) -> Result<Self, TransferError> {
        let fixed: &[u8; HEADER_LEN] = bytes.try_into().map_err(|_| {
            TransferError::malformed(alloc::format!("header must be {HEADER_LEN} bytes, got {}", bytes.len()))
        })?;
        Self::decode(fixed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ErrorKind;
    use proptest::prelude::*;

    #[test]
    fn encodes_data_header_byte_exact() {
        let h = FrameHeader::data(WorkflowId::default(), 1, 2, 5);
        let mut expected = alloc::vec![0x52, 0x52, 0x4E, 0x52, 0x01, 0x01, 0x00, 0x00];
        expected.extend_from_slice(&[0u8; 16]);
        expected.extend_from_slice(&[1, 0, 0, 0, 2, 0, 0, 0, 5, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(h.encode().as_slice(), expected.as_slice());
        assert_eq!(FrameHeader::decode(&h.encode()).unwrap(), h);
    }

    #[test]
    fn encodes_ack() {
        let data = FrameHeader::data(WorkflowId::default(), 1, 2, 99);
        let ack = FrameHeader::ack_for(&data);
        assert_eq!((ack.source_fn, ack.target_fn), (2, 1));
        let bytes = ack.encode();
        assert_eq!(bytes[5], 0x02);
        assert!(bytes[32..40].iter().all(|&b| b == 0));
    }

    #[test]
    fn rejects_bad_magic_and_type() {
        let mut bytes = FrameHeader::data(WorkflowId::default(), 1, 2, 5).encode();
        let mut bad = bytes;
        bad[0..4].copy_from_slice(b"XXXX");
        assert_eq!(FrameHeader::decode(&bad).unwrap_err().kind, ErrorKind::FrameMalformed);
        bytes[5] = 9;
        assert_eq!(FrameHeader::decode(&bytes).unwrap_err().kind, ErrorKind::FrameMalformed);
    }

    #[test]
    fn rejects_wrong_length_slice() {
        let bytes = FrameHeader::data(WorkflowId::default(), 1, 2, 5).encode();
        assert!(FrameHeader::decode_slice(&bytes[..39]).is_err());
        assert!(FrameHeader::decode_slice(&bytes).is_ok());
    }

    #[test]
    fn workflow_hex_round_trip() {
        let w: WorkflowId = "000102030405060708090a0b0c0d0e0f".parse().unwrap();
        assert_eq!(w.0[15], 0x0f);
        assert_eq!(w.to_hex(), "000102030405060708090a0b0c0d0e0f");
        assert!("0001".parse::<WorkflowId>().is_err());
        assert!("zz0102030405060708090a0b0c0d0e0f".parse::<WorkflowId>().is_err());
    }

    /// Byte-level decoder written independently of `FrameHeader::decode`.
    fn oracle_decode(b: &[u8]) -> (u8, u16, [u8; 16], u32, u32, u64) {
        let le = |range: core::ops::Range<usize>| -> u64 {
            range.rev().fold(0u64, |acc, i| (acc << 8) | b[i] as u64)
        };
        let mut w = [0u8; 16];
        for i in 0..16 {
            w[i] = b[8 + i];
        }
        (b[5], le(6..8) as u16, w, le(24..28) as u32, le(28..32) as u32, le(32..40))
    }

    pub(crate) fn arb_header() -> impl Strategy<Value = FrameHeader> {
        (1u8..=4, any::<bool>(), any::<[u8; 16]>(), any::<u32>(), any::<u32>(), any::<u64>()).prop_map(
            |(t, zc, w, s, d, len)| {
                let msg_type = MsgType::from_u8(t).unwrap();
                let payload_len = if msg_type.carries_payload() { len } else { 0 };
                FrameHeader {
                    msg_type,
                    flags: if zc { FLAG_ZERO_COPY } else { 0 },
                    workflow_id: WorkflowId(w),
                    source_fn: s,
                    target_fn: d,
                    payload_len,
                }
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn round_trip_against_oracle(h in arb_header()) {
            let bytes = h.encode();
            prop_assert_eq!(bytes.len(), HEADER_LEN);
            prop_assert_eq!(&bytes[0..5], b"RRNR\x01");
            let (t, flags, w, s, d, len) = oracle_decode(&bytes);
            prop_assert_eq!(t, h.msg_type as u8);
            prop_assert_eq!(flags, h.flags);
            prop_assert_eq!(w, h.workflow_id.0);
            prop_assert_eq!((s, d, len), (h.source_fn, h.target_fn, h.payload_len));
            prop_assert_eq!(FrameHeader::decode(&bytes).unwrap(), h);
        }

        #[test]
        fn flipping_fixed_bytes_is_rejected(h in arb_header(), which in 0usize..6, mask in 1u8..=255) {
            let mut bytes = h.encode();
            // magic (0..4), version (4) or msg_type (5); msg_type flips use 0xFF
            // so the result always leaves the defined range.
            let mask = if which == 5 { 0xFF } else { mask };
            bytes[which] ^= mask;
            prop_assert_eq!(FrameHeader::decode(&bytes).unwrap_err().kind, ErrorKind::FrameMalformed);
        }
    }
}
