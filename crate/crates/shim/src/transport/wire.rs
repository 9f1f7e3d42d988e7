//! Frame IO helpers shared by the kernel and network planes.

use std::io::{self, Read, Write};

use wasmhose_core::frame::HEADER_LEN;
use wasmhose_core::{ErrorKind, FrameHeader, MsgType, TransferError, WorkflowId};

/// Longest ERROR message accepted from a peer.
const MAX_ERROR_MESSAGE: u64 = 64 * 1024;

/// Map an IO failure onto the transfer taxonomy.
pub fn io_error(context: &str, e: io::Error) -> TransferError {
    match e.kind() {
        io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => {
            TransferError::timeout(format!("{context}: timed out ({e})"))
        }
        _ => TransferError::unreachable(format!("{context}: {e}")),
    }
}

/// Read one header. `Ok(None)` on a clean end of stream before any byte.
pub fn read_header<R: Read>(r: &mut R) -> Result<Option<FrameHeader>, TransferError> {
    let mut buf = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(TransferError::malformed(format!("stream ended after {filled} header bytes"))),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(io_error("reading frame header", e)),
        }
    }
    FrameHeader::decode(&buf).map(Some)
}

pub fn write_header<W: Write>(w: &mut W, header: &FrameHeader) -> Result<(), TransferError> {
    w.write_all(&header.encode()).map_err(|e| io_error("writing frame header", e))
}

/// Header for an ERROR reply when the offending frame could not be decoded.
pub fn anonymous_error_header(len: usize) -> FrameHeader {
    let blank = FrameHeader::data(WorkflowId::default(), 0, 0, 0);
    FrameHeader::error_for(&blank, len)
}

/// Send an ERROR frame carrying `err` as `"<Kind>: <detail>"`. Best effort.
pub fn send_error<W: Write>(w: &mut W, answering: Option<&FrameHeader>, err: &TransferError) {
    let msg = err.to_string();
    let header = match answering {
        Some(h) => FrameHeader::error_for(h, msg.len()),
        None => anonymous_error_header(msg.len()),
    };
    let mut frame = header.encode().to_vec();
    frame.extend_from_slice(msg.as_bytes());
    let _ = w.write_all(&frame).and_then(|_| w.flush());
}

/// Rebuild a peer's error from its ERROR payload.
pub fn parse_peer_error(msg: &str) -> TransferError {
    if let Some((kind, detail)) = msg.split_once(": ") {
        if let Some(kind) = ErrorKind::ALL.into_iter().find(|k| k.as_str() == kind) {
            return TransferError::new(kind, format!("peer: {detail}"));
        }
    }
    TransferError::malformed(format!("peer: {msg}"))
}

/// Wait for the reply to `sent`: `Ok(ack)` for ACK, the peer's error for ERROR.
pub fn read_reply<R: Read>(r: &mut R, sent: &FrameHeader) -> Result<FrameHeader, TransferError> {
    let reply = read_header(r)?
        .ok_or_else(|| TransferError::unreachable("peer closed the connection before acknowledging"))?;
    match reply.msg_type {
        MsgType::Ack if reply.workflow_id == sent.workflow_id && reply.target_fn == sent.source_fn => Ok(reply),
        MsgType::Ack => Err(TransferError::malformed("ACK routed for a different transfer")),
        MsgType::Error => {
            if reply.payload_len > MAX_ERROR_MESSAGE {
                return Err(TransferError::malformed("oversized ERROR payload"));
            }
            let mut msg = vec![0u8; reply.payload_len as usize];
            r.read_exact(&mut msg).map_err(|e| io_error("reading ERROR payload", e))?;
            Err(parse_peer_error(&String::from_utf8_lossy(&msg)))
        }
        other => Err(TransferError::malformed(format!("unexpected {other:?} frame in reply"))),
    }
}

/// Read exactly `buf.len()` payload bytes in `chunk`-sized reads.
pub fn read_payload<R: Read>(r: &mut R, buf: &mut [u8], chunk: usize) -> Result<(), TransferError> {
    let total = buf.len();
    let mut done = 0;
    for piece in buf.chunks_mut(chunk.max(1)) {
        r.read_exact(piece).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                TransferError::unreachable(format!("peer closed after {done} of {total} payload bytes"))
            } else {
                io_error("reading payload", e)
            }
        })?;
        done += piece.len();
    }
    Ok(())
}

/// Write `data` in `chunk`-sized writes.
pub fn write_payload<W: Write>(w: &mut W, data: &[u8], chunk: usize) -> Result<(), TransferError> {
    for piece in data.chunks(chunk.max(1)) {
        w.write_all(piece).map_err(|e| io_error("writing payload", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn header_eof_handling() {
        assert_eq!(read_header(&mut Cursor::new(Vec::<u8>::new())).unwrap(), None);
        let h = FrameHeader::data(WorkflowId::default(), 1, 2, 3);
        let bytes = h.encode();
        assert_eq!(read_header(&mut Cursor::new(bytes.to_vec())).unwrap(), Some(h));
        let err = read_header(&mut Cursor::new(bytes[..10].to_vec())).unwrap_err();
        assert_eq!(err.kind, ErrorKind::FrameMalformed);
    }

    #[test]
    fn error_frames_round_trip_kind() {
        let sent = FrameHeader::data(WorkflowId([3; 16]), 1, 2, 8);
        let mut wire = Vec::new();
        send_error(&mut wire, Some(&sent), &TransferError::alloc("guest refused 8 bytes"));
        let err = read_reply(&mut Cursor::new(wire), &sent).unwrap_err();
        assert_eq!(err.kind, ErrorKind::AllocationFailed);
        assert!(err.detail.contains("guest refused 8 bytes"));
        assert_eq!(parse_peer_error("gibberish").kind, ErrorKind::FrameMalformed);
    }

    #[test]
    fn ack_must_match_transfer() {
        let sent = FrameHeader::data(WorkflowId([3; 16]), 1, 2, 8);
        let ack = FrameHeader::ack_for(&sent);
        assert!(read_reply(&mut Cursor::new(ack.encode().to_vec()), &sent).is_ok());
        let other = FrameHeader::data(WorkflowId([4; 16]), 1, 2, 8);
        assert!(read_reply(&mut Cursor::new(FrameHeader::ack_for(&other).encode().to_vec()), &sent).is_err());
    }

    #[test]
    fn short_payload_is_reported() {
        let mut buf = [0u8; 10];
        let err = read_payload(&mut Cursor::new(vec![1u8; 4]), &mut buf, 3).unwrap_err();
        assert_eq!(err.kind, ErrorKind::PeerUnreachable);
    }
}
