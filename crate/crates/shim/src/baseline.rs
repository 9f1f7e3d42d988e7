//! The serialized comparison path.
//!
//! The source region is copied out and base64-encoded into a text envelope,
//! sent as an 8-byte little-endian length followed by the text, decoded on
//! the far side and copied into a fresh region of the target. The reply
//! is one status byte: 0 for delivered, otherwise 1 + the index of the
//! error kind in [`ErrorKind::ALL`].

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::warn;
use wasmhose_core::envelope::{self, SerializedMessage};
use wasmhose_core::metrics::{ReportMode, TransferReport};
use wasmhose_core::{ErrorKind, FunctionKey, MemoryRegion, TransferError, WorkflowId};

use crate::host::GuestInstance;
use crate::transport::sink::{self, deliver_into, Sink};
use crate::transport::wire::io_error;
use crate::transport::TransportOptions;

/// Largest envelope a listener accepts.
pub const MAX_MESSAGE: u64 = 1 << 31;

pub const STATUS_OK: u8 = 0;

pub fn status_for(kind: ErrorKind) -> u8 {
    ErrorKind::ALL.iter().position(|k| *k == kind).map_or(u8::MAX, |i| i as u8 + 1)
}

pub fn error_for_status(status: u8) -> TransferError {
    let kind = ErrorKind::ALL
        .get((status as usize).wrapping_sub(1))
        .copied()
        .unwrap_or(ErrorKind::FrameMalformed);
    TransferError::new(kind, format!("baseline peer answered status {status}"))
}

/// What the listener saw for the latest message of a (source, target) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Received {
    pub deserialize: Duration,
    pub checksum: Option<u64>,
}

type Log = Arc<Mutex<BTreeMap<(u32, u32), Received>>>;

/// A running baseline listener delivering into one workflow's guests.
pub struct BaselineListener {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    log: Log,
    accept_thread: Option<JoinHandle<()>>,
}

impl BaselineListener {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Take the record of the last message from `source` to `target`.
    pub fn take_received(&self, source: u32, target: u32) -> Option<Received> {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).remove(&(source, target))
    }

    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for BaselineListener {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub fn serve_baseline(
    addr: &str,
    workflow: WorkflowId,
    sink: Sink,
    opts: TransportOptions,
) -> Result<BaselineListener, TransferError> {
    let listener = TcpListener::bind(addr).map_err(|e| TransferError::unreachable(format!("binding {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| io_error("reading bound address", e))?;
    let stop = Arc::new(AtomicBool::new(false));
    let log: Log = Arc::default();
    let accept_thread = {
        let stop = stop.clone();
        let log = log.clone();
        std::thread::Builder::new()
            .name("baseline-accept".into())
            .spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    match conn {
                        Ok(stream) => {
                            let (sink, log, stop) = (sink.clone(), log.clone(), stop.clone());
                            let _ = std::thread::Builder::new()
                                .name("baseline-conn".into())
                                .spawn(move || serve_connection(stream, workflow, sink, log, stop, opts));
                        }
                        Err(e) => warn!("accept on {local}: {e}"),
                    }
                }
            })
            .map_err(|e| TransferError::unreachable(format!("spawning listener: {e}")))?
    };
    Ok(BaselineListener {
        addr: local,
        stop,
        log,
        accept_thread: Some(accept_thread),
    })
}

fn serve_connection(
    mut stream: TcpStream,
    workflow: WorkflowId,
    sink: Sink,
    log: Log,
    stop: Arc<AtomicBool>,
    opts: TransportOptions,
) {
    let _ = stream.set_nodelay(true);
    let _ = stream.set_write_timeout(Some(opts.timeout));
    loop {
        // Poll so a stopped listener does not leave idle connections behind.
        let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
        let mut prefix = [0u8; 8];
        match stream.read(&mut prefix[..1]) {
            Ok(0) => return,
            Ok(_) => {}
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                if stop.load(Ordering::SeqCst) {
                    return;
                }
                continue;
            }
            Err(_) => return,
        }
        let _ = stream.set_read_timeout(Some(opts.timeout));
        let status = match receive(&mut stream, &prefix, workflow, &sink, &log, opts) {
            Ok(()) => STATUS_OK,
            Err((e, fatal)) => {
                warn!("baseline delivery failed: {e}");
                if fatal {
                    let _ = stream.write_all(&[status_for(e.kind)]);
                    let _ = stream.shutdown(Shutdown::Both);
                    return;
                }
                status_for(e.kind)
            }
        };
        if stream.write_all(&[status]).is_err() {
            return;
        }
    }
}

/// Read and deliver one message whose first prefix byte is already in
/// `prefix[0]`. The flag on error says the connection cannot continue.
fn receive(
    stream: &mut TcpStream,
    prefix: &[u8; 8],
    workflow: WorkflowId,
    sink: &Sink,
    log: &Log,
    opts: TransportOptions,
) -> Result<(), (TransferError, bool)> {
    let mut prefix = *prefix;
    stream
        .read_exact(&mut prefix[1..])
        .map_err(|e| (io_error("reading length prefix", e), true))?;
    let len = u64::from_le_bytes(prefix);
    if len > MAX_MESSAGE {
        return Err((TransferError::malformed(format!("{len}-byte message exceeds limit")), true));
    }
    let mut text = vec![0u8; len as usize];
    crate::transport::wire::read_payload(stream, &mut text, opts.chunk_size).map_err(|e| (e, true))?;

    let start = Instant::now();
    let text = String::from_utf8(text).map_err(|_| (TransferError::malformed("envelope is not UTF-8"), false))?;
    let msg = envelope::deserialize(&text).map_err(|e| (e, false))?;
    let deserialize = start.elapsed();

    if msg.payload.is_empty() {
        return Err((TransferError::bounds("empty payload"), false));
    }
    let target = sink.get(FunctionKey::new(workflow, msg.target_fn)).map_err(|e| (e, false))?;
    let mut guest = sink::write(target);
    let committed = deliver_into(&mut guest, msg.payload.len() as u64, |buf| {
        buf.copy_from_slice(&msg.payload);
        Ok(())
    })
    .map_err(|e| (e, false))?;
    log.lock().unwrap_or_else(|p| p.into_inner()).insert(
        (msg.source_fn, msg.target_fn),
        Received {
            deserialize,
            checksum: committed.checksum,
        },
    );
    Ok(())
}

/// Sender side: one long-lived connection to a baseline listener.
pub struct BaselineClient {
    stream: TcpStream,
}

impl BaselineClient {
    pub fn connect(addr: SocketAddr, opts: TransportOptions) -> Result<Self, TransferError> {
        let stream = TcpStream::connect_timeout(&addr, opts.timeout)
            .map_err(|e| TransferError::unreachable(format!("connecting to {addr}: {e}")))?;
        stream
            .set_nodelay(true)
            .and_then(|_| stream.set_read_timeout(Some(opts.timeout)))
            .and_then(|_| stream.set_write_timeout(Some(opts.timeout)))
            .map_err(|e| io_error("configuring socket", e))?;
        Ok(BaselineClient { stream })
    }

    /// Send a serialized message and wait for its status byte.
    pub fn send(&mut self, msg: &SerializedMessage) -> Result<(), TransferError> {
        let bytes = msg.text.as_bytes();
        self.stream
            .write_all(&(bytes.len() as u64).to_le_bytes())
            .and_then(|_| self.stream.write_all(bytes))
            .map_err(|e| io_error("writing envelope", e))?;
        let mut status = [0u8; 1];
        self.stream.read_exact(&mut status).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                TransferError::unreachable("peer closed before answering")
            } else {
                io_error("reading status", e)
            }
        })?;
        match status[0] {
            STATUS_OK => Ok(()),
            s => Err(error_for_status(s)),
        }
    }
}

/// Serialize the captured region, send it through `client` to `listener`,
/// and account the phases.
///
/// `t_transfer` is the round trip minus the listener's decode time, so it
/// includes the target's copy-in and `run()`.
pub fn baseline_transfer(
    client: &mut BaselineClient,
    listener: &BaselineListener,
    source_fn: u32,
    target_fn: u32,
    source: &GuestInstance,
    region: MemoryRegion,
    trial: u32,
) -> Result<TransferReport, TransferError> {
    let mut report = TransferReport::new(ReportMode::Baseline, region.length, trial);
    let t0 = Instant::now();
    region.check_transferable(source.memory_size())?;
    let t1 = Instant::now();
    let msg = envelope::serialize(source.read_memory_host(region)?, source_fn, target_fn);
    let t2 = Instant::now();
    client.send(&msg)?;
    let t3 = Instant::now();
    drop(msg);
    let received = listener
        .take_received(source_fn, target_fn)
        .ok_or_else(|| TransferError::malformed("listener kept no record of the delivery"))?;
    let t4 = Instant::now();
    let round_trip = (t3 - t2).as_secs_f64();
    let decode = received.deserialize.as_secs_f64().min(round_trip);
    report.t_locate = (t1 - t0).as_secs_f64();
    report.t_serialize = (t2 - t1).as_secs_f64();
    report.t_deserialize = decode;
    report.t_transfer = round_trip - decode + (t4 - t3).as_secs_f64();
    report.finish((t4 - t0).as_secs_f64());
    report.delivered_checksum = received.checksum;
    report.ok = true;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_codes_round_trip() {
        for kind in ErrorKind::ALL {
            let s = status_for(kind);
            assert_ne!(s, STATUS_OK);
            assert_eq!(error_for_status(s).kind, kind);
        }
        assert_eq!(error_for_status(200).kind, ErrorKind::FrameMalformed);
    }
}
