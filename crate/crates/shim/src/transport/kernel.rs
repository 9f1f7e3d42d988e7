//! Same-host plane: frames over a Unix stream socket between two shims.
//!
//! The sender writes the 40-byte header and then the payload straight
//! out of the source's linear memory; the listener reads it in bounded
//! chunks directly into a region allocated in the target guest, runs the
//! guest and replies with an ACK (or an ERROR frame).

use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use log::{debug, warn};
use wasmhose_core::{FrameHeader, FunctionKey, MemoryRegion, MsgType, TransferError};

use crate::host::GuestInstance;
use crate::transport::sink::{self, deliver_into, Sink};
use crate::transport::wire::{self, io_error};
use crate::transport::{SendOutcome, TransportOptions};

/// Where a function's shim accepts kernel-plane frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalEndpoint {
    pub path: PathBuf,
    pub function_id: u32,
}

impl LocalEndpoint {
    pub fn new(path: impl Into<PathBuf>, function_id: u32) -> Self {
        LocalEndpoint {
            path: path.into(),
            function_id,
        }
    }
}

/// Validate a DATA header against the region it describes.
pub(crate) fn check_send(header: &FrameHeader, source: &GuestInstance, region: MemoryRegion) -> Result<(), TransferError> {
    if header.msg_type != MsgType::Data {
        return Err(TransferError::malformed("only DATA frames carry payloads"));
    }
    if header.payload_len != region.length {
        return Err(TransferError::malformed(format!(
            "header declares {} bytes, region holds {}",
            header.payload_len, region.length
        )));
    }
    region.check_transferable(source.memory_size())
}

/// A long-lived connection to one kernel endpoint.
pub struct KernelClient {
    stream: UnixStream,
    opts: TransportOptions,
}

impl KernelClient {
    pub fn connect(endpoint: &Path, opts: TransportOptions) -> Result<Self, TransferError> {
        let stream = UnixStream::connect(endpoint)
            .map_err(|e| TransferError::unreachable(format!("{}: {e}", endpoint.display())))?;
        stream
            .set_read_timeout(Some(opts.timeout))
            .and_then(|_| stream.set_write_timeout(Some(opts.timeout)))
            .map_err(|e| io_error("configuring socket", e))?;
        Ok(KernelClient { stream, opts })
    }

    /// Send one DATA frame and wait for its ACK. The source stays borrowed,
    /// and so unmodified, until the ACK arrives.
    pub fn send(
        &mut self,
        header: FrameHeader,
        source: &GuestInstance,
        region: MemoryRegion,
    ) -> Result<SendOutcome, TransferError> {
        check_send(&header, source, region)?;
        let header = header.with_zero_copy(false);
        let payload = source.read_memory_host(region)?;
        wire::write_header(&mut self.stream, &header)?;
        wire::write_payload(&mut self.stream, payload, self.opts.chunk_size)?;
        let ack = wire::read_reply(&mut self.stream, &header)?;
        Ok(SendOutcome { ack, zero_copy: false })
    }

    pub fn options(&self) -> TransportOptions {
        self.opts
    }
}

/// One-shot send over a fresh connection.
pub fn send_kernel(
    endpoint: &LocalEndpoint,
    header: FrameHeader,
    source: &GuestInstance,
    region: MemoryRegion,
    opts: TransportOptions,
) -> Result<SendOutcome, TransferError> {
    KernelClient::connect(&endpoint.path, opts)?.send(header, source, region)
}

/// A running kernel-plane listener. Stops and unlinks its socket on drop.
pub struct KernelListener {
    path: PathBuf,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<UnixStream>>>,
    accept_thread: Option<JoinHandle<()>>,
}

impl KernelListener {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let _ = UnixStream::connect(&self.path);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
        for c in self.connections.lock().unwrap_or_else(|p| p.into_inner()).drain(..) {
            let _ = c.shutdown(std::net::Shutdown::Both);
        }
        let _ = std::fs::remove_file(&self.path);
    }
}

impl Drop for KernelListener {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn bind_endpoint(path: &Path) -> Result<UnixListener, TransferError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| TransferError::unreachable(format!("creating {}: {e}", dir.display())))?;
    }
    if path.exists() {
        if UnixStream::connect(path).is_ok() {
            return Err(TransferError::unreachable(format!("{} is served by another listener", path.display())));
        }
        let _ = std::fs::remove_file(path);
    }
    UnixListener::bind(path).map_err(|e| TransferError::unreachable(format!("binding {}: {e}", path.display())))
}

/// Accept kernel-plane connections on `endpoint` and deliver DATA frames
/// into the guests of `sink`.
pub fn serve_kernel(endpoint: &LocalEndpoint, sink: Sink, opts: TransportOptions) -> Result<KernelListener, TransferError> {
    let listener = bind_endpoint(&endpoint.path)?;
    let stop = Arc::new(AtomicBool::new(false));
    let connections = Arc::new(Mutex::new(Vec::new()));
    let accept_thread = {
        let stop = stop.clone();
        let connections = connections.clone();
        let path = endpoint.path.clone();
        std::thread::Builder::new()
            .name(format!("kernel-accept-{}", endpoint.function_id))
            .spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let stream = match conn {
                        Ok(s) => s,
                        Err(e) => {
                            warn!("accept on {}: {e}", path.display());
                            continue;
                        }
                    };
                    if let Ok(clone) = stream.try_clone() {
                        let mut list = connections.lock().unwrap_or_else(|p| p.into_inner());
                        list.retain(|c: &UnixStream| c.peer_addr().is_ok());
                        list.push(clone);
                    }
                    let sink = sink.clone();
                    let _ = std::thread::Builder::new()
                        .name("kernel-conn".into())
                        .spawn(move || serve_connection(stream, sink, opts));
                }
            })
            .map_err(|e| TransferError::unreachable(format!("spawning listener: {e}")))?
    };
    Ok(KernelListener {
        path: endpoint.path.clone(),
        stop,
        connections,
        accept_thread: Some(accept_thread),
    })
}

/// Frame loop for one connection. Returns when the peer hangs up or a
/// frame cannot be processed; other connections are unaffected.
fn serve_connection(mut stream: UnixStream, sink: Sink, opts: TransportOptions) {
    loop {
        let _ = stream.set_read_timeout(None);
        let header = match wire::read_header(&mut stream) {
            Ok(Some(h)) => h,
            Ok(None) => return,
            Err(e) => {
                debug!("dropping kernel connection: {e}");
                wire::send_error(&mut stream, None, &e);
                let _ = stream.shutdown(std::net::Shutdown::Both);
                return;
            }
        };
        let _ = stream.set_read_timeout(Some(opts.timeout));
        let _ = stream.set_write_timeout(Some(opts.timeout));
        match receive_data(&mut stream, &sink, &header, opts) {
            Ok(()) => {
                if wire::write_header(&mut stream, &FrameHeader::ack_for(&header)).is_err() {
                    return;
                }
            }
            Err((e, resync)) => {
                wire::send_error(&mut stream, Some(&header), &e);
                if !resync {
                    return;
                }
            }
        }
    }
}

/// Deliver one frame's payload. On error, the flag says whether the
/// stream is still positioned at a frame boundary.
fn receive_data(
    stream: &mut UnixStream,
    sink: &Sink,
    header: &FrameHeader,
    opts: TransportOptions,
) -> Result<(), (TransferError, bool)> {
    if header.msg_type != MsgType::Data {
        return Err((
            TransferError::malformed(format!("expected DATA, got {:?}", header.msg_type)),
            header.payload_len == 0,
        ));
    }
    if header.payload_len == 0 {
        return Err((TransferError::bounds("DATA frame with zero-length payload"), true));
    }
    let target = sink
        .get(FunctionKey::new(header.workflow_id, header.target_fn))
        .map_err(|e| (e, false))?;
    let mut guest = sink::write(target);
    deliver_into(&mut guest, header.payload_len, |buf| wire::read_payload(stream, buf, opts.chunk_size))
        .map(|_| ())
        .map_err(|e| (e, false))
}
