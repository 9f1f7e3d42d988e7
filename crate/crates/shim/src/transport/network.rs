//! Cross-node plane: frames over TCP, payload spliced through a per-transfer
//! pipe when possible and copied in chunks otherwise.
//!
//! Bit 0 of the header flags tells the receiver which path the sender
//! took. The bytes on the wire are identical either way.

use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::os::fd::AsRawFd;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use log::{debug, warn};
use wasmhose_core::registry::PeerAddress;
use wasmhose_core::{FrameHeader, FunctionKey, MemoryRegion, MsgType, TransferError};

use crate::host::GuestInstance;
use crate::transport::hose::{close_all, DataHose};
use crate::transport::kernel::check_send;
use crate::transport::sink::{self, deliver_into, Sink};
use crate::transport::wire::{self, io_error};
use crate::transport::{SendOutcome, TransportOptions};

fn resolve(peer: &PeerAddress) -> Result<SocketAddr, TransferError> {
    (peer.host.as_str(), peer.port)
        .to_socket_addrs()
        .map_err(|e| TransferError::unreachable(format!("resolving {peer}: {e}")))?
        .next()
        .ok_or_else(|| TransferError::unreachable(format!("{peer} resolves to nothing")))
}

fn configure(stream: &TcpStream, opts: &TransportOptions) -> Result<(), TransferError> {
    stream
        .set_nodelay(true)
        .and_then(|_| stream.set_read_timeout(Some(opts.timeout)))
        .and_then(|_| stream.set_write_timeout(Some(opts.timeout)))
        .map_err(|e| io_error("configuring socket", e))
}

/// A long-lived connection to one peer shim.
pub struct NetworkClient {
    stream: TcpStream,
    opts: TransportOptions,
}

impl NetworkClient {
    pub fn connect(peer: &PeerAddress, opts: TransportOptions) -> Result<Self, TransferError> {
        let addr = resolve(peer)?;
        let stream = TcpStream::connect_timeout(&addr, opts.timeout)
            .map_err(|e| TransferError::unreachable(format!("connecting to {peer}: {e}")))?;
        configure(&stream, &opts)?;
        Ok(NetworkClient { stream, opts })
    }

    /// Send one DATA frame and wait for its ACK. The source stays borrowed,
    /// and so frozen, until the ACK arrives; spliced pages may still sit in
    /// the socket until then.
    pub fn send(
        &mut self,
        header: FrameHeader,
        source: &GuestInstance,
        region: MemoryRegion,
    ) -> Result<SendOutcome, TransferError> {
        check_send(&header, source, region)?;
        let payload = source.read_memory_host(region)?;
        let mut hose = if self.opts.hose { DataHose::open().ok() } else { None };
        let header = header.with_zero_copy(hose.is_some());
        let sent = wire::write_header(&mut self.stream, &header).and_then(|_| match hose.as_mut() {
            Some(h) => h.pump_out(payload, self.stream.as_raw_fd()),
            None => wire::write_payload(&mut self.stream, payload, self.opts.chunk_size),
        });
        let result = sent.and_then(|_| wire::read_reply(&mut self.stream, &header));
        if let Some(h) = hose.as_mut() {
            close_all(h, None);
        }
        if result.is_err() {
            // The stream position is unknown after a failure.
            let _ = self.stream.shutdown(Shutdown::Both);
        }
        Ok(SendOutcome {
            ack: result?,
            zero_copy: header.zero_copy(),
        })
    }

    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.stream.local_addr().ok()
    }
}

/// One-shot send over a fresh connection.
pub fn send_network(
    peer: &PeerAddress,
    header: FrameHeader,
    source: &GuestInstance,
    region: MemoryRegion,
    opts: TransportOptions,
) -> Result<SendOutcome, TransferError> {
    NetworkClient::connect(peer, opts)?.send(header, source, region)
}

/// A running TCP listener. Stops on drop.
pub struct NetworkListener {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    accept_thread: Option<JoinHandle<()>>,
}

impl NetworkListener {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn peer_address(&self) -> PeerAddress {
        PeerAddress {
            host: self.addr.ip().to_string(),
            port: self.addr.port(),
        }
    }

    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
        for c in self.connections.lock().unwrap_or_else(|p| p.into_inner()).drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for NetworkListener {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Accept TCP connections on `addr` and deliver DATA frames into `sink`.
pub fn serve_network(addr: &str, sink: Sink, opts: TransportOptions) -> Result<NetworkListener, TransferError> {
    let listener = TcpListener::bind(addr).map_err(|e| TransferError::unreachable(format!("binding {addr}: {e}")))?;
    let local = listener
        .local_addr()
        .map_err(|e| io_error("reading bound address", e))?;
    let stop = Arc::new(AtomicBool::new(false));
    let connections = Arc::new(Mutex::new(Vec::new()));
    let accept_thread = {
        let stop = stop.clone();
        let connections = connections.clone();
        std::thread::Builder::new()
            .name(format!("network-accept-{}", local.port()))
            .spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let stream = match conn {
                        Ok(s) => s,
                        Err(e) => {
                            warn!("accept on {local}: {e}");
                            continue;
                        }
                    };
                    let _ = stream.set_nodelay(true);
                    if let Ok(clone) = stream.try_clone() {
                        let mut list = connections.lock().unwrap_or_else(|p| p.into_inner());
                        list.retain(|c: &TcpStream| c.peer_addr().is_ok());
                        list.push(clone);
                    }
                    let sink = sink.clone();
                    let _ = std::thread::Builder::new()
                        .name("network-conn".into())
                        .spawn(move || serve_connection(stream, sink, opts));
                }
            })
            .map_err(|e| TransferError::unreachable(format!("spawning listener: {e}")))?
    };
    Ok(NetworkListener {
        addr: local,
        stop,
        connections,
        accept_thread: Some(accept_thread),
    })
}

fn serve_connection(mut stream: TcpStream, sink: Sink, opts: TransportOptions) {
    loop {
        let _ = stream.set_read_timeout(None);
        let header = match wire::read_header(&mut stream) {
            Ok(Some(h)) => h,
            Ok(None) => return,
            Err(e) => {
                debug!("dropping network connection: {e}");
                wire::send_error(&mut stream, None, &e);
                let _ = stream.shutdown(Shutdown::Both);
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
                    let _ = stream.shutdown(Shutdown::Both);
                    return;
                }
            }
        }
    }
}

fn receive_data(
    stream: &mut TcpStream,
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
    let mut hose = if header.zero_copy() && opts.hose { DataHose::open().ok() } else { None };
    let mut guest = sink::write(target);
    let fd = stream.as_raw_fd();
    let result = deliver_into(&mut guest, header.payload_len, |buf| match hose.as_mut() {
        Some(h) => h.pump_in(fd, buf),
        None => wire::read_payload(stream, buf, opts.chunk_size),
    });
    if let Some(h) = hose.as_mut() {
        close_all(h, None);
    }
    result.map(|_| ()).map_err(|e| (e, false))
}
