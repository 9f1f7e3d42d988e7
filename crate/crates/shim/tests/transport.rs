mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::os::unix::net::UnixStream;
use std::time::Duration;

use common::*;
use wasmhose::guests::SampleGuest;
use wasmhose::transport::hose::DataHose;
use wasmhose::transport::kernel::{serve_kernel, KernelClient, LocalEndpoint};
use wasmhose::transport::network::{serve_network, NetworkClient};
use wasmhose::transport::sink;
use wasmhose::transport::user::{bulk_copies, deliver_local, LocalRoute};
use wasmhose::transport::{wire, TransportOptions};
use wasmhose_core::payload::generate;
use wasmhose_core::{checksum64, ErrorKind, FrameHeader, MemoryRegion, MsgType, WorkflowId};

fn opts(hose: bool) -> TransportOptions {
    TransportOptions {
        timeout: Duration::from_secs(10),
        hose,
        ..TransportOptions::default()
    }
}

fn header(len: u64) -> FrameHeader {
    FrameHeader::data(WF, SRC, DST, len)
}

#[test]
fn user_plane_one_copy_and_checksum() {
    let h = host();
    let mut p = guest(&h, SampleGuest::Producer);
    let mut c = guest(&h, SampleGuest::Consumer);
    let cap = produce(&mut p, 3, 1 << 20);
    let route = LocalRoute {
        source: p.id(),
        target: c.id(),
        workflow_id: WF,
    };
    let before = bulk_copies();
    let region = deliver_local(&route, &cap, &p, &mut c).unwrap();
    assert_eq!(bulk_copies() - before, 1);
    assert_eq!(c.last_checksum(), Some(checksum64(&generate(3, 1 << 20))));
    c.guest_dealloc(region).unwrap();
}

#[test]
fn user_plane_refuses_foreign_workflow_and_wrong_capture() {
    let h = host();
    let mut p = guest(&h, SampleGuest::Producer);
    let mut c = guest(&h, SampleGuest::Consumer);
    let cap = produce(&mut p, 3, 64);
    let mut route = LocalRoute {
        source: p.id(),
        target: c.id(),
        workflow_id: WorkflowId([9; 16]),
    };
    assert_eq!(deliver_local(&route, &cap, &p, &mut c).unwrap_err().kind, ErrorKind::RegistryMiss);
    route.workflow_id = WF;
    let mut forged = cap;
    forged.instance_id = c.id();
    assert_eq!(deliver_local(&route, &forged, &p, &mut c).unwrap_err().kind, ErrorKind::RegistryMiss);
    let mut empty = cap;
    empty.region = MemoryRegion::new(cap.region.offset, 0);
    assert_eq!(deliver_local(&route, &empty, &p, &mut c).unwrap_err().kind, ErrorKind::BoundsViolation);
    assert_eq!(c.live_regions().count(), 0);
}

#[test]
fn kernel_plane_end_to_end() {
    let h = host();
    let dir = tempfile::tempdir().unwrap();
    let (sink, target) = consumer_sink(&h);
    let ep = LocalEndpoint::new(dir.path().join("wf").join("2.sock"), DST);
    let mut listener = serve_kernel(&ep, sink, opts(false)).unwrap();
    let mut p = guest(&h, SampleGuest::Producer);
    let mut client = KernelClient::connect(&ep.path, opts(false)).unwrap();
    for (seed, len) in [(1u64, 1u32), (2, 1 << 20), (3, 1 << 20), (4, 10 << 20)] {
        let cap = produce(&mut p, seed, len);
        let out = client.send(header(len as u64), &p, cap.region).unwrap();
        assert_eq!(out.ack.msg_type, MsgType::Ack);
        assert!(!out.zero_copy);
        let mut t = sink::write(&target);
        assert_eq!(t.last_checksum(), Some(checksum64(&generate(seed, len as usize))));
        assert_eq!(t.live_regions().count(), 0);
    }
    listener.shutdown();
    assert!(!ep.path.exists());
}

#[test]
fn kernel_plane_refuses_a_served_path() {
    let h = host();
    let dir = tempfile::tempdir().unwrap();
    let ep = LocalEndpoint::new(dir.path().join("2.sock"), DST);
    let _a = serve_kernel(&ep, consumer_sink(&h).0, opts(false)).unwrap();
    let err = serve_kernel(&ep, consumer_sink(&h).0, opts(false)).err().unwrap();
    assert_eq!(err.kind, ErrorKind::PeerUnreachable);
    // A stale file with nobody behind it is replaced.
    let stale = LocalEndpoint::new(dir.path().join("stale.sock"), DST);
    drop(std::os::unix::net::UnixListener::bind(&stale.path).unwrap());
    assert!(serve_kernel(&stale, consumer_sink(&h).0, opts(false)).is_ok());
}

#[test]
fn kernel_unreachable_and_registry_miss() {
    let h = host();
    let dir = tempfile::tempdir().unwrap();
    let err = KernelClient::connect(&dir.path().join("nobody.sock"), opts(false)).err().unwrap();
    assert_eq!(err.kind, ErrorKind::PeerUnreachable);

    let ep = LocalEndpoint::new(dir.path().join("2.sock"), DST);
    let _l = serve_kernel(&ep, consumer_sink(&h).0, opts(false)).unwrap();
    let mut p = guest(&h, SampleGuest::Producer);
    let cap = produce(&mut p, 1, 100);
    let mut client = KernelClient::connect(&ep.path, opts(false)).unwrap();
    let wrong = FrameHeader::data(WF, SRC, 99, 100);
    assert_eq!(client.send(wrong, &p, cap.region).unwrap_err().kind, ErrorKind::RegistryMiss);
    assert_eq!(
        client.send(header(99), &p, cap.region).unwrap_err().kind,
        ErrorKind::FrameMalformed
    );
}

fn network_round(hose: bool, sizes: &[u32]) {
    let h = host();
    let (sink, target) = consumer_sink(&h);
    let listener = serve_network("127.0.0.1:0", sink, opts(true)).unwrap();
    let mut p = guest(&h, SampleGuest::Producer);
    let mut client = NetworkClient::connect(&listener.peer_address(), opts(hose)).unwrap();
    for (i, &len) in sizes.iter().enumerate() {
        let cap = produce(&mut p, i as u64, len);
        let out = client.send(header(len as u64), &p, cap.region).unwrap();
        assert_eq!(out.zero_copy, hose, "len {len}");
        let mut t = sink::write(&target);
        assert_eq!(t.last_checksum(), Some(checksum64(&generate(i as u64, len as usize))), "len {len}");
        assert_eq!(t.live_regions().count(), 0);
    }
}

#[test]
fn network_zero_copy_and_fallback_deliver_identically() {
    network_round(true, &[1, 1 << 20, 1 << 20, 10 << 20]);
    network_round(false, &[1, 1 << 20, 1 << 20, 10 << 20]);
}

#[test]
fn hose_chunk_boundary_sweep() {
    let cap = DataHose::open().unwrap().capacity() as u32;
    let mut sizes = Vec::new();
    for k in [1u32, 2, 5] {
        sizes.extend([k * cap, k * cap + 1, k * cap + cap - 1]);
    }
    sizes.extend([1, cap - 1]);
    sizes.sort();
    network_round(true, &sizes);
    network_round(false, &sizes);
}

#[test]
fn unreachable_peer() {
    let addr = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let peer = wasmhose_core::registry::PeerAddress {
        host: "127.0.0.1".into(),
        port: addr.port(),
    };
    let err = NetworkClient::connect(&peer, opts(true)).err().unwrap();
    assert_eq!(err.kind, ErrorKind::PeerUnreachable);
}

#[test]
fn truncated_payload_never_runs_the_target() {
    let h = host();
    let (sink, target) = consumer_sink(&h);
    let listener = serve_network("127.0.0.1:0", sink, opts(true)).unwrap();
    for zero_copy in [false, true] {
        let mut s = TcpStream::connect(listener.local_addr()).unwrap();
        s.write_all(&header(1000).with_zero_copy(zero_copy).encode()).unwrap();
        s.write_all(&[5u8; 400]).unwrap();
        s.shutdown(std::net::Shutdown::Write).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        let err = wire::read_reply(&mut s, &header(1000)).unwrap_err();
        assert!(matches!(err.kind, ErrorKind::PeerUnreachable | ErrorKind::Timeout), "{err}");
        let mut t = sink::write(&target);
        assert_eq!(t.last_checksum(), Some(0), "run() must not have been invoked");
        assert_eq!(t.live_regions().count(), 0);
    }
}

#[test]
fn zero_length_and_malformed_frames_get_errors() {
    let h = host();
    let (sink, _t) = consumer_sink(&h);
    let listener = serve_network("127.0.0.1:0", sink, opts(true)).unwrap();
    let mut s = TcpStream::connect(listener.local_addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    s.write_all(&header(0).encode()).unwrap();
    assert_eq!(wire::read_reply(&mut s, &header(0)).unwrap_err().kind, ErrorKind::BoundsViolation);

    // The connection survives a zero-length frame; a bad magic ends it.
    let mut bad = header(4).encode();
    bad[0] ^= 0xFF;
    s.write_all(&bad).unwrap();
    assert_eq!(wire::read_reply(&mut s, &header(4)).unwrap_err().kind, ErrorKind::FrameMalformed);
    let mut rest = Vec::new();
    assert_eq!(s.read_to_end(&mut rest).unwrap(), 0);
}

#[test]
fn hose_close_is_idempotent_after_abort() {
    let (a, _b) = UnixStream::pair().unwrap();
    let mut hose = DataHose::open().unwrap();
    wasmhose::transport::hose::close_all(&mut hose, None);
    wasmhose::transport::hose::close_all(&mut hose, None);
    use std::os::fd::AsRawFd;
    assert!(hose.pump_out(b"abc", a.as_raw_fd()).is_err());
}
