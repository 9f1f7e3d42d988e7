//! Runs alone in its own process so no other test opens descriptors
//! while the census is taken.

mod common;

use std::time::Duration;

use common::*;
use wasmhose::guests::SampleGuest;
use wasmhose::transport::kernel::{serve_kernel, KernelClient, LocalEndpoint};
use wasmhose::transport::network::{serve_network, NetworkClient};
use wasmhose::transport::sink;
use wasmhose::transport::TransportOptions;
use wasmhose::usage::open_descriptors;
use wasmhose_core::payload::generate;
use wasmhose_core::{checksum64, FrameHeader};

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
fn descriptor_census_over_a_burst() {
    let h = host();
    let (sink, target) = consumer_sink(&h);
    let dir = tempfile::tempdir().unwrap();
    let ep = LocalEndpoint::new(dir.path().join("2.sock"), DST);
    let mut p = guest(&h, SampleGuest::Producer);
    let cap = produce(&mut p, 11, 70_000);
    let expected = checksum64(&generate(11, 70_000));
    // Warm up lazily created process state (engine threads, resolver).
    {
        let net = serve_network("127.0.0.1:0", sink.clone(), opts(true)).unwrap();
        let mut c = NetworkClient::connect(&net.peer_address(), opts(true)).unwrap();
        c.send(header(70_000), &p, cap.region).unwrap();
    }
    std::thread::sleep(Duration::from_millis(300));
    let before = open_descriptors().unwrap();
    {
        let net = serve_network("127.0.0.1:0", sink.clone(), opts(true)).unwrap();
        let kern = serve_kernel(&ep, sink, opts(true)).unwrap();
        let mut nc = NetworkClient::connect(&net.peer_address(), opts(true)).unwrap();
        let mut kc = KernelClient::connect(kern.path(), opts(true)).unwrap();
        for i in 0..100 {
            if i % 2 == 0 {
                nc.send(header(70_000), &p, cap.region).unwrap();
            } else {
                kc.send(header(70_000), &p, cap.region).unwrap();
            }
            assert_eq!(sink::write(&target).last_checksum(), Some(expected));
        }
    }
    // Listener threads notice closed connections asynchronously.
    let mut after = open_descriptors().unwrap();
    for _ in 0..50 {
        if after == before {
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
        after = open_descriptors().unwrap();
    }
    assert_eq!(before, after);
    assert!(!ep.path.exists());
}
