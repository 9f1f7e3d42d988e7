//! Start, deliver over every plane, shut down, and check nothing leaks.
//! Kept in its own process so the descriptor census is not disturbed.

use std::time::Duration;

use wasmhose::bench::{Bench, FIRST_CONSUMER_ID};
use wasmhose::usage::open_descriptors;
use wasmhose_core::metrics::ReportMode;

#[test]
fn lifecycle_leaves_no_descriptors_or_socket_files() {
    let dir = tempfile::tempdir().unwrap();
    // Prime process-wide state that outlives any one shim.
    drop(Bench::generated(1, 4096, dir.path()).unwrap());
    std::thread::sleep(Duration::from_millis(300));
    let before = open_descriptors().unwrap();
    {
        let mut bench = Bench::generated(1, 1 << 20, dir.path()).unwrap();
        let target = bench.targets[0];
        assert_eq!(target.id, FIRST_CONSUMER_ID);
        let endpoints: Vec<_> = bench.shim.kernel_endpoints().map(|p| p.to_owned()).collect();
        assert_eq!(endpoints.len(), 2);
        assert!(endpoints.iter().all(|p| p.exists()));
        let cap = bench.produce(5, 1 << 20).unwrap();
        for mode in [ReportMode::User, ReportMode::Kernel, ReportMode::Network, ReportMode::Baseline] {
            let r = bench.transfer(mode, target, &cap, 0).unwrap();
            assert!(r.delivered_checksum.is_some(), "{mode}");
        }
        drop(bench);
        assert!(endpoints.iter().all(|p| !p.exists()));
    }
    let mut after = open_descriptors().unwrap();
    for _ in 0..50 {
        if after == before {
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
        after = open_descriptors().unwrap();
    }
    assert_eq!(before, after);
}
