use proptest::prelude::*;
use wasmhose::guests::SampleGuest;
use wasmhose::host::{GuestInstance, Scalar, WasmHost, WASM_PAGE};
use wasmhose_core::payload::generate;
use wasmhose_core::{checksum64, ErrorKind, MemoryRegion};

const LIMIT: u64 = 64 << 20;

fn instance(host: &WasmHost, g: SampleGuest) -> GuestInstance {
    host.instantiate(&g.wasm(), LIMIT).unwrap()
}

#[test]
fn memory_round_trip_and_guest_checksum() {
    let host = WasmHost::new().unwrap();
    let mut c = instance(&host, SampleGuest::Consumer);
    let data = generate(5, 100_000);
    let r = c.guest_alloc(data.len() as u64).unwrap();
    c.write_memory_host(&data, r.offset).unwrap();
    assert_eq!(c.read_memory_host(r).unwrap(), &data[..]);
    assert_eq!(c.guest_checksum(r).unwrap(), checksum64(&data));
    c.write_mailbox(r).unwrap();
    c.run().unwrap();
    assert_eq!(c.last_checksum(), Some(checksum64(&data)));
    c.guest_dealloc(r).unwrap();
}

#[test]
fn echo_captures_the_mailbox_region() {
    let host = WasmHost::new().unwrap();
    let mut e = instance(&host, SampleGuest::Echo);
    let r = e.guest_alloc(5).unwrap();
    e.write_memory_host(b"hello", r.offset).unwrap();
    e.write_mailbox(r).unwrap();
    e.run().unwrap();
    let caps = e.take_captures();
    assert_eq!(caps.len(), 1);
    assert_eq!(caps[0].region, r);
    assert_eq!(caps[0].instance_id, e.id());
    assert_eq!(e.read_memory_host(caps[0].region).unwrap(), b"hello");

    e.invoke("run_split", &[]).unwrap();
    let caps = e.take_captures();
    assert_eq!(caps.len(), 2);
    assert!(caps[0].sequence_no < caps[1].sequence_no);
    assert_eq!(caps[0].region.length + caps[1].region.length, 5);
    assert!(e.take_captures().is_empty());
}

#[test]
fn out_of_bounds_descriptor_is_rejected_not_captured() {
    let host = WasmHost::new().unwrap();
    let mut e = instance(&host, SampleGuest::Echo);
    let size = e.memory_size() as i32;
    let err = e.invoke("send_raw", &[Scalar::I32(size - 4), Scalar::I32(8)]).unwrap_err();
    assert_eq!(err.kind, ErrorKind::BoundsViolation);
    assert!(e.take_captures().is_empty());
    e.invoke("send_raw", &[Scalar::I32(size - 4), Scalar::I32(4)]).unwrap();
    assert_eq!(e.take_captures().len(), 1);
}

#[test]
fn allocation_limits() {
    let host = WasmHost::new().unwrap();
    let mut c = host.instantiate(&SampleGuest::Consumer.wasm(), 4 * WASM_PAGE).unwrap();
    assert_eq!(c.guest_alloc(0).unwrap_err().kind, ErrorKind::AllocationFailed);
    assert_eq!(c.guest_alloc(8 * WASM_PAGE).unwrap_err().kind, ErrorKind::AllocationFailed);
    assert_eq!(c.guest_alloc(1 << 33).unwrap_err().kind, ErrorKind::AllocationFailed);
    let a = c.guest_alloc(WASM_PAGE).unwrap();
    let b = c.guest_alloc(WASM_PAGE).unwrap();
    assert!(!a.overlaps(&b));
    assert!(c.memory_size() <= 4 * WASM_PAGE);
    let err = host.instantiate(&SampleGuest::Consumer.wasm(), 0).unwrap_err();
    assert_eq!(err.kind, ErrorKind::AllocationFailed);
}

#[test]
fn dealloc_refuses_unknown_and_double_free() {
    let host = WasmHost::new().unwrap();
    let mut c = instance(&host, SampleGuest::Consumer);
    let r = c.guest_alloc(64).unwrap();
    assert_eq!(c.guest_dealloc(MemoryRegion::new(r.offset, 32)).unwrap_err().kind, ErrorKind::BoundsViolation);
    c.guest_dealloc(r).unwrap();
    assert_eq!(c.guest_dealloc(r).unwrap_err().kind, ErrorKind::BoundsViolation);
    assert_eq!(c.live_regions().count(), 0);
    // Freed space is reused.
    assert_eq!(c.guest_alloc(64).unwrap().offset, r.offset);
}

#[test]
fn writes_must_stay_inside_registered_regions() {
    let host = WasmHost::new().unwrap();
    let mut c = instance(&host, SampleGuest::Consumer);
    let r = c.guest_alloc(16).unwrap();
    assert!(c.write_memory_host(&[1; 16], r.offset).is_ok());
    assert_eq!(c.write_memory_host(&[1; 17], r.offset).unwrap_err().kind, ErrorKind::BoundsViolation);
    assert_eq!(c.write_memory_host(&[1; 4], 0).unwrap_err().kind, ErrorKind::BoundsViolation);
}

#[test]
fn producer_matches_host_generator() {
    let host = WasmHost::new().unwrap();
    let mut p = instance(&host, SampleGuest::Producer);
    for (seed, len) in [(0u64, 1u32), (42, 1000), (u64::MAX, 65537)] {
        p.set_params(seed, len).unwrap();
        p.run().unwrap();
        let caps = p.take_captures();
        assert_eq!(caps.len(), 1);
        assert_eq!(p.read_memory_host(caps[0].region).unwrap(), &generate(seed, len as usize)[..]);
    }
    // Repeated runs free their previous output instead of growing.
    let size = p.memory_size();
    for _ in 0..20 {
        p.set_params(1, 65537).unwrap();
        p.run().unwrap();
    }
    assert_eq!(p.memory_size(), size);
}

#[test]
fn instances_are_isolated() {
    let host = WasmHost::new().unwrap();
    let mut a = instance(&host, SampleGuest::Consumer);
    let mut b = instance(&host, SampleGuest::Consumer);
    assert_ne!(a.id(), b.id());
    let ra = a.guest_alloc(1024).unwrap();
    let rb = b.guest_alloc(1024).unwrap();
    a.write_memory_host(&[0xAA; 1024], ra.offset).unwrap();
    let before = b.guest_checksum(rb).unwrap();
    b.write_memory_host(&[0x55; 1024], rb.offset).unwrap();
    assert_eq!(a.read_memory_host(ra).unwrap(), &[0xAA; 1024][..]);
    assert_ne!(before, b.guest_checksum(rb).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    /// Every (offset, length) pair either reads exactly the requested bytes
    /// or fails with BoundsViolation, and the guest checksum agrees.
    #[test]
    fn bounds_totality(offset in any::<u32>(), length in 0u64..(1u64 << 33), small in any::<bool>()) {
        thread_local! {
            static C: std::cell::RefCell<GuestInstance> =
                std::cell::RefCell::new(WasmHost::new().unwrap().instantiate(&SampleGuest::Consumer.wasm(), LIMIT).unwrap());
        }
        C.with(|c| {
            let c = &mut *c.borrow_mut();
            let size = c.memory_size();
            // Half the cases land near or inside memory so both outcomes are common.
            let (offset, length) = if small {
                ((offset as u64 % (size + 64)) as u32, length % 4096)
            } else {
                (offset, length)
            };
            let region = MemoryRegion::new(offset, length);
            let inside = offset as u64 + length <= size;
            match c.read_memory_host(region) {
                Ok(bytes) => {
                    prop_assert!(inside);
                    prop_assert_eq!(bytes.len() as u64, length);
                }
                Err(e) => {
                    prop_assert!(!inside);
                    prop_assert_eq!(e.kind, ErrorKind::BoundsViolation);
                }
            }
            let sum = c.guest_checksum(region);
            prop_assert_eq!(sum.is_ok(), inside);
            Ok(())
        })?;
    }
}
