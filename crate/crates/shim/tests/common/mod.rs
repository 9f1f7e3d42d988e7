#![allow(dead_code)]

use wasmhose::guests::SampleGuest;
use wasmhose::host::{GuestInstance, HostCallCapture, WasmHost};
use wasmhose::transport::sink::{self, SharedInstance, Sink};
use wasmhose_core::{FunctionKey, WorkflowId};

pub const WF: WorkflowId = WorkflowId([7; 16]);
pub const SRC: u32 = 1;
pub const DST: u32 = 2;
pub const LIMIT: u64 = 256 << 20;

pub fn host() -> WasmHost {
    WasmHost::new().unwrap()
}

pub fn guest(host: &WasmHost, g: SampleGuest) -> GuestInstance {
    let mut i = host.instantiate(&g.wasm(), LIMIT).unwrap();
    i.set_workflow(WF);
    i
}

/// Producer output of `len` bytes from `seed`.
pub fn produce(p: &mut GuestInstance, seed: u64, len: u32) -> HostCallCapture {
    p.take_captures();
    p.set_params(seed, len).unwrap();
    p.run().unwrap();
    let caps = p.take_captures();
    assert_eq!(caps.len(), 1);
    caps[0]
}

pub fn consumer_sink(host: &WasmHost) -> (Sink, SharedInstance) {
    let c = sink::shared(guest(host, SampleGuest::Consumer));
    (Sink::single(FunctionKey::new(WF, DST), c.clone()), c)
}
