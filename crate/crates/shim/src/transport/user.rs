//! Same-VM delivery: locate, host read, allocate in the target, host
//! write, then hand over via the target's mailbox.
//!
//! The payload moves with a single memory-to-memory copy between the two
//! linear memories. Nothing here looks at payload bytes.

use std::cell::Cell;

use wasmhose_core::{MemoryRegion, TransferError, WorkflowId};

use crate::host::{GuestInstance, HostCallCapture};
use crate::transport::sink::hand_over;

/// A trusted same-workflow pair inside one VM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalRoute {
    pub source: u32,
    pub target: u32,
    pub workflow_id: WorkflowId,
}

thread_local! {
    static BULK_COPIES: Cell<u64> = const { Cell::new(0) };
}

/// Payload copies performed by [`deliver_local`] on the calling thread.
pub fn bulk_copies() -> u64 {
    BULK_COPIES.with(Cell::get)
}

fn check_route(
    route: &LocalRoute,
    capture: &HostCallCapture,
    source: &GuestInstance,
    target: &GuestInstance,
) -> Result<(), TransferError> {
    if route.source == route.target {
        return Err(TransferError::registry("local route source and target are the same instance"));
    }
    if source.id() != route.source || target.id() != route.target {
        return Err(TransferError::registry(format!(
            "instances {}->{} do not match route {}->{}",
            source.id(),
            target.id(),
            route.source,
            route.target
        )));
    }
    if capture.instance_id != route.source {
        return Err(TransferError::registry(format!(
            "capture from instance {} used on route from {}",
            capture.instance_id, route.source
        )));
    }
    for inst in [source, target] {
        if inst.workflow() != Some(route.workflow_id) {
            return Err(TransferError::registry(format!(
                "instance {} is not registered in workflow {}",
                inst.id(),
                route.workflow_id
            )));
        }
    }
    Ok(())
}

/// Copy the captured region into a fresh allocation in `target` and run
/// the target on it. Returns the target region, still allocated; the
/// caller releases it once done with the result.
pub fn deliver_local(
    route: &LocalRoute,
    capture: &HostCallCapture,
    source: &GuestInstance,
    target: &mut GuestInstance,
) -> Result<MemoryRegion, TransferError> {
    check_route(route, capture, source, target)?;
    capture.region.check_transferable(source.memory_size())?;
    let data = source.read_memory_host(capture.region)?;
    let region = target.guest_alloc(capture.region.length)?;
    target.region_mut(region)?.copy_from_slice(data);
    BULK_COPIES.with(|c| c.set(c.get() + 1));
    if let Err(e) = hand_over(target, region) {
        let _ = target.guest_dealloc(region);
        return Err(e);
    }
    Ok(region)
}
