//! Receive-side delivery into hosted guests, shared by every listener.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use wasmhose_core::{FunctionKey, MemoryRegion, TransferError};

use crate::host::GuestInstance;

/// A guest shared between the dispatcher and listeners. Reads of guest
/// memory take the read lock; anything that runs guest code or writes
/// its memory takes the write lock.
pub type SharedInstance = Arc<RwLock<GuestInstance>>;

pub fn shared(instance: GuestInstance) -> SharedInstance {
    Arc::new(RwLock::new(instance))
}

pub fn read(i: &SharedInstance) -> RwLockReadGuard<'_, GuestInstance> {
    i.read().unwrap_or_else(|p| p.into_inner())
}

pub fn write(i: &SharedInstance) -> RwLockWriteGuard<'_, GuestInstance> {
    i.write().unwrap_or_else(|p| p.into_inner())
}

/// The hosted guests a listener may deliver into, keyed by function.
#[derive(Clone, Default)]
pub struct Sink {
    targets: Arc<BTreeMap<FunctionKey, SharedInstance>>,
}

impl Sink {
    pub fn new(targets: BTreeMap<FunctionKey, SharedInstance>) -> Self {
        Sink {
            targets: Arc::new(targets),
        }
    }

    pub fn single(key: FunctionKey, instance: SharedInstance) -> Self {
        Self::new(BTreeMap::from([(key, instance)]))
    }

    pub fn get(&self, key: FunctionKey) -> Result<&SharedInstance, TransferError> {
        self.targets.get(&key).ok_or_else(|| {
            TransferError::registry(format!("no hosted function {} in workflow {}", key.id, key.workflow))
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &FunctionKey> {
        self.targets.keys()
    }
}

/// What a committed delivery left behind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Committed {
    pub region: MemoryRegion,
    /// Checksum the guest reported from its `run()`, when it exports one.
    pub checksum: Option<u64>,
}

/// Point the guest's mailbox at `region` and run it.
pub fn hand_over(instance: &mut GuestInstance, region: MemoryRegion) -> Result<Option<u64>, TransferError> {
    instance.write_mailbox(region)?;
    instance.run()?;
    Ok(instance.last_checksum())
}

/// Allocate `len` bytes in `instance`, let `fill` populate them, then run
/// the guest and release the region.
///
/// The guest only runs once `fill` has succeeded, so it never sees a
/// partial payload; on failure the region is released and the guest is
/// left untouched.
pub fn deliver_into<F>(instance: &mut GuestInstance, len: u64, fill: F) -> Result<Committed, TransferError>
where
    F: FnOnce(&mut [u8]) -> Result<(), TransferError>,
{
    let region = instance.guest_alloc(len)?;
    if let Err(e) = instance.region_mut(region).and_then(fill) {
        let _ = instance.guest_dealloc(region);
        return Err(e);
    }
    let outcome = hand_over(instance, region);
    let released = instance.guest_dealloc(region);
    let checksum = outcome?;
    released?;
    Ok(Committed { region, checksum })
}
