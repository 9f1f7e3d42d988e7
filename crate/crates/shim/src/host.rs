//! Wasm VM embedding: instantiates guests, links the `send_to_host`
//! import, and exposes the shim-side memory operations.
//!
//! Each [`GuestInstance`] owns its own store, so instances are isolated
//! from one another and distinct instances can be driven from different
//! threads. Calls on one instance need `&mut`, which serializes them.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU32, Ordering};

use wasmhose_core::abi::{self, MAILBOX_LEN, MAILBOX_OFFSET};
use wasmhose_core::{ErrorKind, MemoryRegion, TransferError, WorkflowId};
use wasmtime::{
    Caller, Engine, Extern, ExternType, Func, Instance, Linker, Memory, Module, Store, StoreLimits,
    StoreLimitsBuilder, Trap, TypedFunc, Val, ValType,
};

use crate::abi_check::check_abi;

pub const WASM_PAGE: u64 = 65536;

/// Snapshot of an instance's identity and shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceHandle {
    pub instance_id: u32,
    pub memory_size: u64,
    pub exports: BTreeSet<String>,
}

/// Descriptor a guest passed to `send_to_host`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostCallCapture {
    pub region: MemoryRegion,
    pub instance_id: u32,
    pub sequence_no: u64,
}

/// Scalar argument or result of a guest export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scalar {
    I32(i32),
    I64(i64),
}

impl Scalar {
    fn to_val(self) -> Val {
        match self {
            Scalar::I32(v) => Val::I32(v),
            Scalar::I64(v) => Val::I64(v),
        }
    }

    fn matches(self, ty: &ValType) -> bool {
        matches!((self, ty), (Scalar::I32(_), ValType::I32) | (Scalar::I64(_), ValType::I64))
    }
}

struct GuestState {
    limits: StoreLimits,
    instance_id: u32,
    next_seq: u64,
    captures: Vec<HostCallCapture>,
}

/// A compiled, ABI-checked guest module.
#[derive(Clone)]
pub struct GuestModule {
    module: Module,
    min_memory: u64,
}

/// Process-wide engine plus the linker carrying the host import.
pub struct WasmHost {
    engine: Engine,
    linker: Linker<GuestState>,
}

static NEXT_INSTANCE_ID: AtomicU32 = AtomicU32::new(1);

fn engine_error(kind: ErrorKind, context: &str, e: wasmtime::Error) -> TransferError {
    TransferError::new(kind, format!("{context}: {e:#}"))
}

/// Classify a failed guest call.
fn trap_error(context: &str, e: wasmtime::Error) -> TransferError {
    let kind = match e.downcast_ref::<Trap>() {
        Some(Trap::MemoryOutOfBounds) => ErrorKind::BoundsViolation,
        _ if format!("{e:#}").contains("send_to_host") => ErrorKind::BoundsViolation,
        _ => ErrorKind::GuestAbiMissing,
    };
    TransferError::new(kind, format!("{context} trapped: {e:#}"))
}

impl WasmHost {
    pub fn new() -> Result<Self, TransferError> {
        let engine = Engine::default();
        let mut linker = Linker::new(&engine);
        linker
            .func_wrap(
                abi::IMPORT_MODULE,
                abi::SEND_TO_HOST,
                |mut caller: Caller<'_, GuestState>, offset: i32, len: i32| -> wasmtime::Result<()> {
                    let memory = match caller.get_export(abi::MEMORY) {
                        Some(Extern::Memory(m)) => m,
                        _ => wasmtime::bail!("send_to_host: guest exports no memory"),
                    };
                    let size = memory.data_size(&caller) as u64;
                    let region = MemoryRegion::new(offset as u32, len as u32 as u64);
                    if region.end() > size {
                        wasmtime::bail!(
                            "send_to_host descriptor [{}, {}) outside linear memory of {size} bytes",
                            region.offset,
                            region.end()
                        );
                    }
                    let state = caller.data_mut();
                    let capture = HostCallCapture {
                        region,
                        instance_id: state.instance_id,
                        sequence_no: state.next_seq,
                    };
                    state.next_seq += 1;
                    state.captures.push(capture);
                    Ok(())
                },
            )
            .map_err(|e| engine_error(ErrorKind::GuestAbiMissing, "linking send_to_host", e))?;
        Ok(WasmHost { engine, linker })
    }

    /// Check the ABI and compile once, for instantiating many copies.
    pub fn compile(&self, module_binary: &[u8]) -> Result<GuestModule, TransferError> {
        check_abi(module_binary)?;
        let module = Module::new(&self.engine, module_binary)
            .map_err(|e| engine_error(ErrorKind::GuestAbiMissing, "compiling guest", e))?;
        let min_memory = module
            .exports()
            .find_map(|e| match e.ty() {
                ExternType::Memory(m) if e.name() == abi::MEMORY => Some(m.minimum() * WASM_PAGE),
                _ => None,
            })
            .unwrap_or(0);
        Ok(GuestModule { module, min_memory })
    }

    pub fn instantiate(&self, module_binary: &[u8], max_memory: u64) -> Result<GuestInstance, TransferError> {
        let module = self.compile(module_binary)?;
        self.instantiate_module(&module, max_memory)
    }

    pub fn instantiate_module(&self, module: &GuestModule, max_memory: u64) -> Result<GuestInstance, TransferError> {
        if module.min_memory > max_memory {
            return Err(TransferError::alloc(format!(
                "module needs {} bytes of memory, limit is {max_memory}",
                module.min_memory
            )));
        }
        let instance_id = NEXT_INSTANCE_ID.fetch_add(1, Ordering::Relaxed);
        let limits = StoreLimitsBuilder::new()
            .memory_size(usize::try_from(max_memory).unwrap_or(usize::MAX))
            .instances(1)
            .build();
        let mut store = Store::new(
            &self.engine,
            GuestState {
                limits,
                instance_id,
                next_seq: 0,
                captures: Vec::new(),
            },
        );
        store.limiter(|s| &mut s.limits);
        let instance = self
            .linker
            .instantiate(&mut store, &module.module)
            .map_err(|e| engine_error(ErrorKind::AllocationFailed, "instantiating guest", e))?;
        let memory = instance
            .get_memory(&mut store, abi::MEMORY)
            .ok_or_else(|| TransferError::abi("guest exports no memory"))?;
        let typed = |store: &mut Store<GuestState>, name: &str| -> Result<Func, TransferError> {
            instance
                .get_func(&mut *store, name)
                .ok_or_else(|| TransferError::abi(format!("missing export `{name}`")))
        };
        let sig_err = |e: wasmtime::Error| engine_error(ErrorKind::GuestAbiMissing, "export signature", e);
        let alloc_fn = typed(&mut store, abi::ALLOCATE_MEMORY)?.typed(&store).map_err(sig_err)?;
        let dealloc_fn = typed(&mut store, abi::DEALLOCATE_MEMORY)?.typed(&store).map_err(sig_err)?;
        let run_fn = typed(&mut store, abi::RUN)?.typed(&store).map_err(sig_err)?;
        let checksum_fn = typed(&mut store, abi::CHECKSUM)?.typed(&store).map_err(sig_err)?;
        let exports = module.module.exports().map(|e| e.name().to_string()).collect();
        Ok(GuestInstance {
            id: instance_id,
            workflow: None,
            store,
            instance,
            memory,
            exports,
            live: BTreeMap::new(),
            alloc_fn,
            dealloc_fn,
            run_fn,
            checksum_fn,
        })
    }
}

/// A live guest with its private store and the set of regions the host
/// allocated in it.
pub struct GuestInstance {
    id: u32,
    workflow: Option<WorkflowId>,
    store: Store<GuestState>,
    instance: Instance,
    memory: Memory,
    exports: BTreeSet<String>,
    /// Live `guest_alloc` regions: offset -> length.
    live: BTreeMap<u32, u64>,
    alloc_fn: TypedFunc<i32, i32>,
    dealloc_fn: TypedFunc<i32, ()>,
    run_fn: TypedFunc<(), ()>,
    checksum_fn: TypedFunc<(i32, i32), i64>,
}

impl std::fmt::Debug for GuestInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GuestInstance")
            .field("id", &self.id)
            .field("workflow", &self.workflow)
            .field("memory_size", &self.memory_size())
            .field("live", &self.live.len())
            .finish()
    }
}

impl GuestInstance {
    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn workflow(&self) -> Option<WorkflowId> {
        self.workflow
    }

    /// Tag the instance with the workflow it was registered under.
    pub fn set_workflow(&mut self, workflow: WorkflowId) {
        self.workflow = Some(workflow);
    }

    pub fn memory_size(&self) -> u64 {
        self.memory.data_size(&self.store) as u64
    }

    pub fn handle(&self) -> InstanceHandle {
        InstanceHandle {
            instance_id: self.id,
            memory_size: self.memory_size(),
            exports: self.exports.clone(),
        }
    }

    pub fn has_export(&self, name: &str) -> bool {
        self.exports.contains(name)
    }

    /// Regions currently allocated through [`GuestInstance::guest_alloc`].
    pub fn live_regions(&self) -> impl Iterator<Item = MemoryRegion> + '_ {
        self.live.iter().map(|(&o, &l)| MemoryRegion::new(o, l))
    }

    /// Reserve `len` bytes through the guest's `allocate_memory`.
    pub fn guest_alloc(&mut self, len: u64) -> Result<MemoryRegion, TransferError> {
        if len == 0 {
            return Err(TransferError::alloc("cannot allocate a zero-length region"));
        }
        let len32 = u32::try_from(len)
            .map_err(|_| TransferError::alloc(format!("{len} bytes exceeds 32-bit linear memory")))?;
        let offset = self
            .alloc_fn
            .call(&mut self.store, len32 as i32)
            .map_err(|e| TransferError::alloc(format!("allocate_memory trapped: {e:#}")))? as u32;
        if offset == 0 {
            return Err(TransferError::alloc(format!(
                "guest allocator refused {len} bytes (memory {} bytes)",
                self.memory_size()
            )));
        }
        let region = MemoryRegion::new(offset, len);
        region
            .check_bounds(self.memory_size())
            .map_err(|e| TransferError::alloc(format!("guest allocator returned bad region: {}", e.detail)))?;
        if offset < abi::RESERVED_PREFIX || self.live_regions().any(|r| r.overlaps(&region)) {
            return Err(TransferError::alloc(format!(
                "guest allocator returned overlapping region at {offset}"
            )));
        }
        self.live.insert(offset, len);
        Ok(region)
    }

    /// Release a region obtained from [`GuestInstance::guest_alloc`].
    /// Unknown or already released regions are refused without touching
    /// the guest.
    pub fn guest_dealloc(&mut self, region: MemoryRegion) -> Result<(), TransferError> {
        region.check_bounds(self.memory_size())?;
        if self.live.get(&region.offset) != Some(&region.length) {
            return Err(TransferError::bounds(format!(
                "region [{}, {}) is not a live allocation",
                region.offset,
                region.end()
            )));
        }
        self.dealloc_fn
            .call(&mut self.store, region.offset as i32)
            .map_err(|e| trap_error("deallocate_memory", e))?;
        self.live.remove(&region.offset);
        Ok(())
    }

    /// Borrow guest memory `[offset, offset + length)`.
    pub fn read_memory_host(&self, region: MemoryRegion) -> Result<&[u8], TransferError> {
        region.check_bounds(self.memory_size())?;
        Ok(&self.memory.data(&self.store)[region.as_range()])
    }

    fn check_registered(&self, region: MemoryRegion) -> Result<(), TransferError> {
        region.check_bounds(self.memory_size())?;
        let inside = self
            .live
            .range(..=region.offset)
            .next_back()
            .is_some_and(|(&o, &l)| MemoryRegion::new(o, l).contains(&region));
        if !inside {
            return Err(TransferError::bounds(format!(
                "write to [{}, {}) outside every registered region",
                region.offset,
                region.end()
            )));
        }
        Ok(())
    }

    /// Mutable view of a registered region, for streaming payloads
    /// straight into guest memory.
    pub fn region_mut(&mut self, region: MemoryRegion) -> Result<&mut [u8], TransferError> {
        self.check_registered(region)?;
        Ok(&mut self.memory.data_mut(&mut self.store)[region.as_range()])
    }

    /// Copy `data` into guest memory at `offset`, which must lie in a
    /// registered region.
    pub fn write_memory_host(&mut self, data: &[u8], offset: u32) -> Result<(), TransferError> {
        let region = MemoryRegion::new(offset, data.len() as u64);
        self.region_mut(region)?.copy_from_slice(data);
        Ok(())
    }

    /// Tell the guest where delivered data landed (mailbox words 8 and 12).
    pub fn write_mailbox(&mut self, region: MemoryRegion) -> Result<(), TransferError> {
        let len = u32::try_from(region.length).map_err(|_| TransferError::bounds("region longer than 4 GiB"))?;
        let mem = self.memory.data_mut(&mut self.store);
        mem[MAILBOX_OFFSET as usize..MAILBOX_OFFSET as usize + 4].copy_from_slice(&region.offset.to_le_bytes());
        mem[MAILBOX_LEN as usize..MAILBOX_LEN as usize + 4].copy_from_slice(&len.to_le_bytes());
        Ok(())
    }

    /// Call an export by name with scalar arguments.
    pub fn invoke(&mut self, export_name: &str, args: &[Scalar]) -> Result<Vec<Scalar>, TransferError> {
        let func = self
            .instance
            .get_func(&mut self.store, export_name)
            .ok_or_else(|| TransferError::abi(format!("no exported function `{export_name}`")))?;
        let ty = func.ty(&self.store);
        let params: Vec<ValType> = ty.params().collect();
        if params.len() != args.len() || !args.iter().zip(&params).all(|(a, p)| a.matches(p)) {
            return Err(TransferError::abi(format!(
                "`{export_name}` takes {params:?}, called with {args:?}"
            )));
        }
        let vals: Vec<Val> = args.iter().map(|a| a.to_val()).collect();
        let mut results: Vec<Val> = ty.results().map(|_| Val::I32(0)).collect();
        func.call(&mut self.store, &vals, &mut results)
            .map_err(|e| trap_error(export_name, e))?;
        results
            .into_iter()
            .map(|v| match v {
                Val::I32(x) => Ok(Scalar::I32(x)),
                Val::I64(x) => Ok(Scalar::I64(x)),
                other => Err(TransferError::abi(format!("`{export_name}` returned non-integer {other:?}"))),
            })
            .collect()
    }

    pub fn run(&mut self) -> Result<(), TransferError> {
        self.run_fn.call(&mut self.store, ()).map_err(|e| trap_error(abi::RUN, e))
    }

    /// FNV-1a computed inside the guest over `region`.
    pub fn guest_checksum(&mut self, region: MemoryRegion) -> Result<u64, TransferError> {
        region.check_bounds(self.memory_size())?;
        let len = u32::try_from(region.length).map_err(|_| TransferError::bounds("region longer than 4 GiB"))?;
        self.checksum_fn
            .call(&mut self.store, (region.offset as i32, len as i32))
            .map(|v| v as u64)
            .map_err(|e| trap_error(abi::CHECKSUM, e))
    }

    /// Checksum a consumer computed in its last `run()`, if it exports one.
    pub fn last_checksum(&mut self) -> Option<u64> {
        if !self.has_export(abi::LAST_CHECKSUM) {
            return None;
        }
        match self.invoke(abi::LAST_CHECKSUM, &[]).ok()?.as_slice() {
            [Scalar::I64(v)] => Some(*v as u64),
            _ => None,
        }
    }

    /// Configure a producer guest's next `run()`.
    pub fn set_params(&mut self, seed: u64, len: u32) -> Result<(), TransferError> {
        self.invoke(abi::SET_PARAMS, &[Scalar::I64(seed as i64), Scalar::I32(len as i32)])
            .map(|_| ())
    }

    /// Captures recorded since the previous call, in call order.
    pub fn take_captures(&mut self) -> Vec<HostCallCapture> {
        std::mem::take(&mut self.store.data_mut().captures)
    }
}
