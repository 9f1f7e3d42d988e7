//! Pure building blocks for the wasmhose shim.
//!
//! Everything here is free of IO and runs under `no_std` with `alloc`:
//! the 40-byte wire frame, the FNV-1a integrity checksum, the
//! deterministic payload generator shared by guests and tests, the guest
//! ABI description, the function registry with its route selection, the
//! config text parser, the serialized baseline envelope and the metric
//! arithmetic used by the benchmark harness.
//!
//! The `std` feature only adds `std::error::Error`-based conveniences
//! downstream crates rely on; the logic is identical.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod abi;
pub mod checksum;
pub mod config;
pub mod envelope;
pub mod error;
pub mod frame;
pub mod metrics;
pub mod payload;
pub mod region;
pub mod registry;

pub use checksum::{checksum64, Fnv1a64};
pub use error::{ErrorKind, TransferError};
pub use frame::{FrameHeader, MsgType, WorkflowId, FLAG_ZERO_COPY, HEADER_LEN};
pub use region::MemoryRegion;
pub use registry::{FunctionKey, FunctionRecord, Locality, Mode, Registry, RouteDecision};
