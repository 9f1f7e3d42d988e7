//! Sidecar shim moving payloads between Wasm guests.
//!
//! Guests are hosted by [`host::WasmHost`]; [`runtime::Shim`] routes each
//! `send_to_host` capture over the user, kernel or network plane, and
//! [`baseline`] is the serialized path they are measured against.

pub mod abi_check;
pub mod baseline;
pub mod bench;
pub mod guests;
pub mod host;
pub mod runtime;
pub mod transport;
pub mod usage;
