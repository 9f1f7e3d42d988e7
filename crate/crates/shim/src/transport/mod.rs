//! The three transfer planes plus what they share.
//!
//! * [`user`]: same VM, one host-side copy between linear memories.
//! * [`kernel`]: same host, frames over a Unix stream socket.
//! * [`network`]: across nodes, frames over TCP with the payload spliced
//!   through a pipe ([`hose`]) when the platform allows.

pub mod hose;
pub mod kernel;
pub mod network;
pub mod sink;
pub mod user;
pub mod wire;

use std::time::Duration;

use wasmhose_core::config::{DEFAULT_CHUNK_SIZE, DEFAULT_TIMEOUT_MS};
use wasmhose_core::FrameHeader;

/// Tunables shared by senders and listeners.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransportOptions {
    /// Bound on any single blocking read or write, including the wait for an ACK.
    pub timeout: Duration,
    /// Chunk size for buffered payload reads and writes.
    pub chunk_size: usize,
    /// Allow the pipe-splicing path on the network plane.
    pub hose: bool,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions {
            timeout: Duration::from_millis(DEFAULT_TIMEOUT_MS),
            chunk_size: DEFAULT_CHUNK_SIZE,
            hose: true,
        }
    }
}

/// Result of a successful framed send.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SendOutcome {
    pub ack: FrameHeader,
    /// The payload went through the pipe-splicing path.
    pub zero_copy: bool,
}
