//! Function registry and plane selection.
//!
//! The registry is built once from configuration and never mutated, so
//! route resolution is a pure function of `(source, target, override)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::TransferError;
use crate::frame::WorkflowId;

/// Transfer plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    User,
    Kernel,
    Network,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::User => "user",
            Mode::Kernel => "kernel",
            Mode::Network => "network",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "user" => Ok(Mode::User),
            "kernel" => Ok(Mode::Kernel),
            "network" => Ok(Mode::Network),
            other => Err(format!("unknown mode `{other}` (expected user, kernel or network)")),
        }
    }
}

/// `host:port` of a remote shim.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PeerAddress {
    pub host: String,
    pub port: u16,
}

impl PeerAddress {
    pub fn parse(s: &str) -> Option<PeerAddress> {
        let (host, port) = s.trim().rsplit_once(':')?;
        let host = host.trim_start_matches('[').trim_end_matches(']');
        if host.is_empty() {
            return None;
        }
        Some(PeerAddress {
            host: host.into(),
            port: port.parse().ok()?,
        })
    }
}

impl fmt::Display for PeerAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.host.contains(':') {
            write!(f, "[{}]:{}", self.host, self.port)
        } else {
            write!(f, "{}:{}", self.host, self.port)
        }
    }
}

/// Where a function runs relative to the shim holding this registry.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Locality {
    /// Instantiated inside this shim's VM.
    SameVm,
    /// Served by another shim on this host at a stream socket path.
    SameHost { endpoint: String },
    /// Served by a shim on another node.
    Remote { address: PeerAddress },
}

impl Locality {
    pub fn natural_mode(&self) -> Mode {
        match self {
            Locality::SameVm => Mode::User,
            Locality::SameHost { .. } => Mode::Kernel,
            Locality::Remote { .. } => Mode::Network,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FunctionKey {
    pub workflow: WorkflowId,
    pub id: u32,
}

impl FunctionKey {
    pub fn new(workflow: WorkflowId, id: u32) -> Self {
        FunctionKey { workflow, id }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FunctionRecord {
    pub function_id: u32,
    pub name: String,
    pub workflow_id: WorkflowId,
    pub locality: Locality,
    pub wasm_path: Option<String>,
}

impl FunctionRecord {
    pub fn key(&self) -> FunctionKey {
        FunctionKey::new(self.workflow_id, self.function_id)
    }

    pub fn is_hosted(&self) -> bool {
        self.locality == Locality::SameVm
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteDecision {
    pub mode: Mode,
    pub target: FunctionRecord,
}

/// Socket path for a function's kernel-plane endpoint:
/// `<runtime-dir>/<workflow-hex>/<function-id>.sock`.
pub fn kernel_endpoint_path(runtime_dir: &str, key: FunctionKey) -> String {
    format!("{}/{}/{}.sock", runtime_dir.trim_end_matches('/'), key.workflow.to_hex(), key.id)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    records: Vec<FunctionRecord>,
}

impl Registry {
    /// Build a registry, rejecting duplicate ids within one workflow and
    /// duplicate names.
    pub fn new(records: Vec<FunctionRecord>) -> Result<Self, TransferError> {
        for (i, r) in records.iter().enumerate() {
            for other in &records[..i] {
                if other.key() == r.key() {
                    return Err(TransferError::registry(format!(
                        "function id {} registered twice in workflow {}",
                        r.function_id, r.workflow_id
                    )));
                }
                if other.name == r.name {
                    return Err(TransferError::registry(format!("function name `{}` registered twice", r.name)));
                }
            }
        }
        Ok(Registry { records })
    }

    pub fn records(&self) -> &[FunctionRecord] {
        &self.records
    }

    pub fn get(&self, key: FunctionKey) -> Option<&FunctionRecord> {
        self.records.iter().find(|r| r.key() == key)
    }

    pub fn by_name(&self, name: &str) -> Option<&FunctionRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    /// Functions this shim instantiates itself.
    pub fn hosted(&self) -> impl Iterator<Item = &FunctionRecord> {
        self.records.iter().filter(|r| r.is_hosted())
    }

    pub fn lookup(&self, key: FunctionKey) -> Result<&FunctionRecord, TransferError> {
        self.get(key).ok_or_else(|| {
            TransferError::registry(format!("function {} not registered in workflow {}", key.id, key.workflow))
        })
    }

    /// Plane for `source -> target` chosen from the target's locality.
    pub fn resolve_route(&self, source: FunctionKey, target: FunctionKey) -> Result<RouteDecision, TransferError> {
        self.resolve_route_with(source, target, None)
    }

    /// Like [`Registry::resolve_route`], with an optional forced plane for
    /// benchmarking fixed placements.
    pub fn resolve_route_with(
        &self,
        source: FunctionKey,
        target: FunctionKey,
        force: Option<Mode>,
    ) -> Result<RouteDecision, TransferError> {
        if source.workflow != target.workflow {
            return Err(TransferError::registry(format!(
                "cross-workflow route {} -> {} refused",
                source.workflow, target.workflow
            )));
        }
        if source.id == target.id {
            return Err(TransferError::registry(format!("function {} cannot route to itself", source.id)));
        }
        self.lookup(source)?;
        let target = self.lookup(target)?;
        let mode = force.unwrap_or_else(|| target.locality.natural_mode());
        Ok(RouteDecision {
            mode,
            target: target.clone(),
        })
    }
}
