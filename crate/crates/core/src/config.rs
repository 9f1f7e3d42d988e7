//! Line-oriented shim configuration.
//!
//! ```text
//! # comments run to end of line
//! runtime_dir  = /run/wasmhose
//! listen       = 127.0.0.1:7700
//! serve_kernel = true
//! hose         = on
//! chunk_size   = 262144
//! timeout_ms   = 30000
//! max_memory   = 268435456
//!
//! [function producer]
//! id       = 1
//! workflow = 000102030405060708090a0b0c0d0e0f
//! locality = same-vm
//! wasm     = guests/producer.wasm
//!
//! [function sink]
//! id       = 2
//! workflow = 000102030405060708090a0b0c0d0e0f
//! locality = remote
//! address  = 10.0.0.2:7700
//! ```
//!
//! Global keys come before the first `[function NAME]` section. A
//! `same-host` function may set `endpoint`; otherwise its socket path is
//! derived from `runtime_dir`. Unknown keys are errors.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::frame::WorkflowId;
use crate::registry::{kernel_endpoint_path, FunctionKey, FunctionRecord, Locality, PeerAddress, Registry};

pub const DEFAULT_RUNTIME_DIR: &str = "/tmp/wasmhose";
pub const DEFAULT_CHUNK_SIZE: usize = 256 * 1024;
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_MAX_MEMORY: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoseSetting {
    /// Use pipe splicing when the platform supports it.
    On,
    /// Always use buffered copies.
    Off,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShimConfig {
    pub runtime_dir: String,
    pub listen: Option<PeerAddress>,
    pub serve_kernel: bool,
    pub hose: HoseSetting,
    pub chunk_size: usize,
    pub timeout_ms: u64,
    pub max_memory: u64,
    pub registry: Registry,
}

impl ShimConfig {
    /// Hosted functions, kernel endpoints and listen address this shim owns.
    pub fn planned_instances(&self) -> usize {
        self.registry.hosted().count()
    }

    pub fn kernel_endpoint(&self, key: FunctionKey) -> String {
        kernel_endpoint_path(&self.runtime_dir, key)
    }
}

/// Parse or validation failure, naming the key or function at fault.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "`{}`: {}", self.key, self.message)
        } else {
            write!(f, "line {}: `{}`: {}", self.line, self.key, self.message)
        }
    }
}

impl core::error::Error for ConfigError {}

fn err(line: usize, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Default)]
struct FunctionBlock {
    name: String,
    line: usize,
    id: Option<u32>,
    workflow: Option<WorkflowId>,
    locality: Option<(usize, String)>,
    endpoint: Option<String>,
    address: Option<(usize, String)>,
    wasm: Option<String>,
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(err(line, key, format!("expected a boolean, got `{v}`"))),
    }
}

fn parse_num<T: core::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse()
        .map_err(|_| err(line, key, format!("expected an unsigned integer, got `{v}`")))
}

/// Parse config text. `runtime_dir_override`, when set, wins over the
/// `runtime_dir` key (the std crate feeds the environment variable here).
pub fn parse_config(text: &str, runtime_dir_override: Option<&str>) -> Result<ShimConfig, ConfigError> {
    let mut runtime_dir: Option<String> = None;
    let mut listen = None;
    let mut serve_kernel = false;
    let mut hose = HoseSetting::On;
    let mut chunk_size = DEFAULT_CHUNK_SIZE;
    let mut timeout_ms = DEFAULT_TIMEOUT_MS;
    let mut max_memory = DEFAULT_MAX_MEMORY;
    let mut blocks: Vec<FunctionBlock> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(section) = line.strip_prefix('[') {
            let inner = section
                .strip_suffix(']')
                .ok_or_else(|| err(line_no, line, "unterminated section header"))?
                .trim();
            let name = inner
                .strip_prefix("function")
                .map(str::trim)
                .filter(|n| !n.is_empty() && !n.contains(char::is_whitespace))
                .ok_or_else(|| err(line_no, inner, "expected `[function NAME]`"))?;
            blocks.push(FunctionBlock {
                name: name.to_string(),
                line: line_no,
                ..Default::default()
            });
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(line_no, line, "expected `key = value`"))?;
        if value.is_empty() {
            return Err(err(line_no, key, "empty value"));
        }
        match blocks.last_mut() {
            None => match key {
                "runtime_dir" => runtime_dir = Some(value.to_string()),
                "listen" => {
                    listen = Some(
                        PeerAddress::parse(value).ok_or_else(|| err(line_no, key, "expected host:port"))?,
                    )
                }
                "serve_kernel" => serve_kernel = parse_bool(line_no, key, value)?,
                "hose" => {
                    hose = if parse_bool(line_no, key, value)? {
                        HoseSetting::On
                    } else {
                        HoseSetting::Off
                    }
                }
                "chunk_size" => {
                    chunk_size = parse_num(line_no, key, value)?;
                    if chunk_size == 0 {
                        return Err(err(line_no, key, "must be positive"));
                    }
                }
                "timeout_ms" => timeout_ms = parse_num(line_no, key, value)?,
                "max_memory" => max_memory = parse_num(line_no, key, value)?,
                _ => return Err(err(line_no, key, "unknown global key")),
            },
            Some(block) => match key {
                "id" => block.id = Some(parse_num(line_no, key, value)?),
                "workflow" => {
                    block.workflow = Some(
                        value
                            .parse()
                            .map_err(|e: crate::frame::ParseWorkflowIdError| err(line_no, key, e.to_string()))?,
                    )
                }
                "locality" => block.locality = Some((line_no, value.to_string())),
                "endpoint" => block.endpoint = Some(value.to_string()),
                "address" => block.address = Some((line_no, value.to_string())),
                "wasm" => block.wasm = Some(value.to_string()),
                _ => return Err(err(line_no, key, format!("unknown key in function `{}`", block.name))),
            },
        }
    }

    let runtime_dir = runtime_dir_override
        .map(str::to_string)
        .or(runtime_dir)
        .unwrap_or_else(|| DEFAULT_RUNTIME_DIR.to_string());

    let mut records = Vec::with_capacity(blocks.len());
    for b in blocks {
        let what = |field: &str| format!("function `{}` is missing `{field}`", b.name);
        let id = b.id.ok_or_else(|| err(b.line, &b.name, what("id")))?;
        let workflow = b.workflow.ok_or_else(|| err(b.line, &b.name, what("workflow")))?;
        let (loc_line, loc) = b.locality.clone().ok_or_else(|| err(b.line, &b.name, what("locality")))?;
        let locality = match loc.as_str() {
            "same-vm" => {
                if b.wasm.is_none() {
                    return Err(err(b.line, &b.name, what("wasm")));
                }
                Locality::SameVm
            }
            "same-host" => Locality::SameHost {
                endpoint: b
                    .endpoint
                    .clone()
                    .unwrap_or_else(|| kernel_endpoint_path(&runtime_dir, FunctionKey::new(workflow, id))),
            },
            "remote" => {
                let (line, addr) = b.address.clone().ok_or_else(|| {
                    err(b.line, &b.name, format!("function `{}` has remote locality but no `address`", b.name))
                })?;
                Locality::Remote {
                    address: PeerAddress::parse(&addr).ok_or_else(|| err(line, "address", "expected host:port"))?,
                }
            }
            other => {
                return Err(err(
                    loc_line,
                    "locality",
                    format!("`{other}` is not one of same-vm, same-host, remote"),
                ))
            }
        };
        records.push(FunctionRecord {
            function_id: id,
            name: b.name,
            workflow_id: workflow,
            locality,
            wasm_path: b.wasm,
        });
    }
    let registry = Registry::new(records).map_err(|e| err(0, "function", e.detail))?;

    Ok(ShimConfig {
        runtime_dir,
        listen,
        serve_kernel,
        hose,
        chunk_size,
        timeout_ms,
        max_memory,
        registry,
    })
}
