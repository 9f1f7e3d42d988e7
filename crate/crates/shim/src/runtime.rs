//! The sidecar: loads a configuration, hosts its guests, serves the
//! kernel and network planes, and routes captures to their targets.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use log::info;
use wasmhose_core::config::{parse_config, ConfigError, HoseSetting, ShimConfig};
use wasmhose_core::metrics::{ReportMode, TransferReport};
use wasmhose_core::registry::PeerAddress;
use wasmhose_core::{ErrorKind, FrameHeader, FunctionKey, Locality, Mode, TransferError};

use crate::guests::load_wasm;
use crate::host::{HostCallCapture, WasmHost};
use crate::transport::hose::hose_supported;
use crate::transport::kernel::{serve_kernel, KernelClient, KernelListener, LocalEndpoint};
use crate::transport::network::{serve_network, NetworkClient, NetworkListener};
use crate::transport::sink::{self, shared, SharedInstance, Sink};
use crate::transport::user::{deliver_local, LocalRoute};
use crate::transport::TransportOptions;
use crate::usage::Usage;

/// Environment variable overriding `runtime_dir`.
pub const RUNTIME_DIR_ENV: &str = "WASMHOSE_RUNTIME_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_TRANSPORT: i32 = 2;
pub const EXIT_ABI: i32 = 3;

/// Exit code for a transfer error surfacing from the runtime.
pub fn exit_code(e: &TransferError) -> i32 {
    match e.kind {
        ErrorKind::GuestAbiMissing => EXIT_ABI,
        _ => EXIT_TRANSPORT,
    }
}

#[derive(Debug)]
pub enum LoadError {
    Io(PathBuf, std::io::Error),
    Config(PathBuf, ConfigError),
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            LoadError::Config(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl std::error::Error for LoadError {}

/// Read and validate a config file. Relative `wasm` paths are resolved
/// against the file's directory and [`RUNTIME_DIR_ENV`] wins over the
/// file's `runtime_dir`.
pub fn load_config(path: &Path) -> Result<ShimConfig, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io(path.to_owned(), e))?;
    let env_dir = std::env::var(RUNTIME_DIR_ENV).ok().filter(|s| !s.is_empty());
    let mut config = parse_config(&text, env_dir.as_deref()).map_err(|e| LoadError::Config(path.to_owned(), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let records = config
        .registry
        .records()
        .iter()
        .cloned()
        .map(|mut r| {
            if let Some(w) = &r.wasm_path {
                if !w.starts_with("builtin:") && Path::new(w).is_relative() {
                    r.wasm_path = Some(base.join(w).to_string_lossy().into_owned());
                }
            }
            r
        })
        .collect();
    config.registry = wasmhose_core::Registry::new(records)
        .map_err(|e| LoadError::Config(path.to_owned(), ConfigError {
            line: 0,
            key: "function".into(),
            message: e.detail,
        }))?;
    Ok(config)
}

/// A transport error tagged with the plane it happened on, if one was chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchError {
    pub mode: Option<Mode>,
    pub error: TransferError,
}

impl fmt::Display for DispatchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            Some(m) => write!(f, "[{m}] {}", self.error),
            None => write!(f, "[unrouted] {}", self.error),
        }
    }
}

impl std::error::Error for DispatchError {}

/// A delivery that completed.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub mode: Mode,
    pub zero_copy: bool,
    pub report: TransferReport,
}

/// Where a non-local send goes.
enum Remote {
    Kernel(PathBuf),
    Network(PeerAddress),
}

type ConnKey = (FunctionKey, FunctionKey);

pub struct Shim {
    config: ShimConfig,
    host: WasmHost,
    opts: TransportOptions,
    instances: BTreeMap<FunctionKey, SharedInstance>,
    kernel_listeners: BTreeMap<FunctionKey, KernelListener>,
    network_listener: Option<NetworkListener>,
    kernel_clients: Mutex<BTreeMap<ConnKey, KernelClient>>,
    network_clients: Mutex<BTreeMap<ConnKey, NetworkClient>>,
    reports: Mutex<Vec<TransferReport>>,
}

impl Shim {
    /// Instantiate every hosted function and, if `serve` is set, start the
    /// listeners the config asks for.
    pub fn start(config: ShimConfig, serve: bool) -> Result<Shim, TransferError> {
        let host = WasmHost::new()?;
        let opts = TransportOptions {
            timeout: std::time::Duration::from_millis(config.timeout_ms),
            chunk_size: config.chunk_size,
            hose: config.hose == HoseSetting::On && hose_supported(),
        };
        let mut modules = BTreeMap::new();
        let mut instances = BTreeMap::new();
        for record in config.registry.hosted() {
            let path = record
                .wasm_path
                .as_deref()
                .ok_or_else(|| TransferError::registry(format!("hosted function {} has no wasm", record.name)))?;
            if !modules.contains_key(path) {
                let bytes = load_wasm(path)?;
                let module = host
                    .compile(&bytes)
                    .map_err(|e| TransferError::new(e.kind, format!("{path}: {}", e.detail)))?;
                modules.insert(path.to_owned(), module);
            }
            let mut instance = host.instantiate_module(&modules[path], config.max_memory)?;
            instance.set_workflow(record.workflow_id);
            info!("hosting {} as instance {}", record.name, instance.id());
            instances.insert(record.key(), shared(instance));
        }
        let mut shim = Shim {
            config,
            host,
            opts,
            instances,
            kernel_listeners: BTreeMap::new(),
            network_listener: None,
            kernel_clients: Mutex::default(),
            network_clients: Mutex::default(),
            reports: Mutex::default(),
        };
        if serve {
            shim.start_listeners()?;
        }
        Ok(shim)
    }

    fn start_listeners(&mut self) -> Result<(), TransferError> {
        if self.config.serve_kernel {
            for (key, instance) in &self.instances {
                let endpoint = LocalEndpoint::new(self.config.kernel_endpoint(*key), key.id);
                let listener = serve_kernel(&endpoint, Sink::single(*key, instance.clone()), self.opts)?;
                info!("kernel plane for {} on {}", key.id, endpoint.path.display());
                self.kernel_listeners.insert(*key, listener);
            }
        }
        if let Some(addr) = &self.config.listen {
            let listener = serve_network(&addr.to_string(), self.sink(), self.opts)?;
            info!("network plane on {}", listener.local_addr());
            self.network_listener = Some(listener);
        }
        Ok(())
    }

    pub fn config(&self) -> &ShimConfig {
        &self.config
    }

    pub fn host(&self) -> &WasmHost {
        &self.host
    }

    pub fn options(&self) -> TransportOptions {
        self.opts
    }

    /// All hosted guests, as a listener would see them.
    pub fn sink(&self) -> Sink {
        Sink::new(self.instances.clone())
    }

    pub fn instance(&self, key: FunctionKey) -> Option<&SharedInstance> {
        self.instances.get(&key)
    }

    pub fn network_address(&self) -> Option<PeerAddress> {
        self.network_listener.as_ref().map(NetworkListener::peer_address)
    }

    pub fn kernel_endpoints(&self) -> impl Iterator<Item = &Path> {
        self.kernel_listeners.values().map(KernelListener::path)
    }

    /// Run a hosted guest's `run()` and return the captures it produced.
    pub fn run_guest(&self, key: FunctionKey) -> Result<Vec<HostCallCapture>, TransferError> {
        let instance = self.hosted(key)?;
        let mut guest = sink::write(instance);
        guest.take_captures();
        guest.run()?;
        Ok(guest.take_captures())
    }

    fn hosted(&self, key: FunctionKey) -> Result<&SharedInstance, TransferError> {
        self.instances
            .get(&key)
            .ok_or_else(|| TransferError::registry(format!("function {} is not hosted by this shim", key.id)))
    }

    /// Reports recorded so far, oldest first.
    pub fn reports(&self) -> Vec<TransferReport> {
        self.reports.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn take_reports(&self) -> Vec<TransferReport> {
        std::mem::take(&mut *self.reports.lock().unwrap_or_else(|p| p.into_inner()))
    }

    fn record(&self, report: TransferReport) {
        self.reports.lock().unwrap_or_else(|p| p.into_inner()).push(report);
    }

    /// Deliver `capture` from `source` to `target` over the plane the
    /// registry picks, or over `force` when given. Exactly one report is
    /// recorded per call, whatever the outcome.
    pub fn dispatch(
        &self,
        source: FunctionKey,
        target: FunctionKey,
        capture: &HostCallCapture,
        force: Option<Mode>,
    ) -> Result<Delivery, DispatchError> {
        self.dispatch_trial(source, target, capture, force, 0)
    }

    pub fn dispatch_trial(
        &self,
        source: FunctionKey,
        target: FunctionKey,
        capture: &HostCallCapture,
        force: Option<Mode>,
        trial: u32,
    ) -> Result<Delivery, DispatchError> {
        let usage0 = Usage::now();
        let t0 = Instant::now();
        let mut report = TransferReport::new(report_mode(force.unwrap_or(Mode::User), false), capture.region.length, trial);
        let result = self.dispatch_inner(source, target, capture, force, t0, &mut report);
        let end = match &result {
            Ok((_, _, end)) => *end,
            Err(_) => Instant::now(),
        };
        report.finish((end - t0).as_secs_f64());
        let usage1 = Usage::now();
        (report.cpu_user_s, report.cpu_kernel_s) = usage1.cpu_since(&usage0);
        report.rss_peak_bytes = usage1.max_rss_bytes;
        report.ok = result.is_ok();
        self.record(report.clone());
        result.map(|(mode, zero_copy, _)| Delivery { mode, zero_copy, report })
    }

    fn dispatch_inner(
        &self,
        source: FunctionKey,
        target: FunctionKey,
        capture: &HostCallCapture,
        force: Option<Mode>,
        t0: Instant,
        report: &mut TransferReport,
    ) -> Result<(Mode, bool, Instant), DispatchError> {
        let untagged = |error| DispatchError { mode: None, error };
        let route = self
            .config
            .registry
            .resolve_route_with(source, target, force)
            .map_err(untagged)?;
        let mode = route.mode;
        report.mode = report_mode(mode, false);
        let tag = |error| DispatchError { mode: Some(mode), error };
        let src = self.hosted(source).map_err(tag)?;

        match mode {
            Mode::User => {
                let dst = self.hosted(target).map_err(tag)?;
                let (src_guard, mut dst_guard);
                // Lock in key order so opposite-direction dispatches cannot deadlock.
                if source < target {
                    src_guard = sink::read(src);
                    dst_guard = sink::write(dst);
                } else {
                    dst_guard = sink::write(dst);
                    src_guard = sink::read(src);
                }
                let local = LocalRoute {
                    source: src_guard.id(),
                    target: dst_guard.id(),
                    workflow_id: source.workflow,
                };
                let t1 = Instant::now();
                report.t_locate = (t1 - t0).as_secs_f64();
                let region = deliver_local(&local, capture, &src_guard, &mut dst_guard).map_err(tag)?;
                report.delivered_checksum = dst_guard.last_checksum();
                dst_guard.guest_dealloc(region).map_err(tag)?;
                let end = Instant::now();
                report.t_transfer = (end - t1).as_secs_f64();
                Ok((mode, false, end))
            }
            Mode::Kernel | Mode::Network => {
                let remote = self.remote_for(mode, &route.target.locality, target).map_err(tag)?;
                let src_guard = sink::read(src);
                if capture.instance_id != src_guard.id() {
                    return Err(tag(TransferError::registry("capture does not come from the source instance")));
                }
                let header = FrameHeader::data(source.workflow, source.id, target.id, capture.region.length);
                let t1 = Instant::now();
                report.t_locate = (t1 - t0).as_secs_f64();
                let outcome = match remote {
                    Remote::Kernel(path) => self.send_kernel_cached((source, target), &path, header, &src_guard, capture),
                    Remote::Network(peer) => self.send_network_cached((source, target), &peer, header, &src_guard, capture),
                }
                .map_err(tag)?;
                drop(src_guard);
                if let Some(dst) = self.instances.get(&target) {
                    report.delivered_checksum = sink::write(dst).last_checksum();
                }
                report.mode = report_mode(mode, outcome.zero_copy);
                let end = Instant::now();
                report.t_transfer = (end - t1).as_secs_f64();
                Ok((mode, outcome.zero_copy, end))
            }
        }
    }

    fn remote_for(&self, mode: Mode, locality: &Locality, target: FunctionKey) -> Result<Remote, TransferError> {
        match (mode, locality) {
            (Mode::Kernel, Locality::SameHost { endpoint }) => Ok(Remote::Kernel(PathBuf::from(endpoint))),
            (Mode::Kernel, Locality::SameVm) => self
                .kernel_listeners
                .get(&target)
                .map(|l| Remote::Kernel(l.path().to_owned()))
                .ok_or_else(|| TransferError::unreachable(format!("function {} has no kernel endpoint here", target.id))),
            (Mode::Network, Locality::Remote { address }) => Ok(Remote::Network(address.clone())),
            (Mode::Network, Locality::SameVm) => self
                .network_address()
                .map(Remote::Network)
                .ok_or_else(|| TransferError::unreachable("this shim has no network listener")),
            (mode, _) => Err(TransferError::unreachable(format!(
                "function {} cannot be reached over the {mode} plane",
                target.id
            ))),
        }
    }

    fn send_kernel_cached(
        &self,
        key: ConnKey,
        path: &Path,
        header: FrameHeader,
        source: &crate::host::GuestInstance,
        capture: &HostCallCapture,
    ) -> Result<crate::transport::SendOutcome, TransferError> {
        let cached = self.kernel_clients.lock().unwrap_or_else(|p| p.into_inner()).remove(&key);
        let mut client = match cached {
            Some(c) => c,
            None => KernelClient::connect(path, self.opts)?,
        };
        let outcome = client.send(header, source, capture.region)?;
        self.kernel_clients.lock().unwrap_or_else(|p| p.into_inner()).insert(key, client);
        Ok(outcome)
    }

    fn send_network_cached(
        &self,
        key: ConnKey,
        peer: &PeerAddress,
        header: FrameHeader,
        source: &crate::host::GuestInstance,
        capture: &HostCallCapture,
    ) -> Result<crate::transport::SendOutcome, TransferError> {
        let cached = self.network_clients.lock().unwrap_or_else(|p| p.into_inner()).remove(&key);
        let mut client = match cached {
            Some(c) => c,
            None => NetworkClient::connect(peer, self.opts)?,
        };
        let outcome = client.send(header, source, capture.region)?;
        self.network_clients.lock().unwrap_or_else(|p| p.into_inner()).insert(key, client);
        Ok(outcome)
    }

    /// Override the hose setting, e.g. to force the buffered path.
    pub fn set_hose(&mut self, enabled: bool) {
        self.opts.hose = enabled && hose_supported();
        self.network_clients.lock().unwrap_or_else(|p| p.into_inner()).clear();
    }

    /// Drop cached connections, stop listeners and release instances.
    pub fn shutdown(mut self) {
        self.close();
    }

    fn close(&mut self) {
        self.kernel_clients.lock().unwrap_or_else(|p| p.into_inner()).clear();
        self.network_clients.lock().unwrap_or_else(|p| p.into_inner()).clear();
        if let Some(mut l) = self.network_listener.take() {
            l.shutdown();
        }
        for (_, mut l) in std::mem::take(&mut self.kernel_listeners) {
            l.shutdown();
        }
        self.instances.clear();
    }
}

impl Drop for Shim {
    fn drop(&mut self) {
        self.close();
    }
}

fn report_mode(mode: Mode, zero_copy: bool) -> ReportMode {
    match mode {
        Mode::User => ReportMode::User,
        Mode::Kernel => ReportMode::Kernel,
        Mode::Network if zero_copy => ReportMode::Network,
        Mode::Network => ReportMode::NetworkFallback,
    }
}

/// Block SIGINT and SIGTERM on the calling thread. Call before spawning
/// any thread so they all inherit the mask and the signal is left for
/// [`wait_for_termination`].
pub fn block_termination_signals() -> libc::sigset_t {
    // SAFETY: the set is initialised by sigemptyset before use and only
    // passed to signal-mask calls.
    unsafe {
        let mut set: libc::sigset_t = std::mem::zeroed();
        libc::sigemptyset(&mut set);
        libc::sigaddset(&mut set, libc::SIGINT);
        libc::sigaddset(&mut set, libc::SIGTERM);
        libc::pthread_sigmask(libc::SIG_BLOCK, &set, std::ptr::null_mut());
        set
    }
}

/// Wait for one of the signals in `set`. Returns its number.
pub fn wait_for_termination(set: &libc::sigset_t) -> i32 {
    let mut sig = 0;
    // SAFETY: `set` was initialised by block_termination_signals.
    unsafe { libc::sigwait(set, &mut sig) };
    sig
}

/// Start a shim with listeners and serve until SIGINT or SIGTERM.
pub fn run_shim(config: ShimConfig) -> Result<(), TransferError> {
    let set = block_termination_signals();
    let shim = Shim::start(config, true)?;
    if let Some(addr) = shim.network_address() {
        println!("network {addr}");
    }
    for path in shim.kernel_endpoints() {
        println!("kernel {}", path.display());
    }
    let sig = wait_for_termination(&set);
    info!("signal {sig}, shutting down");
    shim.shutdown();
    Ok(())
}
