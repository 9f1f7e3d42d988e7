//! Experiment driver: payload sweeps and fanout over every plane plus the
//! serialized baseline, with per-trial integrity checks and CSV output.

use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use wasmhose_core::config::{parse_config, ShimConfig};
use wasmhose_core::metrics::{summarize, ReportMode, TransferReport, SUMMARY_COLUMNS};
use wasmhose_core::payload::generate;
use wasmhose_core::{checksum64, FunctionKey, Mode, TransferError, WorkflowId};

use crate::baseline::{baseline_transfer, serve_baseline, BaselineClient, BaselineListener};
use crate::host::HostCallCapture;
use crate::runtime::Shim;
use crate::transport::sink;
use crate::usage::Usage;

/// Exact CSV header of a report file.
pub const CSV_COLUMNS: [&str; 12] = [
    "mode",
    "payload_bytes",
    "trial",
    "t_locate",
    "t_serialize",
    "t_transfer",
    "t_deserialize",
    "t_total",
    "throughput_rps",
    "cpu_user_s",
    "cpu_kernel_s",
    "rss_peak_bytes",
];

/// Comment line at the top of every summary file.
pub const CPU_NOTE: &str =
    "# cpu_user_s and cpu_kernel_s are whole-process getrusage deltas over each trial, not cgroup counters";

pub const DEFAULT_SIZES: [u64; 5] = [1024, 64 * 1024, 1 << 20, 10 << 20, 100 << 20];
pub const DEFAULT_TRIALS: u32 = 10;
pub const DEFAULT_WARMUP: u32 = 2;
pub const DEFAULT_SEED: u64 = 42;

/// The workflow the generated bench configs use.
pub const BENCH_WORKFLOW: WorkflowId = WorkflowId([
    0xbe, 0x4c, 0x00, 0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0a, 0x0b, 0x0c, 0x0d,
]);
pub const PRODUCER_ID: u32 = 1;
/// Consumers get ids from here upward.
pub const FIRST_CONSUMER_ID: u32 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub modes: Vec<ReportMode>,
    pub sizes: Vec<u64>,
    pub trials: u32,
    pub warmup: u32,
    pub fanout_degrees: Vec<usize>,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            modes: vec![
                ReportMode::User,
                ReportMode::Kernel,
                ReportMode::Network,
                ReportMode::Baseline,
            ],
            sizes: DEFAULT_SIZES.to_vec(),
            trials: DEFAULT_TRIALS,
            warmup: DEFAULT_WARMUP,
            fanout_degrees: vec![1, 10, 50],
            seed: DEFAULT_SEED,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.trials == 0 {
            return Err(BenchError::Spec("trials must be at least 1".into()));
        }
        if self.sizes.windows(2).any(|w| w[0] > w[1]) {
            return Err(BenchError::Spec("payload sizes must be ascending".into()));
        }
        if self.sizes.iter().any(|&s| s == 0 || s > u32::MAX as u64) {
            return Err(BenchError::Spec("payload sizes must be between 1 byte and 4 GiB".into()));
        }
        if self.fanout_degrees.contains(&0) {
            return Err(BenchError::Spec("fanout degree must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum BenchError {
    Spec(String),
    Transfer {
        mode: ReportMode,
        payload_bytes: u64,
        trial: u32,
        error: TransferError,
    },
    ChecksumMismatch {
        mode: ReportMode,
        payload_bytes: u64,
        trial: u32,
        expected: u64,
        got: Option<u64>,
    },
    Io(PathBuf, std::io::Error),
    Csv(PathBuf, csv::Error),
}

impl fmt::Display for BenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchError::Spec(m) => write!(f, "bad sweep: {m}"),
            BenchError::Transfer {
                mode,
                payload_bytes,
                trial,
                error,
            } => write!(f, "{mode} {payload_bytes} B trial {trial}: {error}"),
            BenchError::ChecksumMismatch {
                mode,
                payload_bytes,
                trial,
                expected,
                got,
            } => write!(
                f,
                "{mode} {payload_bytes} B trial {trial}: checksum {got:x?} != expected {expected:016x}"
            ),
            BenchError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            BenchError::Csv(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl std::error::Error for BenchError {}

/// Config text for a bench shim: one producer and `consumers` consumers,
/// all in one VM, with kernel endpoints and a loopback listener so every
/// plane can be forced between them.
pub fn bench_config_text(consumers: usize, max_memory: u64) -> String {
    let mut text = format!(
        "serve_kernel = true\nlisten = 127.0.0.1:0\nmax_memory = {max_memory}\n\n\
         [function producer]\nid = {PRODUCER_ID}\nworkflow = {BENCH_WORKFLOW}\nlocality = same-vm\nwasm = builtin:producer\n"
    );
    for i in 0..consumers {
        text.push_str(&format!(
            "\n[function consumer{i}]\nid = {}\nworkflow = {BENCH_WORKFLOW}\nlocality = same-vm\nwasm = builtin:consumer\n",
            FIRST_CONSUMER_ID + i as u32
        ));
    }
    text
}

pub fn bench_config(consumers: usize, max_memory: u64, runtime_dir: &Path) -> ShimConfig {
    parse_config(&bench_config_text(consumers, max_memory), Some(&runtime_dir.to_string_lossy()))
        .expect("generated bench config is valid")
}

/// Guest memory limit that fits the largest payload in both producer and
/// consumer, with headroom for the allocator.
pub fn memory_for(max_payload: u64) -> u64 {
    let pages = max_payload.div_ceil(65536) + 16;
    (pages * 65536).max(wasmhose_core::config::DEFAULT_MAX_MEMORY)
}

/// A shim wired for benchmarking plus the baseline endpoint.
pub struct Bench {
    pub shim: Shim,
    pub source: FunctionKey,
    pub targets: Vec<FunctionKey>,
    baseline: BaselineListener,
    baseline_addr: SocketAddr,
}

impl Bench {
    pub fn new(shim: Shim, source: FunctionKey, targets: Vec<FunctionKey>) -> Result<Bench, TransferError> {
        let baseline = serve_baseline("127.0.0.1:0", source.workflow, shim.sink(), shim.options())?;
        let baseline_addr = baseline.local_addr();
        Ok(Bench {
            shim,
            source,
            targets,
            baseline,
            baseline_addr,
        })
    }

    /// A bench over a generated config in `runtime_dir`.
    pub fn generated(consumers: usize, max_payload: u64, runtime_dir: &Path) -> Result<Bench, TransferError> {
        let config = bench_config(consumers, memory_for(max_payload), runtime_dir);
        let shim = Shim::start(config, true)?;
        let targets = (0..consumers)
            .map(|i| FunctionKey::new(BENCH_WORKFLOW, FIRST_CONSUMER_ID + i as u32))
            .collect();
        Bench::new(shim, FunctionKey::new(BENCH_WORKFLOW, PRODUCER_ID), targets)
    }

    /// Have the producer generate `len` bytes from `seed` and return its capture.
    pub fn produce(&self, seed: u64, len: u64) -> Result<HostCallCapture, TransferError> {
        let instance = self
            .shim
            .instance(self.source)
            .ok_or_else(|| TransferError::registry("producer is not hosted"))?;
        let mut guest = sink::write(instance);
        guest.take_captures();
        guest.set_params(seed, len as u32)?;
        guest.run()?;
        let captures = guest.take_captures();
        match captures.as_slice() {
            [one] => Ok(*one),
            other => Err(TransferError::malformed(format!("producer made {} sends, expected 1", other.len()))),
        }
    }

    /// One measured transfer of `capture` to `target`.
    pub fn transfer(
        &mut self,
        mode: ReportMode,
        target: FunctionKey,
        capture: &HostCallCapture,
        trial: u32,
    ) -> Result<TransferReport, TransferError> {
        match mode {
            ReportMode::Baseline => {
                let mut client = BaselineClient::connect(self.baseline_addr, self.shim.options())?;
                let instance = self
                    .shim
                    .instance(self.source)
                    .ok_or_else(|| TransferError::registry("producer is not hosted"))?;
                let guest = sink::read(instance);
                let u0 = Usage::now();
                let mut report =
                    baseline_transfer(&mut client, &self.baseline, self.source.id, target.id, &guest, capture.region, trial)?;
                let u1 = Usage::now();
                (report.cpu_user_s, report.cpu_kernel_s) = u1.cpu_since(&u0);
                report.rss_peak_bytes = u1.max_rss_bytes;
                Ok(report)
            }
            other => {
                let plane = other.plane().unwrap_or(Mode::User);
                let delivery = self
                    .shim
                    .dispatch_trial(self.source, target, capture, Some(plane), trial)
                    .map_err(|e| e.error)?;
                Ok(delivery.report)
            }
        }
    }

    /// Put the network plane on the path `mode` asks for.
    fn select_path(&mut self, mode: ReportMode) {
        match mode {
            ReportMode::Network => self.shim.set_hose(true),
            ReportMode::NetworkFallback => self.shim.set_hose(false),
            _ => {}
        }
    }
}

fn verify(report: &TransferReport, expected: u64) -> Result<(), BenchError> {
    if report.delivered_checksum == Some(expected) {
        Ok(())
    } else {
        Err(BenchError::ChecksumMismatch {
            mode: report.mode,
            payload_bytes: report.payload_bytes,
            trial: report.trial,
            expected,
            got: report.delivered_checksum,
        })
    }
}

/// Producer to first consumer, `trials` times per (mode, size) after
/// `warmup` discarded trials. Every trial's delivery is checked against
/// the host-computed checksum; a mismatch aborts the sweep.
pub fn run_sequence(bench: &mut Bench, spec: &SweepSpec) -> Result<Vec<TransferReport>, BenchError> {
    spec.validate()?;
    let target = *bench
        .targets
        .first()
        .ok_or_else(|| BenchError::Spec("no consumer configured".into()))?;
    let mut reports = Vec::new();
    for &size in &spec.sizes {
        let expected = checksum64(&generate(spec.seed, size as usize));
        for &mode in &spec.modes {
            bench.select_path(mode);
            let fail = |trial, error| BenchError::Transfer {
                mode,
                payload_bytes: size,
                trial,
                error,
            };
            let capture = bench.produce(spec.seed, size).map_err(|e| fail(0, e))?;
            for w in 0..spec.warmup {
                let r = bench.transfer(mode, target, &capture, w).map_err(|e| fail(w, e))?;
                verify(&r, expected)?;
            }
            for trial in 0..spec.trials {
                let r = bench.transfer(mode, target, &capture, trial).map_err(|e| fail(trial, e))?;
                verify(&r, expected)?;
                reports.push(r);
            }
            bench.shim.take_reports();
        }
    }
    Ok(reports)
}

/// Outcome of one fanout trial.
#[derive(Debug, Clone, PartialEq)]
pub struct FanoutTrial {
    pub degree: usize,
    pub trial: u32,
    pub reports: Vec<TransferReport>,
    /// Wall time from first dispatch to last completion.
    pub window: f64,
}

impl FanoutTrial {
    /// Mean per-target latency.
    pub fn per_transfer_latency(&self) -> f64 {
        wasmhose_core::metrics::mean(&self.reports.iter().map(|r| r.t_total).collect::<Vec<_>>())
    }

    pub fn throughput_rps(&self) -> f64 {
        wasmhose_core::metrics::throughput_rps(self.reports.len() as u64, self.window)
    }
}

/// Dispatch one capture to the first `degree` consumers concurrently,
/// using at most as many worker threads as there are cores.
pub fn fanout_once(
    bench: &Bench,
    mode: Mode,
    degree: usize,
    capture: &HostCallCapture,
    expected: u64,
    trial: u32,
) -> Result<FanoutTrial, BenchError> {
    let targets = &bench.targets[..degree.min(bench.targets.len())];
    if targets.len() < degree {
        return Err(BenchError::Spec(format!("degree {degree} needs {degree} consumers, have {}", bench.targets.len())));
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(degree);
    let shim = &bench.shim;
    let source = bench.source;
    let start = Instant::now();
    let results: Vec<Result<TransferReport, BenchError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    targets
                        .iter()
                        .skip(w)
                        .step_by(workers)
                        .map(|&t| {
                            shim.dispatch_trial(source, t, capture, Some(mode), trial)
                                .map(|d| d.report)
                                .map_err(|e| BenchError::Transfer {
                                    mode: plane_report_mode(mode),
                                    payload_bytes: capture.region.length,
                                    trial,
                                    error: e.error,
                                })
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("fanout worker panicked")).collect()
    });
    let window = start.elapsed().as_secs_f64();
    let reports = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    for r in &reports {
        verify(r, expected)?;
    }
    shim.take_reports();
    Ok(FanoutTrial {
        degree,
        trial,
        reports,
        window,
    })
}

fn plane_report_mode(mode: Mode) -> ReportMode {
    match mode {
        Mode::User => ReportMode::User,
        Mode::Kernel => ReportMode::Kernel,
        Mode::Network => ReportMode::Network,
    }
}

/// For each degree in the spec and each size, `trials` fanout trials
/// after `warmup` discarded ones.
pub fn run_fanout(bench: &Bench, spec: &SweepSpec, mode: Mode) -> Result<Vec<FanoutTrial>, BenchError> {
    spec.validate()?;
    let mut out = Vec::new();
    for &size in &spec.sizes {
        let expected = checksum64(&generate(spec.seed, size as usize));
        let capture = bench.produce(spec.seed, size).map_err(|error| BenchError::Transfer {
            mode: plane_report_mode(mode),
            payload_bytes: size,
            trial: 0,
            error,
        })?;
        for &degree in &spec.fanout_degrees {
            for w in 0..spec.warmup {
                fanout_once(bench, mode, degree, &capture, expected, w)?;
            }
            for trial in 0..spec.trials {
                out.push(fanout_once(bench, mode, degree, &capture, expected, trial)?);
            }
        }
    }
    Ok(out)
}

/// Path of the summary file that accompanies `csv_path`.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
    csv_path.with_file_name(format!("{stem}.summary.csv"))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> BenchError + '_ {
    move |e| BenchError::Csv(path.to_owned(), e)
}

/// Write one row per report to `path` and per-(mode, size) mean and
/// standard deviation to [`summary_path`]. Returns the summary path.
pub fn emit_report(reports: &[TransferReport], path: &Path) -> Result<PathBuf, BenchError> {
    if reports.is_empty() {
        return Err(BenchError::Spec("no reports to write".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(CSV_COLUMNS).map_err(csv_err(path))?;
    for r in reports {
        w.write_record([
            r.mode.as_str().to_string(),
            r.payload_bytes.to_string(),
            r.trial.to_string(),
            r.t_locate.to_string(),
            r.t_serialize.to_string(),
            r.t_transfer.to_string(),
            r.t_deserialize.to_string(),
            r.t_total.to_string(),
            r.throughput_rps.to_string(),
            r.cpu_user_s.to_string(),
            r.cpu_kernel_s.to_string(),
            r.rss_peak_bytes.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| BenchError::Io(path.to_owned(), e))?;

    let spath = summary_path(path);
    let mut text = String::from(CPU_NOTE);
    text.push('\n');
    let mut header = vec!["mode".to_string(), "payload_bytes".into(), "trials".into()];
    for c in SUMMARY_COLUMNS {
        header.push(format!("mean_{c}"));
        header.push(format!("std_{c}"));
    }
    let mut sw = csv::Writer::from_writer(Vec::new());
    sw.write_record(&header).map_err(csv_err(&spath))?;
    for s in summarize(reports) {
        let mut row = vec![s.mode.as_str().to_string(), s.payload_bytes.to_string(), s.trials.to_string()];
        for (m, sd) in s.stats {
            row.push(m.to_string());
            row.push(sd.to_string());
        }
        sw.write_record(&row).map_err(csv_err(&spath))?;
    }
    let body = sw.into_inner().map_err(|e| BenchError::Io(spath.clone(), e.into_error()))?;
    text.push_str(&String::from_utf8_lossy(&body));
    std::fs::write(&spath, text).map_err(|e| BenchError::Io(spath.clone(), e))?;
    Ok(spath)
}

/// Flatten fanout trials into rows, with throughput set to the trial's
/// aggregate rate.
pub fn fanout_rows(trials: &[FanoutTrial]) -> Vec<(usize, TransferReport)> {
    trials
        .iter()
        .flat_map(|t| t.reports.iter().map(move |r| (t.degree, r.clone())))
        .collect()
}
