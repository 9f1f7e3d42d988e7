//! Per-trial transfer reports and the summary statistics over them.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::registry::Mode;

/// What actually carried a measured transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReportMode {
    User,
    Kernel,
    /// Network plane with the payload spliced through a pipe.
    Network,
    /// Network plane with plain buffered writes.
    NetworkFallback,
    Baseline,
}

impl ReportMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportMode::User => "user",
            ReportMode::Kernel => "kernel",
            ReportMode::Network => "network",
            ReportMode::NetworkFallback => "network-fallback",
            ReportMode::Baseline => "baseline",
        }
    }

    /// True for the serialization-free planes.
    pub fn is_zero_serialization(self) -> bool {
        self != ReportMode::Baseline
    }

    pub fn plane(self) -> Option<Mode> {
        match self {
            ReportMode::User => Some(Mode::User),
            ReportMode::Kernel => Some(Mode::Kernel),
            ReportMode::Network | ReportMode::NetworkFallback => Some(Mode::Network),
            ReportMode::Baseline => None,
        }
    }
}

impl fmt::Display for ReportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReportMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "user" => ReportMode::User,
            "kernel" => ReportMode::Kernel,
            "network" => ReportMode::Network,
            "network-fallback" => ReportMode::NetworkFallback,
            "baseline" => ReportMode::Baseline,
            other => return Err(alloc::format!("unknown report mode `{other}`")),
        })
    }
}

/// One measured transfer. Times are seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub mode: ReportMode,
    pub payload_bytes: u64,
    pub trial: u32,
    pub t_locate: f64,
    pub t_serialize: f64,
    pub t_transfer: f64,
    pub t_deserialize: f64,
    pub t_total: f64,
    pub throughput_rps: f64,
    pub cpu_user_s: f64,
    pub cpu_kernel_s: f64,
    pub rss_peak_bytes: u64,
    /// Checksum the target computed over what it received.
    pub delivered_checksum: Option<u64>,
    pub ok: bool,
}

/// Relative slack allowed between `t_total` and the sum of its phases.
pub const PHASE_TOLERANCE: f64 = 0.05;

impl TransferReport {
    pub fn new(mode: ReportMode, payload_bytes: u64, trial: u32) -> Self {
        TransferReport {
            mode,
            payload_bytes,
            trial,
            t_locate: 0.0,
            t_serialize: 0.0,
            t_transfer: 0.0,
            t_deserialize: 0.0,
            t_total: 0.0,
            throughput_rps: 0.0,
            cpu_user_s: 0.0,
            cpu_kernel_s: 0.0,
            rss_peak_bytes: 0,
            delivered_checksum: None,
            ok: false,
        }
    }

    pub fn phase_sum(&self) -> f64 {
        self.t_locate + self.t_serialize + self.t_transfer + self.t_deserialize
    }

    /// `t_total` accounts for its phases within [`PHASE_TOLERANCE`].
    pub fn phases_consistent(&self) -> bool {
        self.t_total >= self.phase_sum() * (1.0 - PHASE_TOLERANCE)
            && self.phase_sum() >= self.t_total * (1.0 - PHASE_TOLERANCE)
    }

    /// Set `t_total` and derive the single-request throughput from it.
    pub fn finish(&mut self, t_total: f64) {
        self.t_total = t_total;
        self.throughput_rps = throughput_rps(1, t_total);
    }
}

/// Requests per second for `requests` completed in `window` seconds.
///
/// Sub-second windows are extrapolated at the same rate, so a single
/// request of `t` seconds yields `1 / t`.
pub fn throughput_rps(requests: u64, window: f64) -> f64 {
    if window <= 0.0 {
        return f64::INFINITY;
    }
    requests as f64 / window
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn stddev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    libm::sqrt(ss / (values.len() - 1) as f64)
}

/// Numeric columns summarized per (mode, size), in CSV order.
pub const SUMMARY_COLUMNS: [&str; 9] = [
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

fn column(r: &TransferReport, i: usize) -> f64 {
    match i {
        0 => r.t_locate,
        1 => r.t_serialize,
        2 => r.t_transfer,
        3 => r.t_deserialize,
        4 => r.t_total,
        5 => r.throughput_rps,
        6 => r.cpu_user_s,
        7 => r.cpu_kernel_s,
        _ => r.rss_peak_bytes as f64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mode: ReportMode,
    pub payload_bytes: u64,
    pub trials: usize,
    /// `(mean, stddev)` per entry of [`SUMMARY_COLUMNS`].
    pub stats: [(f64, f64); 9],
}

impl Summary {
    pub fn mean_total(&self) -> f64 {
        self.stats[4].0
    }
}

/// Group by (mode, payload size) in first-seen order and summarize.
pub fn summarize(reports: &[TransferReport]) -> Vec<Summary> {
    let mut groups: Vec<(ReportMode, u64, Vec<&TransferReport>)> = Vec::new();
    for r in reports {
        match groups.iter_mut().find(|g| g.0 == r.mode && g.1 == r.payload_bytes) {
            Some(g) => g.2.push(r),
            None => groups.push((r.mode, r.payload_bytes, alloc::vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(mode, payload_bytes, rs)| {
            let mut stats = [(0.0, 0.0); 9];
            for (i, s) in stats.iter_mut().enumerate() {
                let col: Vec<f64> = rs.iter().map(|r| column(r, i)).collect();
                *s = (mean(&col), stddev(&col));
            }
            Summary {
                mode,
                payload_bytes,
                trials: rs.len(),
                stats,
            }
        })
        .collect()
}
