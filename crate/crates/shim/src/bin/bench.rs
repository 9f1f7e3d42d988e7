use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wasmhose::bench::{
    emit_report, fanout_rows, run_fanout, run_sequence, Bench, SweepSpec, DEFAULT_SEED, DEFAULT_SIZES, DEFAULT_TRIALS,
    DEFAULT_WARMUP,
};
use wasmhose::runtime::{self, load_config, Shim, EXIT_CONFIG, EXIT_TRANSPORT};
use wasmhose_core::metrics::ReportMode;
use wasmhose_core::Mode;

#[derive(Parser)]
#[command(name = "bench", version, about = "Payload sweeps and fanout over every plane plus the baseline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Report CSV; a `.summary.csv` is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: u32,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: u32,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Runtime directory for kernel endpoints of generated configs.
    #[arg(long)]
    runtime_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Producer to consumer over each mode and payload size.
    Sweep {
        /// Shim config hosting `--source` and `--target`. Without it a
        /// loopback config is generated.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "producer")]
        source: String,
        #[arg(long, default_value = "consumer")]
        target: String,
        /// Comma-separated from user, kernel, network, network-fallback, baseline.
        #[arg(long, value_delimiter = ',', default_values_t = ["user".to_string(), "kernel".into(), "network".into(), "baseline".into()])]
        modes: Vec<String>,
        /// Comma-separated payload sizes in bytes, ascending.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<u64>,
        /// Add a 500 MB point. Needs about 1 GiB of guest memory.
        #[arg(long)]
        large: bool,
        #[command(flatten)]
        common: Common,
    },
    /// One producer dispatching the same payload to k consumers at once.
    Fanout {
        /// Comma-separated fanout degrees.
        #[arg(long, value_delimiter = ',', required = true)]
        degree: Vec<usize>,
        #[arg(long, default_value_t = 1 << 20)]
        bytes: u64,
        #[arg(long, default_value = "user")]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
}

fn fail(code: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("bench: {msg}");
    ExitCode::from(code as u8)
}

fn runtime_dir(common: &Common) -> (PathBuf, Option<tempfile::TempDir>) {
    match &common.runtime_dir {
        Some(d) => (d.clone(), None),
        None => {
            let t = tempfile::tempdir().expect("creating a temporary runtime directory");
            (t.path().to_owned(), Some(t))
        }
    }
}

fn from_config(path: &Path, source: &str, target: &str) -> Result<Bench, (i32, String)> {
    let config = load_config(path).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    let key = |name: &str| {
        config
            .registry
            .by_name(name)
            .map(|r| r.key())
            .ok_or_else(|| (EXIT_CONFIG, format!("{}: no function named `{name}`", path.display())))
    };
    let (src, dst) = (key(source)?, key(target)?);
    let shim = Shim::start(config, true).map_err(|e| (runtime::exit_code(&e), e.to_string()))?;
    Bench::new(shim, src, vec![dst]).map_err(|e| (EXIT_TRANSPORT, e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Sweep {
            config,
            source,
            target,
            modes,
            sizes,
            large,
            common,
        } => {
            let modes: Result<Vec<ReportMode>, _> = modes.iter().map(|m| m.parse()).collect();
            let modes = match modes {
                Ok(m) => m,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let mut sizes = if sizes.is_empty() { DEFAULT_SIZES.to_vec() } else { sizes };
            if large {
                sizes.push(500_000_000);
            }
            let spec = SweepSpec {
                modes,
                sizes,
                trials: common.trials,
                warmup: common.warmup,
                fanout_degrees: vec![1],
                seed: common.seed,
            };
            if let Err(e) = spec.validate() {
                return fail(EXIT_CONFIG, e);
            }
            let (dir, _guard) = runtime_dir(&common);
            let bench = match config {
                Some(path) => from_config(&path, &source, &target),
                None => Bench::generated(1, *spec.sizes.last().unwrap_or(&1), &dir)
                    .map_err(|e| (runtime::exit_code(&e), e.to_string())),
            };
            let mut bench = match bench {
                Ok(b) => b,
                Err((code, msg)) => return fail(code, msg),
            };
            let reports = match run_sequence(&mut bench, &spec) {
                Ok(r) => r,
                Err(e) => return fail(EXIT_TRANSPORT, e),
            };
            match emit_report(&reports, &common.out) {
                Ok(summary) => {
                    println!("{} rows -> {}", reports.len(), common.out.display());
                    println!("summary -> {}", summary.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_TRANSPORT, e),
            }
        }
        Command::Fanout {
            degree,
            bytes,
            mode,
            common,
        } => {
            let spec = SweepSpec {
                modes: vec![],
                sizes: vec![bytes],
                trials: common.trials,
                warmup: common.warmup,
                fanout_degrees: degree,
                seed: common.seed,
            };
            if let Err(e) = spec.validate() {
                return fail(EXIT_CONFIG, e);
            }
            let max_degree = spec.fanout_degrees.iter().copied().max().unwrap_or(1);
            let (dir, _guard) = runtime_dir(&common);
            let bench = match Bench::generated(max_degree, bytes, &dir) {
                Ok(b) => b,
                Err(e) => return fail(runtime::exit_code(&e), e),
            };
            let trials = match run_fanout(&bench, &spec, mode) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_TRANSPORT, e),
            };
            let stem = common
                .out
                .file_stem()
                .map_or("fanout".into(), |s| s.to_string_lossy().into_owned());
            for &d in &spec.fanout_degrees {
                let at: Vec<_> = trials.iter().filter(|t| t.degree == d).collect();
                let lat: Vec<f64> = at.iter().map(|t| t.per_transfer_latency()).collect();
                let thr: Vec<f64> = at.iter().map(|t| t.throughput_rps()).collect();
                println!(
                    "degree={d} per_transfer_latency_s={:.6} total_throughput_rps={:.1}",
                    wasmhose_core::metrics::mean(&lat),
                    wasmhose_core::metrics::mean(&thr)
                );
                let reports: Vec<_> = fanout_rows(&trials)
                    .into_iter()
                    .filter(|(degree, _)| *degree == d)
                    .map(|(_, r)| r)
                    .collect();
                let path = common.out.with_file_name(format!("{stem}.d{d}.csv"));
                match emit_report(&reports, &path) {
                    Ok(summary) => println!("  {} rows -> {} (+ {})", reports.len(), path.display(), summary.display()),
                    Err(e) => return fail(EXIT_TRANSPORT, e),
                }
            }
            ExitCode::SUCCESS
        }
    }
}
