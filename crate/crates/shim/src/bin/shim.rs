use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use wasmhose::abi_check::check_abi;
use wasmhose::guests::{load_wasm, write_sample_guests};
use wasmhose::runtime::{self, load_config, Shim, EXIT_ABI, EXIT_CONFIG, EXIT_TRANSPORT};
use wasmhose::transport::sink;
use wasmhose_core::payload::generate;
use wasmhose_core::{checksum64, FunctionKey, Mode, WorkflowId};

#[derive(Parser)]
#[command(name = "shim", version, about = "Sidecar shim moving payloads between Wasm guests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Auto,
    User,
    Kernel,
    Network,
}

#[derive(Subcommand)]
enum Command {
    /// Host the configured guests and serve until SIGINT or SIGTERM.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Have a hosted source generate a payload and deliver it to a target.
    Send {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workflow: WorkflowId,
        #[arg(long)]
        source: u32,
        #[arg(long)]
        target: u32,
        #[arg(long)]
        bytes: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "auto")]
        mode: ModeArg,
    },
    /// Check a module against the guest ABI.
    CheckAbi { wasm: String },
    /// Write the sample guests as .wasm files.
    BuildGuests {
        #[arg(long, default_value = "guests")]
        out: PathBuf,
    },
}

fn fail(code: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("shim: {msg}");
    ExitCode::from(code as u8)
}

fn send(config: &Path, workflow: WorkflowId, source: u32, target: u32, bytes: u32, seed: u64, mode: ModeArg) -> ExitCode {
    let config = match load_config(config) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let force = match mode {
        ModeArg::Auto => None,
        ModeArg::User => Some(Mode::User),
        ModeArg::Kernel => Some(Mode::Kernel),
        ModeArg::Network => Some(Mode::Network),
    };
    let (src, dst) = (FunctionKey::new(workflow, source), FunctionKey::new(workflow, target));
    // Loopback sends to a guest hosted here need this shim's own listeners.
    let target_local = config.registry.get(dst).is_some_and(|r| r.is_hosted());
    let serve = target_local && force.is_some_and(|m| m != Mode::User);
    let shim = match Shim::start(config, serve) {
        Ok(s) => s,
        Err(e) => return fail(runtime::exit_code(&e), e),
    };
    let Some(instance) = shim.instance(src) else {
        return fail(EXIT_CONFIG, format!("function {source} is not hosted by this config"));
    };
    let captures = {
        let mut guest = sink::write(instance);
        let prepared = guest.set_params(seed, bytes).and_then(|_| {
            guest.take_captures();
            guest.run()
        });
        if let Err(e) = prepared {
            return fail(runtime::exit_code(&e), e);
        }
        guest.take_captures()
    };
    let expected = checksum64(&generate(seed, bytes as usize));
    for capture in &captures {
        match shim.dispatch(src, dst, capture, force) {
            Ok(d) => {
                let delivered = d
                    .report
                    .delivered_checksum
                    .map_or_else(|| "-".to_string(), |c| format!("{c:016x}"));
                println!(
                    "mode={} bytes={} expected={expected:016x} delivered={delivered} t_total={:.6}",
                    d.report.mode, d.report.payload_bytes, d.report.t_total
                );
                if d.report.delivered_checksum.is_some_and(|c| c != expected) {
                    return fail(EXIT_TRANSPORT, "delivered checksum differs from the payload's");
                }
            }
            Err(e) => return fail(runtime::exit_code(&e.error), e),
        }
    }
    shim.shutdown();
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { config } => {
            let config = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            match runtime::run_shim(config) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(runtime::exit_code(&e), e),
            }
        }
        Command::Send {
            config,
            workflow,
            source,
            target,
            bytes,
            seed,
            mode,
        } => send(&config, workflow, source, target, bytes, seed, mode),
        Command::CheckAbi { wasm } => match load_wasm(&wasm).and_then(|b| check_abi(&b)) {
            Ok(()) => {
                println!("{wasm}: ok");
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_ABI, format!("{wasm}: {e}")),
        },
        Command::BuildGuests { out } => match write_sample_guests(&out) {
            Ok(paths) => {
                for p in paths {
                    println!("{}", p.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_TRANSPORT, format!("{}: {e}", out.display())),
        },
    }
}
