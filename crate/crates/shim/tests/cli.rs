use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::Duration;

use wasmhose::guests::SampleGuest;

fn shim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shim"))
}

fn write(dir: &std::path::Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const WF: &str = "00112233445566778899aabbccddeeff";

fn pair_config(extra: &str) -> String {
    format!(
        "{extra}\n[function p]\nid = 1\nworkflow = {WF}\nlocality = same-vm\nwasm = builtin:producer\n\n\
         [function c]\nid = 2\nworkflow = {WF}\nlocality = same-vm\nwasm = builtin:consumer\n"
    )
}

#[test]
fn check_abi_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    for g in SampleGuest::ALL {
        let out = shim().args(["check-abi", &format!("builtin:{}", g.name())]).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mutated = SampleGuest::Consumer.wat().replace("(export \"checksum\")", "(export \"checksum_gone\")");
    let path = write(dir.path(), "mutated.wat", &mutated);
    let out = shim().arg("check-abi").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("GuestAbiMissing"));
}

#[test]
fn send_reports_matching_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write(dir.path(), "pair.conf", &pair_config("serve_kernel = true\nlisten = 127.0.0.1:0"));
    for mode in ["auto", "user", "kernel", "network"] {
        let out = shim()
            .env("WASMHOSE_RUNTIME_DIR", dir.path())
            .args(["send", "--workflow", WF, "--source", "1", "--target", "2", "--bytes", "100000", "--seed", "3"])
            .arg("--config")
            .arg(&conf)
            .args(["--mode", mode])
            .output()
            .unwrap();
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(out.status.success(), "{mode}: {}", String::from_utf8_lossy(&out.stderr));
        let line = stdout.lines().next().unwrap();
        let field = |k: &str| line.split_whitespace().find_map(|f| f.strip_prefix(k)).unwrap().to_string();
        assert_eq!(field("expected="), field("delivered="), "{line}");
    }
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write(dir.path(), "bad.conf", "[function x]\nid = 1\nworkflow = 00\n");
    let out = shim().arg("run").arg("--config").arg(&conf).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = shim().arg("run").arg("--config").arg(dir.path().join("missing.conf")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn busy_port_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port();
    let conf = write(dir.path(), "busy.conf", &pair_config(&format!("listen = 127.0.0.1:{port}")));
    let out = shim()
        .env("WASMHOSE_RUNTIME_DIR", dir.path())
        .arg("run")
        .arg("--config")
        .arg(&conf)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&port.to_string()));
}

#[test]
fn run_serves_until_sigterm_and_cleans_up() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write(dir.path(), "serve.conf", &pair_config("serve_kernel = true\nlisten = 127.0.0.1:0"));
    let mut child = shim()
        .env("WASMHOSE_RUNTIME_DIR", dir.path())
        .arg("run")
        .arg("--config")
        .arg(&conf)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let mut sockets = Vec::new();
    let mut network = None;
    for _ in 0..3 {
        let line = lines.next().unwrap().unwrap();
        if let Some(p) = line.strip_prefix("kernel ") {
            sockets.push(PathBuf::from(p));
        } else if let Some(a) = line.strip_prefix("network ") {
            network = Some(a.to_string());
        }
    }
    assert_eq!(sockets.len(), 2);
    assert!(sockets.iter().all(|p| p.exists()));
    assert!(std::net::TcpStream::connect(network.unwrap()).is_ok());
    // SAFETY: plain kill(2) on our own child.
    unsafe { libc::kill(child.id() as i32, libc::SIGTERM) };
    let mut status = None;
    for _ in 0..100 {
        if let Some(s) = child.try_wait().unwrap() {
            status = Some(s);
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    let status = status.expect("shim did not exit on SIGTERM");
    assert!(status.success());
    assert!(sockets.iter().all(|p| !p.exists()));
}
