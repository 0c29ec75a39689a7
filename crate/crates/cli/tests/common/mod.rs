#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

pub const TOKEN: &str = "tok-field";
pub const USER: &str = "field-user";

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_aviscape"));
    c.env_remove("RUST_LOG");
    for (k, _) in std::env::vars() {
        if k.starts_with("AVISCAPE_") {
            c.env_remove(k);
        }
    }
    c
}

/// Runs the CLI to completion.
pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn aviscape")
}

pub fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

/// A `serve` child process; killed on drop unless stopped.
pub struct ServerProcess {
    pub child: Option<Child>,
    pub addr: SocketAddr,
}

impl ServerProcess {
    pub fn start(data_dir: &Path, bind: &str) -> Result<Self, String> {
        let mut child = bin()
            .args(["serve", "--bind", bind, "--data-dir"])
            .arg(data_dir)
            .env("AVISCAPE_TOKENS", format!("{TOKEN}:{USER}"))
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?;
        let stdout = child.stdout.take().unwrap();
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line).map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            let status = child.wait().map_err(|e| e.to_string())?;
            return Err(format!("server exited with {status} before readiness"));
        }
        let ready: Value = serde_json::from_str(&line).map_err(|e| format!("{e}: {line}"))?;
        let addr = ready["ready"].as_str().ok_or("no address")?.parse().map_err(|e| format!("{e}"))?;
        Ok(Self { child: Some(child), addr })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    /// Sends SIGINT and waits for the process to exit.
    pub fn interrupt(mut self) -> ExitStatus {
        let mut child = self.child.take().unwrap();
        Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            if let Some(status) = child.try_wait().unwrap() {
                return status;
            }
            if Instant::now() > deadline {
                let _ = child.kill();
                panic!("server ignored SIGINT");
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

impl Drop for ServerProcess {
    fn drop(&mut self) {
        if let Some(mut c) = self.child.take() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

pub fn upload(
    client: &reqwest::blocking::Client,
    server: &ServerProcess,
    audio: Vec<u8>,
    meta: &Value,
) -> (u16, Value) {
    let form = reqwest::blocking::multipart::Form::new()
        .part("audio", reqwest::blocking::multipart::Part::bytes(audio).file_name("rec.wav"))
        .text("meta", meta.to_string());
    let resp = client.post(server.url("/v1/recordings")).bearer_auth(TOKEN).multipart(form).send().unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().unwrap())
}
