//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

pub const MINI_WORKSPACE: &str = include_str!("../../fixtures/mini_workspace.json");
pub const MINI_KB: &str = include_str!("../../fixtures/mini_kb.json");
pub const ADMIN_TOKEN: &str = "test-token";

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

/// Writes the mini fixture and a config pointing at it into `dir`.
pub fn mini_deployment(dir: &Path, port: u16) -> PathBuf {
    std::fs::write(dir.join("workspace.json"), MINI_WORKSPACE).unwrap();
    std::fs::write(dir.join("kb.json"), MINI_KB).unwrap();
    let config = dir.join("pvta.toml");
    std::fs::write(
        &config,
        format!(
            "workspace = \"workspace.json\"\nkb = \"kb.json\"\ndata_dir = \"data\"\n\
             threshold = 0.6\nsmoothing = 1.0\nport = {port}\nadmin_token = \"{ADMIN_TOKEN}\"\n"
        ),
    )
    .unwrap();
    config
}

pub fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

pub fn examples_on_disk(path: &Path) -> Vec<(String, String)> {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    doc["intents"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|i| {
            let name = i["name"].as_str().unwrap().to_string();
            i["examples"]
                .as_array()
                .unwrap()
                .iter()
                .map(move |e| (name.clone(), e.as_str().unwrap().to_string()))
        })
        .collect()
}

/// A `pvta serve` child process, killed on drop.
pub struct Server {
    child: Child,
    pub port: u16,
}

impl Server {
    pub fn start(config: &Path, port: u16) -> Self {
        let child = Command::new(env!("CARGO_BIN_EXE_pvta"))
            .arg("--config")
            .arg(config)
            .arg("serve")
            .env_remove("PVTA_ADMIN_TOKEN")
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn pvta serve");
        let mut server = Server { child, port };
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            if let Ok((200, _)) = server.try_request("GET", "/api/health", None, false) {
                return server;
            }
            if let Ok(Some(status)) = server.child.try_wait() {
                panic!("server exited early with {status}");
            }
            assert!(Instant::now() < deadline, "server did not come up");
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    /// SIGKILL, no graceful shutdown.
    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }

    pub fn request(&self, method: &str, path: &str, body: Option<&Value>) -> (u16, Value) {
        self.try_request(method, path, body, false)
            .expect("request")
    }

    pub fn admin(&self, method: &str, path: &str, body: Option<&Value>) -> (u16, Value) {
        self.try_request(method, path, body, true).expect("request")
    }

    fn try_request(
        &self,
        method: &str,
        path: &str,
        body: Option<&Value>,
        admin: bool,
    ) -> std::io::Result<(u16, Value)> {
        http_request(self.port, method, path, body, admin.then_some(ADMIN_TOKEN))
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Minimal HTTP/1.1 client: one request per connection.
pub fn http_request(
    port: u16,
    method: &str,
    path: &str,
    body: Option<&Value>,
    token: Option<&str>,
) -> std::io::Result<(u16, Value)> {
    let mut stream = TcpStream::connect(("127.0.0.1", port))?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let payload = body.map(|b| b.to_string()).unwrap_or_default();
    let mut request =
        format!("{method} {path} HTTP/1.1\r\nHost: 127.0.0.1\r\nConnection: close\r\n");
    if body.is_some() {
        request.push_str("Content-Type: application/json\r\n");
    }
    if let Some(t) = token {
        request.push_str(&format!("x-admin-token: {t}\r\n"));
    }
    request.push_str(&format!(
        "Content-Length: {}\r\n\r\n{payload}",
        payload.len()
    ));
    stream.write_all(request.as_bytes())?;

    let mut raw = Vec::new();
    stream.read_to_end(&mut raw)?;
    let text = String::from_utf8_lossy(&raw);
    let (head, rest) = text
        .split_once("\r\n\r\n")
        .ok_or_else(|| std::io::Error::other("no header terminator"))?;
    let status: u16 = head
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| std::io::Error::other("bad status line"))?;
    let chunked = head
        .to_ascii_lowercase()
        .contains("transfer-encoding: chunked");
    let body = if chunked {
        dechunk(rest)
    } else {
        rest.to_string()
    };
    let value = if body.trim().is_empty() {
        Value::Null
    } else {
        serde_json::from_str(&body).map_err(std::io::Error::other)?
    };
    Ok((status, value))
}

fn dechunk(mut rest: &str) -> String {
    let mut out = String::new();
    while let Some((size, tail)) = rest.split_once("\r\n") {
        let n = usize::from_str_radix(size.trim(), 16).unwrap_or(0);
        if n == 0 {
            break;
        }
        out.push_str(&tail[..n]);
        rest = &tail[n + 2..];
    }
    out
}

/// Independent multinomial naive Bayes: recounts the raw examples for every
/// query and multiplies likelihoods term by term, in log space.
pub fn oracle_naive_bayes(
    intents: &[(String, Vec<String>)],
    question: &[&str],
    alpha: f64,
) -> Vec<(String, f64)> {
    let split = |s: &str| -> Vec<String> { s.split_whitespace().map(str::to_string).collect() };
    let mut vocabulary: Vec<String> = intents
        .iter()
        .flat_map(|(_, ex)| ex.iter().flat_map(|e| split(e)))
        .collect();
    vocabulary.sort();
    vocabulary.dedup();
    let total_examples: usize = intents.iter().map(|(_, ex)| ex.len()).sum();

    let mut logs = Vec::new();
    for (name, examples) in intents {
        let tokens: Vec<String> = examples.iter().flat_map(|e| split(e)).collect();
        let mut log_p = (examples.len() as f64 / total_examples as f64).ln();
        for q in question {
            if !vocabulary.iter().any(|v| v == q) {
                continue;
            }
            let count = tokens.iter().filter(|t| t == q).count() as f64;
            log_p +=
                ((count + alpha) / (tokens.len() as f64 + alpha * vocabulary.len() as f64)).ln();
        }
        logs.push((name.clone(), log_p));
    }
    let max = logs
        .iter()
        .map(|(_, l)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logs.iter().map(|(_, l)| (l - max).exp()).sum();
    logs.into_iter()
        .map(|(n, l)| (n, (l - max).exp() / z))
        .collect()
}
