//! Transports for external model backends.
//!
//! Every external adapter (question generator, fill-mask model, tagger,
//! entity recognizer, encoder, LLM) speaks one JSON object per request and
//! one per response, either over a child process's stdin/stdout lines or
//! as an HTTP POST body.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 200,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_attempts: 1,
            initial_backoff_ms: 0,
        }
    }

    /// Run `op` until it succeeds or attempts run out, doubling the delay
    /// between attempts. The last error is returned.
    pub fn run<T>(&self, mut op: impl FnMut(u32) -> Result<T>) -> Result<T> {
        let attempts = self.max_attempts.max(1);
        let mut delay = self.initial_backoff_ms;
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(value) => return Ok(value),
                Err(e) if attempt >= attempts => return Err(e),
                Err(e) => {
                    log::warn!("attempt {attempt}/{attempts} failed: {e}");
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                    delay = delay.saturating_mul(2);
                    attempt += 1;
                }
            }
        }
    }
}

/// A request/response channel carrying JSON values.
pub trait Transport: Send + Sync {
    fn call(&self, request: &Value) -> Result<Value>;

    /// Whether concurrent calls are safe without external serialization.
    fn concurrent_safe(&self) -> bool {
        false
    }
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Long-lived child process answering one JSON line per request line.
/// Calls are serialized through a mutex.
pub struct ProcessTransport {
    argv: Vec<String>,
    io: Mutex<Option<ChildIo>>,
}

impl ProcessTransport {
    pub fn new(argv: Vec<String>) -> Result<Self> {
        if argv.is_empty() {
            return Err(Error::Config("external backend command is empty".into()));
        }
        Ok(ProcessTransport {
            argv,
            io: Mutex::new(None),
        })
    }

    fn spawn(&self) -> Result<ChildIo> {
        let mut child = Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Backend(format!("cannot start {:?}: {e}", self.argv[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ChildIo { child, stdin, stdout })
    }
}

impl Transport for ProcessTransport {
    fn call(&self, request: &Value) -> Result<Value> {
        let mut guard = self.io.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let io = guard.as_mut().expect("spawned above");
        let exchange = (|| -> std::io::Result<String> {
            let mut line = serde_json::to_string(request)?;
            line.push('\n');
            io.stdin.write_all(line.as_bytes())?;
            io.stdin.flush()?;
            let mut reply = String::new();
            if io.stdout.read_line(&mut reply)? == 0 {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "backend closed its output",
                ));
            }
            Ok(reply)
        })();
        match exchange {
            Ok(reply) => {
                serde_json::from_str(&reply).map_err(|e| Error::Backend(format!("unparseable backend reply: {e}")))
            }
            Err(e) => {
                // Restart on the next call.
                if let Some(mut dead) = guard.take() {
                    let _ = dead.child.kill();
                    let _ = dead.child.wait();
                }
                Err(Error::Backend(e.to_string()))
            }
        }
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        if let Some(mut io) = self.io.get_mut().ok().and_then(Option::take) {
            drop(io.stdin);
            let _ = io.child.wait();
        }
    }
}

/// JSON over HTTP POST.
pub struct HttpTransport {
    url: String,
    headers: Vec<(String, String)>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpTransport {
            url: url.into(),
            headers: Vec::new(),
            agent,
        }
    }

    pub fn with_header(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }
}

impl Transport for HttpTransport {
    fn call(&self, request: &Value) -> Result<Value> {
        let mut req = self.agent.post(&self.url);
        for (name, value) in &self.headers {
            req = req.header(name.as_str(), value.as_str());
        }
        let mut response = req
            .send_json(request)
            .map_err(|e| Error::Backend(format!("POST {}: {e}", self.url)))?;
        response
            .body_mut()
            .read_json::<Value>()
            .map_err(|e| Error::Backend(format!("unparseable reply from {}: {e}", self.url)))
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Wraps a transport with retries.
pub struct Retrying<T> {
    inner: T,
    policy: RetryPolicy,
}

impl<T: Transport> Retrying<T> {
    pub fn new(inner: T, policy: RetryPolicy) -> Self {
        Retrying { inner, policy }
    }
}

impl<T: Transport> Transport for Retrying<T> {
    fn call(&self, request: &Value) -> Result<Value> {
        self.policy.run(|_| self.inner.call(request))
    }

    fn concurrent_safe(&self) -> bool {
        self.inner.concurrent_safe()
    }
}

/// Where an external backend lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Command(Vec<String>),
    Http(String),
}

impl Endpoint {
    pub fn connect(&self, retry: RetryPolicy, timeout: Duration) -> Result<Box<dyn Transport>> {
        Ok(match self {
            Endpoint::Command(argv) => Box::new(Retrying::new(ProcessTransport::new(argv.clone())?, retry)),
            Endpoint::Http(url) => Box::new(Retrying::new(HttpTransport::new(url, timeout), retry)),
        })
    }
}

pub(crate) fn field<'a>(value: &'a Value, name: &str) -> Result<&'a Value> {
    value
        .get(name)
        .ok_or_else(|| Error::Backend(format!("reply lacks field {name:?}: {value}")))
}

pub(crate) fn str_field<'a>(value: &'a Value, name: &str) -> Result<&'a str> {
    field(value, name)?
        .as_str()
        .ok_or_else(|| Error::Backend(format!("field {name:?} is not a string")))
}
