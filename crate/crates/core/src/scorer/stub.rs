//! Minimal HTTP server implementing the remote generation contract, for
//! tests and local dry runs.
//!
//! `POST /` with `{"prompts": [...], ...}` answers `{"generations": [...]}`,
//! where each generation is the prompt's final `Input:` line.

use serde_json::Value;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubMode {
    /// One generation per prompt, echoing the instance input.
    Echo,
    /// Like `Echo` but drops the last generation.
    Misaligned,
    /// Always answers with this status code and an empty body.
    Status(u16),
}

#[derive(Default)]
struct Shared {
    requests: AtomicUsize,
    bodies: Mutex<Vec<Value>>,
    auth: Mutex<Vec<Option<String>>>,
}

pub struct StubServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

/// The generation the stub returns for one prompt.
pub fn echo_generation(prompt: &str) -> String {
    let start = prompt.rfind("Input: ").map_or(0, |i| i + "Input: ".len());
    let rest = &prompt[start..];
    rest.find("\nOutput:").map_or(rest, |e| &rest[..e]).to_string()
}

impl StubServer {
    pub fn start(mode: StubMode) -> std::io::Result<StubServer> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared::default());
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let shared = Arc::clone(&shared);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = conn else { continue };
                    let shared = Arc::clone(&shared);
                    std::thread::spawn(move || {
                        if let Err(e) = serve(stream, mode, &shared) {
                            log::debug!("stub connection: {e}");
                        }
                    });
                }
            })
        };
        Ok(StubServer {
            addr,
            shared,
            stop,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// Request bodies received so far, in arrival order.
    pub fn bodies(&self) -> Vec<Value> {
        self.shared.bodies.lock().unwrap().clone()
    }

    /// `Authorization` header of each request.
    pub fn auth_headers(&self) -> Vec<Option<String>> {
        self.shared.auth.lock().unwrap().clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, mode: StubMode, shared: &Shared) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut content_length = 0usize;
    let mut auth = None;
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let value = value.trim().to_string();
            match name.trim().to_ascii_lowercase().as_str() {
                "content-length" => content_length = value.parse().unwrap_or(0),
                "authorization" => auth = Some(value),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    shared.requests.fetch_add(1, Ordering::SeqCst);
    shared.auth.lock().unwrap().push(auth);

    let parsed: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    shared.bodies.lock().unwrap().push(parsed.clone());

    let (status, payload) = match mode {
        StubMode::Status(code) => (code, String::new()),
        StubMode::Echo | StubMode::Misaligned => {
            let prompts = parsed["prompts"].as_array().cloned().unwrap_or_default();
            let mut gens: Vec<String> = prompts
                .iter()
                .map(|p| echo_generation(p.as_str().unwrap_or_default()))
                .collect();
            if mode == StubMode::Misaligned {
                gens.pop();
            }
            (200, serde_json::json!({ "generations": gens }).to_string())
        }
    };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} STUB\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    stream.flush()
}
