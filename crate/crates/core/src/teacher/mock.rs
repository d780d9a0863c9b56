//! A local chat-completions stand-in for offline runs and tests.
//!
//! Speaks just enough HTTP/1.1 to answer `POST /chat/completions`: it reads
//! the request body, hands the first message's content to a handler and
//! replies with one connection per request.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};

/// What the mock sends back for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    /// A 200 response whose `choices[0].message.content` is this text.
    Content(String),
    /// A bare status code with a plain-text body.
    Status(u16, String),
}

type Handler = dyn Fn(&str) -> MockReply + Send + Sync;

pub struct MockEndpoint {
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl MockEndpoint {
    pub fn start(
        handler: impl Fn(&str) -> MockReply + Send + Sync + 'static,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let worker = {
            let requests = Arc::clone(&requests);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let handler = Arc::clone(&handler);
                    let requests = Arc::clone(&requests);
                    std::thread::spawn(move || {
                        if let Err(e) = serve(stream, &*handler, &requests) {
                            log::debug!("mock endpoint connection error: {e}");
                        }
                    });
                }
            })
        };
        Ok(Self {
            addr,
            requests,
            stop,
            worker: Some(worker),
        })
    }

    /// Base URL to put in a teacher config.
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Number of chat-completions requests served so far.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockEndpoint {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn serve(stream: TcpStream, handler: &Handler, requests: &AtomicUsize) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;

    let reply = if !request_line.starts_with("POST") || !request_line.contains("/chat/completions")
    {
        MockReply::Status(404, "not found".into())
    } else {
        requests.fetch_add(1, Ordering::SeqCst);
        let prompt = serde_json::from_slice::<Value>(&body).ok().and_then(|v| {
            v.pointer("/messages/0/content")?
                .as_str()
                .map(str::to_string)
        });
        match prompt {
            Some(p) => handler(&p),
            None => MockReply::Status(400, "bad request".into()),
        }
    };
    let (status, content_type, payload) = match reply {
        MockReply::Content(text) => (
            200,
            "application/json",
            json!({
                "id": "mock",
                "object": "chat.completion",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
            })
            .to_string(),
        ),
        MockReply::Status(code, text) => (code, "text/plain", text),
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} MOCK\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}
