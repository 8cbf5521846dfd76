//! In-process chat-completions endpoint serving replies from any
//! [`ChatCompleter`], for tests and offline demos.
//!
//! The server speaks just enough of the chat-completions wire protocol for
//! [`gateway::HttpGateway`](super::gateway::HttpGateway): POST with a JSON
//! body, reply with `choices[0].message.content`. A status schedule lets
//! tests inject 429s or 500s ahead of the scripted replies.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crate::llm::{ChatCompleter, ChatMessage, LlmRequest};

/// Handle to a running stub endpoint. Dropping it stops the server.
pub struct ChatStubServer {
    base_url: String,
    requests: Arc<AtomicUsize>,
    shutdown: Arc<AtomicBool>,
    addr: std::net::SocketAddr,
    handle: Option<JoinHandle<()>>,
}

impl ChatStubServer {
    pub fn spawn(completer: Arc<dyn ChatCompleter>) -> std::io::Result<Self> {
        Self::spawn_with_statuses(completer, Vec::new())
    }

    /// `statuses` are consumed one per request before any 200 is served:
    /// a schedule of `[429, 500]` fails the first two requests.
    pub fn spawn_with_statuses(
        completer: Arc<dyn ChatCompleter>,
        statuses: Vec<u16>,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(AtomicUsize::new(0));
        let shutdown = Arc::new(AtomicBool::new(false));
        let schedule = Mutex::new(statuses.into_iter());

        let req_counter = Arc::clone(&requests);
        let stop = Arc::clone(&shutdown);
        let handle = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                req_counter.fetch_add(1, Ordering::SeqCst);
                let forced = schedule.lock().unwrap().next();
                if let Err(e) = handle_connection(stream, completer.as_ref(), forced) {
                    log::debug!("chat stub connection error: {e}");
                }
            }
        });

        Ok(ChatStubServer {
            base_url: format!("http://{addr}/v1/chat/completions"),
            requests,
            shutdown,
            addr,
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Number of HTTP requests served so far.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for ChatStubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_connection(
    mut stream: TcpStream,
    completer: &dyn ChatCompleter,
    forced_status: Option<u16>,
) -> std::io::Result<()> {
    stream.set_read_timeout(Some(std::time::Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);

    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;

    let mut content_length = 0usize;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some(v) = header
            .to_ascii_lowercase()
            .strip_prefix("content-length:")
            .map(str::trim)
            .and_then(|v| v.parse::<usize>().ok())
        {
            content_length = v;
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    if let Some(status) = forced_status {
        let reply = format!(
            "HTTP/1.1 {status} Injected\r\nContent-Type: text/plain\r\nContent-Length: 8\r\nConnection: close\r\n\r\ninjected"
        );
        stream.write_all(reply.as_bytes())?;
        return stream.flush();
    }

    let response_body = match parse_wire_request(&body) {
        Ok(req) => match completer.complete(&req) {
            Ok(resp) => serde_json::json!({
                "choices": [{
                    "message": {"role": "assistant", "content": resp.content},
                    "finish_reason": resp.finish_reason,
                }],
                "usage": {
                    "prompt_tokens": resp.usage.prompt_tokens,
                    "completion_tokens": resp.usage.completion_tokens,
                },
                "model": resp.model.unwrap_or(req.model),
            })
            .to_string(),
            Err(e) => {
                let reply = error_response(500, &e.to_string());
                stream.write_all(reply.as_bytes())?;
                return stream.flush();
            }
        },
        Err(msg) => {
            let reply = error_response(400, &msg);
            stream.write_all(reply.as_bytes())?;
            return stream.flush();
        }
    };

    let reply = format!(
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response_body}",
        response_body.len()
    );
    stream.write_all(reply.as_bytes())?;
    stream.flush()
}

fn error_response(status: u16, message: &str) -> String {
    format!(
        "HTTP/1.1 {status} Error\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{message}",
        message.len()
    )
}

fn parse_wire_request(body: &[u8]) -> std::result::Result<LlmRequest, String> {
    let doc: serde_json::Value = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    let model = doc
        .get("model")
        .and_then(|v| v.as_str())
        .unwrap_or("unknown")
        .to_string();
    let messages = doc
        .get("messages")
        .and_then(|v| v.as_array())
        .ok_or("missing messages")?
        .iter()
        .map(|m| ChatMessage {
            role: m.get("role").and_then(|v| v.as_str()).unwrap_or("").into(),
            content: m
                .get("content")
                .and_then(|v| v.as_str())
                .unwrap_or("")
                .into(),
        })
        .collect();
    Ok(LlmRequest {
        model,
        messages,
        temperature: doc
            .get("temperature")
            .and_then(|v| v.as_f64())
            .unwrap_or(0.0),
        seed: doc.get("seed").and_then(|v| v.as_u64()),
        max_tokens: doc
            .get("max_tokens")
            .and_then(|v| v.as_u64())
            .unwrap_or(1024) as u32,
    })
}
