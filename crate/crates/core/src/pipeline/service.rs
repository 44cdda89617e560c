//! TCP front end. One port carries three things, told apart by the first
//! bytes a client sends:
//!
//! * `GET ` with `Upgrade: websocket`: the message protocol over binary
//!   WebSocket messages (`tag | payload`, no length prefix);
//! * any other `GET `: static files from the UI directory, plus
//!   `/info.json` and `/zones.json`;
//! * anything else, or nothing within the sniff timeout: the raw
//!   length-prefixed protocol.

use std::collections::HashMap;
use std::io::{self, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::TryRecvError;
use tungstenite::Message;

use super::protocol::{
    read_message, write_message, ClientMessage, Control, ErrorCode, ErrorReply, Incoming, InfoMessage, ServerMessage,
    MAX_MESSAGE_LEN,
};
use super::runtime::{Runtime, RuntimeSummary, Subscription};
use super::PipelineError;

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub bind: String,
    pub ui_dir: Option<PathBuf>,
    /// Messages a client may fall behind before it is disconnected.
    pub outbox: usize,
    /// How long a silent new connection waits before it is treated as a
    /// raw-protocol client.
    pub sniff_timeout: Duration,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:7878".into(),
            ui_dir: None,
            outbox: 256,
            sniff_timeout: Duration::from_millis(200),
        }
    }
}

struct Shared {
    runtime: Arc<Runtime>,
    info: InfoMessage,
    options: ServiceOptions,
    stop: AtomicBool,
    connections: Mutex<HashMap<u64, TcpStream>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    next_conn: AtomicU64,
}

pub struct Service {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
}

impl Service {
    /// Binds and starts accepting. A bind failure is a startup error.
    pub fn start(runtime: Arc<Runtime>, info: InfoMessage, options: ServiceOptions) -> Result<Self, PipelineError> {
        let listener = TcpListener::bind(&options.bind)
            .map_err(|e| PipelineError::Startup(format!("cannot bind {}: {e}", options.bind)))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            runtime,
            info,
            options,
            stop: AtomicBool::new(false),
            connections: Mutex::new(HashMap::new()),
            threads: Mutex::new(Vec::new()),
            next_conn: AtomicU64::new(0),
        });
        let acceptor = {
            let shared = shared.clone();
            std::thread::Builder::new()
                .name("accept".into())
                .spawn(move || accept_loop(listener, shared))?
        };
        log::info!("listening on {addr}");
        Ok(Self {
            addr,
            shared,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn runtime(&self) -> &Arc<Runtime> {
        &self.shared.runtime
    }

    pub fn connection_count(&self) -> usize {
        self.shared.connections.lock().expect("connections lock").len()
    }

    /// Stops accepting, closes every connection and stops the runtime.
    pub fn shutdown(mut self) -> Result<RuntimeSummary, PipelineError> {
        self.stop_accepting();
        self.shared.runtime.shutdown()
    }

    fn stop_accepting(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        for s in self.shared.connections.lock().expect("connections lock").values() {
            let _ = s.shutdown(Shutdown::Both);
        }
        let threads = std::mem::take(&mut *self.shared.threads.lock().expect("threads lock"));
        for t in threads {
            let _ = t.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop_accepting();
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let id = shared.next_conn.fetch_add(1, Ordering::Relaxed);
                let Ok(clone) = stream.try_clone() else { continue };
                shared.connections.lock().expect("connections lock").insert(id, clone);
                let s = shared.clone();
                let handle = std::thread::Builder::new().name(format!("conn-{id}")).spawn(move || {
                    if let Err(e) = serve_connection(stream, &s) {
                        log::debug!("connection {peer}: {e}");
                    }
                    s.connections.lock().expect("connections lock").remove(&id);
                });
                match handle {
                    Ok(h) => {
                        let mut threads = shared.threads.lock().expect("threads lock");
                        threads.retain(|t| !t.is_finished());
                        threads.push(h);
                    }
                    Err(e) => log::error!("cannot spawn connection thread: {e}"),
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

enum Route {
    Raw,
    WebSocket,
    Http(String),
}

fn sniff(stream: &TcpStream, timeout: Duration) -> io::Result<Route> {
    stream.set_nonblocking(false)?;
    let deadline = Instant::now() + timeout;
    let mut buf = [0u8; 8192];
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        stream.set_read_timeout(Some(left.max(Duration::from_millis(1))))?;
        let n = match stream.peek(&mut buf) {
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => 0,
            Err(e) => return Err(e),
        };
        let seen = &buf[..n];
        let http = seen.len() >= 4 && seen.starts_with(b"GET ");
        if n >= 4 && !http {
            return Ok(Route::Raw);
        }
        if http {
            if let Some(end) = seen.windows(4).position(|w| w == b"\r\n\r\n") {
                let head = String::from_utf8_lossy(&seen[..end]).into_owned();
                let upgrade = head.lines().skip(1).any(|l| {
                    l.split_once(':').is_some_and(|(k, v)| {
                        k.trim().eq_ignore_ascii_case("upgrade") && v.trim().eq_ignore_ascii_case("websocket")
                    })
                });
                if upgrade {
                    return Ok(Route::WebSocket);
                }
                let path = head.split_whitespace().nth(1).unwrap_or("/").to_string();
                return Ok(Route::Http(path));
            }
            if n == buf.len() {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "request header too large"));
            }
        }
        if Instant::now() >= deadline {
            return if http || n > 0 && b"GET ".starts_with(seen) {
                Err(io::Error::new(io::ErrorKind::TimedOut, "incomplete request header"))
            } else {
                Ok(Route::Raw)
            };
        }
        if n > 0 {
            std::thread::sleep(Duration::from_millis(2));
        }
    }
}

fn serve_connection(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_nodelay(true)?;
    match sniff(&stream, shared.options.sniff_timeout)? {
        Route::Raw => serve_raw(stream, shared),
        Route::WebSocket => serve_websocket(stream, shared),
        Route::Http(path) => serve_http(stream, shared, &path),
    }
}

/// Parses one client message body and acts on it; returns the reply owed
/// to the sender, if any.
fn handle_body(body: &[u8], shared: &Shared) -> Option<ServerMessage> {
    match ClientMessage::decode_body(body) {
        Ok(ClientMessage::Frame(f)) => {
            let ingest = shared.runtime.ingest();
            ingest.mark_client();
            ingest
                .push_board(f)
                .err()
                .map(|e| ServerMessage::Error(ErrorReply::new(ErrorCode::BadFrame, e.to_string())))
        }
        Ok(ClientMessage::Control(Control::Info)) => Some(ServerMessage::Info(Box::new(shared.info.clone()))),
        Ok(ClientMessage::Control(c)) => {
            shared.runtime.control(c);
            None
        }
        Err(e) => {
            log::debug!("malformed client message: {}", e.message);
            Some(ServerMessage::Error(e))
        }
    }
}

/// Queues a reply behind any pending broadcasts. A full outbox means the
/// client is not reading; it is dropped like any slow subscriber.
fn reply(sub: &Subscription, msg: ServerMessage, stream: &TcpStream) {
    if sub.replies.try_send(Arc::new(msg)).is_err() {
        let _ = stream.shutdown(Shutdown::Both);
    }
}

fn subscribe(shared: &Shared, stream: &TcpStream) -> io::Result<Subscription> {
    let kick = stream.try_clone()?;
    let sub = shared.runtime.subscribe(shared.options.outbox, move || {
        let _ = kick.shutdown(Shutdown::Both);
    });
    Ok(sub)
}

fn serve_raw(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_read_timeout(None)?;
    let sub = subscribe(shared, &stream)?;
    let writer = {
        let mut out = BufWriter::new(stream.try_clone()?);
        let messages = sub.messages.clone();
        let info = ServerMessage::Info(Box::new(shared.info.clone()));
        std::thread::spawn(move || {
            let result = (|| -> io::Result<()> {
                write_message(&mut out, &info.encode_body())?;
                out.flush()?;
                for m in messages {
                    write_message(&mut out, &m.encode_body())?;
                    out.flush()?;
                }
                Ok(())
            })();
            if let Ok(s) = out.into_inner() {
                let _ = s.shutdown(Shutdown::Both);
            }
            result
        })
    };
    let mut input = io::BufReader::new(stream.try_clone()?);
    let outcome = loop {
        match read_message(&mut input, MAX_MESSAGE_LEN) {
            Ok(Incoming::Body(body)) => {
                if let Some(r) = handle_body(&body, shared) {
                    reply(&sub, r, &stream);
                }
            }
            Ok(Incoming::Oversize(len)) => reply(
                &sub,
                ServerMessage::Error(ErrorReply::new(
                    ErrorCode::Oversize,
                    format!("message of {len} bytes exceeds {MAX_MESSAGE_LEN}"),
                )),
                &stream,
            ),
            Ok(Incoming::Closed) => break Ok(()),
            Err(e) => break Err(e),
        }
    };
    shared.runtime.unsubscribe(sub.id);
    drop(sub);
    let _ = writer.join();
    outcome
}

fn serve_websocket(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut ws = tungstenite::accept(stream.try_clone()?).map_err(|e| io::Error::other(e.to_string()))?;
    stream.set_read_timeout(Some(Duration::from_millis(10)))?;
    let sub = subscribe(shared, &stream)?;
    let info = ServerMessage::Info(Box::new(shared.info.clone()));
    let send = |ws: &mut tungstenite::WebSocket<TcpStream>, m: &ServerMessage| {
        ws.send(Message::binary(m.encode_body()))
            .map_err(|e| io::Error::other(e.to_string()))
    };
    let outcome = (|| -> io::Result<()> {
        send(&mut ws, &info)?;
        loop {
            match ws.read() {
                Ok(Message::Binary(body)) => {
                    if let Some(r) = handle_body(&body, shared) {
                        reply(&sub, r, &stream);
                    }
                }
                Ok(Message::Text(_)) => reply(
                    &sub,
                    ServerMessage::Error(ErrorReply::new(ErrorCode::UnknownTag, "text messages are not accepted")),
                    &stream,
                ),
                Ok(Message::Close(_)) => return Ok(()),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
                Err(e) => return Err(io::Error::other(e.to_string())),
            }
            loop {
                match sub.messages.try_recv() {
                    Ok(m) => send(&mut ws, &m)?,
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => return Ok(()),
                }
            }
        }
    })();
    shared.runtime.unsubscribe(sub.id);
    let _ = stream.shutdown(Shutdown::Both);
    outcome
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

/// Maps a request path into `root`, refusing anything that escapes it.
fn resolve_static(root: &Path, request: &str) -> Option<PathBuf> {
    let path = request.split(['?', '#']).next().unwrap_or("/");
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let full = root.join(rel);
    if full.is_dir() {
        Some(full.join("index.html"))
    } else {
        Some(full)
    }
}

fn serve_http(mut stream: TcpStream, shared: &Shared, path: &str) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(2)))?;
    // Consume the request header peeked during sniffing.
    let mut head = Vec::new();
    let mut byte = [0u8];
    while !head.ends_with(b"\r\n\r\n") {
        if stream.read(&mut byte)? == 0 {
            break;
        }
        head.push(byte[0]);
    }
    let (status, kind, body) = match path.split('?').next().unwrap_or(path) {
        "/info.json" => (
            "200 OK",
            "application/json",
            serde_json::to_vec(&shared.info).expect("serializes"),
        ),
        "/zones.json" => (
            "200 OK",
            "application/json",
            serde_json::to_vec(&shared.info.zones).expect("serializes"),
        ),
        _ => match &shared.options.ui_dir {
            None => ("404 Not Found", "text/plain", b"no UI directory configured\n".to_vec()),
            Some(root) => match resolve_static(root, path).and_then(|p| std::fs::read(&p).ok().map(|b| (p, b))) {
                Some((p, b)) => ("200 OK", content_type(&p), b),
                None => ("404 Not Found", "text/plain", b"not found\n".to_vec()),
            },
        },
    };
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: {kind}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    stream.write_all(&body)?;
    stream.flush()
}
