//! UI port: static assets, the WebSocket command channel, and the same
//! channel as raw newline-delimited JSON for scripts.
//!
//! A connection is classified by peeking at its first bytes. An HTTP request
//! asking for a WebSocket upgrade becomes a command channel, any other HTTP
//! request is answered from the assets, and a client that sends nothing
//! recognizable as HTTP (or nothing at all) gets the raw line protocol.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use tungstenite::{Message, WebSocket};

use crate::server::{ConnId, Input};

const INDEX_HTML: &str = include_str!("../assets/index.html");
const CLASSIFY_WAIT: Duration = Duration::from_millis(300);
const WS_POLL: Duration = Duration::from_millis(20);

/// Where HTTP requests are answered from; `None` in headless mode.
#[derive(Debug, Clone)]
pub enum Assets {
    Embedded,
    Dir(PathBuf),
}

pub fn spawn_acceptor(listener: TcpListener, tx: Sender<Input>, assets: Option<Assets>) {
    let next = Arc::new(AtomicU64::new(1));
    thread::spawn(move || {
        for stream in listener.incoming() {
            match stream {
                Ok(stream) => {
                    let conn = ConnId(next.fetch_add(1, Ordering::Relaxed));
                    let (tx, assets) = (tx.clone(), assets.clone());
                    thread::spawn(move || {
                        if let Err(e) = handle(stream, conn, &tx, assets.as_ref()) {
                            log::debug!("ui connection {}: {e}", conn.0);
                        }
                        let _ = tx.send(Input::Disconnected(conn));
                    });
                }
                Err(e) => log::warn!("ui port: {e}"),
            }
        }
    });
}

enum Kind {
    Upgrade,
    Http,
    Raw,
}

fn looks_like_http(head: &[u8]) -> bool {
    ["GET ", "HEAD ", "POST ", "PUT ", "OPTIONS "]
        .iter()
        .any(|m| head.starts_with(m.as_bytes()) || m.as_bytes().starts_with(head) && !head.is_empty())
}

fn classify(stream: &TcpStream) -> io::Result<Kind> {
    let deadline = Instant::now() + CLASSIFY_WAIT;
    let mut buf = [0u8; 4096];
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Ok(Kind::Raw);
        }
        stream.set_read_timeout(Some(left))?;
        let n = match stream.peek(&mut buf) {
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                return Ok(Kind::Raw)
            }
            Err(e) => return Err(e),
        };
        let head = &buf[..n];
        if !looks_like_http(head) {
            return Ok(Kind::Raw);
        }
        if let Some(end) = find(head, b"\r\n\r\n") {
            let text = String::from_utf8_lossy(&head[..end]).to_ascii_lowercase();
            let upgrade = text
                .lines()
                .any(|l| l.starts_with("upgrade:") && l.contains("websocket"));
            return Ok(if upgrade { Kind::Upgrade } else { Kind::Http });
        }
        if n == buf.len() {
            return Ok(Kind::Http);
        }
        thread::sleep(Duration::from_millis(5));
    }
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

fn handle(stream: TcpStream, conn: ConnId, tx: &Sender<Input>, assets: Option<&Assets>) -> io::Result<()> {
    let kind = classify(&stream)?;
    stream.set_read_timeout(None)?;
    match kind {
        Kind::Http => serve_asset(stream, assets),
        Kind::Upgrade => websocket(stream, conn, tx),
        Kind::Raw => raw(stream, conn, tx),
    }
}

fn register(conn: ConnId, tx: &Sender<Input>) -> Receiver<String> {
    let (outbox, inbox) = mpsc::channel();
    let _ = tx.send(Input::Connected { conn, outbox });
    inbox
}

fn raw(stream: TcpStream, conn: ConnId, tx: &Sender<Input>) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let pushes = register(conn, tx);
    let mut writer = stream.try_clone()?;
    thread::spawn(move || {
        for push in pushes {
            if writer
                .write_all(push.as_bytes())
                .and_then(|_| writer.write_all(b"\n"))
                .and_then(|_| writer.flush())
                .is_err()
            {
                break;
            }
        }
        let _ = writer.shutdown(std::net::Shutdown::Both);
    });
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if tx.send(Input::Command { conn, text: line }).is_err() {
            break;
        }
    }
    Ok(())
}

fn ws_error(e: tungstenite::Error) -> io::Error {
    match e {
        tungstenite::Error::Io(e) => e,
        other => io::Error::other(other.to_string()),
    }
}

fn websocket(stream: TcpStream, conn: ConnId, tx: &Sender<Input>) -> io::Result<()> {
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(WS_POLL))?;
    let pushes = register(conn, tx);
    loop {
        loop {
            match pushes.try_recv() {
                Ok(push) => ws.send(Message::text(push)).map_err(ws_error)?,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    return Ok(());
                }
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                if tx.send(Input::Command { conn, text: text.to_string() }).is_err() {
                    return Ok(());
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(ws_error(e)),
        }
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

/// Maps a request path onto a relative file path, refusing anything that
/// would leave the asset root.
fn relative_path(target: &str) -> Option<PathBuf> {
    let path = target.split(['?', '#']).next().unwrap_or("/");
    let path = if path.ends_with('/') { format!("{path}index.html") } else { path.to_owned() };
    let rel = PathBuf::from(path.trim_start_matches('/'));
    rel.components().all(|c| matches!(c, Component::Normal(_))).then_some(rel)
}

fn lookup(assets: &Assets, rel: &Path) -> Option<Vec<u8>> {
    match assets {
        Assets::Embedded => (rel == Path::new("index.html")).then(|| INDEX_HTML.as_bytes().to_vec()),
        Assets::Dir(root) => fs::read(root.join(rel)).ok(),
    }
}

fn serve_asset(stream: TcpStream, assets: Option<&Assets>) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    loop {
        let mut header = String::new();
        if reader.read_line(&mut header)? == 0 || header == "\r\n" || header == "\n" {
            break;
        }
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("");
    let target = parts.next().unwrap_or("/");
    let found = assets
        .zip(relative_path(target))
        .and_then(|(assets, rel)| lookup(assets, &rel).map(|body| (body, content_type(&rel))));
    let mut out = stream;
    let (status, body, kind) = match (method, found) {
        ("GET" | "HEAD", Some((body, kind))) => ("200 OK", body, kind),
        ("GET" | "HEAD", None) => ("404 Not Found", b"not found\n".to_vec(), "text/plain"),
        _ => ("405 Method Not Allowed", b"method not allowed\n".to_vec(), "text/plain"),
    };
    write!(
        out,
        "HTTP/1.1 {status}\r\nContent-Type: {kind}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    if method != "HEAD" {
        out.write_all(&body)?;
    }
    out.flush()?;
    // let the client read everything before the socket closes
    let _ = out.shutdown(std::net::Shutdown::Write);
    let _ = reader.read_to_end(&mut Vec::new());
    Ok(())
}
