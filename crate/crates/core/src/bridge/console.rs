//! Static file server for the operator console's built assets.
//!
//! `GET /config.json` tells the page where the WebSocket is. Without an asset
//! directory a placeholder page is served.

use log::{debug, info};
use std::fs;
use std::io;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;
use tiny_http::{Header, Response, Server};

const PLACEHOLDER: &str = "<!doctype html><title>hatpic</title>\
<p>Console assets are not installed. Start <code>hatpicctl serve</code> with \
<code>console_dir</code> pointing at the built console.</p>";

pub struct ConsoleServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ConsoleServer {
    pub fn bind(addr: &str, dir: Option<PathBuf>, ws_addr: SocketAddr) -> io::Result<Self> {
        let server = Server::http(addr).map_err(|e| io::Error::new(io::ErrorKind::AddrInUse, e.to_string()))?;
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::new(io::ErrorKind::Unsupported, "not an IP listener"))?;
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let stop = stop.clone();
            thread::Builder::new()
                .name("console-http".into())
                .spawn(move || serve(server, dir, ws_addr, &stop))?
        };
        info!("console assets on http://{local}/");
        Ok(Self {
            addr: local,
            stop,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ConsoleServer {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

fn serve(server: Server, dir: Option<PathBuf>, ws_addr: SocketAddr, stop: &AtomicBool) {
    while !stop.load(Ordering::Relaxed) {
        let req = match server.recv_timeout(Duration::from_millis(50)) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(e) => {
                debug!("console server error: {e}");
                continue;
            }
        };
        let path = req.url().split('?').next().unwrap_or("/").to_owned();
        let (status, body, mime) = respond(&path, dir.as_deref(), ws_addr);
        let header = Header::from_bytes("Content-Type", mime).expect("static header");
        let _ = req.respond(Response::from_data(body).with_status_code(status).with_header(header));
    }
}

fn respond(path: &str, dir: Option<&Path>, ws_addr: SocketAddr) -> (u16, Vec<u8>, &'static str) {
    if path == "/config.json" {
        let body = serde_json::json!({ "ws": format!("ws://{ws_addr}") }).to_string();
        return (200, body.into_bytes(), "application/json");
    }
    let Some(dir) = dir else {
        return if path == "/" || path == "/index.html" {
            (200, PLACEHOLDER.as_bytes().to_vec(), "text/html; charset=utf-8")
        } else {
            (404, b"not found".to_vec(), "text/plain")
        };
    };
    let rel = path.trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = Path::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return (403, b"forbidden".to_vec(), "text/plain");
    }
    match fs::read(dir.join(rel)) {
        Ok(body) => (200, body, mime_for(rel)),
        Err(_) => (404, b"not found".to_vec(), "text/plain"),
    }
}

fn mime_for(path: &Path) -> &'static str {
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_are_confined() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("index.html"), "<p>hi</p>").unwrap();
        let ws: SocketAddr = "127.0.0.1:7401".parse().unwrap();
        let (s, body, mime) = respond("/", Some(dir.path()), ws);
        assert_eq!((s, body.as_slice(), mime), (200, &b"<p>hi</p>"[..], "text/html; charset=utf-8"));
        assert_eq!(respond("/../etc/passwd", Some(dir.path()), ws).0, 403);
        assert_eq!(respond("/missing.js", Some(dir.path()), ws).0, 404);
        let (s, body, _) = respond("/config.json", None, ws);
        assert_eq!(s, 200);
        assert_eq!(body, br#"{"ws":"ws://127.0.0.1:7401"}"#);
        assert_eq!(respond("/", None, ws).0, 200);
    }
}
