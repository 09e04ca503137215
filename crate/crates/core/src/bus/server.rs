//! TCP front end of the bus.
//!
//! Per connection: one reader (this side parses `SUB`, `PING` and JSON lines)
//! and one writer draining the connection's queue. The writer is the only
//! thread writing to the socket, so control replies are queued too.

use super::{Bus, BusMessage, Sink, TopicPattern, SUBSCRIBER_QUEUE};
use crossbeam::channel::{Receiver, RecvTimeoutError};
use log::{debug, info, warn};
use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

const POLL: Duration = Duration::from_millis(50);
/// Lines longer than this are dropped as malformed.
pub const MAX_LINE: usize = 64 * 1024;

pub struct BusServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl BusServer {
    /// Binds immediately, so a busy port is reported to the caller.
    pub fn bind(addr: impl ToSocketAddrs, bus: Bus) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let accept = {
            let stop = stop.clone();
            thread::Builder::new()
                .name("bus-accept".into())
                .spawn(move || accept_loop(listener, bus, stop))?
        };
        info!("bus listening on {addr}");
        Ok(Self {
            addr,
            stop,
            accept: Some(accept),
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
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for BusServer {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

fn accept_loop(listener: TcpListener, bus: Bus, stop: Arc<AtomicBool>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                debug!("bus client {peer} connected");
                let (bus, stop) = (bus.clone(), stop.clone());
                let spawned = thread::Builder::new()
                    .name(format!("bus-{peer}"))
                    .spawn(move || serve_client(stream, bus, stop));
                match spawned {
                    Ok(h) => workers.push(h),
                    Err(e) => warn!("cannot spawn bus client thread: {e}"),
                }
                workers.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                warn!("bus accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
    for h in workers {
        let _ = h.join();
    }
}

fn serve_client(stream: TcpStream, bus: Bus, stop: Arc<AtomicBool>) {
    let _ = stream.set_nodelay(true);
    if stream.set_nonblocking(false).is_err() || stream.set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    let writer_stream = match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    };
    let (sink, rx) = bus.open_sink(SUBSCRIBER_QUEUE);
    let closed = Arc::new(AtomicBool::new(false));
    let writer = {
        let (sink, stop, closed) = (sink.clone(), stop.clone(), closed.clone());
        thread::spawn(move || write_loop(writer_stream, rx, &sink, &stop, &closed))
    };
    read_loop(&stream, &bus, &sink, &stop, &closed);
    closed.store(true, Ordering::Relaxed);
    bus.remove_sink(&sink);
    let _ = writer.join();
    let _ = stream.shutdown(Shutdown::Both);
}

fn read_loop(stream: &TcpStream, bus: &Bus, sink: &Arc<Sink>, stop: &AtomicBool, closed: &AtomicBool) {
    let mut reader = BufReader::new(stream);
    let mut line = Vec::new();
    while !stop.load(Ordering::Relaxed) && !closed.load(Ordering::Relaxed) {
        match reader.read_until(b'\n', &mut line) {
            Ok(0) => return,
            Ok(_) if line.last() != Some(&b'\n') => {
                // EOF in the middle of a line
                return;
            }
            Ok(_) => {
                handle_line(&line, bus, sink);
                line.clear();
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(_) => return,
        }
        if line.len() > MAX_LINE {
            bus.counters().malformed.fetch_add(1, Ordering::Relaxed);
            sink.send_line("ERR line too long");
            return;
        }
    }
}

fn handle_line(raw: &[u8], bus: &Bus, sink: &Arc<Sink>) {
    let Ok(text) = std::str::from_utf8(raw) else {
        bus.counters().malformed.fetch_add(1, Ordering::Relaxed);
        return;
    };
    let text = text.trim();
    if text.is_empty() {
        return;
    }
    if text.starts_with('{') {
        match BusMessage::from_json(text) {
            Ok(msg) => {
                let _ = bus.publish(&msg);
            }
            Err(e) => {
                bus.counters().malformed.fetch_add(1, Ordering::Relaxed);
                debug!("dropping malformed bus line: {e}");
            }
        }
        return;
    }
    let (cmd, arg) = text.split_once(' ').unwrap_or((text, ""));
    match cmd {
        "SUB" => match arg.trim().parse::<TopicPattern>() {
            Ok(p) => bus.add_route(sink, p),
            Err(e) => {
                sink.send_line(&format!("ERR {e}"));
            }
        },
        "PING" => {
            sink.send_line("PONG");
        }
        _ => {
            sink.send_line(&format!("ERR unknown command {cmd:?}"));
        }
    }
}

fn write_loop(
    mut stream: TcpStream,
    rx: Receiver<Arc<str>>,
    sink: &Sink,
    stop: &AtomicBool,
    closed: &AtomicBool,
) {
    let mut buf = Vec::with_capacity(4096);
    loop {
        if sink.overflowed() {
            warn!("bus subscriber stalled, disconnecting");
            let _ = stream.shutdown(Shutdown::Both);
            closed.store(true, Ordering::Relaxed);
            return;
        }
        if stop.load(Ordering::Relaxed) || closed.load(Ordering::Relaxed) {
            return;
        }
        match rx.recv_timeout(POLL) {
            Ok(first) => {
                buf.clear();
                for line in std::iter::once(first).chain(rx.try_iter()) {
                    buf.extend_from_slice(line.as_bytes());
                    buf.push(b'\n');
                }
                if stream.write_all(&buf).is_err() {
                    closed.store(true, Ordering::Relaxed);
                    let _ = stream.shutdown(Shutdown::Both);
                    return;
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
    }
}
