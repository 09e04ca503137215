//! WebSocket endpoint for the operator console.
//!
//! Each client sees every bus message as a text frame holding the same JSON
//! line. Text frames from the client are published on the bus when their
//! topic is under `operator/`; anything else is dropped and counted.

use crate::bus::{topics, Bus, BusMessage, TopicPattern, SUBSCRIBER_QUEUE};
use log::{debug, info, warn};
use std::io::{self, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;
use tungstenite::{Error as WsError, Message, WebSocket};

const POLL: Duration = Duration::from_millis(10);

pub struct WsServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl WsServer {
    pub fn bind(addr: impl ToSocketAddrs, bus: Bus) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let accept = {
            let stop = stop.clone();
            thread::Builder::new()
                .name("ws-accept".into())
                .spawn(move || accept_loop(listener, bus, stop))?
        };
        info!("websocket listening on {addr}");
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

impl Drop for WsServer {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

fn accept_loop(listener: TcpListener, bus: Bus, stop: Arc<AtomicBool>) {
    let mut clients: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let (bus, stop) = (bus.clone(), stop.clone());
                match thread::Builder::new()
                    .name(format!("ws-{peer}"))
                    .spawn(move || serve_client(stream, peer, bus, stop))
                {
                    Ok(h) => clients.push(h),
                    Err(e) => warn!("cannot spawn websocket client thread: {e}"),
                }
                clients.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                warn!("websocket accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
    for h in clients {
        let _ = h.join();
    }
}

fn serve_client(stream: TcpStream, peer: SocketAddr, bus: Bus, stop: Arc<AtomicBool>) {
    let setup = stream
        .set_nonblocking(false)
        .and_then(|_| stream.set_nodelay(true))
        .and_then(|_| stream.set_read_timeout(Some(Duration::from_secs(2))));
    if setup.is_err() {
        return;
    }
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            debug!("websocket handshake with {peer} failed: {e}");
            return;
        }
    };
    if ws.get_ref().set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    debug!("websocket client {peer} connected");
    let (sink, rx) = bus.open_sink(SUBSCRIBER_QUEUE);
    bus.add_route(&sink, "**".parse::<TopicPattern>().expect("valid pattern"));
    let mut sent_torque = false;
    'client: while !stop.load(Ordering::Relaxed) {
        if sink.overflowed() {
            warn!("websocket client {peer} stalled, disconnecting");
            break;
        }
        for line in rx.try_iter() {
            if ws.send(Message::Text(line.to_string())).is_err() {
                break 'client;
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => sent_torque |= route_inbound(&text, &bus),
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(WsError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    bus.remove_sink(&sink);
    close(&mut ws);
    if sent_torque {
        // a console that goes away lets go of the knob
        let _ = bus.publish(&BusMessage::new(topics::OPERATOR_TORQUE, 0.0).num("tau", 0.0));
    }
    debug!("websocket client {peer} gone");
}

/// Publishes an inbound console message. Returns whether it was a torque.
fn route_inbound(text: &str, bus: &Bus) -> bool {
    match BusMessage::from_json(text) {
        Ok(msg) if msg.topic.starts_with("operator/") => {
            let torque = msg.topic == topics::OPERATOR_TORQUE;
            let _ = bus.publish(&msg);
            torque
        }
        Ok(msg) => {
            debug!("console may not publish {}", msg.topic);
            bus.counters().malformed.fetch_add(1, Ordering::Relaxed);
            false
        }
        Err(e) => {
            debug!("malformed console message: {e}");
            bus.counters().malformed.fetch_add(1, Ordering::Relaxed);
            false
        }
    }
}

fn close(ws: &mut WebSocket<TcpStream>) {
    let _ = ws.close(None);
    let _ = ws.flush();
}
