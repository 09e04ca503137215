//! Byte links between the emulated device and the host bridge.
//!
//! Three flavours with identical framing: an in-process pipe, TCP (device
//! listens, host connects), and a pseudo-terminal pair in raw mode. Every
//! reader handed out here times out periodically (`TimedOut`) so the loops
//! driving them can observe their stop flags.

use crate::firmware::{run_device_reader, FrameSink, LoopIo};
use crossbeam::channel::{self, Receiver, RecvTimeoutError, Sender};
use log::{debug, info, warn};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::os::fd::AsFd;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

pub const DEFAULT_TCP_ADDR: &str = "127.0.0.1:7410";
/// How long a link reader blocks before reporting `TimedOut`.
pub const READ_POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportSpec {
    Inproc,
    Tcp(String),
    Pty,
}

impl FromStr for TransportSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(Self::Inproc),
            "pty" => Ok(Self::Pty),
            "tcp" => Ok(Self::Tcp(DEFAULT_TCP_ADDR.to_owned())),
            _ => match s.strip_prefix("tcp:") {
                Some(addr) if addr.parse::<SocketAddr>().is_ok() => Ok(Self::Tcp(addr.to_owned())),
                Some(addr) => Err(format!("bad tcp address {addr:?}, expected host:port")),
                None => Err(format!("unknown transport {s:?}, expected inproc, tcp[:host:port] or pty")),
            },
        }
    }
}

impl fmt::Display for TransportSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Inproc => f.write_str("inproc"),
            Self::Tcp(addr) => write!(f, "tcp:{addr}"),
            Self::Pty => f.write_str("pty"),
        }
    }
}

pub type BoxRead = Box<dyn Read + Send>;
pub type BoxWrite = Box<dyn Write + Send>;

/// One direction of an in-process pipe.
pub struct PipeReader {
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    pos: usize,
    timeout: Duration,
}

pub struct PipeWriter {
    tx: Sender<Vec<u8>>,
}

impl Read for PipeReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.pending.len() {
            match self.rx.recv_timeout(self.timeout) {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.pos = 0;
                }
                Err(RecvTimeoutError::Timeout) => return Err(ErrorKind::TimedOut.into()),
                Err(RecvTimeoutError::Disconnected) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.pos);
        buf[..n].copy_from_slice(&self.pending[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

impl Write for PipeWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::from(ErrorKind::BrokenPipe))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub struct PipeEnd {
    pub reader: PipeReader,
    pub writer: PipeWriter,
}

/// A connected pair of in-process duplex endpoints.
pub fn pipe() -> (PipeEnd, PipeEnd) {
    let (a_tx, a_rx) = channel::unbounded();
    let (b_tx, b_rx) = channel::unbounded();
    let end = |rx, tx| PipeEnd {
        reader: PipeReader {
            rx,
            pending: Vec::new(),
            pos: 0,
            timeout: READ_POLL,
        },
        writer: PipeWriter { tx },
    };
    (end(a_rx, b_tx), end(b_rx, a_tx))
}

/// Writer slot that can be swapped when the peer reconnects.
#[derive(Clone, Default)]
pub struct SharedWriter(Arc<Mutex<Option<BoxWrite>>>);

impl SharedWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self, w: Option<BoxWrite>) {
        *self.0.lock().unwrap() = w;
    }

    pub fn is_connected(&self) -> bool {
        self.0.lock().unwrap().is_some()
    }
}

impl FrameSink for SharedWriter {
    fn send(&self, bytes: &[u8]) -> io::Result<()> {
        let mut slot = self.0.lock().unwrap();
        let w = slot.as_mut().ok_or(ErrorKind::NotConnected)?;
        let res = w.write_all(bytes).and_then(|_| w.flush());
        if res.is_err() {
            *slot = None;
        }
        res
    }
}

/// Host side: produces a fresh (reader, writer) pair on each (re)connect.
pub trait Connector: Send {
    fn connect(&mut self) -> io::Result<(BoxRead, BoxWrite)>;
}

/// Hands out one prepared pair, then reports the link as gone.
pub struct OnceConnector(Option<(BoxRead, BoxWrite)>);

impl OnceConnector {
    pub fn new(reader: BoxRead, writer: BoxWrite) -> Self {
        Self(Some((reader, writer)))
    }
}

impl Connector for OnceConnector {
    fn connect(&mut self) -> io::Result<(BoxRead, BoxWrite)> {
        self.0.take().ok_or_else(|| ErrorKind::NotConnected.into())
    }
}

pub struct TcpConnector {
    pub addr: SocketAddr,
}

impl Connector for TcpConnector {
    fn connect(&mut self) -> io::Result<(BoxRead, BoxWrite)> {
        let s = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1))?;
        s.set_nodelay(true)?;
        s.set_read_timeout(Some(READ_POLL))?;
        let w = s.try_clone()?;
        Ok((Box::new(s), Box::new(w)))
    }
}

/// Opens the terminal at `path`, as a host driver would.
pub struct PtyConnector {
    pub path: PathBuf,
}

impl Connector for PtyConnector {
    fn connect(&mut self) -> io::Result<(BoxRead, BoxWrite)> {
        let f = open_tty(&self.path)?;
        let w = f.try_clone()?;
        Ok((Box::new(PolledFile::new(f)), Box::new(w)))
    }
}

fn open_tty(path: &PathBuf) -> io::Result<File> {
    use std::os::unix::fs::OpenOptionsExt;
    OpenOptions::new()
        .read(true)
        .write(true)
        .custom_flags(nix::libc::O_NOCTTY)
        .open(path)
}

/// File reader that waits at most [`READ_POLL`] for data.
pub struct PolledFile {
    file: File,
}

impl PolledFile {
    pub fn new(file: File) -> Self {
        Self { file }
    }
}

impl Read for PolledFile {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        use nix::poll::{poll, PollFd, PollFlags, PollTimeout};
        let mut fds = [PollFd::new(self.file.as_fd(), PollFlags::POLLIN)];
        let timeout = PollTimeout::try_from(READ_POLL.as_millis() as i32).unwrap_or(PollTimeout::NONE);
        match poll(&mut fds, timeout) {
            Ok(0) => Err(ErrorKind::TimedOut.into()),
            Ok(_) => self.file.read(buf),
            Err(nix::errno::Errno::EINTR) => Err(ErrorKind::Interrupted.into()),
            Err(e) => Err(io::Error::from(e)),
        }
    }
}

/// A pseudo-terminal pair with the line discipline in raw mode, so framed
/// bytes pass through unaltered.
pub struct PtyPair {
    pub master: File,
    pub slave: File,
    pub path: PathBuf,
}

pub fn open_raw_pty() -> io::Result<PtyPair> {
    use nix::pty::openpty;
    use nix::sys::termios::{cfmakeraw, tcgetattr, tcsetattr, SetArg};
    let pty = openpty(None, None).map_err(io::Error::from)?;
    let mut attrs = tcgetattr(&pty.slave).map_err(io::Error::from)?;
    cfmakeraw(&mut attrs);
    tcsetattr(&pty.slave, SetArg::TCSANOW, &attrs).map_err(io::Error::from)?;
    let path = nix::unistd::ttyname(&pty.slave).map_err(io::Error::from)?;
    Ok(PtyPair {
        master: File::from(pty.master),
        slave: File::from(pty.slave),
        path,
    })
}

/// Device half of a live link: its telemetry sink, the threads reading
/// host→device bytes, and a connector for the host.
pub struct DeviceLinkHandle {
    pub sink: SharedWriter,
    pub connector: Box<dyn Connector>,
    pub threads: Vec<JoinHandle<()>>,
    /// Human-readable endpoint (socket address or tty path).
    pub endpoint: String,
}

/// Sets up the device side of `spec` and starts feeding `io` from it.
pub fn open_device_link(
    spec: &TransportSpec,
    io: Arc<LoopIo>,
    stop: Arc<AtomicBool>,
) -> io::Result<DeviceLinkHandle> {
    let sink = SharedWriter::new();
    match spec {
        TransportSpec::Inproc => {
            let (dev, host) = pipe();
            sink.set(Some(Box::new(dev.writer)));
            let t = thread::Builder::new().name("device-rx".into()).spawn(move || {
                run_device_reader(dev.reader, &io, &stop);
            })?;
            Ok(DeviceLinkHandle {
                sink,
                connector: Box::new(OnceConnector::new(
                    Box::new(host.reader),
                    Box::new(host.writer),
                )),
                threads: vec![t],
                endpoint: "inproc".into(),
            })
        }
        TransportSpec::Tcp(addr) => {
            let listener = TcpListener::bind(addr)?;
            listener.set_nonblocking(true)?;
            let local = listener.local_addr()?;
            info!("device link listening on {local}");
            let dev_sink = sink.clone();
            let t = thread::Builder::new().name("device-rx".into()).spawn(move || {
                tcp_device_loop(listener, &dev_sink, &io, &stop)
            })?;
            Ok(DeviceLinkHandle {
                sink,
                connector: Box::new(TcpConnector { addr: local }),
                threads: vec![t],
                endpoint: local.to_string(),
            })
        }
        TransportSpec::Pty => {
            let pair = open_raw_pty()?;
            info!("device link on {}", pair.path.display());
            sink.set(Some(Box::new(pair.master.try_clone()?)));
            let path = pair.path.clone();
            let master = PolledFile::new(pair.master);
            // keeping the slave open means the master never sees EIO while
            // the host is between connections
            let slave = pair.slave;
            let t = thread::Builder::new().name("device-rx".into()).spawn(move || {
                let _slave = slave;
                run_device_reader(master, &io, &stop);
            })?;
            Ok(DeviceLinkHandle {
                sink,
                connector: Box::new(PtyConnector { path: path.clone() }),
                threads: vec![t],
                endpoint: path.display().to_string(),
            })
        }
    }
}

fn tcp_device_loop(listener: TcpListener, sink: &SharedWriter, io: &LoopIo, stop: &AtomicBool) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                debug!("host connected from {peer}");
                let configured = stream
                    .set_nonblocking(false)
                    .and_then(|_| stream.set_nodelay(true))
                    .and_then(|_| stream.set_read_timeout(Some(READ_POLL)))
                    .and_then(|_| stream.try_clone());
                match configured {
                    Ok(w) => {
                        sink.set(Some(Box::new(w)));
                        run_device_reader(stream, io, stop);
                        sink.set(None);
                        debug!("host {peer} disconnected");
                    }
                    Err(e) => warn!("cannot configure host connection: {e}"),
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                warn!("device accept failed: {e}");
                thread::sleep(READ_POLL);
            }
        }
    }
}

/// Lock-step link used by the deterministic simulator: every chunk written
/// on one side is read back in full from the other before the caller
/// continues.
pub enum SimLink {
    Inproc,
    Tcp { device: TcpStream, host: TcpStream },
    Pty { master: File, slave: File },
}

impl SimLink {
    pub fn open(spec: &TransportSpec) -> io::Result<Self> {
        match spec {
            TransportSpec::Inproc => Ok(Self::Inproc),
            TransportSpec::Tcp(addr) => {
                let listener = TcpListener::bind(addr)?;
                let host = TcpStream::connect(listener.local_addr()?)?;
                let (device, _) = listener.accept()?;
                for s in [&device, &host] {
                    s.set_nodelay(true)?;
                    s.set_read_timeout(Some(Duration::from_secs(5)))?;
                }
                Ok(Self::Tcp { device, host })
            }
            TransportSpec::Pty => {
                let pair = open_raw_pty()?;
                Ok(Self::Pty {
                    master: pair.master,
                    slave: pair.slave,
                })
            }
        }
    }

    pub fn device_to_host(&mut self, bytes: &[u8]) -> io::Result<Vec<u8>> {
        match self {
            Self::Inproc => Ok(bytes.to_vec()),
            Self::Tcp { device, host } => relay(device, host, bytes),
            Self::Pty { master, slave } => relay(master, slave, bytes),
        }
    }

    pub fn host_to_device(&mut self, bytes: &[u8]) -> io::Result<Vec<u8>> {
        match self {
            Self::Inproc => Ok(bytes.to_vec()),
            Self::Tcp { device, host } => relay(host, device, bytes),
            Self::Pty { master, slave } => relay(slave, master, bytes),
        }
    }
}

fn relay<W: Write, R: Read>(mut tx: W, mut rx: R, bytes: &[u8]) -> io::Result<Vec<u8>> {
    // the kernel buffers of both links are far larger than one tick's
    // traffic, so write-then-read cannot deadlock
    tx.write_all(bytes)?;
    tx.flush()?;
    let mut out = vec![0u8; bytes.len()];
    rx.read_exact(&mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_specs() {
        assert_eq!("inproc".parse(), Ok(TransportSpec::Inproc));
        assert_eq!("pty".parse(), Ok(TransportSpec::Pty));
        assert_eq!(
            "tcp:127.0.0.1:9000".parse(),
            Ok(TransportSpec::Tcp("127.0.0.1:9000".into()))
        );
        assert_eq!("tcp".parse(), Ok(TransportSpec::Tcp(DEFAULT_TCP_ADDR.into())));
        assert!("tcp:nowhere".parse::<TransportSpec>().is_err());
        assert!("serial".parse::<TransportSpec>().is_err());
        for s in ["inproc", "pty", "tcp:127.0.0.1:1"] {
            assert_eq!(s.parse::<TransportSpec>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn pipe_is_duplex_and_times_out() {
        let (mut a, mut b) = pipe();
        a.writer.write_all(b"hello").unwrap();
        let mut buf = [0u8; 3];
        b.reader.read_exact(&mut buf).unwrap();
        assert_eq!(&buf, b"hel");
        let mut rest = [0u8; 2];
        b.reader.read_exact(&mut rest).unwrap();
        assert_eq!(&rest, b"lo");
        assert_eq!(a.reader.read(&mut buf).unwrap_err().kind(), ErrorKind::TimedOut);
        drop(b);
        assert!(a.writer.write_all(b"x").is_err());
        assert_eq!(a.reader.read(&mut buf).unwrap(), 0);
    }

    #[test]
    fn sim_links_are_transparent() {
        let payload: Vec<u8> = (0..=255u8).collect();
        for spec in ["inproc", "tcp:127.0.0.1:0", "pty"] {
            let mut link = SimLink::open(&spec.parse().unwrap()).unwrap();
            assert_eq!(link.device_to_host(&payload).unwrap(), payload, "{spec}");
            assert_eq!(link.host_to_device(&payload).unwrap(), payload, "{spec}");
        }
    }

    #[test]
    fn shared_writer_drops_broken_peer() {
        let (a, b) = pipe();
        let sink = SharedWriter::new();
        assert_eq!(sink.send(b"x").unwrap_err().kind(), ErrorKind::NotConnected);
        sink.set(Some(Box::new(a.writer)));
        sink.send(b"ok").unwrap();
        drop(b);
        assert!(sink.send(b"x").is_err());
        assert!(!sink.is_connected());
    }
}
