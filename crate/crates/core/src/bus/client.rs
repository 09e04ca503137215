use super::BusMessage;
use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

/// Blocking line client for the TCP bus.
pub struct BusClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    partial: Vec<u8>,
    /// Non-JSON lines received (`ERR ...`, `PONG`), oldest first.
    pub replies: Vec<String>,
}

impl BusClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
            partial: Vec::new(),
            replies: Vec::new(),
        })
    }

    pub fn send_line(&mut self, line: &str) -> io::Result<()> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.writer.write_all(&buf)
    }

    pub fn subscribe(&mut self, pattern: &str) -> io::Result<()> {
        self.send_line(&format!("SUB {pattern}"))
    }

    pub fn publish(&mut self, msg: &BusMessage) -> io::Result<()> {
        let line = msg
            .to_json()
            .map_err(|e| io::Error::new(ErrorKind::InvalidInput, e))?;
        self.send_line(&line)
    }

    /// Round trip through the server; every `SUB` sent before it is active
    /// once this returns. JSON messages received meanwhile are returned.
    pub fn sync(&mut self, timeout: Duration) -> io::Result<Vec<BusMessage>> {
        self.send_line("PING")?;
        let deadline = Instant::now() + timeout;
        let mut got = Vec::new();
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(io::Error::new(ErrorKind::TimedOut, "no PONG from bus"));
            }
            match self.read_line(left)? {
                Some(Line::Msg(m)) => got.push(m),
                Some(Line::Reply(r)) if r == "PONG" => return Ok(got),
                Some(Line::Reply(r)) => self.replies.push(r),
                None => {}
            }
        }
    }

    /// Next JSON message, or `None` on timeout. Control replies are stashed
    /// in [`BusClient::replies`].
    pub fn recv(&mut self, timeout: Duration) -> io::Result<Option<BusMessage>> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            match self.read_line(left)? {
                Some(Line::Msg(m)) => return Ok(Some(m)),
                Some(Line::Reply(r)) => self.replies.push(r),
                None => return Ok(None),
            }
        }
    }

    /// Next raw reply line such as `ERR ...`.
    pub fn recv_reply(&mut self, timeout: Duration) -> io::Result<Option<String>> {
        if !self.replies.is_empty() {
            return Ok(Some(self.replies.remove(0)));
        }
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            match self.read_line(left)? {
                Some(Line::Reply(r)) => return Ok(Some(r)),
                Some(Line::Msg(_)) => {}
                None => return Ok(None),
            }
        }
    }

    fn read_line(&mut self, timeout: Duration) -> io::Result<Option<Line>> {
        self.reader
            .get_ref()
            .set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        match self.reader.read_until(b'\n', &mut self.partial) {
            Ok(0) => Err(io::Error::new(ErrorKind::UnexpectedEof, "bus closed")),
            Ok(_) if self.partial.last() == Some(&b'\n') => {
                let text = String::from_utf8_lossy(&self.partial).trim().to_owned();
                self.partial.clear();
                Ok(Some(match BusMessage::from_json(&text) {
                    Ok(m) => Line::Msg(m),
                    Err(_) => Line::Reply(text),
                }))
            }
            Ok(_) => Err(io::Error::new(ErrorKind::UnexpectedEof, "bus closed mid-line")),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

enum Line {
    Msg(BusMessage),
    Reply(String),
}
