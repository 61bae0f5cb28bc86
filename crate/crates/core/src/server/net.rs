//! Client connections.
//!
//! One TCP port serves two framings: newline-delimited JSON for plain socket
//! clients, and WebSocket text frames for browsers (detected by an HTTP `GET`
//! as the first bytes). Connection threads only decode and enqueue; the
//! simulation loop owns all state and hands back envelopes to send.
//!
//! Outgoing sequence numbers are assigned here, per connection, so every
//! client sees `1, 2, 3, ...` regardless of what other clients receive.

use crate::protocol::{Envelope, ErrorPayload, Payload, SeqCounter, SeqVerdict, Session};
use crossbeam_channel::{unbounded, Receiver, Sender, TryRecvError};
use log::{debug, warn};
use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

const SNIFF_TIMEOUT: Duration = Duration::from_millis(250);
use tungstenite::Message;

pub type ConnId = u64;

#[derive(Debug)]
pub enum Inbound {
    Connected { conn: ConnId, outbox: Sender<Envelope> },
    Frame { conn: ConnId, envelope: Envelope },
    Disconnected { conn: ConnId },
}

pub struct Listener {
    local_addr: SocketAddr,
    inbound: Receiver<Inbound>,
    shutdown: Arc<AtomicBool>,
}

impl Listener {
    pub fn bind<A: ToSocketAddrs>(addr: A) -> io::Result<Listener> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let (tx, rx) = unbounded();
        let shutdown = Arc::new(AtomicBool::new(false));
        let stop = shutdown.clone();
        thread::Builder::new().name("radnav-accept".into()).spawn(move || accept_loop(listener, tx, stop))?;
        Ok(Listener { local_addr, inbound: rx, shutdown })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn inbound(&self) -> &Receiver<Inbound> {
        &self.inbound
    }
}

impl Drop for Listener {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Inbound>, shutdown: Arc<AtomicBool>) {
    let next_id = AtomicU64::new(1);
    while !shutdown.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let conn = next_id.fetch_add(1, Ordering::Relaxed);
                debug!("connection {conn} from {peer}");
                let tx = tx.clone();
                let stop = shutdown.clone();
                let spawned = thread::Builder::new()
                    .name(format!("radnav-conn-{conn}"))
                    .spawn(move || serve_connection(conn, stream, tx, stop));
                if let Err(e) = spawned {
                    warn!("cannot spawn connection thread: {e}");
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

/// WebSocket clients open with an HTTP `GET`; anything else, including a
/// client that stays silent, is served as newline-delimited JSON.
fn sniff_websocket(stream: &TcpStream) -> bool {
    let deadline = Instant::now() + SNIFF_TIMEOUT;
    let _ = stream.set_read_timeout(Some(SNIFF_TIMEOUT));
    let mut head = [0u8; 4];
    let found = loop {
        match stream.peek(&mut head) {
            Ok(n) if n == head.len() => break &head == b"GET ",
            Ok(0) => break false,
            Ok(n) if !b"GET ".starts_with(&head[..n]) => break false,
            Ok(_) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            _ => break false,
        }
    };
    let _ = stream.set_read_timeout(None);
    found
}

fn serve_connection(conn: ConnId, stream: TcpStream, tx: Sender<Inbound>, shutdown: Arc<AtomicBool>) {
    if let Err(e) = stream.set_nonblocking(false) {
        warn!("connection {conn}: {e}");
        return;
    }
    let _ = stream.set_nodelay(true);
    let is_websocket = sniff_websocket(&stream);
    let (out_tx, out_rx) = unbounded();
    if tx.send(Inbound::Connected { conn, outbox: out_tx.clone() }).is_err() {
        return;
    }
    let result = if is_websocket {
        serve_websocket(conn, stream, &tx, &out_tx, out_rx, &shutdown)
    } else {
        serve_lines(conn, stream, &tx, &out_tx, out_rx)
    };
    if let Err(e) = result {
        debug!("connection {conn} closed: {e}");
    }
    let _ = tx.send(Inbound::Disconnected { conn });
}

/// Decodes one frame and applies sequence checks. Returns an envelope to
/// forward, or sends an error back on the connection's own outbox.
fn accept_frame(conn: ConnId, bytes: &[u8], session: &mut Session, tx: &Sender<Inbound>, outbox: &Sender<Envelope>) -> bool {
    match Envelope::decode(bytes) {
        Ok(envelope) => match session.accept(envelope.seq) {
            SeqVerdict::Duplicate => {
                debug!("connection {conn}: dropped duplicate seq {}", envelope.seq);
                true
            }
            verdict => {
                if let SeqVerdict::Gap { missing } = verdict {
                    warn!("connection {conn}: {missing} sequence numbers skipped before {}", envelope.seq);
                }
                tx.send(Inbound::Frame { conn, envelope }).is_ok()
            }
        },
        Err(e) => {
            let reply = Envelope::new(
                0,
                0.0,
                Payload::Error(ErrorPayload { code: "decode_error".into(), detail: e.to_string(), cause_seq: None }),
            );
            outbox.send(reply).is_ok()
        }
    }
}

fn serve_lines(
    conn: ConnId,
    stream: TcpStream,
    tx: &Sender<Inbound>,
    outbox: &Sender<Envelope>,
    out_rx: Receiver<Envelope>,
) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let writer_thread = thread::Builder::new().name(format!("radnav-write-{conn}")).spawn(move || {
        let mut seq = SeqCounter::new();
        for mut env in out_rx {
            env.seq = seq.next_seq();
            let Ok(mut bytes) = env.encode() else { continue };
            bytes.push(b'\n');
            if writer.write_all(&bytes).is_err() {
                break;
            }
        }
        let _ = writer.shutdown(std::net::Shutdown::Both);
    })?;

    let mut session = Session::new();
    let mut reader = BufReader::new(stream);
    let mut line = Vec::new();
    loop {
        line.clear();
        if reader.read_until(b'\n', &mut line)? == 0 {
            break;
        }
        let frame = line.strip_suffix(b"\n").unwrap_or(&line);
        let frame = frame.strip_suffix(b"\r").unwrap_or(frame);
        if frame.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        if !accept_frame(conn, frame, &mut session, tx, outbox) {
            break;
        }
    }
    // Detached: the writer exits once every outbox sender is gone.
    drop(writer_thread);
    Ok(())
}

fn serve_websocket(
    conn: ConnId,
    stream: TcpStream,
    tx: &Sender<Inbound>,
    outbox: &Sender<Envelope>,
    out_rx: Receiver<Envelope>,
    shutdown: &AtomicBool,
) -> io::Result<()> {
    let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(10)))?;
    let mut session = Session::new();
    let mut seq = SeqCounter::new();
    while !shutdown.load(Ordering::Relaxed) {
        loop {
            match out_rx.try_recv() {
                Ok(mut env) => {
                    env.seq = seq.next_seq();
                    if let Ok(text) = env.encode_string() {
                        ws.send(Message::text(text)).map_err(|e| io::Error::other(e.to_string()))?;
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return Ok(()),
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                if !accept_frame(conn, text.as_bytes(), &mut session, tx, outbox) {
                    return Ok(());
                }
            }
            Ok(Message::Binary(bytes)) => {
                if !accept_frame(conn, &bytes, &mut session, tx, outbox) {
                    return Ok(());
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(io::Error::other(e.to_string())),
        }
    }
    Ok(())
}
