//! TCP transport for multi-process runs.
//!
//! Frame: 4 magic bytes `48 59 44 52`, u32 LE tag, u32 LE payload byte length,
//! then the payload as little-endian binary64 values.

use std::collections::{HashMap, VecDeque};
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::{Duration, Instant};

use super::{decode_tag, encode_tag, ExchangeError, FieldTag, Transport};

pub const FRAME_MAGIC: u32 = 0x4859_4452;

pub fn encode_frame(tag: u32, payload: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * payload.len());
    out.extend_from_slice(&FRAME_MAGIC.to_be_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&((payload.len() * 8) as u32).to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse one complete frame from a byte slice.
pub fn decode_frame(bytes: &[u8]) -> Result<(u32, Vec<f64>), ExchangeError> {
    let mut cursor = bytes;
    match read_frame(&mut cursor)? {
        Some(f) if cursor.is_empty() => Ok(f),
        Some(_) => Err(ExchangeError::TransportFailure("trailing bytes after frame".into())),
        None => Err(ExchangeError::TransportFailure("empty frame".into())),
    }
}

pub fn write_frame(w: &mut impl Write, tag: u32, payload: &[f64]) -> Result<(), ExchangeError> {
    w.write_all(&encode_frame(tag, payload)).map_err(io_err)
}

/// Read the next frame; `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> Result<Option<(u32, Vec<f64>)>, ExchangeError> {
    let mut head = [0u8; 12];
    let mut got = 0;
    while got < head.len() {
        match r.read(&mut head[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ExchangeError::TransportFailure("truncated frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(io_err(e)),
        }
    }
    let magic = u32::from_be_bytes([head[0], head[1], head[2], head[3]]);
    if magic != FRAME_MAGIC {
        return Err(ExchangeError::TransportFailure(format!("bad frame magic {magic:#010x}")));
    }
    let tag = u32::from_le_bytes([head[4], head[5], head[6], head[7]]);
    let len = u32::from_le_bytes([head[8], head[9], head[10], head[11]]) as usize;
    if len % 8 != 0 {
        return Err(ExchangeError::TransportFailure(format!("payload length {len} not a multiple of 8")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)
        .map_err(|_| ExchangeError::TransportFailure("truncated frame payload".into()))?;
    let payload = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Some((tag, payload)))
}

fn io_err(e: io::Error) -> ExchangeError {
    ExchangeError::TransportFailure(e.to_string())
}

type Inbound = Result<(usize, u32, Vec<f64>), ExchangeError>;

pub struct SocketTransport {
    rank: usize,
    size: usize,
    streams: Vec<Option<TcpStream>>,
    inbox: Receiver<Inbound>,
    pending: HashMap<(usize, u32), VecDeque<Vec<f64>>>,
}

impl SocketTransport {
    /// Bind `addrs[rank]` and connect to every other rank.
    pub fn connect(rank: usize, addrs: &[SocketAddr], timeout: Duration) -> Result<Self, ExchangeError> {
        let listener = TcpListener::bind(addrs[rank]).map_err(io_err)?;
        Self::from_listener(rank, listener, addrs, timeout)
    }

    /// Lower ranks are dialed, higher ranks are accepted; a hello frame names the dialer.
    pub fn from_listener(
        rank: usize,
        listener: TcpListener,
        addrs: &[SocketAddr],
        timeout: Duration,
    ) -> Result<Self, ExchangeError> {
        let size = addrs.len();
        let mut streams: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();
        let hello = encode_tag(FieldTag::Scratch, None, rank);
        for (peer, addr) in addrs.iter().enumerate().take(rank) {
            let deadline = Instant::now() + timeout;
            let mut s = loop {
                match TcpStream::connect(addr) {
                    Ok(s) => break s,
                    Err(e) if Instant::now() < deadline => {
                        let _ = e;
                        std::thread::sleep(Duration::from_millis(20));
                    }
                    Err(e) => return Err(io_err(e)),
                }
            };
            s.set_nodelay(true).map_err(io_err)?;
            write_frame(&mut s, hello, &[])?;
            streams[peer] = Some(s);
        }
        for _ in rank + 1..size {
            let (mut s, _) = listener.accept().map_err(io_err)?;
            s.set_nodelay(true).map_err(io_err)?;
            let (tag, _) = read_frame(&mut s)?
                .ok_or_else(|| ExchangeError::TransportFailure("peer closed during handshake".into()))?;
            let (_, _, peer) = decode_tag(tag);
            if peer <= rank || peer >= size || streams[peer].is_some() {
                return Err(ExchangeError::TransportFailure(format!("unexpected hello from rank {peer}")));
            }
            streams[peer] = Some(s);
        }

        let (tx, inbox) = channel::<Inbound>();
        for (peer, s) in streams.iter().enumerate() {
            if let Some(s) = s {
                let reader = s.try_clone().map_err(io_err)?;
                spawn_reader(peer, reader, tx.clone());
            }
        }
        Ok(SocketTransport { rank, size, streams, inbox, pending: HashMap::new() })
    }
}

fn spawn_reader(peer: usize, mut stream: TcpStream, tx: Sender<Inbound>) {
    std::thread::spawn(move || loop {
        match read_frame(&mut stream) {
            Ok(Some((tag, payload))) => {
                if tx.send(Ok((peer, tag, payload))).is_err() {
                    return;
                }
            }
            Ok(None) => return,
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        }
    });
}

impl Transport for SocketTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.size
    }

    fn send(&mut self, dest: usize, tag: u32, payload: &[f64]) -> Result<(), ExchangeError> {
        if dest == self.rank {
            self.pending.entry((dest, tag)).or_default().push_back(payload.to_vec());
            return Ok(());
        }
        let s = self
            .streams
            .get_mut(dest)
            .and_then(|s| s.as_mut())
            .ok_or_else(|| ExchangeError::TransportFailure(format!("no connection to rank {dest}")))?;
        write_frame(s, tag, payload)
    }

    fn recv(&mut self, source: usize, tag: u32) -> Result<Vec<f64>, ExchangeError> {
        if let Some(p) = self.pending.get_mut(&(source, tag)).and_then(|q| q.pop_front()) {
            return Ok(p);
        }
        loop {
            let (src, t, payload) = self
                .inbox
                .recv()
                .map_err(|_| ExchangeError::TransportFailure("all peer connections closed".into()))??;
            if src == source && t == tag {
                return Ok(payload);
            }
            self.pending.entry((src, t)).or_default().push_back(payload);
        }
    }
}
