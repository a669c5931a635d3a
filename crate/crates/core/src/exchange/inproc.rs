use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::Duration;

use super::{Comm, ExchangeError, Transport};

struct Envelope {
    source: usize,
    tag: u32,
    payload: Vec<f64>,
}

/// Set when any worker of a job fails, so peers blocked in `recv` bail out.
#[derive(Clone, Debug, Default)]
pub struct AbortFlag(Arc<AtomicBool>);

impl AbortFlag {
    pub fn raise(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_raised(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

pub struct InProcTransport {
    rank: usize,
    peers: Vec<Sender<Envelope>>,
    inbox: Receiver<Envelope>,
    pending: HashMap<(usize, u32), VecDeque<Vec<f64>>>,
    abort: AbortFlag,
}

impl InProcTransport {
    pub fn abort_flag(&self) -> AbortFlag {
        self.abort.clone()
    }
}

/// Fully connected set of `n` channel transports sharing one abort flag.
pub fn inproc_world(n: usize) -> Vec<InProcTransport> {
    let abort = AbortFlag::default();
    let (txs, rxs): (Vec<_>, Vec<_>) = (0..n).map(|_| channel::<Envelope>()).unzip();
    rxs.into_iter()
        .enumerate()
        .map(|(rank, inbox)| InProcTransport {
            rank,
            peers: txs.clone(),
            inbox,
            pending: HashMap::new(),
            abort: abort.clone(),
        })
        .collect()
}

impl Transport for InProcTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.peers.len()
    }

    fn send(&mut self, dest: usize, tag: u32, payload: &[f64]) -> Result<(), ExchangeError> {
        let peer = self
            .peers
            .get(dest)
            .ok_or_else(|| ExchangeError::TransportFailure(format!("no rank {dest}")))?;
        peer.send(Envelope { source: self.rank, tag, payload: payload.to_vec() })
            .map_err(|_| ExchangeError::TransportFailure(format!("rank {dest} hung up")))
    }

    fn recv(&mut self, source: usize, tag: u32) -> Result<Vec<f64>, ExchangeError> {
        if let Some(q) = self.pending.get_mut(&(source, tag)) {
            if let Some(p) = q.pop_front() {
                return Ok(p);
            }
        }
        loop {
            match self.inbox.recv_timeout(Duration::from_millis(50)) {
                Ok(env) => {
                    if env.source == source && env.tag == tag {
                        return Ok(env.payload);
                    }
                    self.pending.entry((env.source, env.tag)).or_default().push_back(env.payload);
                }
                Err(RecvTimeoutError::Timeout) => {
                    if self.abort.is_raised() {
                        return Err(ExchangeError::TransportFailure("job aborted by a peer".into()));
                    }
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(ExchangeError::TransportFailure("all peers gone".into()));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorkerError<E> {
    Failed(E),
    Panicked(String),
}

/// Run `f` on `n` threads, one per rank, each with its own communicator.
/// A failing or panicking worker raises the abort flag so the rest unwind.
pub fn run_inproc<T, E, F>(n: usize, f: F) -> Vec<Result<T, WorkerError<E>>>
where
    T: Send,
    E: Send,
    F: Fn(Comm) -> Result<T, E> + Sync,
{
    let world = inproc_world(n);
    let abort = world[0].abort_flag();
    std::thread::scope(|s| {
        let handles: Vec<_> = world
            .into_iter()
            .map(|t| {
                let f = &f;
                let abort = abort.clone();
                std::thread::Builder::new()
                    .name(format!("rank-{}", t.rank))
                    .stack_size(32 << 20)
                    .spawn_scoped(s, move || {
                        let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| f(Comm::new(Box::new(t)))));
                        match out {
                            Ok(Ok(v)) => Ok(v),
                            Ok(Err(e)) => {
                                abort.raise();
                                Err(WorkerError::Failed(e))
                            }
                            Err(p) => {
                                abort.raise();
                                let msg = p
                                    .downcast_ref::<String>()
                                    .cloned()
                                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                                    .unwrap_or_else(|| "panic".into());
                                Err(WorkerError::Panicked(msg))
                            }
                        }
                    })
                    .expect("spawn worker")
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(WorkerError::Panicked("join failed".into()))))
            .collect()
    })
}
