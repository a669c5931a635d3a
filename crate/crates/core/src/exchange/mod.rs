//! Ghost-layer exchange between subdomain workers and global reductions.
//!
//! Workers talk through a [`Transport`]: in-process channels by default, or
//! framed TCP sockets for multi-process runs. All collectives go through rank 0
//! and combine values in rank order, so results never depend on message timing.

mod inproc;
mod socket;
mod sum;

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::mesh::{Face, Field3, Neighbor, Side, SubdomainSpec};

pub use inproc::{inproc_world, run_inproc, AbortFlag, InProcTransport, WorkerError};
pub use socket::{decode_frame, encode_frame, read_frame, write_frame, SocketTransport, FRAME_MAGIC};
pub use sum::ExactSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExchangeError {
    #[error("transport failure: {0}")]
    TransportFailure(String),
    #[error("field has dims {field:?} but subdomain expects {sub:?}")]
    ShapeMismatch { field: [usize; 3], sub: [usize; 3] },
    #[error("message from rank {source_rank} has {got} values, expected {expected}")]
    BadPayload { source_rank: usize, got: usize, expected: usize },
}

/// Identifies which array a message belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FieldTag {
    U,
    V,
    W,
    P,
    Phi,
    Rho,
    Mu,
    NuT,
    PressureCorrection,
    Scratch,
    Reduce,
}

impl FieldTag {
    pub fn code(self) -> u32 {
        match self {
            FieldTag::U => 0,
            FieldTag::V => 1,
            FieldTag::W => 2,
            FieldTag::P => 3,
            FieldTag::Phi => 4,
            FieldTag::Rho => 5,
            FieldTag::Mu => 6,
            FieldTag::NuT => 7,
            FieldTag::PressureCorrection => 8,
            FieldTag::Scratch => 9,
            FieldTag::Reduce => 15,
        }
    }

    pub fn from_code(c: u32) -> Option<FieldTag> {
        Some(match c {
            0 => FieldTag::U,
            1 => FieldTag::V,
            2 => FieldTag::W,
            3 => FieldTag::P,
            4 => FieldTag::Phi,
            5 => FieldTag::Rho,
            6 => FieldTag::Mu,
            7 => FieldTag::NuT,
            8 => FieldTag::PressureCorrection,
            9 => FieldTag::Scratch,
            15 => FieldTag::Reduce,
            _ => return None,
        })
    }

    pub fn velocity(component: usize) -> FieldTag {
        [FieldTag::U, FieldTag::V, FieldTag::W][component]
    }
}

const SOURCE_BITS: u32 = 25;
const NO_FACE: u32 = 7;

/// Tag layout: field code in bits 28..32, face index in 25..28, source rank in 0..25.
pub fn encode_tag(field: FieldTag, face: Option<Face>, source: usize) -> u32 {
    let f = face.map_or(NO_FACE, |f| f.index() as u32);
    (field.code() << 28) | (f << SOURCE_BITS) | (source as u32 & ((1 << SOURCE_BITS) - 1))
}

pub fn decode_tag(tag: u32) -> (Option<FieldTag>, Option<Face>, usize) {
    let field = FieldTag::from_code(tag >> 28);
    let f = (tag >> SOURCE_BITS) & 0x7;
    let face = if f < 6 { Some(Face::from_index(f as usize)) } else { None };
    (field, face, (tag & ((1 << SOURCE_BITS) - 1)) as usize)
}

/// One ghost slab in flight. Payload order: x fastest, then y, then z over the slab box.
#[derive(Clone, Debug, PartialEq)]
pub struct HaloMessage {
    pub source: usize,
    pub dest: usize,
    pub field: FieldTag,
    /// Face of the sender through which the slab leaves.
    pub face: Face,
    pub payload: Vec<f64>,
}

impl HaloMessage {
    pub fn tag(&self) -> u32 {
        encode_tag(self.field, Some(self.face), self.source)
    }
}

/// Point-to-point message passing between ranks of one job.
pub trait Transport: Send {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;
    /// Must not block waiting for the receiver.
    fn send(&mut self, dest: usize, tag: u32, payload: &[f64]) -> Result<(), ExchangeError>;
    /// Blocks until a message with exactly this source and tag arrives.
    fn recv(&mut self, source: usize, tag: u32) -> Result<Vec<f64>, ExchangeError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReductionKind {
    Max,
    Min,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReductionRequest {
    pub kind: ReductionKind,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CommStats {
    pub time: Duration,
    pub messages: u64,
    pub values: u64,
}

/// A rank's handle on the job: transport plus communication accounting.
pub struct Comm {
    transport: Box<dyn Transport>,
    stats: CommStats,
    send_buf: Vec<f64>,
}

impl Comm {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Comm { transport, stats: CommStats::default(), send_buf: Vec::new() }
    }

    /// Single-rank communicator.
    pub fn solo() -> Self {
        let t = inproc_world(1).pop().expect("one transport");
        Comm::new(Box::new(t))
    }

    pub fn rank(&self) -> usize {
        self.transport.rank()
    }

    pub fn size(&self) -> usize {
        self.transport.size()
    }

    pub fn stats(&self) -> CommStats {
        self.stats
    }

    pub fn comm_time(&self) -> Duration {
        self.stats.time
    }

    fn send(&mut self, dest: usize, tag: u32, payload: &[f64]) -> Result<(), ExchangeError> {
        self.stats.messages += 1;
        self.stats.values += payload.len() as u64;
        self.transport.send(dest, tag, payload)
    }

    fn recv(&mut self, source: usize, tag: u32, expected: Option<usize>) -> Result<Vec<f64>, ExchangeError> {
        let v = self.transport.recv(source, tag)?;
        if let Some(n) = expected {
            if v.len() != n {
                return Err(ExchangeError::BadPayload { source_rank: source, got: v.len(), expected: n });
            }
        }
        Ok(v)
    }

    /// Fill ghost layers of `field` from neighbor interiors along all three axes, x then y then z.
    /// Ghosts on physical boundaries are left untouched.
    pub fn exchange_halos(&mut self, field: &mut Field3, tag: FieldTag, sub: &SubdomainSpec) -> Result<(), ExchangeError> {
        for axis in 0..3 {
            self.exchange_axis(field, tag, sub, axis)?;
        }
        Ok(())
    }

    /// Exchange along one axis. Tangential axes already exchanged (lower index) are
    /// sent with their ghosts so edge and corner ghosts fill in later passes.
    pub fn exchange_axis(
        &mut self,
        field: &mut Field3,
        tag: FieldTag,
        sub: &SubdomainSpec,
        axis: usize,
    ) -> Result<(), ExchangeError> {
        let start = Instant::now();
        let r = self.exchange_axis_inner(field, tag, sub, axis);
        self.stats.time += start.elapsed();
        r
    }

    fn exchange_axis_inner(
        &mut self,
        field: &mut Field3,
        tag: FieldTag,
        sub: &SubdomainSpec,
        axis: usize,
    ) -> Result<(), ExchangeError> {
        if field.dims() != sub.local_dims {
            return Err(ExchangeError::ShapeMismatch { field: field.dims(), sub: sub.local_dims });
        }
        let n = field.dims();
        let g = field.ghost() as isize;
        let me = self.rank();
        let lo_face = Face::new(axis, Side::Low);
        let hi_face = Face::new(axis, Side::High);
        let lo_nb = sub.neighbor(lo_face);
        let hi_nb = sub.neighbor(hi_face);

        let mut lo = [0isize; 3];
        let mut hi = [0isize; 3];
        for b in 0..3 {
            if b < axis {
                lo[b] = -g;
                hi[b] = n[b] as isize + g;
            } else {
                lo[b] = 0;
                hi[b] = n[b] as isize;
            }
        }
        let na = n[axis] as isize;
        // Interior slabs adjacent to each face and the ghost slabs they feed.
        let slab = |from: isize, to: isize| {
            let mut l = lo;
            let mut h = hi;
            l[axis] = from;
            h[axis] = to;
            (l, h)
        };
        let (send_lo_l, send_lo_h) = slab(0, g);
        let (send_hi_l, send_hi_h) = slab(na - g, na);
        let (ghost_lo_l, ghost_lo_h) = slab(-g, 0);
        let (ghost_hi_l, ghost_hi_h) = slab(na, na + g);
        let count: usize = (0..3).map(|b| (send_lo_h[b] - send_lo_l[b]) as usize).product();

        let mut buf = std::mem::take(&mut self.send_buf);
        let mut recv_lo = None;
        let mut recv_hi = None;

        if let Neighbor::Rank(r) = lo_nb {
            if r == me {
                field.pack(send_hi_l, send_hi_h, &mut buf);
                field.unpack(ghost_lo_l, ghost_lo_h, &buf);
            } else {
                field.pack(send_lo_l, send_lo_h, &mut buf);
                let msg_tag = encode_tag(tag, Some(lo_face), me);
                self.send(r, msg_tag, &buf)?;
                recv_lo = Some(r);
            }
        }
        if let Neighbor::Rank(r) = hi_nb {
            if r == me {
                field.pack(send_lo_l, send_lo_h, &mut buf);
                field.unpack(ghost_hi_l, ghost_hi_h, &buf);
            } else {
                field.pack(send_hi_l, send_hi_h, &mut buf);
                let msg_tag = encode_tag(tag, Some(hi_face), me);
                self.send(r, msg_tag, &buf)?;
                recv_hi = Some(r);
            }
        }
        self.send_buf = buf;

        // The low neighbor sent through its high face, and vice versa.
        if let Some(r) = recv_lo {
            let data = self.recv(r, encode_tag(tag, Some(hi_face), r), Some(count))?;
            field.unpack(ghost_lo_l, ghost_lo_h, &data);
        }
        if let Some(r) = recv_hi {
            let data = self.recv(r, encode_tag(tag, Some(lo_face), r), Some(count))?;
            field.unpack(ghost_hi_l, ghost_hi_h, &data);
        }
        Ok(())
    }

    pub fn allreduce(&mut self, req: ReductionRequest) -> Result<f64, ExchangeError> {
        let start = Instant::now();
        let r = self.allreduce_inner(req);
        self.stats.time += start.elapsed();
        r
    }

    fn allreduce_inner(&mut self, req: ReductionRequest) -> Result<f64, ExchangeError> {
        let n = self.size();
        if n == 1 {
            return Ok(req.value);
        }
        let me = self.rank();
        let up = encode_tag(FieldTag::Reduce, Some(Face::ALL[0]), me);
        if me != 0 {
            self.send(0, up, &[req.value])?;
            let v = self.recv(0, encode_tag(FieldTag::Reduce, Some(Face::ALL[1]), 0), Some(1))?;
            return Ok(v[0]);
        }
        let mut vals = vec![req.value];
        for r in 1..n {
            let v = self.recv(r, encode_tag(FieldTag::Reduce, Some(Face::ALL[0]), r), Some(1))?;
            vals.push(v[0]);
        }
        let out = combine(req.kind, vals);
        let down = encode_tag(FieldTag::Reduce, Some(Face::ALL[1]), 0);
        for r in 1..n {
            self.send(r, down, &[out])?;
        }
        Ok(out)
    }

    pub fn max(&mut self, v: f64) -> Result<f64, ExchangeError> {
        self.allreduce(ReductionRequest { kind: ReductionKind::Max, value: v })
    }

    pub fn min(&mut self, v: f64) -> Result<f64, ExchangeError> {
        self.allreduce(ReductionRequest { kind: ReductionKind::Min, value: v })
    }

    pub fn sum(&mut self, v: f64) -> Result<f64, ExchangeError> {
        self.allreduce(ReductionRequest { kind: ReductionKind::Sum, value: v })
    }

    /// Global exact sum; the result is independent of how terms were spread over ranks.
    pub fn exact_sum(&mut self, local: &ExactSum) -> Result<f64, ExchangeError> {
        if self.size() == 1 {
            return Ok(local.value());
        }
        let parts = self.allgather(&local.to_wire())?;
        let mut acc = ExactSum::new();
        for p in &parts {
            let s = ExactSum::from_wire(p)
                .ok_or_else(|| ExchangeError::TransportFailure("malformed accumulator".into()))?;
            acc.merge(&s);
        }
        Ok(acc.value())
    }

    /// Every rank receives every rank's vector, in rank order.
    pub fn allgather(&mut self, local: &[f64]) -> Result<Vec<Vec<f64>>, ExchangeError> {
        let start = Instant::now();
        let r = self.allgather_inner(local);
        self.stats.time += start.elapsed();
        r
    }

    fn allgather_inner(&mut self, local: &[f64]) -> Result<Vec<Vec<f64>>, ExchangeError> {
        let n = self.size();
        if n == 1 {
            return Ok(vec![local.to_vec()]);
        }
        let me = self.rank();
        let up = |r| encode_tag(FieldTag::Reduce, Some(Face::ALL[2]), r);
        let down = encode_tag(FieldTag::Reduce, Some(Face::ALL[3]), 0);
        let packed = if me == 0 {
            let mut parts = vec![local.to_vec()];
            for r in 1..n {
                parts.push(self.recv(r, up(r), None)?);
            }
            let mut packed: Vec<f64> = parts.iter().map(|p| p.len() as f64).collect();
            for p in &parts {
                packed.extend_from_slice(p);
            }
            for r in 1..n {
                self.send(r, down, &packed)?;
            }
            packed
        } else {
            self.send(0, up(me), local)?;
            self.recv(0, down, None)?
        };
        let mut out = Vec::with_capacity(n);
        let mut pos = n;
        for r in 0..n {
            let len = packed.get(r).copied().unwrap_or(-1.0);
            if len < 0.0 || pos + len as usize > packed.len() {
                return Err(ExchangeError::TransportFailure("malformed gather".into()));
            }
            out.push(packed[pos..pos + len as usize].to_vec());
            pos += len as usize;
        }
        Ok(out)
    }

    pub fn barrier(&mut self) -> Result<(), ExchangeError> {
        self.max(0.0).map(|_| ())
    }
}

/// Combine rank-ordered values; sums use a pairwise tree over rank order.
pub fn combine(kind: ReductionKind, mut vals: Vec<f64>) -> f64 {
    match kind {
        ReductionKind::Max => vals.into_iter().fold(f64::NEG_INFINITY, |a, b| if b > a || b.is_nan() { b } else { a }),
        ReductionKind::Min => vals.into_iter().fold(f64::INFINITY, |a, b| if b < a || b.is_nan() { b } else { a }),
        ReductionKind::Sum => {
            if vals.is_empty() {
                return 0.0;
            }
            while vals.len() > 1 {
                vals = vals.chunks(2).map(|c| c.iter().sum()).collect();
            }
            vals[0]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_decomposition, BoundaryKind, GlobalGrid};

    #[test]
    fn tag_round_trip() {
        for face in Face::ALL {
            let t = encode_tag(FieldTag::Phi, Some(face), 1234);
            assert_eq!(decode_tag(t), (Some(FieldTag::Phi), Some(face), 1234));
        }
        assert_eq!(decode_tag(encode_tag(FieldTag::Reduce, None, 3)).1, None);
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine(ReductionKind::Max, vec![1.0, 5.0, 3.0]), 5.0);
        assert_eq!(combine(ReductionKind::Sum, vec![0.25, 0.25, 0.5]), 1.0);
        assert_eq!(combine(ReductionKind::Min, vec![2.0]), 2.0);
    }

    #[test]
    fn solo_reductions_are_identity() {
        let mut c = Comm::solo();
        assert_eq!(c.max(3.5).unwrap(), 3.5);
        assert_eq!(c.sum(-1.25).unwrap(), -1.25);
    }

    #[test]
    fn self_wrap_periodic() {
        let grid = GlobalGrid::new([8, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let mut b = [BoundaryKind::NoSlipWall; 6];
        b[0] = BoundaryKind::Periodic;
        b[1] = BoundaryKind::Periodic;
        let plan = build_decomposition(grid, [1, 1, 1], 2, b).unwrap();
        let sub = &plan.subdomains[0];
        let mut f = Field3::new(sub.local_dims, 2);
        f.fill_interior(|i, j, k| (i + 10 * j + 100 * k) as f64);
        let mut c = Comm::solo();
        c.exchange_halos(&mut f, FieldTag::P, sub).unwrap();
        assert_eq!(f.get(-1, 2, 3), f.get(7, 2, 3));
        assert_eq!(f.get(8, 1, 1), f.get(0, 1, 1));
        // wall faces untouched
        assert_eq!(f.get(0, -1, 0), 0.0);
    }
}
