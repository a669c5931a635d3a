//! Global staggered grid, balanced Cartesian decomposition and ghosted field storage.
//!
//! Staggering: `u(i,j,k)` sits on the x-face between cells `i` and `i+1`,
//! `v` and `w` likewise on y- and z-faces. Scalars live at cell centers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("axis {axis}: global dim {dim} not divisible by {count} workers")]
    NonDivisible { axis: usize, dim: usize, count: usize },
    #[error("axis {axis}: local dim {local} smaller than twice the ghost width {ghost}")]
    GhostTooWide { axis: usize, local: usize, ghost: usize },
    #[error("ghost width {0} not supported (expected 2, 3 or 4)")]
    InvalidGhostWidth(usize),
    #[error("invalid topology {0:?}")]
    InvalidTopology([usize; 3]),
    #[error("axis {0}: periodic boundary must be set on both faces")]
    PeriodicMismatch(usize),
    #[error("unknown boundary kind '{0}'")]
    UnknownBoundaryKind(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryKind {
    Periodic,
    NoSlipWall,
    SlipWall,
    MovingLid,
    Inflow,
    Outflow,
}

impl FromStr for BoundaryKind {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "periodic" => Ok(Self::Periodic),
            "no-slip" | "noslip" | "no-slip-wall" | "wall" => Ok(Self::NoSlipWall),
            "slip" | "slip-wall" => Ok(Self::SlipWall),
            "lid" | "moving-lid" => Ok(Self::MovingLid),
            "inflow" => Ok(Self::Inflow),
            "outflow" => Ok(Self::Outflow),
            other => Err(MeshError::UnknownBoundaryKind(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Low,
    High,
}

/// One of the six faces of a box, `axis` in 0..3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face { axis: 0, side: Side::Low },
        Face { axis: 0, side: Side::High },
        Face { axis: 1, side: Side::Low },
        Face { axis: 1, side: Side::High },
        Face { axis: 2, side: Side::Low },
        Face { axis: 2, side: Side::High },
    ];

    pub fn new(axis: usize, side: Side) -> Self {
        Face { axis, side }
    }

    pub fn index(self) -> usize {
        self.axis * 2 + usize::from(self.side == Side::High)
    }

    pub fn from_index(idx: usize) -> Face {
        Face::ALL[idx]
    }

    pub fn opposite(self) -> Face {
        let side = match self.side {
            Side::Low => Side::High,
            Side::High => Side::Low,
        };
        Face { axis: self.axis, side }
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = ["x", "y", "z"][self.axis];
        let s = if self.side == Side::Low { "-" } else { "+" };
        write!(f, "{s}{a}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalGrid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GlobalGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, MeshError> {
        for a in 0..3 {
            if dims[a] < 4 {
                return Err(MeshError::InvalidGrid(format!("dim {a} = {} < 4", dims[a])));
            }
            if !(spacing[a] > 0.0 && spacing[a].is_finite()) {
                return Err(MeshError::InvalidGrid(format!("spacing {a} = {} not positive", spacing[a])));
            }
        }
        Ok(GlobalGrid { dims, spacing, origin })
    }

    /// Box `[origin, origin + extent]` split into `dims` uniform cells.
    pub fn from_extent(dims: [usize; 3], extent: [f64; 3], origin: [f64; 3]) -> Result<Self, MeshError> {
        let spacing = [0, 1, 2].map(|a| extent[a] / dims[a].max(1) as f64);
        Self::new(dims, spacing, origin)
    }

    pub fn cell_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.dims[a] as f64 * self.spacing[a])
    }
}

/// What lies across a subdomain face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Neighbor {
    Rank(usize),
    Boundary(BoundaryKind),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubdomainSpec {
    pub rank: usize,
    pub coords: [usize; 3],
    pub topology: [usize; 3],
    pub local_dims: [usize; 3],
    pub global_dims: [usize; 3],
    /// Global index of the first owned cell per axis.
    pub offset: [usize; 3],
    pub neighbors: [Neighbor; 6],
    pub ghost_width: usize,
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl SubdomainSpec {
    pub fn owned_range(&self, axis: usize) -> std::ops::Range<usize> {
        self.offset[axis]..self.offset[axis] + self.local_dims[axis]
    }

    pub fn neighbor(&self, face: Face) -> Neighbor {
        self.neighbors[face.index()]
    }

    /// Physical boundary kind on `face`, or `None` if a rank (possibly self) lies across it.
    pub fn boundary(&self, face: Face) -> Option<BoundaryKind> {
        match self.neighbors[face.index()] {
            Neighbor::Boundary(k) => Some(k),
            Neighbor::Rank(_) => None,
        }
    }

    /// Coordinate of the center of local cell `i` along `axis`.
    pub fn center(&self, axis: usize, i: isize) -> f64 {
        self.origin[axis] + ((self.offset[axis] as isize + i) as f64 + 0.5) * self.spacing[axis]
    }

    /// Coordinate of the high face of local cell `i` along `axis`.
    pub fn face(&self, axis: usize, i: isize) -> f64 {
        self.origin[axis] + ((self.offset[axis] as isize + i) as f64 + 1.0) * self.spacing[axis]
    }

    pub fn cell_count(&self) -> usize {
        self.local_dims.iter().product()
    }

    /// Same layout with a different ghost width; used for auxiliary grids.
    pub fn with_ghost_width(&self, g: usize) -> SubdomainSpec {
        SubdomainSpec { ghost_width: g, ..self.clone() }
    }

    /// Geometry of the same rank on a grid coarsened by `factors` (1 or 2 per axis).
    pub fn coarsened(&self, factors: [usize; 3]) -> SubdomainSpec {
        let mut c = self.clone();
        for a in 0..3 {
            c.local_dims[a] /= factors[a];
            c.global_dims[a] /= factors[a];
            c.offset[a] /= factors[a];
            c.spacing[a] *= factors[a] as f64;
        }
        c
    }

    /// Whole-grid geometry owned by a single rank: periodic faces wrap onto that rank.
    pub fn replicated(
        rank: usize,
        global_dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        boundaries: [BoundaryKind; 6],
        ghost_width: usize,
    ) -> SubdomainSpec {
        let neighbors = [0, 1, 2, 3, 4, 5].map(|f| match boundaries[f] {
            BoundaryKind::Periodic => Neighbor::Rank(rank),
            k => Neighbor::Boundary(k),
        });
        SubdomainSpec {
            rank,
            coords: [0; 3],
            topology: [1; 3],
            local_dims: global_dims,
            global_dims,
            offset: [0; 3],
            neighbors,
            ghost_width,
            spacing,
            origin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionPlan {
    pub grid: GlobalGrid,
    pub topology: [usize; 3],
    pub ghost_width: usize,
    /// Indexed by `Face::index()`.
    pub boundaries: [BoundaryKind; 6],
    pub subdomains: Vec<SubdomainSpec>,
}

/// Rank numbering is x-fastest over the worker topology.
pub fn rank_of(coords: [usize; 3], topology: [usize; 3]) -> usize {
    coords[0] + topology[0] * (coords[1] + topology[1] * coords[2])
}

pub fn coords_of(rank: usize, topology: [usize; 3]) -> [usize; 3] {
    [
        rank % topology[0],
        (rank / topology[0]) % topology[1],
        rank / (topology[0] * topology[1]),
    ]
}

pub fn build_decomposition(
    grid: GlobalGrid,
    topology: [usize; 3],
    ghost_width: usize,
    boundaries: [BoundaryKind; 6],
) -> Result<DecompositionPlan, MeshError> {
    if topology.iter().any(|&t| t == 0) {
        return Err(MeshError::InvalidTopology(topology));
    }
    if !(2..=4).contains(&ghost_width) {
        return Err(MeshError::InvalidGhostWidth(ghost_width));
    }
    for a in 0..3 {
        let lo = boundaries[2 * a] == BoundaryKind::Periodic;
        let hi = boundaries[2 * a + 1] == BoundaryKind::Periodic;
        if lo != hi {
            return Err(MeshError::PeriodicMismatch(a));
        }
    }
    let mut local = [0usize; 3];
    for a in 0..3 {
        if grid.dims[a] % topology[a] != 0 {
            return Err(MeshError::NonDivisible { axis: a, dim: grid.dims[a], count: topology[a] });
        }
        local[a] = grid.dims[a] / topology[a];
        if local[a] < 2 * ghost_width {
            return Err(MeshError::GhostTooWide { axis: a, local: local[a], ghost: ghost_width });
        }
    }

    let n_t = topology.iter().product::<usize>();
    let mut subdomains = Vec::with_capacity(n_t);
    for rank in 0..n_t {
        let c = coords_of(rank, topology);
        let mut neighbors = [Neighbor::Boundary(BoundaryKind::Periodic); 6];
        for face in Face::ALL {
            let a = face.axis;
            let t = topology[a];
            let kind = boundaries[face.index()];
            let across = match face.side {
                Side::Low if c[a] > 0 => Some(c[a] - 1),
                Side::High if c[a] + 1 < t => Some(c[a] + 1),
                Side::Low if kind == BoundaryKind::Periodic => Some(t - 1),
                Side::High if kind == BoundaryKind::Periodic => Some(0),
                _ => None,
            };
            neighbors[face.index()] = match across {
                Some(ca) => {
                    let mut nc = c;
                    nc[a] = ca;
                    Neighbor::Rank(rank_of(nc, topology))
                }
                None => Neighbor::Boundary(kind),
            };
        }
        subdomains.push(SubdomainSpec {
            rank,
            coords: c,
            topology,
            local_dims: local,
            global_dims: grid.dims,
            offset: [0, 1, 2].map(|a| c[a] * local[a]),
            neighbors,
            ghost_width,
            spacing: grid.spacing,
            origin: grid.origin,
        });
    }
    Ok(DecompositionPlan { grid, topology, ghost_width, boundaries, subdomains })
}

impl DecompositionPlan {
    pub fn workers(&self) -> usize {
        self.subdomains.len()
    }

    pub fn local_dims(&self) -> [usize; 3] {
        self.subdomains[0].local_dims
    }

    pub fn subdomain(&self, rank: usize) -> &SubdomainSpec {
        &self.subdomains[rank]
    }

    /// Ghost cells per field component crossing a face normal to `face.axis`:
    /// `n_g` times the product of the two tangential local dims.
    pub fn message_cell_count(&self, face: Face) -> usize {
        let l = self.local_dims();
        let (i, j) = tangential(face.axis);
        self.ghost_width * l[i] * l[j]
    }

    /// Sum of message sizes over every face that has a rank across it.
    pub fn total_message_cells(&self) -> usize {
        self.subdomains
            .iter()
            .flat_map(|s| Face::ALL.iter().filter(move |f| matches!(s.neighbor(**f), Neighbor::Rank(_))))
            .map(|f| self.message_cell_count(*f))
            .sum()
    }
}

pub fn tangential(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Dense 3D array with `g` ghost layers on every side, x fastest.
/// Local indices run from `-g` to `n + g - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field3 {
    n: [usize; 3],
    g: usize,
    sy: usize,
    sz: usize,
    data: Vec<f64>,
}

impl Field3 {
    pub fn new(n: [usize; 3], g: usize) -> Self {
        let ext = [0, 1, 2].map(|a| n[a] + 2 * g);
        Field3 {
            n,
            g,
            sy: ext[0],
            sz: ext[0] * ext[1],
            data: vec![0.0; ext[0] * ext[1] * ext[2]],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.n
    }

    pub fn ghost(&self) -> usize {
        self.g
    }

    /// Storage extent per axis including ghosts.
    pub fn extent(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.n[a] + 2 * self.g)
    }

    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.sy,
            _ => self.sz,
        }
    }

    #[inline(always)]
    pub fn idx(&self, i: isize, j: isize, k: isize) -> usize {
        let g = self.g as isize;
        debug_assert!(i >= -g && i < self.n[0] as isize + g);
        debug_assert!(j >= -g && j < self.n[1] as isize + g);
        debug_assert!(k >= -g && k < self.n[2] as isize + g);
        (i + g) as usize + (j + g) as usize * self.sy + (k + g) as usize * self.sz
    }

    #[inline(always)]
    pub fn get(&self, i: isize, j: isize, k: isize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    #[inline(always)]
    pub fn set(&mut self, i: isize, j: isize, k: isize, v: f64) {
        let id = self.idx(i, j, k);
        self.data[id] = v;
    }

    #[inline(always)]
    pub fn at(&self, p: [isize; 3]) -> f64 {
        self.get(p[0], p[1], p[2])
    }

    #[inline(always)]
    pub fn put(&mut self, p: [isize; 3], v: f64) {
        self.set(p[0], p[1], p[2], v)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn copy_from(&mut self, other: &Field3) {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.copy_from_slice(&other.data);
    }

    /// Fill interior cells from a function of local indices.
    pub fn fill_interior(&mut self, mut f: impl FnMut(isize, isize, isize) -> f64) {
        for k in 0..self.n[2] as isize {
            for j in 0..self.n[1] as isize {
                for i in 0..self.n[0] as isize {
                    let v = f(i, j, k);
                    self.set(i, j, k, v);
                }
            }
        }
    }

    /// Fill every stored cell, ghosts included.
    pub fn fill_all(&mut self, mut f: impl FnMut(isize, isize, isize) -> f64) {
        let g = self.g as isize;
        for k in -g..self.n[2] as isize + g {
            for j in -g..self.n[1] as isize + g {
                for i in -g..self.n[0] as isize + g {
                    let v = f(i, j, k);
                    self.set(i, j, k, v);
                }
            }
        }
    }

    /// Visit interior cells in storage order.
    pub fn for_interior(&self, mut f: impl FnMut(isize, isize, isize, f64)) {
        for k in 0..self.n[2] as isize {
            for j in 0..self.n[1] as isize {
                let row = self.idx(0, j, k);
                for i in 0..self.n[0] {
                    f(i as isize, j, k, self.data[row + i]);
                }
            }
        }
    }

    pub fn interior_max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        self.for_interior(|_, _, _, v| m = m.max(v.abs()));
        m
    }

    /// Interior values in storage order.
    pub fn interior_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n.iter().product());
        self.for_interior(|_, _, _, v| out.push(v));
        out
    }

    /// Index ranges (inclusive start, exclusive end) of a box in local coordinates.
    pub fn pack(&self, lo: [isize; 3], hi: [isize; 3], out: &mut Vec<f64>) {
        out.clear();
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                let row = self.idx(lo[0], j, k);
                let len = (hi[0] - lo[0]) as usize;
                out.extend_from_slice(&self.data[row..row + len]);
            }
        }
    }

    pub fn unpack(&mut self, lo: [isize; 3], hi: [isize; 3], src: &[f64]) {
        let len = (hi[0] - lo[0]) as usize;
        let mut pos = 0;
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                let row = self.idx(lo[0], j, k);
                self.data[row..row + len].copy_from_slice(&src[pos..pos + len]);
                pos += len;
            }
        }
    }
}

/// All per-rank solution arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct StaggeredField {
    /// u, v, w on x-, y- and z-faces.
    pub vel: [Field3; 3],
    pub p: Field3,
    pub phi: Field3,
    pub nu_t: Field3,
    pub rho: Field3,
    pub mu: Field3,
}

impl StaggeredField {
    pub fn new(local_dims: [usize; 3], ghost_width: usize) -> Self {
        let f = Field3::new(local_dims, ghost_width);
        StaggeredField {
            vel: [f.clone(), f.clone(), f.clone()],
            p: f.clone(),
            phi: f.clone(),
            nu_t: f.clone(),
            rho: f.clone(),
            mu: f,
        }
    }

    pub fn for_subdomain(sub: &SubdomainSpec) -> Self {
        Self::new(sub.local_dims, sub.ghost_width)
    }

    pub fn u(&self) -> &Field3 {
        &self.vel[0]
    }

    pub fn v(&self) -> &Field3 {
        &self.vel[1]
    }

    pub fn w(&self) -> &Field3 {
        &self.vel[2]
    }

    pub fn dims(&self) -> [usize; 3] {
        self.p.dims()
    }

    pub fn ghost_width(&self) -> usize {
        self.p.ghost()
    }
}
