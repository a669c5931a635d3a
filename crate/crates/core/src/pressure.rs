//! Cell-centered pressure Poisson solve by geometric multigrid, plus the
//! divergence and projection operators.
//!
//! The operator is `div(b grad p)` with face coefficients `b` (1 for a single
//! fluid, `1/rho` for two fluids) and `b = 0` on physical boundary faces, which
//! gives homogeneous Neumann conditions. Periodic faces wrap through the halo
//! exchange. Coarse levels stay distributed while every rank keeps at least two
//! cells per axis; below that the residual is gathered and the remaining levels
//! run redundantly on every rank, so the cycle is the same for any decomposition.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exchange::{Comm, ExactSum, ExchangeError, FieldTag};
use crate::mesh::{coords_of, BoundaryKind, Face, Field3, Side, SubdomainSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PressureError {
    #[error("axis {axis}: dimension {dim} cannot be halved")]
    DimensionNotEven { axis: usize, dim: usize },
    #[error("pressure solve did not converge in {cycles} cycles (divergence {divergence:e})")]
    NoConvergence { cycles: usize, divergence: f64 },
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoarseSolver {
    /// Red-black sweeps on the coarsest grid.
    Sweeps(usize),
    /// Conjugate gradients to a relative residual.
    ConjugateGradient { max_iterations: usize, relative_tolerance: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PressureConfig {
    /// Bound on `max |div u|` after projection.
    pub tolerance: f64,
    pub max_cycles: usize,
    pub pre_sweeps: usize,
    pub post_sweeps: usize,
    pub coarse: CoarseSolver,
    /// Smallest global cell count per axis on any level.
    pub min_coarse_dim: usize,
}

impl Default for PressureConfig {
    fn default() -> Self {
        PressureConfig {
            tolerance: 1e-6,
            max_cycles: 100,
            pre_sweeps: 2,
            post_sweeps: 2,
            coarse: CoarseSolver::Sweeps(50),
            min_coarse_dim: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub cycles: usize,
    /// `max |div u|` the projection will leave behind (estimated from the residual).
    pub divergence: f64,
    /// Mean removed from the right-hand side.
    pub rhs_mean: f64,
}

/// Staggered divergence `(u_i - u_{i-1})/dx + ...` in every interior cell.
pub fn divergence(vel: &[Field3; 3], spacing: [f64; 3], out: &mut Field3) {
    let n = out.dims();
    for k in 0..n[2] as isize {
        for j in 0..n[1] as isize {
            for i in 0..n[0] as isize {
                let mut d = 0.0;
                for (a, f) in vel.iter().enumerate() {
                    let mut m = [i, j, k];
                    m[a] -= 1;
                    d += (f.get(i, j, k) - f.at(m)) / spacing[a];
                }
                out.set(i, j, k, d);
            }
        }
    }
}

/// Global `max |div u|`; velocity ghosts must be current.
pub fn max_divergence(vel: &[Field3; 3], spacing: [f64; 3], comm: &mut Comm) -> Result<f64, ExchangeError> {
    let mut d = Field3::new(vel[0].dims(), 0);
    divergence(vel, spacing, &mut d);
    comm.max(d.interior_max_abs())
}

/// Coarse cell = mean of the fine cells it covers (`factors` per axis, 1 or 2).
pub fn restrict(fine: &Field3, factors: [usize; 3], coarse: &mut Field3) -> Result<(), PressureError> {
    let nf = fine.dims();
    let nc = coarse.dims();
    for a in 0..3 {
        if nf[a] != nc[a] * factors[a] {
            return Err(PressureError::DimensionNotEven { axis: a, dim: nf[a] });
        }
    }
    let count = (factors[0] * factors[1] * factors[2]) as f64;
    for k in 0..nc[2] as isize {
        for j in 0..nc[1] as isize {
            for i in 0..nc[0] as isize {
                let mut s = 0.0;
                for dk in 0..factors[2] as isize {
                    for dj in 0..factors[1] as isize {
                        for di in 0..factors[0] as isize {
                            s += fine.get(
                                i * factors[0] as isize + di,
                                j * factors[1] as isize + dj,
                                k * factors[2] as isize + dk,
                            );
                        }
                    }
                }
                coarse.set(i, j, k, s / count);
            }
        }
    }
    Ok(())
}

/// 1D linear interpolation weights from coarse cells for fine global index `v`.
#[inline]
fn interp_1d(v: isize, factor: usize) -> [(isize, f64); 2] {
    if factor == 1 {
        return [(v, 1.0), (v, 0.0)];
    }
    let c = v.div_euclid(2);
    if v.rem_euclid(2) == 0 {
        [(c - 1, 0.25), (c, 0.75)]
    } else {
        [(c, 0.75), (c + 1, 0.25)]
    }
}

/// Add the trilinear interpolation of `coarse` to `fine`. Fine local cell `i` has
/// index `base + i` on the fine grid whose cell 0 aligns with coarse cell 0.
/// Coarse ghosts must be filled.
pub fn prolong_add(coarse: &Field3, factors: [usize; 3], base: [isize; 3], coarse_offset: [isize; 3], fine: &mut Field3) {
    let nf = fine.dims();
    for k in 0..nf[2] as isize {
        let wz = interp_1d(base[2] + k, factors[2]);
        for j in 0..nf[1] as isize {
            let wy = interp_1d(base[1] + j, factors[1]);
            for i in 0..nf[0] as isize {
                let wx = interp_1d(base[0] + i, factors[0]);
                let mut s = 0.0;
                for (cz, az) in wz {
                    if az == 0.0 {
                        continue;
                    }
                    for (cy, ay) in wy {
                        if ay == 0.0 {
                            continue;
                        }
                        for (cx, ax) in wx {
                            if ax == 0.0 {
                                continue;
                            }
                            s += az * ay * ax
                                * coarse.get(cx - coarse_offset[0], cy - coarse_offset[1], cz - coarse_offset[2]);
                        }
                    }
                }
                let v = fine.get(i, j, k) + s;
                fine.set(i, j, k, v);
            }
        }
    }
}

/// Overwriting trilinear prolongation between co-located arrays.
pub fn prolong(coarse: &Field3, factors: [usize; 3], fine: &mut Field3) -> Result<(), PressureError> {
    let nf = fine.dims();
    let nc = coarse.dims();
    for a in 0..3 {
        if nf[a] != nc[a] * factors[a] {
            return Err(PressureError::DimensionNotEven { axis: a, dim: nf[a] });
        }
    }
    fine.fill(0.0);
    prolong_add(coarse, factors, [0; 3], [0; 3], fine);
    Ok(())
}

/// Even mirror of the first interior layer into ghosts on physical faces.
fn mirror_boundary(f: &mut Field3, geom: &SubdomainSpec, axis: usize) {
    let n = f.dims();
    let g = f.ghost() as isize;
    let ext = [0, 1, 2].map(|b| (-g, n[b] as isize + g));
    for side in [Side::Low, Side::High] {
        if geom.boundary(Face::new(axis, side)).is_none() {
            continue;
        }
        let na = n[axis] as isize;
        for m in 1..=g {
            let (dst, src) = match side {
                Side::Low => (-m, m - 1),
                Side::High => (na - 1 + m, na - m),
            };
            let (b, c) = crate::mesh::tangential(axis);
            for q in ext[c].0..ext[c].1 {
                for p in ext[b].0..ext[b].1 {
                    let mut d = [0isize; 3];
                    d[axis] = dst;
                    d[b] = p;
                    d[c] = q;
                    let mut s = d;
                    s[axis] = src;
                    let v = f.at(s);
                    f.put(d, v);
                }
            }
        }
    }
}

/// Exchange plus Neumann mirror on every axis.
pub fn fill_neumann_ghosts(f: &mut Field3, geom: &SubdomainSpec, comm: &mut Comm) -> Result<(), ExchangeError> {
    for axis in 0..3 {
        comm.exchange_axis(f, FieldTag::PressureCorrection, geom, axis)?;
        mirror_boundary(f, geom, axis);
    }
    Ok(())
}

struct Level {
    geom: SubdomainSpec,
    replicated: bool,
    /// Coarsening factors from the previous (finer) level.
    factors: [usize; 3],
    inv_h2: [f64; 3],
    p: Field3,
    rhs: Field3,
    res: Field3,
    /// `b[a]` at local index `i` is the face between cells `i` and `i+1` along `a`.
    b: [Field3; 3],
}

impl Level {
    fn new(geom: SubdomainSpec, replicated: bool, factors: [usize; 3]) -> Self {
        let n = geom.local_dims;
        let f = Field3::new(n, 1);
        let inv_h2 = geom.spacing.map(|h| 1.0 / (h * h));
        Level {
            geom,
            replicated,
            factors,
            inv_h2,
            p: f.clone(),
            rhs: f.clone(),
            res: f.clone(),
            b: [f.clone(), f.clone(), f],
        }
    }

    fn fill(&mut self, comm: &mut Comm) -> Result<(), ExchangeError> {
        fill_neumann_ghosts(&mut self.p, &self.geom, comm)
    }

    /// One red-black Gauss-Seidel half sweep on cells with `(gi+gj+gk) % 2 == color`.
    fn relax_color(&mut self, color: usize) {
        let n = self.p.dims();
        let o = self.geom.offset;
        let s = [1usize, self.p.stride(1), self.p.stride(2)];
        let h = self.inv_h2;
        for k in 0..n[2] {
            for j in 0..n[1] {
                let start = (color + o[0] + o[1] + j + o[2] + k) % 2;
                let row = self.p.idx(0, j as isize, k as isize);
                let mut i = start;
                while i < n[0] {
                    let id = row + i;
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for a in 0..3 {
                        let b = self.b[a].data();
                        let bl = b[id - s[a]];
                        let br = b[id];
                        let pd = self.p.data();
                        num += h[a] * (bl * pd[id - s[a]] + br * pd[id + s[a]]);
                        den += h[a] * (bl + br);
                    }
                    if den > 0.0 {
                        let v = (num - self.rhs.data()[id]) / den;
                        self.p.data_mut()[id] = v;
                    }
                    i += 2;
                }
            }
        }
    }

    fn smooth(&mut self, sweeps: usize, comm: &mut Comm) -> Result<(), ExchangeError> {
        for _ in 0..sweeps {
            for color in 0..2 {
                self.relax_color(color);
                self.fill(comm)?;
            }
        }
        Ok(())
    }

    /// `out = L x` for the level operator; `x` ghosts must be current.
    fn apply(&self, x: &Field3, out: &mut Field3) {
        let n = x.dims();
        let s = [1usize, x.stride(1), x.stride(2)];
        let h = self.inv_h2;
        for k in 0..n[2] as isize {
            for j in 0..n[1] as isize {
                let row = x.idx(0, j, k);
                for i in 0..n[0] {
                    let id = row + i;
                    let xd = x.data();
                    let mut lap = 0.0;
                    for a in 0..3 {
                        let b = self.b[a].data();
                        lap += h[a] * (b[id] * (xd[id + s[a]] - xd[id]) - b[id - s[a]] * (xd[id] - xd[id - s[a]]));
                    }
                    out.data_mut()[id] = lap;
                }
            }
        }
    }

    fn residual(&mut self) {
        let mut lp = std::mem::replace(&mut self.res, Field3::new([1, 1, 1], 0));
        self.apply(&self.p, &mut lp);
        for (r, f) in lp.data_mut().iter_mut().zip(self.rhs.data()) {
            *r = *f - *r;
        }
        self.res = lp;
    }
}

/// Average face coefficients from a finer level. `fine_b` must have valid
/// values at face index -1 and over the interior tangential cells.
fn coarsen_coefficients(fine_b: &[Field3; 3], factors: [usize; 3], coarse_b: &mut [Field3; 3]) {
    for a in 0..3 {
        let nc = coarse_b[a].dims();
        let (t1, t2) = crate::mesh::tangential(a);
        let cnt = (factors[t1] * factors[t2]) as f64;
        for k in 0..nc[2] as isize {
            for j in 0..nc[1] as isize {
                for i in -1..nc[0] as isize {
                    let c = [i, j, k];
                    if c[0] < 0 && a != 0 || c.iter().enumerate().any(|(ax, &v)| ax != a && v < 0) {
                        continue;
                    }
                    let mut base = [0isize; 3];
                    for ax in 0..3 {
                        base[ax] = if ax == a {
                            // high face of coarse cell c maps to high face of its last fine cell
                            (c[ax] + 1) * factors[ax] as isize - 1
                        } else {
                            c[ax] * factors[ax] as isize
                        };
                    }
                    let mut s = 0.0;
                    for d2 in 0..factors[t2] as isize {
                        for d1 in 0..factors[t1] as isize {
                            let mut q = base;
                            q[t1] += d1;
                            q[t2] += d2;
                            s += fine_b[a].at(q);
                        }
                    }
                    coarse_b[a].put(c, s / cnt);
                }
                // index -1 along a for axes other than x is handled by looping below
            }
        }
        if a != 0 {
            // faces at index -1 along axis a (not covered by the x-led loop above)
            for q in 0..nc[t2] as isize {
                for p in 0..nc[t1] as isize {
                    let mut c = [0isize; 3];
                    c[a] = -1;
                    c[t1] = p;
                    c[t2] = q;
                    let mut base = [0isize; 3];
                    base[a] = -1;
                    base[t1] = p * factors[t1] as isize;
                    base[t2] = q * factors[t2] as isize;
                    let mut s = 0.0;
                    for d2 in 0..factors[t2] as isize {
                        for d1 in 0..factors[t1] as isize {
                            let mut r = base;
                            r[t1] += d1;
                            r[t2] += d2;
                            s += fine_b[a].at(r);
                        }
                    }
                    coarse_b[a].put(c, s / cnt);
                }
            }
        }
    }
}

/// Global arrays of the last distributed level, assembled on every rank.
struct Gathered {
    geom: SubdomainSpec,
    res: Field3,
    b: [Field3; 3],
}

pub struct MultigridHierarchy {
    config: PressureConfig,
    levels: Vec<Level>,
    /// Index of the first replicated level, if its parent is distributed.
    transition: Option<usize>,
    gathered: Option<Gathered>,
    topology: [usize; 3],
    global_cells: f64,
}

impl MultigridHierarchy {
    /// `boundaries` are the global face kinds, indexed like [`Face::index`].
    pub fn build(
        sub: &SubdomainSpec,
        boundaries: [BoundaryKind; 6],
        config: &PressureConfig,
    ) -> Result<Self, PressureError> {
        let gd = sub.global_dims;
        for a in 0..3 {
            if gd[a] % 2 != 0 {
                return Err(PressureError::DimensionNotEven { axis: a, dim: gd[a] });
            }
        }
        let base = sub.with_ghost_width(1);

        // Global coarsening schedule.
        let mut schedule: Vec<[usize; 3]> = vec![[1, 1, 1]];
        let mut dims = gd;
        let mut h = sub.spacing;
        loop {
            let can: Vec<usize> = (0..3)
                .filter(|&a| dims[a] % 2 == 0 && dims[a] / 2 >= config.min_coarse_dim)
                .collect();
            let hmin = h.iter().cloned().fold(f64::INFINITY, f64::min);
            let pick: Vec<usize> = can.into_iter().filter(|&a| h[a] <= 2.0 * hmin * (1.0 + 1e-12)).collect();
            if pick.is_empty() {
                break;
            }
            let mut f = [1usize; 3];
            for a in pick {
                f[a] = 2;
                dims[a] /= 2;
                h[a] *= 2.0;
            }
            schedule.push(f);
        }

        let n_levels = schedule.len();
        let mut levels = Vec::with_capacity(n_levels);
        let mut transition = None;
        let mut geom = base.clone();
        let mut distributed = true;
        for (l, &f) in schedule.iter().enumerate() {
            if l > 0 {
                let coarse_ok = (0..3).all(|a| geom.local_dims[a] % f[a] == 0 && geom.local_dims[a] / f[a] >= 2);
                let last = l + 1 == n_levels;
                if distributed && (!coarse_ok || last) {
                    distributed = false;
                    transition = Some(l);
                }
                geom = if distributed {
                    geom.coarsened(f)
                } else {
                    let g = [0, 1, 2].map(|a| geom.global_dims[a] / f[a]);
                    let hs = [0, 1, 2].map(|a| geom.spacing[a] * f[a] as f64);
                    SubdomainSpec::replicated(sub.rank, g, hs, sub.origin, boundaries, 1)
                };
            }
            levels.push(Level::new(geom.clone(), !distributed, f));
        }

        let gathered = transition.map(|t| {
            let parent = &levels[t - 1].geom;
            let g = SubdomainSpec::replicated(sub.rank, parent.global_dims, parent.spacing, sub.origin, boundaries, 1);
            let f = Field3::new(g.local_dims, 1);
            Gathered { geom: g, res: f.clone(), b: [f.clone(), f.clone(), f] }
        });

        let mut mg = MultigridHierarchy {
            config: *config,
            levels,
            transition,
            gathered,
            topology: sub.topology,
            global_cells: gd.iter().product::<usize>() as f64,
        };
        mg.set_unit_coefficients();
        Ok(mg)
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Global dims and whether the level is replicated, finest first.
    pub fn level_layout(&self) -> Vec<([usize; 3], bool)> {
        self.levels.iter().map(|l| (l.geom.global_dims, l.replicated)).collect()
    }

    pub fn config(&self) -> &PressureConfig {
        &self.config
    }

    /// Pressure correction from the last solve (ghosts current).
    pub fn correction(&self) -> &Field3 {
        &self.levels[0].p
    }

    /// Face coefficients of the finest level.
    pub fn face_coefficients(&self) -> &[Field3; 3] {
        &self.levels[0].b
    }

    fn set_unit_coefficients(&mut self) {
        // Averages of unit faces are unit, so every level can be set directly.
        for l in self.levels.iter_mut() {
            let n = l.geom.local_dims;
            let geom = l.geom.clone();
            for a in 0..3 {
                l.b[a].fill_all(|i, j, k| face_coefficient(&geom, a, [i, j, k], n, None));
            }
        }
    }

    /// Set finest face coefficients from a cell-centered density (ghosts current),
    /// or unit coefficients when `rho` is `None`, and rebuild coarse levels.
    pub fn set_coefficients(&mut self, rho: Option<&Field3>, comm: &mut Comm) -> Result<(), PressureError> {
        {
            let l0 = &mut self.levels[0];
            let n = l0.geom.local_dims;
            let geom = l0.geom.clone();
            for a in 0..3 {
                l0.b[a].fill_all(|i, j, k| face_coefficient(&geom, a, [i, j, k], n, rho));
            }
        }
        for l in 1..self.levels.len() {
            if Some(l) == self.transition {
                self.gather_coefficients(l - 1, comm)?;
                let g = self.gathered.as_ref().expect("gather buffer");
                let f = self.levels[l].factors;
                coarsen_coefficients(&g.b, f, &mut self.levels[l].b);
            } else {
                let (fine, coarse) = self.levels.split_at_mut(l);
                let f = coarse[0].factors;
                coarsen_coefficients(&fine[l - 1].b, f, &mut coarse[0].b);
            }
        }
        Ok(())
    }

    fn rank_offsets(&self, level: usize, rank: usize) -> [usize; 3] {
        let c = coords_of(rank, self.topology);
        let n = self.levels[level].geom.local_dims;
        [0, 1, 2].map(|a| c[a] * n[a])
    }

    fn gather_coefficients(&mut self, level: usize, comm: &mut Comm) -> Result<(), ExchangeError> {
        let n = self.levels[level].geom.local_dims;
        for a in 0..3 {
            let mut local = Vec::new();
            self.levels[level].b[a].pack([0; 3], n.map(|d| d as isize), &mut local);
            let parts = comm.allgather(&local)?;
            let offs: Vec<[usize; 3]> = (0..parts.len()).map(|r| self.rank_offsets(level, r)).collect();
            let g = self.gathered.as_mut().expect("gather buffer");
            for (r, part) in parts.iter().enumerate() {
                let o = offs[r].map(|v| v as isize);
                g.b[a].unpack(o, [0, 1, 2].map(|x| o[x] + n[x] as isize), part);
            }
            // face -1: wrap for periodic, zero for walls
            let gd = g.geom.local_dims;
            let low = Face::new(a, Side::Low);
            let periodic = g.geom.boundary(low).is_none();
            let (t1, t2) = crate::mesh::tangential(a);
            for q in 0..gd[t2] as isize {
                for p in 0..gd[t1] as isize {
                    let mut c = [0isize; 3];
                    c[t1] = p;
                    c[t2] = q;
                    let mut hi = c;
                    c[a] = -1;
                    hi[a] = gd[a] as isize - 1;
                    let v = if periodic { g.b[a].at(hi) } else { 0.0 };
                    g.b[a].put(c, v);
                }
            }
        }
        Ok(())
    }

    fn gather_residual(&mut self, level: usize, comm: &mut Comm) -> Result<(), ExchangeError> {
        let n = self.levels[level].geom.local_dims;
        let mut local = Vec::new();
        self.levels[level].res.pack([0; 3], n.map(|d| d as isize), &mut local);
        let parts = comm.allgather(&local)?;
        let offs: Vec<[usize; 3]> = (0..parts.len()).map(|r| self.rank_offsets(level, r)).collect();
        let g = self.gathered.as_mut().expect("gather buffer");
        for (r, part) in parts.iter().enumerate() {
            let o = offs[r].map(|v| v as isize);
            g.res.unpack(o, [0, 1, 2].map(|x| o[x] + n[x] as isize), part);
        }
        Ok(())
    }

    fn restrict_down(&mut self, l: usize, comm: &mut Comm) -> Result<(), PressureError> {
        let f = self.levels[l + 1].factors;
        if Some(l + 1) == self.transition {
            self.gather_residual(l, comm)?;
            let g = self.gathered.as_ref().expect("gather buffer");
            restrict(&g.res, f, &mut self.levels[l + 1].rhs)?;
        } else {
            let (fine, coarse) = self.levels.split_at_mut(l + 1);
            restrict(&fine[l].res, f, &mut coarse[0].rhs)?;
        }
        self.levels[l + 1].p.fill(0.0);
        Ok(())
    }

    fn prolong_up(&mut self, l: usize) {
        let f = self.levels[l + 1].factors;
        let (fine, coarse) = self.levels.split_at_mut(l + 1);
        let fine = &mut fine[l];
        let base = if Some(l + 1) == self.transition {
            fine.geom.offset.map(|v| v as isize)
        } else {
            [0; 3]
        };
        prolong_add(&coarse[0].p, f, base, [0; 3], &mut fine.p);
    }

    fn coarse_solve(&mut self, comm: &mut Comm) -> Result<(), PressureError> {
        let last = self.levels.len() - 1;
        let lvl = &mut self.levels[last];
        match self.config.coarse {
            CoarseSolver::ConjugateGradient { max_iterations, relative_tolerance } if lvl.replicated => {
                conjugate_gradient(lvl, max_iterations, relative_tolerance, comm)?;
            }
            CoarseSolver::Sweeps(n) => lvl.smooth(n, comm)?,
            CoarseSolver::ConjugateGradient { .. } => lvl.smooth(50, comm)?,
        }
        Ok(())
    }

    fn vcycle(&mut self, l: usize, comm: &mut Comm) -> Result<(), PressureError> {
        if l + 1 == self.levels.len() {
            return self.coarse_solve(comm);
        }
        let (pre, post) = (self.config.pre_sweeps, self.config.post_sweeps);
        self.levels[l].smooth(pre, comm)?;
        self.levels[l].residual();
        self.restrict_down(l, comm)?;
        self.vcycle(l + 1, comm)?;
        self.levels[l + 1].fill(comm)?;
        self.prolong_up(l);
        self.levels[l].fill(comm)?;
        self.levels[l].smooth(post, comm)?;
        Ok(())
    }

    /// Solve `div(b grad p_hat) = div(u*)/dt` (mean removed). The result is left
    /// mean-free with current ghosts in [`correction`](Self::correction).
    pub fn solve(&mut self, vel: &[Field3; 3], dt: f64, comm: &mut Comm) -> Result<SolveStats, PressureError> {
        let spacing = self.levels[0].geom.spacing;
        let n = self.levels[0].geom.local_dims;
        let mut div = Field3::new(n, 0);
        divergence(vel, spacing, &mut div);
        let mut acc = ExactSum::new();
        div.for_interior(|_, _, _, v| acc.add(v / dt));
        let mean = comm.exact_sum(&acc)? / self.global_cells;
        {
            let l0 = &mut self.levels[0];
            l0.rhs.fill(0.0);
            div.for_interior(|i, j, k, v| l0.rhs.set(i, j, k, v / dt - mean));
            l0.p.fill(0.0);
        }
        let tol = self.config.tolerance;
        let r0 = comm.max(self.levels[0].rhs.interior_max_abs())?;
        let mut est = dt * (r0 + mean.abs());
        let mut cycles = 0;
        while est > tol {
            if cycles == self.config.max_cycles {
                return Err(PressureError::NoConvergence { cycles, divergence: est });
            }
            self.vcycle(0, comm)?;
            cycles += 1;
            self.levels[0].residual();
            let r = comm.max(self.levels[0].res.interior_max_abs())?;
            est = dt * (r + mean.abs());
        }
        // remove the mean of the correction
        let mut pa = ExactSum::new();
        self.levels[0].p.for_interior(|_, _, _, v| pa.add(v));
        let pm = comm.exact_sum(&pa)? / self.global_cells;
        if pm != 0.0 {
            let l0 = &mut self.levels[0];
            let nn = l0.p.dims();
            for k in 0..nn[2] as isize {
                for j in 0..nn[1] as isize {
                    for i in 0..nn[0] as isize {
                        let v = l0.p.get(i, j, k) - pm;
                        l0.p.set(i, j, k, v);
                    }
                }
            }
        }
        self.levels[0].fill(comm)?;
        Ok(SolveStats { cycles, divergence: est, rhs_mean: mean })
    }

    /// `u -= dt * b * grad(p_hat)` on every owned face.
    pub fn project(&self, vel: &mut [Field3; 3], dt: f64) {
        let l0 = &self.levels[0];
        let ph = &l0.p;
        let n = ph.dims();
        for (a, f) in vel.iter_mut().enumerate() {
            let h = l0.geom.spacing[a];
            for k in 0..n[2] as isize {
                for j in 0..n[1] as isize {
                    for i in 0..n[0] as isize {
                        let c = [i, j, k];
                        let mut up = c;
                        up[a] += 1;
                        let b = l0.b[a].at(c);
                        if b != 0.0 {
                            let v = f.at(c) - dt * b * (ph.at(up) - ph.at(c)) / h;
                            f.put(c, v);
                        }
                    }
                }
            }
        }
    }

    /// One V-cycle on the finest level's loaded problem; returns the global max residual.
    pub fn cycle(&mut self, comm: &mut Comm) -> Result<f64, PressureError> {
        self.vcycle(0, comm)?;
        Ok(self.level_residual(0, comm)?)
    }

    /// Smooth on one level of the current solve; exposed for diagnostics.
    pub fn smooth_level(&mut self, level: usize, sweeps: usize, comm: &mut Comm) -> Result<(), ExchangeError> {
        self.levels[level].smooth(sweeps, comm)
    }

    /// Set a level's right-hand side and initial guess (interiors), for tests and diagnostics.
    pub fn load_level(&mut self, level: usize, p: &Field3, rhs: &Field3, comm: &mut Comm) -> Result<(), ExchangeError> {
        let l = &mut self.levels[level];
        l.p.fill(0.0);
        l.rhs.fill(0.0);
        p.for_interior(|i, j, k, v| l.p.set(i, j, k, v));
        rhs.for_interior(|i, j, k, v| l.rhs.set(i, j, k, v));
        l.fill(comm)
    }

    pub fn level_solution(&self, level: usize) -> &Field3 {
        &self.levels[level].p
    }

    /// Global max residual on a level.
    pub fn level_residual(&mut self, level: usize, comm: &mut Comm) -> Result<f64, ExchangeError> {
        self.levels[level].residual();
        comm.max(self.levels[level].res.interior_max_abs())
    }
}

fn face_coefficient(geom: &SubdomainSpec, a: usize, c: [isize; 3], n: [usize; 3], rho: Option<&Field3>) -> f64 {
    let i = c[a];
    if i == -1 && geom.boundary(Face::new(a, Side::Low)).is_some() {
        return 0.0;
    }
    if i == n[a] as isize - 1 && geom.boundary(Face::new(a, Side::High)).is_some() {
        return 0.0;
    }
    if i >= n[a] as isize {
        return 0.0;
    }
    match rho {
        None => 1.0,
        Some(r) => {
            let mut up = c;
            up[a] += 1;
            2.0 / (r.at(c) + r.at(up))
        }
    }
}

/// CG on a replicated level for the singular Neumann/periodic operator.
fn conjugate_gradient(lvl: &mut Level, max_it: usize, rel_tol: f64, comm: &mut Comm) -> Result<(), ExchangeError> {
    let n = lvl.p.dims();
    let cells = (n[0] * n[1] * n[2]) as f64;
    // Solve (-L) x = -rhs with a mean-free right-hand side.
    let mut b = Field3::new(n, 1);
    let mut mean = 0.0;
    lvl.rhs.for_interior(|_, _, _, v| mean += v);
    mean /= cells;
    lvl.rhs.for_interior(|i, j, k, v| b.set(i, j, k, -(v - mean)));
    let dot = |x: &Field3, y: &Field3| {
        let mut s = 0.0;
        x.for_interior(|i, j, k, v| s += v * y.get(i, j, k));
        s
    };
    let mut x = Field3::new(n, 1);
    x.copy_from(&lvl.p);
    let mut ax = Field3::new(n, 1);
    fill_neumann_ghosts(&mut x, &lvl.geom, comm)?;
    lvl.apply(&x, &mut ax);
    let mut r = Field3::new(n, 1);
    r.fill_interior(|i, j, k| b.get(i, j, k) + ax.get(i, j, k));
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    let stop = rel_tol * rel_tol * dot(&b, &b).max(1e-300);
    let mut q = Field3::new(n, 1);
    for _ in 0..max_it {
        if rr <= stop {
            break;
        }
        fill_neumann_ghosts(&mut d, &lvl.geom, comm)?;
        lvl.apply(&d, &mut q);
        // q = -L d
        let dq = -dot(&d, &q);
        if dq <= 0.0 {
            break;
        }
        let alpha = rr / dq;
        axpy(&mut x, alpha, &d);
        axpy(&mut r, alpha, &q);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (dv, rv) in d.data_mut().iter_mut().zip(r.data()) {
            *dv = rv + beta * *dv;
        }
    }
    let mut xm = 0.0;
    x.for_interior(|_, _, _, v| xm += v);
    xm /= cells;
    let p = &mut lvl.p;
    x.for_interior(|i, j, k, v| p.set(i, j, k, v - xm));
    lvl.fill(comm)
}

fn axpy(y: &mut Field3, a: f64, x: &Field3) {
    for (yv, xv) in y.data_mut().iter_mut().zip(x.data()) {
        *yv += a * xv;
    }
}

/// `p += p_hat - nu dt lap(p_hat) / 2` with the 7-point Laplacian. `p_hat` ghosts current.
pub fn update_pressure(p: &mut Field3, p_hat: &Field3, nu: f64, dt: f64, spacing: [f64; 3]) {
    let n = p.dims();
    for k in 0..n[2] as isize {
        for j in 0..n[1] as isize {
            for i in 0..n[0] as isize {
                let c = [i, j, k];
                let ph = p_hat.at(c);
                let mut lap = 0.0;
                for a in 0..3 {
                    let mut lo = c;
                    let mut hi = c;
                    lo[a] -= 1;
                    hi[a] += 1;
                    lap += (p_hat.at(hi) - 2.0 * ph + p_hat.at(lo)) / (spacing[a] * spacing[a]);
                }
                let v = p.at(c) + ph - 0.5 * nu * dt * lap;
                p.put(c, v);
            }
        }
    }
}
