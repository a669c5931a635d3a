//! Level-set interface capturing: smoothed Heaviside, material mapping,
//! WENO5/TVD-RK3 advection and pseudo-time reinitialization.

use serde::{Deserialize, Serialize};

use crate::exchange::{Comm, ExchangeError};
use crate::mesh::Field3;
use crate::schemes::{weno5_derivative, weno5_reconstruct, WenoParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidPair {
    pub rho_w: f64,
    pub mu_w: f64,
    pub rho_a: f64,
    pub mu_a: f64,
}

impl FluidPair {
    /// Water and air; dynamic viscosities.
    pub fn water_air() -> Self {
        FluidPair { rho_w: 1000.0, mu_w: 1.0e-3, rho_a: 1.25, mu_a: 2.25e-5 }
    }

    pub fn is_valid(&self) -> bool {
        [self.rho_w, self.mu_w, self.rho_a, self.mu_a].iter().all(|v| *v > 0.0) && self.rho_w > self.rho_a
    }
}

/// Half thickness of the smeared interface: 1.5 cells.
pub fn interface_half_width(spacing: [f64; 3]) -> f64 {
    1.5 * spacing.iter().cloned().fold(0.0, f64::max)
}

pub fn heaviside(phi: f64, eps: f64) -> f64 {
    if phi <= -eps {
        0.0
    } else if phi >= eps {
        1.0
    } else {
        0.5 * (1.0 + phi / eps + (std::f64::consts::PI * phi / eps).sin() / std::f64::consts::PI)
    }
}

/// Density and viscosity from `phi` in every stored cell, ghosts included.
pub fn material_fields(phi: &Field3, pair: &FluidPair, eps: f64, rho: &mut Field3, mu: &mut Field3) {
    for ((p, r), m) in phi.data().iter().zip(rho.data_mut()).zip(mu.data_mut()) {
        let h = heaviside(*p, eps);
        *r = pair.rho_a + (pair.rho_w - pair.rho_a) * h;
        *m = pair.mu_a + (pair.mu_w - pair.mu_a) * h;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReinitConfig {
    pub cfl: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Smoothing length of the sign function; `None` means one grid spacing.
    pub smoothing: Option<f64>,
}

impl Default for ReinitConfig {
    fn default() -> Self {
        ReinitConfig { cfl: 0.1, max_iterations: 15, tolerance: 5e-3, smoothing: None }
    }
}

/// Ghost refresh and collectives for a cell-centered scalar.
pub trait ScalarHalo {
    fn fill(&mut self, f: &mut Field3) -> Result<(), ExchangeError>;
    fn comm(&mut self) -> &mut Comm;
}

pub fn signed_function(d0: f64, grad: f64, eps_r: f64) -> f64 {
    d0 / (d0 * d0 + (grad * eps_r).powi(2)).sqrt()
}

/// TVD-RK3 increments: stage k sets `phi = phi0 + a_k (phi_prev - phi0 + dt L(phi_prev))`,
/// equivalent to the convex forms (1; 3/4, 1/4; 1/3, 2/3).
const RK3_BLEND: [f64; 3] = [1.0, 0.25, 2.0 / 3.0];

fn rk3_stage(phi: &mut Field3, phi0: &Field3, rhs: &Field3, dt: f64, a: f64) {
    let n = phi.dims();
    for k in 0..n[2] as isize {
        for j in 0..n[1] as isize {
            let row = phi.idx(0, j, k);
            for i in 0..n[0] {
                let id = row + i;
                let p0 = phi0.data()[id];
                let cur = phi.data()[id];
                phi.data_mut()[id] = p0 + a * (cur - p0 + dt * rhs.data()[id]);
            }
        }
    }
}

/// Velocity components averaged to cell centers (interior only).
pub fn cell_centered_velocity(vel: &[Field3; 3]) -> [Field3; 3] {
    let n = vel[0].dims();
    let mut out = [Field3::new(n, 0), Field3::new(n, 0), Field3::new(n, 0)];
    for (c, o) in out.iter_mut().enumerate() {
        let f = &vel[c];
        o.fill_interior(|i, j, k| {
            let mut m = [i, j, k];
            m[c] -= 1;
            0.5 * (f.get(i, j, k) + f.at(m))
        });
    }
    out
}

fn advection_rhs(phi: &Field3, uc: &[Field3; 3], spacing: [f64; 3], wp: &WenoParams, out: &mut Field3) {
    let n = phi.dims();
    let d = phi.data();
    let s = [phi.stride(0), phi.stride(1), phi.stride(2)];
    for k in 0..n[2] as isize {
        for j in 0..n[1] as isize {
            let row = phi.idx(0, j, k);
            let crow = uc[0].idx(0, j, k);
            for i in 0..n[0] {
                let id = row + i;
                let mut acc = 0.0;
                for a in 0..3 {
                    let ua = uc[a].data()[crow + i];
                    if ua != 0.0 {
                        acc += ua * weno5_derivative(d, id, s[a], ua > 0.0, spacing[a], wp);
                    }
                }
                out.data_mut()[id] = -acc;
            }
        }
    }
}

/// Advance `phi` by `dt` under `d phi/dt + u . grad phi = 0`. Ghosts of `phi` must be current.
pub fn lsm_advect(
    phi: &mut Field3,
    vel: &[Field3; 3],
    dt: f64,
    spacing: [f64; 3],
    halo: &mut dyn ScalarHalo,
) -> Result<(), ExchangeError> {
    let wp = WenoParams::optimal();
    let uc = cell_centered_velocity(vel);
    let phi0 = phi.clone();
    let mut rhs = Field3::new(phi.dims(), phi.ghost());
    for a in RK3_BLEND {
        advection_rhs(phi, &uc, spacing, &wp, &mut rhs);
        rk3_stage(phi, &phi0, &rhs, dt, a);
        halo.fill(phi)?;
    }
    Ok(())
}

/// Godunov-upwinded `|grad phi|` in every interior cell. Each face gets one
/// left-biased and one right-biased WENO5 reconstruction, shared by the two
/// cells next to it. Needs three ghost layers.
fn godunov_gradient(phi: &Field3, spacing: [f64; 3], wp: &WenoParams, scratch: &mut GradScratch) {
    let n = phi.dims();
    let d = phi.data();
    let s = [phi.stride(0), phi.stride(1), phi.stride(2)];
    let len = d.len();
    scratch.left.resize(len, 0.0);
    scratch.right.resize(len, 0.0);
    scratch.g.clear();
    scratch.g.resize(len, 0.0);
    for a in 0..3 {
        let st = s[a];
        let mut lo = [0isize; 3];
        lo[a] = -1;
        // x rows of faces between each cell and its next neighbor along `a`
        let len = n[0] + usize::from(a == 0);
        for k in lo[2]..n[2] as isize {
            for j in lo[1]..n[1] as isize {
                let base = phi.idx(lo[0], j, k);
                let line = |o: isize| {
                    let start = (base as isize + o * st as isize) as usize;
                    &d[start..start + len]
                };
                let (m2, m1, c0, p1, p2, p3) = (line(-2), line(-1), line(0), line(1), line(2), line(3));
                let left = &mut scratch.left[base..base + len];
                for i in 0..len {
                    left[i] = weno5_reconstruct(&[m2[i], m1[i], c0[i], p1[i], p2[i]], wp);
                }
                let right = &mut scratch.right[base..base + len];
                for i in 0..len {
                    right[i] = weno5_reconstruct(&[p3[i], p2[i], p1[i], c0[i], m1[i]], wp);
                }
            }
        }
        let h = spacing[a];
        let st = s[a];
        for k in 0..n[2] as isize {
            for j in 0..n[1] as isize {
                let row = phi.idx(0, j, k);
                for id in row..row + n[0] {
                    let back = (scratch.left[id] - scratch.left[id - st]) / h;
                    let fwd = (scratch.right[id] - scratch.right[id - st]) / h;
                    scratch.g[id] += if d[id] >= 0.0 {
                        back.max(0.0).powi(2).max(fwd.min(0.0).powi(2))
                    } else {
                        back.min(0.0).powi(2).max(fwd.max(0.0).powi(2))
                    };
                }
            }
        }
    }
    for v in scratch.g.iter_mut() {
        *v = v.sqrt();
    }
}

#[derive(Default)]
struct GradScratch {
    left: Vec<f64>,
    right: Vec<f64>,
    g: Vec<f64>,
}

/// Pseudo-time rate from the gradient magnitudes currently in `scratch`.
fn reinit_rhs(phi: &Field3, eps_r: f64, scratch: &GradScratch, out: &mut Field3) {
    let n = phi.dims();
    let d = phi.data();
    for k in 0..n[2] as isize {
        for j in 0..n[1] as isize {
            let row = phi.idx(0, j, k);
            for id in row..row + n[0] {
                let g = scratch.g[id];
                let sign = signed_function(d[id], g, eps_r);
                out.data_mut()[id] = if sign.is_finite() { sign * (1.0 - g) } else { 0.0 };
            }
        }
    }
}

/// Local (band max, band count, overall max) of `| |grad phi| - 1 |`.
fn local_residual(phi: &Field3, spacing: [f64; 3], band: f64, wp: &WenoParams, scratch: &mut GradScratch) -> (f64, f64, f64) {
    godunov_gradient(phi, spacing, wp, scratch);
    let n = phi.dims();
    let d = phi.data();
    let (mut mb, mut cb, mut ma) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..n[2] as isize {
        for j in 0..n[1] as isize {
            let row = phi.idx(0, j, k);
            for id in row..row + n[0] {
                let r = (scratch.g[id] - 1.0).abs();
                ma = ma.max(r);
                if d[id].abs() <= band {
                    mb = mb.max(r);
                    cb += 1.0;
                }
            }
        }
    }
    (mb, cb, ma)
}

/// Global reinitialization residual: max `| |grad phi| - 1 |` over the interface band,
/// or over the whole domain when no cell lies in the band.
pub fn reinit_residual(phi: &Field3, spacing: [f64; 3], comm: &mut Comm) -> Result<f64, ExchangeError> {
    residual_with(phi, spacing, comm, &mut GradScratch::default())
}

fn residual_with(phi: &Field3, spacing: [f64; 3], comm: &mut Comm, scratch: &mut GradScratch) -> Result<f64, ExchangeError> {
    let band = interface_half_width(spacing);
    let (mb, cb, ma) = local_residual(phi, spacing, band, &WenoParams::optimal(), scratch);
    let all = comm.allgather(&[mb, cb, ma])?;
    let any_band = all.iter().any(|v| v[1] > 0.0);
    let pick = if any_band { 0 } else { 2 };
    Ok(all.iter().map(|v| v[pick]).fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReinitStats {
    /// Pseudo-steps performed.
    pub iterations: usize,
    /// Pseudo-step whose field was kept (0 = input field).
    pub accepted: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Drive `phi` toward a signed distance function by pseudo-time relaxation.
///
/// Stops once the residual is within tolerance or the iteration cap is hit. The
/// returned field is the last one whose residual did not exceed its predecessor's
/// accepted value, so accepted residuals never increase.
pub fn reinitialize(
    phi: &mut Field3,
    cfg: &ReinitConfig,
    spacing: [f64; 3],
    halo: &mut dyn ScalarHalo,
) -> Result<ReinitStats, ExchangeError> {
    let wp = WenoParams::optimal();
    let h = spacing.iter().cloned().fold(0.0, f64::max);
    let tau = cfg.cfl * h;
    let eps_r = cfg.smoothing.unwrap_or(h);

    halo.fill(phi)?;
    let mut scratch = GradScratch::default();
    let mut best_res = residual_with(phi, spacing, halo.comm(), &mut scratch)?;
    let mut stats = ReinitStats { iterations: 0, accepted: 0, residual: best_res, history: vec![best_res] };
    if best_res <= cfg.tolerance {
        return Ok(stats);
    }
    let mut best = phi.clone();
    let mut rhs = Field3::new(phi.dims(), phi.ghost());
    for m in 1..=cfg.max_iterations {
        let phi0 = phi.clone();
        for (stage, a) in RK3_BLEND.into_iter().enumerate() {
            // the first stage reuses the gradient from the residual check
            if stage > 0 {
                godunov_gradient(phi, spacing, &wp, &mut scratch);
            }
            reinit_rhs(phi, eps_r, &scratch, &mut rhs);
            rk3_stage(phi, &phi0, &rhs, tau, a);
            halo.fill(phi)?;
        }
        let r = residual_with(phi, spacing, halo.comm(), &mut scratch)?;
        stats.iterations = m;
        stats.history.push(r);
        if r <= best_res {
            best_res = r;
            best.copy_from(phi);
            stats.accepted = m;
        }
        if r <= cfg.tolerance {
            break;
        }
    }
    if stats.accepted != stats.iterations {
        phi.copy_from(&best);
    }
    stats.residual = best_res;
    Ok(stats)
}
