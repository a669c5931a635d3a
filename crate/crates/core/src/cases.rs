//! Benchmark cases: lid-driven cavity, Taylor-Green vortex and a solitary wave
//! entering a still tank, with their diagnostics.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::exchange::{Comm, ExactSum, ExchangeError};
use crate::levelset::{heaviside, interface_half_width, FluidPair};
use crate::mesh::{build_decomposition, BoundaryKind, DecompositionPlan, Face, GlobalGrid, MeshError, Side, StaggeredField, SubdomainSpec};
use crate::pressure::CoarseSolver;
use crate::schemes::Scheme;
use crate::stepper::{BoundarySetup, InflowProfile, SimConfig, SimState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseId {
    #[default]
    Cavity,
    Tgv,
    Wave,
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseId::Cavity => "cavity",
            CaseId::Tgv => "tgv",
            CaseId::Wave => "wave",
        })
    }
}

impl FromStr for CaseId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cavity" => Ok(CaseId::Cavity),
            "tgv" => Ok(CaseId::Tgv),
            "wave" => Ok(CaseId::Wave),
            other => Err(format!("unknown case '{other}' (expected cavity, tgv or wave)")),
        }
    }
}

fn face_kinds(f: impl Fn(Face) -> BoundaryKind) -> [BoundaryKind; 6] {
    Face::ALL.map(f)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CavitySpec {
    pub dims: [usize; 3],
    pub reynolds: f64,
    pub lid_speed: f64,
    pub cfl: f64,
}

impl CavitySpec {
    /// Cells per direction of the reference grids.
    pub const TABLE: [usize; 6] = [160, 200, 320, 400, 800, 1000];

    pub fn new(n: usize) -> Self {
        CavitySpec { dims: [n; 3], reynolds: 400.0, lid_speed: 1.0, cfl: 0.8 }
    }

    pub fn table_row(row: usize) -> Option<Self> {
        Self::TABLE.get(row).map(|&n| Self::new(n))
    }

    /// Unit cube, so `nu = U L / Re`.
    pub fn nu(&self) -> f64 {
        self.lid_speed / self.reynolds
    }

    pub fn grid(&self) -> Result<GlobalGrid, MeshError> {
        GlobalGrid::from_extent(self.dims, [1.0; 3], [0.0; 3])
    }

    pub fn boundaries(&self) -> BoundarySetup {
        let kinds = face_kinds(|f| match (f.axis, f.side) {
            (1, _) => BoundaryKind::Periodic,
            (2, Side::High) => BoundaryKind::MovingLid,
            _ => BoundaryKind::NoSlipWall,
        });
        BoundarySetup { lid_velocity: [self.lid_speed, 0.0, 0.0], ..BoundarySetup::new(kinds) }
    }

    pub fn config(&self) -> SimConfig {
        let h = 1.0 / self.dims.iter().copied().max().unwrap_or(1) as f64;
        SimConfig {
            case: CaseId::Cavity,
            scheme: Scheme::Cd4,
            cfl: Some(self.cfl),
            nu: self.nu(),
            fallback_dt: self.cfl * h / self.lid_speed,
            ..SimConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TgvSpec {
    pub dims: [usize; 3],
    pub u0: f64,
    pub length: f64,
    pub reynolds: f64,
    pub cfl: f64,
}

impl TgvSpec {
    pub const TABLE: [usize; 4] = [200, 320, 640, 1000];

    pub fn new(n: usize) -> Self {
        TgvSpec { dims: [n; 3], u0: 1.0, length: 1.0, reynolds: 1600.0, cfl: 0.3 }
    }

    pub fn table_row(row: usize) -> Option<Self> {
        Self::TABLE.get(row).map(|&n| Self::new(n))
    }

    pub fn nu(&self) -> f64 {
        self.length * self.u0 / self.reynolds
    }

    pub fn grid(&self) -> Result<GlobalGrid, MeshError> {
        GlobalGrid::from_extent(self.dims, [2.0 * PI * self.length; 3], [0.0; 3])
    }

    pub fn boundaries(&self) -> BoundarySetup {
        BoundarySetup::new([BoundaryKind::Periodic; 6])
    }

    pub fn config(&self) -> SimConfig {
        SimConfig {
            case: CaseId::Tgv,
            scheme: Scheme::Weno5,
            cfl: Some(self.cfl),
            nu: self.nu(),
            enable_sgs: true,
            ..SimConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveSpec {
    pub dims: [usize; 3],
    /// Tank length, width and height (m).
    pub extent: [f64; 3],
    pub depth: f64,
    pub amplitude: f64,
    pub gravity: f64,
    pub fluids: FluidPair,
    pub dt: f64,
    pub cfl_lsm: f64,
    /// Time at which the crest passes the inflow plane. Zero puts it there at t = 0.
    #[serde(default)]
    pub inflow_delay: f64,
}

impl WaveSpec {
    pub const TABLE: [[usize; 3]; 3] = [[1280, 40, 30], [2560, 80, 60], [5120, 160, 120]];

    pub fn new(dims: [usize; 3]) -> Self {
        WaveSpec {
            dims,
            extent: [12.8, 0.4, 0.4],
            depth: 0.2,
            amplitude: 0.02,
            gravity: 9.81,
            fluids: FluidPair::water_air(),
            dt: 0.001,
            cfl_lsm: 0.1,
            inflow_delay: 0.0,
        }
    }

    pub fn table_row(row: usize) -> Option<Self> {
        Self::TABLE.get(row).map(|&d| Self::new(d))
    }

    /// Amplitude over depth.
    pub fn epsilon(&self) -> f64 {
        self.amplitude / self.depth
    }

    pub fn wavenumber(&self) -> f64 {
        (3.0 * self.amplitude / (4.0 * self.depth.powi(3))).sqrt()
    }

    pub fn celerity(&self) -> f64 {
        (self.gravity * (self.amplitude + self.depth)).sqrt()
    }

    pub fn grid(&self) -> Result<GlobalGrid, MeshError> {
        GlobalGrid::from_extent(self.dims, self.extent, [0.0; 3])
    }

    pub fn boundaries(&self) -> BoundarySetup {
        let kinds = face_kinds(|f| match (f.axis, f.side) {
            (0, Side::Low) => BoundaryKind::Inflow,
            (0, Side::High) => BoundaryKind::Outflow,
            _ => BoundaryKind::SlipWall,
        });
        BoundarySetup { inflow: Some(Arc::new(WaveInflow(*self))), ..BoundarySetup::new(kinds) }
    }

    pub fn config(&self) -> SimConfig {
        let mut pressure = crate::pressure::PressureConfig::default();
        pressure.coarse = CoarseSolver::ConjugateGradient { max_iterations: 2000, relative_tolerance: 1e-10 };
        // let the thin lateral axis keep coarsening alongside the others
        pressure.min_coarse_dim = 2;
        SimConfig {
            case: CaseId::Wave,
            scheme: Scheme::Weno5,
            cfl: None,
            fixed_dt: Some(self.dt),
            cfl_lsm: self.cfl_lsm,
            enable_lsm: true,
            nu: self.fluids.mu_w / self.fluids.rho_w,
            source: [0.0, 0.0, -self.gravity],
            fluids: self.fluids,
            pressure,
            ..SimConfig::default()
        }
    }
}

/// Normalized elevation `sech^2(theta)` and its first three time derivatives at
/// the inflow, `theta = k (x - c t)`.
fn normalized_elevation(spec: &WaveSpec, x: f64, t: f64) -> [f64; 4] {
    let k = spec.wavenumber();
    let c = spec.celerity();
    let th = k * (x - c * (t - spec.inflow_delay));
    let s = 1.0 / th.cosh().powi(2);
    let tn = th.tanh();
    // derivatives in theta; d/dt = -k c d/dtheta
    let d1 = -2.0 * s * tn;
    let d2 = 4.0 * s - 6.0 * s * s;
    let d3 = -8.0 * s * tn + 24.0 * s * s * tn;
    let r = -k * c;
    [s, r * d1, r * r * d2, r * r * r * d3]
}

/// Free-surface elevation at the inflow (x = 0) at time `t`.
pub fn wave_elevation(t: f64, spec: &WaveSpec) -> f64 {
    wave_elevation_at(0.0, t, spec)
}

pub fn wave_elevation_at(x: f64, t: f64, spec: &WaveSpec) -> f64 {
    spec.amplitude * normalized_elevation(spec, x, t)[0]
}

/// Inflow velocity `(u, v, w)` at height `z` above the bottom. Above the free
/// surface the profile is held at its surface value.
pub fn wave_inflow(z: f64, t: f64, spec: &WaveSpec) -> [f64; 3] {
    let [eh, e1, e2, e3] = normalized_elevation(spec, 0.0, t);
    let d = spec.depth;
    let eps = spec.epsilon();
    let c = spec.celerity();
    let z = z.min(d + spec.amplitude * eh).max(0.0);
    let base = eps * (spec.gravity * d).sqrt();
    let disp = d * d / (3.0 * c * c);
    let u = base * (eh - eps * eh * eh / 4.0 + disp * (1.0 - 1.5 * z * z / (d * d)) * e2);
    let w = z * base / c * ((1.0 - 0.5 * eps * eh) * e1 + disp * (1.0 - 0.5 * z * z / (d * d)) * e3);
    [u, 0.0, w]
}

#[derive(Clone, Copy, Debug)]
pub struct WaveInflow(pub WaveSpec);

impl InflowProfile for WaveInflow {
    fn velocity(&self, pos: [f64; 3], t: f64) -> [f64; 3] {
        wave_inflow(pos[2], t, &self.0)
    }

    fn level_set(&self, pos: [f64; 3], t: f64) -> Option<f64> {
        Some(self.0.depth + wave_elevation(t, &self.0) - pos[2])
    }
}

/// A case ready to decompose: grid, boundaries and solver settings.
#[derive(Clone, Debug)]
pub struct CaseSetup {
    pub id: CaseId,
    pub grid: GlobalGrid,
    pub boundaries: BoundarySetup,
    pub config: SimConfig,
    pub spec: CaseSpec,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CaseSpec {
    Cavity(CavitySpec),
    Tgv(TgvSpec),
    Wave(WaveSpec),
}

impl CaseSpec {
    pub fn id(&self) -> CaseId {
        match self {
            CaseSpec::Cavity(_) => CaseId::Cavity,
            CaseSpec::Tgv(_) => CaseId::Tgv,
            CaseSpec::Wave(_) => CaseId::Wave,
        }
    }

    /// Default spec for a case, optionally with explicit grid dims.
    pub fn for_case(id: CaseId, dims: Option<[usize; 3]>) -> Self {
        match id {
            CaseId::Cavity => {
                let mut s = CavitySpec::new(32);
                if let Some(d) = dims {
                    s.dims = d;
                }
                CaseSpec::Cavity(s)
            }
            CaseId::Tgv => {
                let mut s = TgvSpec::new(32);
                if let Some(d) = dims {
                    s.dims = d;
                }
                CaseSpec::Tgv(s)
            }
            CaseId::Wave => CaseSpec::Wave(WaveSpec::new(dims.unwrap_or(WaveSpec::TABLE[0]))),
        }
    }

    pub fn setup(&self) -> Result<CaseSetup, MeshError> {
        let (grid, boundaries, config) = match self {
            CaseSpec::Cavity(s) => (s.grid()?, s.boundaries(), s.config()),
            CaseSpec::Tgv(s) => (s.grid()?, s.boundaries(), s.config()),
            CaseSpec::Wave(s) => (s.grid()?, s.boundaries(), s.config()),
        };
        Ok(CaseSetup { id: self.id(), grid, boundaries, config, spec: *self })
    }
}

impl CaseSetup {
    pub fn plan(&self, topology: [usize; 3]) -> Result<DecompositionPlan, MeshError> {
        let mut g = self.config.scheme.ghost_width();
        if self.config.enable_lsm {
            g = g.max(Scheme::Weno5.ghost_width());
        }
        build_decomposition(self.grid.clone(), topology, g, self.boundaries.kinds)
    }

    /// Initial state for one rank (owned cells only; ghosts are filled by the solver).
    pub fn initial_state(&self, sub: &SubdomainSpec) -> SimState {
        match &self.spec {
            CaseSpec::Cavity(s) => init_cavity(s, sub),
            CaseSpec::Tgv(s) => init_tgv(s, sub),
            CaseSpec::Wave(s) => init_wave(s, sub),
        }
    }
}

/// Fluid at rest.
pub fn init_cavity(spec: &CavitySpec, sub: &SubdomainSpec) -> SimState {
    let mut f = StaggeredField::for_subdomain(sub);
    f.rho.fill(1.0);
    f.mu.fill(spec.nu());
    SimState::new(f)
}

pub fn init_tgv(spec: &TgvSpec, sub: &SubdomainSpec) -> SimState {
    let mut f = StaggeredField::for_subdomain(sub);
    let (u0, l) = (spec.u0, spec.length);
    let x = |a: usize, i: isize, on_face: bool| if on_face { sub.face(a, i) } else { sub.center(a, i) } / l;
    f.vel[0].fill_interior(|i, j, k| u0 * x(0, i, true).sin() * x(1, j, false).cos() * x(2, k, false).cos());
    f.vel[1].fill_interior(|i, j, k| -u0 * x(0, i, false).cos() * x(1, j, true).sin() * x(2, k, false).cos());
    f.rho.fill(1.0);
    f.mu.fill(spec.nu());
    SimState::new(f)
}

/// Still water of the configured depth with a hydrostatic pressure field.
pub fn init_wave(spec: &WaveSpec, sub: &SubdomainSpec) -> SimState {
    let mut f = StaggeredField::for_subdomain(sub);
    let d = spec.depth;
    f.phi.fill_interior(|_, _, k| d - sub.center(2, k));
    // Pressure column over the whole height, integrated down from zero at the top
    // with the same face densities the momentum equation uses.
    let nz = sub.global_dims[2];
    let h = sub.spacing[2];
    let eps = interface_half_width(sub.spacing);
    let pair = spec.fluids;
    let rho = |kg: usize| {
        let z = sub.origin[2] + (kg as f64 + 0.5) * h;
        pair.rho_a + (pair.rho_w - pair.rho_a) * heaviside(d - z, eps)
    };
    let mut col = vec![0.0; nz];
    for kg in (0..nz - 1).rev() {
        col[kg] = col[kg + 1] + spec.gravity * h * 0.5 * (rho(kg) + rho(kg + 1));
    }
    let off = sub.offset[2] as isize;
    f.p.fill_interior(|_, _, k| col[(off + k) as usize]);
    SimState::new(f)
}

/// Volume-mean kinetic energy `1/2 <u^2 + v^2 + w^2>` from face samples.
pub fn tgv_kinetic_energy(state: &SimState, sub: &SubdomainSpec, comm: &mut Comm) -> Result<f64, ExchangeError> {
    let mut acc = ExactSum::new();
    for f in &state.fields.vel {
        f.for_interior(|_, _, _, v| acc.add(v * v));
    }
    let cells = sub.global_dims.iter().product::<usize>() as f64;
    Ok(0.5 * comm.exact_sum(&acc)? / cells)
}

/// Free-surface elevation above the still depth along x, averaged over y.
/// Needs current level-set ghosts on the high z side.
pub fn wave_profile(state: &SimState, sub: &SubdomainSpec, depth: f64, comm: &mut Comm) -> Result<Vec<f64>, ExchangeError> {
    let phi = &state.fields.phi;
    let n = phi.dims();
    let nx = sub.global_dims[0];
    let h = sub.spacing[2];
    let mut sums = vec![0.0; 2 * nx];
    for j in 0..n[1] as isize {
        for i in 0..n[0] as isize {
            for k in 0..n[2] as isize {
                let (a, b) = (phi.get(i, j, k), phi.get(i, j, k + 1));
                if a > 0.0 && b <= 0.0 {
                    let z = sub.center(2, k) + h * a / (a - b);
                    let gi = sub.offset[0] + i as usize;
                    sums[gi] += z - depth;
                    sums[nx + gi] += 1.0;
                    break;
                }
            }
        }
    }
    let parts = comm.allgather(&sums)?;
    let mut total = vec![0.0; 2 * nx];
    for p in &parts {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    Ok((0..nx).map(|i| if total[nx + i] > 0.0 { total[i] / total[nx + i] } else { 0.0 }).collect())
}

/// Crest location (x, elevation) of the y-averaged free surface, refined with a
/// parabola through the highest sample and its neighbours.
pub fn wave_crest_position(
    state: &SimState,
    sub: &SubdomainSpec,
    depth: f64,
    comm: &mut Comm,
) -> Result<(f64, f64), ExchangeError> {
    let prof = wave_profile(state, sub, depth, comm)?;
    Ok(crest_of_profile(&prof, sub.origin[0], sub.spacing[0]))
}

pub fn crest_of_profile(prof: &[f64], origin: f64, h: f64) -> (f64, f64) {
    let (mut im, mut em) = (0usize, f64::NEG_INFINITY);
    for (i, &e) in prof.iter().enumerate() {
        if e > em {
            im = i;
            em = e;
        }
    }
    let x = |i: usize| origin + (i as f64 + 0.5) * h;
    if im == 0 || im + 1 >= prof.len() {
        return (x(im), em);
    }
    let (a, b, c) = (prof[im - 1], prof[im], prof[im + 1]);
    let den = a - 2.0 * b + c;
    if den >= 0.0 {
        return (x(im), em);
    }
    let s = 0.5 * (a - c) / den;
    (x(im) + s * h, b - 0.25 * (a - c) * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wave_constants() {
        let s = WaveSpec::new(WaveSpec::TABLE[0]);
        assert!((s.wavenumber() - 1.36931).abs() < 1e-5);
        assert!((s.celerity() - 1.46908).abs() < 1e-5);
        assert_eq!(wave_elevation(0.0, &s), 0.02);
        assert!((s.epsilon() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn inflow_properties() {
        let s = WaveSpec::new(WaveSpec::TABLE[0]);
        for (z, t) in [(0.0, 0.0), (0.1, 0.3), (0.35, 2.0)] {
            assert_eq!(wave_inflow(z, t, &s)[1], 0.0);
        }
        // at the crest the first time derivative vanishes and so does w's leading term
        let d = normalized_elevation(&s, 0.0, 0.0);
        assert_eq!(d[1], 0.0);
        assert!(wave_inflow(0.1, 0.0, &s)[2].abs() < 1e-15);
        let late = wave_inflow(0.1, 60.0, &s);
        assert!(late[0].abs() < 1e-12 && late[2].abs() < 1e-12);
    }

    #[test]
    fn elevation_derivatives_match_finite_differences() {
        let s = WaveSpec::new(WaveSpec::TABLE[0]);
        let t = 0.7;
        let e = 1e-4;
        let f = |t: f64| normalized_elevation(&s, 0.0, t);
        for d in 0..3 {
            let fd = (f(t + e)[d] - f(t - e)[d]) / (2.0 * e);
            assert!((fd - f(t)[d + 1]).abs() < 1e-5 * (1.0 + fd.abs()), "derivative {}", d + 1);
        }
    }

    #[test]
    fn cavity_table_and_boundaries() {
        let c = CavitySpec::table_row(0).unwrap();
        let cells = c.grid().unwrap().cell_count() as f64;
        assert!((cells / 1e6 - 4.1).abs() < 0.05);
        assert!((c.nu() - 1.0 / 400.0).abs() < 1e-18);
        let b = c.boundaries();
        assert_eq!(b.kind(Face::new(2, Side::High)), BoundaryKind::MovingLid);
        assert_eq!(b.kind(Face::new(1, Side::Low)), BoundaryKind::Periodic);
        assert_eq!(b.kind(Face::new(0, Side::Low)), BoundaryKind::NoSlipWall);
    }

    #[test]
    fn tgv_energy_and_zero_w() {
        let spec = TgvSpec::new(16);
        let setup = CaseSpec::Tgv(spec).setup().unwrap();
        let plan = setup.plan([1, 1, 1]).unwrap();
        let sub = &plan.subdomains[0];
        let st = setup.initial_state(sub);
        let mut comm = Comm::solo();
        let ke = tgv_kinetic_energy(&st, sub, &mut comm).unwrap();
        assert!((ke - 0.125).abs() < 1e-12);
        assert_eq!(st.fields.vel[2].interior_max_abs(), 0.0);
    }

    #[test]
    fn wave_initial_materials() {
        let mut spec = WaveSpec::new([64, 8, 40]);
        spec.extent = [1.28, 0.08, 0.4];
        let setup = CaseSpec::Wave(spec).setup().unwrap();
        let plan = setup.plan([1, 1, 1]).unwrap();
        let sub = &plan.subdomains[0];
        let st = setup.initial_state(sub);
        // cell centers at z = 0.105 and 0.295
        let eps = interface_half_width(sub.spacing);
        assert!((st.fields.phi.get(0, 0, 10) - (0.2 - 0.105)).abs() < 1e-15);
        let r = |k| spec.fluids.rho_a + (spec.fluids.rho_w - spec.fluids.rho_a) * heaviside(st.fields.phi.get(0, 0, k), eps);
        assert_eq!(r(10), 1000.0);
        assert_eq!(r(29), 1.25);
    }

    #[test]
    fn crest_refinement_on_parabola() {
        let prof: Vec<f64> = (0..10).map(|i| 1.0 - (i as f64 + 0.5 - 4.3).powi(2)).collect();
        let (x, e) = crest_of_profile(&prof, 0.0, 1.0);
        assert!((x - 4.3).abs() < 1e-12);
        assert!((e - 1.0).abs() < 1e-12);
    }
}
