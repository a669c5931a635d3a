//! Time integration: step-size selection, RK3 predictor, pressure projection and
//! the per-step sequence with profiler phases.

pub mod boundary;

pub use boundary::{
    apply_boundary_conditions, apply_scalar_axis, apply_velocity_axis, fill_scalar, fill_velocity, outflow_correction,
    BoundarySetup, InflowProfile, LevelSetHalo, OutflowFace, ScalarRule,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cases::CaseId;
use crate::exchange::{Comm, ExchangeError, FieldTag};
use crate::harness::profiler::{Phase, Profiler, ProfilerError};
use crate::levelset::{interface_half_width, lsm_advect, material_fields, reinitialize, FluidPair, ReinitConfig};
use crate::mesh::{Field3, MeshError, StaggeredField, SubdomainSpec};
use crate::pressure::{update_pressure, MultigridHierarchy, PressureConfig, PressureError};
use crate::schemes::{convective_term, diffusive_term, Scheme, SchemeError, SchemeOptions, Viscosity};
use crate::turbulence::eddy_viscosity_field;

#[derive(Debug, Error)]
pub enum StepError {
    #[error("unknown boundary kind '{0}'")]
    UnknownBoundaryKind(String),
    #[error("inflow boundary has no inflow profile")]
    MissingInflowProfile,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("solution became non-finite at step {0}")]
    Diverged(usize),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
    #[error(transparent)]
    Pressure(#[from] PressureError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Profiler(#[from] ProfilerError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub case: CaseId,
    pub scheme: Scheme,
    pub scheme_options: SchemeOptions,
    /// Momentum CFL number; exclusive with `fixed_dt`.
    pub cfl: Option<f64>,
    pub fixed_dt: Option<f64>,
    /// Step used when the flow is at rest.
    pub fallback_dt: f64,
    /// Pseudo-time CFL of the level-set reinitialization.
    pub cfl_lsm: f64,
    pub enable_lsm: bool,
    pub enable_sgs: bool,
    /// Kinematic viscosity (m^2/s) for single-fluid runs and the pressure update.
    pub nu: f64,
    /// Body force per unit mass.
    pub source: [f64; 3],
    pub steps: usize,
    /// Progress output every N steps (0 = never).
    pub output_every: usize,
    /// Also bound the step by the explicit diffusion limit.
    pub viscous_limit: bool,
    pub fluids: FluidPair,
    pub reinit: ReinitConfig,
    pub pressure: PressureConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            case: CaseId::Cavity,
            scheme: Scheme::Cd4,
            scheme_options: SchemeOptions::default(),
            cfl: Some(0.8),
            fixed_dt: None,
            fallback_dt: 1e-3,
            cfl_lsm: 0.1,
            enable_lsm: false,
            enable_sgs: false,
            nu: 1.0 / 400.0,
            source: [0.0; 3],
            steps: 50,
            output_every: 0,
            viscous_limit: true,
            fluids: FluidPair::water_air(),
            reinit: ReinitConfig::default(),
            pressure: PressureConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), StepError> {
        let bad = |m: &str| Err(StepError::Config(m.to_string()));
        match (self.cfl, self.fixed_dt) {
            (Some(c), None) if c > 0.0 && c <= 1.0 => {}
            (Some(_), None) => return bad("CFL must lie in (0, 1]"),
            (None, Some(dt)) if dt > 0.0 => {}
            (None, Some(_)) => return bad("fixed time step must be positive"),
            _ => return bad("exactly one of cfl and fixed_dt must be set"),
        }
        if self.steps == 0 {
            return bad("step count must be at least 1");
        }
        if !(self.fallback_dt > 0.0) || !(self.nu >= 0.0) {
            return bad("fallback_dt must be positive and nu non-negative");
        }
        if self.enable_lsm && (!self.fluids.is_valid() || !(self.cfl_lsm > 0.0)) {
            return bad("level set needs valid fluids and a positive CFL_LSM");
        }
        Ok(())
    }

    /// Reinitialization settings with the configured pseudo-time CFL.
    pub fn reinit_config(&self) -> ReinitConfig {
        ReinitConfig { cfl: self.cfl_lsm, ..self.reinit }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub fields: StaggeredField,
    pub t: f64,
    pub step: usize,
    /// Step size of the last completed step.
    pub dt: f64,
}

impl SimState {
    pub fn new(fields: StaggeredField) -> Self {
        SimState { fields, t: 0.0, step: 0, dt: 0.0 }
    }
}

/// Per-step solver diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub dt: f64,
    pub pressure_cycles: usize,
    /// Bound on `max |div u|` after projection.
    pub divergence: f64,
    pub reinit_iterations: usize,
    pub reinit_residual: f64,
}

/// Largest `sum |u_c| / h_c` over owned cells, reduced with max.
pub fn velocity_rate(vel: &[Field3; 3], spacing: [f64; 3], comm: &mut Comm) -> Result<f64, ExchangeError> {
    let n = vel[0].dims();
    let mut m = 0.0f64;
    for k in 0..n[2] as isize {
        for j in 0..n[1] as isize {
            for i in 0..n[0] as isize {
                let r: f64 = (0..3).map(|c| vel[c].get(i, j, k).abs() / spacing[c]).sum();
                m = m.max(r);
            }
        }
    }
    comm.max(m)
}

/// `cfl / max(|u|/dx + |v|/dy + |w|/dz)`, or `fallback` for a fluid at rest.
pub fn compute_dt(
    vel: &[Field3; 3],
    spacing: [f64; 3],
    cfl: f64,
    fallback: f64,
    comm: &mut Comm,
) -> Result<f64, ExchangeError> {
    let rate = velocity_rate(vel, spacing, comm)?;
    Ok(if rate < 1e-12 { fallback } else { cfl / rate })
}

/// Explicit RK3 limit for the 4th-order diffusion stencil.
pub fn viscous_dt(nu_max: f64, spacing: [f64; 3]) -> f64 {
    if nu_max <= 0.0 {
        return f64::INFINITY;
    }
    let s: f64 = spacing.iter().map(|h| 1.0 / (h * h)).sum();
    2.0 / (nu_max * (16.0 / 3.0) * s)
}

/// Stage fractions of the low-storage RK3 predictor.
pub const RK3_FRACTIONS: [f64; 3] = [1.0 / 3.0, 0.5, 1.0];

/// One rank's solver: geometry, configuration, communicator and work arrays.
pub struct Solver {
    pub sub: SubdomainSpec,
    pub config: SimConfig,
    pub bc: BoundarySetup,
    pub comm: Comm,
    pub profiler: Profiler,
    mg: MultigridHierarchy,
    u0: [Field3; 3],
    conv: [Field3; 3],
    rhs: [Field3; 3],
    nu_cells: Field3,
    pub last: StepStats,
}

impl Solver {
    pub fn new(sub: SubdomainSpec, config: SimConfig, bc: BoundarySetup, comm: Comm) -> Result<Self, StepError> {
        config.validate()?;
        bc.validate()?;
        if sub.ghost_width < config.scheme.ghost_width() {
            return Err(SchemeError::SchemeStencilOverflow {
                required: config.scheme.ghost_width(),
                available: sub.ghost_width,
            }
            .into());
        }
        if config.enable_lsm && sub.ghost_width < Scheme::Weno5.ghost_width() {
            return Err(SchemeError::SchemeStencilOverflow { required: 4, available: sub.ghost_width }.into());
        }
        let mg = MultigridHierarchy::build(&sub, bc.kinds, &config.pressure)?;
        let f = Field3::new(sub.local_dims, sub.ghost_width);
        let trio = [f.clone(), f.clone(), f.clone()];
        Ok(Solver {
            sub,
            config,
            bc,
            comm,
            profiler: Profiler::new(),
            mg,
            u0: trio.clone(),
            conv: trio.clone(),
            rhs: trio,
            nu_cells: f,
            last: StepStats::default(),
        })
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.sub.spacing
    }

    pub fn multigrid(&self) -> &MultigridHierarchy {
        &self.mg
    }

    /// Bring every ghost layer and the material fields up to date at `state.t`.
    pub fn initialize(&mut self, state: &mut SimState) -> Result<(), StepError> {
        let t = state.t;
        let f = &mut state.fields;
        if self.config.enable_lsm {
            fill_scalar(&mut f.phi, FieldTag::Phi, ScalarRule::LevelSet, &self.sub, &self.bc, t, &mut self.comm)?;
            let eps = interface_half_width(self.sub.spacing);
            material_fields(&f.phi, &self.config.fluids, eps, &mut f.rho, &mut f.mu);
        } else {
            f.rho.fill(1.0);
            f.mu.fill(self.config.nu);
        }
        fill_scalar(&mut f.nu_t, FieldTag::NuT, ScalarRule::Even, &self.sub, &self.bc, t, &mut self.comm)?;
        let delta = outflow_correction(&f.vel, &self.sub, &self.bc, t, &mut self.comm)?;
        fill_velocity(&mut f.vel, &self.sub, &self.bc, t, OutflowFace::Set(delta), &mut self.comm)?;
        fill_scalar(&mut f.p, FieldTag::P, ScalarRule::Even, &self.sub, &self.bc, t, &mut self.comm)?;
        Ok(())
    }

    /// Step size for the current state: fixed, or CFL-limited and (optionally)
    /// bounded by the diffusion limit.
    pub fn choose_dt(&mut self, state: &SimState) -> Result<f64, StepError> {
        if let Some(dt) = self.config.fixed_dt {
            return Ok(dt);
        }
        let cfl = self.config.cfl.expect("validated");
        let mut dt = compute_dt(&state.fields.vel, self.sub.spacing, cfl, self.config.fallback_dt, &mut self.comm)?;
        if self.config.viscous_limit {
            let nu_max = self.max_viscosity(state)?;
            dt = dt.min(viscous_dt(nu_max, self.sub.spacing));
        }
        Ok(dt)
    }

    fn max_viscosity(&mut self, state: &SimState) -> Result<f64, StepError> {
        let f = &state.fields;
        let mut m = if self.config.enable_lsm { 0.0f64 } else { self.config.nu };
        if self.config.enable_lsm || self.config.enable_sgs {
            let n = f.p.dims();
            for k in 0..n[2] as isize {
                for j in 0..n[1] as isize {
                    for i in 0..n[0] as isize {
                        let base = if self.config.enable_lsm { f.mu.get(i, j, k) / f.rho.get(i, j, k) } else { self.config.nu };
                        let t = if self.config.enable_sgs { f.nu_t.get(i, j, k) } else { 0.0 };
                        m = m.max(base + t);
                    }
                }
            }
        }
        Ok(self.comm.max(m)?)
    }

    fn update_viscosity(&mut self, fields: &StaggeredField) {
        let lsm = self.config.enable_lsm;
        let sgs = self.config.enable_sgs;
        let nu = self.config.nu;
        let out = self.nu_cells.data_mut();
        for (idx, o) in out.iter_mut().enumerate() {
            let base = if lsm { fields.mu.data()[idx] / fields.rho.data()[idx] } else { nu };
            *o = base + if sgs { fields.nu_t.data()[idx] } else { 0.0 };
        }
    }

    /// `R(u) = -C(u) + D(u) - b grad p + S` into `self.rhs` (interior faces).
    fn momentum_rhs(&mut self, fields: &StaggeredField) -> Result<(), StepError> {
        let h = self.sub.spacing;
        convective_term(&fields.vel, h, self.config.scheme, &self.config.scheme_options, &mut self.conv)?;
        let visc = if self.config.enable_lsm || self.config.enable_sgs {
            Viscosity::Cells(&self.nu_cells)
        } else {
            Viscosity::Uniform(self.config.nu)
        };
        diffusive_term(&fields.vel, visc, h, &mut self.rhs)?;
        let lsm = self.config.enable_lsm;
        let p = &fields.p;
        let rho = &fields.rho;
        let n = p.dims();
        for c in 0..3 {
            let s = p.stride(c);
            let src = self.config.source[c];
            let conv = self.conv[c].data();
            let out = self.rhs[c].data_mut();
            for k in 0..n[2] as isize {
                for j in 0..n[1] as isize {
                    let row = p.idx(0, j, k);
                    for i in 0..n[0] {
                        let id = row + i;
                        let b = if lsm { 2.0 / (rho.data()[id] + rho.data()[id + s]) } else { 1.0 };
                        let grad = (p.data()[id + s] - p.data()[id]) / h[c];
                        out[id] = -conv[id] + out[id] - b * grad + src;
                    }
                }
            }
        }
        Ok(())
    }

    /// Three-stage predictor `u_s = u^t + a_s dt R(u_{s-1})` with the pressure
    /// gradient frozen at `p^t`; ghosts refreshed after every stage.
    pub fn predictor(&mut self, state: &mut SimState, dt: f64) -> Result<(), StepError> {
        let t_new = state.t + dt;
        for c in 0..3 {
            self.u0[c].copy_from(&state.fields.vel[c]);
        }
        self.update_viscosity(&state.fields);
        for a in RK3_FRACTIONS {
            self.momentum_rhs(&state.fields)?;
            let n = state.fields.p.dims();
            for c in 0..3 {
                let u0 = self.u0[c].data();
                let r = self.rhs[c].data();
                let f = &mut state.fields.vel[c];
                for k in 0..n[2] as isize {
                    for j in 0..n[1] as isize {
                        let row = f.idx(0, j, k);
                        let d = f.data_mut();
                        for id in row..row + n[0] {
                            d[id] = u0[id] + a * dt * r[id];
                        }
                    }
                }
            }
            let delta = outflow_correction(&state.fields.vel, &self.sub, &self.bc, t_new, &mut self.comm)?;
            fill_velocity(&mut state.fields.vel, &self.sub, &self.bc, t_new, OutflowFace::Set(delta), &mut self.comm)?;
        }
        Ok(())
    }

    fn level_set_update(&mut self, state: &mut SimState, dt: f64) -> Result<(usize, f64), StepError> {
        let t_new = state.t + dt;
        let h = self.sub.spacing;
        let f = &mut state.fields;
        let mut halo = LevelSetHalo { comm: &mut self.comm, sub: &self.sub, setup: &self.bc, t: t_new };
        lsm_advect(&mut f.phi, &f.vel, dt, h, &mut halo)?;
        let stats = reinitialize(&mut f.phi, &self.config.reinit_config(), h, &mut halo)?;
        let eps = interface_half_width(h);
        material_fields(&f.phi, &self.config.fluids, eps, &mut f.rho, &mut f.mu);
        Ok((stats.iterations, stats.residual))
    }

    fn subgrid(&mut self, state: &mut SimState) -> Result<(), StepError> {
        let f = &mut state.fields;
        eddy_viscosity_field(&f.vel, self.sub.spacing, &mut f.nu_t);
        fill_scalar(&mut f.nu_t, FieldTag::NuT, ScalarRule::Even, &self.sub, &self.bc, state.t, &mut self.comm)?;
        Ok(())
    }

    fn pressure_and_update(&mut self, state: &mut SimState, dt: f64) -> Result<(usize, f64), StepError> {
        let t_new = state.t + dt;
        self.profiler.start(Phase::Pressure);
        if self.config.enable_lsm {
            self.mg.set_coefficients(Some(&state.fields.rho), &mut self.comm)?;
        }
        let stats = self.mg.solve(&state.fields.vel, dt, &mut self.comm)?;
        self.profiler.stop(Phase::Pressure)?;

        self.profiler.start(Phase::Update);
        let f = &mut state.fields;
        self.mg.project(&mut f.vel, dt);
        fill_velocity(&mut f.vel, &self.sub, &self.bc, t_new, OutflowFace::Keep, &mut self.comm)?;
        update_pressure(&mut f.p, self.mg.correction(), self.config.nu, dt, self.sub.spacing);
        fill_scalar(&mut f.p, FieldTag::P, ScalarRule::Even, &self.sub, &self.bc, t_new, &mut self.comm)?;
        self.profiler.stop(Phase::Update)?;
        Ok((stats.cycles, stats.divergence))
    }

    /// Advance one step: dt, level set, eddy viscosity, predictor, pressure,
    /// projection and boundary refresh.
    pub fn step(&mut self, state: &mut SimState) -> Result<StepStats, StepError> {
        self.profiler.start(Phase::Total);

        self.profiler.start(Phase::TimeStep);
        let dt = self.choose_dt(state)?;
        self.profiler.stop(Phase::TimeStep)?;

        let mut stats = StepStats { dt, ..StepStats::default() };
        if self.config.enable_lsm {
            self.profiler.start(Phase::LevelSet);
            let (it, res) = self.level_set_update(state, dt)?;
            self.profiler.stop(Phase::LevelSet)?;
            stats.reinit_iterations = it;
            stats.reinit_residual = res;
        }
        if self.config.enable_sgs {
            self.profiler.start(Phase::Subgrid);
            self.subgrid(state)?;
            self.profiler.stop(Phase::Subgrid)?;
        }

        self.profiler.start(Phase::Fluxes);
        self.predictor(state, dt)?;
        self.profiler.stop(Phase::Fluxes)?;

        let (cycles, div) = self.pressure_and_update(state, dt)?;
        stats.pressure_cycles = cycles;
        stats.divergence = div;

        state.t += dt;
        state.step += 1;
        state.dt = dt;
        let finite = state.fields.vel.iter().all(|f| f.interior_max_abs().is_finite());
        if !self.comm.min(if finite { 1.0 } else { 0.0 })?.eq(&1.0) {
            return Err(StepError::Diverged(state.step));
        }
        self.profiler.stop(Phase::Total)?;
        self.last = stats;
        Ok(stats)
    }

    /// Global max of the staggered divergence of the current velocity.
    pub fn max_divergence(&mut self, state: &SimState) -> Result<f64, StepError> {
        Ok(crate::pressure::max_divergence(&state.fields.vel, self.sub.spacing, &mut self.comm)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_decomposition, BoundaryKind, GlobalGrid};

    fn periodic_solver(n: usize, cfg: SimConfig) -> (Solver, SimState) {
        let grid = GlobalGrid::new([n; 3], [0.1; 3], [0.0; 3]).unwrap();
        let kinds = [BoundaryKind::Periodic; 6];
        let plan = build_decomposition(grid.clone(), [1, 1, 1], cfg.scheme.ghost_width(), kinds).unwrap();
        let sub = plan.subdomains[0].clone();
        let state = SimState::new(StaggeredField::for_subdomain(&sub));
        let solver = Solver::new(sub, cfg, BoundarySetup::new(kinds), Comm::solo()).unwrap();
        (solver, state)
    }

    #[test]
    fn dt_examples() {
        let mut comm = Comm::solo();
        let mut vel = [Field3::new([1, 1, 1], 0), Field3::new([1, 1, 1], 0), Field3::new([1, 1, 1], 0)];
        vel[0].set(0, 0, 0, 1.0);
        let dt = compute_dt(&vel, [0.1; 3], 0.8, 0.5, &mut comm).unwrap();
        assert!((dt - 0.08).abs() < 1e-15);
        vel[0].set(0, 0, 0, 2.0);
        let dt2 = compute_dt(&vel, [0.1; 3], 0.8, 0.5, &mut comm).unwrap();
        assert!((dt2 - 0.04).abs() < 1e-15);
        vel[0].set(0, 0, 0, 0.0);
        assert_eq!(compute_dt(&vel, [0.1; 3], 0.8, 0.5, &mut comm).unwrap(), 0.5);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let both = SimConfig { fixed_dt: Some(0.1), ..SimConfig::default() };
        assert!(both.validate().is_err());
        let none = SimConfig { cfl: None, ..SimConfig::default() };
        assert!(none.validate().is_err());
        let zero = SimConfig { steps: 0, ..SimConfig::default() };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn constant_source_accelerates_uniformly() {
        let cfg = SimConfig { fixed_dt: Some(0.01), cfl: None, source: [2.0, 0.0, 0.0], ..SimConfig::default() };
        let (mut solver, mut state) = periodic_solver(8, cfg);
        solver.initialize(&mut state).unwrap();
        solver.predictor(&mut state, 0.01).unwrap();
        for v in state.fields.vel[0].interior_values() {
            assert!((v - 0.02).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_flow_is_a_fixed_point() {
        let cfg = SimConfig { fixed_dt: Some(0.01), cfl: None, ..SimConfig::default() };
        let (mut solver, mut state) = periodic_solver(8, cfg);
        state.fields.vel[0].fill(0.3);
        state.fields.vel[2].fill(-0.1);
        solver.initialize(&mut state).unwrap();
        let before = state.fields.vel.clone();
        solver.predictor(&mut state, 0.01).unwrap();
        assert_eq!(state.fields.vel, before);
        let s = solver.step(&mut state).unwrap();
        assert_eq!(s.pressure_cycles, 0);
        assert_eq!(state.fields.vel, before);
        assert_eq!(state.step, 1);
    }
}
