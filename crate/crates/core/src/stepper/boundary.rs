//! Ghost-layer rules on physical faces.
//!
//! Ghosts are filled one axis at a time, after that axis' halo exchange, over the
//! full stored extent of the other two axes. Edge and corner ghosts therefore end
//! up with the same values for every decomposition.

use std::fmt;
use std::sync::Arc;

use crate::exchange::{Comm, ExactSum, ExchangeError, FieldTag};
use crate::levelset::ScalarHalo;
use crate::mesh::{tangential, BoundaryKind, Face, Field3, Side, SubdomainSpec};

use super::StepError;

/// Prescribed inflow: velocity and (optionally) level set at a position and time.
pub trait InflowProfile: Send + Sync {
    fn velocity(&self, pos: [f64; 3], t: f64) -> [f64; 3];
    /// `None` leaves the level set to linear extrapolation.
    fn level_set(&self, _pos: [f64; 3], _t: f64) -> Option<f64> {
        None
    }
}

/// Physical boundary description shared by all ranks.
#[derive(Clone)]
pub struct BoundarySetup {
    /// Indexed by `Face::index()`.
    pub kinds: [BoundaryKind; 6],
    /// Wall velocity on `MovingLid` faces.
    pub lid_velocity: [f64; 3],
    pub inflow: Option<Arc<dyn InflowProfile>>,
}

impl fmt::Debug for BoundarySetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundarySetup")
            .field("kinds", &self.kinds)
            .field("lid_velocity", &self.lid_velocity)
            .field("inflow", &self.inflow.as_ref().map(|_| "profile"))
            .finish()
    }
}

impl BoundarySetup {
    pub fn new(kinds: [BoundaryKind; 6]) -> Self {
        BoundarySetup { kinds, lid_velocity: [0.0; 3], inflow: None }
    }

    /// Parse six face kinds in `Face::ALL` order (x-, x+, y-, y+, z-, z+).
    pub fn from_names(names: &[&str; 6]) -> Result<Self, StepError> {
        let mut kinds = [BoundaryKind::Periodic; 6];
        for (k, s) in kinds.iter_mut().zip(names) {
            *k = s.parse().map_err(|_| StepError::UnknownBoundaryKind(s.to_string()))?;
        }
        Ok(Self::new(kinds))
    }

    pub fn kind(&self, face: Face) -> BoundaryKind {
        self.kinds[face.index()]
    }

    pub fn validate(&self) -> Result<(), StepError> {
        for axis in 0..3 {
            let lo = self.kind(Face::new(axis, Side::Low)) == BoundaryKind::Periodic;
            let hi = self.kind(Face::new(axis, Side::High)) == BoundaryKind::Periodic;
            if lo != hi {
                return Err(StepError::Config(format!("axis {axis}: periodic on one side only")));
            }
        }
        if self.kinds.contains(&BoundaryKind::Inflow) && self.inflow.is_none() {
            return Err(StepError::MissingInflowProfile);
        }
        Ok(())
    }

    pub fn has_outflow(&self) -> bool {
        self.kinds.contains(&BoundaryKind::Outflow)
    }
}

/// What to do with the normal-velocity face on an outflow boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutflowFace {
    /// Zero-gradient copy plus a uniform outward correction.
    Set(f64),
    /// Leave the boundary face as computed; only extend it into the ghosts.
    Keep,
}

/// Ghost rule for cell-centered scalars.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarRule {
    /// Zero normal gradient (pressure, eddy viscosity).
    Even,
    /// Linear extrapolation of the two nearest interior cells.
    Extrapolate,
    /// Extrapolation, or the inflow profile's value where one is given.
    LevelSet,
}

fn position(sub: &SubdomainSpec, c: Option<usize>, p: [isize; 3]) -> [f64; 3] {
    [0, 1, 2].map(|b| if Some(b) == c { sub.face(b, p[b]) } else { sub.center(b, p[b]) })
}

/// Call `f` with every stored index pair of the two axes tangential to `axis`.
fn for_plane(n: [usize; 3], g: usize, axis: usize, mut body: impl FnMut([isize; 3])) {
    let g = g as isize;
    let (b, c) = tangential(axis);
    for q in -g..n[c] as isize + g {
        for p in -g..n[b] as isize + g {
            let mut idx = [0isize; 3];
            idx[b] = p;
            idx[c] = q;
            body(idx);
        }
    }
}

fn with(mut p: [isize; 3], axis: usize, v: isize) -> [isize; 3] {
    p[axis] = v;
    p
}

/// Fill the ghosts of velocity component `c` on one physical face.
fn velocity_face(
    f: &mut Field3,
    c: usize,
    face: Face,
    kind: BoundaryKind,
    sub: &SubdomainSpec,
    setup: &BoundarySetup,
    t: f64,
    outflow: OutflowFace,
) -> Result<(), StepError> {
    let a = face.axis;
    let n = f.dims()[a] as isize;
    let g = f.ghost() as isize;
    let inflow = match kind {
        BoundaryKind::Inflow => Some(setup.inflow.clone().ok_or(StepError::MissingInflowProfile)?),
        _ => None,
    };
    let lid = setup.lid_velocity[c];
    let (dims, gw) = (f.dims(), f.ghost());
    if c == a {
        // normal component: the boundary face itself is stored at -1 (low) or n-1 (high)
        let (wall, dir) = match face.side {
            Side::Low => (-1isize, -1isize),
            Side::High => (n - 1, 1),
        };
        for_plane(dims, gw, a, |p| {
            let at = |f: &Field3, i: isize| f.at(with(p, a, i));
            match kind {
                BoundaryKind::NoSlipWall | BoundaryKind::SlipWall | BoundaryKind::MovingLid => {
                    f.put(with(p, a, wall), 0.0);
                    for m in 1..=g {
                        let dst = wall + dir * m;
                        if dst >= -g && dst < n + g {
                            let v = -at(f, wall - dir * m);
                            f.put(with(p, a, dst), v);
                        }
                    }
                }
                BoundaryKind::Inflow => {
                    let prof = inflow.as_ref().expect("checked");
                    let v = prof.velocity(position(sub, Some(c), with(p, a, wall)), t)[c];
                    for m in 0..=g {
                        let dst = wall + dir * m;
                        if dst >= -g && dst < n + g {
                            f.put(with(p, a, dst), v);
                        }
                    }
                }
                BoundaryKind::Outflow => {
                    if let OutflowFace::Set(delta) = outflow {
                        let v = at(f, wall - dir) + dir as f64 * delta;
                        f.put(with(p, a, wall), v);
                    }
                    let v = at(f, wall);
                    for m in 1..=g {
                        let dst = wall + dir * m;
                        if dst >= -g && dst < n + g {
                            f.put(with(p, a, dst), v);
                        }
                    }
                }
                BoundaryKind::Periodic => {}
            }
        });
    } else {
        for_plane(dims, gw, a, |p| {
            for m in 1..=g {
                let (dst, src, edge) = match face.side {
                    Side::Low => (-m, m - 1, 0),
                    Side::High => (n - 1 + m, n - m, n - 1),
                };
                let inner = f.at(with(p, a, src));
                let v = match kind {
                    BoundaryKind::NoSlipWall => -inner,
                    BoundaryKind::SlipWall => inner,
                    BoundaryKind::MovingLid => 2.0 * lid - inner,
                    BoundaryKind::Inflow => {
                        let prof = inflow.as_ref().expect("checked");
                        let mut pos = position(sub, Some(c), with(p, a, src));
                        pos[a] = match face.side {
                            Side::Low => sub.face(a, -1),
                            Side::High => sub.face(a, n - 1),
                        };
                        2.0 * prof.velocity(pos, t)[c] - inner
                    }
                    BoundaryKind::Outflow => f.at(with(p, a, edge)),
                    BoundaryKind::Periodic => continue,
                };
                f.put(with(p, a, dst), v);
            }
        });
    }
    Ok(())
}

/// Fill velocity ghosts on the physical faces normal to `axis`.
pub fn apply_velocity_axis(
    vel: &mut [Field3; 3],
    sub: &SubdomainSpec,
    setup: &BoundarySetup,
    axis: usize,
    t: f64,
    outflow: OutflowFace,
) -> Result<(), StepError> {
    for side in [Side::Low, Side::High] {
        let face = Face::new(axis, side);
        if let Some(kind) = sub.boundary(face) {
            for (c, f) in vel.iter_mut().enumerate() {
                velocity_face(f, c, face, kind, sub, setup, t, outflow)?;
            }
        }
    }
    Ok(())
}

/// Fill scalar ghosts on the physical faces normal to `axis`.
pub fn apply_scalar_axis(
    f: &mut Field3,
    sub: &SubdomainSpec,
    setup: &BoundarySetup,
    axis: usize,
    rule: ScalarRule,
    t: f64,
) {
    let n = f.dims()[axis] as isize;
    let g = f.ghost() as isize;
    let (dims, gw) = (f.dims(), f.ghost());
    for side in [Side::Low, Side::High] {
        let face = Face::new(axis, side);
        let Some(kind) = sub.boundary(face) else { continue };
        let profile = match (rule, kind) {
            (ScalarRule::LevelSet, BoundaryKind::Inflow) => setup.inflow.clone(),
            _ => None,
        };
        let extrapolate = rule != ScalarRule::Even;
        let st = f.stride(axis) as isize;
        for_plane(dims, gw, axis, |p| {
            let base = f.idx(p[0], p[1], p[2]) as isize;
            let at = |o: isize| (base + o * st) as usize;
            for m in 1..=g {
                let (dst, mirror, e0, e1) = match side {
                    Side::Low => (-m, m - 1, 0, 1),
                    Side::High => (n - 1 + m, n - m, n - 1, n - 2),
                };
                let prescribed = profile
                    .as_ref()
                    .and_then(|prof| prof.level_set(position(sub, None, with(p, axis, dst)), t));
                let d = f.data_mut();
                d[at(dst)] = match prescribed {
                    Some(v) => v,
                    None if extrapolate => {
                        let (a0, a1) = (d[at(e0)], d[at(e1)]);
                        a0 + m as f64 * (a0 - a1)
                    }
                    None => d[at(mirror)],
                };
            }
        });
    }
}

/// Fill every physical-face ghost layer of the solution arrays at time `t`.
/// Periodic and inter-rank ghosts are the exchange's job.
pub fn apply_boundary_conditions(
    fields: &mut crate::mesh::StaggeredField,
    sub: &SubdomainSpec,
    setup: &BoundarySetup,
    t: f64,
) -> Result<(), StepError> {
    for axis in 0..3 {
        apply_velocity_axis(&mut fields.vel, sub, setup, axis, t, OutflowFace::Keep)?;
        apply_scalar_axis(&mut fields.p, sub, setup, axis, ScalarRule::Even, t);
        apply_scalar_axis(&mut fields.nu_t, sub, setup, axis, ScalarRule::Even, t);
        apply_scalar_axis(&mut fields.phi, sub, setup, axis, ScalarRule::LevelSet, t);
    }
    Ok(())
}

/// Exchange and boundary fill of all three velocity components, axis by axis.
pub fn fill_velocity(
    vel: &mut [Field3; 3],
    sub: &SubdomainSpec,
    setup: &BoundarySetup,
    t: f64,
    outflow: OutflowFace,
    comm: &mut Comm,
) -> Result<(), StepError> {
    for axis in 0..3 {
        for (c, f) in vel.iter_mut().enumerate() {
            comm.exchange_axis(f, FieldTag::velocity(c), sub, axis)?;
        }
        apply_velocity_axis(vel, sub, setup, axis, t, outflow)?;
    }
    Ok(())
}

/// Exchange and boundary fill of a cell-centered scalar.
pub fn fill_scalar(
    f: &mut Field3,
    tag: FieldTag,
    rule: ScalarRule,
    sub: &SubdomainSpec,
    setup: &BoundarySetup,
    t: f64,
    comm: &mut Comm,
) -> Result<(), ExchangeError> {
    for axis in 0..3 {
        comm.exchange_axis(f, tag, sub, axis)?;
        apply_scalar_axis(f, sub, setup, axis, rule, t);
    }
    Ok(())
}

/// Uniform outward velocity that makes the net boundary flux vanish when added
/// to the zero-gradient outflow faces. Zero without outflow faces.
pub fn outflow_correction(
    vel: &[Field3; 3],
    sub: &SubdomainSpec,
    setup: &BoundarySetup,
    t: f64,
    comm: &mut Comm,
) -> Result<f64, StepError> {
    if !setup.has_outflow() {
        return Ok(0.0);
    }
    // Global outflow area from the setup, so every rank agrees.
    let gd = sub.global_dims;
    let h = sub.spacing;
    let mut area = 0.0;
    for face in Face::ALL {
        if setup.kind(face) == BoundaryKind::Outflow {
            let (b, c) = tangential(face.axis);
            area += gd[b] as f64 * h[b] * gd[c] as f64 * h[c];
        }
    }
    // Net inflow minus the zero-gradient outflow, summed exactly.
    let mut acc = ExactSum::new();
    for face in Face::ALL {
        let Some(kind) = sub.boundary(face) else { continue };
        let a = face.axis;
        let f = &vel[a];
        let n = f.dims();
        let (b, c) = tangential(a);
        let da = h[b] * h[c];
        let na = n[a] as isize;
        let inward = match face.side {
            Side::Low => 1.0,
            Side::High => -1.0,
        };
        for q in 0..n[c] as isize {
            for p in 0..n[b] as isize {
                let mut idx = [0isize; 3];
                idx[b] = p;
                idx[c] = q;
                match kind {
                    BoundaryKind::Inflow => {
                        let wall = if face.side == Side::Low { -1 } else { na - 1 };
                        let prof = setup.inflow.as_ref().ok_or(StepError::MissingInflowProfile)?;
                        let u = prof.velocity(position(sub, Some(a), with(idx, a, wall)), t)[a];
                        acc.add(inward * u * da);
                    }
                    BoundaryKind::Outflow => {
                        let adj = if face.side == Side::Low { 0 } else { na - 2 };
                        acc.add(inward * f.at(with(idx, a, adj)) * da);
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(comm.exact_sum(&acc)? / area)
}

/// Level-set ghost refresh for the advection and reinitialization routines.
pub struct LevelSetHalo<'a> {
    pub comm: &'a mut Comm,
    pub sub: &'a SubdomainSpec,
    pub setup: &'a BoundarySetup,
    pub t: f64,
}

impl ScalarHalo for LevelSetHalo<'_> {
    fn fill(&mut self, f: &mut Field3) -> Result<(), ExchangeError> {
        fill_scalar(f, FieldTag::Phi, ScalarRule::LevelSet, self.sub, self.setup, self.t, self.comm)
    }

    fn comm(&mut self) -> &mut Comm {
        self.comm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_decomposition, GlobalGrid, StaggeredField};

    fn single(kinds: [BoundaryKind; 6], g: usize) -> SubdomainSpec {
        let grid = GlobalGrid::new([4, 4, 4], [0.25; 3], [0.0; 3]).unwrap();
        build_decomposition(grid.clone(), [1, 1, 1], g, kinds).unwrap().subdomains[0].clone()
    }

    #[test]
    fn no_slip_reflects_tangential() {
        let kinds = [BoundaryKind::NoSlipWall; 6];
        let sub = single(kinds, 2);
        let setup = BoundarySetup::new(kinds);
        let mut f = StaggeredField::for_subdomain(&sub);
        f.vel[1].fill_interior(|_, _, _| 2.0);
        apply_boundary_conditions(&mut f, &sub, &setup, 0.0).unwrap();
        assert_eq!(f.vel[1].get(-1, 1, 1), -2.0);
        // normal component on the wall face is zero, odd beyond
        f.vel[0].fill_interior(|i, _, _| i as f64 + 1.0);
        apply_boundary_conditions(&mut f, &sub, &setup, 0.0).unwrap();
        assert_eq!(f.vel[0].get(3, 1, 1), 0.0);
        assert_eq!(f.vel[0].get(4, 1, 1), -3.0);
        assert_eq!(f.vel[0].get(-1, 1, 1), 0.0);
        assert_eq!(f.vel[0].get(-2, 1, 1), -1.0);
    }

    #[test]
    fn slip_wall_signs() {
        let kinds = [BoundaryKind::SlipWall; 6];
        let sub = single(kinds, 2);
        let setup = BoundarySetup::new(kinds);
        let mut f = StaggeredField::for_subdomain(&sub);
        f.vel[0].fill_interior(|_, _, _| 1.5);
        f.vel[2].fill_interior(|_, _, _| 1.5);
        apply_boundary_conditions(&mut f, &sub, &setup, 0.0).unwrap();
        // z faces: w is normal, u tangential
        assert_eq!(f.vel[2].get(1, 1, -2), -1.5);
        assert_eq!(f.vel[0].get(1, 1, -1), 1.5);
    }

    #[test]
    fn lid_ghost_interpolates_to_lid_speed() {
        let mut kinds = [BoundaryKind::NoSlipWall; 6];
        kinds[Face::new(2, Side::High).index()] = BoundaryKind::MovingLid;
        let sub = single(kinds, 2);
        let mut setup = BoundarySetup::new(kinds);
        setup.lid_velocity = [1.0, 0.0, 0.0];
        let mut f = StaggeredField::for_subdomain(&sub);
        f.vel[0].fill_interior(|_, _, k| 0.1 * k as f64);
        apply_boundary_conditions(&mut f, &sub, &setup, 0.0).unwrap();
        let face = 0.5 * (f.vel[0].get(1, 1, 3) + f.vel[0].get(1, 1, 4));
        assert!((face - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_rules() {
        let kinds = [BoundaryKind::NoSlipWall; 6];
        let sub = single(kinds, 2);
        let setup = BoundarySetup::new(kinds);
        let mut f = Field3::new([4, 4, 4], 2);
        f.fill_interior(|i, _, _| i as f64);
        let mut e = f.clone();
        apply_scalar_axis(&mut e, &sub, &setup, 0, ScalarRule::Even, 0.0);
        assert_eq!(e.get(-1, 0, 0), 0.0);
        assert_eq!(e.get(-2, 0, 0), 1.0);
        apply_scalar_axis(&mut f, &sub, &setup, 0, ScalarRule::Extrapolate, 0.0);
        assert_eq!(f.get(-2, 0, 0), -2.0);
        assert_eq!(f.get(5, 0, 0), 5.0);
    }

    #[test]
    fn unknown_kind_and_missing_inflow() {
        let names = ["periodic", "periodic", "no-slip-wall", "bogus", "slip-wall", "slip-wall"];
        assert!(matches!(BoundarySetup::from_names(&names), Err(StepError::UnknownBoundaryKind(_))));
        let mut kinds = [BoundaryKind::SlipWall; 6];
        kinds[0] = BoundaryKind::Inflow;
        kinds[1] = BoundaryKind::Outflow;
        assert!(matches!(BoundarySetup::new(kinds).validate(), Err(StepError::MissingInflowProfile)));
    }

    struct Uniform;
    impl InflowProfile for Uniform {
        fn velocity(&self, _: [f64; 3], _: f64) -> [f64; 3] {
            [0.5, 0.0, 0.0]
        }
    }

    #[test]
    fn outflow_correction_balances_inflow() {
        let mut kinds = [BoundaryKind::SlipWall; 6];
        kinds[0] = BoundaryKind::Inflow;
        kinds[1] = BoundaryKind::Outflow;
        let sub = single(kinds, 2);
        let mut setup = BoundarySetup::new(kinds);
        setup.inflow = Some(Arc::new(Uniform));
        let mut vel = StaggeredField::for_subdomain(&sub).vel;
        vel[0].fill_interior(|_, _, _| 0.2);
        let mut comm = Comm::solo();
        let d = outflow_correction(&vel, &sub, &setup, 0.0, &mut comm).unwrap();
        assert!((d - 0.3).abs() < 1e-15);
        fill_velocity(&mut vel, &sub, &setup, 0.0, OutflowFace::Set(d), &mut comm).unwrap();
        assert!((vel[0].get(3, 1, 1) - 0.5).abs() < 1e-15);
        assert_eq!(vel[0].get(-1, 1, 1), 0.5);
    }
}
