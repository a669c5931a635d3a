//! Pressure solver behaviour: V-cycle contraction, topology independence,
//! projection idempotence, and the transfer operators.

use std::f64::consts::PI;

use proptest::prelude::*;

use stagflow::exchange::{run_inproc, Comm, ExchangeError, ExactSum, FieldTag};
use stagflow::mesh::{build_decomposition, BoundaryKind, DecompositionPlan, Field3, GlobalGrid};
use stagflow::pressure::{max_divergence, prolong, restrict, MultigridHierarchy, PressureConfig};

fn plan(n: usize, topology: [usize; 3], kinds: [BoundaryKind; 6]) -> DecompositionPlan {
    let grid = GlobalGrid::from_extent([n; 3], [1.0; 3], [0.0; 3]).unwrap();
    build_decomposition(grid, topology, 2, kinds).unwrap()
}

/// Residual history of `cycles` V-cycles on a smooth mean-free right-hand side.
fn residual_history(n: usize, topology: [usize; 3], kinds: [BoundaryKind; 6], cycles: usize) -> Vec<f64> {
    let plan = plan(n, topology, kinds);
    let out = run_inproc(plan.workers(), |mut comm: Comm| {
        let sub = plan.subdomain(comm.rank()).clone();
        let mut mg = MultigridHierarchy::build(&sub, kinds, &PressureConfig::default()).unwrap();
        let mut rhs = Field3::new(sub.local_dims, 1);
        rhs.fill_interior(|i, j, k| {
            let x = [sub.center(0, i), sub.center(1, j), sub.center(2, k)];
            (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).cos() * (2.0 * PI * x[2]).cos()
        });
        let zero = Field3::new(sub.local_dims, 1);
        mg.load_level(0, &zero, &rhs, &mut comm)?;
        let mut hist = vec![mg.level_residual(0, &mut comm)?];
        for _ in 0..cycles {
            hist.push(mg.cycle(&mut comm).unwrap());
        }
        Ok::<_, ExchangeError>(hist)
    });
    out.into_iter().next().unwrap().unwrap()
}

#[test]
fn vcycle_contracts_residual() {
    for kinds in [[BoundaryKind::Periodic; 6], [BoundaryKind::NoSlipWall; 6]] {
        let h = residual_history(32, [1, 1, 1], kinds, 6);
        for w in h.windows(2) {
            assert!(w[1] < 0.5 * w[0], "{kinds:?}: factor {:.3} in {h:?}", w[1] / w[0]);
        }
    }
}

#[test]
fn residuals_do_not_depend_on_topology() {
    let kinds = [BoundaryKind::NoSlipWall; 6];
    let serial = residual_history(16, [1, 1, 1], kinds, 4);
    for topology in [[2, 1, 1], [2, 2, 2]] {
        let par = residual_history(16, topology, kinds, 4);
        for (a, b) in serial.iter().zip(&par) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300), "{topology:?}: {serial:?} vs {par:?}");
        }
    }
}

#[test]
fn hierarchy_reaches_a_small_coarse_grid() {
    let p = plan(32, [2, 2, 2], [BoundaryKind::Periodic; 6]);
    let mg = MultigridHierarchy::build(p.subdomain(0), p.boundaries, &PressureConfig::default()).unwrap();
    let layout = mg.level_layout();
    assert_eq!(layout[0], ([32; 3], false));
    let (last, replicated) = *layout.last().unwrap();
    assert!(replicated && last.iter().all(|&d| d == 4), "{layout:?}");
}

/// Random periodic velocity with filled ghosts.
fn random_velocity(sub: &stagflow::mesh::SubdomainSpec, seed: u64, comm: &mut Comm) -> Result<[Field3; 3], ExchangeError> {
    let mut s = seed;
    let mut next = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut vel = [0, 1, 2].map(|_| Field3::new(sub.local_dims, sub.ghost_width));
    for (c, f) in vel.iter_mut().enumerate() {
        f.fill_interior(|_, _, _| next());
        comm.exchange_halos(f, FieldTag::velocity(c), sub)?;
    }
    Ok(vel)
}

fn project_once(mg: &mut MultigridHierarchy, vel: &mut [Field3; 3], sub: &stagflow::mesh::SubdomainSpec, comm: &mut Comm) -> f64 {
    let dt = 0.01;
    mg.solve(vel, dt, comm).unwrap();
    mg.project(vel, dt);
    for (c, f) in vel.iter_mut().enumerate() {
        comm.exchange_halos(f, FieldTag::velocity(c), sub).unwrap();
    }
    let mut acc = ExactSum::new();
    mg.correction().for_interior(|_, _, _, v| acc.add(v));
    acc.value()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn projection_is_idempotent_and_mean_free(seed in any::<u64>()) {
        let p = plan(16, [1, 1, 1], [BoundaryKind::Periodic; 6]);
        let sub = p.subdomain(0).clone();
        let mut comm = Comm::solo();
        let mut mg = MultigridHierarchy::build(&sub, p.boundaries, &PressureConfig::default()).unwrap();
        let mut vel = random_velocity(&sub, seed, &mut comm).unwrap();
        let mean = project_once(&mut mg, &mut vel, &sub, &mut comm);
        prop_assert!(mean.abs() <= 1e-9, "correction mean {}", mean);
        let div = max_divergence(&vel, sub.spacing, &mut comm).unwrap();
        prop_assert!(div <= 1e-6, "divergence {}", div);
        let before = vel.clone();
        project_once(&mut mg, &mut vel, &sub, &mut comm);
        let mut change = 0.0f64;
        for (a, b) in before.iter().zip(&vel) {
            a.for_interior(|i, j, k, v| change = change.max((v - b.get(i, j, k)).abs()));
        }
        prop_assert!(change <= 1e-6, "second projection moved velocity by {}", change);
    }

    #[test]
    fn restriction_preserves_the_mean(vals in prop::collection::vec(-10.0f64..10.0, 8 * 4 * 4), fx in 1usize..=2, fz in 1usize..=2) {
        let mut fine = Field3::new([8, 4, 4], 1);
        let mut it = vals.iter();
        fine.fill_interior(|_, _, _| *it.next().unwrap());
        let factors = [fx, 2, fz];
        let mut coarse = Field3::new([8 / fx, 2, 4 / fz], 1);
        restrict(&fine, factors, &mut coarse).unwrap();
        let mean = |f: &Field3| f.interior_values().iter().sum::<f64>() / f.interior_values().len() as f64;
        prop_assert!((mean(&fine) - mean(&coarse)).abs() <= 1e-12);
    }

    #[test]
    fn prolongation_reproduces_constants(c in -5.0f64..5.0) {
        let mut coarse = Field3::new([4, 4, 4], 1);
        coarse.fill(c);
        let mut fine = Field3::new([8, 8, 4], 1);
        prolong(&coarse, [2, 2, 1], &mut fine).unwrap();
        prop_assert!(fine.interior_values().iter().all(|v| (v - c).abs() <= 1e-12));
    }
}

#[test]
fn transfer_dimension_errors() {
    let fine = Field3::new([8, 8, 8], 1);
    let mut coarse = Field3::new([3, 4, 4], 1);
    assert!(restrict(&fine, [2, 2, 2], &mut coarse).is_err());
    let mut f2 = Field3::new([7, 8, 8], 1);
    assert!(prolong(&Field3::new([4, 4, 4], 1), [2, 2, 2], &mut f2).is_err());
}

#[test]
fn prolongation_is_linear_inside() {
    // coarse values linear in x: interior fine cells reproduce the line exactly
    let mut coarse = Field3::new([4, 4, 4], 1);
    coarse.fill_all(|i, _, _| i as f64 * 2.0 + 0.5);
    let mut fine = Field3::new([8, 8, 8], 1);
    prolong(&coarse, [2, 2, 2], &mut fine).unwrap();
    // fine centre x = (i + 0.5)/2 - 0.5 in coarse index units
    for i in 0..8isize {
        let xc = (i as f64 + 0.5) / 2.0 - 0.5;
        assert!((fine.get(i, 3, 3) - (xc * 2.0 + 0.5)).abs() < 1e-12, "i {i}");
    }
}
