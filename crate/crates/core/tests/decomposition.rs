//! Partition and halo-exchange properties over random topologies.

use proptest::prelude::*;

use stagflow::exchange::{run_inproc, Comm, FieldTag};
use stagflow::mesh::{build_decomposition, BoundaryKind, DecompositionPlan, Field3, GlobalGrid};

fn periodic_plan(dims: [usize; 3], topology: [usize; 3], g: usize) -> DecompositionPlan {
    let grid = GlobalGrid::new(dims, [1.0; 3], [0.0; 3]).unwrap();
    build_decomposition(grid, topology, g, [BoundaryKind::Periodic; 6]).unwrap()
}

/// Distinct value for every global cell.
fn code(g: [usize; 3]) -> f64 {
    (g[0] + 1000 * g[1] + 1_000_000 * g[2]) as f64
}

fn topo_strategy() -> impl Strategy<Value = ([usize; 3], [usize; 3], usize)> {
    (1usize..=2, 1usize..=2, 1usize..=2, 2usize..=4, 0usize..=2, 0usize..=2, 0usize..=2).prop_map(
        |(tx, ty, tz, g, ex, ey, ez)| {
            let t = [tx, ty, tz];
            let extra = [ex, ey, ez];
            let dims = [0, 1, 2].map(|a| t[a] * (2 * g + extra[a]));
            (dims, t, g)
        },
    )
}

/// Exchange on every rank; returns (before, after) per rank.
fn exchanged(plan: &DecompositionPlan, twice: bool) -> Vec<(Field3, Field3)> {
    let results = run_inproc(plan.workers(), |mut comm: Comm| {
        let sub = plan.subdomain(comm.rank()).clone();
        let mut f = Field3::new(sub.local_dims, sub.ghost_width);
        f.fill(f64::NAN);
        f.fill_interior(|i, j, k| {
            code([sub.offset[0] + i as usize, sub.offset[1] + j as usize, sub.offset[2] + k as usize])
        });
        let before = f.clone();
        comm.exchange_halos(&mut f, FieldTag::Phi, &sub)?;
        if twice {
            let once = f.clone();
            comm.exchange_halos(&mut f, FieldTag::Phi, &sub)?;
            assert_eq!(
                once.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                f.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "second exchange changed ghosts"
            );
        }
        Ok::<_, stagflow::exchange::ExchangeError>((before, f))
    });
    results.into_iter().map(|r| r.unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn owned_ranges_tile_the_grid((dims, topology, g) in topo_strategy()) {
        let plan = periodic_plan(dims, topology, g);
        let mut hits = vec![0u8; dims.iter().product()];
        for s in &plan.subdomains {
            for k in s.owned_range(2) {
                for j in s.owned_range(1) {
                    for i in s.owned_range(0) {
                        hits[i + dims[0] * (j + dims[1] * k)] += 1;
                    }
                }
            }
        }
        prop_assert!(hits.iter().all(|&h| h == 1));
    }

    #[test]
    fn ghosts_mirror_neighbour_interiors((dims, topology, g) in topo_strategy()) {
        let plan = periodic_plan(dims, topology, g);
        for (rank, (before, after)) in exchanged(&plan, true).iter().enumerate() {
            let s = plan.subdomain(rank);
            let gi = g as isize;
            let n = s.local_dims;
            for k in -gi..n[2] as isize + gi {
                for j in -gi..n[1] as isize + gi {
                    for i in -gi..n[0] as isize + gi {
                        let p = [i, j, k];
                        let glob = [0, 1, 2].map(|a| (s.offset[a] as isize + p[a]).rem_euclid(dims[a] as isize) as usize);
                        prop_assert_eq!(after.get(i, j, k), code(glob), "rank {} cell {:?}", rank, p);
                    }
                }
            }
            // interiors untouched
            let mut same = true;
            before.for_interior(|i, j, k, v| same &= after.get(i, j, k).to_bits() == v.to_bits());
            prop_assert!(same);
        }
    }

    #[test]
    fn exchange_is_deterministic((dims, topology, g) in topo_strategy()) {
        let plan = periodic_plan(dims, topology, g);
        let a = exchanged(&plan, false);
        let b = exchanged(&plan, false);
        for ((_, x), (_, y)) in a.iter().zip(&b) {
            prop_assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}

#[test]
fn message_volume_grows_while_messages_shrink() {
    let dims = [32, 32, 32];
    let mut last_total = 0;
    let mut last_size = usize::MAX;
    for topology in [[2, 1, 1], [2, 2, 1], [2, 2, 2], [4, 2, 2], [4, 4, 2]] {
        let grid = GlobalGrid::new(dims, [1.0; 3], [0.0; 3]).unwrap();
        let plan = build_decomposition(grid, topology, 2, [BoundaryKind::NoSlipWall; 6]).unwrap();
        let total = plan.total_message_cells();
        let largest = (0..6).map(|f| plan.message_cell_count(stagflow::mesh::Face::from_index(f))).max().unwrap();
        assert!(total > last_total, "{topology:?}: total {total} not above {last_total}");
        assert!(largest <= last_size, "{topology:?}: message {largest} above {last_size}");
        last_total = total;
        last_size = largest;
    }
}

#[test]
fn wall_ghosts_are_left_alone() {
    let grid = GlobalGrid::new([8, 8, 8], [1.0; 3], [0.0; 3]).unwrap();
    let plan = build_decomposition(grid, [2, 1, 1], 2, [BoundaryKind::SlipWall; 6]).unwrap();
    let out = run_inproc(2, |mut comm: Comm| {
        let sub = plan.subdomain(comm.rank()).clone();
        let mut f = Field3::new(sub.local_dims, 2);
        f.fill(-7.0);
        f.fill_interior(|_, _, _| comm.rank() as f64);
        comm.exchange_halos(&mut f, FieldTag::Phi, &sub)?;
        Ok::<_, stagflow::exchange::ExchangeError>(f)
    });
    let f0 = out[0].as_ref().unwrap();
    let f1 = out[1].as_ref().unwrap();
    assert_eq!(f0.get(-1, 2, 2), -7.0);
    assert_eq!(f0.get(4, 2, 2), 1.0);
    assert_eq!(f1.get(-2, 2, 2), 0.0);
    assert_eq!(f1.get(5, 2, 2), -7.0);
    assert_eq!(f0.get(2, -1, 2), -7.0);
}
