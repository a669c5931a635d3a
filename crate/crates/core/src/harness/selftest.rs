//! Quick invariant suite behind the `selftest` subcommand.

use crate::cases::{CaseSpec, CavitySpec, TgvSpec};
use crate::exchange::Comm;
use crate::levelset::heaviside;
use crate::schemes::{weno5_reconstruct, weno_weights, WenoParams};
use crate::turbulence::{wale_viscosity, VelocityGradient};

use super::{run_parallel, Launch};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

/// Small deterministic pseudo-random stream so the suite needs no extra state.
struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

pub fn run_selftest() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let p = WenoParams::default();
    let mut rng = Lcg(7);

    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let f = [rng.next(), rng.next(), rng.next(), rng.next(), rng.next()].map(|v| v * 10.0);
        let b = crate::schemes::weno_smoothness(&f);
        let w = weno_weights(b, &p);
        worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    out.push(check("weno weights sum to one", worst <= 1e-14, format!("max deviation {worst:e}")));

    let c = weno5_reconstruct(&[3.25; 5], &WenoParams::optimal());
    out.push(check("weno reproduces constants", (c - 3.25).abs() <= 1e-14, format!("{c}")));

    let mut neg = 0;
    for _ in 0..10_000 {
        let mut g = [[0.0; 3]; 3];
        for row in g.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.next() * 5.0;
            }
        }
        if wale_viscosity(&VelocityGradient(g), 0.1) < 0.0 {
            neg += 1;
        }
    }
    out.push(check("eddy viscosity non-negative", neg == 0, format!("{neg} negative samples")));

    let h = (heaviside(0.0, 0.1), heaviside(0.1, 0.1), heaviside(-0.1, 0.1));
    out.push(check("heaviside end points", h == (0.5, 1.0, 0.0), format!("{h:?}")));

    let tgv = CaseSpec::Tgv(TgvSpec::new(16)).setup();
    let ke = tgv.ok().and_then(|s| {
        let plan = s.plan([1, 1, 1]).ok()?;
        let st = s.initial_state(&plan.subdomains[0]);
        crate::cases::tgv_kinetic_energy(&st, &plan.subdomains[0], &mut Comm::solo()).ok()
    });
    out.push(check(
        "vortex initial energy",
        ke.is_some_and(|k| (k - 0.125).abs() <= 1e-12),
        format!("{ke:?}"),
    ));

    // One cavity step on one and on two workers: divergence and identical fields.
    let result = CaseSpec::Cavity(CavitySpec::new(16)).setup().map_err(|e| e.to_string()).and_then(|setup| {
        let run = |topo| {
            run_parallel(&setup, topo, &Launch::InProc, |solver, state| {
                for _ in 0..2 {
                    solver.step(state)?;
                }
                let div = solver.max_divergence(state)?;
                Ok((div, state.fields.vel[0].interior_values()))
            })
            .map_err(|e| e.to_string())
        };
        Ok((run([1, 1, 1])?, run([2, 1, 1])?))
    });
    match result {
        Ok((one, two)) => {
            let div = one[0].0;
            out.push(check("projected flow is divergence free", div <= 1e-6, format!("max div {div:e}")));
            let serial = &one[0].1;
            let mut same = true;
            // rank 0 owns the low-x half of each row
            let n = 16;
            for (r, (_, vals)) in two.iter().enumerate() {
                for (idx, v) in vals.iter().enumerate() {
                    let i = idx % (n / 2) + r * n / 2;
                    let rest = idx / (n / 2);
                    if serial[rest * n + i].to_bits() != v.to_bits() {
                        same = false;
                    }
                }
            }
            out.push(check("decomposition invariance", same, String::from("1 vs 2 workers")));
        }
        Err(e) => out.push(check("cavity steps", false, e)),
    }
    out
}
