//! WALE subgrid-scale eddy viscosity.

use crate::mesh::Field3;

pub const WALE_CONSTANT: f64 = 0.46;
const DENOMINATOR_FLOOR: f64 = 1e-30;

/// `g[i][j] = d u_i / d x_j` at a cell center.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VelocityGradient(pub [[f64; 3]; 3]);

impl VelocityGradient {
    pub fn squared(&self) -> [[f64; 3]; 3] {
        let g = &self.0;
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| g[i][k] * g[k][j]).sum();
            }
        }
        out
    }
}

/// Filter width from the cell volume.
pub fn filter_width(spacing: [f64; 3]) -> f64 {
    (spacing[0] * spacing[1] * spacing[2]).cbrt()
}

pub fn wale_viscosity(g: &VelocityGradient, delta: f64) -> f64 {
    let gm = &g.0;
    let g2 = g.squared();
    let tr = g2[0][0] + g2[1][1] + g2[2][2];
    let mut ss = 0.0;
    let mut sdsd = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let s = 0.5 * (gm[i][j] + gm[j][i]);
            let mut sd = 0.5 * (g2[i][j] + g2[j][i]);
            if i == j {
                sd -= tr / 3.0;
            }
            ss += s * s;
            sdsd += sd * sd;
        }
    }
    let den = ss.powf(2.5) + sdsd.powf(1.25);
    if den < DENOMINATOR_FLOOR {
        return 0.0;
    }
    let cd = WALE_CONSTANT * delta;
    cd * cd * sdsd.powf(1.5) / den
}

/// Second-order velocity gradient at local cell `(i, j, k)`. Needs one ghost layer.
pub fn cell_gradient(vel: &[Field3; 3], spacing: [f64; 3], i: isize, j: isize, k: isize) -> VelocityGradient {
    let mut g = [[0.0; 3]; 3];
    let p = [i, j, k];
    for (c, f) in vel.iter().enumerate() {
        // component c averaged to the center of the cell at `q`
        let center = |q: [isize; 3]| {
            let mut m = q;
            m[c] -= 1;
            0.5 * (f.at(q) + f.at(m))
        };
        for a in 0..3 {
            if a == c {
                let mut m = p;
                m[c] -= 1;
                g[c][a] = (f.at(p) - f.at(m)) / spacing[a];
            } else {
                let mut hi = p;
                let mut lo = p;
                hi[a] += 1;
                lo[a] -= 1;
                g[c][a] = (center(hi) - center(lo)) / (2.0 * spacing[a]);
            }
        }
    }
    VelocityGradient(g)
}

/// WALE viscosity in every interior cell; ghosts are left to the caller.
pub fn eddy_viscosity_field(vel: &[Field3; 3], spacing: [f64; 3], nu_t: &mut Field3) {
    let delta = filter_width(spacing);
    let n = nu_t.dims();
    for k in 0..n[2] as isize {
        for j in 0..n[1] as isize {
            for i in 0..n[0] as isize {
                let g = cell_gradient(vel, spacing, i, j, k);
                nu_t.set(i, j, k, wale_viscosity(&g, delta));
            }
        }
    }
}
