//! Finite-difference kernels: central differences, 4th-order midpoint
//! interpolation, WENO5 reconstruction, and the advective and diffusive operators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::Field3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("scheme needs {required} ghost layers, field has {available}")]
    SchemeStencilOverflow { required: usize, available: usize },
    #[error("unknown scheme '{0}' (expected cd2, cd4 or weno5)")]
    UnknownScheme(String),
    #[error("field shapes differ")]
    ShapeMismatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Cd2,
    Cd4,
    Weno5,
}

impl Scheme {
    /// Ghost layers the decomposition provides for this scheme.
    pub fn ghost_width(self) -> usize {
        match self {
            Scheme::Cd2 => 2,
            Scheme::Cd4 => 3,
            Scheme::Weno5 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Cd2 => "cd2",
            Scheme::Cd4 => "cd4",
            Scheme::Weno5 => "weno5",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = SchemeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cd2" => Ok(Scheme::Cd2),
            "cd4" => Ok(Scheme::Cd4),
            "weno5" | "weno" => Ok(Scheme::Weno5),
            other => Err(SchemeError::UnknownScheme(other.to_string())),
        }
    }
}

/// Five consecutive samples `f[i-2..=i+2]` along one axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil5 {
    pub values: [f64; 5],
    pub spacing: f64,
}

impl Stencil5 {
    pub fn new(values: [f64; 5], spacing: f64) -> Self {
        Stencil5 { values, spacing }
    }

    pub fn sample(f: impl Fn(f64) -> f64, x: f64, spacing: f64) -> Self {
        let values = [-2.0, -1.0, 0.0, 1.0, 2.0].map(|o| f(x + o * spacing));
        Stencil5 { values, spacing }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cd4Coefficients {
    /// (-f2 + 8 f1 - 8 f-1 + f-2) / 12h
    #[default]
    Standard,
    /// (-f2 + 9 f1 - 9 f-1 + f-2) / 16h, kept for fidelity experiments.
    PaperVerbatim,
}

#[inline(always)]
pub fn cd2_derivative(fm1: f64, fp1: f64, dx: f64) -> f64 {
    (fp1 - fm1) / (2.0 * dx)
}

#[inline(always)]
fn cd4_raw(fm2: f64, fm1: f64, fp1: f64, fp2: f64, dx: f64, set: Cd4Coefficients) -> f64 {
    match set {
        Cd4Coefficients::Standard => (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * dx),
        Cd4Coefficients::PaperVerbatim => (-fp2 + 9.0 * fp1 - 9.0 * fm1 + fm2) / (16.0 * dx),
    }
}

pub fn cd4_derivative(s: &Stencil5, set: Cd4Coefficients) -> f64 {
    let f = s.values;
    cd4_raw(f[0], f[1], f[3], f[4], s.spacing, set)
}

/// Value at `i + 1/2` from `f[i-1], f[i], f[i+1], f[i+2]`; exact for cubics.
#[inline(always)]
pub fn midpoint_interp4(fm1: f64, f0: f64, fp1: f64, fp2: f64) -> f64 {
    (9.0 * (f0 + fp1) - (fm1 + fp2)) / 16.0
}

/// 4th-order second derivative `(-f2 + 16 f1 - 30 f0 + 16 f-1 - f-2) / 12h^2`.
#[inline(always)]
pub fn second_derivative4(fm2: f64, fm1: f64, f0: f64, fp1: f64, fp2: f64, dx: f64) -> f64 {
    (-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) / (12.0 * dx * dx)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WenoParams {
    /// Linear weights for the candidate stencils `(i-2..i)`, `(i-1..i+1)`, `(i..i+2)`.
    pub c: [f64; 3],
    pub eps: f64,
    pub power: i32,
}

impl Default for WenoParams {
    /// Weights as listed for the method: (1/10, 3/10, 6/10).
    fn default() -> Self {
        WenoParams { c: [0.1, 0.3, 0.6], eps: 1e-6, power: 2 }
    }
}

impl WenoParams {
    /// Linear weights that make the blend 5th-order accurate at `i + 1/2`:
    /// the central candidate carries 6/10.
    pub fn optimal() -> Self {
        WenoParams { c: [0.1, 0.6, 0.3], ..Self::default() }
    }
}

/// Which linear-weight ordering the reconstruction uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WenoWeightOrder {
    #[default]
    Optimal,
    AsListed,
}

impl WenoWeightOrder {
    pub fn params(self) -> WenoParams {
        match self {
            WenoWeightOrder::Optimal => WenoParams::optimal(),
            WenoWeightOrder::AsListed => WenoParams::default(),
        }
    }
}

#[inline(always)]
pub fn weno_smoothness(f: &[f64; 5]) -> [f64; 3] {
    let [a, b, c, d, e] = *f;
    let t = 13.0 / 12.0;
    let b1 = t * (a - 2.0 * b + c).powi(2) + 0.25 * (a - 4.0 * b + 3.0 * c).powi(2);
    let b2 = t * (b - 2.0 * c + d).powi(2) + 0.25 * (b - d).powi(2);
    let b3 = t * (c - 2.0 * d + e).powi(2) + 0.25 * (3.0 * c - 4.0 * d + e).powi(2);
    [b1, b2, b3]
}

#[inline(always)]
pub fn weno_weights(beta: [f64; 3], p: &WenoParams) -> [f64; 3] {
    let a = [0, 1, 2].map(|k| p.c[k] / (beta[k] + p.eps).powi(p.power));
    let s = a[0] + a[1] + a[2];
    [a[0] / s, a[1] / s, a[2] / s]
}

#[inline(always)]
pub fn weno_combine(w: [f64; 3], f: &[f64; 5]) -> f64 {
    let [a, b, c, d, e] = *f;
    let [w1, w2, w3] = w;
    (1.0 / 3.0) * w1 * a - (1.0 / 6.0) * (7.0 * w1 + w2) * b
        + (1.0 / 6.0) * (11.0 * w1 + 5.0 * w2 + 2.0 * w3) * c
        + (1.0 / 6.0) * (2.0 * w2 + 5.0 * w3) * d
        - (1.0 / 6.0) * w3 * e
}

/// Left-biased WENO5 value at `i + 1/2` from `f[i-2..=i+2]`.
#[inline(always)]
pub fn weno5_reconstruct(f: &[f64; 5], p: &WenoParams) -> f64 {
    let beta = weno_smoothness(f);
    if p.power != 2 || p.eps <= 0.0 {
        return weno_combine(weno_weights(beta, p), f);
    }
    // Same weights with a single division: alpha_k is scaled by the product
    // of all three denominators.
    let s = beta.map(|b| (b + p.eps) * (b + p.eps));
    let a = [p.c[0] * s[1] * s[2], p.c[1] * s[0] * s[2], p.c[2] * s[0] * s[1]];
    let sum = a[0] + a[1] + a[2];
    let [v0, v1, v2, v3, v4] = *f;
    let q0 = (2.0 * v0 - 7.0 * v1 + 11.0 * v2) / 6.0;
    let q1 = (-v1 + 5.0 * v2 + 2.0 * v3) / 6.0;
    let q2 = (2.0 * v2 + 5.0 * v3 - v4) / 6.0;
    (a[0] * q0 + a[1] * q1 + a[2] * q2) / sum
}

/// Upwinded value at interface `i + 1/2` from samples `f[i-2..=i+3]`.
#[inline(always)]
pub fn weno5_face_flux(s: &[f64; 6], positive: bool, p: &WenoParams) -> f64 {
    if positive {
        weno5_reconstruct(&[s[0], s[1], s[2], s[3], s[4]], p)
    } else {
        weno5_reconstruct(&[s[5], s[4], s[3], s[2], s[1]], p)
    }
}

/// Upwind WENO5 derivative at flat index `id` along stride `st`; `positive`
/// selects the left-biased (backward) pair of reconstructions.
#[inline(always)]
pub fn weno5_derivative(d: &[f64], id: usize, st: usize, positive: bool, h: f64, p: &WenoParams) -> f64 {
    let f = |o: isize| d[(id as isize + o * st as isize) as usize];
    let (fp, fm) = if positive {
        (
            weno5_reconstruct(&[f(-2), f(-1), f(0), f(1), f(2)], p),
            weno5_reconstruct(&[f(-3), f(-2), f(-1), f(0), f(1)], p),
        )
    } else {
        (
            weno5_reconstruct(&[f(3), f(2), f(1), f(0), f(-1)], p),
            weno5_reconstruct(&[f(2), f(1), f(0), f(-1), f(-2)], p),
        )
    };
    (fp - fm) / h
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemeOptions {
    pub cd4: Cd4Coefficients,
    pub weno: WenoWeightOrder,
}

fn check_shapes(fields: &[&Field3], required: usize) -> Result<(), SchemeError> {
    let first = fields[0];
    for f in fields {
        if f.dims() != first.dims() || f.ghost() != first.ghost() {
            return Err(SchemeError::ShapeMismatch);
        }
    }
    if first.ghost() < required {
        return Err(SchemeError::SchemeStencilOverflow { required, available: first.ghost() });
    }
    Ok(())
}

/// Velocity component `a` interpolated to the location of component `c` (`a != c`).
#[inline(always)]
fn advecting(q: &[f64], id: usize, sc: usize, sa: usize, fourth: bool) -> f64 {
    if !fourth {
        0.25 * (q[id] + q[id + sc] + q[id - sa] + q[id + sc - sa])
    } else {
        let along_a = |base: usize| midpoint_interp4(q[base - 2 * sa], q[base - sa], q[base], q[base + sa]);
        midpoint_interp4(along_a(id - sc), along_a(id), along_a(id + sc), along_a(id + 2 * sc))
    }
}

/// Advective term `u_j d(u_c)/dx_j` at every interior location of each component.
pub fn convective_term(
    vel: &[Field3; 3],
    spacing: [f64; 3],
    scheme: Scheme,
    opts: &SchemeOptions,
    out: &mut [Field3; 3],
) -> Result<(), SchemeError> {
    check_shapes(&[&vel[0], &vel[1], &vel[2], &out[0], &out[1], &out[2]], scheme.ghost_width())?;
    for (c, o) in out.iter_mut().enumerate() {
        convect_component(c, vel, spacing, scheme, opts, o);
    }
    Ok(())
}

fn convect_component(c: usize, vel: &[Field3; 3], h: [f64; 3], scheme: Scheme, opts: &SchemeOptions, out: &mut Field3) {
    let f = &vel[c];
    let n = f.dims();
    let s = [f.stride(0), f.stride(1), f.stride(2)];
    let d = f.data();
    let q = [vel[0].data(), vel[1].data(), vel[2].data()];
    let fourth = scheme != Scheme::Cd2;
    let wp = opts.weno.params();
    let cd4 = opts.cd4;
    for k in 0..n[2] as isize {
        for j in 0..n[1] as isize {
            let row = f.idx(0, j, k);
            let orow = out.idx(0, j, k);
            for i in 0..n[0] {
                let id = row + i;
                let mut acc = 0.0;
                for a in 0..3 {
                    let ua = if a == c { d[id] } else { advecting(q[a], id, s[c], s[a], fourth) };
                    let st = s[a];
                    let der = match scheme {
                        Scheme::Cd2 => cd2_derivative(d[id - st], d[id + st], h[a]),
                        Scheme::Cd4 => cd4_raw(d[id - 2 * st], d[id - st], d[id + st], d[id + 2 * st], h[a], cd4),
                        Scheme::Weno5 => weno5_derivative(d, id, st, ua >= 0.0, h[a], &wp),
                    };
                    acc += ua * der;
                }
                out.data_mut()[orow + i] = acc;
            }
        }
    }
}

/// Kinematic viscosity seen by the diffusive operator.
#[derive(Clone, Copy, Debug)]
pub enum Viscosity<'a> {
    Uniform(f64),
    /// Cell-centered total viscosity, averaged onto each component's faces.
    Cells(&'a Field3),
}

/// `nu * laplacian(u_c)` with the 4th-order stencil along each axis.
pub fn diffusive_term(vel: &[Field3; 3], nu: Viscosity<'_>, spacing: [f64; 3], out: &mut [Field3; 3]) -> Result<(), SchemeError> {
    let mut fields = vec![&vel[0], &vel[1], &vel[2], &out[0], &out[1], &out[2]];
    if let Viscosity::Cells(nf) = nu {
        fields.push(nf);
    }
    check_shapes(&fields, 2)?;
    for c in 0..3 {
        diffuse_component(c, &vel[c], nu, spacing, &mut out[c]);
    }
    Ok(())
}

fn diffuse_component(c: usize, f: &Field3, nu: Viscosity<'_>, h: [f64; 3], out: &mut Field3) {
    let n = f.dims();
    let s = [f.stride(0), f.stride(1), f.stride(2)];
    let d = f.data();
    for k in 0..n[2] as isize {
        for j in 0..n[1] as isize {
            let row = f.idx(0, j, k);
            for i in 0..n[0] {
                let id = row + i;
                let mut lap = 0.0;
                for a in 0..3 {
                    let st = s[a];
                    lap += second_derivative4(d[id - 2 * st], d[id - st], d[id], d[id + st], d[id + 2 * st], h[a]);
                }
                let nu_here = match nu {
                    Viscosity::Uniform(v) => v,
                    Viscosity::Cells(nf) => 0.5 * (nf.data()[id] + nf.data()[id + s[c]]),
                };
                out.data_mut()[id] = nu_here * lap;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cd2_examples() {
        assert_eq!(cd2_derivative(3.0, 3.0, 0.1), 0.0);
        assert_eq!(cd2_derivative(-0.5, 0.5, 0.5), 1.0);
        assert_eq!(cd2_derivative(0.0, 4.0, 1.0), 2.0);
    }

    #[test]
    fn cd4_examples() {
        let c = Stencil5::new([2.0; 5], 1.0);
        assert_eq!(cd4_derivative(&c, Cd4Coefficients::Standard), 0.0);
        assert_eq!(cd4_derivative(&c, Cd4Coefficients::PaperVerbatim), 0.0);
        let lin = Stencil5::sample(|x| x, 0.0, 1.0);
        assert_eq!(cd4_derivative(&lin, Cd4Coefficients::Standard), 1.0);
        assert_eq!(cd4_derivative(&lin, Cd4Coefficients::PaperVerbatim), 0.875);
        let cub = Stencil5::sample(|x| x * x * x, 0.0, 1.0);
        assert_eq!(cd4_derivative(&cub, Cd4Coefficients::Standard), 0.0);
    }

    #[test]
    fn cd4_exact_to_degree_four() {
        for deg in 0..=4 {
            let s = Stencil5::sample(|x| (x + 0.3f64).powi(deg), 0.7, 0.25);
            let exact = if deg == 0 { 0.0 } else { deg as f64 * 1.0f64.powi(deg - 1) };
            assert!(close(cd4_derivative(&s, Cd4Coefficients::Standard), exact, 1e-12), "degree {deg}");
        }
    }

    #[test]
    fn midpoint_examples() {
        assert_eq!(midpoint_interp4(3.0, 3.0, 3.0, 3.0), 3.0);
        assert_eq!(midpoint_interp4(-1.0, 0.0, 1.0, 2.0), 0.5);
        let c = |x: f64| x * x * x;
        assert_eq!(midpoint_interp4(c(-1.5), c(-0.5), c(0.5), c(1.5)), 0.0);
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(weno_smoothness(&[4.0; 5]), [0.0; 3]);
        assert_eq!(weno_smoothness(&[-2.0, -1.0, 0.0, 1.0, 2.0]), [1.0, 1.0, 1.0]);
        let b = weno_smoothness(&[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(close(b[0], 10.0 / 3.0, 1e-14));
        assert!(close(b[1], 13.0 / 3.0, 1e-14));
        assert!(close(b[2], 10.0 / 3.0, 1e-14));
    }

    #[test]
    fn weights_examples() {
        let p = WenoParams::default();
        assert_eq!(weno_weights([0.0; 3], &p), [0.1, 0.3, 0.6]);
        let w = weno_weights([1.0; 3], &p);
        for k in 0..3 {
            assert!(close(w[k], p.c[k], 1e-15));
        }
        let w = weno_weights([1e6, 0.0, 0.0], &p);
        assert!(w[0] < 1e-9);
        assert!(close(w[1], 1.0 / 3.0, 1e-9));
        assert!(close(w[2], 2.0 / 3.0, 1e-9));
    }

    #[test]
    fn combine_examples() {
        let w = [0.2, 0.5, 0.3];
        assert!(close(weno_combine(w, &[1.7; 5]), 1.7, 1e-15));
        let lin = [-2.0, -1.0, 0.0, 1.0, 2.0];
        assert!(close(weno_combine(WenoParams::optimal().c, &lin), 0.5, 1e-15));
        assert!(close(weno_combine(WenoParams::default().c, &lin), 0.5, 1e-15));
        let f = [1.0, 3.0, -2.0, 9.0, 9.0];
        assert!(close(weno_combine([1.0, 0.0, 0.0], &f), (2.0 * 1.0 - 7.0 * 3.0 + 11.0 * -2.0) / 6.0, 1e-14));
    }

    #[test]
    fn face_flux_symmetry_on_linear_data() {
        let p = WenoParams::optimal();
        let s = [-2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
        let pos = weno5_face_flux(&s, true, &p);
        let neg = weno5_face_flux(&s, false, &p);
        assert!(close(pos, 0.5, 1e-14));
        assert!(close(neg, 0.5, 1e-14));
        let c = [4.0; 6];
        assert!(close(weno5_face_flux(&c, false, &p), 4.0, 1e-14));
    }

    #[test]
    fn second_derivative_exact_on_quadratic() {
        assert_eq!(second_derivative4(4.0, 1.0, 0.0, 1.0, 4.0, 1.0), 2.0);
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("WENO5".parse::<Scheme>().unwrap(), Scheme::Weno5);
        assert!("upwind".parse::<Scheme>().is_err());
        assert_eq!(Scheme::Cd4.ghost_width(), 3);
    }

    fn field_1d(n: usize, g: usize, f: impl Fn(isize) -> f64) -> Field3 {
        let mut out = Field3::new([n, 4, 4], g);
        out.fill_all(|i, _, _| f(i));
        out
    }

    #[test]
    fn uniform_velocity_has_no_convection() {
        for scheme in [Scheme::Cd2, Scheme::Cd4, Scheme::Weno5] {
            let g = scheme.ghost_width();
            let vel = [field_1d(8, g, |_| 1.5), field_1d(8, g, |_| -0.5), field_1d(8, g, |_| 2.0)];
            let mut out = [Field3::new([8, 4, 4], g), Field3::new([8, 4, 4], g), Field3::new([8, 4, 4], g)];
            convective_term(&vel, [0.1; 3], scheme, &SchemeOptions::default(), &mut out).unwrap();
            for o in &out {
                assert!(o.interior_max_abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shear_flow_has_no_convection() {
        let g = 3;
        let mut u = Field3::new([6, 6, 6], g);
        u.fill_all(|_, j, _| 0.7 * (j as f64 + 0.5));
        let vel = [u, Field3::new([6, 6, 6], g), Field3::new([6, 6, 6], g)];
        let mut out = [Field3::new([6, 6, 6], g), Field3::new([6, 6, 6], g), Field3::new([6, 6, 6], g)];
        convective_term(&vel, [0.2; 3], Scheme::Cd4, &SchemeOptions::default(), &mut out).unwrap();
        assert!(out.iter().all(|o| o.interior_max_abs() < 1e-14));
    }

    #[test]
    fn stencil_overflow_reported() {
        let vel = [Field3::new([8, 8, 8], 2), Field3::new([8, 8, 8], 2), Field3::new([8, 8, 8], 2)];
        let mut out = vel.clone();
        let err = convective_term(&vel, [1.0; 3], Scheme::Weno5, &SchemeOptions::default(), &mut out).unwrap_err();
        assert_eq!(err, SchemeError::SchemeStencilOverflow { required: 4, available: 2 });
    }

    #[test]
    fn cd2_self_advection_converges() {
        // u = sin x along x; C_u = sin x cos x with second-order error.
        let mut errs = Vec::new();
        for n in [32usize, 64] {
            let h = 2.0 * std::f64::consts::PI / n as f64;
            let x = |i: isize| (i as f64 + 1.0) * h;
            let vel = [field_1d(n, 2, |i| x(i).sin()), field_1d(n, 2, |_| 0.0), field_1d(n, 2, |_| 0.0)];
            let mut out = vel.clone();
            convective_term(&vel, [h; 3], Scheme::Cd2, &SchemeOptions::default(), &mut out).unwrap();
            let mut e = 0.0f64;
            for i in 0..n as isize {
                e = e.max((out[0].get(i, 1, 1) - x(i).sin() * x(i).cos()).abs());
            }
            errs.push(e);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!((order - 2.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn diffusion_of_quadratic_is_exact() {
        let vel = [field_1d(6, 2, |i| (i * i) as f64), field_1d(6, 2, |_| 0.0), field_1d(6, 2, |_| 0.0)];
        let mut out = vel.clone();
        diffusive_term(&vel, Viscosity::Uniform(1.0), [1.0; 3], &mut out).unwrap();
        assert!(close(out[0].get(2, 1, 1), 2.0, 1e-12));
        let mut nu = Field3::new([6, 4, 4], 2);
        nu.fill(0.5);
        diffusive_term(&vel, Viscosity::Cells(&nu), [1.0; 3], &mut out).unwrap();
        assert!(close(out[0].get(3, 2, 2), 1.0, 1e-12));
    }
}
