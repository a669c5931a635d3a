//! Exact summation of f64 values.
//!
//! Every finite double is an integer multiple of 2^-1074, so a wide fixed-point
//! register holds any sum exactly. The register is stored as signed 64-bit limbs
//! carrying 32-bit digits; after carry normalization the representation depends
//! only on the exact value, so the rounded result does not depend on the order
//! of additions or on how values were split across ranks.

const LIMBS: usize = 70;
const EMIN: i32 = -1074;
const RENORM_EVERY: u32 = 1 << 30;

#[derive(Clone, Debug)]
pub struct ExactSum {
    limbs: [i64; LIMBS],
    pending: u32,
    /// Sum of non-finite inputs (inf/nan); poisons the result.
    special: f64,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self::new()
    }
}

impl ExactSum {
    pub fn new() -> Self {
        ExactSum { limbs: [0; LIMBS], pending: 0, special: 0.0 }
    }

    pub fn add(&mut self, x: f64) {
        if !x.is_finite() {
            self.special += x;
            return;
        }
        if x == 0.0 {
            return;
        }
        let bits = x.to_bits();
        let neg = bits >> 63 == 1;
        let ef = ((bits >> 52) & 0x7ff) as i32;
        let frac = bits & ((1u64 << 52) - 1);
        let (m, e) = if ef == 0 { (frac, EMIN) } else { (frac | (1u64 << 52), ef - 1075) };
        let p = (e - EMIN) as u32;
        let limb = (p / 32) as usize;
        let shift = p % 32;
        let wide = (m as u128) << shift;
        let parts = [
            (wide & 0xffff_ffff) as i64,
            ((wide >> 32) & 0xffff_ffff) as i64,
            ((wide >> 64) & 0xffff_ffff) as i64,
        ];
        for (n, d) in parts.iter().enumerate() {
            if neg {
                self.limbs[limb + n] -= d;
            } else {
                self.limbs[limb + n] += d;
            }
        }
        self.pending += 1;
        if self.pending >= RENORM_EVERY {
            self.normalize();
        }
    }

    pub fn add_all(&mut self, xs: impl IntoIterator<Item = f64>) {
        for x in xs {
            self.add(x);
        }
    }

    /// Propagate carries so every limb except the top one lies in [0, 2^32).
    pub fn normalize(&mut self) {
        for l in 0..LIMBS - 1 {
            let carry = self.limbs[l] >> 32;
            self.limbs[l] -= carry << 32;
            self.limbs[l + 1] += carry;
        }
        self.pending = 0;
    }

    pub fn merge(&mut self, other: &ExactSum) {
        let mut o = other.clone();
        o.normalize();
        self.normalize();
        for l in 0..LIMBS {
            self.limbs[l] += o.limbs[l];
        }
        self.special += other.special;
        self.normalize();
    }

    /// Limbs as doubles (exact after normalization) for transport.
    pub fn to_wire(&self) -> Vec<f64> {
        let mut c = self.clone();
        c.normalize();
        let mut out: Vec<f64> = c.limbs.iter().map(|&l| l as f64).collect();
        out.push(c.special);
        out
    }

    pub fn from_wire(w: &[f64]) -> Option<ExactSum> {
        if w.len() != LIMBS + 1 {
            return None;
        }
        let mut s = ExactSum::new();
        for l in 0..LIMBS {
            s.limbs[l] = w[l] as i64;
        }
        s.special = w[LIMBS];
        Some(s)
    }

    /// Deterministic rounding of the exact value.
    pub fn value(&self) -> f64 {
        if self.special != 0.0 || self.special.is_nan() {
            return self.special;
        }
        let mut c = self.clone();
        c.normalize();
        // Sign-magnitude so every limb contributes with the same sign.
        let neg = c.limbs[LIMBS - 1] < 0;
        if neg {
            for l in c.limbs.iter_mut() {
                *l = -*l;
            }
            c.normalize();
        }
        let mut acc = 0.0f64;
        for l in (0..LIMBS).rev() {
            if c.limbs[l] != 0 {
                acc += c.limbs[l] as f64 * pow2(32 * l as i32 + EMIN);
            }
        }
        if neg {
            -acc
        } else {
            acc
        }
    }
}

fn pow2(k: i32) -> f64 {
    if k > 1023 {
        f64::INFINITY
    } else if k >= -1022 {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else if k >= -1074 {
        f64::from_bits(1u64 << (k + 1074))
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sums() {
        let mut s = ExactSum::new();
        s.add_all([0.25, 0.25, 0.5]);
        assert_eq!(s.value(), 1.0);
        let mut t = ExactSum::new();
        t.add_all([1e100, 1.0, -1e100]);
        assert_eq!(t.value(), 1.0);
    }

    #[test]
    fn subnormals_and_negatives() {
        let tiny = f64::from_bits(1);
        let mut s = ExactSum::new();
        s.add_all([tiny, tiny, -tiny]);
        assert_eq!(s.value(), tiny);
        let mut t = ExactSum::new();
        t.add_all([-3.5, 1.25]);
        assert_eq!(t.value(), -2.25);
    }

    #[test]
    fn order_and_split_independent() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1013) as f64 * 1.1e-3 - 0.3).collect();
        let mut a = ExactSum::new();
        a.add_all(xs.iter().copied());
        let mut b = ExactSum::new();
        b.add_all(xs.iter().rev().copied());
        let mut c1 = ExactSum::new();
        let mut c2 = ExactSum::new();
        c1.add_all(xs[..333].iter().copied());
        c2.add_all(xs[333..].iter().copied());
        c1.merge(&c2);
        let wire = ExactSum::from_wire(&c1.to_wire()).unwrap();
        assert_eq!(a.value().to_bits(), b.value().to_bits());
        assert_eq!(a.value().to_bits(), wire.value().to_bits());
    }

    #[test]
    fn infinities_propagate() {
        let mut s = ExactSum::new();
        s.add_all([1.0, f64::INFINITY]);
        assert_eq!(s.value(), f64::INFINITY);
    }
}
