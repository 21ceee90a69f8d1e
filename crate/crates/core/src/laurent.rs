//! Finite Laurent polynomials in z with real coefficients.

use crate::poly::C64;

/// sum_i c[i] z^{lo + i}
#[derive(Debug, Clone, PartialEq)]
pub struct Laurent {
    pub lo: i32,
    pub c: Vec<f64>,
}

impl Laurent {
    pub fn zero() -> Self {
        Laurent { lo: 0, c: vec![] }
    }

    pub fn constant(v: f64) -> Self {
        Laurent { lo: 0, c: vec![v] }
    }

    pub fn monomial(k: i32, v: f64) -> Self {
        Laurent { lo: k, c: vec![v] }
    }

    pub fn hi(&self) -> i32 {
        self.lo + self.c.len() as i32 - 1
    }

    pub fn coeff(&self, k: i32) -> f64 {
        let i = k - self.lo;
        if i < 0 || i as usize >= self.c.len() {
            0.0
        } else {
            self.c[i as usize]
        }
    }

    pub fn add(&self, o: &Laurent) -> Laurent {
        if self.c.is_empty() {
            return o.clone();
        }
        if o.c.is_empty() {
            return self.clone();
        }
        let lo = self.lo.min(o.lo);
        let hi = self.hi().max(o.hi());
        Laurent { lo, c: (lo..=hi).map(|k| self.coeff(k) + o.coeff(k)).collect() }
    }

    pub fn scale(&self, s: f64) -> Laurent {
        Laurent { lo: self.lo, c: self.c.iter().map(|v| v * s).collect() }
    }

    pub fn sub(&self, o: &Laurent) -> Laurent {
        self.add(&o.scale(-1.0))
    }

    pub fn mul(&self, o: &Laurent) -> Laurent {
        if self.c.is_empty() || o.c.is_empty() {
            return Laurent::zero();
        }
        let mut c = vec![0.0; self.c.len() + o.c.len() - 1];
        for (i, a) in self.c.iter().enumerate() {
            for (j, b) in o.c.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Laurent { lo: self.lo + o.lo, c }
    }

    pub fn pow(&self, k: usize) -> Laurent {
        (0..k).fold(Laurent::constant(1.0), |acc, _| acc.mul(self))
    }

    pub fn deriv(&self) -> Laurent {
        Laurent { lo: self.lo - 1, c: self.c.iter().enumerate().map(|(i, v)| v * (self.lo + i as i32) as f64).collect() }
    }

    /// p(L) for p given by ascending coefficients.
    pub fn compose_poly(&self, p: &[f64]) -> Laurent {
        p.iter().rev().fold(Laurent::zero(), |acc, &v| acc.mul(self).add(&Laurent::constant(v)))
    }

    /// Terms with exponent >= 0.
    pub fn nonnegative_part(&self) -> Laurent {
        if self.hi() < 0 {
            return Laurent::zero();
        }
        let start = (-self.lo).max(0) as usize;
        Laurent { lo: self.lo.max(0), c: self.c[start..].to_vec() }
    }

    pub fn eval(&self, z: C64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for &v in self.c.iter().rev() {
            acc = acc * z + v;
        }
        acc * z.powi(self.lo)
    }

    /// 1/L truncated after `terms` terms of its expansion around z = infinity
    /// (`at_infinity`) or z = 0, leading term inverted.
    pub fn reciprocal(&self, terms: usize, at_infinity: bool) -> Laurent {
        let (lead_k, lead) = if at_infinity { (self.hi(), self.coeff(self.hi())) } else { (self.lo, self.coeff(self.lo)) };
        // L = lead z^lead_k (1 + u), u a series in z^{-1} (or z).
        let sign = if at_infinity { -1 } else { 1 };
        let u: Vec<f64> = (1..terms).map(|j| self.coeff(lead_k + sign * j as i32) / lead).collect();
        // 1/(1+u) = sum_m w_m z^{sign m}
        let mut w = vec![0.0; terms];
        w[0] = 1.0;
        for m in 1..terms {
            let mut s = 0.0;
            for j in 1..=m {
                s -= u[j - 1] * w[m - j];
            }
            w[m] = s;
        }
        let mut out = Laurent::zero();
        for (m, &wm) in w.iter().enumerate() {
            out = out.add(&Laurent::monomial(-lead_k + sign * m as i32, wm / lead));
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_and_reciprocal() {
        // x = (z + 2/z)
        let x = Laurent { lo: -1, c: vec![2.0, 0.0, 1.0] };
        let x2 = x.mul(&x);
        assert_eq!((x2.coeff(2), x2.coeff(0), x2.coeff(-2)), (1.0, 4.0, 4.0));
        assert_eq!(x.deriv().coeff(-2), -2.0);
        let inv = x.reciprocal(8, true);
        let prod = x.mul(&inv);
        assert!((prod.coeff(0) - 1.0).abs() < 1e-15);
        for k in -6..0 {
            assert!(prod.coeff(k).abs() < 1e-14, "{k}");
        }
        let inv0 = x.reciprocal(8, false);
        let prod0 = x.mul(&inv0);
        for k in 1..7 {
            assert!(prod0.coeff(k).abs() < 1e-14, "{k}");
        }
        let z = C64::new(0.3, 1.1);
        assert!((x2.eval(z) - x.eval(z) * x.eval(z)).norm() < 1e-14);
        assert_eq!(x2.nonnegative_part().coeff(-2), 0.0);
        assert_eq!(x.compose_poly(&[1.0, 0.0, 1.0]).coeff(0), 5.0);
    }
}
