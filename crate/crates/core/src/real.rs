//! Scalar abstraction over binary64 and double-double arithmetic.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use qd::Quad;

use crate::error::{Error, Result};

pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    fn from_f64(v: f64) -> Self;
    fn from_quad(v: Quad) -> Self;
    fn to_f64(self) -> f64;
    fn to_quad(self) -> Quad;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn pi() -> Self;
    /// Unit roundoff of the representation.
    fn eps() -> f64;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
    fn powi(self, k: usize) -> Self {
        let mut acc = Self::one();
        let mut base = self;
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn from_quad(v: Quad) -> Self {
        v.0 + v.1
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn to_quad(self) -> Quad {
        Quad::from_f64(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn pi() -> Self {
        std::f64::consts::PI
    }
    fn eps() -> f64 {
        f64::EPSILON
    }
}

impl Real for Quad {
    fn from_f64(v: f64) -> Self {
        Quad::from_f64(v)
    }
    fn from_quad(v: Quad) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self.0 + self.1
    }
    fn to_quad(self) -> Quad {
        self
    }
    fn exp(self) -> Self {
        Quad::exp(self)
    }
    fn ln(self) -> Self {
        Quad::ln(self)
    }
    fn sqrt(self) -> Self {
        if self.0 == 0.0 {
            return Quad::ZERO;
        }
        Quad::sqrt(self)
    }
    fn abs(self) -> Self {
        Quad::abs(self)
    }
    fn pi() -> Self {
        Quad::PI
    }
    fn eps() -> f64 {
        Quad::EPSILON.0
    }
}

/// Arithmetic used for bimoments, the triangular factorization and the
/// polynomial algebra on coefficient tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Double,
    #[default]
    Extended,
}

impl Precision {
    pub const ENV_VAR: &'static str = "BIMATRIX_PRECISION";

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "double" => Ok(Precision::Double),
            "extended" => Ok(Precision::Extended),
            other => Err(Error::ConfigInvalid(format!(
                "{} must be 'double' or 'extended', got '{other}'",
                Self::ENV_VAR
            ))),
        }
    }

    /// Reads `BIMATRIX_PRECISION`; unset means extended.
    pub fn from_env() -> Result<Self> {
        match std::env::var(Self::ENV_VAR) {
            Ok(v) => Self::parse(&v),
            Err(_) => Ok(Precision::Extended),
        }
    }
}

pub fn q(v: f64) -> Quad {
    Quad::from_f64(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_exp_ln_roundtrip() {
        for &v in &[0.1, -3.7, 10.25, -40.5] {
            let x = q(v);
            let back = Real::ln(Real::exp(x));
            assert!(Real::to_f64(Real::abs(back - x)) < 1e-30 * v.abs().max(1.0));
        }
    }

    #[test]
    fn powi_matches_repeated_product() {
        let x = q(1.1);
        let mut p = q(1.0);
        for _ in 0..13 {
            p *= x;
        }
        assert!(Real::to_f64(Real::abs(x.powi(13) - p)) < 1e-29);
    }

    #[test]
    fn precision_parse() {
        assert_eq!(Precision::parse("double").unwrap(), Precision::Double);
        assert_eq!(Precision::parse("Extended").unwrap(), Precision::Extended);
        assert!(Precision::parse("quad").is_err());
    }
}
