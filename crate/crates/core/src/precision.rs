//! Arithmetic back-ends for orbit simulation.
//!
//! Orbits are stepped through the [`Arithmetic`] trait so the same code runs
//! in native `f64` or in a binary floating-point type with a configurable
//! mantissa width. The wide mode matters where offsets near 1e-12 from the
//! diagonal have to survive hundreds of steps.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use astro_float::{BigFloat, RoundingMode, Sign};
use serde::{Deserialize, Serialize};

use crate::error::CmlError;

/// Mantissa width used when `big` is requested without an explicit width.
pub const DEFAULT_BIG_BITS: usize = 128;

/// Precision mode of a simulation, written as `f64` or `big:<bits>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PrecisionMode {
    F64,
    Big { bits: usize },
}

impl PrecisionMode {
    pub fn big_default() -> Self {
        PrecisionMode::Big {
            bits: DEFAULT_BIG_BITS,
        }
    }
}

impl Default for PrecisionMode {
    fn default() -> Self {
        PrecisionMode::F64
    }
}

impl fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrecisionMode::F64 => write!(f, "f64"),
            PrecisionMode::Big { bits } => write!(f, "big:{bits}"),
        }
    }
}

impl FromStr for PrecisionMode {
    type Err = CmlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "f64" {
            return Ok(PrecisionMode::F64);
        }
        if s == "big" {
            return Ok(PrecisionMode::big_default());
        }
        if let Some(bits) = s.strip_prefix("big:") {
            let bits: usize = bits
                .parse()
                .map_err(|_| CmlError::Config(format!("bad mantissa width in precision '{s}'")))?;
            if !(64..=4096).contains(&bits) {
                return Err(CmlError::Config(format!(
                    "mantissa width {bits} outside supported range 64..=4096"
                )));
            }
            return Ok(PrecisionMode::Big { bits });
        }
        Err(CmlError::Config(format!(
            "unknown precision '{s}' (expected f64 or big:<bits>)"
        )))
    }
}

impl TryFrom<String> for PrecisionMode {
    type Error = CmlError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PrecisionMode> for String {
    fn from(p: PrecisionMode) -> String {
        p.to_string()
    }
}

/// Minimal set of operations needed to step a lattice.
pub trait Arithmetic: Send + Sync {
    type Num: Clone + Send + Sync + fmt::Debug;

    fn mode(&self) -> PrecisionMode;
    fn from_f64(&self, x: f64) -> Self::Num;
    /// `num / den` rounded once to the working precision.
    fn ratio(&self, num: i64, den: i64) -> Self::Num;
    fn to_f64(&self, x: &Self::Num) -> f64;
    fn add(&self, a: &Self::Num, b: &Self::Num) -> Self::Num;
    fn sub(&self, a: &Self::Num, b: &Self::Num) -> Self::Num;
    fn mul(&self, a: &Self::Num, b: &Self::Num) -> Self::Num;
    fn cmp(&self, a: &Self::Num, b: &Self::Num) -> Ordering;
    fn abs(&self, a: &Self::Num) -> Self::Num;

    fn zero(&self) -> Self::Num {
        self.from_f64(0.0)
    }
    fn one(&self) -> Self::Num {
        self.from_f64(1.0)
    }
    fn max<'a>(&self, a: &'a Self::Num, b: &'a Self::Num) -> &'a Self::Num {
        if self.cmp(a, b) == Ordering::Less {
            b
        } else {
            a
        }
    }
}

/// Native double precision.
#[derive(Debug, Clone, Copy, Default)]
pub struct F64Arith;

impl Arithmetic for F64Arith {
    type Num = f64;

    fn mode(&self) -> PrecisionMode {
        PrecisionMode::F64
    }
    #[inline]
    fn from_f64(&self, x: f64) -> f64 {
        x
    }
    fn ratio(&self, num: i64, den: i64) -> f64 {
        num as f64 / den as f64
    }
    #[inline]
    fn to_f64(&self, x: &f64) -> f64 {
        *x
    }
    #[inline]
    fn add(&self, a: &f64, b: &f64) -> f64 {
        a + b
    }
    #[inline]
    fn sub(&self, a: &f64, b: &f64) -> f64 {
        a - b
    }
    #[inline]
    fn mul(&self, a: &f64, b: &f64) -> f64 {
        a * b
    }
    #[inline]
    fn cmp(&self, a: &f64, b: &f64) -> Ordering {
        a.total_cmp(b)
    }
    #[inline]
    fn abs(&self, a: &f64) -> f64 {
        a.abs()
    }
}

/// Binary floating point with a fixed mantissa width, round-to-nearest-even.
#[derive(Debug, Clone, Copy)]
pub struct BigArith {
    bits: usize,
}

const RM: RoundingMode = RoundingMode::ToEven;

impl BigArith {
    pub fn new(bits: usize) -> Self {
        BigArith { bits }
    }

    pub fn bits(&self) -> usize {
        self.bits
    }
}

/// Converts to the nearest `f64` (truncating beyond the leading word).
pub fn big_to_f64(x: &BigFloat) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x.is_inf_pos() {
        return f64::INFINITY;
    }
    if x.is_inf_neg() {
        return f64::NEG_INFINITY;
    }
    let Some((words, _, sign, exp, _)) = x.as_raw_parts() else {
        return f64::NAN;
    };
    let Some(&top) = words.last() else {
        return 0.0;
    };
    if top == 0 {
        return 0.0;
    }
    // value = 0.m * 2^exp, with the top word holding the leading 64 bits of m.
    let scale = exp as i32 - 64;
    let mag = top as f64 * 2f64.powi(scale);
    match sign {
        Sign::Neg => -mag,
        Sign::Pos => mag,
    }
}

impl Arithmetic for BigArith {
    type Num = BigFloat;

    fn mode(&self) -> PrecisionMode {
        PrecisionMode::Big { bits: self.bits }
    }
    fn from_f64(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, self.bits)
    }
    fn ratio(&self, num: i64, den: i64) -> BigFloat {
        let n = BigFloat::from_i64(num, self.bits);
        let d = BigFloat::from_i64(den, self.bits);
        n.div(&d, self.bits, RM)
    }
    fn to_f64(&self, x: &BigFloat) -> f64 {
        big_to_f64(x)
    }
    fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, self.bits, RM)
    }
    fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, self.bits, RM)
    }
    fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, self.bits, RM)
    }
    fn cmp(&self, a: &BigFloat, b: &BigFloat) -> Ordering {
        match a.cmp(b) {
            Some(v) if v < 0 => Ordering::Less,
            Some(0) => Ordering::Equal,
            Some(_) => Ordering::Greater,
            None => Ordering::Equal,
        }
    }
    fn abs(&self, a: &BigFloat) -> BigFloat {
        a.abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_mode_round_trips_through_strings() {
        assert_eq!("f64".parse::<PrecisionMode>().unwrap(), PrecisionMode::F64);
        assert_eq!(
            "big:256".parse::<PrecisionMode>().unwrap(),
            PrecisionMode::Big { bits: 256 }
        );
        assert_eq!("big".parse::<PrecisionMode>().unwrap(), PrecisionMode::big_default());
        assert_eq!(PrecisionMode::Big { bits: 192 }.to_string(), "big:192");
        assert!("big:x".parse::<PrecisionMode>().is_err());
        assert!("f32".parse::<PrecisionMode>().is_err());
        assert!("big:8".parse::<PrecisionMode>().is_err());
    }

    #[test]
    fn big_conversion_matches_f64() {
        let ar = BigArith::new(128);
        for x in [0.0, 1.0, 0.75, 0.1, -3.5, 1e-12, 0.999_999_999_999] {
            assert_eq!(ar.to_f64(&ar.from_f64(x)), x);
        }
        let third = ar.ratio(1, 3);
        assert!((ar.to_f64(&third) - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn big_keeps_bits_that_f64_loses() {
        let ar = BigArith::new(128);
        let one = ar.one();
        let tiny = ar.from_f64(1e-20);
        let s = ar.sub(&ar.add(&one, &tiny), &one);
        assert!((ar.to_f64(&s) - 1e-20).abs() < 1e-30);
        assert_eq!((1.0 + 1e-20) - 1.0, 0.0);
    }
}
