//! Q16.16 two's-complement fixed point, bit-exact with the hardware datapath.
//!
//! Every operation saturates at the representable bounds instead of wrapping.
//! Multiplication keeps the full 64-bit product and drops the low 16 bits with
//! an arithmetic shift (truncation toward negative infinity).

use std::fmt;
use std::ops::{Add, Mul};
use std::sync::OnceLock;

use thiserror::Error;

/// Number of fractional bits in the word.
pub const FRAC_BITS: u32 = 16;
/// Number of integer bits, sign included.
pub const INT_BITS: u32 = 32 - FRAC_BITS;

const ONE_RAW: i64 = 1 << FRAC_BITS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FixedPointError {
    #[error("cannot convert non-finite value {0} to fixed point")]
    NonFinite(f64),
}

/// A 32-bit Q16.16 value.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fx32(i32);

impl Fx32 {
    pub const ZERO: Fx32 = Fx32(0);
    pub const ONE: Fx32 = Fx32(1 << FRAC_BITS);
    pub const MAX: Fx32 = Fx32(i32::MAX);
    pub const MIN: Fx32 = Fx32(i32::MIN);
    /// Smallest positive step, 2^-16.
    pub const EPSILON: Fx32 = Fx32(1);

    pub const fn from_raw(raw: i32) -> Self {
        Fx32(raw)
    }

    pub const fn raw(self) -> i32 {
        self.0
    }

    /// The raw word reinterpreted as unsigned, as it appears on a bus or in a ROM.
    pub const fn bits(self) -> u32 {
        self.0 as u32
    }

    pub const fn from_bits(bits: u32) -> Self {
        Fx32(bits as i32)
    }

    /// Nearest representable value, ties away from zero, saturating out of range.
    pub fn from_real(x: f64) -> Result<Self, FixedPointError> {
        if !x.is_finite() {
            return Err(FixedPointError::NonFinite(x));
        }
        let scaled = (x * ONE_RAW as f64).round();
        Ok(Fx32(saturate(scaled.clamp(i64::MIN as f64, i64::MAX as f64) as i64)))
    }

    /// Like [`Fx32::from_real`], also reporting whether the value was clamped.
    pub fn from_real_checked(x: f64) -> Result<(Self, bool), FixedPointError> {
        let v = Self::from_real(x)?;
        let scaled = (x * ONE_RAW as f64).round();
        let clamped = scaled > i32::MAX as f64 || scaled < i32::MIN as f64;
        Ok((v, clamped))
    }

    pub fn to_real(self) -> f64 {
        self.0 as f64 / ONE_RAW as f64
    }

    /// Saturating add; the flag is set when the exact sum was out of range.
    pub fn add_sat(self, rhs: Fx32) -> (Fx32, bool) {
        let wide = self.0 as i64 + rhs.0 as i64;
        let v = saturate(wide);
        (Fx32(v), v as i64 != wide)
    }

    /// Truncating, saturating multiply; the flag is set on saturation.
    pub fn mul_sat(self, rhs: Fx32) -> (Fx32, bool) {
        let wide = (self.0 as i64 * rhs.0 as i64) >> FRAC_BITS;
        let v = saturate(wide);
        (Fx32(v), v as i64 != wide)
    }

    pub fn sigmoid(self) -> Fx32 {
        fx_sigmoid(self, SigmoidLut::shared())
    }
}

fn saturate(wide: i64) -> i32 {
    wide.clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

impl Add for Fx32 {
    type Output = Fx32;
    fn add(self, rhs: Fx32) -> Fx32 {
        self.add_sat(rhs).0
    }
}

impl Mul for Fx32 {
    type Output = Fx32;
    fn mul(self, rhs: Fx32) -> Fx32 {
        self.mul_sat(rhs).0
    }
}

impl fmt::Debug for Fx32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fx32({} = 0x{:08X})", self.to_real(), self.bits())
    }
}

impl fmt::Display for Fx32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_real(), f)
    }
}

pub fn from_real(x: f64) -> Result<Fx32, FixedPointError> {
    Fx32::from_real(x)
}

pub fn fx_add(a: Fx32, b: Fx32) -> Fx32 {
    a + b
}

pub fn fx_mul(a: Fx32, b: Fx32) -> Fx32 {
    a * b
}

/// Number of table entries.
pub const LUT_ENTRIES: usize = 1024;
/// Table covers [-LUT_RANGE, +LUT_RANGE).
pub const LUT_RANGE: i32 = 8;
/// log2 of the raw-value distance between adjacent entries (1/64 in Q16.16).
const LUT_STEP_SHIFT: u32 = 10;

/// Sigmoid sampled at 1/64 steps over [-8, 8) with hard clamps outside.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SigmoidLut {
    entries: Vec<Fx32>,
    clamp_low: Fx32,
    clamp_high: Fx32,
}

impl SigmoidLut {
    pub fn build() -> Self {
        let entries = (0..LUT_ENTRIES)
            .map(|k| {
                let x = -(LUT_RANGE as f64) + k as f64 / 64.0;
                Fx32::from_real(logistic(x)).expect("sigmoid is finite")
            })
            .collect();
        SigmoidLut {
            entries,
            clamp_low: Fx32::from_real(logistic(-(LUT_RANGE as f64))).expect("finite"),
            clamp_high: Fx32::from_real(logistic(LUT_RANGE as f64)).expect("finite"),
        }
    }

    /// Process-wide table, built on first use.
    pub fn shared() -> &'static SigmoidLut {
        static LUT: OnceLock<SigmoidLut> = OnceLock::new();
        LUT.get_or_init(SigmoidLut::build)
    }

    pub fn entries(&self) -> &[Fx32] {
        &self.entries
    }

    pub fn clamp_low(&self) -> Fx32 {
        self.clamp_low
    }

    pub fn clamp_high(&self) -> Fx32 {
        self.clamp_high
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Table lookup with floor indexing; no interpolation.
pub fn fx_sigmoid(x: Fx32, lut: &SigmoidLut) -> Fx32 {
    let low = -(LUT_RANGE << FRAC_BITS);
    let high = LUT_RANGE << FRAC_BITS;
    if x.0 < low {
        lut.clamp_low
    } else if x.0 >= high {
        lut.clamp_high
    } else {
        lut.entries[((x.0 - low) >> LUT_STEP_SHIFT) as usize]
    }
}
