//! IEEE-754 binary16 value semantics.
//!
//! [`Half`] carries a raw 16-bit pattern. Every arithmetic method is
//! correctly rounded: the exact (or wide) result is computed in binary64 and
//! rounded once, to nearest with ties to even. Nothing is ever fused or kept
//! wide across two operations.
//!
//! The kernels in [`crate::tensor`] use [`quantize`], a branch-light rounding
//! of binary32 carriers onto the binary16 grid, which agrees bit-for-bit with
//! [`round_to_half`] for every binary32 input.

mod arith;
mod class;

pub use arith::{half_arith, HalfOp};
pub use class::{classify, FpClass, FpKind, Sign};

use std::cmp::Ordering;
use std::fmt;

/// A binary16 scalar: 1 sign bit, 5 exponent bits, 10 fraction bits.
///
/// Equality and ordering follow IEEE value semantics (`-0 == +0`,
/// `NaN != NaN`). Compare [`Half::to_bits`] for bit-exact checks.
#[derive(Clone, Copy, Default)]
pub struct Half(u16);

pub(crate) const SIGN_MASK: u16 = 0x8000;
pub(crate) const EXP_MASK: u16 = 0x7C00;
pub(crate) const FRAC_MASK: u16 = 0x03FF;

impl Half {
    pub const ZERO: Half = Half(0x0000);
    pub const NEG_ZERO: Half = Half(0x8000);
    pub const ONE: Half = Half(0x3C00);
    pub const INFINITY: Half = Half(0x7C00);
    pub const NEG_INFINITY: Half = Half(0xFC00);
    /// Canonical quiet NaN. Payloads are never preserved.
    pub const NAN: Half = Half(0x7E00);
    /// Largest finite value, 65504.
    pub const MAX: Half = Half(0x7BFF);
    /// Most negative finite value, -65504.
    pub const MIN: Half = Half(0xFBFF);
    /// Smallest positive normal, 2^-14.
    pub const MIN_POSITIVE_NORMAL: Half = Half(0x0400);
    /// Smallest positive subnormal, 2^-24.
    pub const MIN_POSITIVE_SUBNORMAL: Half = Half(0x0001);
    /// Unit roundoff 2^-11 (about 4.88e-4), the figure usually tabulated as
    /// binary16 machine epsilon.
    pub const MACHINE_EPSILON: Half = Half(0x1000);
    /// Gap between 1.0 and the next representable value, 2^-10.
    pub const ULP_OF_ONE: Half = Half(0x1400);

    #[inline]
    pub const fn from_bits(bits: u16) -> Half {
        Half(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Round a binary64 value to the nearest binary16 (ties to even).
    #[inline]
    pub fn from_f64(x: f64) -> Half {
        round_to_half(x)
    }

    /// Round a binary32 value to the nearest binary16 (ties to even).
    #[inline]
    pub fn from_f32(x: f32) -> Half {
        round_to_half(x as f64)
    }

    /// Exact upcast.
    #[inline]
    pub fn to_f32(self) -> f32 {
        decode(self.0)
    }

    /// Exact upcast.
    #[inline]
    pub fn to_f64(self) -> f64 {
        decode(self.0) as f64
    }

    #[inline]
    pub fn is_nan(self) -> bool {
        self.0 & EXP_MASK == EXP_MASK && self.0 & FRAC_MASK != 0
    }

    #[inline]
    pub fn is_infinite(self) -> bool {
        self.0 & !SIGN_MASK == EXP_MASK
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.0 & EXP_MASK != EXP_MASK
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 & !SIGN_MASK == 0
    }

    #[inline]
    pub fn is_sign_negative(self) -> bool {
        self.0 & SIGN_MASK != 0
    }

    pub fn classify(self) -> FpClass {
        classify(self)
    }
}

impl PartialEq for Half {
    fn eq(&self, other: &Half) -> bool {
        self.to_f32() == other.to_f32()
    }
}

impl PartialOrd for Half {
    fn partial_cmp(&self, other: &Half) -> Option<Ordering> {
        self.to_f32().partial_cmp(&other.to_f32())
    }
}

impl fmt::Debug for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Half({:?} = 0x{:04x})", self.to_f32(), self.0)
    }
}

impl fmt::Display for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f32(), f)
    }
}

impl From<Half> for f32 {
    fn from(h: Half) -> f32 {
        h.to_f32()
    }
}

impl From<Half> for f64 {
    fn from(h: Half) -> f64 {
        h.to_f64()
    }
}

fn decode(bits: u16) -> f32 {
    let sign = ((bits & SIGN_MASK) as u32) << 16;
    let exp = ((bits & EXP_MASK) >> 10) as u32;
    let frac = (bits & FRAC_MASK) as u32;
    let magnitude = match exp {
        // Zero or subnormal: frac * 2^-24 is exact in binary32.
        0 => ((frac as f32) * f32::from_bits(0x3380_0000)).to_bits(),
        0x1F if frac == 0 => 0x7F80_0000,
        0x1F => 0x7FC0_0000,
        _ => ((exp + 112) << 23) | (frac << 13),
    };
    f32::from_bits(sign | magnitude)
}

/// Round `x` to the nearest binary16, ties to even.
///
/// Magnitudes at or above 65520 become infinite; magnitudes at or below
/// 2^-25 become a signed zero. NaN maps to the canonical quiet NaN.
pub fn round_to_half(x: f64) -> Half {
    if x.is_nan() {
        return Half::NAN;
    }
    let sign: u16 = if x.is_sign_negative() { SIGN_MASK } else { 0 };
    let a = x.abs();
    if a >= 65520.0 {
        return Half(sign | EXP_MASK);
    }
    if a < 6.103515625e-5 {
        // Subnormal range: the grid is multiples of 2^-24. Scaling by a power
        // of two is exact, and 1024 lands on the smallest normal encoding.
        let m = (a * 16_777_216.0).round_ties_even() as u16;
        return Half(sign | m);
    }
    // a in [2^-14, 65520): exponent from the binary64 encoding.
    let e = ((a.to_bits() >> 52) as i32) - 1023;
    let scaled = a * f64::from_bits(((1023 + 10 - e) as u64) << 52);
    let m = scaled.round_ties_even() as u16; // in [1024, 2048]
                                             // A carry out of the fraction bumps the exponent, which is exactly right.
    Half(sign | ((((e + 15) as u16) << 10) + (m - 1024)))
}

const HALF_MIN_NORMAL_F32: f32 = 6.103515625e-5;

/// Round a binary32 value onto the binary16 grid and return it as binary32.
///
/// Bit-identical to `round_to_half(x as f64).to_f32()` for every input,
/// including signed zeros, infinities and NaN (canonicalized).
#[inline(always)]
pub fn quantize(x: f32) -> f32 {
    let a = x.abs();
    // Normal binary16 range: drop 13 fraction bits with ties to even.
    let b = a.to_bits();
    let rounded = b.wrapping_add(0x0FFF).wrapping_add((b >> 13) & 1) & !0x1FFF;
    let normal = f32::from_bits(rounded);
    let normal = if normal > 65504.0 { f32::INFINITY } else { normal };
    // Subnormal range: in [0.5, 1) the binary32 ulp is 2^-24, so the addition
    // performs the ties-to-even rounding onto the subnormal grid.
    let sub = (a + 0.5) - 0.5;
    let r = if a < HALF_MIN_NORMAL_F32 { sub } else { normal };
    let r = if x.is_nan() { f32::NAN } else { r };
    r.copysign(x)
}

/// All finite binary16 values in ascending order.
///
/// With `dedupe_signed_zero` the `-0` pattern is dropped, giving 63487
/// values; otherwise all 63488 finite patterns appear, `-0` directly before
/// `+0`.
pub fn enumerate_finite(dedupe_signed_zero: bool) -> Vec<Half> {
    let mut out = Vec::with_capacity(63488);
    // Negative patterns descend in bits as they ascend in value.
    for bits in (0x8000u16..=0xFBFF).rev() {
        if dedupe_signed_zero && bits == 0x8000 {
            continue;
        }
        out.push(Half(bits));
    }
    out.extend((0x0000u16..=0x7BFF).map(Half));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nearest_by_search(x: f64) -> Half {
        // Brute-force nearest finite value, ties to even fraction.
        let mut best = Half::ZERO;
        let mut best_err = f64::INFINITY;
        for h in enumerate_finite(true) {
            let err = (h.to_f64() - x).abs();
            if err < best_err || (err == best_err && h.0 & 1 == 0) {
                best = h;
                best_err = err;
            }
        }
        best
    }

    #[test]
    fn one_is_exact() {
        let h = round_to_half(1.0);
        assert_eq!(h.to_bits(), 0b0_01111_0000000000);
        assert_eq!(h.to_f32(), 1.0);
    }

    #[test]
    fn point_one_matches_exhaustive_nearest() {
        let expected = nearest_by_search(0.1);
        assert_eq!(expected.to_f64(), 0.0999755859375);
        assert_eq!(round_to_half(0.1).to_bits(), expected.to_bits());
    }

    #[test]
    fn overflow_threshold_ties_to_infinity() {
        assert_eq!(round_to_half(65520.0).to_bits(), Half::INFINITY.to_bits());
        assert_eq!(round_to_half(-65520.0).to_bits(), Half::NEG_INFINITY.to_bits());
        assert_eq!(round_to_half(65519.99).to_bits(), Half::MAX.to_bits());
    }

    #[test]
    fn half_of_least_subnormal_ties_to_zero() {
        assert_eq!(round_to_half(2f64.powi(-25)).to_bits(), 0);
        assert_eq!(round_to_half(-(2f64.powi(-25))).to_bits(), 0x8000);
        assert_eq!(round_to_half(1.5 * 2f64.powi(-24)).to_bits(), 2);
        assert_eq!(round_to_half(2f64.powi(-25) * 1.0001).to_bits(), 1);
    }

    #[test]
    fn nan_is_canonical() {
        assert_eq!(round_to_half(f64::NAN).to_bits(), Half::NAN.to_bits());
        assert!(Half::from_bits(0x7C01).is_nan());
        assert!(quantize(f32::from_bits(0x7F80_0001)).is_nan());
    }

    #[test]
    fn format_constants() {
        assert_eq!(Half::MAX.to_f32(), 65504.0);
        assert_eq!(Half::MIN_POSITIVE_SUBNORMAL.to_f64(), 2f64.powi(-24));
        assert_eq!(Half::MIN_POSITIVE_NORMAL.to_f64(), 2f64.powi(-14));
        assert!((Half::MACHINE_EPSILON.to_f64() - 4.88e-4).abs() < 1e-6);
        assert!((Half::MIN_POSITIVE_SUBNORMAL.to_f64() - 5.96e-8).abs() < 1e-10);
    }

    #[test]
    fn enumeration_counts_and_ends() {
        let deduped = enumerate_finite(true);
        assert_eq!(deduped.len(), 63487);
        assert_eq!(deduped[0].to_f32(), -65504.0);
        assert_eq!(deduped.last().unwrap().to_f32(), 65504.0);
        let all = enumerate_finite(false);
        assert_eq!(all.len(), 63488);
    }

    #[test]
    fn enumeration_is_strictly_increasing_except_signed_zero() {
        let all = enumerate_finite(false);
        let mut zero_pairs = 0;
        for w in all.windows(2) {
            let (a, b) = (w[0].to_f64(), w[1].to_f64());
            if a == b {
                assert_eq!((w[0].to_bits(), w[1].to_bits()), (0x8000, 0x0000));
                zero_pairs += 1;
            } else {
                assert!(a < b);
            }
        }
        assert_eq!(zero_pairs, 1);
    }

    #[test]
    fn upcast_round_trip_is_identity_exhaustively() {
        for h in enumerate_finite(false) {
            assert_eq!(round_to_half(h.to_f64()).to_bits(), h.to_bits());
            assert_eq!(Half::from_f32(h.to_f32()).to_bits(), h.to_bits());
        }
    }

    #[test]
    fn decode_matches_reference_for_every_pattern() {
        for bits in 0..=u16::MAX {
            let ours = Half::from_bits(bits).to_f32();
            let theirs = half::f16::from_bits(bits).to_f32();
            if theirs.is_nan() {
                assert!(ours.is_nan());
            } else {
                assert_eq!(ours.to_bits(), theirs.to_bits(), "pattern {bits:#06x}");
            }
        }
    }

    fn assert_quantize_matches(x: f32) {
        let want = round_to_half(x as f64).to_f32();
        let got = quantize(x);
        if want.is_nan() {
            assert!(got.is_nan());
        } else {
            assert_eq!(got.to_bits(), want.to_bits(), "x = {x:e} ({:#010x})", x.to_bits());
        }
    }

    #[test]
    fn quantize_agrees_with_round_to_half_around_every_midpoint() {
        let all = enumerate_finite(false);
        for pair in all.windows(2) {
            let lo = pair[0].to_f32();
            let mid = (lo + pair[1].to_f32()) / 2.0;
            for center in [lo, mid] {
                let c = center.to_bits();
                for d in 0..3u32 {
                    assert_quantize_matches(f32::from_bits(c.wrapping_add(d)));
                    assert_quantize_matches(f32::from_bits(c.wrapping_sub(d)));
                }
            }
        }
        for x in [65504.0f32, 65519.0, 65520.0, 65536.0, 1e9, f32::INFINITY, f32::NEG_INFINITY] {
            assert_quantize_matches(x);
            assert_quantize_matches(-x);
        }
    }

    #[test]
    fn quantize_agrees_with_round_to_half_on_strided_sweep() {
        let mut bits = 0u32;
        loop {
            assert_quantize_matches(f32::from_bits(bits));
            match bits.checked_add(997) {
                Some(b) => bits = b,
                None => break,
            }
        }
    }

    #[test]
    fn rounding_is_monotone_on_a_dense_sample() {
        let mut prev = f64::NEG_INFINITY;
        let mut prev_h = Half::NEG_INFINITY;
        let mut x = -70000.0f64;
        while x < 70000.0 {
            let h = round_to_half(x);
            assert!(x >= prev);
            assert!(h.to_f64() >= prev_h.to_f64());
            prev = x;
            prev_h = h;
            x += 0.37 + x.abs() * 1e-3;
        }
    }
}
