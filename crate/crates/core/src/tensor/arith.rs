use crate::b16::{quantize, round_to_half};

/// Scalar arithmetic on binary32 carriers.
///
/// When `narrow` is set every operation is rounded onto the binary16 grid,
/// which for add/sub/mul/div/sqrt equals the correctly rounded binary16
/// result (binary32 carries 24 >= 2*11 + 2 bits, so the double rounding is
/// innocuous; products of binary16 values are exact). Transcendentals go
/// through binary64 and are rounded once.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arith {
    narrow: bool,
}

impl Arith {
    pub const PURE16: Arith = Arith { narrow: true };
    pub const SINGLE: Arith = Arith { narrow: false };

    pub fn new(narrow: bool) -> Arith {
        Arith { narrow }
    }

    pub fn is_narrow(self) -> bool {
        self.narrow
    }

    /// Round a value into this arithmetic's format.
    #[inline(always)]
    pub fn round(self, x: f32) -> f32 {
        if self.narrow {
            quantize(x)
        } else {
            x
        }
    }

    /// Round a binary64 value into this arithmetic's format.
    #[inline]
    pub fn round_f64(self, x: f64) -> f32 {
        if self.narrow {
            round_to_half(x).to_f32()
        } else {
            x as f32
        }
    }

    #[inline(always)]
    pub fn add(self, a: f32, b: f32) -> f32 {
        self.round(a + b)
    }

    #[inline(always)]
    pub fn sub(self, a: f32, b: f32) -> f32 {
        self.round(a - b)
    }

    #[inline(always)]
    pub fn mul(self, a: f32, b: f32) -> f32 {
        self.round(a * b)
    }

    #[inline(always)]
    pub fn div(self, a: f32, b: f32) -> f32 {
        self.round(a / b)
    }

    #[inline]
    pub fn sqrt(self, a: f32) -> f32 {
        self.round(a.sqrt())
    }

    #[inline]
    pub fn exp(self, a: f32) -> f32 {
        self.round_f64((a as f64).exp())
    }

    #[inline]
    pub fn ln(self, a: f32) -> f32 {
        self.round_f64((a as f64).ln())
    }

    /// Maximum with NaN propagation.
    #[inline]
    pub fn max(self, a: f32, b: f32) -> f32 {
        if a.is_nan() || b.is_nan() {
            f32::NAN
        } else if a >= b {
            a
        } else {
            b
        }
    }

    /// Sequential ascending-index sum starting from +0.
    pub fn sum(self, values: impl IntoIterator<Item = f32>) -> f32 {
        values.into_iter().fold(0.0, |acc, v| self.add(acc, v))
    }
}
