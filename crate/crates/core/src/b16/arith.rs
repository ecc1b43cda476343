use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{round_to_half, Half, SIGN_MASK};

/// Elementary operations with a correctly rounded binary16 contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HalfOp {
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
    Exp,
    Log,
    Neg,
    Abs,
    Max,
    Min,
    /// Three-way comparison, encoded as -1, 0 or +1 (NaN if unordered).
    Compare,
}

impl HalfOp {
    pub const ALL: [HalfOp; 12] = [
        HalfOp::Add,
        HalfOp::Sub,
        HalfOp::Mul,
        HalfOp::Div,
        HalfOp::Sqrt,
        HalfOp::Exp,
        HalfOp::Log,
        HalfOp::Neg,
        HalfOp::Abs,
        HalfOp::Max,
        HalfOp::Min,
        HalfOp::Compare,
    ];

    pub fn is_binary(self) -> bool {
        matches!(
            self,
            HalfOp::Add | HalfOp::Sub | HalfOp::Mul | HalfOp::Div | HalfOp::Max | HalfOp::Min | HalfOp::Compare
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            HalfOp::Add => "add",
            HalfOp::Sub => "sub",
            HalfOp::Mul => "mul",
            HalfOp::Div => "div",
            HalfOp::Sqrt => "sqrt",
            HalfOp::Exp => "exp",
            HalfOp::Log => "log",
            HalfOp::Neg => "neg",
            HalfOp::Abs => "abs",
            HalfOp::Max => "max",
            HalfOp::Min => "min",
            HalfOp::Compare => "compare",
        }
    }
}

/// Apply `op` to `a` (and `b` for binary ops). Unary ops ignore `b`.
pub fn half_arith(op: HalfOp, a: Half, b: Option<Half>) -> Half {
    let rhs = || b.unwrap_or(Half::NAN);
    match op {
        HalfOp::Add => a + rhs(),
        HalfOp::Sub => a - rhs(),
        HalfOp::Mul => a * rhs(),
        HalfOp::Div => a / rhs(),
        HalfOp::Sqrt => a.sqrt(),
        HalfOp::Exp => a.exp(),
        HalfOp::Log => a.ln(),
        HalfOp::Neg => -a,
        HalfOp::Abs => a.abs(),
        HalfOp::Max => a.max(rhs()),
        HalfOp::Min => a.min(rhs()),
        HalfOp::Compare => match a.partial_cmp(&rhs()) {
            Some(Ordering::Less) => Half::from_bits(0xBC00),
            Some(Ordering::Equal) => Half::ZERO,
            Some(Ordering::Greater) => Half::ONE,
            None => Half::NAN,
        },
    }
}

// Sums, differences and products of two binary16 values are exact in binary64
// (at most 40 significant bits). Quotients and square roots are correctly
// rounded in binary64 first; with 53 >= 2*11 + 2 bits the second rounding to
// binary16 cannot differ from a single rounding of the exact result.
impl Half {
    #[inline]
    pub fn sqrt(self) -> Half {
        round_to_half(self.to_f64().sqrt())
    }

    /// e^x, rounded from the binary64 library result.
    #[inline]
    pub fn exp(self) -> Half {
        round_to_half(self.to_f64().exp())
    }

    /// Natural logarithm, rounded from the binary64 library result.
    #[inline]
    pub fn ln(self) -> Half {
        round_to_half(self.to_f64().ln())
    }

    #[inline]
    pub fn abs(self) -> Half {
        if self.is_nan() {
            return Half::NAN;
        }
        Half::from_bits(self.to_bits() & !SIGN_MASK)
    }

    /// Maximum; NaN in either operand propagates. `max(-0, +0) = +0`.
    pub fn max(self, other: Half) -> Half {
        if self.is_nan() || other.is_nan() {
            return Half::NAN;
        }
        match self.partial_cmp(&other) {
            Some(Ordering::Greater) => self,
            Some(Ordering::Less) => other,
            _ if self.is_sign_negative() => other,
            _ => self,
        }
    }

    /// Minimum; NaN in either operand propagates. `min(-0, +0) = -0`.
    pub fn min(self, other: Half) -> Half {
        if self.is_nan() || other.is_nan() {
            return Half::NAN;
        }
        match self.partial_cmp(&other) {
            Some(Ordering::Less) => self,
            Some(Ordering::Greater) => other,
            _ if self.is_sign_negative() => self,
            _ => other,
        }
    }
}

impl Neg for Half {
    type Output = Half;
    #[inline]
    fn neg(self) -> Half {
        if self.is_nan() {
            return Half::NAN;
        }
        Half::from_bits(self.to_bits() ^ SIGN_MASK)
    }
}

macro_rules! rounded_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait for Half {
            type Output = Half;
            #[inline]
            fn $method(self, rhs: Half) -> Half {
                round_to_half(self.to_f64() $op rhs.to_f64())
            }
        }
    };
}

rounded_binop!(Add, add, +);
rounded_binop!(Sub, sub, -);
rounded_binop!(Mul, mul, *);
rounded_binop!(Div, div, /);
