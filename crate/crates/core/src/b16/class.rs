use super::{Half, EXP_MASK, FRAC_MASK, SIGN_MASK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FpKind {
    Zero,
    Subnormal,
    Normal,
    Infinite,
    NaN,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FpClass {
    pub kind: FpKind,
    pub sign: Sign,
}

/// Total classification of a bit pattern.
pub fn classify(a: Half) -> FpClass {
    let bits = a.to_bits();
    let sign = if bits & SIGN_MASK != 0 { Sign::Negative } else { Sign::Positive };
    let kind = match (bits & EXP_MASK, bits & FRAC_MASK) {
        (0, 0) => FpKind::Zero,
        (0, _) => FpKind::Subnormal,
        (EXP_MASK, 0) => FpKind::Infinite,
        (EXP_MASK, _) => FpKind::NaN,
        _ => FpKind::Normal,
    };
    FpClass { kind, sign }
}
