use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::b16::{enumerate_finite, Half};
use crate::error::{Error, Result};
use crate::tensor::Arith;

/// Unary functions built from elementary binary16 operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanFunction {
    Identity,
    /// `1 / (1 + exp(-x))`, evaluated neg, exp, add, divide.
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Neg,
    Abs,
}

impl ScanFunction {
    pub const ALL: [ScanFunction; 7] = [
        ScanFunction::Identity,
        ScanFunction::Sigmoid,
        ScanFunction::Exp,
        ScanFunction::Log,
        ScanFunction::Sqrt,
        ScanFunction::Neg,
        ScanFunction::Abs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanFunction::Identity => "identity",
            ScanFunction::Sigmoid => "sigmoid",
            ScanFunction::Exp => "exp",
            ScanFunction::Log => "log",
            ScanFunction::Sqrt => "sqrt",
            ScanFunction::Neg => "neg",
            ScanFunction::Abs => "abs",
        }
    }

    /// Step-by-step binary16 evaluation.
    pub fn eval_half(self, x: Half) -> Half {
        match self {
            ScanFunction::Identity => x,
            ScanFunction::Sigmoid => Half::ONE / (Half::ONE + (-x).exp()),
            ScanFunction::Exp => x.exp(),
            ScanFunction::Log => x.ln(),
            ScanFunction::Sqrt => x.sqrt(),
            ScanFunction::Neg => -x,
            ScanFunction::Abs => x.abs(),
        }
    }

    /// The same evaluation order at binary32.
    pub fn eval_single(self, y: f32) -> f32 {
        let a = Arith::SINGLE;
        match self {
            ScanFunction::Identity => y,
            ScanFunction::Sigmoid => a.div(1.0, a.add(1.0, a.exp(-y))),
            ScanFunction::Exp => a.exp(y),
            ScanFunction::Log => a.ln(y),
            ScanFunction::Sqrt => a.sqrt(y),
            ScanFunction::Neg => -y,
            ScanFunction::Abs => y.abs(),
        }
    }
}

impl fmt::Display for ScanFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScanFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<ScanFunction> {
        ScanFunction::ALL
            .into_iter()
            .find(|f| f.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown scan function {s:?}")))
    }
}

/// Error statistics of a binary16 evaluation against binary32 on the same inputs.
///
/// Relative error is `|a - b| / |b|` with `b` the binary32 result. Entries
/// with `b == 0` are counted in `zero_reference_count`; they contribute zero
/// relative error when `a == 0` too and are excluded from the relative means
/// otherwise. Entries where either result is not finite are excluded from all
/// error means and tallied instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub function: ScanFunction,
    /// Inputs evaluated.
    pub count: usize,
    /// Inputs whose two results are both finite.
    pub compared: usize,
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
    /// Mean over compared entries, zero-reference agreements counting as 0.
    pub mean_rel_error: f64,
    /// Mean over compared entries with a nonzero reference only.
    pub mean_rel_error_nonzero_reference: f64,
    pub max_rel_error: f64,
    pub zero_reference_count: usize,
    /// binary16 results that are infinite.
    pub overflow_count: usize,
    /// binary16 results that are zero where the binary32 result is not.
    pub underflow_count: usize,
    /// binary16 results that are NaN.
    pub nan_count: usize,
}

struct Entry {
    abs: f64,
    rel: Option<f64>,
    comparable: bool,
    zero_ref: bool,
    overflow: bool,
    underflow: bool,
    nan: bool,
}

fn compare(f: ScanFunction, x: Half) -> Entry {
    let a = f.eval_half(x).to_f64();
    let b = f.eval_single(x.to_f32()) as f64;
    let comparable = a.is_finite() && b.is_finite();
    let abs = if comparable { (a - b).abs() } else { 0.0 };
    let rel = match (comparable, b == 0.0) {
        (false, _) => None,
        (true, false) => Some(abs / b.abs()),
        (true, true) => (a == 0.0).then_some(0.0),
    };
    Entry {
        abs,
        rel,
        comparable,
        zero_ref: b == 0.0,
        overflow: a.is_infinite(),
        underflow: a == 0.0 && b != 0.0 && !b.is_nan(),
        nan: a.is_nan(),
    }
}

/// Evaluate `f` on every finite binary16 value (signed zero deduplicated
/// when `dedupe_signed_zero`) at binary16 and at binary32.
pub fn scan_function(f: ScanFunction, dedupe_signed_zero: bool) -> ScanReport {
    let inputs = enumerate_finite(dedupe_signed_zero);
    // Per-input results are gathered in index order, then reduced sequentially.
    let entries: Vec<Entry> = inputs.par_iter().map(|&x| compare(f, x)).collect();
    let mut r = ScanReport {
        function: f,
        count: entries.len(),
        compared: 0,
        mean_abs_error: 0.0,
        max_abs_error: 0.0,
        mean_rel_error: 0.0,
        mean_rel_error_nonzero_reference: 0.0,
        max_rel_error: 0.0,
        zero_reference_count: 0,
        overflow_count: 0,
        underflow_count: 0,
        nan_count: 0,
    };
    let (mut abs_sum, mut rel_sum, mut rel_n, mut nz_sum, mut nz_n) = (0.0, 0.0, 0usize, 0.0, 0usize);
    for e in &entries {
        r.zero_reference_count += e.zero_ref as usize;
        r.overflow_count += e.overflow as usize;
        r.underflow_count += e.underflow as usize;
        r.nan_count += e.nan as usize;
        if !e.comparable {
            continue;
        }
        r.compared += 1;
        abs_sum += e.abs;
        r.max_abs_error = r.max_abs_error.max(e.abs);
        if let Some(rel) = e.rel {
            rel_sum += rel;
            rel_n += 1;
            r.max_rel_error = r.max_rel_error.max(rel);
            if !e.zero_ref {
                nz_sum += rel;
                nz_n += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    r.mean_abs_error = mean(abs_sum, r.compared);
    r.mean_rel_error = mean(rel_sum, rel_n);
    r.mean_rel_error_nonzero_reference = mean(nz_sum, nz_n);
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_no_error() {
        let r = scan_function(ScanFunction::Identity, true);
        assert_eq!(r.count, 63487);
        assert_eq!((r.mean_abs_error, r.max_abs_error, r.mean_rel_error, r.max_rel_error), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.overflow_count + r.underflow_count + r.nan_count, 0);
        assert_eq!(scan_function(ScanFunction::Identity, false).count, 63488);
    }

    #[test]
    fn exp_overflow_count_matches_threshold_recount() {
        let r = scan_function(ScanFunction::Exp, true);
        // Independent recount: inputs whose binary64 exponential reaches the
        // rounding threshold 65520.
        let expected = enumerate_finite(true).into_iter().filter(|h| h.to_f64().exp() >= 65520.0).count();
        assert_eq!(r.overflow_count, expected);
        assert!(expected > 0);
    }

    #[test]
    fn sigmoid_matches_reference_figures() {
        let r = scan_function(ScanFunction::Sigmoid, true);
        assert_eq!(r.count, 63487);
        assert!((r.mean_rel_error / 4.85e-2 - 1.0).abs() <= 0.10, "{}", r.mean_rel_error);
        assert!((r.mean_abs_error / 7.09e-5 - 1.0).abs() <= 0.10, "{}", r.mean_abs_error);
    }

    #[test]
    fn log_of_negatives_is_nan() {
        let r = scan_function(ScanFunction::Log, true);
        let negatives = enumerate_finite(true).into_iter().filter(|h| h.to_f64() < 0.0).count();
        assert_eq!(r.nan_count, negatives);
    }

    #[test]
    fn names_round_trip() {
        for f in ScanFunction::ALL {
            assert_eq!(f.name().parse::<ScanFunction>().unwrap(), f);
        }
        assert!("tanh".parse::<ScanFunction>().is_err());
    }
}
