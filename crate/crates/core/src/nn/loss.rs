use serde::{Deserialize, Serialize};

use super::{Mode, CE_CLAMP};
use crate::error::{Error, Result};
use crate::tensor::{Arith, NumericEvents, Precision, Tensor};

/// One probability vector carried at binary32 (exact for binary16 values).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    pub p: Vec<f32>,
    pub precision: Precision,
}

impl ProbVector {
    pub fn new(p: Vec<f32>, precision: Precision) -> ProbVector {
        ProbVector { p, precision }
    }

    /// Split a `[N, classes]` tensor into its rows.
    pub fn rows(t: &Tensor) -> Result<Vec<ProbVector>> {
        let s = t.shape();
        if s.len() != 2 {
            return Err(Error::contract(format!("probability batch must be rank 2, got {s:?}")));
        }
        Ok(t.values().chunks(s[1]).map(|r| ProbVector::new(r.to_vec(), t.precision())).collect())
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Entries in `[0, 1]` and a sum within `N * eps` of one, where `eps`
    /// is the storage format's unit roundoff.
    pub fn is_normalized(&self) -> bool {
        let n = self.p.len() as f64;
        let sum: f64 = self.p.iter().map(|&v| v as f64).sum();
        let tol = n * self.precision.machine_epsilon();
        self.p.iter().all(|&v| (0.0..=1.0).contains(&v)) && (sum - 1.0).abs() <= tol
    }
}

/// Row-wise softmax with max-subtraction. Returns the probabilities and the
/// number of exponentials that flushed to zero.
pub(crate) fn softmax_rows(a: Arith, x: &[f32], classes: usize) -> (Vec<f32>, u64) {
    let mut out = Vec::with_capacity(x.len());
    let mut flushed = 0u64;
    for row in x.chunks(classes) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, |acc, v| a.max(acc, v));
        let start = out.len();
        for &v in row {
            let d = a.sub(v, m);
            let e = a.exp(d);
            flushed += (e == 0.0 && d.is_finite()) as u64;
            out.push(e);
        }
        let s = a.sum(out[start..].iter().copied());
        for e in &mut out[start..] {
            *e = a.div(*e, s);
        }
    }
    (out, flushed)
}

/// Softmax over the last axis of a rank-2 tensor at the tensor's precision.
pub fn softmax(x: &Tensor) -> Result<(Tensor, NumericEvents)> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(Error::contract(format!("softmax needs rank 2, got {s:?}")));
    }
    let mode = Mode::of(x.precision());
    let (mut y, flushed) = softmax_rows(mode.arith, &x.values(), s[1]);
    mode.store(&mut y);
    let t = Tensor::from_f32(s, &y, x.precision())?;
    let ev = t.events().with_underflows(flushed);
    Ok((t, ev))
}

/// Mean over the batch of `-ln(clamp(p_true, 2^-14, 1))` at the tensor's
/// precision: per-row logs, a sequential sum, then one division.
pub fn cross_entropy(p: &Tensor, labels: &[usize]) -> Result<(f32, NumericEvents)> {
    let s = p.shape();
    if s.len() != 2 {
        return Err(Error::contract(format!("cross_entropy needs rank 2, got {s:?}")));
    }
    let (n, classes) = (s[0], s[1]);
    if labels.len() != n {
        return Err(Error::contract(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::contract(format!("label {bad} out of range for {classes} classes")));
    }
    let mode = Mode::of(p.precision());
    let a = mode.arith;
    let v = p.values();
    let terms = labels.iter().enumerate().map(|(i, &l)| {
        let pt = v[i * classes + l];
        let clamped = if pt.is_nan() { pt } else { pt.clamp(CE_CLAMP, 1.0) };
        -a.ln(clamped)
    });
    let total = a.sum(terms);
    let mut loss = [a.div(total, mode.constant(n as f32))];
    mode.store(&mut loss);
    Ok((loss[0], NumericEvents::scan(&loss)))
}
