//! Prediction agreement between precision variants of one classifier, and
//! exhaustive binary16 function scans.
//!
//! For probability vectors `p32` (reference) and `p16`, `delta` is the
//! max-norm of their difference and `gamma` the gap between the two largest
//! entries of `p32`. Whenever `gamma >= 2 * delta` the two argmax predictions
//! must agree; [`lemma_certificate`] enforces this as a hard check.

mod scan;

pub use scan::{scan_function, ScanFunction, ScanReport};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Model, ProbVector};
use crate::tensor::Tensor;

/// Index of the largest entry; ties go to the lowest index.
pub fn pred(p: &[f32]) -> Result<usize> {
    if p.is_empty() {
        return Err(Error::contract("pred of an empty vector"));
    }
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] || (p[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    Ok(best)
}

/// Max-norm distance, computed in binary64 on exact upcasts.
pub fn delta(p32: &ProbVector, p16: &ProbVector) -> Result<f64> {
    if p32.len() != p16.len() {
        return Err(Error::ShapeMismatch { op: "delta", left: vec![p32.len()], right: vec![p16.len()] });
    }
    Ok(p32.p.iter().zip(&p16.p).map(|(&a, &b)| (a as f64 - b as f64).abs()).fold(0.0, f64::max))
}

/// Largest minus second-largest entry (equal maxima give 0).
pub fn gamma(p: &ProbVector) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::contract(format!("gamma needs at least two entries, got {}", p.len())));
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in &p.p {
        let v = v as f64;
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    Ok(first - second)
}

/// Agreement certificate for one input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceRecord {
    pub id: usize,
    pub delta: f64,
    pub gamma: f64,
    pub pred32: usize,
    pub pred16: usize,
    pub agree: bool,
    /// `gamma >= 2 * delta`.
    pub guaranteed: bool,
}

impl ToleranceRecord {
    /// Guaranteed but disagreeing only because `p16` ties the reference
    /// class with a lower-indexed one at exactly `gamma == 2 * delta`.
    pub fn is_boundary_tie(&self) -> bool {
        self.guaranteed && !self.agree
    }
}

/// Build the record for one input and enforce the lemma.
///
/// A guaranteed record whose low-precision vector strictly prefers another
/// class is a [`Error::TheoryViolation`]. At the boundary `gamma == 2*delta`
/// the low-precision vector may tie, and the lowest-index rule can then pick
/// another class; such records are returned with `agree == false` (see
/// [`ToleranceRecord::is_boundary_tie`]).
pub fn lemma_certificate(id: usize, p32: &ProbVector, p16: &ProbVector) -> Result<ToleranceRecord> {
    let d = delta(p32, p16)?;
    let g = gamma(p32)?;
    let pred32 = pred(&p32.p)?;
    let pred16 = pred(&p16.p)?;
    let guaranteed = g >= 2.0 * d;
    let agree = pred32 == pred16;
    if guaranteed && !agree && p16.p[pred32] < p16.p[pred16] {
        return Err(Error::TheoryViolation { id, delta: d, gamma: g, pred32, pred16 });
    }
    Ok(ToleranceRecord { id, delta: d, gamma: g, pred32, pred16, agree, guaranteed })
}

/// Min, max, mean and (population) variance of a sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f64> + Clone) -> Stats {
        let mut n = 0usize;
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for v in values.clone() {
            n += 1;
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        if n == 0 {
            return Stats::default();
        }
        let mean = sum / n as f64;
        let variance = values.into_iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Stats { min, max, mean, variance }
    }
}

/// Aggregate of per-input records between a reference and a low-precision model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceReport {
    pub count: usize,
    pub delta: Stats,
    pub gamma: Stats,
    pub fraction_guaranteed: f64,
    pub fraction_agree: f64,
    /// Guaranteed records that disagree through an exact boundary tie.
    pub boundary_ties: usize,
    /// Accuracies and `|acc16 - acc32|` when labels are supplied.
    pub acc32: Option<f64>,
    pub acc16: Option<f64>,
    pub acc_gap: Option<f64>,
    #[serde(skip)]
    pub records: Vec<ToleranceRecord>,
}

impl ToleranceReport {
    pub fn from_records(records: Vec<ToleranceRecord>) -> ToleranceReport {
        let n = records.len();
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        ToleranceReport {
            count: n,
            delta: Stats::of(records.iter().map(|r| r.delta)),
            gamma: Stats::of(records.iter().map(|r| r.gamma)),
            fraction_guaranteed: frac(records.iter().filter(|r| r.guaranteed).count()),
            fraction_agree: frac(records.iter().filter(|r| r.agree).count()),
            boundary_ties: records.iter().filter(|r| r.is_boundary_tie()).count(),
            acc32: None,
            acc16: None,
            acc_gap: None,
            records,
        }
    }

    /// Write one CSV row per record: id, delta, gamma, pred32, pred16, agree, guaranteed.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "id,delta,gamma,pred32,pred16,agree,guaranteed")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:e},{:e},{},{},{},{}",
                r.id, r.delta, r.gamma, r.pred32, r.pred16, r.agree, r.guaranteed
            )?;
        }
        Ok(())
    }

    /// Write the per-record CSV and a JSON summary next to each other.
    pub fn save(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        std::fs::write(json_path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn same_architecture(a: &Model, b: &Model) -> bool {
    a.input_shape() == b.input_shape() && a.kinds() == b.kinds()
}

/// Evaluate both models on every image and certify each input.
///
/// `images` is `[N, ...input]`; it is cast to each model's tag. Inputs are
/// processed in batches of `batch` in index order.
pub fn tolerance_report(
    model32: &Model,
    model16: &Model,
    images: &Tensor,
    labels: Option<&[usize]>,
    batch: usize,
) -> Result<ToleranceReport> {
    if !same_architecture(model32, model16) {
        return Err(Error::contract("tolerance_report: models do not share an architecture"));
    }
    let n = images.shape()[0];
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::CountMismatch { images: n, labels: l.len() });
        }
    }
    let batch = batch.max(1);
    let per = images.len() / n;
    let values = images.values();
    let mut records = Vec::with_capacity(n);
    let mut correct = (0usize, 0usize);
    for start in (0..n).step_by(batch) {
        let end = (start + batch).min(n);
        let mut shape = images.shape().to_vec();
        shape[0] = end - start;
        let chunk = &values[start * per..end * per];
        let (y32, _) = model32.predict(&Tensor::from_f32(&shape, chunk, model32.precision())?)?;
        let (y16, _) = model16.predict(&Tensor::from_f32(&shape, chunk, model16.precision())?)?;
        for (k, (p32, p16)) in ProbVector::rows(&y32)?.iter().zip(ProbVector::rows(&y16)?.iter()).enumerate() {
            let r = lemma_certificate(start + k, p32, p16)?;
            if let Some(l) = labels {
                correct.0 += (r.pred32 == l[start + k]) as usize;
                correct.1 += (r.pred16 == l[start + k]) as usize;
            }
            records.push(r);
        }
    }
    let mut report = ToleranceReport::from_records(records);
    if labels.is_some() && n > 0 {
        let (a32, a16) = (correct.0 as f64 / n as f64, correct.1 as f64 / n as f64);
        report.acc32 = Some(a32);
        report.acc16 = Some(a16);
        report.acc_gap = Some((a16 - a32).abs());
    }
    Ok(report)
}
