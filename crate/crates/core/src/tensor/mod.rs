//! Precision-tagged dense tensors and deterministic kernels.
//!
//! Storage width follows the tag: `Pure16` and `Mixed` tensors hold
//! [`Half`] values, `Pure32` tensors hold `f32`. Kernels work on binary32
//! carriers. Under `Pure16` every elementary operation is rounded onto the
//! binary16 grid before the next one sees it; under `Pure32` and `Mixed` the
//! kernel computes in binary32 and only the stored result is narrowed.

mod arith;
pub(crate) mod kernels;

pub use arith::Arith;
pub use kernels::{
    conv2d, conv_output_extent, im2col, map_elementwise, matmul, reduce_sum, transpose, zip_elementwise, Conv2dParams,
};

use std::borrow::Cow;
use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::b16::Half;
use crate::error::{Error, Result};

/// Floating-point contract a tensor (and everything computed from it) obeys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Every stored value and every elementary operation at binary16.
    Pure16,
    /// Everything at binary32.
    Pure32,
    /// binary16 storage for activations and gradients, binary32 inside
    /// kernels, binary32 master weights in the optimizer.
    Mixed,
}

impl Precision {
    pub const ALL: [Precision; 3] = [Precision::Pure16, Precision::Pure32, Precision::Mixed];

    /// Whether tensors with this tag store binary16.
    pub fn stores_half(self) -> bool {
        !matches!(self, Precision::Pure32)
    }

    /// Arithmetic used inside kernels.
    pub fn arith(self) -> Arith {
        Arith::new(matches!(self, Precision::Pure16))
    }

    /// Unit roundoff of the storage format (2^-11 or 2^-24).
    pub fn machine_epsilon(self) -> f64 {
        if self.stores_half() {
            2f64.powi(-11)
        } else {
            2f64.powi(-24)
        }
    }

    /// Bytes per stored scalar.
    pub fn scalar_width(self) -> usize {
        if self.stores_half() {
            2
        } else {
            4
        }
    }

    pub fn tag_byte(self) -> u8 {
        match self {
            Precision::Pure16 => 16,
            Precision::Pure32 => 32,
            Precision::Mixed => 1,
        }
    }

    pub fn from_tag_byte(b: u8) -> Option<Precision> {
        match b {
            16 => Some(Precision::Pure16),
            32 => Some(Precision::Pure32),
            1 => Some(Precision::Mixed),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Pure16 => "pure16",
            Precision::Pure32 => "pure32",
            Precision::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Precision> {
        match s.to_ascii_lowercase().as_str() {
            "pure16" | "16" | "fp16" => Ok(Precision::Pure16),
            "pure32" | "32" | "fp32" => Ok(Precision::Pure32),
            "mixed" => Ok(Precision::Mixed),
            other => Err(Error::Config(format!("unknown precision {other:?}"))),
        }
    }
}

/// Tallies of non-finite results and flushes to zero for one kernel call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumericEvents {
    /// Output elements that are +-infinity.
    pub overflow_count: u64,
    /// Multiplicative or transcendental steps whose nonzero exact result
    /// rounded to zero.
    pub underflow_to_zero_count: u64,
    /// Output elements that are NaN.
    pub nan_count: u64,
}

impl NumericEvents {
    pub fn is_clean(&self) -> bool {
        *self == NumericEvents::default()
    }

    pub(crate) fn scan(values: &[f32]) -> NumericEvents {
        let mut ev = NumericEvents::default();
        for v in values {
            if v.is_nan() {
                ev.nan_count += 1;
            } else if v.is_infinite() {
                ev.overflow_count += 1;
            }
        }
        ev
    }

    pub(crate) fn with_underflows(mut self, n: u64) -> NumericEvents {
        self.underflow_to_zero_count += n;
        self
    }
}

impl Add for NumericEvents {
    type Output = NumericEvents;
    fn add(self, o: NumericEvents) -> NumericEvents {
        NumericEvents {
            overflow_count: self.overflow_count + o.overflow_count,
            underflow_to_zero_count: self.underflow_to_zero_count + o.underflow_to_zero_count,
            nan_count: self.nan_count + o.nan_count,
        }
    }
}

impl AddAssign for NumericEvents {
    fn add_assign(&mut self, o: NumericEvents) {
        *self = *self + o;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Buffer {
    Half(Vec<Half>),
    Single(Vec<f32>),
}

impl Buffer {
    pub fn len(&self) -> usize {
        match self {
            Buffer::Half(v) => v.len(),
            Buffer::Single(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense row-major tensor tagged with a [`Precision`].
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Buffer,
    precision: Precision,
}

impl PartialEq for Tensor {
    /// Bit-exact comparison of shape, tag and payload.
    fn eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.precision == other.precision
            && match (&self.data, &other.data) {
                (Buffer::Half(a), Buffer::Half(b)) => a.iter().map(|h| h.to_bits()).eq(b.iter().map(|h| h.to_bits())),
                (Buffer::Single(a), Buffer::Single(b)) => {
                    a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits()))
                }
                _ => false,
            }
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::contract(format!("zero extent in shape {shape:?}")));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::contract(format!("shape {shape:?} needs {n} elements, got {len}")));
    }
    Ok(())
}

impl Tensor {
    /// Build from binary32 values, rounding to the tag's storage width.
    pub fn from_f32(shape: &[usize], values: &[f32], precision: Precision) -> Result<Tensor> {
        check_shape(shape, values.len())?;
        Ok(Tensor::from_carriers(shape.to_vec(), values.to_vec(), precision))
    }

    pub fn from_half(shape: &[usize], values: Vec<Half>, precision: Precision) -> Result<Tensor> {
        check_shape(shape, values.len())?;
        let data = if precision.stores_half() {
            Buffer::Half(values)
        } else {
            Buffer::Single(values.iter().map(|h| h.to_f32()).collect())
        };
        Ok(Tensor { shape: shape.to_vec(), data, precision })
    }

    pub fn zeros(shape: &[usize], precision: Precision) -> Tensor {
        Tensor::full(shape, 0.0, precision)
    }

    pub fn full(shape: &[usize], value: f32, precision: Precision) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_carriers(shape.to_vec(), vec![value; n], precision)
    }

    /// Wrap kernel output. Values are narrowed when the tag stores binary16.
    pub(crate) fn from_carriers(shape: Vec<usize>, values: Vec<f32>, precision: Precision) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let data = if precision.stores_half() {
            Buffer::Half(values.into_iter().map(Half::from_f32).collect())
        } else {
            Buffer::Single(values)
        };
        Tensor { shape, data, precision }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn buffer(&self) -> &Buffer {
        &self.data
    }

    /// Values as binary32 carriers (exact for both storage widths).
    pub fn values(&self) -> Cow<'_, [f32]> {
        match &self.data {
            Buffer::Single(v) => Cow::Borrowed(v),
            Buffer::Half(v) => Cow::Owned(v.iter().map(|h| h.to_f32()).collect()),
        }
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.values().into_owned()
    }

    /// Element at a multi-index (row-major).
    pub fn get(&self, index: &[usize]) -> Result<f32> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, d)| i >= d) {
            return Err(Error::contract(format!("index {index:?} out of bounds for {:?}", self.shape)));
        }
        let offset = index.iter().zip(&self.shape).fold(0, |acc, (i, d)| acc * d + i);
        Ok(match &self.data {
            Buffer::Single(v) => v[offset],
            Buffer::Half(v) => v[offset].to_f32(),
        })
    }

    /// Same payload under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape, self.len())?;
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone(), precision: self.precision })
    }

    /// Re-tag, rounding when narrowing and upcasting exactly when widening.
    pub fn cast(&self, precision: Precision) -> Tensor {
        if precision.stores_half() == self.precision.stores_half() {
            return Tensor { shape: self.shape.clone(), data: self.data.clone(), precision };
        }
        Tensor::from_carriers(self.shape.clone(), self.to_vec(), precision)
    }

    pub fn events(&self) -> NumericEvents {
        NumericEvents::scan(&self.values())
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn storage_width_follows_tag() {
        let t = Tensor::from_f32(&[2], &[0.1, 1.0], Precision::Pure16).unwrap();
        assert!(matches!(t.buffer(), Buffer::Half(_)));
        assert_eq!(t.to_vec()[0], 0.0999755859375);
        let t = Tensor::from_f32(&[2], &[0.1, 1.0], Precision::Pure32).unwrap();
        assert!(matches!(t.buffer(), Buffer::Single(_)));
        let t = Tensor::from_f32(&[2], &[0.1, 1.0], Precision::Mixed).unwrap();
        assert!(matches!(t.buffer(), Buffer::Half(_)));
    }

    #[test]
    fn row_major_offsets() {
        let t = Tensor::from_f32(&[2, 3], &[0., 1., 2., 3., 4., 5.], Precision::Pure32).unwrap();
        assert_eq!(t.get(&[1, 0]).unwrap(), 3.0);
        assert_eq!(t.get(&[0, 2]).unwrap(), 2.0);
        assert!(t.get(&[2, 0]).is_err());
    }

    #[test]
    fn shape_must_match_buffer() {
        assert!(Tensor::from_f32(&[2, 2], &[1.0; 3], Precision::Pure32).is_err());
        assert!(Tensor::from_f32(&[0], &[], Precision::Pure32).is_err());
    }

    #[test]
    fn cast_round_trip_on_half_values_is_exact() {
        let t = Tensor::from_f32(&[3], &[0.1, -3.5, 65504.0], Precision::Pure16).unwrap();
        assert_eq!(t.cast(Precision::Pure32).cast(Precision::Pure16), t);
    }

    #[test]
    fn event_scan() {
        let ev = NumericEvents::scan(&[1.0, f32::INFINITY, f32::NAN, f32::NEG_INFINITY]);
        assert_eq!(ev.overflow_count, 2);
        assert_eq!(ev.nan_count, 1);
        assert!(NumericEvents::scan(&[0.0, 1.0]).is_clean());
    }
}
