//! binary16 emulation and a small neural-network stack that trains and
//! compares models under pure binary16, pure binary32 and mixed precision.

pub mod analysis;
pub mod b16;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use b16::Half;
pub use error::{Error, Result};
pub use nn::{LayerKind, Model, ProbVector};
pub use tensor::{NumericEvents, Precision, Tensor};
