//! Element-type abstraction.
//!
//! The whole stack is generic over [`Scalar`], implemented for `f32` and
//! `f64`. Gradient checks and determinism tests run at 64-bit; training
//! defaults to 32-bit.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Floating-point element type for tensors.
pub trait Scalar: Float + Sum + Default + Debug + Display + Send + Sync + 'static {
    /// Bytes per element as stored in checkpoints (4 or 8).
    const WIDTH: u8;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Appends the little-endian encoding of `self` to `out`.
    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one element from the first `WIDTH` bytes of `bytes`.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const WIDTH: u8 = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("short buffer"))
    }
}

impl Scalar for f64 {
    const WIDTH: u8 = 8;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("short buffer"))
    }
}
