//! Scalar abstraction shared by the embedding index and the metric code.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable for embedding storage and metric arithmetic.
///
/// Implemented for `f32` and `f64`. The byte codec is little-endian and is
/// what the persisted index format relies on.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Width in bytes of one encoded value.
    const WIDTH: usize;
    /// Tag written into file headers so a reader can reject a width mismatch.
    const TAG: u8;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_count(n: u64) -> Self {
        Self::from_u64(n).unwrap_or_else(Self::nan)
    }
}

impl Scalar for f32 {
    const WIDTH: usize = 4;
    const TAG: u8 = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 4];
        buf.copy_from_slice(&bytes[..4]);
        f32::from_le_bytes(buf)
    }
}

impl Scalar for f64 {
    const WIDTH: usize = 8;
    const TAG: u8 = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(buf)
    }
}

/// Ratio with the zero-denominator convention used throughout the harness.
pub fn ratio_or_zero<S: Scalar>(num: u64, den: u64) -> S {
    if den == 0 {
        S::zero()
    } else {
        S::from_count(num) / S::from_count(den)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codec_round_trips() {
        let mut buf = Vec::new();
        1.25f32.write_le(&mut buf);
        (-3.5f64).write_le(&mut buf);
        assert_eq!(buf.len(), 12);
        assert_eq!(f32::read_le(&buf[..4]), 1.25);
        assert_eq!(f64::read_le(&buf[4..]), -3.5);
    }

    #[test]
    fn zero_denominator() {
        assert_eq!(ratio_or_zero::<f64>(3, 0), 0.0);
        assert_eq!(ratio_or_zero::<f32>(1, 4), 0.25);
    }
}
