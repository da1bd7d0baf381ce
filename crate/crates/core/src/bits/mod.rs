//! Numeric primitives shared by every codec: E4M3 FP8 conversion, power-of-two
//! tensor scales and a little-endian bit stream.

mod bitstream;
mod fp8;

pub use bitstream::BitStream;
pub use fp8::{fp8_dequantize, fp8_quantize, Fp8Code, RoundingMode, FP8_MAX};

use crate::error::{EccoError, Result};

/// Exact `2^exp` as an f64, for exponents in the normal range.
pub fn exp2i(exp: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&exp));
    f64::from_bits(((exp + 1023) as u64) << 52)
}

/// Per-tensor power-of-two scale `2^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PotScale {
    pub exponent: i32,
}

impl PotScale {
    pub fn new(exponent: i32) -> Self {
        Self { exponent }
    }

    pub fn value(self) -> f64 {
        exp2i(self.exponent)
    }
}

/// Smallest power of two `s` with `global_absmax / s <= 448`.
pub fn pot_scale_for(global_absmax: f64) -> Result<PotScale> {
    if !global_absmax.is_finite() || global_absmax <= 0.0 {
        return Err(EccoError::InvalidScaleInput(global_absmax));
    }
    let mut exp = (global_absmax / FP8_MAX).log2().ceil() as i32;
    // log2 can be off by one near exact powers; settle against the exact test.
    while global_absmax / exp2i(exp) > FP8_MAX {
        exp += 1;
    }
    while global_absmax / exp2i(exp - 1) <= FP8_MAX {
        exp -= 1;
    }
    Ok(PotScale::new(exp))
}
