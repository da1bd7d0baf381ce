use std::sync::OnceLock;

use crate::error::{EccoError, Result};

/// Largest finite E4M3 magnitude.
pub const FP8_MAX: f64 = 448.0;

const NAN_MAGNITUDE: u8 = 0x7f;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundingMode {
    NearestEven,
    TowardZero,
    AwayFromZero,
}

/// An 8-bit E4M3 code: 1 sign bit, 4 exponent bits (bias 7), 3 mantissa bits.
/// `0x7f`/`0xff` are NaN; there are no infinities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
pub struct Fp8Code(pub u8);

impl Fp8Code {
    pub const ZERO: Fp8Code = Fp8Code(0);

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn is_nan(self) -> bool {
        self.0 & 0x7f == NAN_MAGNITUDE
    }

    pub fn is_negative(self) -> bool {
        self.0 & 0x80 != 0
    }

    /// Decoded value; NaN codes are rejected.
    pub fn to_f64(self) -> Result<f64> {
        fp8_dequantize(self)
    }
}

fn decode_magnitude(m: u8) -> f64 {
    let exp = (m >> 3) & 0x0f;
    let mant = (m & 0x07) as f64;
    if exp == 0 {
        mant / 8.0 * super::exp2i(-6)
    } else {
        (1.0 + mant / 8.0) * super::exp2i(exp as i32 - 7)
    }
}

/// Finite magnitudes indexed by the low seven code bits, ascending.
fn magnitudes() -> &'static [f64; 127] {
    static TABLE: OnceLock<[f64; 127]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; 127];
        for (m, slot) in t.iter_mut().enumerate() {
            *slot = decode_magnitude(m as u8);
        }
        t
    })
}

pub fn fp8_dequantize(code: Fp8Code) -> Result<f64> {
    if code.is_nan() {
        return Err(EccoError::InvalidFp8(code.0));
    }
    let mag = magnitudes()[(code.0 & 0x7f) as usize];
    Ok(if code.is_negative() { -mag } else { mag })
}

pub fn fp8_quantize(x: f64, mode: RoundingMode) -> Result<Fp8Code> {
    if !x.is_finite() {
        return Err(EccoError::NonFinite);
    }
    let mag = x.abs();
    if mag > FP8_MAX {
        return Err(EccoError::Fp8Overflow(x));
    }
    let table = magnitudes();
    // Index of the largest table entry <= mag.
    let lo = table.partition_point(|&v| v <= mag) - 1;
    let code = if table[lo] == mag {
        lo
    } else {
        let hi = lo + 1;
        match mode {
            RoundingMode::TowardZero => lo,
            RoundingMode::AwayFromZero => hi,
            RoundingMode::NearestEven => {
                let dl = mag - table[lo];
                let dh = table[hi] - mag;
                if dl < dh || (dl == dh && lo % 2 == 0) {
                    lo
                } else {
                    hi
                }
            }
        }
    };
    let sign = if x.is_sign_negative() { 0x80 } else { 0 };
    Ok(Fp8Code(code as u8 | sign))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent E4M3 decoder written from the format definition.
    fn oracle_value(b: u8) -> Option<f64> {
        let s = if b & 0x80 != 0 { -1.0 } else { 1.0 };
        let e = ((b >> 3) & 0xf) as i32;
        let m = (b & 7) as i32;
        if e == 15 && m == 7 {
            return None;
        }
        let v = if e == 0 {
            m as f64 * 2f64.powi(-9)
        } else {
            (8 + m) as f64 * 2f64.powi(e - 10)
        };
        Some(s * v)
    }

    fn oracle_nearest(x: f64) -> f64 {
        let mut best = f64::NAN;
        let mut best_d = f64::INFINITY;
        let mut best_code = 0u8;
        for b in 0..=255u8 {
            if let Some(v) = oracle_value(b) {
                let d = (v - x).abs();
                let even = b & 1 == 0;
                if d < best_d || (d == best_d && even && best_code & 1 == 1) {
                    best = v;
                    best_d = d;
                    best_code = b;
                }
            }
        }
        best
    }

    #[test]
    fn spot_values() {
        let q = |x| fp8_dequantize(fp8_quantize(x, RoundingMode::NearestEven).unwrap()).unwrap();
        assert_eq!(q(448.0), 448.0);
        assert_eq!(q(0.0), 0.0);
        assert_eq!(q(3.3), 3.25);
        assert_eq!(q(3.3), oracle_nearest(3.3));
        assert_eq!(q(1.0), 1.0);
        assert_eq!(q(-0.5), -0.5);
    }

    #[test]
    fn finite_codes_round_trip_exhaustively() {
        let mut finite = 0;
        for b in 0..=255u8 {
            let code = Fp8Code(b);
            match oracle_value(b) {
                None => assert_eq!(fp8_dequantize(code), Err(EccoError::InvalidFp8(b))),
                Some(v) => {
                    finite += 1;
                    assert_eq!(fp8_dequantize(code).unwrap(), v);
                    for mode in [
                        RoundingMode::NearestEven,
                        RoundingMode::TowardZero,
                        RoundingMode::AwayFromZero,
                    ] {
                        let back = fp8_quantize(v, mode).unwrap();
                        assert_eq!(fp8_dequantize(back).unwrap().to_bits(), v.to_bits());
                    }
                }
            }
        }
        assert_eq!(finite, 254);
    }

    #[test]
    fn errors() {
        assert_eq!(
            fp8_quantize(f64::NAN, RoundingMode::NearestEven),
            Err(EccoError::NonFinite)
        );
        assert_eq!(
            fp8_quantize(f64::NEG_INFINITY, RoundingMode::NearestEven),
            Err(EccoError::NonFinite)
        );
        assert!(matches!(
            fp8_quantize(448.5, RoundingMode::TowardZero),
            Err(EccoError::Fp8Overflow(_))
        ));
    }

    #[test]
    fn directed_modes_bracket_the_input() {
        let x = 3.3;
        let down = fp8_dequantize(fp8_quantize(x, RoundingMode::TowardZero).unwrap()).unwrap();
        let up = fp8_dequantize(fp8_quantize(x, RoundingMode::AwayFromZero).unwrap()).unwrap();
        assert_eq!((down, up), (3.25, 3.5));
        let down = fp8_dequantize(fp8_quantize(-x, RoundingMode::TowardZero).unwrap()).unwrap();
        let up = fp8_dequantize(fp8_quantize(-x, RoundingMode::AwayFromZero).unwrap()).unwrap();
        assert_eq!((down, up), (-3.25, -3.5));
        // Below the smallest subnormal.
        let tiny = fp8_quantize(1e-5, RoundingMode::AwayFromZero).unwrap();
        assert_eq!(fp8_dequantize(tiny).unwrap(), 2f64.powi(-9));
    }

    proptest! {
        #[test]
        fn nearest_matches_enumeration(x in -448.0f64..=448.0) {
            let got = fp8_dequantize(fp8_quantize(x, RoundingMode::NearestEven).unwrap()).unwrap();
            prop_assert_eq!(got.abs(), oracle_nearest(x).abs());
            prop_assert!(got == 0.0 || got.signum() == x.signum());
        }

        #[test]
        fn nearest_within_half_spacing(x in -448.0f64..=448.0) {
            let got = fp8_dequantize(fp8_quantize(x, RoundingMode::NearestEven).unwrap()).unwrap();
            let lo = fp8_dequantize(fp8_quantize(x, RoundingMode::TowardZero).unwrap()).unwrap();
            let hi = fp8_dequantize(fp8_quantize(x, RoundingMode::AwayFromZero).unwrap()).unwrap();
            prop_assert!((got - x).abs() <= (hi - lo).abs() / 2.0);
            prop_assert!(lo.abs() <= x.abs() && x.abs() <= hi.abs());
        }
    }
}
