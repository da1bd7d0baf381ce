//! 2x activation codec: 64 values per 64-byte block, 7-bit signed codes with
//! the fp16 scale and zero point spread one bit per byte.
//!
//! Byte `k` holds `q_k` in bits 0..7 and metadata bit `m_k` in bit 7. Bits
//! `m_0..m_16` are the scale's fp16 pattern LSB first, `m_16..m_32` the zero
//! point's, and `m_32..m_64` are reserved (zero).

use half::f16;
use rayon::prelude::*;

use crate::error::{EccoError, Result};
use crate::tensor::{assemble_groups, partition_groups_with, TensorF16, GROUP_SIZE_2X};

pub const BLOCK_BYTES: usize = 64;
pub const Q_MAX: i8 = 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CompressedBlock2x(pub [u8; BLOCK_BYTES]);

/// Uniform quantization of one group: `v ≈ s * q + z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quant2x {
    pub s: f16,
    pub z: f16,
    pub q: [i8; GROUP_SIZE_2X],
}

impl Quant2x {
    pub fn dequantize(&self) -> Vec<f16> {
        let (s, z) = (self.s.to_f64(), self.z.to_f64());
        self.q.iter().map(|&q| f16::from_f64(s * q as f64 + z)).collect()
    }
}

pub fn quantize_group64(values: &[f16]) -> Result<Quant2x> {
    if values.len() != GROUP_SIZE_2X {
        return Err(EccoError::InvalidConfig(format!("2x groups hold 64 values, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EccoError::NonFinite);
    }
    let vals: Vec<f64> = values.iter().map(|v| v.to_f64()).collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let z = f16::from_f64((max + min) / 2.0);
    let mut s = f16::from_f64((max - min) / (2.0 * Q_MAX as f64));
    if s.to_f64() <= 0.0 {
        // Constant (or nearly constant) group: smallest positive fp16.
        s = f16::from_bits(1);
    }
    let (sf, zf) = (s.to_f64(), z.to_f64());
    let mut q = [0i8; GROUP_SIZE_2X];
    for (out, v) in q.iter_mut().zip(&vals) {
        *out = ((v - zf) / sf).round_ties_even().clamp(-(Q_MAX as f64), Q_MAX as f64) as i8;
    }
    Ok(Quant2x { s, z, q })
}

pub fn pack_block2x(quant: &Quant2x) -> CompressedBlock2x {
    let (s, z) = (quant.s.to_bits(), quant.z.to_bits());
    let mut bytes = [0u8; BLOCK_BYTES];
    for (k, b) in bytes.iter_mut().enumerate() {
        let meta = match k {
            0..16 => (s >> k) & 1,
            16..32 => (z >> (k - 16)) & 1,
            _ => 0,
        } as u8;
        *b = (quant.q[k] as u8 & 0x7f) | (meta << 7);
    }
    CompressedBlock2x(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unpacked2x {
    pub quant: Quant2x,
    /// Some reserved metadata bit was set.
    pub reserved_nonzero: bool,
}

pub fn unpack_block2x(block: &CompressedBlock2x) -> Unpacked2x {
    let mut s = 0u16;
    let mut z = 0u16;
    let mut q = [0i8; GROUP_SIZE_2X];
    let mut reserved = false;
    for (k, &b) in block.0.iter().enumerate() {
        // Sign-extend the low seven bits.
        q[k] = ((b << 1) as i8) >> 1;
        let m = (b >> 7) as u16;
        match k {
            0..16 => s |= m << k,
            16..32 => z |= m << (k - 16),
            _ => reserved |= m != 0,
        }
    }
    Unpacked2x {
        quant: Quant2x {
            s: f16::from_bits(s),
            z: f16::from_bits(z),
            q,
        },
        reserved_nonzero: reserved,
    }
}

pub fn encode_block2x(values: &[f16]) -> Result<CompressedBlock2x> {
    Ok(pack_block2x(&quantize_group64(values)?))
}

pub fn decode_block2x(block: &CompressedBlock2x) -> Vec<f16> {
    unpack_block2x(block).quant.dequantize()
}

pub fn compress_tensor_2x(t: &TensorF16) -> Result<Vec<CompressedBlock2x>> {
    let groups = partition_groups_with(t, GROUP_SIZE_2X)?;
    groups.par_iter().map(|g| encode_block2x(&g.values)).collect()
}

/// Decodes every block; the flag reports whether any reserved bit was set.
pub fn decompress_tensor_2x(blocks: &[CompressedBlock2x], rows: usize, cols: usize) -> Result<(TensorF16, bool)> {
    let unpacked: Vec<Unpacked2x> = blocks.par_iter().map(unpack_block2x).collect();
    let reserved = unpacked.iter().any(|u| u.reserved_nonzero);
    let groups: Vec<Vec<f16>> = unpacked.iter().map(|u| u.quant.dequantize()).collect();
    Ok((assemble_groups(rows, cols, &groups)?, reserved))
}
