//! Fixed-ratio cache-block compression for fp16 tensors.
//!
//! A tensor is calibrated once into [`TensorMeta`] (shared k-means patterns and
//! per-pattern Huffman codebooks), then every 128-element group is coded into a
//! 64-byte block ([`codec4x`]) that can be decoded sequentially or by the
//! parallel decoder model ([`pardec`]). Activations use the simpler 2x block
//! format in [`codec2x`].

pub mod bits;
pub mod calib;
pub mod codec2x;
pub mod codec4x;
pub mod error;
pub mod format;
pub mod metrics;
pub mod pardec;
pub mod selftest;
pub mod tensor;

#[cfg(test)]
mod testutil;

pub use bits::{fp8_dequantize, fp8_quantize, pot_scale_for, BitStream, Fp8Code, PotScale, RoundingMode};
pub use calib::{
    calibrate, Config, HuffmanCodebook, KMeansPattern, Mode, PatternIndexCoding, PatternLibrary, TensorMeta,
};
pub use codec2x::{CompressedBlock2x, Quant2x};
pub use codec4x::{decode_block_reference, encode_block, CompressedBlock4x, DecoderKind, EncodeLog};
pub use error::{EccoError, Result};
pub use pardec::parallel_decode;
pub use tensor::{partition_groups, Group, TensorF16, GROUP_SIZE_2X, GROUP_SIZE_4X};
