//! 4x block codec: one 128-element group per 512-bit block.
//!
//! Layout, with bit `b` at byte `b / 8`, position `b % 8` from the LSB:
//!
//! ```text
//! [0, e)                       Huffman-coded symbols, element order, first code bit lowest
//! [e, tail_base - 15n)         gap: zeros when padded, ones when clipped
//! [tail_base - 15(j+1), ..)    outlier slot j: 7-bit position | 8-bit FP8 value << 7
//! [tail_base, kp_top)          ID_KP: fixed width ceil(log2 S), or a canonical code
//!                              whose first bit is at kp_top - 1, growing downward
//! [504 - hf_bits, 504)         ID_HF, ceil(log2 H) bits
//! [504, 512)                   s_g, signed E4M3 group scale
//! ```
//!
//! The decoder recovers the outlier count as `(tail_base - e) / 15`. A clipped
//! block leaves fewer than 8 gap bits, and filling them with ones keeps any
//! complete codeword from fitting there: with a complete canonical code, an
//! all-ones string shorter than the longest code is never a codeword.

use half::f16;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{fp8_quantize, BitStream, Fp8Code, RoundingMode, FP8_MAX};
use crate::calib::{
    normalize_group, select_pattern, symbol_histogram, HuffmanCodebook, NormalizedGroup,
    PatternIndexCoding, TensorMeta, NUM_SYMBOLS,
};
use crate::error::{EccoError, Result};
use crate::pardec::{map_values, parallel_decode, Outlier};
use crate::tensor::{assemble_groups, partition_groups, Group, TensorF16, GROUP_SIZE_4X};

pub const BLOCK_BITS: usize = 512;
pub const BLOCK_BYTES: usize = 64;
/// First bit of the 8-bit group scale.
pub const SCALE_FIELD: usize = 504;
pub const OUTLIER_BITS: usize = 15;
/// Candidates tracked for outlier padding.
pub const MAX_TRACKED_OUTLIERS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CompressedBlock4x(pub [u8; BLOCK_BYTES]);

impl CompressedBlock4x {
    pub fn bytes(&self) -> &[u8; BLOCK_BYTES] {
        &self.0
    }

    pub fn stream(&self) -> BitStream {
        BitStream::from_bytes(&self.0)
    }
}

/// Per-group encoder record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeLog {
    pub group: usize,
    pub id_kp: usize,
    pub id_hf: usize,
    /// Full Huffman length of the group under the chosen codebook.
    pub coded_len: usize,
    /// End of the stored coded stream.
    pub stream_end: usize,
    pub n_clipped: usize,
    pub n_padded: usize,
    /// Symbol histogram before clipping.
    pub hist: [u32; NUM_SYMBOLS],
}

/// Header fields read from the block tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tail {
    pub s_g: Fp8Code,
    pub id_hf: usize,
    pub id_kp: usize,
    /// Lowest bit of the ID_KP field; outlier slots grow down from here.
    pub tail_base: usize,
}

/// Top of the ID_KP field.
pub fn kp_top(meta: &TensorMeta) -> usize {
    SCALE_FIELD - meta.hf_bits() as usize
}

/// `tail_base` for a block using pattern `id_kp`.
pub fn tail_base_for(meta: &TensorMeta, id_kp: usize) -> usize {
    let top = kp_top(meta);
    match (&meta.pattern_index_coding, &meta.pattern_index_code) {
        (PatternIndexCoding::Huffman, Some(code)) => top - code.len_of(id_kp) as usize,
        _ => top - meta.kp_bits() as usize,
    }
}

pub fn read_tail(b: &CompressedBlock4x, meta: &TensorMeta) -> Result<Tail> {
    let stream = b.stream();
    let s_g = Fp8Code(b.0[BLOCK_BYTES - 1]);
    if s_g.is_nan() {
        return Err(EccoError::CorruptBlock(format!("NaN group scale {:#04x}", s_g.0)));
    }
    let hf_bits = meta.hf_bits();
    let top = kp_top(meta);
    let id_hf = stream.get_bits(top, hf_bits)? as usize;
    let (id_kp, tail_base) = match (&meta.pattern_index_coding, &meta.pattern_index_code) {
        (PatternIndexCoding::Huffman, Some(code)) => {
            let (sym, len) = code.decode_downward(&stream, top);
            (sym, top - len as usize)
        }
        _ => {
            let w = meta.kp_bits();
            let base = top - w as usize;
            (stream.get_bits(base, w)? as usize, base)
        }
    };
    if id_kp >= meta.s() {
        return Err(EccoError::CorruptBlock(format!("ID_KP {id_kp} >= S = {}", meta.s())));
    }
    if id_hf >= meta.h {
        return Err(EccoError::CorruptBlock(format!("ID_HF {id_hf} >= H = {}", meta.h)));
    }
    Ok(Tail {
        s_g,
        id_hf,
        id_kp,
        tail_base,
    })
}

fn write_tail(stream: &mut BitStream, meta: &TensorMeta, s_g: Fp8Code, id_kp: usize, id_hf: usize) -> Result<()> {
    stream.put_bits(SCALE_FIELD, s_g.0 as u64, 8)?;
    let top = kp_top(meta);
    stream.put_bits(top, id_hf as u64, meta.hf_bits())?;
    match (&meta.pattern_index_coding, &meta.pattern_index_code) {
        (PatternIndexCoding::Huffman, Some(code)) => {
            let len = code.len_of(id_kp) as usize;
            let c = code.code_of(id_kp);
            for j in 0..len {
                stream.set_bit(top - 1 - j, (c >> (len - 1 - j)) & 1 == 1);
            }
        }
        _ => {
            let w = meta.kp_bits();
            stream.put_bits(top - w as usize, id_kp as u64, w)?;
        }
    }
    Ok(())
}

/// Candidate outlier positions: largest magnitudes first, absmax excluded,
/// ties to the lower index, at most 16.
pub fn outlier_candidates(g: &Group, absmax_pos: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..g.len()).filter(|&i| i != absmax_pos).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (g.values[a].to_f64().abs(), g.values[b].to_f64().abs());
        y.total_cmp(&x).then(a.cmp(&b))
    });
    idx.truncate(MAX_TRACKED_OUTLIERS);
    idx
}

fn outlier_code(v: f16, meta: &TensorMeta) -> Fp8Code {
    let x = (v.to_f64() / meta.s_t.value()).clamp(-FP8_MAX, FP8_MAX);
    fp8_quantize(x, RoundingMode::NearestEven).expect("finite and in range")
}

/// Shortest coding among the pattern's H codebooks, ties to the lower index.
pub fn best_codebook(meta: &TensorMeta, id_kp: usize, symbols: &[u8]) -> (usize, usize) {
    let mut best = (0, usize::MAX);
    for (hf, book) in meta.codebooks[id_kp].iter().enumerate() {
        let len = book.coded_len(symbols);
        if len < best.1 {
            best = (hf, len);
        }
    }
    best
}

/// Packs an already-quantized group: symbol stream, clip or pad, tail fields.
pub fn pack_block(
    g: &Group,
    n: &NormalizedGroup,
    id_kp: usize,
    symbols: &[u8],
    meta: &TensorMeta,
) -> Result<(CompressedBlock4x, EncodeLog)> {
    let (id_hf, coded_len) = best_codebook(meta, id_kp, symbols);
    let book = meta.codebook(id_kp, id_hf);
    let tail_base = tail_base_for(meta, id_kp);
    let mut stream = BitStream::new(BLOCK_BITS);

    let mut kept = 0;
    let mut end = 0;
    for &s in symbols {
        let len = book.len_of(s as usize) as usize;
        if end + len > tail_base {
            break;
        }
        book.write_symbol(&mut stream, s as usize)?;
        end += len;
        kept += 1;
    }
    let n_clipped = symbols.len() - kept;
    let mut n_padded = 0;
    if n_clipped > 0 {
        for pos in end..tail_base {
            stream.set_bit(pos, true);
        }
    } else {
        n_padded = (tail_base - end) / OUTLIER_BITS;
        let cands = outlier_candidates(g, n.absmax_pos);
        for j in 0..n_padded {
            let pos = cands[j.min(cands.len() - 1)];
            let code = outlier_code(g.values[pos], meta);
            let slot = (pos as u64) | ((code.0 as u64) << 7);
            stream.put_bits(tail_base - OUTLIER_BITS * (j + 1), slot, OUTLIER_BITS as u32)?;
        }
    }
    write_tail(&mut stream, meta, n.s_g, id_kp, id_hf)?;

    let mut bytes = [0u8; BLOCK_BYTES];
    bytes.copy_from_slice(stream.as_bytes());
    let log = EncodeLog {
        group: g.index,
        id_kp,
        id_hf,
        coded_len,
        stream_end: end,
        n_clipped,
        n_padded,
        hist: symbol_histogram(symbols),
    };
    Ok((CompressedBlock4x(bytes), log))
}

/// Encodes one 128-element group.
pub fn encode_block(g: &Group, meta: &TensorMeta) -> Result<(CompressedBlock4x, EncodeLog)> {
    if g.len() != GROUP_SIZE_4X {
        return Err(EccoError::InvalidConfig(format!("4x groups hold 128 values, got {}", g.len())));
    }
    let n = normalize_group(g, meta.s_t);
    let (id_kp, symbols) = select_pattern(&n, &meta.library, meta.mode)?;
    pack_block(g, &n, id_kp, &symbols, meta)
}

/// Symbols decodable from `[0, tail_base)`, at most 128, and their end bit.
pub fn decode_symbols(stream: &BitStream, book: &HuffmanCodebook, tail_base: usize) -> (Vec<u8>, usize) {
    let mut symbols = Vec::with_capacity(GROUP_SIZE_4X);
    let mut pos = 0;
    while symbols.len() < GROUP_SIZE_4X {
        let (sym, len) = book.decode_at(stream, pos);
        if pos + len as usize > tail_base {
            break;
        }
        symbols.push(sym as u8);
        pos += len as usize;
    }
    (symbols, pos)
}

/// Reads `count` outlier slots below `tail_base`.
pub fn read_outliers(stream: &BitStream, tail_base: usize, count: usize) -> Result<Vec<Outlier>> {
    (0..count)
        .map(|j| {
            let slot = stream.get_bits(tail_base - OUTLIER_BITS * (j + 1), OUTLIER_BITS as u32)?;
            Ok(Outlier {
                pos: (slot & 0x7f) as usize,
                value: Fp8Code((slot >> 7) as u8),
            })
        })
        .collect()
}

/// Sequential decoder.
pub fn decode_block_reference(b: &CompressedBlock4x, meta: &TensorMeta) -> Result<Vec<f16>> {
    let tail = read_tail(b, meta)?;
    let stream = b.stream();
    let book = meta.codebook(tail.id_kp, tail.id_hf);
    let (symbols, end) = decode_symbols(&stream, book, tail.tail_base);
    let mask = (tail.tail_base - end) / OUTLIER_BITS;
    let outliers = read_outliers(&stream, tail.tail_base, mask)?;
    Ok(map_values(
        &symbols,
        meta.library.get(tail.id_kp),
        tail.s_g,
        meta.s_t,
        &outliers,
        mask,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoderKind {
    Reference,
    Parallel,
}

pub fn decode_block(b: &CompressedBlock4x, meta: &TensorMeta, kind: DecoderKind) -> Result<Vec<f16>> {
    match kind {
        DecoderKind::Reference => decode_block_reference(b, meta),
        DecoderKind::Parallel => Ok(parallel_decode(b, meta)?.values),
    }
}

/// Encodes every group of `t`, in group order.
pub fn compress_tensor(t: &TensorF16, meta: &TensorMeta) -> Result<(Vec<CompressedBlock4x>, Vec<EncodeLog>)> {
    let groups = partition_groups(t)?;
    let out: Vec<(CompressedBlock4x, EncodeLog)> = groups
        .par_iter()
        .map(|g| encode_block(g, meta))
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

pub fn decompress_tensor(
    blocks: &[CompressedBlock4x],
    meta: &TensorMeta,
    kind: DecoderKind,
    rows: usize,
    cols: usize,
) -> Result<TensorF16> {
    let groups: Vec<Vec<f16>> = blocks
        .par_iter()
        .map(|b| decode_block(b, meta, kind))
        .collect::<Result<_>>()?;
    assemble_groups(rows, cols, &groups)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseReport {
    pub per_group: Vec<f64>,
    pub mean: f64,
    pub logs: Vec<EncodeLog>,
}

/// Squared error over the non-pad elements of one group, averaged.
pub fn group_mse(orig: &Group, recon: &[f16]) -> f64 {
    let valid = orig.valid();
    let sse: f64 = orig.values[..valid]
        .iter()
        .zip(recon)
        .map(|(a, b)| {
            let d = a.to_f64() - b.to_f64();
            d * d
        })
        .sum();
    sse / valid as f64
}

/// Encode and decode every group; mean is over groups.
pub fn roundtrip_mse(t: &TensorF16, meta: &TensorMeta) -> Result<MseReport> {
    let groups = partition_groups(t)?;
    let results: Vec<(f64, EncodeLog)> = groups
        .par_iter()
        .map(|g| {
            let (block, log) = encode_block(g, meta)?;
            let recon = decode_block_reference(&block, meta)?;
            Ok((group_mse(g, &recon), log))
        })
        .collect::<Result<_>>()?;
    let (per_group, logs): (Vec<f64>, Vec<EncodeLog>) = results.into_iter().unzip();
    let mean = per_group.iter().sum::<f64>() / per_group.len() as f64;
    Ok(MseReport { per_group, mean, logs })
}

#[cfg(test)]
mod tests;
