//! Functional model of the parallel 4x decompressor.
//!
//! The coded region is tiled into 64 segments of 8 bits. Each leaf decoder
//! sees its segment plus the 7 following bits and decodes speculatively from
//! all 8 start offsets; a six-stage binary merge tree stitches neighbouring
//! results through their end-of-parse pointers, and the root entry at offset 0
//! is the block's symbol stream.

use half::f16;
use serde::Serialize;

use crate::bits::{fp8_dequantize, BitStream, Fp8Code, PotScale};
use crate::calib::{HuffmanCodebook, KMeansPattern, NUM_CENTROIDS, SCALE_SYMBOL};
use crate::codec4x::{read_outliers, read_tail, CompressedBlock4x, BLOCK_BITS, OUTLIER_BITS};
use crate::error::{EccoError, Result};
use crate::tensor::GROUP_SIZE_4X;

pub const SEGMENT_BITS: usize = 8;
pub const WINDOW_BITS: usize = 15;
pub const NUM_LEAVES: usize = BLOCK_BITS / SEGMENT_BITS;
pub const NUM_STAGES: usize = 6;

/// One padded outlier: element position and FP8 value (pre tensor scale).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Outlier {
    pub pos: usize,
    pub value: Fp8Code,
}

/// Decode of one segment from one start offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OffsetDecode {
    pub symbols: Vec<u8>,
    /// End-of-parse pointer into the next segment, in [0, 8).
    pub eop: u8,
    /// Code bits consumed from the start offset.
    pub bits_used: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeafResult {
    pub offsets: Vec<OffsetDecode>,
}

/// Leaf decoder over a 15-bit window (bit `j` of `window` is block bit `8i + j`).
pub fn leaf_decode(window: u16, book: &HuffmanCodebook) -> LeafResult {
    let max_len = book.max_len() as usize;
    let offsets = (0..SEGMENT_BITS)
        .map(|o| {
            let mut pos = o;
            let mut symbols = Vec::with_capacity(4);
            while pos < SEGMENT_BITS {
                let mut peek = 0u32;
                for j in 0..max_len {
                    let p = pos + j;
                    let bit = p < WINDOW_BITS && (window >> p) & 1 == 1;
                    peek = (peek << 1) | bit as u32;
                }
                let (sym, len) = book.decode_peek(peek);
                symbols.push(sym as u8);
                pos += len as usize;
            }
            OffsetDecode {
                symbols,
                eop: (pos - SEGMENT_BITS) as u8,
                bits_used: (pos - o) as u8,
            }
        })
        .collect();
    LeafResult { offsets }
}

/// Merged decode for one start offset of the node's first segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeEntry {
    pub symbols: Vec<u8>,
    /// End of each symbol, in bits from the node's first segment base.
    pub ends: Vec<u16>,
    pub eop: u8,
    pub bits: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MergeNode {
    pub first_segment: usize,
    pub segments: usize,
    pub entries: Vec<NodeEntry>,
}

impl MergeNode {
    pub fn from_leaf(segment: usize, leaf: &LeafResult, book: &HuffmanCodebook) -> Self {
        let entries = leaf
            .offsets
            .iter()
            .enumerate()
            .map(|(o, d)| {
                let mut end = o as u16;
                let ends = d
                    .symbols
                    .iter()
                    .map(|&s| {
                        end += book.len_of(s as usize) as u16;
                        end
                    })
                    .collect();
                NodeEntry {
                    symbols: d.symbols.clone(),
                    ends,
                    eop: d.eop,
                    bits: d.bits_used as u16,
                }
            })
            .collect();
        Self {
            first_segment: segment,
            segments: 1,
            entries,
        }
    }

    pub fn range(&self) -> (usize, usize) {
        (self.first_segment, self.first_segment + self.segments)
    }
}

/// Concatenates each left entry with the right entry selected by its EOP.
pub fn merge_pair(left: &MergeNode, right: &MergeNode) -> Result<MergeNode> {
    let aligned = left.segments == right.segments
        && left.first_segment + left.segments == right.first_segment
        && left.first_segment % (2 * left.segments) == 0;
    if !aligned {
        return Err(EccoError::MisalignedMerge {
            left: left.range(),
            right: right.range(),
        });
    }
    let shift = (left.segments * SEGMENT_BITS) as u16;
    let entries = left
        .entries
        .iter()
        .map(|l| {
            let r = &right.entries[l.eop as usize];
            let mut symbols = Vec::with_capacity(l.symbols.len() + r.symbols.len());
            symbols.extend_from_slice(&l.symbols);
            symbols.extend_from_slice(&r.symbols);
            let mut ends = Vec::with_capacity(symbols.len());
            ends.extend_from_slice(&l.ends);
            ends.extend(r.ends.iter().map(|e| e + shift));
            NodeEntry {
                symbols,
                ends,
                eop: r.eop,
                bits: l.bits + r.bits,
            }
        })
        .collect();
    Ok(MergeNode {
        first_segment: left.first_segment,
        segments: left.segments * 2,
        entries,
    })
}

/// 15-bit window starting at bit `8 * segment`, zero past the block end.
pub fn segment_window(stream: &BitStream, segment: usize) -> u16 {
    let base = segment * SEGMENT_BITS;
    let mut w = 0u16;
    for j in 0..WINDOW_BITS {
        let p = base + j;
        if p < stream.capacity() && stream.bit(p) {
            w |= 1 << j;
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeTrace {
    pub leaves: Vec<LeafResult>,
    /// `stages[k]` holds the 32 >> k nodes produced by merge stage k + 1.
    pub stages: Vec<Vec<MergeNode>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelDecode {
    pub values: Vec<f16>,
    pub trace: DecodeTrace,
    /// Number of padded outliers.
    pub mask: usize,
    /// End of the selected symbol stream.
    pub stream_end: usize,
    pub symbols: Vec<u8>,
}

/// Leaves plus merge stages for a codebook, without header handling.
pub fn decode_tree(stream: &BitStream, book: &HuffmanCodebook) -> Result<DecodeTrace> {
    let leaves: Vec<LeafResult> = (0..NUM_LEAVES)
        .map(|i| leaf_decode(segment_window(stream, i), book))
        .collect();
    let mut level: Vec<MergeNode> = leaves
        .iter()
        .enumerate()
        .map(|(i, l)| MergeNode::from_leaf(i, l, book))
        .collect();
    let mut stages = Vec::with_capacity(NUM_STAGES);
    while level.len() > 1 {
        level = level
            .chunks_exact(2)
            .map(|pair| merge_pair(&pair[0], &pair[1]))
            .collect::<Result<_>>()?;
        stages.push(level.clone());
    }
    Ok(DecodeTrace { leaves, stages })
}

pub fn parallel_decode(b: &CompressedBlock4x, meta: &crate::calib::TensorMeta) -> Result<ParallelDecode> {
    // Pattern retriever.
    let tail = read_tail(b, meta)?;
    let book = meta.codebook(tail.id_kp, tail.id_hf);
    let stream = b.stream();

    let trace = decode_tree(&stream, book)?;
    let root = &trace.stages.last().expect("six stages")[0].entries[0];

    // Keep symbols that end inside the coded region, at most 128.
    let count = root
        .ends
        .iter()
        .take(GROUP_SIZE_4X)
        .take_while(|&&e| e as usize <= tail.tail_base)
        .count();
    let stream_end = if count == 0 { 0 } else { root.ends[count - 1] as usize };
    let mask = (tail.tail_base - stream_end) / OUTLIER_BITS;
    let symbols = root.symbols[..count].to_vec();
    let outliers = read_outliers(&stream, tail.tail_base, mask)?;
    let values = map_values(
        &symbols,
        meta.library.get(tail.id_kp),
        tail.s_g,
        meta.s_t,
        &outliers,
        mask,
    );
    Ok(ParallelDecode {
        values,
        trace,
        mask,
        stream_end,
        symbols,
    })
}

/// Rounds to fp16, saturating at the largest finite value.
pub fn to_f16_saturating(x: f64) -> f16 {
    f16::from_f64(x.clamp(-65504.0, 65504.0))
}

/// Data mapper: symbol 15 is the signed group scale, symbol k < 15 is
/// centroid k times the scale magnitude, positions past the decoded symbols
/// are zero, and the first `mask` outliers override their positions in slot
/// order. A NaN outlier code maps to zero.
pub fn map_values(
    symbols: &[u8],
    pattern: &KMeansPattern,
    s_g: Fp8Code,
    s_t: PotScale,
    outliers: &[Outlier],
    mask: usize,
) -> Vec<f16> {
    let scale = fp8_dequantize(s_g).unwrap_or(0.0) * s_t.value();
    let mut out = vec![f16::ZERO; GROUP_SIZE_4X];
    for (slot, &s) in out.iter_mut().zip(symbols) {
        *slot = if s == SCALE_SYMBOL {
            to_f16_saturating(scale)
        } else {
            debug_assert!((s as usize) < NUM_CENTROIDS);
            to_f16_saturating(pattern.centroid(s as usize) * scale.abs())
        };
    }
    for o in outliers.iter().take(mask) {
        if o.pos < GROUP_SIZE_4X {
            let v = fp8_dequantize(o.value).unwrap_or(0.0) * s_t.value();
            out[o.pos] = to_f16_saturating(v);
        }
    }
    out
}
