use half::f16;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bits::PotScale;
use crate::calib::{HuffmanCodebook, KMeansPattern, Mode, PatternIndexCoding, PatternLibrary, TensorMeta};
use crate::tensor::{Group, TensorF16};

/// Evenly spaced centroids over [-1, 1]; index 7 is exactly 0.
pub fn linear_pattern() -> KMeansPattern {
    let mut c = [0f32; 15];
    for (k, x) in c.iter_mut().enumerate() {
        *x = -1.0 + 2.0 * k as f32 / 14.0;
    }
    KMeansPattern::new(c).unwrap()
}

/// Single-pattern, single-codebook metadata at unit tensor scale.
pub fn single_meta(book: HuffmanCodebook) -> TensorMeta {
    TensorMeta {
        s_t: PotScale::new(0),
        library: PatternLibrary {
            patterns: vec![linear_pattern()],
        },
        codebooks: vec![vec![book]],
        h: 1,
        mode: Mode::Weight,
        pattern_index_coding: PatternIndexCoding::Fixed,
        pattern_index_code: None,
    }
}

/// Symbols 6, 7, 8 get 2-bit codes.
pub fn cheap_center_book() -> HuffmanCodebook {
    let mut lens = [6u8; 16];
    for s in [6, 7, 8] {
        lens[s] = 2;
    }
    for s in [5, 9, 15] {
        lens[s] = 5;
    }
    HuffmanCodebook::from_lengths(&lens).unwrap()
}

/// Symbol 7 (the zero centroid) costs 8 bits.
pub fn expensive_zero_book() -> HuffmanCodebook {
    let lens = [2u8, 2, 3, 3, 4, 4, 5, 8, 5, 6, 6, 7, 7, 8, 8, 8];
    HuffmanCodebook::from_lengths(&lens).unwrap()
}

pub fn group_of(values: &[f32]) -> Group {
    Group::new(values.iter().map(|&v| f16::from_f32(v)).collect(), 0)
}

pub fn gaussian_tensor(rows: usize, cols: usize, seed: u64) -> TensorF16 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0f32, 1.0).unwrap();
    let v: Vec<f32> = (0..rows * cols).map(|_| d.sample(&mut rng)).collect();
    TensorF16::from_f32(rows, cols, &v).unwrap()
}
