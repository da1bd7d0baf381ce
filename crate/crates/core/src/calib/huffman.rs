//! Length-limited canonical Huffman codes.
//!
//! Code lengths come from the coin-collector form of package-merge with both a
//! minimum and a maximum length: levels below the minimum are forced into every
//! symbol's coin set, so the search only runs over levels `min_len..=max_len`
//! and the result is optimal among complete codes in that length window.

use serde::{Deserialize, Serialize};

use crate::bits::BitStream;
use crate::error::{EccoError, Result};

/// Number of group symbols: 15 centroid indices plus the scale index.
pub const NUM_SYMBOLS: usize = 16;
pub const MIN_CODE_LEN: u8 = 2;
pub const MAX_CODE_LEN: u8 = 8;

/// Canonical prefix code. Codes are transmitted most-significant bit first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HuffmanCodebook {
    lengths: Vec<u8>,
    codes: Vec<u32>,
    /// `(symbol, length)` indexed by the next `max_len` bits, MSB first.
    #[serde(skip)]
    table: Vec<(u16, u8)>,
    max_len: u8,
}

impl HuffmanCodebook {
    /// Builds the canonical code for `lengths`. The code must be complete
    /// (Kraft sum exactly one).
    pub fn from_lengths(lengths: &[u8]) -> Result<Self> {
        if lengths.len() < 2 {
            return Err(EccoError::InvalidCodebook(format!(
                "{} symbols, need at least 2",
                lengths.len()
            )));
        }
        let max_len = *lengths.iter().max().unwrap();
        if lengths.iter().any(|&l| l == 0) || max_len > 24 {
            return Err(EccoError::InvalidCodebook(format!(
                "lengths out of range: {lengths:?}"
            )));
        }
        let kraft: u64 = lengths.iter().map(|&l| 1u64 << (max_len - l)).sum();
        if kraft != 1u64 << max_len {
            return Err(EccoError::InvalidCodebook(format!(
                "Kraft sum {kraft}/{} is not 1",
                1u64 << max_len
            )));
        }
        let codes = canonical_codes(lengths);
        let mut table = vec![(0u16, 0u8); 1 << max_len];
        for (sym, (&len, &code)) in lengths.iter().zip(&codes).enumerate() {
            let shift = max_len - len;
            let start = (code as usize) << shift;
            for entry in &mut table[start..start + (1 << shift)] {
                *entry = (sym as u16, len);
            }
        }
        Ok(Self {
            lengths: lengths.to_vec(),
            codes,
            table,
            max_len,
        })
    }

    /// Validates explicit `(length, code)` pairs against the canonical assignment.
    pub fn from_parts(lengths: &[u8], codes: &[u32]) -> Result<Self> {
        let book = Self::from_lengths(lengths)?;
        if book.codes != codes {
            return Err(EccoError::InvalidCodebook(
                "codes are not the canonical assignment for their lengths".into(),
            ));
        }
        Ok(book)
    }

    /// Equal-length code; `n` must be a power of two.
    pub fn uniform(n: usize) -> Result<Self> {
        if !n.is_power_of_two() || n < 2 {
            return Err(EccoError::InvalidCodebook(format!(
                "uniform code over {n} symbols"
            )));
        }
        Self::from_lengths(&vec![n.trailing_zeros() as u8; n])
    }

    pub fn num_symbols(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[u8] {
        &self.lengths
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn len_of(&self, sym: usize) -> u8 {
        self.lengths[sym]
    }

    pub fn code_of(&self, sym: usize) -> u32 {
        self.codes[sym]
    }

    pub fn max_len(&self) -> u8 {
        self.max_len
    }

    /// Total coded length of a symbol sequence.
    pub fn coded_len(&self, symbols: &[u8]) -> usize {
        symbols.iter().map(|&s| self.lengths[s as usize] as usize).sum()
    }

    /// Decodes one symbol from `peek`, the next `max_len` bits MSB first.
    pub fn decode_peek(&self, peek: u32) -> (usize, u8) {
        let (sym, len) = self.table[peek as usize];
        (sym as usize, len)
    }

    /// Appends `sym` at the stream cursor, first code bit at the lowest position.
    pub fn write_symbol(&self, out: &mut BitStream, sym: usize) -> Result<()> {
        let len = self.lengths[sym] as u32;
        let code = self.codes[sym] as u64;
        let reversed = code.reverse_bits() >> (64 - len);
        out.write_bits(reversed, len)
    }

    /// Decodes a symbol whose first bit is at `pos`, reading upward. Bits past
    /// the end of `stream` read as zero.
    pub fn decode_at(&self, stream: &BitStream, pos: usize) -> (usize, u8) {
        let mut peek = 0u32;
        for j in 0..self.max_len as usize {
            let p = pos + j;
            let bit = p < stream.capacity() && stream.bit(p);
            peek = (peek << 1) | bit as u32;
        }
        self.decode_peek(peek)
    }

    /// Decodes a symbol whose first bit is at `top - 1`, reading downward.
    /// Bits below zero read as zero.
    pub fn decode_downward(&self, stream: &BitStream, top: usize) -> (usize, u8) {
        let mut peek = 0u32;
        for j in 0..self.max_len as usize {
            let bit = top > j && stream.bit(top - 1 - j);
            peek = (peek << 1) | bit as u32;
        }
        self.decode_peek(peek)
    }
}

/// Canonical assignment: shorter codes numerically first, ascending symbol
/// index within a length.
pub fn canonical_codes(lengths: &[u8]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&s| (lengths[s], s));
    let mut codes = vec![0u32; lengths.len()];
    let mut code = 0u32;
    let mut prev_len = lengths[order[0]];
    for (k, &sym) in order.iter().enumerate() {
        let len = lengths[sym];
        if k > 0 {
            code += 1;
            code <<= len - prev_len;
        }
        codes[sym] = code;
        prev_len = len;
    }
    codes
}

#[derive(Clone)]
struct Item {
    weight: f64,
    coins: Vec<u16>,
}

/// Optimal complete code lengths in `[min_len, max_len]` for `weights`
/// (all strictly positive), minimizing `sum(weight * len)`.
pub fn package_merge_lengths(weights: &[f64], min_len: u8, max_len: u8) -> Result<Vec<u8>> {
    let n = weights.len();
    let infeasible = EccoError::InfeasibleCode {
        symbols: n,
        min_len,
        max_len,
    };
    if n < 2 || min_len == 0 || min_len > max_len || max_len > 24 {
        return Err(infeasible);
    }
    let (lo, hi) = (min_len as u32, max_len as u32);
    // Kraft = 1 needs 2^min_len <= n <= 2^max_len.
    if (n as u64) > (1u64 << hi) || (n as u64) < (1u64 << lo) {
        return Err(infeasible);
    }

    // Coins at level l have denomination 2^-l; count in units of 2^-max_len.
    // Levels 1..=min_len are forced for every symbol, so the free levels must
    // sum to n * 2^-min_len - 1.
    let mut target: u64 = ((n as u64) << (hi - lo)) - (1u64 << hi);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(a.cmp(&b)));
    let coins: Vec<Item> = order
        .iter()
        .map(|&s| {
            let mut c = vec![0u16; n];
            c[s] = 1;
            Item {
                weight: weights[s],
                coins: c,
            }
        })
        .collect();

    let mut chosen = vec![0u32; n];
    let take = |chosen: &mut Vec<u32>, item: &Item| {
        for (c, &k) in chosen.iter_mut().zip(&item.coins) {
            *c += k as u32;
        }
    };

    let mut packages: Vec<Item> = Vec::new();
    for level in (lo + 1..=hi).rev() {
        let denom = 1u64 << (hi - level);
        let mut list = merge_sorted(&coins, &packages);
        if target & denom != 0 {
            if list.is_empty() {
                return Err(infeasible);
            }
            let first = list.remove(0);
            take(&mut chosen, &first);
            target -= denom;
        }
        packages = list
            .chunks_exact(2)
            .map(|pair| Item {
                weight: pair[0].weight + pair[1].weight,
                coins: pair[0]
                    .coins
                    .iter()
                    .zip(&pair[1].coins)
                    .map(|(a, b)| a + b)
                    .collect(),
            })
            .collect();
    }
    let unit = 1u64 << (hi - lo);
    debug_assert_eq!(target % unit, 0);
    let count = (target / unit) as usize;
    if count > packages.len() {
        return Err(infeasible);
    }
    for p in &packages[..count] {
        take(&mut chosen, p);
    }

    let lengths: Vec<u8> = chosen.iter().map(|&c| (lo + c) as u8).collect();
    if lengths.iter().any(|&l| l < min_len || l > max_len) {
        return Err(infeasible);
    }
    Ok(lengths)
}

fn merge_sorted(coins: &[Item], packages: &[Item]) -> Vec<Item> {
    let mut out = Vec::with_capacity(coins.len() + packages.len());
    let (mut i, mut j) = (0, 0);
    while i < coins.len() || j < packages.len() {
        let take_coin = j >= packages.len()
            || (i < coins.len() && coins[i].weight <= packages[j].weight);
        if take_coin {
            out.push(coins[i].clone());
            i += 1;
        } else {
            out.push(packages[j].clone());
            j += 1;
        }
    }
    out
}

/// Laplace-smoothed, length-limited canonical code over `freqs`.
pub fn build_huffman(freqs: &[f64], min_len: u8, max_len: u8) -> Result<HuffmanCodebook> {
    if let Some(&bad) = freqs.iter().find(|f| !(**f >= 0.0) || !f.is_finite()) {
        return Err(EccoError::NegativeFrequency(bad));
    }
    let smoothed: Vec<f64> = freqs.iter().map(|f| f + 1.0).collect();
    let lengths = package_merge_lengths(&smoothed, min_len, max_len)?;
    HuffmanCodebook::from_lengths(&lengths)
}

/// Codebook for the 16 group symbols with lengths in [2, 8].
pub fn build_group_codebook(freqs: &[f64; NUM_SYMBOLS]) -> Result<HuffmanCodebook> {
    build_huffman(freqs, MIN_CODE_LEN, MAX_CODE_LEN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kraft_is_one(lengths: &[u8]) -> bool {
        let total: u64 = lengths.iter().map(|&l| 1u64 << (24 - l)).sum();
        total == 1 << 24
    }

    fn prefix_free(book: &HuffmanCodebook) -> bool {
        let n = book.num_symbols();
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let (la, lb) = (book.len_of(a), book.len_of(b));
                if la <= lb && book.code_of(b) >> (lb - la) == book.code_of(a) {
                    return false;
                }
            }
        }
        true
    }

    /// Exhaustive optimum: every non-decreasing length multiset in [2, 8] of
    /// size 16 with Kraft sum one, paired with frequencies sorted descending.
    fn exhaustive_cost(weights: &[f64]) -> f64 {
        let mut sorted = weights.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut best = f64::INFINITY;
        let mut lens = Vec::with_capacity(16);
        fn rec(lens: &mut Vec<u8>, next_min: u8, used: u64, w: &[f64], best: &mut f64) {
            if lens.len() == w.len() {
                if used == 256 {
                    let cost: f64 = lens.iter().zip(w).map(|(&l, f)| l as f64 * f).sum();
                    if cost < *best {
                        *best = cost;
                    }
                }
                return;
            }
            for l in next_min..=8u8 {
                let u = 1u64 << (8 - l);
                if used + u > 256 {
                    continue;
                }
                lens.push(l);
                rec(lens, l, used + u, w, best);
                lens.pop();
            }
        }
        rec(&mut lens, 2, 0, &sorted, &mut best);
        best
    }

    #[test]
    fn uniform_frequencies_give_four_bits() {
        let book = build_group_codebook(&[3.0; 16]).unwrap();
        assert!(book.lengths().iter().all(|&l| l == 4));
        assert_eq!(book.codes()[0], 0);
        assert_eq!(book.codes()[15], 15);
    }

    #[test]
    fn skewed_small_alphabet_matches_exhaustive() {
        let mut f = [0.0; 16];
        f[0] = 8.0;
        f[1] = 4.0;
        f[2] = 2.0;
        f[3] = 2.0;
        let book = build_group_codebook(&f).unwrap();
        assert!(book.lengths().iter().all(|&l| (2..=8).contains(&l)));
        assert!(kraft_is_one(book.lengths()));
        assert!(prefix_free(&book));
        let smoothed: Vec<f64> = f.iter().map(|x| x + 1.0).collect();
        let cost: f64 = book
            .lengths()
            .iter()
            .zip(&smoothed)
            .map(|(&l, w)| l as f64 * w)
            .sum();
        assert_eq!(cost, exhaustive_cost(&smoothed));
    }

    #[test]
    fn dominant_symbol_is_held_at_min_length() {
        let mut f = [0.0; 16];
        f[5] = 1e6;
        let book = build_group_codebook(&f).unwrap();
        assert_eq!(book.len_of(5), 2);
        assert!(kraft_is_one(book.lengths()));
    }

    #[test]
    fn random_frequencies_are_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for round in 0..40 {
            let f: Vec<f64> = (0..16)
                .map(|_| {
                    let x: f64 = rng.random();
                    (x.powi(1 + round % 6) * 1000.0).floor()
                })
                .collect();
            let book = build_huffman(&f, 2, 8).unwrap();
            let w: Vec<f64> = f.iter().map(|x| x + 1.0).collect();
            let cost: f64 = book.lengths().iter().zip(&w).map(|(&l, w)| l as f64 * w).sum();
            let best = exhaustive_cost(&w);
            assert!((cost - best).abs() <= 1e-9 * best, "{cost} vs {best} for {f:?}");
        }
    }

    #[test]
    fn rejects_negative_and_infeasible() {
        let mut f = [1.0; 16];
        f[3] = -0.5;
        assert_eq!(
            build_group_codebook(&f).unwrap_err(),
            EccoError::NegativeFrequency(-0.5)
        );
        assert!(build_huffman(&[1.0; 3], 2, 8).is_err());
        assert!(build_huffman(&[1.0; 300], 2, 8).is_err());
        assert!(HuffmanCodebook::from_lengths(&[1, 2, 2, 2]).is_err());
    }

    #[test]
    fn wide_alphabet_for_pattern_index() {
        let f: Vec<f64> = (0..64).map(|i| (64 - i) as f64 * 3.0).collect();
        let book = build_huffman(&f, 1, 12).unwrap();
        assert_eq!(book.num_symbols(), 64);
        assert!(kraft_is_one(book.lengths()));
        assert!(prefix_free(&book));
    }

    #[test]
    fn from_parts_checks_canonical_codes() {
        let book = build_group_codebook(&[1.0; 16]).unwrap();
        assert!(HuffmanCodebook::from_parts(book.lengths(), book.codes()).is_ok());
        let mut codes = book.codes().to_vec();
        codes.swap(0, 1);
        assert!(HuffmanCodebook::from_parts(book.lengths(), &codes).is_err());
    }

    proptest! {
        #[test]
        fn codebook_invariants(f in prop::collection::vec(0.0f64..1e4, 16)) {
            let book = build_huffman(&f, 2, 8).unwrap();
            prop_assert!(book.lengths().iter().all(|&l| (2..=8).contains(&l)));
            prop_assert!(kraft_is_one(book.lengths()));
            prop_assert!(prefix_free(&book));
        }

        #[test]
        fn symbols_round_trip(syms in prop::collection::vec(0usize..16, 1..60), f in prop::collection::vec(0.0f64..100.0, 16)) {
            let book = build_huffman(&f, 2, 8).unwrap();
            let mut s = BitStream::new(512);
            for &x in &syms { book.write_symbol(&mut s, x).unwrap(); }
            let mut pos = 0;
            for &x in &syms {
                let (sym, len) = book.decode_at(&s, pos);
                prop_assert_eq!(sym, x);
                pos += len as usize;
            }
        }
    }
}
