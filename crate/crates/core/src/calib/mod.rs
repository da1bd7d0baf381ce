//! Offline calibration: group normalization, per-group k-means patterns,
//! shared pattern clustering, MSE pattern assignment and per-pattern Huffman
//! codebook derivation.

pub mod huffman;
pub mod kmeans;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{fp8_dequantize, fp8_quantize, pot_scale_for, Fp8Code, PotScale, RoundingMode, FP8_MAX};
use crate::error::{EccoError, Result};
use crate::tensor::{partition_groups, Group, TensorF16, GROUP_SIZE_4X};

pub use huffman::{build_group_codebook, build_huffman, package_merge_lengths, HuffmanCodebook, NUM_SYMBOLS};
use kmeans::{kmeans, KMeansParams};

/// Centroids per pattern; the 16th symbol is reserved for the group scale.
pub const NUM_CENTROIDS: usize = 15;
pub const SCALE_SYMBOL: u8 = 15;
/// Minimum separation enforced between neighbouring centroids.
pub const CENTROID_EPS: f64 = 1.0 / (1u64 << 20) as f64;
/// Length window for the optional pattern-index code.
pub const PATTERN_CODE_MAX_LEN: u8 = 12;

/// Fifteen strictly ascending centroids in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansPattern {
    centroids: [f32; NUM_CENTROIDS],
}

impl KMeansPattern {
    /// Validating constructor for already-separated centroids.
    pub fn new(centroids: [f32; NUM_CENTROIDS]) -> Result<Self> {
        let sorted = centroids.windows(2).all(|w| w[0] < w[1]);
        let bounded = centroids.iter().all(|c| (-1.0..=1.0).contains(c));
        if !sorted || !bounded {
            return Err(EccoError::InvalidConfig(format!(
                "pattern centroids must be strictly ascending in [-1, 1]: {centroids:?}"
            )));
        }
        Ok(Self { centroids })
    }

    /// Sorts, clamps to [-1, 1] and pulls apart coincident centroids.
    pub fn from_f64(values: &[f64]) -> Self {
        assert_eq!(values.len(), NUM_CENTROIDS);
        let mut c: Vec<f64> = values.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        c.sort_by(f64::total_cmp);
        let mut out = [0f32; NUM_CENTROIDS];
        for (o, v) in out.iter_mut().zip(&c) {
            *o = *v as f32;
        }
        let eps = CENTROID_EPS as f32;
        for i in 1..NUM_CENTROIDS {
            if out[i] <= out[i - 1] {
                out[i] = out[i - 1] + eps;
            }
        }
        if out[NUM_CENTROIDS - 1] > 1.0 {
            out[NUM_CENTROIDS - 1] = 1.0;
            for i in (0..NUM_CENTROIDS - 1).rev() {
                if out[i] >= out[i + 1] {
                    out[i] = out[i + 1] - eps;
                }
            }
        }
        Self { centroids: out }
    }

    pub fn centroids(&self) -> &[f32; NUM_CENTROIDS] {
        &self.centroids
    }

    pub fn centroid(&self, k: usize) -> f64 {
        self.centroids[k] as f64
    }

    pub fn min(&self) -> f64 {
        self.centroid(0)
    }

    pub fn max(&self) -> f64 {
        self.centroid(NUM_CENTROIDS - 1)
    }

    /// Index of the nearest centroid, ties to the lower index.
    pub fn nearest(&self, x: f64) -> u8 {
        let hi = self.centroids.partition_point(|&c| (c as f64) < x);
        if hi == 0 {
            return 0;
        }
        if hi == NUM_CENTROIDS {
            return (NUM_CENTROIDS - 1) as u8;
        }
        let lo = hi - 1;
        if x - self.centroid(lo) <= self.centroid(hi) - x {
            lo as u8
        } else {
            hi as u8
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternLibrary {
    pub patterns: Vec<KMeansPattern>,
}

impl PatternLibrary {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn get(&self, i: usize) -> &KMeansPattern {
        &self.patterns[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Offline MSE pattern assignment.
    Weight,
    /// Online min/max pattern selection.
    Kv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternIndexCoding {
    Fixed,
    Huffman,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub s: usize,
    pub h: usize,
    pub group_size: usize,
    pub kmeans_iterations: usize,
    pub kmeans_restarts: usize,
    pub rng_seed: u64,
    /// Optional per-column importance used to weight the per-group k-means.
    pub importance_weights: Option<Vec<f64>>,
    pub mode: Mode,
    pub pattern_index_coding: PatternIndexCoding,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            s: 64,
            h: 4,
            group_size: GROUP_SIZE_4X,
            kmeans_iterations: 50,
            kmeans_restarts: 4,
            rng_seed: 0,
            importance_weights: None,
            mode: Mode::Weight,
            pattern_index_coding: PatternIndexCoding::Fixed,
        }
    }
}

impl Config {
    /// Online KV-cache defaults: 16 shared patterns with min/max selection.
    pub fn kv() -> Self {
        Self {
            s: 16,
            mode: Mode::Kv,
            ..Self::default()
        }
    }

    pub fn with_sh(mut self, s: usize, h: usize) -> Self {
        self.s = s;
        self.h = h;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    fn params(&self, k: usize, seed: u64) -> KMeansParams {
        KMeansParams {
            k,
            max_iters: self.kmeans_iterations,
            tol: 1e-7,
            restarts: self.kmeans_restarts,
            seed,
        }
    }

    pub fn validate(&self, cols: Option<usize>) -> Result<()> {
        let bad = |m: String| Err(EccoError::InvalidConfig(m));
        if self.group_size != GROUP_SIZE_4X {
            return bad(format!("group size {} (4x mode uses 128)", self.group_size));
        }
        if self.s == 0 || self.s > 4096 {
            return bad(format!("S = {} out of range 1..=4096", self.s));
        }
        if self.h == 0 || self.h > 16 {
            return bad(format!("H = {} out of range 1..=16", self.h));
        }
        if self.kmeans_iterations == 0 || self.kmeans_restarts == 0 {
            return bad("k-means iterations and restarts must be positive".into());
        }
        if let (Some(w), Some(cols)) = (&self.importance_weights, cols) {
            if w.len() != cols {
                return bad(format!("{} importance weights for {cols} columns", w.len()));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return bad("importance weights must be finite and non-negative".into());
            }
        }
        Ok(())
    }
}

/// Per-tensor metadata shared by every block of the tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMeta {
    pub s_t: PotScale,
    pub library: PatternLibrary,
    /// `codebooks[pattern][h]`, S x H.
    pub codebooks: Vec<Vec<HuffmanCodebook>>,
    pub h: usize,
    pub mode: Mode,
    pub pattern_index_coding: PatternIndexCoding,
    pub pattern_index_code: Option<HuffmanCodebook>,
}

fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

impl TensorMeta {
    pub fn s(&self) -> usize {
        self.library.len()
    }

    /// Width of the ID_HF field.
    pub fn hf_bits(&self) -> u32 {
        ceil_log2(self.h)
    }

    /// Width of the fixed-mode ID_KP field.
    pub fn kp_bits(&self) -> u32 {
        ceil_log2(self.s())
    }

    pub fn codebook(&self, pattern: usize, hf: usize) -> &HuffmanCodebook {
        &self.codebooks[pattern][hf]
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.s();
        if s == 0 {
            return Err(EccoError::EmptyLibrary);
        }
        if self.h == 0 || self.codebooks.len() != s || self.codebooks.iter().any(|r| r.len() != self.h) {
            return Err(EccoError::InvalidConfig(format!(
                "codebook grid is not {s}x{}",
                self.h
            )));
        }
        for book in self.codebooks.iter().flatten() {
            if book.num_symbols() != NUM_SYMBOLS
                || book.lengths().iter().any(|&l| !(2..=8).contains(&l))
            {
                return Err(EccoError::InvalidCodebook(
                    "group codebooks need 16 symbols with lengths in [2, 8]".into(),
                ));
            }
        }
        match (self.pattern_index_coding, &self.pattern_index_code) {
            (PatternIndexCoding::Huffman, Some(code)) if code.num_symbols() == s => Ok(()),
            (PatternIndexCoding::Huffman, None) if s == 1 => Ok(()),
            (PatternIndexCoding::Fixed, None) => Ok(()),
            _ => Err(EccoError::InvalidConfig(
                "pattern index code does not match the coding mode".into(),
            )),
        }
    }
}

/// A group after two-level normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGroup {
    /// Signed FP8 group scale.
    pub s_g: Fp8Code,
    /// `fp8_dequantize(s_g) * s_t`, signed.
    pub scale: f64,
    pub norm: Vec<f64>,
    pub absmax_pos: usize,
}

impl NormalizedGroup {
    /// Min and max over every element except the absmax one.
    pub fn min_max_excluding_absmax(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, &v) in self.norm.iter().enumerate() {
            if i != self.absmax_pos {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    pub fn without_absmax(&self) -> Vec<f64> {
        self.norm
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.absmax_pos)
            .map(|(_, &v)| v)
            .collect()
    }
}

/// Position of the largest-magnitude value, ties to the lowest index.
pub fn absmax_position(values: &[f64]) -> usize {
    let mut pos = 0;
    for (i, v) in values.iter().enumerate() {
        if v.abs() > values[pos].abs() {
            pos = i;
        }
    }
    pos
}

/// Two-level normalization. The FP8 group scale is rounded away from zero so
/// every normalized value lies in [-1, 1]; a group whose absmax exceeds the
/// FP8 range under `s_t` saturates at 448 and its normalized values are clamped.
pub fn normalize_group(g: &Group, s_t: PotScale) -> NormalizedGroup {
    let values: Vec<f64> = g.values.iter().map(|v| v.to_f64()).collect();
    let absmax_pos = absmax_position(&values);
    let peak = values[absmax_pos];
    if peak == 0.0 {
        return NormalizedGroup {
            s_g: Fp8Code::ZERO,
            scale: 0.0,
            norm: vec![0.0; values.len()],
            absmax_pos: 0,
        };
    }
    let ratio = (peak / s_t.value()).clamp(-FP8_MAX, FP8_MAX);
    let s_g = fp8_quantize(ratio, RoundingMode::AwayFromZero).expect("finite and in range");
    let scale = fp8_dequantize(s_g).expect("finite code") * s_t.value();
    let mag = scale.abs();
    let norm = values.iter().map(|v| (v / mag).clamp(-1.0, 1.0)).collect();
    NormalizedGroup {
        s_g,
        scale,
        norm,
        absmax_pos,
    }
}

/// Per-tensor FP16-to-FP8 scale; an all-zero tensor gets 2^0.
pub fn tensor_scale(t: &TensorF16) -> PotScale {
    let m = t.global_absmax();
    if m > 0.0 {
        pot_scale_for(m).expect("positive finite absmax")
    } else {
        PotScale::new(0)
    }
}

fn fit_pattern(norm: &[f64], weights: Option<&[f64]>, params: &KMeansParams) -> KMeansPattern {
    let res = kmeans(norm, 1, weights, params);
    KMeansPattern::from_f64(&res.centroids)
}

/// Weighted 15-cluster k-means over the 127 non-absmax normalized values of a group.
pub fn fit_group_pattern(norm: &[f64], weights: Option<&[f64]>, cfg: &Config) -> KMeansPattern {
    fit_pattern(norm, weights, &cfg.params(NUM_CENTROIDS, cfg.rng_seed))
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Normalized group plus its own fitted pattern; independent of S and H.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFit {
    pub normalized: NormalizedGroup,
    pub pattern: KMeansPattern,
}

/// Calibration state that does not depend on S or H, reusable across a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFits {
    pub s_t: PotScale,
    pub fits: Vec<GroupFit>,
}

/// Normalizes every group and fits its pattern. Runs in parallel; results are
/// in group order and independent of scheduling.
pub fn fit_groups(t: &TensorF16, cfg: &Config) -> Result<GroupFits> {
    cfg.validate(Some(t.cols()))?;
    let s_t = tensor_scale(t);
    let groups = partition_groups(t)?;
    let cols = t.cols();
    let fits = groups
        .par_iter()
        .map(|g| {
            let normalized = normalize_group(g, s_t);
            let keep: Vec<usize> = (0..g.len()).filter(|&i| i != normalized.absmax_pos).collect();
            let points: Vec<f64> = keep.iter().map(|&i| normalized.norm[i]).collect();
            let weights: Option<Vec<f64>> = if cfg.importance_weights.is_some() || g.pad > 0 {
                Some(
                    keep.iter()
                        .map(|&i| {
                            if i >= g.valid() {
                                0.0
                            } else {
                                cfg.importance_weights
                                    .as_ref()
                                    .map_or(1.0, |w| w[g.column(i, cols)])
                            }
                        })
                        .collect(),
                )
            } else {
                None
            };
            let params = cfg.params(NUM_CENTROIDS, mix_seed(cfg.rng_seed, g.index as u64));
            let pattern = fit_pattern(&points, weights.as_deref(), &params);
            GroupFit {
                normalized,
                pattern,
            }
        })
        .collect();
    Ok(GroupFits { s_t, fits })
}

/// k-means with S clusters over 15-dimensional pattern vectors.
pub fn cluster_patterns(all: &[KMeansPattern], s: usize, cfg: &Config) -> Result<PatternLibrary> {
    if s == 0 {
        return Err(EccoError::EmptyLibrary);
    }
    if all.len() < s {
        return Err(EccoError::InsufficientGroups {
            groups: all.len(),
            s,
        });
    }
    let points: Vec<f64> = all
        .iter()
        .flat_map(|p| p.centroids().iter().map(|&c| c as f64))
        .collect();
    let res = kmeans(&points, NUM_CENTROIDS, None, &cfg.params(s, cfg.rng_seed));
    Ok(PatternLibrary {
        patterns: (0..s)
            .map(|c| KMeansPattern::from_f64(res.centroid(c)))
            .collect(),
    })
}

/// Nearest-centroid symbols for a group under one pattern and the squared
/// error of the non-absmax elements.
pub fn quantize_with_pattern(norm: &[f64], absmax_pos: usize, p: &KMeansPattern) -> (Vec<u8>, f64) {
    let mut sse = 0.0;
    let symbols = norm
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if i == absmax_pos {
                SCALE_SYMBOL
            } else {
                let k = p.nearest(x);
                let d = x - p.centroid(k as usize);
                sse += d * d;
                k
            }
        })
        .collect();
    (symbols, sse)
}

/// Picks the pattern with minimal reconstruction error (ties to the lower index).
pub fn assign_pattern_mse(norm: &[f64], absmax_pos: usize, lib: &PatternLibrary) -> Result<(usize, Vec<u8>)> {
    if lib.is_empty() {
        return Err(EccoError::EmptyLibrary);
    }
    let mut best: Option<(usize, Vec<u8>, f64)> = None;
    for (id, p) in lib.patterns.iter().enumerate() {
        let (symbols, sse) = quantize_with_pattern(norm, absmax_pos, p);
        if best.as_ref().is_none_or(|b| sse < b.2) {
            best = Some((id, symbols, sse));
        }
    }
    let (id, symbols, _) = best.unwrap();
    Ok((id, symbols))
}

/// Min/max fitness score of one pattern against a group's endpoints.
pub fn minmax_fitness(gmin: f64, gmax: f64, p: &KMeansPattern) -> f64 {
    let a = gmin - p.min();
    let b = gmax - p.max();
    a * a + b * b
}

/// Online selector: compares only the group's min/max (absmax excluded)
/// against each pattern's extreme centroids.
pub fn select_pattern_minmax(norm: &[f64], absmax_pos: usize, lib: &PatternLibrary) -> Result<usize> {
    if lib.is_empty() {
        return Err(EccoError::EmptyLibrary);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, &v) in norm.iter().enumerate() {
        if i != absmax_pos {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 0.0);
    }
    let mut best = 0;
    let mut best_f = f64::INFINITY;
    for (id, p) in lib.patterns.iter().enumerate() {
        let f = minmax_fitness(lo, hi, p);
        if f < best_f {
            best = id;
            best_f = f;
        }
    }
    Ok(best)
}

/// Pattern choice for a group under the meta's mode.
pub fn select_pattern(n: &NormalizedGroup, lib: &PatternLibrary, mode: Mode) -> Result<(usize, Vec<u8>)> {
    match mode {
        Mode::Weight => assign_pattern_mse(&n.norm, n.absmax_pos, lib),
        Mode::Kv => {
            let id = select_pattern_minmax(&n.norm, n.absmax_pos, lib)?;
            Ok((id, quantize_with_pattern(&n.norm, n.absmax_pos, lib.get(id)).0))
        }
    }
}

pub fn symbol_histogram(symbols: &[u8]) -> [u32; NUM_SYMBOLS] {
    let mut h = [0u32; NUM_SYMBOLS];
    for &s in symbols {
        h[s as usize] += 1;
    }
    h
}

/// Per pattern: k-means with H clusters over the normalized index histograms of
/// its groups; each cluster's total index counts become one codebook.
pub fn derive_codebooks(
    assignments: &[(usize, [u32; NUM_SYMBOLS])],
    s: usize,
    h: usize,
    cfg: &Config,
) -> Result<Vec<Vec<HuffmanCodebook>>> {
    let mut per_pattern: Vec<Vec<&[u32; NUM_SYMBOLS]>> = vec![Vec::new(); s];
    for (id, hist) in assignments {
        if *id >= s {
            return Err(EccoError::InvalidConfig(format!("pattern id {id} >= S = {s}")));
        }
        per_pattern[*id].push(hist);
    }
    per_pattern
        .par_iter()
        .enumerate()
        .map(|(p, hists)| {
            if hists.is_empty() {
                let book = build_group_codebook(&[0.0; NUM_SYMBOLS])?;
                return Ok(vec![book; h]);
            }
            let points: Vec<f64> = hists
                .iter()
                .flat_map(|hist| {
                    let total: u32 = hist.iter().sum();
                    let total = total.max(1) as f64;
                    hist.iter().map(move |&c| c as f64 / total)
                })
                .collect();
            let res = kmeans(&points, NUM_SYMBOLS, None, &cfg.params(h, mix_seed(cfg.rng_seed, p as u64)));
            let mut sums = vec![[0.0f64; NUM_SYMBOLS]; h];
            for (hist, &c) in hists.iter().zip(&res.assignment) {
                for (acc, &x) in sums[c].iter_mut().zip(hist.iter()) {
                    *acc += x as f64;
                }
            }
            sums.iter().map(build_group_codebook).collect()
        })
        .collect()
}

fn build_pattern_index_code(ids: &[usize], s: usize) -> Result<Option<HuffmanCodebook>> {
    if s < 2 {
        return Ok(None);
    }
    let mut freqs = vec![0.0f64; s];
    for &id in ids {
        freqs[id] += 1.0;
    }
    let max_len = PATTERN_CODE_MAX_LEN.max(ceil_log2(s) as u8);
    Ok(Some(build_huffman(&freqs, 1, max_len)?))
}

/// Library, assignments and codebooks from precomputed group fits.
pub fn calibrate_from_fits(fits: &GroupFits, cfg: &Config) -> Result<TensorMeta> {
    cfg.validate(None)?;
    let patterns: Vec<KMeansPattern> = fits.fits.iter().map(|f| f.pattern).collect();
    let library = cluster_patterns(&patterns, cfg.s, cfg)?;
    let assignments: Vec<(usize, [u32; NUM_SYMBOLS])> = fits
        .fits
        .par_iter()
        .map(|f| {
            let (id, symbols) = select_pattern(&f.normalized, &library, cfg.mode)?;
            Ok((id, symbol_histogram(&symbols)))
        })
        .collect::<Result<_>>()?;
    let codebooks = derive_codebooks(&assignments, cfg.s, cfg.h, cfg)?;
    let pattern_index_code = match cfg.pattern_index_coding {
        PatternIndexCoding::Fixed => None,
        PatternIndexCoding::Huffman => {
            let ids: Vec<usize> = assignments.iter().map(|a| a.0).collect();
            build_pattern_index_code(&ids, cfg.s)?
        }
    };
    let meta = TensorMeta {
        s_t: fits.s_t,
        library,
        codebooks,
        h: cfg.h,
        mode: cfg.mode,
        pattern_index_coding: cfg.pattern_index_coding,
        pattern_index_code,
    };
    meta.validate()?;
    Ok(meta)
}

/// Full offline calibration of one tensor. Deterministic for a given config.
pub fn calibrate(t: &TensorF16, cfg: &Config) -> Result<TensorMeta> {
    let fits = fit_groups(t, cfg)?;
    calibrate_from_fits(&fits, cfg)
}
