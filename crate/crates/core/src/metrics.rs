//! Entropy, bit efficiency, clip/pad ratios and the round-to-nearest baseline.

use std::collections::HashSet;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::codec4x::EncodeLog;
use crate::error::{EccoError, Result};

/// Real bits per element of the 4x codec: 512 / 128.
pub const B_REAL_4X: f64 = 4.0;
/// Real bits per element of the 2x codec: 512 / 64.
pub const B_REAL_2X: f64 = 8.0;
/// 4-bit RTN with an fp16 scale and zero point per 128 elements.
pub const B_REAL_RTN4_G128: f64 = 4.0 + 32.0 / 128.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolHistogram {
    pub counts: Vec<u64>,
}

impl SymbolHistogram {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn from_symbols(symbols: impl IntoIterator<Item = usize>, bins: usize) -> Self {
        let mut counts = vec![0u64; bins];
        for s in symbols {
            counts[s] += 1;
        }
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Shannon entropy in bits over the nonzero bins.
pub fn entropy(hist: &SymbolHistogram) -> Result<f64> {
    let total = hist.total();
    if total == 0 {
        return Err(EccoError::InvalidConfig("entropy of an empty histogram".into()));
    }
    let n = total as f64;
    Ok(hist
        .counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum())
}

pub fn bit_efficiency(entropy_bits: f64, b_real: f64) -> Result<f64> {
    if !(b_real > 0.0) {
        return Err(EccoError::InvalidConfig(format!("b_real must be positive, got {b_real}")));
    }
    Ok(entropy_bits / b_real)
}

/// Group entropies averaged with weights equal to the group symbol counts.
pub fn mean_entropy(hists: &[SymbolHistogram]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for h in hists {
        let t = h.total() as f64;
        if t > 0.0 {
            num += t * entropy(h)?;
            den += t;
        }
    }
    if den == 0.0 {
        return Err(EccoError::InvalidConfig("no symbols".into()));
    }
    Ok(num / den)
}

pub fn unique_values(values: &[f16]) -> usize {
    values.iter().map(|v| v.to_bits()).collect::<HashSet<_>>().len()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipPadReport {
    pub clip_ratio: f64,
    pub pad_ratio: f64,
    pub groups: usize,
    pub clipped_groups: usize,
    pub padded_groups: usize,
}

pub fn clip_pad_report(logs: &[EncodeLog]) -> ClipPadReport {
    let elems = (logs.len() * 128).max(1) as f64;
    ClipPadReport {
        clip_ratio: logs.iter().map(|l| l.n_clipped).sum::<usize>() as f64 / elems,
        pad_ratio: logs.iter().map(|l| l.n_padded).sum::<usize>() as f64 / elems,
        groups: logs.len(),
        clipped_groups: logs.iter().filter(|l| l.n_clipped > 0).count(),
        padded_groups: logs.iter().filter(|l| l.n_padded > 0).count(),
    }
}

/// Asymmetric round-to-nearest with `2^bits` levels and an fp16 scale and
/// zero point (the group minimum) per group. Returns the reconstruction.
pub fn rtn_baseline(values: &[f16], bits: u32) -> Vec<f16> {
    let levels = ((1u32 << bits) - 1) as f64;
    let vals: Vec<f64> = values.iter().map(|v| v.to_f64()).collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let z = f16::from_f64(min).to_f64();
    let s = f16::from_f64((max - min) / levels).to_f64();
    vals.iter()
        .map(|&v| {
            let q = if s > 0.0 {
                ((v - z) / s).round_ties_even().clamp(0.0, levels)
            } else {
                0.0
            };
            f16::from_f64(s * q + z)
        })
        .collect()
}

/// Mean squared error between two equally long slices.
pub fn mse(a: &[f16], b: &[f16]) -> f64 {
    let sse: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum();
    sse / a.len().max(1) as f64
}

pub fn max_abs_error(a: &[f16], b: &[f16]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64() - y.to_f64()).abs())
        .fold(0.0, f64::max)
}

/// Tensor-level quality and efficiency summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub elements: usize,
    pub mse: f64,
    pub max_abs_error: f64,
    pub entropy_bits: Option<f64>,
    pub b_real: f64,
    pub eta: Option<f64>,
    pub mean_unique_values: f64,
    pub clip_ratio: Option<f64>,
    pub pad_ratio: Option<f64>,
}

impl EfficiencyReport {
    pub const CSV_HEADER: &'static str =
        "elements,mse,max_abs_error,entropy_bits,b_real,eta,mean_unique_values,clip_ratio,pad_ratio";

    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.elements,
            self.mse,
            self.max_abs_error,
            opt(self.entropy_bits),
            self.b_real,
            opt(self.eta),
            self.mean_unique_values,
            opt(self.clip_ratio),
            opt(self.pad_ratio)
        )
    }
}

/// Builds the report for an original/reconstruction pair. `logs` carries the
/// 4x symbol histograms and clip/pad counts when available.
pub fn efficiency_report(
    orig: &[f16],
    recon: &[f16],
    group_size: usize,
    logs: Option<&[EncodeLog]>,
    b_real: f64,
) -> Result<EfficiencyReport> {
    if orig.len() != recon.len() {
        return Err(EccoError::ShapeMismatch {
            rows: 1,
            cols: orig.len(),
            len: recon.len(),
        });
    }
    let uniques: Vec<usize> = recon.chunks(group_size).map(unique_values).collect();
    let mean_unique_values = uniques.iter().sum::<usize>() as f64 / uniques.len().max(1) as f64;
    let (entropy_bits, clip, pad) = match logs {
        Some(logs) if !logs.is_empty() => {
            let hists: Vec<SymbolHistogram> = logs
                .iter()
                .map(|l| SymbolHistogram::new(l.hist.iter().map(|&c| c as u64).collect()))
                .collect();
            let cp = clip_pad_report(logs);
            (Some(mean_entropy(&hists)?), Some(cp.clip_ratio), Some(cp.pad_ratio))
        }
        _ => (None, None, None),
    };
    let eta = entropy_bits.map(|h| bit_efficiency(h, b_real)).transpose()?;
    Ok(EfficiencyReport {
        elements: orig.len(),
        mse: mse(orig, recon),
        max_abs_error: max_abs_error(orig, recon),
        entropy_bits,
        b_real,
        eta,
        mean_unique_values,
        clip_ratio: clip,
        pad_ratio: pad,
    })
}
