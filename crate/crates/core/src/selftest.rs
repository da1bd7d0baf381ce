//! Randomized parallel-vs-reference decoder check, exposed for the CLI.

use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::calib::{calibrate, Config};
use crate::codec4x::{compress_tensor, decode_block_reference, CompressedBlock4x};
use crate::error::Result;
use crate::pardec::parallel_decode;
use crate::tensor::TensorF16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SelftestReport {
    pub blocks: usize,
    pub clipped: usize,
    pub padded: usize,
    pub random_tails: usize,
    pub mismatches: usize,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<TensorF16> {
    let heavy = rng.random_bool(0.5);
    let v: Vec<f16> = (0..rows * cols)
        .map(|_| {
            let u: f32 = rng.random_range(-1.0..1.0);
            f16::from_f32(if heavy { u * u * u * 8.0 } else { u })
        })
        .collect();
    TensorF16::new(rows, cols, v)
}

fn same_bits(a: &[f16], b: &[f16]) -> bool {
    a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Encodes `rounds` random tensors over S in {16, 64} and H in {1, 4}, plus
/// blocks with random bytes and valid tails, and compares both decoders.
pub fn run_selftest(seed: u64, rounds: usize) -> Result<SelftestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SelftestReport {
        blocks: 0,
        clipped: 0,
        padded: 0,
        random_tails: 0,
        mismatches: 0,
    };
    for r in 0..rounds {
        let s = [16, 64][r % 2];
        let h = [1, 4][(r / 2) % 2];
        let t = random_tensor(&mut rng, 64, 256)?;
        let meta = calibrate(&t, &Config::default().with_sh(s, h).with_seed(rng.random()))?;
        let (blocks, logs) = compress_tensor(&t, &meta)?;
        report.clipped += logs.iter().filter(|l| l.n_clipped > 0).count();
        report.padded += logs.iter().filter(|l| l.n_padded > 0).count();
        report.blocks += blocks.len();
        report.mismatches += blocks
            .par_iter()
            .map(|b| -> Result<usize> {
                let a = decode_block_reference(b, &meta)?;
                let p = parallel_decode(b, &meta)?.values;
                Ok(!same_bits(&a, &p) as usize)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum::<usize>();

        // Arbitrary bytes with an in-range tail must also agree.
        for _ in 0..64 {
            let mut b = CompressedBlock4x([0; 64]);
            rng.fill(&mut b.0[..]);
            let mut stream = b.stream();
            let top = crate::codec4x::kp_top(&meta);
            stream.put_bits(top, rng.random_range(0..h) as u64, meta.hf_bits())?;
            let w = meta.kp_bits();
            stream.put_bits(top - w as usize, rng.random_range(0..s) as u64, w)?;
            b.0.copy_from_slice(stream.as_bytes());
            if b.0[63] & 0x7f == 0x7f {
                b.0[63] ^= 1;
            }
            let a = decode_block_reference(&b, &meta)?;
            let p = parallel_decode(&b, &meta)?.values;
            report.random_tails += 1;
            report.mismatches += !same_bits(&a, &p) as usize;
        }
    }
    Ok(report)
}
