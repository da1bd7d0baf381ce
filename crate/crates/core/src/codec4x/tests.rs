use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bits::{fp8_dequantize, PotScale};
use crate::calib::{calibrate, Config, Mode};
use crate::testutil::*;

fn spike_group(pos: usize, v: f32) -> Group {
    let mut x = [0.0f32; 128];
    x[pos] = v;
    group_of(&x)
}

#[test]
fn single_spike_round_trip() {
    let meta = single_meta(cheap_center_book());
    let g = spike_group(37, 1.0);
    let (b, log) = encode_block(&g, &meta).unwrap();
    assert_eq!(b.bytes().len(), 64);
    assert_eq!(log.hist[7], 127);
    assert_eq!(log.hist[15], 1);
    assert_eq!(log.n_clipped, 0);
    assert_eq!(log.coded_len, 127 * 2 + 5);
    // 504 - 0 bits of tail for S = H = 1.
    assert_eq!(log.n_padded, (504 - log.coded_len) / 15);
    assert_eq!(fp8_dequantize(Fp8Code(b.0[63])).unwrap(), 1.0);
    let out = decode_block_reference(&b, &meta).unwrap();
    assert_eq!(out[37].to_f64(), 1.0);
    assert!(out.iter().enumerate().all(|(i, v)| i == 37 || v.to_f64() == 0.0));
}

#[test]
fn ratio_is_four() {
    let t = gaussian_tensor(4, 256, 1);
    let meta = calibrate(&t, &Config::default().with_sh(4, 2)).unwrap();
    let (blocks, _) = compress_tensor(&t, &meta).unwrap();
    assert_eq!(blocks.len(), 8);
    let in_bits = t.len() * 16;
    let out_bits = blocks.len() * BLOCK_BYTES * 8;
    assert_eq!(in_bits as f64 / out_bits as f64, 4.0);
}

#[test]
fn forced_clip_sets_no_padding() {
    let meta = single_meta(expensive_zero_book());
    let g = spike_group(0, 3.0);
    let (b, log) = encode_block(&g, &meta).unwrap();
    assert_eq!(log.coded_len, 127 * 8 + 8);
    assert!(log.n_clipped > 0);
    assert_eq!(log.n_padded, 0);
    // Symbol 15 is first (8 bits) then 62 zero symbols fill 504 bits exactly.
    assert_eq!(log.stream_end, 504);
    assert_eq!(log.n_clipped, 128 - 63);
    let r = decode_block_reference(&b, &meta).unwrap();
    let p = parallel_decode(&b, &meta).unwrap();
    assert_eq!(p.mask, 0);
    assert_eq!(r, p.values);
    assert_eq!(r[0].to_f64(), 3.0);
    assert!(r[63..].iter().all(|v| v.to_f64() == 0.0));
}

#[test]
fn clipped_gap_is_filled_with_ones() {
    // 2-bit code for symbol 15 shifts the stream so a 6-bit gap remains.
    let mut lens = [2u8, 2, 3, 3, 4, 4, 5, 8, 5, 6, 6, 7, 7, 8, 8, 8];
    lens.swap(0, 15);
    let meta = single_meta(HuffmanCodebook::from_lengths(&lens).unwrap());
    let g = spike_group(0, 1.0);
    let (b, log) = encode_block(&g, &meta).unwrap();
    assert_eq!(log.stream_end, 2 + 62 * 8);
    assert!(log.n_clipped > 0 && log.n_padded == 0);
    let s = b.stream();
    assert!((log.stream_end..504).all(|p| s.bit(p)));
    let r = decode_block_reference(&b, &meta).unwrap();
    assert_eq!(r, parallel_decode(&b, &meta).unwrap().values);
    assert!(r[63..].iter().all(|v| v.to_f64() == 0.0));
}

#[test]
fn zero_group_round_trips_to_zero() {
    let meta = single_meta(cheap_center_book());
    let g = group_of(&[0.0; 128]);
    let (b, _) = encode_block(&g, &meta).unwrap();
    let out = decode_block_reference(&b, &meta).unwrap();
    assert!(out.iter().all(|v| v.to_f64() == 0.0));
}

#[test]
fn outlier_slots_override_symbols() {
    let meta = single_meta(cheap_center_book());
    let mut x = [0.01f32; 128];
    x[5] = 4.0;
    x[9] = -1.5;
    x[100] = 0.75;
    let g = group_of(&x);
    let (b, log) = encode_block(&g, &meta).unwrap();
    assert!(log.n_padded >= 3);
    let s = b.stream();
    let base = tail_base_for(&meta, 0);
    let slots = read_outliers(&s, base, log.n_padded).unwrap();
    // Absmax (pos 5) is excluded; candidates follow in descending magnitude.
    assert_eq!(slots[0].pos, 9);
    assert_eq!(slots[1].pos, 100);
    let out = decode_block_reference(&b, &meta).unwrap();
    for o in &slots {
        let want = fp8_dequantize(o.value).unwrap();
        assert_eq!(out[o.pos].to_f64(), f16::from_f64(want).to_f64());
    }
    assert_eq!(out[9].to_f64(), -1.5);
    assert_eq!(out[100].to_f64(), 0.75);
}

#[test]
fn two_bit_floor_caps_slots_at_sixteen() {
    // 128 symbols of at least 2 bits leave at most 248 bits, 16 slots.
    let meta = single_meta(cheap_center_book());
    let mut x = [0.0f32; 128];
    x[3] = 1.0;
    x[4] = 0.001;
    let (b, log) = encode_block(&group_of(&x), &meta).unwrap();
    assert_eq!(log.n_padded, (504 - log.coded_len) / 15);
    assert!(log.n_padded <= MAX_TRACKED_OUTLIERS);
    let slots = read_outliers(&b.stream(), tail_base_for(&meta, 0), log.n_padded).unwrap();
    assert_eq!(slots[0].pos, 4);
    // Ties among equal magnitudes go to the lower index.
    let rest: Vec<usize> = slots[1..].iter().map(|o| o.pos).collect();
    assert_eq!(rest, (0..128).filter(|&i| i != 3 && i != 4).take(rest.len()).collect::<Vec<_>>());
}

#[test]
fn corrupt_tail_is_rejected() {
    let t = gaussian_tensor(2, 256, 2);
    let meta = calibrate(&t, &Config::default().with_sh(3, 3)).unwrap();
    let g = &partition_groups(&t).unwrap()[0];
    let (b, _) = encode_block(g, &meta).unwrap();

    let mut bad = b;
    let mut s = bad.stream();
    s.put_bits(kp_top(&meta), 3, meta.hf_bits()).unwrap();
    bad.0.copy_from_slice(s.as_bytes());
    assert!(matches!(decode_block_reference(&bad, &meta), Err(EccoError::CorruptBlock(_))));
    assert!(matches!(parallel_decode(&bad, &meta), Err(EccoError::CorruptBlock(_))));

    let mut bad = b;
    let mut s = bad.stream();
    s.put_bits(kp_top(&meta) - 2, 3, 2).unwrap();
    bad.0.copy_from_slice(s.as_bytes());
    assert!(matches!(decode_block_reference(&bad, &meta), Err(EccoError::CorruptBlock(_))));

    let mut bad = b;
    bad.0[63] = 0x7f;
    assert!(matches!(decode_block_reference(&bad, &meta), Err(EccoError::CorruptBlock(_))));
}

#[test]
fn codebook_race_picks_shortest() {
    let t = gaussian_tensor(16, 512, 3);
    let meta = calibrate(&t, &Config::default().with_sh(8, 4)).unwrap();
    let (_, logs) = compress_tensor(&t, &meta).unwrap();
    for (g, log) in partition_groups(&t).unwrap().iter().zip(&logs) {
        let n = normalize_group(g, meta.s_t);
        let (kp, symbols) = select_pattern(&n, &meta.library, meta.mode).unwrap();
        assert_eq!(kp, log.id_kp);
        let best = meta.codebooks[kp].iter().map(|b| b.coded_len(&symbols)).min().unwrap();
        assert_eq!(log.coded_len, best);
        assert_eq!(meta.codebook(kp, log.id_hf).coded_len(&symbols), best);
    }
}

#[test]
fn reencoding_decoded_symbols_reproduces_stream() {
    let t = gaussian_tensor(16, 512, 4);
    let meta = calibrate(&t, &Config::default().with_sh(8, 4)).unwrap();
    let (blocks, logs) = compress_tensor(&t, &meta).unwrap();
    let mut checked = 0;
    for (b, log) in blocks.iter().zip(&logs) {
        if log.n_clipped > 0 {
            continue;
        }
        let tail = read_tail(b, &meta).unwrap();
        let book = meta.codebook(tail.id_kp, tail.id_hf);
        let stream = b.stream();
        let (symbols, end) = decode_symbols(&stream, book, tail.tail_base);
        assert_eq!(symbols.len(), 128);
        assert_eq!(end, log.stream_end);
        let mut re = BitStream::new(BLOCK_BITS);
        for &s in &symbols {
            book.write_symbol(&mut re, s as usize).unwrap();
        }
        assert!((0..end).all(|p| re.bit(p) == stream.bit(p)));
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn unclipped_error_within_centroid_bound() {
    let t = gaussian_tensor(32, 512, 5);
    let meta = calibrate(&t, &Config::default().with_sh(16, 4)).unwrap();
    let s_t = meta.s_t.value();
    for g in partition_groups(&t).unwrap() {
        let (b, log) = encode_block(&g, &meta).unwrap();
        if log.n_clipped > 0 {
            continue;
        }
        let out = decode_block_reference(&b, &meta).unwrap();
        let tail = read_tail(&b, &meta).unwrap();
        let slots = read_outliers(&b.stream(), tail.tail_base, log.n_padded).unwrap();
        let pattern = meta.library.get(log.id_kp);
        let scale = fp8_dequantize(tail.s_g).unwrap() * s_t;
        let absmax = (0..128)
            .max_by(|&i, &j| g.values[i].to_f64().abs().total_cmp(&g.values[j].to_f64().abs()).then(j.cmp(&i)))
            .unwrap();
        for i in 0..128 {
            let x = g.values[i].to_f64();
            let y = out[i].to_f64();
            let half_ulp = f16::EPSILON.to_f64() * y.abs().max(6.1e-5);
            if let Some(o) = slots.iter().rev().find(|o| o.pos == i) {
                assert_eq!(y, f16::from_f64(fp8_dequantize(o.value).unwrap() * s_t).to_f64());
                continue;
            }
            let bound = if i == absmax {
                (x - scale).abs()
            } else {
                // Distance to the nearest centroid, oracle by exhaustive scan.
                let norm = (x / scale.abs()).clamp(-1.0, 1.0);
                let d = (0..15).map(|k| (norm - pattern.centroid(k)).abs()).fold(f64::INFINITY, f64::min);
                d * scale.abs() + (x - norm * scale.abs()).abs()
            };
            assert!((x - y).abs() <= bound + half_ulp + 1e-12, "group {} elem {i}: {x} vs {y}", g.index);
        }
    }
}

#[test]
fn huffman_pattern_index_round_trip() {
    let t = gaussian_tensor(32, 512, 6);
    let cfg = Config {
        pattern_index_coding: PatternIndexCoding::Huffman,
        ..Config::default().with_sh(16, 2)
    };
    let meta = calibrate(&t, &cfg).unwrap();
    let code = meta.pattern_index_code.as_ref().unwrap();
    let (blocks, logs) = compress_tensor(&t, &meta).unwrap();
    for (b, log) in blocks.iter().zip(&logs) {
        let tail = read_tail(b, &meta).unwrap();
        assert_eq!(tail.id_kp, log.id_kp);
        assert_eq!(tail.tail_base, kp_top(&meta) - code.len_of(log.id_kp) as usize);
        assert_eq!(decode_block_reference(b, &meta).unwrap(), parallel_decode(b, &meta).unwrap().values);
    }
}

#[test]
fn kv_mode_uses_minmax_selector() {
    let t = gaussian_tensor(16, 256, 7);
    let meta = calibrate(&t, &Config::kv()).unwrap();
    assert_eq!(meta.mode, Mode::Kv);
    for g in partition_groups(&t).unwrap() {
        let (_, log) = encode_block(&g, &meta).unwrap();
        let n = normalize_group(&g, meta.s_t);
        let want = crate::calib::select_pattern_minmax(&n.norm, n.absmax_pos, &meta.library).unwrap();
        assert_eq!(log.id_kp, want);
    }
}

#[test]
fn random_valid_tails_always_decode() {
    let t = gaussian_tensor(4, 256, 8);
    let meta = calibrate(&t, &Config::default().with_sh(4, 4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..500 {
        let mut b = CompressedBlock4x([0; 64]);
        rng.fill(&mut b.0[..]);
        if Fp8Code(b.0[63]).is_nan() {
            b.0[63] = 0x38;
        }
        let r = decode_block_reference(&b, &meta).unwrap();
        assert_eq!(r, parallel_decode(&b, &meta).unwrap().values);
    }
}

#[test]
fn roundtrip_mse_is_deterministic() {
    let t = gaussian_tensor(8, 256, 10);
    let meta = calibrate(&t, &Config::default().with_sh(4, 2)).unwrap();
    let a = roundtrip_mse(&t, &meta).unwrap();
    let b = roundtrip_mse(&t, &meta).unwrap();
    assert_eq!(a, b);
    assert!(a.mean > 0.0 && a.mean < 0.05);
}

#[test]
fn saturated_scale_tensor_decodes() {
    let v: Vec<f32> = (0..256).map(|i| if i % 2 == 0 { 60000.0 } else { -1e-3 }).collect();
    let t = TensorF16::from_f32(1, 256, &v).unwrap();
    let meta = calibrate(&t, &Config::default().with_sh(2, 1)).unwrap();
    assert!(meta.s_t.value() >= 60000.0 / 448.0);
    let rep = roundtrip_mse(&t, &meta).unwrap();
    assert!(rep.mean.is_finite());
    let _ = PotScale::new(0);
}
