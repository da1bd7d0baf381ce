use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use ecco_core::calib::kmeans::{kmeans, objective, KMeansParams};
use ecco_core::calib::{
    assign_pattern_mse, calibrate_from_fits, cluster_patterns, derive_codebooks, fit_groups, normalize_group,
    quantize_with_pattern, symbol_histogram, KMeansPattern, NUM_CENTROIDS,
};
use ecco_core::format::encode_meta;
use ecco_core::{calibrate, partition_groups, Config, TensorF16};

fn gaussian(rows: usize, cols: usize, seed: u64) -> TensorF16 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0f32, 1.0).unwrap();
    let v: Vec<f32> = (0..rows * cols).map(|_| d.sample(&mut rng)).collect();
    TensorF16::from_f32(rows, cols, &v).unwrap()
}

/// Sorted 15-point patterns from a handful of shape families.
fn synthetic_patterns(n: usize, seed: u64) -> Vec<KMeansPattern> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let family = rng.random_range(0..4);
            let spread: f64 = rng.random_range(0.3..1.0);
            let skew: f64 = rng.random_range(-0.2..0.2);
            let v: Vec<f64> = (0..NUM_CENTROIDS)
                .map(|k| {
                    let u = (k as f64 + 0.5) / NUM_CENTROIDS as f64 * 2.0 - 1.0;
                    let base = match family {
                        0 => u,
                        1 => u * u * u,
                        2 => u.signum() * u.abs().sqrt(),
                        _ => (u * 2.0).tanh() / 2f64.tanh(),
                    };
                    (base * spread + skew + rng.random_range(-0.02..0.02)).clamp(-1.0, 1.0)
                })
                .collect();
            KMeansPattern::from_f64(&v)
        })
        .collect()
}

fn flatten(patterns: &[KMeansPattern]) -> Vec<f64> {
    patterns.iter().flat_map(|p| p.centroids().iter().map(|&c| c as f64)).collect()
}

#[test]
fn shared_patterns_near_best_of_twenty_restarts() {
    let patterns = synthetic_patterns(10_000, 1);
    let points = flatten(&patterns);
    let cfg = Config::default().with_sh(64, 4);
    let lib = cluster_patterns(&patterns, 64, &cfg).unwrap();
    let ours = objective(&points, NUM_CENTROIDS, None, &flatten(&lib.patterns));

    // Oracle: 20 independent single-start runs with unrelated seeds.
    let best = (0..20u64)
        .map(|r| {
            let params = KMeansParams {
                restarts: 1,
                ..KMeansParams::new(64, 0xabcd_0000 + r * 7919)
            };
            kmeans(&points, NUM_CENTROIDS, None, &params).objective
        })
        .fold(f64::INFINITY, f64::min);
    assert!(ours <= best * 1.05, "objective {ours} vs best-of-20 {best}");
}

#[test]
fn single_shared_pattern_is_the_mean() {
    let patterns = synthetic_patterns(300, 2);
    let lib = cluster_patterns(&patterns, 1, &Config::default().with_sh(1, 1)).unwrap();
    let mut mean = [0f64; NUM_CENTROIDS];
    for p in &patterns {
        for (m, &c) in mean.iter_mut().zip(p.centroids()) {
            *m += c as f64 / patterns.len() as f64;
        }
    }
    for (k, m) in mean.iter().enumerate() {
        assert!((lib.get(0).centroid(k) - m).abs() < 1e-6);
    }
}

#[test]
fn quantization_mse_improves_with_s() {
    let t = gaussian(256, 1024, 3);
    let fits = fit_groups(&t, &Config::default()).unwrap();
    let groups = partition_groups(&t).unwrap();
    let mut prev = f64::INFINITY;
    for s in [4, 16, 64] {
        let meta = calibrate_from_fits(&fits, &Config::default().with_sh(s, 1)).unwrap();
        let mse = groups
            .iter()
            .map(|g| {
                let n = normalize_group(g, meta.s_t);
                let (k, _) = assign_pattern_mse(&n.norm, n.absmax_pos, &meta.library).unwrap();
                quantize_with_pattern(&n.norm, n.absmax_pos, meta.library.get(k)).1 * n.scale * n.scale / 128.0
            })
            .sum::<f64>()
            / groups.len() as f64;
        assert!(mse <= prev + 1e-6, "S = {s}: {mse} > {prev}");
        prev = mse;
    }
}

#[test]
fn more_codebooks_never_lengthen_the_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Two populations of skewed histograms for a single pattern.
    let assignments: Vec<(usize, [u32; 16])> = (0..400)
        .map(|i| {
            let peak = if i % 2 == 0 { 3 } else { 11 };
            let mut symbols = Vec::with_capacity(128);
            for _ in 0..127 {
                let s = if rng.random_bool(0.6) { peak } else { rng.random_range(0..15) };
                symbols.push(s as u8);
            }
            symbols.push(15);
            (0, symbol_histogram(&symbols))
        })
        .collect();
    let cfg = Config::default();
    let one = derive_codebooks(&assignments, 1, 1, &cfg).unwrap();
    let four = derive_codebooks(&assignments, 1, 4, &cfg).unwrap();
    let cost = |books: &[ecco_core::HuffmanCodebook], hist: &[u32; 16]| {
        books
            .iter()
            .map(|b| (0..16).map(|s| b.len_of(s) as u64 * hist[s] as u64).sum::<u64>())
            .min()
            .unwrap()
    };
    let total1: u64 = assignments.iter().map(|(_, h)| cost(&one[0], h)).sum();
    let total4: u64 = assignments.iter().map(|(_, h)| cost(&four[0], h)).sum();
    assert!(total4 <= total1, "{total4} > {total1}");
}

#[test]
fn metadata_is_identical_across_thread_counts() {
    let t = gaussian(64, 512, 5);
    let cfg = Config::default().with_sh(16, 4).with_seed(99);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| encode_meta(&calibrate(&t, &cfg).unwrap()))
    };
    let a = run(1);
    assert_eq!(a, run(3));
    assert_eq!(a, run(1));
}

#[test]
fn tiny_tensor_gives_one_pattern_one_codebook() {
    let v: Vec<f16> = (0..128).map(|i| f16::from_f32((i as f32 - 64.0) / 16.0)).collect();
    let t = TensorF16::new(1, 128, v).unwrap();
    let meta = calibrate(&t, &Config::default().with_sh(1, 1)).unwrap();
    assert_eq!(meta.s(), 1);
    assert_eq!(meta.codebooks.len(), 1);
    assert_eq!(meta.codebooks[0].len(), 1);
    assert!(calibrate(&t, &Config::default().with_sh(2, 1)).is_err());
}
