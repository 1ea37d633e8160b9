use proptest::prelude::*;
use speech_simclr::alteration::{alter, alter_temporal, AlterationConfig, Branch};
use speech_simclr::augment::speed_perturb;
use speech_simclr::dsp::Waveform;
use speech_simclr::features::{cmvn_per_utterance, FeatureMatrix};
use speech_simclr::nn::Tensor;
use speech_simclr::objective::{nt_xent, ContrastiveBatch};
use speech_simclr::rng::rng_from;
use speech_simclr::trainer::{lr_at, NamedTensors};

fn embeddings(max_pairs: usize, max_dim: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1..=max_pairs, 2..=max_dim).prop_flat_map(|(n, d)| {
        (Just(n), Just(d), prop::collection::vec(prop_oneof![-2.0..-0.05, 0.05..2.0f64], 2 * n * d))
    })
}

fn loss(n: usize, d: usize, z: Vec<f64>) -> f64 {
    nt_xent(&ContrastiveBatch::new(Tensor::new(&[2 * n, d], z).unwrap(), 0.1).unwrap()).unwrap()
}

fn features(frames: usize, bins: usize, seed: u64) -> FeatureMatrix {
    let values = (0..frames * bins).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 100.0 - 5.0).collect();
    FeatureMatrix::new(values, frames, bins, 10.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nt_xent_is_scale_invariant((n, d, z) in embeddings(4, 6), c in 0.1..3.0f64) {
        let scaled = z.iter().map(|v| v * c).collect();
        let (a, b) = (loss(n, d, z), loss(n, d, scaled));
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn nt_xent_ignores_pair_order((n, d, z) in embeddings(4, 6), rot in 0usize..4) {
        let pair = 2 * d;
        let shift = (rot % n) * pair;
        let rotated: Vec<f64> = z[shift..].iter().chain(&z[..shift]).copied().collect();
        let (a, b) = (loss(n, d, z), loss(n, d, rotated));
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        prop_assert!(a >= 0.0 && a <= ((2 * n - 1) as f64).ln() + 20.0 + 1e-9);
    }

    #[test]
    fn container_round_trip_is_byte_identical(
        shapes in prop::collection::vec(prop::collection::vec(1usize..5, 0..3), 1..5),
        seed in any::<u64>(),
    ) {
        let mut a = NamedTensors::new();
        for (i, shape) in shapes.iter().enumerate() {
            let n: usize = shape.iter().product();
            let vals: Vec<f32> = (0..n).map(|k| ((k as u64 ^ seed) % 97) as f32 * 0.25 - 3.0).collect();
            if i % 2 == 0 {
                a.push(format!("t{i}"), Tensor::new(shape, vals).unwrap()).unwrap();
            } else {
                let v64: Vec<f64> = vals.iter().map(|&v| f64::from(v) / 3.0).collect();
                a.push(format!("t{i}"), Tensor::new(shape, v64).unwrap()).unwrap();
            }
        }
        let bytes = a.to_bytes();
        let b = NamedTensors::from_bytes(&bytes).unwrap();
        prop_assert_eq!(b.to_bytes(), bytes);
        prop_assert_eq!(b.len(), shapes.len());
    }

    #[test]
    fn temporal_blocks_are_disjoint_and_counted(frames in 1usize..600, width in 1usize..9, seed in any::<u64>()) {
        let cfg = AlterationConfig { time_width: width, ..AlterationConfig::default() };
        let f = features(frames, 4, seed);
        let rec = alter_temporal(&f, &cfg, &mut rng_from(&[seed]));
        prop_assert_eq!(rec.blocks.len(), cfg.temporal_blocks(frames));
        for w in rec.blocks.windows(2) {
            prop_assert!(w[0].start + w[0].len <= w[1].start);
        }
        for b in &rec.blocks {
            prop_assert_eq!(b.start % width, 0);
            if b.branch == Branch::Keep {
                for t in b.start..b.start + b.len {
                    prop_assert_eq!(rec.altered.frame(t), f.frame(t));
                }
            }
        }
        let selected: usize = rec.blocks.iter().map(|b| b.len).sum();
        prop_assert_eq!(rec.time_mask.iter().filter(|&&m| m).count(), selected);
    }

    #[test]
    fn alteration_leaves_unmasked_cells_alone(frames in 8usize..200, seed in any::<u64>()) {
        let cfg = AlterationConfig::default();
        let f = features(frames, 20, seed);
        let rec = alter(&f, &cfg, &mut rng_from(&[seed, 1])).unwrap();
        prop_assert!(!rec.magnitude_applied);
        for (i, (&m, (a, b))) in rec.cell_mask().iter().zip(rec.altered.values().iter().zip(f.values())).enumerate() {
            if !m {
                prop_assert_eq!(a, b, "cell {}", i);
            }
        }
    }

    #[test]
    fn cmvn_zeroes_every_channel_mean(frames in 2usize..120, bins in 1usize..12, seed in any::<u64>()) {
        let g = cmvn_per_utterance(&features(frames, bins, seed)).unwrap();
        for c in 0..bins {
            let mean = (0..frames).map(|t| g.frame(t)[c]).sum::<f64>() / frames as f64;
            prop_assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn speed_changes_length_by_the_factor(len in 1usize..4000, factor in 0.8..1.2f64) {
        let x: Vec<f64> = (0..len).map(|i| (i as f64 * 0.05).sin() * 0.5).collect();
        let w = Waveform::from_f64(&x, 16000).unwrap();
        let y = speed_perturb(&w, factor).unwrap();
        prop_assert_eq!(y.len(), (len as f64 / factor).round() as usize);
    }

    #[test]
    fn schedule_is_positive_and_peaks_at_warmup(n in 1u64..100_000, warmup in 1u64..20_000, d in 1usize..1024) {
        let lr = lr_at(n, 0.5, d, warmup, 0.5).unwrap();
        let peak = lr_at(warmup, 0.5, d, warmup, 0.5).unwrap();
        prop_assert!(lr > 0.0 && lr <= peak * (1.0 + 1e-12));
    }
}
