use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scd_core::audio::{frame_signal, load_wav, normalize_peak, write_wav, AudioClip};
use scd_core::classifier::{cg, cost, cost_and_gradient, init_weights_in, one_hot, NetworkShape};
use scd_core::corpus::{assemble_conversation, truth_labels};
use scd_core::PipelineConfig;

fn clip(samples: Vec<f64>) -> AudioClip {
    AudioClip::new(samples, 16000)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn peak_normalization_is_idempotent(xs in prop::collection::vec(-5.0f64..5.0, 1..400)) {
        prop_assume!(xs.iter().any(|&x| x != 0.0));
        let once = normalize_peak(&clip(xs));
        let twice = normalize_peak(&once);
        let peak = once.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!((peak - 1.0).abs() < 1e-12);
        for (a, b) in once.samples.iter().zip(&twice.samples) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn frame_starts_are_multiples_of_hop(len in 800usize..20_000, win_ms in 5u32..60, hop_frac in 1u32..=4) {
        let win_ms = win_ms as f64;
        let hop_ms = win_ms / hop_frac as f64;
        let c = clip(vec![0.0; len]);
        let win = (win_ms * 16.0).floor() as usize;
        prop_assume!(len >= win && win > 0);
        let grid = frame_signal(&c, win_ms, hop_ms).unwrap();
        let hop = (hop_ms * 16.0).floor() as usize;
        prop_assert_eq!(grid.len(), (len - win) / hop + 1);
        for i in 0..grid.len() {
            prop_assert_eq!(grid.frame_start(i), i * hop);
        }
    }

    #[test]
    fn wav_round_trip_is_sample_exact(codes in prop::collection::vec(any::<i16>(), 1..500)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let original = clip(codes.iter().map(|&c| c as f64 / 32768.0).collect());
        write_wav(&path, &original).unwrap();
        let back = load_wav(&path).unwrap();
        write_wav(&path, &back).unwrap();
        prop_assert_eq!(load_wav(&path).unwrap().samples, original.samples);
    }

    #[test]
    fn conversation_length_and_changes(lens in prop::collection::vec(150usize..900, 1..8)) {
        let rate = 100;
        let blocks = lens
            .iter()
            .enumerate()
            .map(|(i, &n)| (format!("s{i}"), AudioClip::new(vec![0.1; n], rate)))
            .collect();
        let conv = assemble_conversation(blocks, 1.0, None).unwrap();
        let t = conv.block_s;
        let n = lens.len();
        prop_assert!((conv.audio.len() as f64 - n as f64 * t * rate as f64).abs() <= 1.0);
        prop_assert_eq!(conv.change_points.len(), n - 1);
        prop_assert!(conv.change_points.windows(2).all(|w| w[0] < w[1]));
        for (i, c) in conv.change_points.iter().enumerate() {
            prop_assert!((c - (i + 1) as f64 * t).abs() < 1e-9);
        }
    }

    #[test]
    fn equal_blocks_give_one_positive_per_change(n in 1usize..10, multiple in 1usize..6, interval_idx in 0usize..3) {
        let interval = [0.5, 1.0, 2.0][interval_idx];
        let block_s = interval * multiple as f64;
        let rate = 100;
        let blocks = (0..n)
            .map(|i| (format!("s{i}"), AudioClip::new(vec![0.1; (block_s * rate as f64) as usize], rate)))
            .collect();
        let conv = assemble_conversation(blocks, 0.5, None).unwrap();
        prop_assert_eq!(truth_labels(&conv, interval).iter().filter(|&&b| b).count(), n - 1);
    }

    #[test]
    fn config_round_trip(hidden in prop::collection::vec(1usize..500, 0..3), iters in 1usize..500,
                         interval in 0.1f64..5.0, second in any::<bool>(), p_idx in 0usize..4) {
        let mut cfg = PipelineConfig::default();
        cfg.network.hidden = hidden;
        cfg.train.cg_iters_per_stage = iters;
        cfg.scd.interval_s = interval;
        cfg.scd.use_second_difference = second;
        cfg.scd.p = ["1", "2", "inf", "1/2"][p_idx].parse().unwrap();
        let once = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(&once, &cfg);
        prop_assert_eq!(PipelineConfig::from_toml(&once.to_toml()).unwrap(), once);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn training_cost_never_increases(seed in 0u64..1000, lambda in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = NetworkShape::new(vec![6, 5, 3]).unwrap();
        let model = init_weights_in(&shape, seed, 0.5);
        let x = Array2::from_shape_fn((30, 6), |_| rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
        let y = one_hot(&labels, 3);
        let mut scratch = model.clone();
        let result = cg::minimize(&model.flat_params(), 40, |p| {
            scratch.set_flat_params(p);
            let (j, g) = cost_and_gradient(&scratch, x.view(), y.view(), lambda).unwrap();
            (j, g.iter().flat_map(|m| m.iter().copied()).collect())
        });
        prop_assert!(result.values.windows(2).all(|w| w[1] <= w[0]));
        let mut end = model.clone();
        end.set_flat_params(&result.x);
        let j = cost(&end, x.view(), y.view(), lambda).unwrap();
        prop_assert!((j - result.final_value()).abs() < 1e-12);
    }
}
