use acfnet::nn::{Ctx, Tensor};
use acfnet::zoo::{FeatureMode, Model, ModelConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn input(channels: usize, batch: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[batch, channels * channels, 51, 1], |_| rng.random_range(-2.0..2.0))
}

/// Copies every parameter and buffer of `src` whose name starts with `prefix`.
fn copy_tower(src: &Model<f64>, dst: &mut Model<f64>, prefix: &str) -> usize {
    let params: Vec<(String, Vec<f64>)> = src
        .named_params()
        .into_iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, p)| (n, p.value.data().to_vec()))
        .collect();
    let buffers: Vec<(String, Vec<f64>)> = src
        .named_buffers()
        .into_iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, b)| (n, b.data().to_vec()))
        .collect();
    let mut copied = 0;
    for (name, p) in dst.named_params_mut() {
        if let Some((_, v)) = params.iter().find(|(n, _)| *n == name) {
            p.value.data_mut().copy_from_slice(v);
            copied += 1;
        }
    }
    for (name, b) in dst.named_buffers_mut() {
        if let Some((_, v)) = buffers.iter().find(|(n, _)| *n == name) {
            b.data_mut().copy_from_slice(v);
            copied += 1;
        }
    }
    copied
}

#[test]
fn fused_towers_compute_the_single_tower_features() {
    let fused_cfg = ModelConfig {
        seed: 4,
        ..ModelConfig::best(FeatureMode::Fused)
    };
    let fused = Model::<f64>::new(&fused_cfg).unwrap();
    for (t, mode) in [FeatureMode::Tv8, FeatureMode::Mfcc12].into_iter().enumerate() {
        let single_cfg = ModelConfig {
            feature_mode: mode,
            seed: 99,
            ..fused_cfg.clone()
        };
        let mut single = Model::<f64>::new(&single_cfg).unwrap();
        let prefix = format!("{mode}.");
        let per_tower = single.named_params().len() + single.named_buffers().len()
            - single.named_params().iter().filter(|(n, _)| n.starts_with("head")).count()
            - single.named_buffers().iter().filter(|(n, _)| n.starts_with("head")).count();
        assert_eq!(copy_tower(&fused, &mut single, &prefix), per_tower);

        let x = input(mode.tower_channels()[0], 3, 11 + t as u64);
        let mut a = fused.clone();
        let fa = a.towers[t].forward(&x, &mut Ctx::eval()).unwrap();
        let fb = single.towers[0].forward(&x, &mut Ctx::eval()).unwrap();
        assert_eq!(fa.shape(), fb.shape());
        assert_eq!(fa.data(), fb.data());
        assert_eq!(fa.shape()[1], fused_cfg.tower_flat_width().unwrap());
    }
}

#[test]
fn parameter_count_matches_closed_form_over_the_grid() {
    for mode in [FeatureMode::Tv8, FeatureMode::Mfcc12, FeatureMode::Fused] {
        for config in ModelConfig::grid(&ModelConfig::best(mode)) {
            let model = Model::<f32>::new(&config).unwrap();
            let counted: usize = model.named_params().iter().map(|(_, p)| p.value.len()).sum();
            assert_eq!(model.parameter_count(), counted);
            assert_eq!(config.parameter_count().unwrap(), counted, "{config:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn grid_models_output_probabilities(idx in 0usize..32, seed in any::<u64>(), scale in 0.1f64..20.0) {
        let config = ModelConfig { seed, ..ModelConfig::grid(&ModelConfig::best(FeatureMode::Tv8))[idx].clone() };
        let mut model = Model::<f64>::new(&config).unwrap();
        let x = input(8, 2, seed).map(|v| v * scale);
        let train = model.forward(&[&x], &mut Ctx::train(seed)).unwrap();
        let eval = model.predict(&[&x]).unwrap();
        for p in train.data().iter().chain(&eval) {
            prop_assert!(p.is_finite() && *p >= 0.0 && *p <= 1.0);
        }
    }

    #[test]
    fn eval_forward_is_batch_independent(seed in any::<u64>()) {
        let config = ModelConfig { seed, ..ModelConfig::best(FeatureMode::Tv8) };
        let mut model = Model::<f64>::new(&config).unwrap();
        let x = input(8, 3, seed);
        let all = model.predict(&[&x]).unwrap();
        let first = Tensor::from_vec(&[1, 64, 51, 1], x.data()[..64 * 51].to_vec()).unwrap();
        let one = model.predict(&[&first]).unwrap();
        prop_assert!((all[0] - one[0]).abs() < 1e-12);
    }
}
