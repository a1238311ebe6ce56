use super::*;
use crate::rng::{seeded, standard_normal};
use crate::tensor::grad_check;

fn small(variant: Variant) -> ModelConfig {
    ModelConfig {
        n_sensors: Some(3),
        features: Some(1),
        history: 12,
        horizon: 12,
        d: 4,
        k: 4,
        layers: 3,
        windows: vec![3, 2, 2],
        variant,
        encoder_hidden: vec![8],
        decoder_hidden: vec![8],
        predictor_hidden: 8,
        ..ModelConfig::default()
    }
}

fn build(config: &ModelConfig, seed: u64) -> Model {
    Model::new(config, &mut seeded(seed)).unwrap()
}

fn input(batch: usize, config: &ModelConfig, seed: u64) -> Tensor {
    let shape = [batch, config.n_sensors.unwrap(), config.history, config.features.unwrap()];
    standard_normal(&mut seeded(seed), &shape)
}

fn zero_param(model: &mut Model, name: &str) {
    let id = model.store().find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let shape = model.store().get(id).value.shape().to_vec();
    model.store_mut().set(id, Tensor::zeros(&shape)).unwrap();
}

#[test]
fn output_shape_for_every_variant() {
    for variant in Variant::ALL {
        let config = small(variant);
        let model = build(&config, 1);
        for batch in [1, 2] {
            let out = model.forward(&model.bind(None), &input(batch, &config, 2), &mut Sampling::Mean).unwrap();
            assert_eq!(out.prediction.shape(), &[batch, 3, 12, 1], "{variant}");
            assert!(out.prediction.data().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn token_counts_shrink_per_layer() {
    let config = small(Variant::Window);
    let model = build(&config, 1);
    let out = model.forward(&model.bind(None), &input(1, &config, 2), &mut Sampling::Mean).unwrap();
    assert_eq!(out.layer_tokens, vec![4, 2, 1]);
    let single = small(Variant::WindowSingle);
    let out = build(&single, 1).forward(&build(&single, 1).bind(None), &input(1, &single, 2), &mut Sampling::Mean).unwrap();
    assert_eq!(out.layer_tokens, vec![4]);
}

#[test]
fn measured_scores_match_analytic_counts() {
    for variant in Variant::ALL {
        let mut config = small(variant);
        config.p = 2;
        let model = build(&config, 3);
        let out = model.forward(&model.bind(None), &input(2, &config, 4), &mut Sampling::Mean).unwrap();
        assert_eq!(out.scores.0, 2 * expected_scores(&config), "{variant}");
    }
}

#[test]
fn eval_mode_is_bit_identical() {
    let config = small(Variant::SpatioTemporalWindow);
    let model = build(&config, 5);
    let x = input(2, &config, 6);
    let a = model.predict(&x).unwrap();
    let b = model.predict(&x).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn training_mode_samples() {
    let config = small(Variant::SpatioTemporalWindow);
    let model = build(&config, 5);
    let x = input(1, &config, 6);
    let mut rng = seeded(9);
    let drawn = model.forward(&model.bind(None), &x, &mut Sampling::Draw(&mut rng)).unwrap();
    assert_ne!(drawn.prediction.data(), model.predict(&x).unwrap().data());
    assert!(drawn.kl.item() > 0.0);
}

#[test]
fn deterministic_variant_has_no_kl() {
    let config = small(Variant::DeterministicWindow);
    let model = build(&config, 5);
    let mut rng = seeded(9);
    let x = input(1, &config, 6);
    let out = model.forward(&model.bind(None), &x, &mut Sampling::Draw(&mut rng)).unwrap();
    assert_eq!(out.kl.item(), 0.0);
    assert_eq!(out.prediction.data(), model.predict(&x).unwrap().data());
}

#[test]
fn wrong_input_shape_is_rejected() {
    let config = small(Variant::Window);
    let model = build(&config, 1);
    let bad = Tensor::zeros(&[1, 3, 10, 1]);
    assert!(model.predict(&bad).is_err());
}

#[test]
fn invalid_config_fails_at_construction() {
    let mut config = small(Variant::Window);
    config.windows = vec![5, 2, 2];
    assert!(Model::new(&config, &mut seeded(0)).is_err());
    let mut config = small(Variant::Window);
    config.n_sensors = None;
    assert!(Model::new(&config, &mut seeded(0)).is_err());
}

#[test]
fn zero_predictor_gives_zero_predictions() {
    let config = small(Variant::Window);
    let mut model = build(&config, 1);
    zero_param(&mut model, "predictor.1.weight");
    zero_param(&mut model, "predictor.1.bias");
    let out = model.predict(&input(2, &config, 2)).unwrap();
    assert_eq!(out.numel(), 2 * 3 * 12);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn zeroed_skip_removes_only_that_layer() {
    let config = small(Variant::Window);
    let model = build(&config, 11);
    let x = input(2, &config, 12);
    let combined = |m: &Model| m.skip_sum(&m.bind(None), &x, &mut Sampling::Mean).unwrap().0;
    let zeroed = |names: &[&str]| {
        let mut m = model.clone();
        for name in names {
            zero_param(&mut m, &format!("{name}.weight"));
            zero_param(&mut m, &format!("{name}.bias"));
        }
        combined(&m)
    };
    let full = combined(&model);
    let without_second = zeroed(&["skip1"]);
    let only_second = zeroed(&["skip0", "skip2"]);
    assert!(zeroed(&["skip0", "skip1", "skip2"]).data().iter().all(|&v| v == 0.0));
    for i in 0..full.numel() {
        let removed = full.data()[i] - without_second.data()[i];
        assert!((removed - only_second.data()[i]).abs() < 1e-12);
    }
}

#[test]
fn single_layer_skip_is_its_projection() {
    let config = small(Variant::WindowSingle);
    let model = build(&config, 15);
    let x = input(1, &config, 16);
    let p = model.bind(None);
    let (combined, _) = model.skip_sum(&p, &x, &mut Sampling::Mean).unwrap();
    assert_eq!(combined.shape(), &[3, config.d_skip()]);
    let out = model.forward(&p, &x, &mut Sampling::Mean).unwrap();
    let direct = model.predictor.forward(&p, &combined).unwrap();
    assert_eq!(direct.data(), out.prediction.data());
}

#[test]
fn gradient_reaches_first_layer_with_deeper_skips_zeroed() {
    let config = small(Variant::SpatioTemporalWindow);
    let mut model = build(&config, 13);
    for name in ["skip1.weight", "skip1.bias", "skip2.weight", "skip2.bias"] {
        zero_param(&mut model, name);
    }
    let tape = Tape::new();
    let p = model.bind(Some(&tape));
    let out = model.forward(&p, &input(2, &config, 14), &mut Sampling::Mean).unwrap();
    let grads = tape.backward(&out.prediction.square().sum()).unwrap();
    let id = model.store().find("layer0.proxies").unwrap();
    let g = grads.wrt(&p[id]);
    assert!(g.iter().any(|v| v.abs() > 1e-8));
    let deep = model.store().find("layer2.proxies").unwrap();
    assert!(grads.wrt(&p[deep]).iter().all(|&v| v == 0.0));
}

#[test]
fn wider_stack_has_more_parameters() {
    let single = build(&small(Variant::WindowSingle), 0).num_params();
    let stacked = build(&small(Variant::Window), 0).num_params();
    assert!(single < stacked, "{single} vs {stacked}");
    let generated = build(&small(Variant::SpatioTemporalWindow), 0).num_params();
    assert!(stacked < generated);
}

#[test]
fn fusion_changes_output_and_window_order_matters() {
    let mut config = small(Variant::Window);
    let model = build(&config, 21);
    let x = input(1, &config, 22);
    let with = model.predict(&x).unwrap();
    config.recurrent = false;
    let without = build(&config, 21).predict(&x).unwrap();
    assert_ne!(with.data(), without.data());

    // swap the first two windows (timestamps 0..3 and 3..6) of every sensor
    let (n, h) = (3, 12);
    let mut swapped = x.to_vec();
    for s in 0..n {
        for t in 0..3 {
            swapped.swap(s * h + t, s * h + 3 + t);
        }
    }
    let swapped = Tensor::new(x.shape(), swapped).unwrap();
    let out = model.predict(&swapped).unwrap();
    assert_ne!(out.data(), with.data());
}

fn check_full_model(variant: Variant, seed: u64) {
    let config = small(variant);
    let model = build(&config, seed);
    let x = input(1, &config, seed + 100);
    let weights = standard_normal(&mut seeded(seed + 300), &[1, 3, 12, 1]);
    let report = grad_check(&model.store().values(), 1e-5, |ps| {
        let out = model.forward(&Bindings(ps.to_vec()), &x, &mut Sampling::Mean)?;
        out.prediction.mul(&weights)?.sum().add(&out.kl.scale(0.1))
    })
    .unwrap();
    let (worst, err) = report.max_tensor_error();
    assert!(err < 1e-4, "{variant}: {} {err:e}", model.store().get(worst).name);
    assert_eq!(report.checked, model.num_params());
}

#[test]
fn full_model_gradient_check() {
    for seed in [31, 32, 33] {
        check_full_model(Variant::SpatioTemporalWindow, seed);
    }
}

#[test]
fn generated_variants_gradient_check() {
    check_full_model(Variant::SpatialWindow, 40);
    check_full_model(Variant::DeterministicWindow, 41);
}
