use stwa_core::checkpoint;
use stwa_core::data::{synth_traffic, Dataset, SeriesStore};
use stwa_core::model::{Model, ModelConfig, Variant};
use stwa_core::rng::seeded;
use stwa_core::training::{evaluate, fit, FitOptions, StopReason, TrainReport};

fn sinusoids(n: usize, t: usize) -> SeriesStore {
    let mut values = Vec::with_capacity(n * t);
    for s in 0..n {
        let phase = s as f64 * 1.3;
        let amplitude = 10.0 + 5.0 * s as f64;
        for i in 0..t {
            values.push(50.0 + amplitude * (2.0 * std::f64::consts::PI * i as f64 / 24.0 + phase).sin());
        }
    }
    SeriesStore::new(values, n, t, 1, (0..n).map(|s| format!("s{s}")).collect()).unwrap()
}

fn config(variant: Variant, n: usize) -> ModelConfig {
    ModelConfig {
        n_sensors: Some(n),
        features: Some(1),
        d: 8,
        k: 4,
        encoder_hidden: vec![16],
        decoder_hidden: vec![16],
        predictor_hidden: 32,
        batch: 16,
        lr: 0.003,
        variant,
        seed: 3,
        ..ModelConfig::default()
    }
}

fn train(config: &ModelConfig, data: &Dataset, epochs: usize, patience: usize) -> (Model, TrainReport) {
    let mut rng = seeded(config.seed);
    let mut model = Model::new(config, &mut rng).unwrap();
    let options = FitOptions {
        epochs,
        patience,
        ..FitOptions::from_model(&model)
    };
    let report = fit(&mut model, data, &options, &mut rng).unwrap();
    (model, report)
}

fn curve(report: &TrainReport) -> Vec<u8> {
    let mut buf = Vec::new();
    report.write_loss_curve(&mut buf).unwrap();
    buf
}

#[test]
fn overfits_clean_sinusoids() {
    let data = Dataset::prepare(&sinusoids(4, 300), 12, 12).unwrap();
    let config = config(Variant::SpatioTemporalWindow, 4);
    let untrained = Model::new(&config, &mut seeded(config.seed)).unwrap();
    let before = evaluate(&untrained, &data.train, &data.normalizer, 64).unwrap().mae;
    let (model, _) = train(&config, &data, 40, 40);
    let after = evaluate(&model, &data.train, &data.normalizer, 64).unwrap().mae;
    assert!(after < 0.2 * before, "train MAE {after} vs untrained {before}");
}

#[test]
fn fixed_seed_gives_identical_curves() {
    let data = Dataset::prepare(&synth_traffic(3, 600, 1, 1.0).unwrap(), 12, 12).unwrap();
    let config = config(Variant::SpatioTemporalWindow, 3);
    let (_, a) = train(&config, &data, 3, 3);
    let (_, b) = train(&config, &data, 3, 3);
    assert_eq!(curve(&a), curve(&b));
    assert_eq!(a.test, b.test);
}

#[test]
fn training_loss_decreases_early_on() {
    let data = Dataset::prepare(&synth_traffic(4, 900, 2, 1.0).unwrap(), 12, 12).unwrap();
    for variant in [Variant::Window, Variant::SpatioTemporalWindow] {
        let (_, report) = train(&config(variant, 4), &data, 5, 5);
        let losses: Vec<f64> = report.epochs.iter().map(|e| e.train_loss).collect();
        let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(rises <= 1, "{variant}: {losses:?}");
        assert!(losses[4] < losses[0], "{variant}: {losses:?}");
    }
}

#[test]
fn early_stopping_restores_the_best_epoch() {
    let data = Dataset::prepare(&synth_traffic(3, 600, 4, 3.0).unwrap(), 12, 12).unwrap();
    let mut config = config(Variant::Window, 3);
    config.lr = 0.05;
    let (model, report) = train(&config, &data, 60, 2);
    assert_eq!(report.stop_reason, StopReason::Patience);
    assert_eq!(report.epochs.len(), report.best_epoch + 2);
    let best = &report.epochs[report.best_epoch - 1];
    assert_eq!(best.val.mae, report.best_val_mae);
    assert!(report.epochs.iter().all(|e| e.val.mae >= report.best_val_mae));
    // the returned model carries the best epoch's parameters
    let val = evaluate(&model, &data.val, &data.normalizer, config.batch).unwrap();
    assert_eq!(val.mae, report.best_val_mae);
}

#[test]
fn checkpoint_reproduces_test_metrics() {
    let data = Dataset::prepare(&synth_traffic(3, 600, 5, 1.0).unwrap(), 12, 12).unwrap();
    let config = config(Variant::SpatialWindow, 3);
    let (model, report) = train(&config, &data, 2, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    checkpoint::save(&model, Some(&data.normalizer), &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    let normalizer = loaded.normalizer.unwrap();
    assert_eq!(normalizer, data.normalizer);
    let metrics = evaluate(&loaded.model, &data.test, &normalizer, config.batch).unwrap();
    assert_eq!(metrics, report.test);
}
