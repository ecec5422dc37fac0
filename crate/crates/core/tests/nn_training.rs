use emb2img::nn::model::synthetic_weights;
use emb2img::nn::ops;
use emb2img::nn::train::batch_tensor;
use emb2img::nn::{build_model, evaluate, train_epoch, Adam, AdamConfig, Extractor, ModelSpec, NnError, Tensor4};
use emb2img::raster::z_normalize;
use emb2img::synthetic::separable_images;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn snapshot(m: &emb2img::nn::Model) -> Vec<(String, Vec<u32>)> {
    m.params()
        .iter()
        .map(|p| (p.name.clone(), p.value.iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn batchnorm_train_output_is_standardised() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = [8, 3, 4, 4];
    let x: Vec<f32> = (0..dims.iter().product()).map(|_| rng.random_range(-4.0..9.0)).collect();
    let (y, _) = ops::batchnorm_forward_train(&Tensor4::new(dims, x).unwrap(), &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
    for ch in 0..3 {
        let vals: Vec<f64> = (0..8)
            .flat_map(|b| y.item(b)[ch * 16..(ch + 1) * 16].to_vec())
            .map(|v| v as f64)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-5, "{mean}");
        assert!((var - 1.0).abs() < 1e-3, "{var}");
    }
}

#[test]
fn zero_learning_rates_leave_params_bitwise() {
    let ds = z_normalize(&separable_images(40, 16, 16, 1.0, 1).unwrap(), 1e-8).unwrap();
    let spec = ModelSpec::preset(Extractor::None, 16, 16);
    let mut m = build_model(&spec, None, 2).unwrap();
    let before = snapshot(&m);
    let mut opt = Adam::new(&m, AdamConfig::new(0.0, 0.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    train_epoch(&mut m, &ds, &mut opt, 8, 0, &mut rng).unwrap();
    assert_eq!(snapshot(&m), before);
}

#[test]
fn frozen_extractor_is_bitwise_unchanged() {
    let spec = ModelSpec::preset(Extractor::AlexNet, 50, 50);
    let weights = synthetic_weights(&spec, 11).unwrap();
    let mut m = build_model(&spec, Some(&weights), 0).unwrap();
    let ds = z_normalize(&separable_images(48, 50, 50, 1.0, 4).unwrap(), 1e-8).unwrap();
    let frozen = |m: &emb2img::nn::Model| -> Vec<(String, Vec<u32>)> {
        snapshot(m).into_iter().filter(|(n, _)| n.starts_with("ext.")).collect()
    };
    let before = frozen(&m);
    assert!(!before.is_empty());
    let mut opt = Adam::new(&m, AdamConfig::new(1e-3, 1e-3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let trainable_before = snapshot(&m);
    for epoch in 0..3 {
        train_epoch(&mut m, &ds, &mut opt, 16, epoch, &mut rng).unwrap();
    }
    assert_eq!(frozen(&m), before);
    assert_ne!(snapshot(&m), trainable_before);
}

#[test]
fn full_stack_forward_is_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f32> = (0..32 * 50 * 50).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x = Tensor4::new([32, 1, 50, 50], data).unwrap();
    for e in emb2img::nn::spec::EXTRACTORS {
        let spec = ModelSpec::preset(e, 50, 50);
        let w = synthetic_weights(&spec, 5).unwrap();
        let mut m = build_model(&spec, Some(&w), 0).unwrap();
        let y = m.forward(&x, false).unwrap();
        assert_eq!(y.dims(), [32, 2, 1, 1], "{e}");
        assert!(y.is_finite(), "{e}");
    }
}

#[test]
fn fixed_batch_loss_decreases() {
    let ds = z_normalize(&separable_images(32, 16, 16, 1.0, 2).unwrap(), 1e-8).unwrap();
    let idx: Vec<usize> = (0..32).collect();
    let (x, labels) = batch_tensor(&ds, &idx);
    let mut m = build_model(&ModelSpec::preset(Extractor::None, 16, 16), None, 3).unwrap();
    let mut opt = Adam::new(&m, AdamConfig::new(1e-3, 1e-3)).unwrap();
    let (first, _) = m.loss_and_backward(&x, &labels).unwrap();
    opt.step(&mut m).unwrap();
    let mut last = first;
    for _ in 1..50 {
        last = m.loss_and_backward(&x, &labels).unwrap().0;
        opt.step(&mut m).unwrap();
    }
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn separable_images_reach_high_training_accuracy() {
    let ds = z_normalize(&separable_images(200, 16, 16, 1.0, 6).unwrap(), 1e-8).unwrap();
    let mut m = build_model(&ModelSpec::preset(Extractor::None, 16, 16), None, 4).unwrap();
    let mut opt = Adam::new(&m, AdamConfig::new(1e-4, 1e-3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut acc = 0.0;
    for epoch in 0..30 {
        train_epoch(&mut m, &ds, &mut opt, 32, epoch, &mut rng).unwrap();
        acc = evaluate(&mut m, &ds).unwrap();
        if acc >= 0.95 {
            break;
        }
    }
    assert!(acc >= 0.95, "{acc}");
}

#[test]
fn training_is_deterministic() {
    let ds = z_normalize(&separable_images(64, 16, 16, 1.0, 8).unwrap(), 1e-8).unwrap();
    let run = || {
        let mut m = build_model(&ModelSpec::preset(Extractor::None, 16, 16), None, 42).unwrap();
        let mut opt = Adam::new(&m, AdamConfig::new(1e-4, 1e-3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let metrics: Vec<_> = (0..2)
            .map(|e| train_epoch(&mut m, &ds, &mut opt, 16, e, &mut rng).unwrap())
            .collect();
        (m.state(), metrics)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
}

#[test]
fn batch_of_one_is_rejected() {
    let ds = z_normalize(&separable_images(8, 16, 16, 1.0, 8).unwrap(), 1e-8).unwrap();
    let mut m = build_model(&ModelSpec::preset(Extractor::None, 16, 16), None, 0).unwrap();
    let mut opt = Adam::new(&m, AdamConfig::new(1e-4, 1e-3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        train_epoch(&mut m, &ds, &mut opt, 1, 0, &mut rng),
        Err(NnError::BatchTooSmall { batch: 1 })
    ));
}
