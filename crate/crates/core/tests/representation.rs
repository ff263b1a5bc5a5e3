use thermomark::ingest::TempWindow;
use thermomark::representation::{
    flatten_latent, prepare_input, read_latents, train_convae, unflatten_latent, write_latents, ChannelMapping,
    ConvAeConfig, ConvAeModel, RepresentationError, INPUT_LEN, INPUT_SIZE, LATENT_CHANNELS, LATENT_LEN, LATENT_SIZE,
};
use thermomark::segmentation::mask_thermal;
use thermomark::synthdata::{generate_foot_pair, FootParams, ThermalPattern};

fn foot_input(seed: u64, spot: f64) -> Vec<f32> {
    let mut params = FootParams::nominal(160, 120);
    params.noise_sd = 0.1;
    params.pattern = ThermalPattern::for_cluster(1, spot);
    let pair = generate_foot_pair("P", &params, seed);
    let seg = mask_thermal(&pair.pair.thermal, &pair.mask).unwrap();
    prepare_input(&seg, TempWindow::default(), ChannelMapping::Replicate).unwrap()
}

#[test]
fn prepared_input_has_fixed_shape_and_identical_channels() {
    let x = foot_input(0, 0.0);
    assert_eq!(x.len(), 3 * 224 * 224);
    let plane = INPUT_SIZE * INPUT_SIZE;
    let worst = (0..plane)
        .map(|i| (x[i] - x[plane + i]).abs().max((x[i] - x[2 * plane + i]).abs()))
        .fold(0.0f32, f32::max);
    assert_eq!(worst, 0.0);
    assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn encoding_has_latent_shape_and_is_deterministic() {
    let model = ConvAeModel::new(ConvAeConfig::default()).unwrap();
    let x = foot_input(1, 2.0);
    let a = model.encode("P", &x).unwrap();
    let b = model.encode("P", &x).unwrap();
    assert_eq!(a.values.len(), LATENT_CHANNELS * LATENT_SIZE * LATENT_SIZE);
    assert_eq!(LATENT_LEN, 32 * 28 * 28);
    assert_eq!(a, b);
    assert!(a.values.iter().all(|v| v.is_finite()));
    assert!(matches!(
        model.encode("P", &x[..100]),
        Err(RepresentationError::ShapeMismatch { .. })
    ));
}

#[test]
fn background_does_not_reach_the_latent() {
    // Same foot, different ambient temperatures: background is zeroed before encoding.
    let mut p = FootParams::nominal(160, 120);
    let warm = generate_foot_pair("P", &p, 3);
    p.ambient_temp = 18.0;
    let cold = generate_foot_pair("P", &p, 3);
    assert_ne!(warm.pair.thermal, cold.pair.thermal);
    let prep = |g| prepare_input(&mask_thermal(g, &warm.mask).unwrap(), TempWindow::default(), ChannelMapping::Replicate).unwrap();
    let (xa, xb) = (prep(&warm.pair.thermal), prep(&cold.pair.thermal));
    assert_eq!(xa, xb);
    let model = ConvAeModel::new(ConvAeConfig::default()).unwrap();
    assert_eq!(model.encode("P", &xa).unwrap(), model.encode("P", &xb).unwrap());
}

#[test]
fn reconstruction_errors_are_definitional() {
    let model = ConvAeModel::new(ConvAeConfig::default()).unwrap();
    let x = foot_input(2, 0.0);
    let (mse, mae) = model.reconstruct_error(&x).unwrap();
    assert!(mse >= 0.0 && mae >= 0.0);
    let rec = model.reconstruct(&x).unwrap();
    assert_eq!(rec.len(), INPUT_LEN);
    let n = INPUT_LEN as f64;
    let direct_mse = x.iter().zip(&rec).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / n;
    let direct_mae = x.iter().zip(&rec).map(|(a, b)| ((a - b) as f64).abs()).sum::<f64>() / n;
    assert!((mse - direct_mse).abs() < 1e-9);
    assert!((mae - direct_mae).abs() < 1e-9);
}

#[test]
fn identical_images_are_reconstructed_almost_exactly() {
    let x = foot_input(4, 0.0);
    let inputs = vec![x.clone(); 6];
    let cfg = ConvAeConfig {
        learning_rate: 3e-3,
        batch_size: 2,
        max_epochs: 150,
        patience: 150,
        val_fraction: 0.34,
        seed: 3,
    };
    let trained = train_convae(&inputs, &cfg).unwrap();
    assert!(trained.log.all_losses_finite());
    assert!(trained.holdout_mse < 1e-3, "constant-set MSE {}", trained.holdout_mse);
}

#[test]
fn training_is_reproducible() {
    let inputs: Vec<Vec<f32>> = (0..4).map(|s| foot_input(s, s as f64)).collect();
    let cfg = ConvAeConfig {
        max_epochs: 2,
        batch_size: 2,
        val_fraction: 0.25,
        seed: 5,
        ..ConvAeConfig::default()
    };
    let a = train_convae(&inputs, &cfg).unwrap();
    let b = train_convae(&inputs, &cfg).unwrap();
    assert_eq!(a.holdout_mse.to_bits(), b.holdout_mse.to_bits());
    assert_eq!(a.log, b.log);
    assert!(matches!(train_convae(&inputs[..1], &cfg), Err(RepresentationError::EmptyDataset(_))));
}

#[test]
fn latents_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let reps: Vec<_> = (0..3)
        .map(|k| unflatten_latent(&format!("P{k}"), (0..LATENT_LEN).map(|i| (i * (k + 1)) as f32 * 0.5).collect()).unwrap())
        .collect();
    let (bin, ids) = (dir.path().join("latents.bin"), dir.path().join("latent_ids.txt"));
    write_latents(&reps, &bin, &ids).unwrap();
    let back = read_latents(&bin, &ids).unwrap();
    assert_eq!(back, reps);
    assert_eq!(flatten_latent(&back[1]).len(), 25088);
    let zero = unflatten_latent("z", vec![0.0; LATENT_LEN]).unwrap();
    assert!(flatten_latent(&zero).iter().all(|&v| v == 0.0));
}
