//! Convolutional autoencoder over foot-segmented thermographs and the latent
//! representations it produces.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thermomark_nn::{
    checkpoint, loss, Adam, Conv2d, ConvTranspose2d, EarlyStopping, Model, Param, PlateauSchedule, Progress, Relu,
    Sequential, Sigmoid, Tensor,
};

use crate::imaging::{resize_nearest, SquarePad};
use crate::ingest::{normalize_thermal, TempWindow, ThermalGrid};
use crate::segmentation::split_pairs;
use crate::training::{BatchPlan, EpochRecord, TrainingLog};

/// Network input side.
pub const INPUT_SIZE: usize = 224;
pub const INPUT_CHANNELS: usize = 3;
pub const INPUT_LEN: usize = INPUT_CHANNELS * INPUT_SIZE * INPUT_SIZE;
pub const LATENT_CHANNELS: usize = 32;
pub const LATENT_SIZE: usize = 28;
/// `32 · 28 · 28`
pub const LATENT_LEN: usize = LATENT_CHANNELS * LATENT_SIZE * LATENT_SIZE;

#[derive(Debug, thiserror::Error)]
pub enum RepresentationError {
    #[error("segmented thermograph has no foot pixels")]
    EmptyRegion,
    #[error("expected {expected} values, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("{0} split is empty")]
    EmptyDataset(&'static str),
    #[error("invalid autoencoder configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] thermomark_nn::NnError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed latent file {path}: {detail}")]
    LatentFormat { path: PathBuf, detail: String },
}

/// How the unit-interval thermal plane becomes three input channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMapping {
    /// The same plane in every channel.
    #[default]
    Replicate,
    /// Fixed black–red–yellow–white ramp.
    Hot,
}

impl ChannelMapping {
    fn map(self, v: f32) -> [f32; 3] {
        match self {
            ChannelMapping::Replicate => [v; 3],
            ChannelMapping::Hot => [
                (3.0 * v).clamp(0.0, 1.0),
                (3.0 * v - 1.0).clamp(0.0, 1.0),
                (3.0 * v - 2.0).clamp(0.0, 1.0),
            ],
        }
    }
}

/// Turns a segmented thermograph into a channel-planar `3×224×224` array:
/// pad to square, nearest-neighbour resample, window to `[0, 1]`, map to
/// three channels. Background pixels become 0 in every channel.
pub fn prepare_input(
    segmented: &ThermalGrid,
    window: TempWindow,
    mapping: ChannelMapping,
) -> Result<Vec<f32>, RepresentationError> {
    if segmented.foreground_count() == 0 {
        return Err(RepresentationError::EmptyRegion);
    }
    let (h, w) = segmented.dims();
    let pad = SquarePad::new(h, w);
    let unit = normalize_thermal(segmented, window);
    let square = resize_nearest(&pad.pad(&unit, f32::NAN), pad.side, pad.side, INPUT_SIZE, INPUT_SIZE);
    let plane = INPUT_SIZE * INPUT_SIZE;
    let mut out = vec![0.0f32; INPUT_LEN];
    for (i, &v) in square.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        for (c, m) in mapping.map(v).into_iter().enumerate() {
            out[c * plane + i] = m;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvAeConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for ConvAeConfig {
    fn default() -> Self {
        ConvAeConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 40,
            patience: 10,
            val_fraction: 0.15,
            seed: 0,
        }
    }
}

/// Three stride-2 convolutions (3→16→32→32, linear latent) and a mirrored
/// transposed-convolution decoder ending in a sigmoid.
pub struct ConvAeModel {
    config: ConvAeConfig,
    encoder: Sequential,
    decoder: Sequential,
}

impl ConvAeModel {
    pub fn new(config: ConvAeConfig) -> Result<Self, RepresentationError> {
        if config.batch_size == 0 || !(config.learning_rate > 0.0) {
            return Err(RepresentationError::Config(
                "batch_size and learning_rate must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = Sequential::new()
            .with(Conv2d::new("enc1", 3, 16, 3, 2, 1, &mut rng).without_input_grad())
            .with(Relu::default())
            .with(Conv2d::new("enc2", 16, 32, 3, 2, 1, &mut rng))
            .with(Relu::default())
            .with(Conv2d::new("enc3", 32, LATENT_CHANNELS, 3, 2, 1, &mut rng));
        let decoder = Sequential::new()
            .with(ConvTranspose2d::new("dec1", LATENT_CHANNELS, 32, 3, 2, 1, 1, &mut rng))
            .with(Relu::default())
            .with(ConvTranspose2d::new("dec2", 32, 16, 3, 2, 1, 1, &mut rng))
            .with(Relu::default())
            .with(ConvTranspose2d::new("dec3", 16, 3, 3, 2, 1, 1, &mut rng))
            .with(Sigmoid::default());
        let model = ConvAeModel {
            config,
            encoder,
            decoder,
        };
        let enc = model.encoder_shapes();
        let latent = *enc.last().expect("non-empty trace");
        assert_eq!(latent, [1, LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE], "encoder shape trace {enc:?}");
        let out = *model.decoder.shape_trace(latent).last().expect("non-empty trace");
        assert_eq!(out, [1, INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE], "decoder output shape");
        Ok(model)
    }

    pub fn config(&self) -> &ConvAeConfig {
        &self.config
    }

    /// Shapes through the encoder for a single `3×224×224` input.
    pub fn encoder_shapes(&self) -> Vec<[usize; 4]> {
        self.encoder.shape_trace([1, INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE])
    }

    pub fn encoder_params(&self) -> Vec<&Param> {
        self.encoder.params()
    }

    fn check(input: &[f32]) -> Result<(), RepresentationError> {
        if input.len() != INPUT_LEN {
            return Err(RepresentationError::ShapeMismatch {
                expected: INPUT_LEN,
                found: input.len(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, participant_id: &str, input: &[f32]) -> Result<LatentRep, RepresentationError> {
        Ok(self.encode_batch(&[(participant_id, input)])?.remove(0))
    }

    pub fn encode_batch(&self, inputs: &[(&str, &[f32])]) -> Result<Vec<LatentRep>, RepresentationError> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(16) {
            for (_, x) in chunk {
                Self::check(x)?;
            }
            let z = self
                .encoder
                .forward(&Tensor::stack([INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE], chunk.iter().map(|(_, x)| *x)));
            for (i, (id, _)) in chunk.iter().enumerate() {
                out.push(LatentRep {
                    participant_id: id.to_string(),
                    values: z.sample(i).to_vec(),
                });
            }
        }
        Ok(out)
    }

    pub fn reconstruct(&self, input: &[f32]) -> Result<Vec<f32>, RepresentationError> {
        Self::check(input)?;
        let x = Tensor::from_vec([1, INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE], input.to_vec());
        Ok(self.decoder.forward(&self.encoder.forward(&x)).into_vec())
    }

    /// `(MSE, MAE)` of the reconstruction over all `3·224·224` positions.
    pub fn reconstruct_error(&self, input: &[f32]) -> Result<(f64, f64), RepresentationError> {
        let rec = self.reconstruct(input)?;
        Ok(reconstruction_error(input, &rec))
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let z = self.encoder.forward_train(x);
        self.decoder.forward_train(&z)
    }

    fn backward(&mut self, g: &Tensor) {
        let gz = self.decoder.backward(g);
        self.encoder.backward(&gz);
    }

    pub fn save(&self, path: &Path) -> Result<(), RepresentationError> {
        let meta = serde_json::json!({ "kind": "convae", "config": self.config });
        checkpoint::save(path, &meta, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RepresentationError> {
        let meta = checkpoint::read_meta(path)?;
        let config: ConvAeConfig =
            serde_json::from_value(meta["config"].clone()).map_err(|e| RepresentationError::LatentFormat {
                path: path.to_path_buf(),
                detail: format!("bad autoencoder header: {e}"),
            })?;
        let mut model = ConvAeModel::new(config)?;
        checkpoint::load_into(path, &mut model)?;
        Ok(model)
    }
}

impl Model for ConvAeModel {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }
}

/// Elementwise `(MSE, MAE)`.
pub fn reconstruction_error(input: &[f32], reconstruction: &[f32]) -> (f64, f64) {
    (loss::mean_squared(reconstruction, input), loss::mae(reconstruction, input))
}

pub struct TrainedConvAe {
    pub model: ConvAeModel,
    pub log: TrainingLog,
    /// Hold-out `(MSE, MAE)` of the restored best epoch.
    pub holdout_mse: f64,
    pub holdout_mae: f64,
    /// Indices of the inputs used for validation.
    pub val_indices: Vec<usize>,
}

fn holdout(model: &ConvAeModel, inputs: &[Vec<f32>], idx: &[usize]) -> (f64, f64) {
    let (mut mse, mut mae) = (0.0, 0.0);
    for chunk in idx.chunks(16) {
        let x = Tensor::stack(
            [INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE],
            chunk.iter().map(|&i| inputs[i].as_slice()),
        );
        let rec = model.decoder.forward(&model.encoder.forward(&x));
        for (k, &i) in chunk.iter().enumerate() {
            let (a, b) = reconstruction_error(&inputs[i], rec.sample(k));
            mse += a;
            mae += b;
        }
    }
    (mse / idx.len() as f64, mae / idx.len() as f64)
}

/// Trains on prepared inputs with a seeded train/validation split, MSE loss,
/// Adam, learning-rate halving on validation plateaus, and early stopping on
/// validation MSE; the best-epoch weights are restored.
pub fn train_convae(inputs: &[Vec<f32>], config: &ConvAeConfig) -> Result<TrainedConvAe, RepresentationError> {
    if inputs.len() < 2 {
        return Err(RepresentationError::EmptyDataset(if inputs.is_empty() {
            "training"
        } else {
            "validation"
        }));
    }
    for x in inputs {
        ConvAeModel::check(x)?;
    }
    let all: Vec<usize> = (0..inputs.len()).collect();
    let (train_idx, val_idx) = split_pairs(&all, config.val_fraction, config.seed ^ 0xae);
    let mut model = ConvAeModel::new(config.clone())?;
    let mut opt = Adam::new(config.learning_rate);
    let mut schedule = PlateauSchedule::default();
    let mut stopper = EarlyStopping::new(config.patience.max(1));
    let mut plan = BatchPlan::new(train_idx.len(), config.batch_size, config.seed ^ 0xba7c);
    let mut log = TrainingLog::default();
    let mut best = ((f64::INFINITY, f64::INFINITY), model.snapshot());
    let shape = [INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE];

    for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        for batch in plan.epoch() {
            let x = Tensor::stack(shape, batch.iter().map(|&b| inputs[train_idx[b]].as_slice()));
            model.zero_grad();
            let rec = model.forward_train(&x);
            let (l, g) = loss::mse(&rec, &x);
            model.backward(&g);
            opt.step(model.params_mut());
            total += l * batch.len() as f64;
        }
        let train_loss = total / train_idx.len() as f64;
        let (val_mse, val_mae) = holdout(&model, inputs, &val_idx);
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: val_mse,
            val_metric: Some(val_mae),
            lr: opt.lr,
        });
        opt.lr = schedule.observe(val_mse, opt.lr);
        match stopper.observe(epoch, val_mse) {
            Progress::Improved => best = ((val_mse, val_mae), model.snapshot()),
            Progress::Waiting => {}
            Progress::Stop => {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.best_epoch = stopper.best_epoch();
    model.restore(&best.1);
    Ok(TrainedConvAe {
        model,
        log,
        holdout_mse: best.0 .0,
        holdout_mae: best.0 .1,
        val_indices: val_idx,
    })
}

/// Encoder output for one participant: `32×28×28`, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentRep {
    pub participant_id: String,
    pub values: Vec<f32>,
}

impl LatentRep {
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.values[(channel * LATENT_SIZE + row) * LATENT_SIZE + col]
    }
}

/// Channel-major flattening (`index = (c·28 + row)·28 + col`).
pub fn flatten_latent(rep: &LatentRep) -> Vec<f32> {
    rep.values.clone()
}

pub fn unflatten_latent(participant_id: &str, values: Vec<f32>) -> Result<LatentRep, RepresentationError> {
    if values.len() != LATENT_LEN {
        return Err(RepresentationError::ShapeMismatch {
            expected: LATENT_LEN,
            found: values.len(),
        });
    }
    Ok(LatentRep {
        participant_id: participant_id.to_string(),
        values,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RepresentationError + '_ {
    move |source| RepresentationError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `latents.bin`-style rows of 25088 little-endian `f32` plus an id
/// index with one participant id per line.
pub fn write_latents(latents: &[LatentRep], bin_path: &Path, ids_path: &Path) -> Result<(), RepresentationError> {
    let mut bytes = Vec::with_capacity(latents.len() * LATENT_LEN * 4);
    let mut ids = String::new();
    for rep in latents {
        if rep.values.len() != LATENT_LEN {
            return Err(RepresentationError::ShapeMismatch {
                expected: LATENT_LEN,
                found: rep.values.len(),
            });
        }
        for v in &rep.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        ids.push_str(&rep.participant_id);
        ids.push('\n');
    }
    let mut f = fs::File::create(bin_path).map_err(io_err(bin_path))?;
    f.write_all(&bytes).map_err(io_err(bin_path))?;
    fs::write(ids_path, ids).map_err(io_err(ids_path))
}

pub fn read_latents(bin_path: &Path, ids_path: &Path) -> Result<Vec<LatentRep>, RepresentationError> {
    let bytes = fs::read(bin_path).map_err(io_err(bin_path))?;
    let ids_text = fs::read_to_string(ids_path).map_err(io_err(ids_path))?;
    let ids: Vec<&str> = ids_text.lines().filter(|l| !l.is_empty()).collect();
    if bytes.len() != ids.len() * LATENT_LEN * 4 {
        return Err(RepresentationError::LatentFormat {
            path: bin_path.to_path_buf(),
            detail: format!("{} bytes for {} ids", bytes.len(), ids.len()),
        });
    }
    Ok(ids
        .iter()
        .zip(bytes.chunks_exact(LATENT_LEN * 4))
        .map(|(id, row)| LatentRep {
            participant_id: id.to_string(),
            values: row
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::DEFAULT_VALID_RANGE;

    fn grid(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> ThermalGrid {
        let v = (0..h * w).map(|i| f(i / w, i % w)).collect();
        ThermalGrid::with_background(h, w, v, DEFAULT_VALID_RANGE)
    }

    #[test]
    fn constant_foot_maps_to_half() {
        let g = grid(120, 160, |r, _| if r > 30 { 30.0 } else { f32::NAN });
        let x = prepare_input(&g, TempWindow::default(), ChannelMapping::Replicate).unwrap();
        assert_eq!(x.len(), INPUT_LEN);
        assert!(x.iter().all(|&v| v == 0.0 || v == 0.5));
        let plane = INPUT_SIZE * INPUT_SIZE;
        for i in 0..plane {
            assert_eq!(x[i], x[plane + i]);
            assert_eq!(x[i], x[2 * plane + i]);
        }
    }

    #[test]
    fn empty_region_is_rejected() {
        let g = grid(4, 4, |_, _| f32::NAN);
        assert!(matches!(
            prepare_input(&g, TempWindow::default(), ChannelMapping::Replicate),
            Err(RepresentationError::EmptyRegion)
        ));
    }

    #[test]
    fn architecture_trace() {
        let m = ConvAeModel::new(ConvAeConfig::default()).unwrap();
        let sides: Vec<usize> = m.encoder_shapes().iter().map(|s| s[2]).collect();
        assert_eq!(sides, vec![224, 112, 112, 56, 56, 28]);
        assert_eq!(m.encoder_shapes().last().unwrap()[1], 32);
    }

    #[test]
    fn error_definitions() {
        let zeros = vec![0.0; 8];
        let ones = vec![1.0; 8];
        assert_eq!(reconstruction_error(&zeros, &ones), (1.0, 1.0));
        assert_eq!(reconstruction_error(&ones, &ones), (0.0, 0.0));
    }

    #[test]
    fn flatten_roundtrip() {
        let v: Vec<f32> = (0..LATENT_LEN).map(|i| i as f32).collect();
        let rep = unflatten_latent("a", v.clone()).unwrap();
        assert_eq!(flatten_latent(&rep), v);
        assert_eq!(rep.get(1, 0, 0), (28 * 28) as f32);
        assert!(unflatten_latent("a", vec![0.0; 3]).is_err());
    }
}
