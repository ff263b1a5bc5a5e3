//! Supervised risk-factor prediction from thermographs (optionally with the
//! visual image), evaluated by AUC or mean absolute error on a held-out test
//! split.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thermomark_nn::{
    checkpoint, loss, Adam, AvgPool2, Conv2d, EarlyStopping, GlobalAvgPool, Linear, Model, Param, PlateauSchedule,
    Progress, Relu, Sequential, Tensor,
};

use crate::association::midranks;
use crate::imaging::{resize_bilinear, SquarePad};
use crate::ingest::{TempWindow, ThermalGrid, VisualImage};
use crate::representation::{prepare_input, ChannelMapping, ConvAeModel, RepresentationError, INPUT_SIZE};
use crate::synthdata::largest_remainder;
use crate::training::{derive_seed, BatchPlan, EpochRecord, TrainingLog};

const PLANE: usize = INPUT_SIZE * INPUT_SIZE;

#[derive(Debug, thiserror::Error)]
pub enum PredictionError {
    #[error("class {class} is absent from the {split} split")]
    ClassAbsentInSplit { split: &'static str, class: u8 },
    #[error("cohort of {n} is too small: the {split} split would be empty")]
    CohortTooSmall { n: usize, split: &'static str },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("test set contains a single class; AUC is undefined")]
    SingleClassTestSet,
    #[error("binary target must be 0 or 1, got {0}")]
    NonBinaryTarget(f64),
    #[error("task needs visual channels but the dataset has thermal channels only")]
    MissingVisual,
    #[error("input has {found} values, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("invalid predictor configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Representation(#[from] RepresentationError),
    #[error(transparent)]
    Checkpoint(#[from] thermomark_nn::NnError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Binary,
    Regression,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    #[default]
    ThermalOnly,
    /// Thermal channels followed by the RGB visual channels (6 in total).
    ThermalPlusVisual,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::ThermalOnly => 3,
            InputMode::ThermalPlusVisual => 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionTask {
    pub name: String,
    /// A record field or derived quantity (see [`crate::association::FIELDS`]),
    /// or `cluster` for the cluster-label task.
    pub target: String,
    pub kind: TaskKind,
    #[serde(default)]
    pub input_mode: InputMode,
}

impl PredictionTask {
    pub fn new(name: &str, target: &str, kind: TaskKind, input_mode: InputMode) -> Self {
        PredictionTask {
            name: name.into(),
            target: target.into(),
            kind,
            input_mode,
        }
    }
}

/// Neuropathy and PAD measures and the composite scores, thermal only, plus
/// visually supplemented variants of the two neuropathy tasks.
pub fn default_tasks() -> Vec<PredictionTask> {
    use InputMode::*;
    use TaskKind::*;
    vec![
        PredictionTask::new("mtcns_regression", "mtcns", Regression, ThermalOnly),
        PredictionTask::new("neuropathy_classification", "neuropathy", Binary, ThermalOnly),
        PredictionTask::new("tbi_regression", "tbi", Regression, ThermalOnly),
        PredictionTask::new("pad_history_classification", "pad_clinical_history", Binary, ThermalOnly),
        PredictionTask::new("podus_ge1_classification", "podus_ge1", Binary, ThermalOnly),
        PredictionTask::new("sign_high_risk_classification", "sign_high_risk", Binary, ThermalOnly),
        PredictionTask::new("martins_mendes_regression", "martins_mendes", Regression, ThermalOnly),
        PredictionTask::new("mtcns_regression_visual", "mtcns", Regression, ThermalPlusVisual),
        PredictionTask::new("neuropathy_classification_visual", "neuropathy", Binary, ThermalPlusVisual),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    /// `(train, val, test)`; positive and summing to 1.
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            fractions: [0.7, 0.15, 0.15],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), PredictionError> {
        if self.fractions.iter().any(|&f| !(f > 0.0)) || (self.fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(PredictionError::InvalidSplit(format!(
                "fractions must be positive and sum to 1, got {:?}",
                self.fractions
            )));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes: validation and test get `floor(n·f)`,
    /// training takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let val = (n as f64 * self.fractions[1]).floor() as usize;
        let test = (n as f64 * self.fractions[2]).floor() as usize;
        (n - val - test, val, test)
    }
}

/// Index lists into the cohort, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded train/validation/test split of `n` items. With `classes` (binary
/// targets) the split is stratified: each class's share of the validation
/// and test sizes is allocated by largest remainder, and every class must
/// appear in every split.
pub fn split_dataset(n: usize, classes: Option<&[bool]>, spec: &SplitSpec) -> Result<DataSplit, PredictionError> {
    spec.validate()?;
    let (n_train, n_val, n_test) = spec.sizes(n);
    for (size, split) in [(n_train, "train"), (n_val, "validation"), (n_test, "test")] {
        if size == 0 {
            return Err(PredictionError::CohortTooSmall { n, split });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = DataSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    match classes {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            split.val = idx[..n_val].to_vec();
            split.test = idx[n_val..n_val + n_test].to_vec();
            split.train = idx[n_val + n_test..].to_vec();
        }
        Some(labels) => {
            assert_eq!(labels.len(), n, "one class label per item");
            let members: [Vec<usize>; 2] = [
                (0..n).filter(|&i| !labels[i]).collect(),
                (0..n).filter(|&i| labels[i]).collect(),
            ];
            let shares = [members[0].len() as f64 / n as f64, members[1].len() as f64 / n as f64];
            let val_sizes = largest_remainder(n_val, &shares);
            let test_sizes = largest_remainder(n_test, &shares);
            for (class, mut idx) in members.into_iter().enumerate() {
                idx.shuffle(&mut rng);
                let (v, t) = (val_sizes[class], test_sizes[class]);
                let class = class as u8;
                if idx.len() < v + t + 1 || v == 0 || t == 0 {
                    let split = if t == 0 {
                        "test"
                    } else if v == 0 {
                        "validation"
                    } else {
                        "train"
                    };
                    return Err(PredictionError::ClassAbsentInSplit { split, class });
                }
                split.val.extend_from_slice(&idx[..v]);
                split.test.extend_from_slice(&idx[v..v + t]);
                split.train.extend_from_slice(&idx[v + t..]);
            }
        }
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Visual image as `3×224×224` planar values in `[0, 1]`: black square
/// padding, bilinear resampling.
pub fn prepare_visual(img: &VisualImage) -> Vec<f32> {
    let (h, w) = img.dims();
    let pad = SquarePad::new(h, w);
    let mut out = Vec::with_capacity(3 * PLANE);
    for c in 0..3 {
        let plane: Vec<f32> = img.pixels()[c..].iter().step_by(3).map(|&v| v as f32 / 255.0).collect();
        out.extend(resize_bilinear(&pad.pad(&plane, 0.0), pad.side, pad.side, INPUT_SIZE, INPUT_SIZE));
    }
    out
}

/// Network inputs for one cohort; thermal channels always come first so a
/// thermal-only view is a prefix of a thermal-plus-visual input.
#[derive(Clone, Debug, Default)]
pub struct PredictionDataset {
    pub ids: Vec<String>,
    inputs: Vec<Vec<f32>>,
    channels: usize,
}

impl PredictionDataset {
    /// `visual` must be either empty (thermal channels only) or one image per
    /// grid.
    pub fn build(
        ids: Vec<String>,
        segmented: &[&ThermalGrid],
        visual: &[&VisualImage],
        window: TempWindow,
        mapping: ChannelMapping,
    ) -> Result<Self, PredictionError> {
        assert_eq!(ids.len(), segmented.len(), "one id per thermograph");
        assert!(visual.is_empty() || visual.len() == segmented.len(), "one visual image per thermograph");
        let mut inputs = Vec::with_capacity(ids.len());
        for (i, g) in segmented.iter().enumerate() {
            let mut x = prepare_input(g, window, mapping)?;
            if let Some(v) = visual.get(i) {
                x.extend(prepare_visual(v));
            }
            inputs.push(x);
        }
        Ok(PredictionDataset {
            ids,
            inputs,
            channels: if visual.is_empty() { 3 } else { 6 },
        })
    }

    /// From already prepared `channels×224×224` inputs.
    pub fn from_inputs(ids: Vec<String>, inputs: Vec<Vec<f32>>, channels: usize) -> Result<Self, PredictionError> {
        assert_eq!(ids.len(), inputs.len(), "one id per input");
        for x in &inputs {
            if x.len() != channels * PLANE {
                return Err(PredictionError::ShapeMismatch {
                    expected: channels * PLANE,
                    found: x.len(),
                });
            }
        }
        Ok(PredictionDataset { ids, inputs, channels })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn input(&self, i: usize, mode: InputMode) -> Result<&[f32], PredictionError> {
        let c = mode.channels();
        if c > self.channels {
            return Err(PredictionError::MissingVisual);
        }
        Ok(&self.inputs[i][..c * PLANE])
    }
}

/// One labelled network input.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub id: &'a str,
    pub input: &'a [f32],
    pub target: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// 2×2 average-pooling stem, four stride-2 conv blocks, global pooling
    /// and a linear head.
    #[default]
    Custom,
    /// The autoencoder's encoder (initialized from its weights) followed by
    /// one stride-2 conv block, global pooling and a linear head.
    Pretrained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub backbone: Backbone,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub split: SplitSpec,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            backbone: Backbone::Custom,
            learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 30,
            patience: 10,
            split: SplitSpec::default(),
            seed: 0,
        }
    }
}

fn build_network(backbone: Backbone, channels: usize, seed: u64) -> Sequential {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match backbone {
        Backbone::Custom => Sequential::new()
            .with(AvgPool2::default())
            .with(Conv2d::new("block1", channels, 16, 3, 2, 1, &mut rng).without_input_grad())
            .with(Relu::default())
            .with(Conv2d::new("block2", 16, 32, 3, 2, 1, &mut rng))
            .with(Relu::default())
            .with(Conv2d::new("block3", 32, 32, 3, 2, 1, &mut rng))
            .with(Relu::default())
            .with(Conv2d::new("block4", 32, 64, 3, 2, 1, &mut rng))
            .with(Relu::default())
            .with(GlobalAvgPool::default())
            .with(Linear::new("head", 64, 1, &mut rng)),
        Backbone::Pretrained => Sequential::new()
            .with(Conv2d::new("enc1", channels, 16, 3, 2, 1, &mut rng).without_input_grad())
            .with(Relu::default())
            .with(Conv2d::new("enc2", 16, 32, 3, 2, 1, &mut rng))
            .with(Relu::default())
            .with(Conv2d::new("enc3", 32, 32, 3, 2, 1, &mut rng))
            .with(Relu::default())
            .with(Conv2d::new("block4", 32, 64, 3, 2, 1, &mut rng))
            .with(Relu::default())
            .with(GlobalAvgPool::default())
            .with(Linear::new("head", 64, 1, &mut rng)),
    }
}

/// Copies encoder weights by name. The first convolution's weights are
/// copied into the thermal input channels; visual channels keep their
/// random initialization.
fn copy_encoder(net: &mut Sequential, encoder: &ConvAeModel, channels: usize) {
    let source: BTreeMap<&str, &Param> = encoder.encoder_params().into_iter().map(|p| (p.name.as_str(), p)).collect();
    for p in net.params_mut() {
        let Some(src) = source.get(p.name.as_str()) else {
            continue;
        };
        if src.len() == p.len() {
            p.value.copy_from_slice(&src.value);
        } else if p.name == "enc1.weight" {
            // out_c × (in_c·3·3), thermal channels first.
            let per_out_src = src.len() / 16;
            let per_out = channels * 9;
            for o in 0..16 {
                p.value[o * per_out..o * per_out + per_out_src]
                    .copy_from_slice(&src.value[o * per_out_src..(o + 1) * per_out_src]);
            }
        }
    }
}

pub struct Predictor {
    kind: TaskKind,
    input_mode: InputMode,
    backbone: Backbone,
    /// Regression targets are standardized with the training mean and SD.
    target_mean: f64,
    target_sd: f64,
    net: Sequential,
}

impl Model for Predictor {
    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }
}

#[derive(Serialize, Deserialize)]
struct PredictorMeta {
    kind: TaskKind,
    input_mode: InputMode,
    backbone: Backbone,
    target_mean: f64,
    target_sd: f64,
}

impl Predictor {
    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn input_mode(&self) -> InputMode {
        self.input_mode
    }

    /// Probabilities for binary tasks, target-unit predictions for
    /// regression.
    pub fn predict(&self, inputs: &[&[f32]]) -> Result<Vec<f64>, PredictionError> {
        let c = self.input_mode.channels();
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(16) {
            for x in chunk {
                if x.len() != c * PLANE {
                    return Err(PredictionError::ShapeMismatch {
                        expected: c * PLANE,
                        found: x.len(),
                    });
                }
            }
            let y = self.net.forward(&Tensor::stack([c, INPUT_SIZE, INPUT_SIZE], chunk.iter().copied()));
            out.extend(y.data().iter().map(|&v| self.output(v)));
        }
        Ok(out)
    }

    fn output(&self, raw: f32) -> f64 {
        match self.kind {
            TaskKind::Binary => thermomark_nn::sigmoid(raw) as f64,
            TaskKind::Regression => raw as f64 * self.target_sd + self.target_mean,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictionError> {
        let meta = PredictorMeta {
            kind: self.kind,
            input_mode: self.input_mode,
            backbone: self.backbone,
            target_mean: self.target_mean,
            target_sd: self.target_sd,
        };
        let meta = serde_json::json!({ "kind": "predictor", "predictor": meta });
        checkpoint::save(path, &meta, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PredictionError> {
        let meta = checkpoint::read_meta(path)?;
        let meta: PredictorMeta = serde_json::from_value(meta["predictor"].clone())
            .map_err(|e| PredictionError::Config(format!("bad predictor header in {}: {e}", path.display())))?;
        let mut model = Predictor {
            kind: meta.kind,
            input_mode: meta.input_mode,
            backbone: meta.backbone,
            target_mean: meta.target_mean,
            target_sd: meta.target_sd,
            net: build_network(meta.backbone, meta.input_mode.channels(), 0),
        };
        checkpoint::load_into(path, &mut model)?;
        Ok(model)
    }
}

pub struct TrainedPredictor {
    pub model: Predictor,
    pub log: TrainingLog,
}

fn check_targets(kind: TaskKind, examples: &[Example]) -> Result<(), PredictionError> {
    if kind == TaskKind::Binary {
        if let Some(e) = examples.iter().find(|e| e.target != 0.0 && e.target != 1.0) {
            return Err(PredictionError::NonBinaryTarget(e.target));
        }
    }
    Ok(())
}

/// Adam with reduce-on-plateau halving and early stopping on validation
/// loss (binary cross-entropy or standardized MSE); the best-epoch weights
/// are restored. `encoder` is required for the pretrained backbone.
pub fn train_predictor(
    task: &PredictionTask,
    train: &[Example],
    val: &[Example],
    config: &PredictorConfig,
    encoder: Option<&ConvAeModel>,
) -> Result<TrainedPredictor, PredictionError> {
    if train.is_empty() {
        return Err(PredictionError::EmptyDataset("training"));
    }
    if val.is_empty() {
        return Err(PredictionError::EmptyDataset("validation"));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(PredictionError::Config("batch_size and learning_rate must be positive".into()));
    }
    check_targets(task.kind, train)?;
    check_targets(task.kind, val)?;
    let channels = task.input_mode.channels();
    for e in train.iter().chain(val) {
        if e.input.len() != channels * PLANE {
            return Err(PredictionError::ShapeMismatch {
                expected: channels * PLANE,
                found: e.input.len(),
            });
        }
    }
    let (target_mean, target_sd) = match task.kind {
        TaskKind::Binary => (0.0, 1.0),
        TaskKind::Regression => {
            let n = train.len() as f64;
            let mean = train.iter().map(|e| e.target).sum::<f64>() / n;
            let var = train.iter().map(|e| (e.target - mean).powi(2)).sum::<f64>() / n;
            (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
        }
    };
    let mut net = build_network(config.backbone, channels, derive_seed(config.seed, 0x11));
    if config.backbone == Backbone::Pretrained {
        let enc = encoder.ok_or_else(|| PredictionError::Config("pretrained backbone needs an autoencoder".into()))?;
        copy_encoder(&mut net, enc, channels);
    }
    let mut model = Predictor {
        kind: task.kind,
        input_mode: task.input_mode,
        backbone: config.backbone,
        target_mean,
        target_sd,
        net,
    };

    let shape = [channels, INPUT_SIZE, INPUT_SIZE];
    let scaled = |e: &Example| ((e.target - target_mean) / target_sd) as f32;
    let batch_loss = |model: &Predictor, batch: &[Example]| -> f64 {
        let x = Tensor::stack(shape, batch.iter().map(|e| e.input));
        let y = model.net.forward(&x);
        let t = Tensor::from_vec([batch.len(), 1, 1, 1], batch.iter().map(scaled).collect());
        match task.kind {
            TaskKind::Binary => loss::bce_with_logits(&y, &t).0,
            TaskKind::Regression => loss::mse(&y, &t).0,
        }
    };

    let mut opt = Adam::new(config.learning_rate);
    let mut schedule = PlateauSchedule::default();
    let mut stopper = EarlyStopping::new(config.patience.max(1));
    let mut plan = BatchPlan::new(train.len(), config.batch_size, derive_seed(config.seed, 0xba7c));
    let mut log = TrainingLog::default();
    let mut best = model.snapshot();
    for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        for batch in plan.epoch() {
            let x = Tensor::stack(shape, batch.iter().map(|&i| train[i].input));
            let t = Tensor::from_vec([batch.len(), 1, 1, 1], batch.iter().map(|&i| scaled(&train[i])).collect());
            model.zero_grad();
            let y = model.net.forward_train(&x);
            let (l, g) = match task.kind {
                TaskKind::Binary => loss::bce_with_logits(&y, &t),
                TaskKind::Regression => loss::mse(&y, &t),
            };
            model.net.backward(&g);
            opt.step(model.params_mut());
            total += l * batch.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = val
            .chunks(16)
            .map(|c| batch_loss(&model, c) * c.len() as f64)
            .sum::<f64>()
            / val.len() as f64;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_metric: None,
            lr: opt.lr,
        });
        opt.lr = schedule.observe(val_loss, opt.lr);
        match stopper.observe(epoch, val_loss) {
            Progress::Improved => best = model.snapshot(),
            Progress::Waiting => {}
            Progress::Stop => {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.best_epoch = stopper.best_epoch();
    model.restore(&best);
    Ok(TrainedPredictor { model, log })
}

/// Area under the ROC curve through the rank statistic; tied scores share
/// midranks, so ties count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, PredictionError> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    if scores.is_empty() {
        return Err(PredictionError::EmptyTestSet);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PredictionError::SingleClassTestSet);
    }
    let (ranks, _) = midranks(scores);
    let r_pos: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((r_pos - p * (p + 1.0) / 2.0) / (p * q))
}

pub fn mean_absolute_error(predictions: &[f64], targets: &[f64]) -> Result<f64, PredictionError> {
    assert_eq!(predictions.len(), targets.len(), "one target per prediction");
    if predictions.is_empty() {
        return Err(PredictionError::EmptyTestSet);
    }
    Ok(predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / predictions.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: String,
    /// `auc` or `mae`.
    pub metric: String,
    pub value: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

pub fn evaluate(model: &Predictor, task: &PredictionTask, test: &[Example]) -> Result<EvalResult, PredictionError> {
    if test.is_empty() {
        return Err(PredictionError::EmptyTestSet);
    }
    check_targets(task.kind, test)?;
    let inputs: Vec<&[f32]> = test.iter().map(|e| e.input).collect();
    let preds = model.predict(&inputs)?;
    let (metric, value) = match task.kind {
        TaskKind::Binary => {
            let labels: Vec<bool> = test.iter().map(|e| e.target == 1.0).collect();
            ("auc", auc(&preds, &labels)?)
        }
        TaskKind::Regression => {
            let targets: Vec<f64> = test.iter().map(|e| e.target).collect();
            ("mae", mean_absolute_error(&preds, &targets)?)
        }
    };
    Ok(EvalResult {
        task: task.name.clone(),
        metric: metric.into(),
        value,
        n_train: 0,
        n_val: 0,
        n_test: test.len(),
        seed: 0,
    })
}

pub struct TaskRun {
    pub eval: EvalResult,
    pub split: DataSplit,
    /// Participant ids per split.
    pub split_ids: [Vec<String>; 3],
    pub trained: TrainedPredictor,
}

/// Split (stratified for binary tasks), train and evaluate one task.
/// `targets[i]` belongs to `dataset.ids[i]`; missing targets are dropped
/// before splitting.
pub fn run_task(
    task: &PredictionTask,
    dataset: &PredictionDataset,
    targets: &[Option<f64>],
    config: &PredictorConfig,
    encoder: Option<&ConvAeModel>,
) -> Result<TaskRun, PredictionError> {
    assert_eq!(targets.len(), dataset.len(), "one target slot per participant");
    let mut examples = Vec::new();
    for (i, t) in targets.iter().enumerate() {
        if let Some(t) = t.filter(|t| t.is_finite()) {
            examples.push(Example {
                id: &dataset.ids[i],
                input: dataset.input(i, task.input_mode)?,
                target: t,
            });
        }
    }
    check_targets(task.kind, &examples)?;
    let classes: Option<Vec<bool>> = (task.kind == TaskKind::Binary).then(|| examples.iter().map(|e| e.target == 1.0).collect());
    let split = split_dataset(examples.len(), classes.as_deref(), &config.split)?;
    let pick = |idx: &[usize]| -> Vec<Example> { idx.iter().map(|&i| examples[i]).collect() };
    let (train, val, test) = (pick(&split.train), pick(&split.val), pick(&split.test));

    let ids = |s: &[Example]| -> Vec<String> { s.iter().map(|e| e.id.to_string()).collect() };
    let split_ids = [ids(&train), ids(&val), ids(&test)];
    let seen: BTreeSet<&String> = split_ids[0].iter().chain(&split_ids[1]).collect();
    assert!(split_ids[2].iter().all(|id| !seen.contains(id)), "test ids overlap training or validation ids");

    let trained = train_predictor(task, &train, &val, config, encoder)?;
    let mut eval = evaluate(&trained.model, task, &test)?;
    eval.n_train = train.len();
    eval.n_val = val.len();
    eval.seed = config.seed;
    Ok(TaskRun {
        eval,
        split,
        split_ids,
        trained,
    })
}

/// Name of the cluster-label task.
pub const CLUSTER_TASK: &str = "cluster_label";

/// Predicts membership of cluster 1 from the thermal channels and reports
/// the test AUC.
pub fn cluster_label_sensitivity(
    dataset: &PredictionDataset,
    assignments: &BTreeMap<String, usize>,
    config: &PredictorConfig,
    encoder: Option<&ConvAeModel>,
) -> Result<EvalResult, PredictionError> {
    let task = PredictionTask::new(CLUSTER_TASK, "cluster", TaskKind::Binary, InputMode::ThermalOnly);
    let targets: Vec<Option<f64>> = dataset
        .ids
        .iter()
        .map(|id| assignments.get(id).map(|&c| if c == 1 { 1.0 } else { 0.0 }))
        .collect();
    Ok(run_task(&task, dataset, &targets, config, encoder)?.eval)
}

/// Shuffles present targets among participants (missing slots stay put).
pub fn permute_targets(targets: &[Option<f64>], seed: u64) -> Vec<Option<f64>> {
    let mut present: Vec<f64> = targets.iter().flatten().copied().collect();
    present.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut it = present.into_iter();
    targets.iter().map(|t| t.and_then(|_| it.next())).collect()
}

/// Writes evaluation results as a JSON array.
pub fn write_eval_results(path: &Path, results: &[serde_json::Value]) -> Result<(), PredictionError> {
    let text = serde_json::to_string_pretty(results).expect("results serialize");
    std::fs::write(path, text).map_err(|source| PredictionError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_follow_floor_rule() {
        let s = split_dataset(282, None, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (198, 42, 42));
    }

    #[test]
    fn stratified_split_keeps_totals() {
        let labels: Vec<bool> = (0..282).map(|i| i < 123).collect();
        let s = split_dataset(282, Some(&labels), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (198, 42, 42));
        for part in [&s.train, &s.val, &s.test] {
            assert!(part.iter().any(|&i| labels[i]) && part.iter().any(|&i| !labels[i]));
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let labels = vec![true; 40];
        let e = split_dataset(40, Some(&labels), &SplitSpec::default()).unwrap_err();
        assert!(matches!(e, PredictionError::ClassAbsentInSplit { class: 0, .. }), "{e}");
    }

    #[test]
    fn tiny_cohort_is_rejected() {
        let e = split_dataset(5, None, &SplitSpec::default()).unwrap_err();
        assert!(matches!(e, PredictionError::CohortTooSmall { .. }));
    }

    #[test]
    fn auc_hand_instance() {
        let s = [0.9, 0.8, 0.4, 0.3];
        assert_eq!(auc(&s, &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc(&s, &[true, false, true, false]).unwrap(), 0.75);
        assert_eq!(auc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert!(matches!(auc(&s, &[true; 4]), Err(PredictionError::SingleClassTestSet)));
    }

    #[test]
    fn networks_reduce_to_a_scalar() {
        for (backbone, c) in [(Backbone::Custom, 3), (Backbone::Custom, 6), (Backbone::Pretrained, 6)] {
            let net = build_network(backbone, c, 1);
            let out = *net.shape_trace([2, c, INPUT_SIZE, INPUT_SIZE]).last().unwrap();
            assert_eq!(out, [2, 1, 1, 1]);
        }
    }

    #[test]
    fn permutation_keeps_missing_slots() {
        let t = vec![Some(1.0), None, Some(2.0), Some(3.0)];
        let p = permute_targets(&t, 3);
        assert!(p[1].is_none());
        let mut v: Vec<f64> = p.iter().flatten().copied().collect();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![1.0, 2.0, 3.0]);
    }
}
