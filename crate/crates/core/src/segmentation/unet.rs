//! U-Net foot segmenter trained on registered visual images.
//!
//! Images are padded to a square, resampled to `input_size` and segmented
//! there; logits are resampled bilinearly back to the native grid before
//! thresholding, so the boundary is located with sub-pixel precision.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thermomark_nn::{
    checkpoint, loss, sigmoid, Adam, Conv2d, ConvTranspose2d, EarlyStopping, Layer, MaxPool2, Model, Param,
    PlateauSchedule, Progress, Relu, Sequential, Tensor,
};

use crate::imaging::{resize_area, resize_bilinear, SquarePad};
use crate::ingest::VisualImage;
use crate::segmentation::{iou, BinaryMask, SegmentationError};
use crate::training::{BatchPlan, EpochRecord, TrainingLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    /// Number of down-sampling levels.
    pub depth: usize,
    pub base_channels: usize,
    /// Side of the square network input; must be a multiple of `2^depth`.
    pub input_size: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-IoU improvement before stopping.
    pub patience: usize,
    /// Weight of the soft-overlap term added to binary cross-entropy.
    pub dice_weight: f64,
    /// Fraction of pairs held out by [`split_pairs`].
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            depth: 4,
            base_channels: 16,
            input_size: 64,
            learning_rate: 2e-3,
            batch_size: 4,
            max_epochs: 60,
            patience: 10,
            dice_weight: 1.0,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

fn conv_block(name: &str, in_c: usize, out_c: usize, rng: &mut ChaCha8Rng, first: bool) -> Sequential {
    let mut c1 = Conv2d::new(&format!("{name}.conv1"), in_c, out_c, 3, 1, 1, rng);
    if first {
        c1 = c1.without_input_grad();
    }
    Sequential::new()
        .with(c1)
        .with(Relu::default())
        .with(Conv2d::new(&format!("{name}.conv2"), out_c, out_c, 3, 1, 1, rng))
        .with(Relu::default())
}

/// Encoder–decoder with skip connections producing one logit per pixel.
pub struct SegmenterModel {
    config: SegmenterConfig,
    down: Vec<Sequential>,
    pools: Vec<MaxPool2>,
    bottleneck: Sequential,
    /// Decoder stages, deepest first.
    ups: Vec<ConvTranspose2d>,
    decoders: Vec<Sequential>,
    head: Conv2d,
}

impl SegmenterModel {
    pub fn new(config: SegmenterConfig) -> Result<Self, SegmentationError> {
        let stride = 1usize << config.depth.min(16);
        if config.depth == 0 || config.depth > 8 || config.input_size == 0 || config.input_size % stride != 0 {
            return Err(SegmentationError::Config(format!(
                "input_size {} must be a positive multiple of 2^depth (depth {})",
                config.input_size, config.depth
            )));
        }
        if config.base_channels == 0 || config.batch_size == 0 {
            return Err(SegmentationError::Config("base_channels and batch_size must be positive".into()));
        }
        if !(config.learning_rate > 0.0) {
            return Err(SegmentationError::Config("learning_rate must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let ch = |l: usize| config.base_channels << l;
        let mut down = Vec::new();
        let mut pools = Vec::new();
        let mut in_c = 3;
        for l in 0..config.depth {
            down.push(conv_block(&format!("down{l}"), in_c, ch(l), &mut rng, l == 0));
            pools.push(MaxPool2::default());
            in_c = ch(l);
        }
        let bottleneck = conv_block("bottleneck", in_c, ch(config.depth), &mut rng, false);
        let mut ups = Vec::new();
        let mut decoders = Vec::new();
        for l in (0..config.depth).rev() {
            ups.push(ConvTranspose2d::new(&format!("up{l}"), ch(l + 1), ch(l), 2, 2, 0, 0, &mut rng));
            decoders.push(conv_block(&format!("dec{l}"), 2 * ch(l), ch(l), &mut rng, false));
        }
        let head = Conv2d::new("head", ch(0), 1, 1, 1, 0, &mut rng);
        Ok(SegmenterModel {
            config,
            down,
            pools,
            bottleneck,
            ups,
            decoders,
            head,
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    /// Logits `[n, 1, s, s]` for inputs `[n, 3, s, s]`.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x.clone();
        for (block, pool) in self.down.iter().zip(&self.pools) {
            h = block.forward(&h);
            let pooled = pool.forward(&h);
            skips.push(h);
            h = pooled;
        }
        h = self.bottleneck.forward(&h);
        for ((up, dec), skip) in self.ups.iter().zip(&self.decoders).zip(skips.iter().rev()) {
            h = up.forward(&h);
            h = dec.forward(&Tensor::concat_channels(&h, skip));
        }
        self.head.forward(&h)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x.clone();
        for (block, pool) in self.down.iter_mut().zip(&mut self.pools) {
            h = block.forward_train(&h);
            let pooled = pool.forward_train(&h);
            skips.push(h);
            h = pooled;
        }
        h = self.bottleneck.forward_train(&h);
        for ((up, dec), skip) in self.ups.iter_mut().zip(&mut self.decoders).zip(skips.iter().rev()) {
            h = up.forward_train(&h);
            h = dec.forward_train(&Tensor::concat_channels(&h, skip));
        }
        self.head.forward_train(&h)
    }

    fn backward(&mut self, grad: &Tensor) {
        let depth = self.config.depth;
        let mut g = self.head.backward(grad);
        let mut skip_grads: Vec<Option<Tensor>> = (0..depth).map(|_| None).collect();
        for j in (0..depth).rev() {
            let gc = self.decoders[j].backward(&g);
            let c_up = gc.c() / 2;
            let (g_up, g_skip) = gc.split_channels(c_up);
            skip_grads[depth - 1 - j] = Some(g_skip);
            g = self.ups[j].backward(&g_up);
        }
        g = self.bottleneck.backward(&g);
        for l in (0..depth).rev() {
            g = self.pools[l].backward(&g);
            g.add_assign(skip_grads[l].as_ref().expect("skip gradient"));
            g = self.down[l].backward(&g);
        }
    }

    fn input_tensor(&self, images: &[&VisualImage]) -> Tensor {
        let s = self.config.input_size;
        let planes: Vec<Vec<f32>> = images.iter().map(|img| visual_planes(img, s)).collect();
        Tensor::stack([3, s, s], planes.iter().map(|p| p.as_slice()))
    }

    /// Foreground probabilities on the native pixel grid of each image.
    pub fn predict_probabilities(&self, images: &[&VisualImage]) -> Vec<Vec<f32>> {
        let s = self.config.input_size;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(8) {
            let logits = self.forward(&self.input_tensor(chunk));
            for (i, img) in chunk.iter().enumerate() {
                let pad = SquarePad::new(img.height(), img.width());
                let native = resize_bilinear(logits.sample(i), s, s, pad.side, pad.side);
                out.push(pad.crop(&native).into_iter().map(sigmoid).collect());
            }
        }
        out
    }

    pub fn predict_probability(&self, image: &VisualImage) -> Vec<f32> {
        self.predict_probabilities(&[image]).pop().expect("one image")
    }

    pub fn predict_mask(&self, image: &VisualImage) -> BinaryMask {
        let p = self.predict_probability(image);
        BinaryMask::from_probability(image.height(), image.width(), &p)
    }

    pub fn predict_masks(&self, images: &[&VisualImage]) -> Vec<BinaryMask> {
        self.predict_probabilities(images)
            .into_iter()
            .zip(images)
            .map(|(p, img)| BinaryMask::from_probability(img.height(), img.width(), &p))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), SegmentationError> {
        let meta = serde_json::json!({ "kind": "unet", "config": self.config });
        checkpoint::save(path, &meta, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SegmentationError> {
        let meta = checkpoint::read_meta(path)?;
        let config: SegmenterConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| SegmentationError::Io(format!("{}: bad segmenter header: {e}", path.display())))?;
        let mut model = SegmenterModel::new(config)?;
        checkpoint::load_into(path, &mut model)?;
        Ok(model)
    }
}

impl Model for SegmenterModel {
    fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = Vec::new();
        for b in &self.down {
            out.extend(b.params());
        }
        out.extend(self.bottleneck.params());
        for (u, d) in self.ups.iter().zip(&self.decoders) {
            out.extend(u.params());
            out.extend(d.params());
        }
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        for b in &mut self.down {
            out.extend(b.params_mut());
        }
        out.extend(self.bottleneck.params_mut());
        for (u, d) in self.ups.iter_mut().zip(&mut self.decoders) {
            out.extend(u.params_mut());
            out.extend(d.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }
}

/// Channel-planar unit-interval RGB, padded with black and resampled to `s×s`.
fn visual_planes(img: &VisualImage, s: usize) -> Vec<f32> {
    let (h, w) = img.dims();
    let pad = SquarePad::new(h, w);
    let mut out = Vec::with_capacity(3 * s * s);
    for c in 0..3 {
        let plane: Vec<f32> = img.pixels().chunks(3).map(|px| px[c] as f32 / 255.0).collect();
        out.extend(resize_bilinear(&pad.pad(&plane, 0.0), pad.side, pad.side, s, s));
    }
    out
}

/// Soft training target: the fraction of each network pixel covered by foot.
fn mask_target(mask: &BinaryMask, s: usize) -> Vec<f32> {
    let (h, w) = mask.dims();
    let pad = SquarePad::new(h, w);
    let plane: Vec<f32> = mask.values().iter().map(|&v| v as f32).collect();
    resize_area(&pad.pad(&plane, 0.0), pad.side, pad.side, s, s)
}

pub struct TrainedSegmenter {
    pub model: SegmenterModel,
    pub log: TrainingLog,
    /// Mean validation IoU of the restored best epoch.
    pub val_iou: f64,
}

/// Deterministically shuffles and splits pairs into (train, validation).
/// The validation share is rounded down but kept at one or more pairs.
pub fn split_pairs<T: Clone>(pairs: &[T], val_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((pairs.len() as f64 * val_fraction).floor() as usize)
        .max(1)
        .min(pairs.len().saturating_sub(1));
    let val = idx[..n_val].iter().map(|&i| pairs[i].clone()).collect();
    let train = idx[n_val..].iter().map(|&i| pairs[i].clone()).collect();
    (train, val)
}

fn check_pairs(pairs: &[(VisualImage, BinaryMask)]) -> Result<(), SegmentationError> {
    for (img, mask) in pairs {
        if img.dims() != mask.dims() {
            return Err(SegmentationError::DimensionMismatch {
                expected: img.dims(),
                found: mask.dims(),
            });
        }
    }
    Ok(())
}

fn mean_iou(model: &SegmenterModel, pairs: &[(VisualImage, BinaryMask)]) -> f64 {
    let images: Vec<&VisualImage> = pairs.iter().map(|(img, _)| img).collect();
    let preds = model.predict_masks(&images);
    preds
        .iter()
        .zip(pairs)
        .map(|(p, (_, m))| iou(p, m).expect("dimensions checked"))
        .sum::<f64>()
        / pairs.len() as f64
}

fn batch_loss(logits: &Tensor, target: &Tensor, dice_weight: f64) -> (f64, Tensor) {
    let (l_bce, mut grad) = loss::bce_with_logits(logits, target);
    let (l_dice, g_dice) = loss::soft_dice_with_logits(logits, target);
    let w = dice_weight as f32;
    for (g, d) in grad.data_mut().iter_mut().zip(g_dice.data()) {
        *g += w * d;
    }
    (l_bce + dice_weight * l_dice, grad)
}

/// Trains with Adam on BCE + soft Dice. The learning rate is halved when
/// validation loss plateaus; training stops once validation IoU has not
/// improved for `patience` epochs and the best-IoU weights are restored.
pub fn train_segmenter(
    train: &[(VisualImage, BinaryMask)],
    val: &[(VisualImage, BinaryMask)],
    config: &SegmenterConfig,
) -> Result<TrainedSegmenter, SegmentationError> {
    if train.is_empty() {
        return Err(SegmentationError::EmptyDataset("training"));
    }
    if val.is_empty() {
        return Err(SegmentationError::EmptyDataset("validation"));
    }
    check_pairs(train)?;
    check_pairs(val)?;
    let mut model = SegmenterModel::new(config.clone())?;
    let s = config.input_size;
    let stack = |pairs: &[(VisualImage, BinaryMask)]| -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
        pairs
            .iter()
            .map(|(img, m)| (visual_planes(img, s), mask_target(m, s)))
            .unzip()
    };
    let (tx, ty) = stack(train);
    let (vx, vy) = stack(val);
    let val_x = Tensor::stack([3, s, s], vx.iter().map(|v| v.as_slice()));
    let val_y = Tensor::stack([1, s, s], vy.iter().map(|v| v.as_slice()));

    let mut opt = Adam::new(config.learning_rate);
    let mut schedule = PlateauSchedule::default();
    let mut stopper = EarlyStopping::new(config.patience.max(1));
    let mut plan = BatchPlan::new(train.len(), config.batch_size, config.seed ^ 0x5e6);
    let mut log = TrainingLog::default();
    let mut best = (f64::NEG_INFINITY, model.snapshot());

    for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        for batch in plan.epoch() {
            let x = Tensor::stack([3, s, s], batch.iter().map(|&i| tx[i].as_slice()));
            let y = Tensor::stack([1, s, s], batch.iter().map(|&i| ty[i].as_slice()));
            model.zero_grad();
            let logits = model.forward_train(&x);
            let (l, g) = batch_loss(&logits, &y, config.dice_weight);
            model.backward(&g);
            opt.step(model.params_mut());
            total += l * batch.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = batch_loss(&model.forward(&val_x), &val_y, config.dice_weight).0;
        let val_iou = mean_iou(&model, val);
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_metric: Some(val_iou),
            lr: opt.lr,
        });
        opt.lr = schedule.observe(val_loss, opt.lr);
        match stopper.observe(epoch, 1.0 - val_iou) {
            Progress::Improved => best = (val_iou, model.snapshot()),
            Progress::Waiting => {}
            Progress::Stop => {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.best_epoch = stopper.best_epoch();
    model.restore(&best.1);
    Ok(TrainedSegmenter {
        model,
        log,
        val_iou: best.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SegmenterConfig {
        SegmenterConfig {
            depth: 2,
            base_channels: 4,
            input_size: 16,
            max_epochs: 2,
            ..Default::default()
        }
    }

    #[test]
    fn output_has_input_resolution() {
        let model = SegmenterModel::new(tiny()).unwrap();
        let img = VisualImage::new(10, 14, vec![128; 10 * 14 * 3]);
        let p = model.predict_probability(&img);
        assert_eq!(p.len(), 140);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(model.predict_mask(&img).dims(), (10, 14));
    }

    #[test]
    fn rejects_bad_geometry() {
        let cfg = SegmenterConfig {
            input_size: 20,
            depth: 3,
            ..tiny()
        };
        assert!(matches!(SegmenterModel::new(cfg), Err(SegmentationError::Config(_))));
    }

    #[test]
    fn empty_splits_are_errors() {
        let pair = (VisualImage::new(4, 4, vec![0; 48]), BinaryMask::zeros(4, 4));
        assert!(matches!(
            train_segmenter(&[], &[pair.clone()], &tiny()),
            Err(SegmentationError::EmptyDataset(_))
        ));
        assert!(matches!(
            train_segmenter(&[pair], &[], &tiny()),
            Err(SegmentationError::EmptyDataset(_))
        ));
    }

    #[test]
    fn split_keeps_one_validation_pair() {
        let (tr, va) = split_pairs(&(0..10).collect::<Vec<_>>(), 0.2, 3);
        assert_eq!((tr.len(), va.len()), (8, 2));
        let (tr, va) = split_pairs(&[1, 2], 0.0, 3);
        assert_eq!((tr.len(), va.len()), (1, 1));
    }
}
