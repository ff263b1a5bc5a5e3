//! Bookkeeping shared by the network trainers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Task metric on the validation split (IoU, MSE, AUC, ...), if any.
    pub val_metric: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn all_losses_finite(&self) -> bool {
        self.epochs
            .iter()
            .all(|e| e.train_loss.is_finite() && e.val_loss.is_finite())
    }
}

/// Deterministic per-epoch shuffling into mini-batches of indices.
pub struct BatchPlan {
    rng: ChaCha8Rng,
    n: usize,
    batch_size: usize,
}

impl BatchPlan {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        BatchPlan {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n,
            batch_size: batch_size.max(1),
        }
    }

    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.shuffle(&mut self.rng);
        idx.chunks(self.batch_size).map(|c| c.to_vec()).collect()
    }
}

/// Mixes a base seed with a stream label so sub-tasks get independent seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
