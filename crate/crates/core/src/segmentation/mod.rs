//! Foot segmentation: rater consensus, the U-Net segmenter, overlap scoring
//! and mask transfer onto registered thermal grids.

mod mask;
mod staple;
mod unet;

pub use mask::{iou, mask_thermal, BinaryMask};
pub use staple::{staple_consensus, RaterPerformance, StapleConfig, StapleResult};
pub use unet::{split_pairs, train_segmenter, SegmenterConfig, SegmenterModel, TrainedSegmenter};

#[derive(Debug, thiserror::Error)]
pub enum SegmentationError {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("mask value {value} at index {index} is not binary")]
    NonBinaryInput { index: usize, value: u8 },
    #[error("STAPLE needs at least 2 rater masks, got {0}")]
    TooFewRaters(usize),
    #[error("{0} split is empty")]
    EmptyDataset(&'static str),
    #[error("invalid segmenter configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Checkpoint(#[from] thermomark_nn::NnError),
}
