//! Plantar thermography biomarker pipeline.

pub mod imaging;
pub mod ingest;
pub mod segmentation;
pub mod training;
pub mod synthdata;
pub mod representation;
pub mod clinical;
pub mod clustering;
pub mod association;
pub mod prediction;
pub mod plots;
