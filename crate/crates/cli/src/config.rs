use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thermomark::association::VariableSchema;
use thermomark::clustering::TsneConfig;
use thermomark::ingest::TempWindow;
use thermomark::prediction::{PredictionTask, PredictorConfig};
use thermomark::representation::{ChannelMapping, ConvAeConfig};
use thermomark::segmentation::{SegmenterConfig, StapleConfig};
use thermomark::synthdata::CohortSpec;

/// Invalid or unreadable configuration; the process exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Cohort manifest; defaults to the one `synth` writes under the output
    /// directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preprocess {
    /// Temperature window `[lo, hi]` in °C mapped onto `[0, 1]`.
    pub window: [f32; 2],
    pub mapping: ChannelMapping,
}

impl Default for Preprocess {
    fn default() -> Self {
        let w = TempWindow::default();
        Preprocess {
            window: [w.lo(), w.hi()],
            mapping: ChannelMapping::Replicate,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationStage {
    pub staple: StapleConfig,
    pub unet: SegmenterConfig,
    /// Directory of rater masks named `<id>_r<k>.png`; defaults to `raters/`
    /// beside the manifest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raters_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringStage {
    /// z-score every latent feature before clustering.
    pub standardize: bool,
    /// Largest k on the elbow curve.
    pub k_max: usize,
    /// Fixed cluster count instead of the elbow choice.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Exemplars per cluster in the montage.
    pub exemplars: usize,
    pub tsne: TsneConfig,
}

impl Default for ClusteringStage {
    fn default() -> Self {
        ClusteringStage {
            standardize: false,
            k_max: 10,
            k: None,
            exemplars: 4,
            tsne: TsneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClinicalStage {
    /// Coefficient file; the shipped defaults when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssociationStage {
    /// Table rows; the default variable list when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variables: Option<Vec<VariableSchema>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictionStage {
    pub predictor: PredictorConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tasks: Option<Vec<PredictionTask>>,
    /// Also run the cluster-label task on permuted labels.
    pub permuted_control: bool,
}

impl Default for PredictionStage {
    fn default() -> Self {
        PredictionStage {
            predictor: PredictorConfig::default(),
            tasks: None,
            permuted_control: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Global seed; when set it replaces every stage seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub paths: Paths,
    pub synth: CohortSpec,
    pub preprocess: Preprocess,
    pub segmentation: SegmentationStage,
    pub convae: ConvAeConfig,
    pub clustering: ClusteringStage,
    pub clinical: ClinicalStage,
    pub association: AssociationStage,
    pub prediction: PredictionStage,
}

pub const DEFAULT_OUT: &str = "thermomark-out";

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies flag overrides and pushes the global seed into every stage.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, ConfigError> {
        if seed.is_some() {
            self.seed = seed;
        }
        if out.is_some() {
            self.paths.out = out;
        }
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.segmentation.unet.seed = s;
            self.convae.seed = s;
            self.clustering.tsne.seed = s;
            self.prediction.predictor.seed = s;
            self.prediction.predictor.split.seed = s;
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError(m));
        self.synth.validate().map_err(|e| ConfigError(format!("[synth] {e}")))?;
        self.window()?;
        self.prediction
            .predictor
            .split
            .validate()
            .map_err(|e| ConfigError(format!("[prediction.predictor.split] {e}")))?;
        if self.clustering.k_max < 3 {
            return bad("[clustering] k_max must be at least 3 for the elbow rule".into());
        }
        if self.clustering.k == Some(0) || self.clustering.k == Some(1) {
            return bad("[clustering] k must be at least 2".into());
        }
        if self.clustering.exemplars == 0 {
            return bad("[clustering] exemplars must be at least 1".into());
        }
        let u = &self.segmentation.unet;
        if !(0.0..1.0).contains(&u.val_fraction) || !(0.0..1.0).contains(&self.convae.val_fraction) {
            return bad("val_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn window(&self) -> Result<TempWindow, ConfigError> {
        let [lo, hi] = self.preprocess.window;
        TempWindow::new(lo, hi).map_err(|e| ConfigError(format!("[preprocess] {e}")))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    /// The configuration as recorded in provenance: everything that affects
    /// results, which excludes the output location.
    pub fn recorded(&self) -> PipelineConfig {
        let mut c = self.clone();
        c.paths.out = None;
        c
    }

    /// SHA-256 of the recorded configuration's JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.recorded()).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn customized_config_round_trips() {
        let mut c = PipelineConfig::default();
        c.seed = Some(3);
        c.paths.manifest = Some("cohort/manifest.csv".into());
        c.synth.n_participants = 40;
        c.synth.separation = 0.1 + 0.2;
        c.clustering.k = Some(3);
        c.segmentation.staple.prior = Some(0.3);
        c.prediction.tasks = Some(thermomark::prediction::default_tasks()[..2].to_vec());
        c.association.variables = Some(thermomark::association::default_schema()[..3].to_vec());
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("sead = 1").is_err());
        assert!(PipelineConfig::from_toml("[convae]\nepochs = 3").is_err());
        assert!(PipelineConfig::from_toml("[segmentation.staple]\ntolerance = 1").is_err());
        assert!(PipelineConfig::from_toml("[convae]\nmax_epochs = 3").is_ok());
    }

    #[test]
    fn global_seed_reaches_every_stage_and_the_hash() {
        let c = PipelineConfig::default().resolve(Some(11), None).unwrap();
        assert_eq!(
            (c.synth.seed, c.convae.seed, c.segmentation.unet.seed, c.prediction.predictor.split.seed),
            (11, 11, 11, 11)
        );
        let d = PipelineConfig::default().resolve(Some(12), None).unwrap();
        assert_ne!(c.hash(), d.hash());
        let e = PipelineConfig::default().resolve(Some(11), Some("elsewhere".into())).unwrap();
        assert_eq!(c.hash(), e.hash());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut c = PipelineConfig::default();
        c.preprocess.window = [40.0, 20.0];
        assert!(c.resolve(None, None).is_err());
        let mut c = PipelineConfig::default();
        c.synth.cluster_fractions = vec![0.5, 0.6];
        assert!(c.resolve(None, None).is_err());
    }
}
