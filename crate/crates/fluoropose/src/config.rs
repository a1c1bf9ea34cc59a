//! The single JSON configuration schema shared by all CLI subcommands.
//!
//! A config file is a versioned document with one section per subcommand;
//! missing sections fall back to the built-in defaults. Sections are
//! whole units: when present in the file, a section must list all of its
//! fields.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::OracleSuiteConfig;
use crate::mesh::InstrumentKind;
use crate::patch::AugmentationSpec;
use crate::phantom::PhantomPreset;
use crate::rectangle::RectangleTrialConfig;
use crate::registration::{RegistrationHarnessConfig, SimilarityMetric};
use crate::sampler::{GenerateOptions, SplitTag};

/// Version of the configuration document this build reads and writes.
pub const CONFIG_VERSION: u32 = 1;

/// Settings for training the patch keypoint regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchTrainSection {
    /// Rendered records to generate for training.
    pub count: usize,
    pub base_channels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Crop-offset distribution applied when building the training set.
    pub augmentation: AugmentationSpec,
}

impl Default for PatchTrainSection {
    fn default() -> Self {
        Self {
            count: 400,
            base_channels: 4,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            augmentation: AugmentationSpec::default(),
        }
    }
}

/// `train` subcommand settings for both tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainSection {
    pub rectangle: RectangleTrialConfig,
    pub patches: PatchTrainSection,
}

/// `register` subcommand settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterSection {
    /// Records to generate for the comparison.
    pub records: usize,
    pub harness: RegistrationHarnessConfig,
}

impl Default for RegisterSection {
    fn default() -> Self {
        Self {
            records: 25,
            harness: RegistrationHarnessConfig::new(SimilarityMetric::GradientCorrelation, 7),
        }
    }
}

/// The whole configuration document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppConfig {
    pub config_version: u32,
    #[serde(default = "default_generate")]
    pub generate: GenerateOptions,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default = "default_evaluate")]
    pub evaluate: OracleSuiteConfig,
    #[serde(default)]
    pub register: RegisterSection,
}

fn default_generate() -> GenerateOptions {
    GenerateOptions::new(
        1000,
        7,
        InstrumentKind::Screw,
        PhantomPreset::ShellSphere,
        SplitTag::Train,
    )
}

fn default_evaluate() -> OracleSuiteConfig {
    OracleSuiteConfig::new(vec![1, 2, 3], 5, 0.5, 7)
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            generate: default_generate(),
            train: TrainSection::default(),
            evaluate: default_evaluate(),
            register: RegisterSection::default(),
        }
    }
}

impl AppConfig {
    /// Parse a config document and verify its version.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: AppConfig = serde_json::from_str(text)?;
        if config.config_version != CONFIG_VERSION {
            return Err(Error::InvalidParameter(format!(
                "config version {} not supported (this build reads version {CONFIG_VERSION})",
                config.config_version
            )));
        }
        Ok(config)
    }

    /// Load a config file, or the defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_json(&std::fs::read_to_string(p)?),
            None => Ok(Self::default()),
        }
    }

    /// Serialize the document as pretty JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let config = AppConfig::default();
        let json = config.to_json().unwrap();
        let back = AppConfig::from_json(&json).unwrap();
        assert_eq!(back.config_version, CONFIG_VERSION);
        assert_eq!(back.generate, config.generate);
        assert_eq!(back.train, config.train);
        assert_eq!(back.evaluate.k_values, config.evaluate.k_values);
        assert_eq!(back.register.records, config.register.records);
    }

    #[test]
    fn minimal_document_uses_defaults() {
        let config = AppConfig::from_json("{\"config_version\":1}").unwrap();
        assert_eq!(config.generate, default_generate());
        assert_eq!(config.register.harness.registration.max_renders, 400);
    }

    #[test]
    fn unsupported_version_is_rejected() {
        assert!(AppConfig::from_json("{\"config_version\":99}").is_err());
    }

    #[test]
    fn section_overrides_are_read() {
        let json = r#"{
            "config_version": 1,
            "register": {
                "records": 5,
                "harness": {
                    "offset_mm": 2.0,
                    "offset_deg": 5.0,
                    "trials_per_record": 1,
                    "registration": {
                        "metric": "mutual-information",
                        "max_renders": 100,
                        "sigma0_px": 8.0,
                        "sigma0_deg": 4.0,
                        "lambda": null,
                        "seed": 3,
                        "anchor": [30.0, 24.0],
                        "region_pad_px": 4,
                        "mi_bins": 32
                    },
                    "master_seed": 3
                }
            }
        }"#;
        let config = AppConfig::from_json(json).unwrap();
        assert_eq!(config.register.records, 5);
        assert_eq!(config.register.harness.registration.max_renders, 100);
        assert_eq!(
            config.register.harness.registration.metric,
            SimilarityMetric::MutualInformation
        );
    }
}
