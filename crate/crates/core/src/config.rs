//! The experiment configuration file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::GeneratorConfig;
use crate::error::{Error, Result};
use crate::losses::DgVariant;
use crate::metrics::PredClsMode;
use crate::numeric::SgdConfig;
use crate::split::{LabelFilter, SplitConfig};
use crate::trainer::TrainConfig;

/// Per-variant overrides on top of the shared training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub variant: DgVariant,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub adversarial: Option<SgdConfig>,
    #[serde(default)]
    pub discriminator_steps: Option<usize>,
}

impl VariantConfig {
    pub fn plain(variant: DgVariant) -> Self {
        Self { variant, lambda: None, adversarial: None, discriminator_steps: None }
    }

    pub fn resolve(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            variant: self.variant,
            lambda: self.lambda.or(base.lambda),
            adversarial: self.adversarial.unwrap_or(base.adversarial),
            discriminator_steps: self.discriminator_steps.unwrap_or(base.discriminator_steps),
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub mode: PredClsMode,
    /// Applied to the dataset before splitting.
    pub filter: LabelFilter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub split: SplitConfig,
    /// Settings shared by every variant; `train.variant` and `train.lambda`
    /// are superseded by the entries of `variants`.
    pub train: TrainConfig,
    pub variants: Vec<VariantConfig>,
    pub metrics: MetricsConfig,
}

/// Regularizer weights tuned for the default synthetic dataset and the
/// default training budget.
fn desk_lambda(variant: DgVariant) -> Option<f64> {
    match variant {
        DgVariant::None => None,
        DgVariant::CadgJsd => Some(5.0),
        DgVariant::AdgKld | DgVariant::CadgKld | DgVariant::DeepC => Some(0.5),
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            variants: DgVariant::ALL
                .into_iter()
                .map(|v| VariantConfig { lambda: desk_lambda(v), ..VariantConfig::plain(v) })
                .collect(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Validation(format!("config serialization: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.split.validate()?;
        if self.variants.is_empty() {
            return Err(Error::Validation("at least one variant is required".into()));
        }
        for (j, v) in self.variants.iter().enumerate() {
            if self.variants[..j].iter().any(|w| w.variant == v.variant) {
                return Err(Error::Validation(format!("variant {} listed twice", v.variant.label())));
            }
            v.resolve(&self.train).validate()?;
        }
        Ok(())
    }

    /// Replaces the generator, split and training seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.generator.seed = seed;
        self.split.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn train_configs(&self) -> Vec<TrainConfig> {
        self.variants.iter().map(|v| v.resolve(&self.train)).collect()
    }
}
