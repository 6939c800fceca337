//! The JSON config file shared by the build and eval commands.
//!
//! Every section is optional and falls back to defaults; unknown keys are
//! rejected at every level. Values resolve with precedence
//! flags > environment > file > defaults (see [`Config::apply_env`]).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    AnnotatorClient, BandConfig, BuildOptions, BuildSettings, MockAnnotator, RemoteAnnotator,
    SplitConfig,
};
use crate::degradation::SamplingConfig;
use crate::eval::{
    EvalOptions, EvalSettings, ModelClient, RemoteModelClient, ThresholdMockClient,
    ThresholdMockConfig,
};
use crate::http::EndpointConfig;

pub const ENV_CONFIG: &str = "ROBUSTLAB_CONFIG";
pub const ENV_SEED: &str = "ROBUSTLAB_SEED";
pub const ENV_WORKERS: &str = "ROBUSTLAB_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotatorConfig {
    pub kind: AnnotatorKind,
    /// Model name sent to the remote endpoint.
    pub model: String,
    /// Mock seed; defaults to the run seed.
    pub seed: Option<u64>,
    pub endpoint: EndpointConfig,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self {
            kind: AnnotatorKind::Mock,
            model: "gpt-4o".into(),
            seed: None,
            endpoint: EndpointConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    ThresholdMock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub threshold_mock: ThresholdMockConfig,
    pub endpoint: EndpointConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParallelismConfig {
    pub workers: usize,
}

impl Default for ParallelismConfig {
    fn default() -> Self {
        Self { workers: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub degradation: SamplingConfig,
    pub bands: BandConfig,
    pub annotator: AnnotatorConfig,
    pub split: SplitConfig,
    pub parallelism: ParallelismConfig,
    pub build: BuildOptions,
    pub eval: EvalOptions,
    pub model: ModelConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Config = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = ConfigError::Invalid;
        self.degradation.validate().map_err(|e| invalid(e.to_string()))?;
        self.bands.validate().map_err(invalid)?;
        self.build.templates.validate().map_err(invalid)?;
        let f = self.split.train_fraction;
        if !(0.0..=1.0).contains(&f) {
            return Err(invalid(format!("split.train_fraction {f} is outside [0, 1]")));
        }
        if self.parallelism.workers == 0 {
            return Err(invalid("parallelism.workers must be at least 1".into()));
        }
        if self.eval.factors.is_empty() || self.eval.factors.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(invalid("eval.factors must be non-empty and lie in [0, 1]".into()));
        }
        if self.annotator.kind == AnnotatorKind::Remote && self.annotator.endpoint.url.is_none() {
            return Err(invalid("annotator.endpoint.url is required for a remote annotator".into()));
        }
        if self.model.kind == ModelKind::Remote && self.model.endpoint.url.is_none() {
            return Err(invalid("model.endpoint.url is required for a remote model".into()));
        }
        Ok(())
    }

    /// Overrides seed and worker count from environment variables.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get(ENV_SEED) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{ENV_SEED}={v} is not an integer")))?;
        }
        if let Some(v) = get(ENV_WORKERS) {
            self.parallelism.workers = v
                .trim()
                .parse()
                .ok()
                .filter(|&w: &usize| w > 0)
                .ok_or_else(|| ConfigError::Invalid(format!("{ENV_WORKERS}={v} is not a positive integer")))?;
        }
        Ok(())
    }

    pub fn build_settings(&self) -> BuildSettings {
        BuildSettings {
            seed: self.seed,
            sampling: self.degradation.clone(),
            bands: self.bands.clone(),
            split: self.split.clone(),
            options: self.build.clone(),
            workers: self.parallelism.workers,
        }
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            seed: self.seed,
            sampling: self.degradation.clone(),
            options: self.eval.clone(),
            workers: self.parallelism.workers,
        }
    }

    pub fn annotator(&self) -> Result<Box<dyn AnnotatorClient>, ConfigError> {
        Ok(match self.annotator.kind {
            AnnotatorKind::Mock => Box::new(MockAnnotator::new(self.annotator.seed.unwrap_or(self.seed))),
            AnnotatorKind::Remote => Box::new(
                RemoteAnnotator::new(self.annotator.model.clone(), &self.annotator.endpoint)
                    .map_err(ConfigError::Invalid)?,
            ),
        })
    }

    pub fn model_client(&self) -> Result<Box<dyn ModelClient>, ConfigError> {
        Ok(match self.model.kind {
            ModelKind::ThresholdMock => Box::new(ThresholdMockClient::new(
                self.model.threshold_mock.clone(),
                self.seed,
            )),
            ModelKind::Remote => Box::new(
                RemoteModelClient::new(&self.model.endpoint).map_err(ConfigError::Invalid)?,
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_defaults() {
        assert_eq!(Config::from_json("{}").unwrap(), Config::default());
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        assert!(Config::from_json(r#"{"colour": 1}"#).is_err());
        assert!(Config::from_json(r#"{"bands": {"short_words": 10, "x": 1}}"#).is_err());
        assert!(Config::from_json(r#"{"annotator": {"endpoint": {"uri": "x"}}}"#).is_err());
    }

    #[test]
    fn sections_parse() {
        let c = Config::from_json(
            r#"{"seed": 5, "split": {"train_fraction": 0.5}, "parallelism": {"workers": 2},
                "eval": {"factors": [0, 1], "normalize_total": 1.0},
                "model": {"kind": "threshold_mock", "threshold_mock": {"threshold": 0.3}}}"#,
        )
        .unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.split.train_fraction, 0.5);
        assert_eq!(c.eval_settings().workers, 2);
        assert_eq!(c.model.threshold_mock.threshold, 0.3);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_json(r#"{"parallelism": {"workers": 0}}"#).is_err());
        assert!(Config::from_json(r#"{"split": {"train_fraction": 1.5}}"#).is_err());
        assert!(Config::from_json(r#"{"annotator": {"kind": "remote"}}"#).is_err());
        assert!(Config::from_json(r#"{"degradation": {"min_count": 3, "max_count": 2}}"#).is_err());
    }

    #[test]
    fn env_overrides_file() {
        let mut c = Config::from_json(r#"{"seed": 1}"#).unwrap();
        c.apply_env(|k| match k {
            ENV_SEED => Some("9".into()),
            ENV_WORKERS => Some("3".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!((c.seed, c.parallelism.workers), (9, 3));
        assert!(c.apply_env(|_| Some("x".into())).is_err());
    }
}
