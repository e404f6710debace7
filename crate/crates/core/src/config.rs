//! Run configuration shared by the command-line front end.
//!
//! Settings come from three layers: command-line flags, an optional TOML
//! file, and built-in defaults, in that order of precedence.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ReferenceKind, ReferenceModel, ReferenceModelSpec};
use crate::render::Palette;

pub const DEFAULT_IMAGE_SIZE: usize = 112;
pub const DEFAULT_OUT: &str = "xssab-out";
pub const DEFAULT_LATENCY_PAIRS: usize = 100;
pub const CONFIG_ECHO_FILE: &str = "config.toml";

/// One layer of optional settings; also the TOML file schema.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigLayer {
    pub model: Option<String>,
    pub weights: Option<PathBuf>,
    pub data_root: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub bench: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub step: Option<f64>,
    pub threshold: Option<f64>,
    pub palette: Option<String>,
    pub workers: Option<usize>,
    pub explainers: Option<Vec<String>>,
    pub dump_arguments: Option<bool>,
    pub image_size: Option<usize>,
    pub embedding_dim: Option<usize>,
    pub pair_count: Option<usize>,
}

impl ConfigLayer {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::load(path, e.message().to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// `self` where set, otherwise `lower`.
    pub fn over(self, lower: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            model: self.model.or(lower.model),
            weights: self.weights.or(lower.weights),
            data_root: self.data_root.or(lower.data_root),
            pairs: self.pairs.or(lower.pairs),
            bench: self.bench.or(lower.bench),
            seed: self.seed.or(lower.seed),
            out: self.out.or(lower.out),
            step: self.step.or(lower.step),
            threshold: self.threshold.or(lower.threshold),
            palette: self.palette.or(lower.palette),
            workers: self.workers.or(lower.workers),
            explainers: self.explainers.or(lower.explainers),
            dump_arguments: self.dump_arguments.or(lower.dump_arguments),
            image_size: self.image_size.or(lower.image_size),
            embedding_dim: self.embedding_dim.or(lower.embedding_dim),
            pair_count: self.pair_count.or(lower.pair_count),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSource {
    EerFromPairs,
    Explicit(f64),
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    /// Reference model kind; when unset, the weight file decides, else
    /// `tiny-cnn`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_root: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bench: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub step: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub palette: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub explainers: Vec<String>,
    pub dump_arguments: bool,
    pub image_size: usize,
    pub embedding_dim: usize,
    pub pair_count: usize,
}

impl RunConfig {
    /// Resolves `layer` against the defaults and validates it.
    pub fn resolve(layer: ConfigLayer) -> Result<Self> {
        let cfg = Self {
            model: layer.model,
            weights: layer.weights,
            data_root: layer.data_root,
            pairs: layer.pairs,
            bench: layer.bench,
            seed: layer.seed.unwrap_or(0),
            out: layer.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            step: layer.step.unwrap_or(crate::dpr::DEFAULT_STEP),
            threshold: layer.threshold,
            palette: layer.palette.unwrap_or_else(|| "green-pink".into()),
            workers: layer.workers,
            explainers: layer
                .explainers
                .filter(|e| !e.is_empty())
                .unwrap_or_else(|| vec!["xssab".into(), "random".into()]),
            dump_arguments: layer.dump_arguments.unwrap_or(false),
            image_size: layer.image_size.unwrap_or(DEFAULT_IMAGE_SIZE),
            embedding_dim: layer
                .embedding_dim
                .unwrap_or(crate::model::TinyCnnConfig::DEFAULT_EMBEDDING_DIM),
            pair_count: layer.pair_count.unwrap_or(DEFAULT_LATENCY_PAIRS),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::Domain(format!(
                "step must lie in (0, 1], got {}",
                self.step
            )));
        }
        if let Some(t) = self.threshold {
            if !(t > -1.0 && t < 1.0) {
                return Err(Error::Domain(format!(
                    "threshold must lie in (-1, 1), got {t}"
                )));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Domain("workers must be at least 1".into()));
        }
        if self.image_size == 0 || self.embedding_dim == 0 || self.pair_count == 0 {
            return Err(Error::Domain(
                "image-size, embedding-dim and pair-count must be positive".into(),
            ));
        }
        if let Some(m) = &self.model {
            ReferenceKind::parse(m)?;
        }
        Palette::parse(&self.palette)?;
        Ok(())
    }

    pub fn threshold_source(&self) -> ThresholdSource {
        match self.threshold {
            Some(t) => ThresholdSource::Explicit(t),
            None => ThresholdSource::EerFromPairs,
        }
    }

    pub fn palette(&self) -> Palette {
        Palette::parse(&self.palette).expect("validated")
    }

    /// Loads `weights` when given, otherwise builds the seeded reference
    /// model named by `model`.
    pub fn build_model(&self) -> Result<ReferenceModel> {
        let requested = self
            .model
            .as_deref()
            .map(ReferenceKind::parse)
            .transpose()?;
        if let Some(path) = &self.weights {
            let model = ReferenceModel::load(path)?;
            if let Some(kind) = requested.filter(|&k| k != model.kind()) {
                return Err(Error::load(
                    path,
                    format!(
                        "file holds a {} model, config asks for {}",
                        model.kind().as_str(),
                        kind.as_str()
                    ),
                ));
            }
            return Ok(model);
        }
        let n = self.image_size;
        let spec = match requested.unwrap_or(ReferenceKind::TinyCnn) {
            ReferenceKind::TinyCnn => ReferenceModelSpec {
                embedding_dim: self.embedding_dim,
                ..ReferenceModelSpec::tiny_cnn(self.seed, n, n)
            },
            ReferenceKind::LinearToy => {
                ReferenceModelSpec::linear_toy(self.seed, n, n, self.embedding_dim)
            }
        };
        spec.build()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the effective config into `dir`.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_ECHO_FILE);
        fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))
    }

    pub fn require_data_root(&self) -> Result<&Path> {
        self.data_root
            .as_deref()
            .ok_or_else(|| Error::Contract("this command needs --data-root".into()))
    }

    pub fn require_pairs(&self) -> Result<&Path> {
        self.pairs
            .as_deref()
            .ok_or_else(|| Error::Contract("this command needs --pairs".into()))
    }
}
