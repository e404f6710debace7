//! Differentiable embedding models.
//!
//! [`ModelAdapter`] is the contract every backbone satisfies: a forward pass
//! producing raw features and a pullback that turns a cotangent on those
//! features into a gradient on the input pixels. Normalization of the
//! features is layered on top so that [`ModelAdapter::vjp`] is always the
//! gradient of `w · normalize(f(I))`.

mod counting;
mod linear;
mod tiny_cnn;
pub mod weights;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use counting::{CountingModel, PassCounts};
pub use linear::LinearToy;
pub use tiny_cnn::{TinyCnn, TinyCnnConfig};
pub use weights::{NamedTensor, WeightFile};

use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm, normalize, Embedding, ImageTensor, NORM_EPS};

/// Gradient with respect to an input image; same layout as the image.
pub type ImageGradient = ImageTensor;

pub trait ModelAdapter: Send + Sync {
    /// `(height, width)` of accepted inputs.
    fn input_shape(&self) -> (usize, usize);

    fn embedding_dim(&self) -> usize;

    /// Identifier stable across processes for identical weights.
    fn model_id(&self) -> String;

    /// Raw (unnormalized) features `f(I)`.
    fn features(&self, image: &ImageTensor) -> Result<Vec<f64>>;

    /// Runs the forward pass, asks `seed` for a cotangent on the produced
    /// features and returns `Jᵀ·cotangent` in the input layout.
    fn pullback(
        &self,
        image: &ImageTensor,
        seed: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>>;

    fn check_input(&self, image: &ImageTensor) -> Result<()> {
        if image.shape() != self.input_shape() {
            let (h, w) = self.input_shape();
            return Err(Error::Shape(format!(
                "model expects {h}x{w}x3 input, got {}x{}x3",
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// `normalize(f(I))`.
    fn embed(&self, image: &ImageTensor) -> Result<Embedding> {
        self.check_input(image)?;
        normalize(&self.features(image)?)
    }

    /// `∂(w · normalize(f(I))) / ∂I`.
    fn vjp(&self, image: &ImageTensor, w: &[f64]) -> Result<ImageGradient> {
        self.check_input(image)?;
        if w.len() != self.embedding_dim() {
            return Err(Error::Shape(format!(
                "cotangent has {} entries, embedding has {}",
                w.len(),
                self.embedding_dim()
            )));
        }
        let grad = self.pullback(image, &mut |f| normalization_cotangent(f, w))?;
        ImageTensor::new(image.height(), image.width(), grad)
    }
}

/// Cotangent on `f` of the scalar `w · f/‖f‖`: `(w − (w·u)u)/‖f‖`.
pub fn normalization_cotangent(f: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(f);
    if !norm.is_finite() || norm <= NORM_EPS {
        return Err(Error::DegenerateEmbedding {
            norm,
            eps: NORM_EPS,
        });
    }
    let unit: Vec<f64> = f.iter().map(|x| x / norm).collect();
    let proj = dot(w, &unit);
    Ok(w.iter()
        .zip(&unit)
        .map(|(wk, uk)| (wk - proj * uk) / norm)
        .collect())
}

impl<M: ModelAdapter + ?Sized> ModelAdapter for &M {
    fn input_shape(&self) -> (usize, usize) {
        (**self).input_shape()
    }
    fn embedding_dim(&self) -> usize {
        (**self).embedding_dim()
    }
    fn model_id(&self) -> String {
        (**self).model_id()
    }
    fn features(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        (**self).features(image)
    }
    fn pullback(
        &self,
        image: &ImageTensor,
        seed: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        (**self).pullback(image, seed)
    }
    fn embed(&self, image: &ImageTensor) -> Result<Embedding> {
        (**self).embed(image)
    }
    fn vjp(&self, image: &ImageTensor, w: &[f64]) -> Result<ImageGradient> {
        (**self).vjp(image, w)
    }
}

impl<M: ModelAdapter + ?Sized> ModelAdapter for Box<M> {
    fn input_shape(&self) -> (usize, usize) {
        (**self).input_shape()
    }
    fn embedding_dim(&self) -> usize {
        (**self).embedding_dim()
    }
    fn model_id(&self) -> String {
        (**self).model_id()
    }
    fn features(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        (**self).features(image)
    }
    fn pullback(
        &self,
        image: &ImageTensor,
        seed: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        (**self).pullback(image, seed)
    }
    fn embed(&self, image: &ImageTensor) -> Result<Embedding> {
        (**self).embed(image)
    }
    fn vjp(&self, image: &ImageTensor, w: &[f64]) -> Result<ImageGradient> {
        (**self).vjp(image, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    LinearToy,
    TinyCnn,
}

impl ReferenceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ReferenceKind::LinearToy => "linear-toy",
            ReferenceKind::TinyCnn => "tiny-cnn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear-toy" => Ok(ReferenceKind::LinearToy),
            "tiny-cnn" => Ok(ReferenceKind::TinyCnn),
            other => Err(Error::Domain(format!(
                "unknown reference model kind `{other}`"
            ))),
        }
    }
}

/// Recipe for a seeded reference model. Identical specs give bit-identical
/// weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModelSpec {
    pub kind: ReferenceKind,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub embedding_dim: usize,
}

impl ReferenceModelSpec {
    pub fn tiny_cnn(seed: u64, height: usize, width: usize) -> Self {
        Self {
            kind: ReferenceKind::TinyCnn,
            seed,
            height,
            width,
            embedding_dim: TinyCnnConfig::DEFAULT_EMBEDDING_DIM,
        }
    }

    pub fn linear_toy(seed: u64, height: usize, width: usize, embedding_dim: usize) -> Self {
        Self {
            kind: ReferenceKind::LinearToy,
            seed,
            height,
            width,
            embedding_dim,
        }
    }

    pub fn build(&self) -> Result<ReferenceModel> {
        match self.kind {
            ReferenceKind::LinearToy => Ok(ReferenceModel::Linear(LinearToy::seeded(
                self.seed,
                self.height,
                self.width,
                self.embedding_dim,
            )?)),
            ReferenceKind::TinyCnn => {
                let cfg = TinyCnnConfig {
                    height: self.height,
                    width: self.width,
                    embedding_dim: self.embedding_dim,
                    ..TinyCnnConfig::default()
                };
                Ok(ReferenceModel::Cnn(TinyCnn::seeded(self.seed, cfg)?))
            }
        }
    }
}

/// One of the bundled 64-bit reference models.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceModel {
    Linear(LinearToy),
    Cnn(TinyCnn),
}

impl ReferenceModel {
    fn inner(&self) -> &dyn ModelAdapter {
        match self {
            ReferenceModel::Linear(m) => m,
            ReferenceModel::Cnn(m) => m,
        }
    }

    pub fn kind(&self) -> ReferenceKind {
        match self {
            ReferenceModel::Linear(_) => ReferenceKind::LinearToy,
            ReferenceModel::Cnn(_) => ReferenceKind::TinyCnn,
        }
    }

    pub fn to_weight_file(&self) -> WeightFile {
        match self {
            ReferenceModel::Linear(m) => m.to_weight_file(),
            ReferenceModel::Cnn(m) => m.to_weight_file(),
        }
    }

    pub fn from_weight_file(file: &WeightFile, path: &Path) -> Result<Self> {
        match ReferenceKind::parse(&file.kind).map_err(|e| Error::load(path, e.to_string()))? {
            ReferenceKind::LinearToy => Ok(ReferenceModel::Linear(LinearToy::from_weight_file(
                file, path,
            )?)),
            ReferenceKind::TinyCnn => {
                Ok(ReferenceModel::Cnn(TinyCnn::from_weight_file(file, path)?))
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_weight_file().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = WeightFile::read(path)?;
        Self::from_weight_file(&file, path)
    }
}

impl ModelAdapter for ReferenceModel {
    fn input_shape(&self) -> (usize, usize) {
        self.inner().input_shape()
    }
    fn embedding_dim(&self) -> usize {
        self.inner().embedding_dim()
    }
    fn model_id(&self) -> String {
        self.inner().model_id()
    }
    fn features(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        self.inner().features(image)
    }
    fn pullback(
        &self,
        image: &ImageTensor,
        seed: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        self.inner().pullback(image, seed)
    }
}

pub fn save_weights(model: &ReferenceModel, path: &Path) -> Result<()> {
    model.save(path)
}

pub fn load_weights(path: &Path) -> Result<ReferenceModel> {
    ReferenceModel::load(path)
}

/// `kind:` followed by a short digest over every tensor's name, shape and bytes.
pub(crate) fn fingerprint(kind: &str, tensors: &[NamedTensor]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(kind.as_bytes());
    for t in tensors {
        hasher.update(t.name.as_bytes());
        for d in &t.shape {
            hasher.update((*d as u64).to_le_bytes());
        }
        for v in &t.values {
            hasher.update(v.to_le_bytes());
        }
    }
    format!("{kind}:{}", &hex::encode(hasher.finalize())[..16])
}
