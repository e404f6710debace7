use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::weights::{NamedTensor, TensorReader, WeightFile};
use super::{fingerprint, ModelAdapter};
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, CHANNELS};

/// `f(I) = W · vec(I)`, with `W` stored row-major as `embedding_dim × (H·W·3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearToy {
    height: usize,
    width: usize,
    dim: usize,
    weight: Vec<f64>,
    id: String,
}

impl LinearToy {
    pub fn from_matrix(height: usize, width: usize, dim: usize, weight: Vec<f64>) -> Result<Self> {
        let inputs = height * width * CHANNELS;
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::Shape("linear model needs positive sizes".into()));
        }
        if weight.len() != dim * inputs {
            return Err(Error::Shape(format!(
                "weight matrix needs {dim}x{inputs} entries, got {}",
                weight.len()
            )));
        }
        let mut model = Self {
            height,
            width,
            dim,
            weight,
            id: String::new(),
        };
        model.id = fingerprint("linear-toy", &model.tensors());
        Ok(model)
    }

    pub fn seeded(seed: u64, height: usize, width: usize, dim: usize) -> Result<Self> {
        let inputs = height * width * CHANNELS;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = (0..dim * inputs)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self::from_matrix(height, width, dim, weight)
    }

    /// One embedding dimension per `block × block` tile, each the mean of its
    /// tile over all channels. Tiles are numbered row-major; `height` and
    /// `width` must be multiples of `block`.
    pub fn block_wired(height: usize, width: usize, block: usize) -> Result<Self> {
        if block == 0 || !height.is_multiple_of(block) || !width.is_multiple_of(block) {
            return Err(Error::Shape(format!(
                "{height}x{width} is not tiled by {block}x{block} blocks"
            )));
        }
        let cols = width / block;
        let dim = (height / block) * cols;
        let inputs = height * width * CHANNELS;
        let coeff = 1.0 / (block * block * CHANNELS) as f64;
        let mut weight = vec![0.0; dim * inputs];
        for y in 0..height {
            for x in 0..width {
                let n = (y / block) * cols + x / block;
                for c in 0..CHANNELS {
                    weight[n * inputs + (y * width + x) * CHANNELS + c] = coeff;
                }
            }
        }
        Self::from_matrix(height, width, dim, weight)
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    fn tensors(&self) -> Vec<NamedTensor> {
        vec![NamedTensor::new(
            "weight",
            vec![self.dim, self.height * self.width * CHANNELS],
            self.weight.clone(),
        )]
    }

    pub fn to_weight_file(&self) -> WeightFile {
        WeightFile {
            kind: "linear-toy".into(),
            metadata: [
                ("height".to_string(), self.height.to_string()),
                ("width".to_string(), self.width.to_string()),
                ("embedding_dim".to_string(), self.dim.to_string()),
            ]
            .into(),
            tensors: self.tensors(),
        }
    }

    pub fn from_weight_file(file: &WeightFile, path: &Path) -> Result<Self> {
        let height = file.metadata_usize("height", path)?;
        let width = file.metadata_usize("width", path)?;
        let dim = file.metadata_usize("embedding_dim", path)?;
        let reader = TensorReader::new(file, path, &["weight"])?;
        let weight = reader.take("weight", &[dim, height * width * CHANNELS])?;
        Self::from_matrix(height, width, dim, weight).map_err(|e| Error::load(path, e.to_string()))
    }
}

impl ModelAdapter for LinearToy {
    fn input_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn model_id(&self) -> String {
        self.id.clone()
    }

    fn features(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        self.check_input(image)?;
        let x = image.data();
        Ok(self
            .weight
            .chunks_exact(x.len())
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect())
    }

    fn pullback(
        &self,
        image: &ImageTensor,
        seed: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let f = self.features(image)?;
        let cot = seed(&f)?;
        let inputs = image.data().len();
        let mut grad = vec![0.0; inputs];
        for (row, &c) in self.weight.chunks_exact(inputs).zip(&cot) {
            if c == 0.0 {
                continue;
            }
            for (g, w) in grad.iter_mut().zip(row) {
                *g += c * w;
            }
        }
        Ok(grad)
    }
}
