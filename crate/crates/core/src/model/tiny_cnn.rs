//! conv3×3(8) → ReLU → avgpool2 → conv3×3(16) → ReLU → avgpool2 → dense(N).
//!
//! Convolutions use zero padding of one pixel (output size equals input
//! size); pooling floors odd sizes. Activations are kept channel-first.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::weights::{NamedTensor, TensorReader, WeightFile};
use super::{fingerprint, ModelAdapter};
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinyCnnConfig {
    pub height: usize,
    pub width: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub embedding_dim: usize,
}

impl TinyCnnConfig {
    pub const DEFAULT_EMBEDDING_DIM: usize = 32;

    fn pooled(&self) -> (usize, usize) {
        (self.height / 4, self.width / 4)
    }

    fn flat_len(&self) -> usize {
        let (h, w) = self.pooled();
        self.conv2_channels * h * w
    }
}

impl Default for TinyCnnConfig {
    fn default() -> Self {
        Self {
            height: 112,
            width: 112,
            conv1_channels: 8,
            conv2_channels: 16,
            embedding_dim: Self::DEFAULT_EMBEDDING_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Conv3x3 {
    cin: usize,
    cout: usize,
    /// `[cout][cin][3][3]`
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// Channel-first activation volume.
#[derive(Debug, Clone)]
struct Volume {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Volume {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }
}

impl Conv3x3 {
    fn seeded(rng: &mut ChaCha8Rng, cin: usize, cout: usize) -> Self {
        let bound = (6.0 / (cin * 9) as f64).sqrt();
        let weight = (0..cout * cin * 9)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let bias = (0..cout).map(|_| rng.gen_range(-0.1..0.1)).collect();
        Self {
            cin,
            cout,
            weight,
            bias,
        }
    }

    fn k(&self, o: usize, i: usize, dy: usize, dx: usize) -> f64 {
        self.weight[((o * self.cin + i) * 3 + dy) * 3 + dx]
    }

    fn forward(&self, input: &Volume) -> Volume {
        let (h, w) = (input.h, input.w);
        let mut out = Volume::zeros(self.cout, h, w);
        for o in 0..self.cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = self.bias[o];
                    for i in 0..self.cin {
                        for dy in 0..3 {
                            let yy = y + dy;
                            if yy == 0 || yy > h {
                                continue;
                            }
                            for dx in 0..3 {
                                let xx = x + dx;
                                if xx == 0 || xx > w {
                                    continue;
                                }
                                acc +=
                                    self.k(o, i, dy, dx) * input.data[input.idx(i, yy - 1, xx - 1)];
                            }
                        }
                    }
                    let at = out.idx(o, y, x);
                    out.data[at] = acc;
                }
            }
        }
        out
    }

    /// Input gradient given the output gradient.
    fn backward(&self, grad_out: &Volume) -> Volume {
        let (h, w) = (grad_out.h, grad_out.w);
        let mut grad_in = Volume::zeros(self.cin, h, w);
        for o in 0..self.cout {
            for y in 0..h {
                for x in 0..w {
                    let g = grad_out.data[grad_out.idx(o, y, x)];
                    if g == 0.0 {
                        continue;
                    }
                    for i in 0..self.cin {
                        for dy in 0..3 {
                            let yy = y + dy;
                            if yy == 0 || yy > h {
                                continue;
                            }
                            for dx in 0..3 {
                                let xx = x + dx;
                                if xx == 0 || xx > w {
                                    continue;
                                }
                                let at = grad_in.idx(i, yy - 1, xx - 1);
                                grad_in.data[at] += self.k(o, i, dy, dx) * g;
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

fn relu(v: &mut Volume) {
    for x in &mut v.data {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes gradient entries whose pre-activation was not positive.
fn relu_backward(grad: &mut Volume, pre: &Volume) {
    for (g, &p) in grad.data.iter_mut().zip(&pre.data) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

fn avgpool2(input: &Volume) -> Volume {
    let (h, w) = (input.h / 2, input.w / 2);
    let mut out = Volume::zeros(input.c, h, w);
    for c in 0..input.c {
        for y in 0..h {
            for x in 0..w {
                let s = input.data[input.idx(c, 2 * y, 2 * x)]
                    + input.data[input.idx(c, 2 * y, 2 * x + 1)]
                    + input.data[input.idx(c, 2 * y + 1, 2 * x)]
                    + input.data[input.idx(c, 2 * y + 1, 2 * x + 1)];
                let at = out.idx(c, y, x);
                out.data[at] = 0.25 * s;
            }
        }
    }
    out
}

fn avgpool2_backward(grad_out: &Volume, in_h: usize, in_w: usize) -> Volume {
    let mut grad_in = Volume::zeros(grad_out.c, in_h, in_w);
    for c in 0..grad_out.c {
        for y in 0..grad_out.h {
            for x in 0..grad_out.w {
                let g = 0.25 * grad_out.data[grad_out.idx(c, y, x)];
                for (yy, xx) in [
                    (2 * y, 2 * x),
                    (2 * y, 2 * x + 1),
                    (2 * y + 1, 2 * x),
                    (2 * y + 1, 2 * x + 1),
                ] {
                    let at = grad_in.idx(c, yy, xx);
                    grad_in.data[at] += g;
                }
            }
        }
    }
    grad_in
}

struct Tape {
    pre1: Volume,
    pre2: Volume,
    pooled2: Volume,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyCnn {
    cfg: TinyCnnConfig,
    conv1: Conv3x3,
    conv2: Conv3x3,
    /// `[embedding_dim][flat_len]`
    dense_weight: Vec<f64>,
    dense_bias: Vec<f64>,
    id: String,
}

const TENSOR_NAMES: [&str; 6] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "dense.weight",
    "dense.bias",
];

impl TinyCnn {
    pub fn seeded(seed: u64, cfg: TinyCnnConfig) -> Result<Self> {
        validate(&cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = Conv3x3::seeded(&mut rng, CHANNELS, cfg.conv1_channels);
        let conv2 = Conv3x3::seeded(&mut rng, cfg.conv1_channels, cfg.conv2_channels);
        let flat = cfg.flat_len();
        let bound = (6.0 / flat as f64).sqrt();
        let dense_weight = (0..cfg.embedding_dim * flat)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let dense_bias = (0..cfg.embedding_dim)
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect();
        Ok(Self::assemble(cfg, conv1, conv2, dense_weight, dense_bias))
    }

    fn assemble(
        cfg: TinyCnnConfig,
        conv1: Conv3x3,
        conv2: Conv3x3,
        dense_weight: Vec<f64>,
        dense_bias: Vec<f64>,
    ) -> Self {
        let mut model = Self {
            cfg,
            conv1,
            conv2,
            dense_weight,
            dense_bias,
            id: String::new(),
        };
        model.id = fingerprint("tiny-cnn", &model.tensors());
        model
    }

    pub fn config(&self) -> TinyCnnConfig {
        self.cfg
    }

    fn tensors(&self) -> Vec<NamedTensor> {
        let c = &self.cfg;
        vec![
            NamedTensor::new(
                "conv1.weight",
                vec![c.conv1_channels, CHANNELS, 3, 3],
                self.conv1.weight.clone(),
            ),
            NamedTensor::new(
                "conv1.bias",
                vec![c.conv1_channels],
                self.conv1.bias.clone(),
            ),
            NamedTensor::new(
                "conv2.weight",
                vec![c.conv2_channels, c.conv1_channels, 3, 3],
                self.conv2.weight.clone(),
            ),
            NamedTensor::new(
                "conv2.bias",
                vec![c.conv2_channels],
                self.conv2.bias.clone(),
            ),
            NamedTensor::new(
                "dense.weight",
                vec![c.embedding_dim, c.flat_len()],
                self.dense_weight.clone(),
            ),
            NamedTensor::new("dense.bias", vec![c.embedding_dim], self.dense_bias.clone()),
        ]
    }

    pub fn to_weight_file(&self) -> WeightFile {
        WeightFile {
            kind: "tiny-cnn".into(),
            metadata: [
                ("height".to_string(), self.cfg.height.to_string()),
                ("width".to_string(), self.cfg.width.to_string()),
                (
                    "conv1_channels".to_string(),
                    self.cfg.conv1_channels.to_string(),
                ),
                (
                    "conv2_channels".to_string(),
                    self.cfg.conv2_channels.to_string(),
                ),
                (
                    "embedding_dim".to_string(),
                    self.cfg.embedding_dim.to_string(),
                ),
            ]
            .into(),
            tensors: self.tensors(),
        }
    }

    pub fn from_weight_file(file: &WeightFile, path: &Path) -> Result<Self> {
        let cfg = TinyCnnConfig {
            height: file.metadata_usize("height", path)?,
            width: file.metadata_usize("width", path)?,
            conv1_channels: file.metadata_usize("conv1_channels", path)?,
            conv2_channels: file.metadata_usize("conv2_channels", path)?,
            embedding_dim: file.metadata_usize("embedding_dim", path)?,
        };
        validate(&cfg).map_err(|e| Error::load(path, e.to_string()))?;
        let r = TensorReader::new(file, path, &TENSOR_NAMES)?;
        let conv1 = Conv3x3 {
            cin: CHANNELS,
            cout: cfg.conv1_channels,
            weight: r.take("conv1.weight", &[cfg.conv1_channels, CHANNELS, 3, 3])?,
            bias: r.take("conv1.bias", &[cfg.conv1_channels])?,
        };
        let conv2 = Conv3x3 {
            cin: cfg.conv1_channels,
            cout: cfg.conv2_channels,
            weight: r.take(
                "conv2.weight",
                &[cfg.conv2_channels, cfg.conv1_channels, 3, 3],
            )?,
            bias: r.take("conv2.bias", &[cfg.conv2_channels])?,
        };
        let dense_weight = r.take("dense.weight", &[cfg.embedding_dim, cfg.flat_len()])?;
        let dense_bias = r.take("dense.bias", &[cfg.embedding_dim])?;
        Ok(Self::assemble(cfg, conv1, conv2, dense_weight, dense_bias))
    }

    fn run(&self, image: &ImageTensor) -> (Vec<f64>, Tape) {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let mut input = Volume::zeros(CHANNELS, h, w);
        for y in 0..h {
            for x in 0..w {
                for c in 0..CHANNELS {
                    let at = input.idx(c, y, x);
                    input.data[at] = image.get(y, x, c);
                }
            }
        }
        let pre1 = self.conv1.forward(&input);
        let mut act1 = pre1.clone();
        relu(&mut act1);
        let pooled1 = avgpool2(&act1);
        let pre2 = self.conv2.forward(&pooled1);
        let mut act2 = pre2.clone();
        relu(&mut act2);
        let pooled2 = avgpool2(&act2);
        let features = self
            .dense_weight
            .chunks_exact(pooled2.data.len())
            .zip(&self.dense_bias)
            .map(|(row, b)| {
                b + row
                    .iter()
                    .zip(&pooled2.data)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
            })
            .collect();
        (
            features,
            Tape {
                pre1,
                pre2,
                pooled2,
            },
        )
    }
}

fn validate(cfg: &TinyCnnConfig) -> Result<()> {
    if cfg.height < 4 || cfg.width < 4 {
        return Err(Error::Shape(format!(
            "tiny-cnn needs at least 4x4 input, got {}x{}",
            cfg.height, cfg.width
        )));
    }
    if cfg.conv1_channels == 0 || cfg.conv2_channels == 0 || cfg.embedding_dim == 0 {
        return Err(Error::Shape("tiny-cnn layer sizes must be positive".into()));
    }
    Ok(())
}

impl ModelAdapter for TinyCnn {
    fn input_shape(&self) -> (usize, usize) {
        (self.cfg.height, self.cfg.width)
    }

    fn embedding_dim(&self) -> usize {
        self.cfg.embedding_dim
    }

    fn model_id(&self) -> String {
        self.id.clone()
    }

    fn features(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        self.check_input(image)?;
        Ok(self.run(image).0)
    }

    fn pullback(
        &self,
        image: &ImageTensor,
        seed: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        self.check_input(image)?;
        let (features, tape) = self.run(image);
        let cot = seed(&features)?;
        if cot.len() != self.cfg.embedding_dim {
            return Err(Error::Shape(
                "cotangent length differs from embedding dim".into(),
            ));
        }

        let p2 = &tape.pooled2;
        let mut g_pooled2 = Volume::zeros(p2.c, p2.h, p2.w);
        for (row, &c) in self.dense_weight.chunks_exact(p2.data.len()).zip(&cot) {
            if c == 0.0 {
                continue;
            }
            for (g, w) in g_pooled2.data.iter_mut().zip(row) {
                *g += c * w;
            }
        }
        let mut g_act2 = avgpool2_backward(&g_pooled2, tape.pre2.h, tape.pre2.w);
        relu_backward(&mut g_act2, &tape.pre2);
        let g_pooled1 = self.conv2.backward(&g_act2);
        let mut g_act1 = avgpool2_backward(&g_pooled1, tape.pre1.h, tape.pre1.w);
        relu_backward(&mut g_act1, &tape.pre1);
        let g_input = self.conv1.backward(&g_act1);

        let (h, w) = (self.cfg.height, self.cfg.width);
        let mut grad = vec![0.0; h * w * CHANNELS];
        for y in 0..h {
            for x in 0..w {
                for c in 0..CHANNELS {
                    grad[(y * w + x) * CHANNELS + c] = g_input.data[g_input.idx(c, y, x)];
                }
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TinyCnn {
        TinyCnn::seeded(
            3,
            TinyCnnConfig {
                height: 8,
                width: 10,
                ..TinyCnnConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn odd_sizes_floor_through_pooling() {
        let m = TinyCnn::seeded(
            1,
            TinyCnnConfig {
                height: 9,
                width: 11,
                ..TinyCnnConfig::default()
            },
        )
        .unwrap();
        assert_eq!(m.cfg.flat_len(), 16 * 2 * 2);
        let img = ImageTensor::filled(9, 11, 0.3).unwrap();
        assert_eq!(m.features(&img).unwrap().len(), 32);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let m = small();
        let img = ImageTensor::filled(8, 8, 0.0).unwrap();
        assert!(matches!(m.features(&img), Err(Error::Shape(_))));
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(small(), small());
        let other = TinyCnn::seeded(4, small().cfg).unwrap();
        assert_ne!(small().model_id(), other.model_id());
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x) - bias, y> == <x, conv_backward(y)>
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let conv = Conv3x3::seeded(&mut rng, 2, 3);
        let mut x = Volume::zeros(2, 5, 4);
        x.data
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let mut y = Volume::zeros(3, 5, 4);
        y.data
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let fx = conv.forward(&x);
        let mut lhs = 0.0;
        for o in 0..3 {
            for p in 0..20 {
                lhs += (fx.data[o * 20 + p] - conv.bias[o]) * y.data[o * 20 + p];
            }
        }
        let bty = conv.backward(&y);
        let rhs: f64 = x.data.iter().zip(&bty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }
}
