//! Image, embedding and per-pixel map containers.
//!
//! All images are stored interleaved (row-major, channel-last): the value of
//! channel `c` at `(y, x)` lives at `(y * width + x) * 3 + c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Lower bound on the norm of a feature vector that can be normalized.
pub const NORM_EPS: f64 = 1e-12;

/// Tolerance on `‖e‖ = 1` for anything claiming to be normalized.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// 8-bit RGB image as read from disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width * CHANNELS {
            return Err(Error::Shape(format!(
                "raw image {height}x{width} needs {} values, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    /// Builds from a channel-count-tagged buffer; anything other than three
    /// channels is a shape error.
    pub fn from_channels(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<u8>,
    ) -> Result<Self> {
        if channels != CHANNELS {
            return Err(Error::Shape(format!("expected 3 channels, got {channels}")));
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Floating-point image in model input scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width * CHANNELS {
            return Err(Error::Shape(format!(
                "image {height}x{width}x3 needs {} values, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("image contains non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        debug_assert!(v.is_finite());
        self.data[(y * self.width + x) * CHANNELS + c] = v;
    }

    /// Sets every channel of the rectangle `[y0, y0+h) × [x0, x0+w)` to `value`.
    pub fn fill_rect(&mut self, y0: usize, x0: usize, h: usize, w: usize, value: f64) {
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * CHANNELS;
            self.data[start..start + w * CHANNELS].fill(value);
        }
    }
}

/// Maps 8-bit pixels into `[-1, 1]` via `(v/255 - 0.5)/0.5`.
pub fn preprocess(raw: &RawImage) -> ImageTensor {
    let data = raw
        .data
        .iter()
        .map(|&v| (f64::from(v) / 255.0 - 0.5) / 0.5)
        .collect();
    ImageTensor {
        height: raw.height,
        width: raw.width,
        data,
    }
}

/// Feature vector; `normalized` records whether it is known to be unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
    normalized: bool,
}

impl Embedding {
    /// Wraps raw features without normalizing them.
    pub fn raw(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape(
                "embedding must have at least one dimension".into(),
            ));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Wraps values that are already unit-norm, checking the claim.
    pub fn unit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape(
                "embedding must have at least one dimension".into(),
            ));
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!(
                "embedding claimed unit-norm but has norm {norm}"
            )));
        }
        Ok(Self {
            values,
            normalized: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

/// Scales `v` to unit length, rejecting near-zero vectors.
pub fn normalize(v: &[f64]) -> Result<Embedding> {
    if v.is_empty() {
        return Err(Error::Shape("cannot normalize an empty vector".into()));
    }
    let norm = l2_norm(v);
    if !norm.is_finite() || norm <= NORM_EPS {
        return Err(Error::DegenerateEmbedding {
            norm,
            eps: NORM_EPS,
        });
    }
    Ok(Embedding {
        values: v.iter().map(|x| x / norm).collect(),
        normalized: true,
    })
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Single-channel `height × width` array of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl PixelMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!(
            "image dimensions must be positive, got {height}x{width}"
        )));
    }
    Ok(())
}
