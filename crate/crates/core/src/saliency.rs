//! Similarity / dissimilarity maps from argument-masked gradients.

use std::fs;
use std::path::Path;

use crate::argument::{
    decompose, masked_weights, ArgumentDecomposition, DecisionThreshold, MaskedWeights,
};
use crate::error::{Error, Result};
use crate::model::{ImageGradient, ModelAdapter};
use crate::tensor::{Embedding, ImageTensor, PixelMap, CHANNELS};

#[derive(Debug, Clone, PartialEq)]
pub struct PolarityGradients {
    pub positive: ImageGradient,
    pub negative: ImageGradient,
}

/// Signed map for one image of a pair. `fused > 0` marks pixels that
/// support similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationMap {
    pub fused: PixelMap,
    pub positive: PixelMap,
    pub negative: PixelMap,
    pub blurred: bool,
    pub subject_id: String,
    pub comparison_id: String,
    pub threshold: f64,
}

impl ExplanationMap {
    pub fn shape(&self) -> (usize, usize) {
        self.fused.shape()
    }

    /// Wraps a signed map from a method without polarity channels: the
    /// positive part goes to `positive`, the magnitude of the negative part
    /// to `negative`.
    pub fn from_signed(
        fused: PixelMap,
        subject_id: &str,
        comparison_id: &str,
        threshold: f64,
    ) -> Self {
        let (h, w) = fused.shape();
        let positive =
            PixelMap::new(h, w, fused.data().iter().map(|v| v.max(0.0)).collect()).unwrap();
        let negative =
            PixelMap::new(h, w, fused.data().iter().map(|v| (-v).max(0.0)).collect()).unwrap();
        Self {
            fused,
            positive,
            negative,
            blurred: false,
            subject_id: subject_id.to_string(),
            comparison_id: comparison_id.to_string(),
            threshold,
        }
    }
}

/// Normalized 5×5 Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    sigma: f64,
    /// Row-major 5×5.
    weights: [f64; 25],
}

impl BlurKernel {
    pub const SIZE: usize = 5;
    pub const DEFAULT_SIGMA: f64 = 5.0;

    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!(
                "blur sigma must be positive, got {sigma}"
            )));
        }
        let half = (Self::SIZE / 2) as f64;
        let taps: Vec<f64> = (0..Self::SIZE)
            .map(|i| {
                let d = i as f64 - half;
                (-(d * d) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = taps.iter().sum();
        let taps: Vec<f64> = taps.iter().map(|t| t / total).collect();
        let mut weights = [0.0; 25];
        for r in 0..Self::SIZE {
            for c in 0..Self::SIZE {
                weights[r * Self::SIZE + c] = taps[r] * taps[c];
            }
        }
        Ok(Self { sigma, weights })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[f64; 25] {
        &self.weights
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * Self::SIZE + col]
    }
}

impl Default for BlurKernel {
    fn default() -> Self {
        Self::gaussian(Self::DEFAULT_SIGMA).expect("default sigma is valid")
    }
}

pub fn polarity_gradients<M: ModelAdapter + ?Sized>(
    model: &M,
    image: &ImageTensor,
    masked: &MaskedWeights,
) -> Result<PolarityGradients> {
    Ok(PolarityGradients {
        positive: model.vjp(image, &masked.positive)?,
        negative: model.vjp(image, &masked.negative)?,
    })
}

/// Mean absolute gradient over the three color channels.
pub fn channel_reduce(grad: &ImageTensor) -> PixelMap {
    let (h, w) = grad.shape();
    let data = grad
        .data()
        .chunks_exact(CHANNELS)
        .map(|px| (px[0].abs() + px[1].abs() + px[2].abs()) / 3.0)
        .collect();
    PixelMap::new(h, w, data).expect("shape carried over")
}

/// Same reduction on a flat interleaved buffer with an explicit channel count.
pub fn channel_reduce_raw(
    height: usize,
    width: usize,
    channels: usize,
    grad: &[f64],
) -> Result<PixelMap> {
    if channels != CHANNELS {
        return Err(Error::Shape(format!("expected 3 channels, got {channels}")));
    }
    let tensor = ImageTensor::new(height, width, grad.to_vec())?;
    Ok(channel_reduce(&tensor))
}

pub fn fuse(positive: &PixelMap, negative: &PixelMap) -> Result<PixelMap> {
    if positive.shape() != negative.shape() {
        return Err(Error::Shape(format!(
            "cannot fuse {:?} with {:?}",
            positive.shape(),
            negative.shape()
        )));
    }
    let (h, w) = positive.shape();
    PixelMap::new(
        h,
        w,
        positive
            .data()
            .iter()
            .zip(negative.data())
            .map(|(p, n)| p - n)
            .collect(),
    )
}

/// 2-D convolution with edge replication at the borders.
pub fn gaussian_blur(map: &PixelMap, kernel: &BlurKernel) -> Result<PixelMap> {
    let (h, w) = map.shape();
    let k = BlurKernel::SIZE;
    if h < k || w < k {
        return Err(Error::Domain(format!(
            "map {h}x{w} is smaller than the {k}x{k} blur kernel"
        )));
    }
    let half = (k / 2) as isize;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for r in 0..k {
                let yy = clamp(y as isize + r as isize - half, h);
                for c in 0..k {
                    let xx = clamp(x as isize + c as isize - half, w);
                    acc += kernel.at(r, c) * map.get(yy, xx);
                }
            }
            out[y * w + x] = acc;
        }
    }
    PixelMap::new(h, w, out)
}

/// Image plus the identifier recorded in its explanation map.
#[derive(Debug, Clone, Copy)]
pub struct ImageRef<'a> {
    pub id: &'a str,
    pub image: &'a ImageTensor,
}

impl<'a> ImageRef<'a> {
    pub fn new(id: &'a str, image: &'a ImageTensor) -> Self {
        Self { id, image }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairExplanation {
    pub decomposition: ArgumentDecomposition,
    pub map_i: ExplanationMap,
    pub map_j: ExplanationMap,
}

/// Map for `subject` given both embeddings; issues exactly two `vjp` calls.
pub fn explain_subject<M: ModelAdapter + ?Sized>(
    model: &M,
    subject: ImageRef<'_>,
    comparison_id: &str,
    comparison: &Embedding,
    decomposition: &ArgumentDecomposition,
    th: &DecisionThreshold,
    kernel: &BlurKernel,
) -> Result<ExplanationMap> {
    let weights = masked_weights(comparison, decomposition)?;
    let grads = polarity_gradients(model, subject.image, &weights)?;
    let positive = channel_reduce(&grads.positive);
    let negative = channel_reduce(&grads.negative);
    let fused = gaussian_blur(&fuse(&positive, &negative)?, kernel)?;
    Ok(ExplanationMap {
        fused,
        positive,
        negative,
        blurred: true,
        subject_id: subject.id.to_string(),
        comparison_id: comparison_id.to_string(),
        threshold: th.value(),
    })
}

/// Full pipeline for a pair: two embeddings, one decomposition, and four
/// masked backward passes (positive and negative for each image).
pub fn explain_pair<M: ModelAdapter + ?Sized>(
    model: &M,
    image_i: ImageRef<'_>,
    image_j: ImageRef<'_>,
    th: &DecisionThreshold,
) -> Result<PairExplanation> {
    let kernel = BlurKernel::default();
    let ei = model.embed(image_i.image)?;
    let ej = model.embed(image_j.image)?;
    // Arguments are symmetric in (i, j), so one partition serves both maps.
    let decomposition = decompose(&ei, &ej, th)?;
    let map_i = explain_subject(model, image_i, image_j.id, &ej, &decomposition, th, &kernel)?;
    let map_j = explain_subject(model, image_j, image_i.id, &ei, &decomposition, th, &kernel)?;
    Ok(PairExplanation {
        decomposition,
        map_i,
        map_j,
    })
}

const MAP_MAGIC: &[u8; 8] = b"XSSABMAP";
const MAP_VERSION: u32 = 1;

/// Binary map file:
///
/// ```text
/// magic "XSSABMAP" | version u32 | height u32 | width u32 | threshold f64 |
/// blurred u8 | subject_len u32 | subject utf8 | comparison_len u32 |
/// comparison utf8 | fused[H·W] f64 | positive[H·W] f64 | negative[H·W] f64
/// ```
///
/// All integers and floats little-endian.
pub fn encode_map(map: &ExplanationMap) -> Vec<u8> {
    let (h, w) = map.shape();
    let mut out = Vec::with_capacity(64 + 24 * h * w);
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&MAP_VERSION.to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&map.threshold.to_le_bytes());
    out.push(u8::from(map.blurred));
    for s in [&map.subject_id, &map.comparison_id] {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    for m in [&map.fused, &map.positive, &map.negative] {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format("map file truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("map id is not UTF-8".into()))
    }
}

pub fn decode_map(bytes: &[u8]) -> Result<ExplanationMap> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAP_MAGIC {
        return Err(Error::Format("not a map file (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != MAP_VERSION {
        return Err(Error::Format(format!("unsupported map version {version}")));
    }
    let h = cur.u32()? as usize;
    let w = cur.u32()? as usize;
    let threshold = cur.f64()?;
    let blurred = match cur.take(1)?[0] {
        0 => false,
        1 => true,
        b => return Err(Error::Format(format!("invalid blurred flag {b}"))),
    };
    let subject_id = cur.string()?;
    let comparison_id = cur.string()?;
    let read_map = |cur: &mut Cursor<'_>| -> Result<PixelMap> {
        let data = (0..h * w).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        PixelMap::new(h, w, data)
    };
    let fused = read_map(&mut cur)?;
    let positive = read_map(&mut cur)?;
    let negative = read_map(&mut cur)?;
    if cur.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after map payload".into()));
    }
    Ok(ExplanationMap {
        fused,
        positive,
        negative,
        blurred,
        subject_id,
        comparison_id,
        threshold,
    })
}

pub fn write_map(map: &ExplanationMap, path: &Path) -> Result<()> {
    fs::write(path, encode_map(map)).map_err(|e| Error::io(path, e))
}

pub fn read_map(path: &Path) -> Result<ExplanationMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_map(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinearToy, ReferenceModelSpec};

    fn map(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> PixelMap {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        PixelMap::new(h, w, data).unwrap()
    }

    #[test]
    fn channel_reduce_examples() {
        let g = ImageTensor::new(1, 2, vec![1.0, -1.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let m = channel_reduce(&g);
        assert!((m.get(0, 0) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.get(0, 1), 0.0);
        let neg = ImageTensor::new(1, 2, g.data().iter().map(|v| -v).collect()).unwrap();
        assert_eq!(channel_reduce(&neg), m);
        assert!(matches!(
            channel_reduce_raw(1, 1, 4, &[0.0; 4]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn fuse_examples() {
        let p = map(2, 2, |y, x| (y + x) as f64);
        assert!(fuse(&p, &p).unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(fuse(&p, &PixelMap::zeros(2, 2)).unwrap(), p);
        let a = PixelMap::new(1, 1, vec![0.4]).unwrap();
        let b = PixelMap::new(1, 1, vec![0.1]).unwrap();
        assert!((fuse(&a, &b).unwrap().get(0, 0) - 0.3).abs() < 1e-15);
        assert!(matches!(fuse(&a, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn blur_preserves_constants_and_rejects_small_maps() {
        let k = BlurKernel::default();
        let c = map(7, 9, |_, _| -2.5);
        let b = gaussian_blur(&c, &k).unwrap();
        assert!(b.data().iter().all(|v| (v + 2.5).abs() <= 1e-12));
        assert!(matches!(
            gaussian_blur(&map(4, 9, |_, _| 0.0), &k),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn kernel_is_symmetric() {
        let k = BlurKernel::default();
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(k.at(r, c), k.at(c, r));
                assert_eq!(k.at(r, c), k.at(4 - r, c));
                assert_eq!(k.at(r, c), k.at(4 - c, r));
            }
        }
    }

    #[test]
    fn empty_positive_set_gives_zero_gradient() {
        let model = ReferenceModelSpec::tiny_cnn(5, 8, 8).build().unwrap();
        let img = ImageTensor::filled(8, 8, 0.2).unwrap();
        let masked = MaskedWeights {
            positive: vec![0.0; 32],
            negative: vec![0.1; 32],
        };
        let g = polarity_gradients(&model, &img, &masked).unwrap();
        assert!(g.positive.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn map_file_roundtrip_and_corruption() {
        let m = ExplanationMap {
            fused: map(3, 4, |y, x| y as f64 - 0.5 * x as f64),
            positive: map(3, 4, |y, _| y as f64),
            negative: map(3, 4, |_, x| 0.5 * x as f64),
            blurred: false,
            subject_id: "a/1.png".into(),
            comparison_id: "b/ü.png".into(),
            threshold: -0.125,
        };
        let bytes = encode_map(&m);
        assert_eq!(decode_map(&bytes).unwrap(), m);
        assert!(decode_map(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(7);
        assert!(decode_map(&extra).is_err());
    }

    #[test]
    fn swapping_pair_swaps_ids() {
        let model = LinearToy::seeded(1, 6, 6, 8).unwrap();
        let a =
            ImageTensor::new(6, 6, (0..108).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let b =
            ImageTensor::new(6, 6, (0..108).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        let th = DecisionThreshold::new(0.2, "").unwrap();
        let ab = explain_pair(&model, ImageRef::new("a", &a), ImageRef::new("b", &b), &th).unwrap();
        let ba = explain_pair(&model, ImageRef::new("b", &b), ImageRef::new("a", &a), &th).unwrap();
        assert_eq!(
            (
                ab.map_i.subject_id.as_str(),
                ab.map_i.comparison_id.as_str()
            ),
            ("a", "b")
        );
        assert_eq!(
            (
                ba.map_j.subject_id.as_str(),
                ba.map_j.comparison_id.as_str()
            ),
            ("a", "b")
        );
        assert_eq!(ab.map_i.fused, ba.map_j.fused);
    }
}
