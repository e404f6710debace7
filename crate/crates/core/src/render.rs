//! Diverging heatmaps for explanation maps.
//!
//! Values are scaled symmetrically by the map's largest magnitude so that
//! zero always lands on the neutral color. Scaling is display-only; stored
//! maps keep their raw values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::write_png;
use crate::saliency::ExplanationMap;
use crate::tensor::{PixelMap, RawImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Palette {
    /// Green for similarity, pink for dissimilarity.
    #[default]
    GreenPink,
    /// Blue for similarity, orange for dissimilarity.
    ColorblindSafe,
}

impl Palette {
    pub const NEUTRAL: [u8; 3] = [247, 247, 247];

    pub fn positive(self) -> [u8; 3] {
        match self {
            Palette::GreenPink => [27, 158, 119],
            Palette::ColorblindSafe => [5, 113, 176],
        }
    }

    pub fn negative(self) -> [u8; 3] {
        match self {
            Palette::GreenPink => [231, 41, 138],
            Palette::ColorblindSafe => [230, 97, 1],
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "green-pink" => Ok(Palette::GreenPink),
            "colorblind-safe" => Ok(Palette::ColorblindSafe),
            other => Err(Error::Domain(format!("unknown palette `{other}`"))),
        }
    }

    /// Color for `t ∈ [-1, 1]`.
    pub fn color(self, t: f64) -> [u8; 3] {
        let t = t.clamp(-1.0, 1.0);
        let end = if t >= 0.0 {
            self.positive()
        } else {
            self.negative()
        };
        let a = t.abs();
        let mut out = [0u8; 3];
        for c in 0..3 {
            let n = f64::from(Self::NEUTRAL[c]);
            out[c] = (n + a * (f64::from(end[c]) - n)).round() as u8;
        }
        out
    }
}

pub fn heatmap(map: &PixelMap, palette: Palette) -> Result<RawImage> {
    if !map.is_finite() {
        return Err(Error::Domain(
            "cannot render a map with non-finite values".into(),
        ));
    }
    let scale = map.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let data = map
        .data()
        .iter()
        .flat_map(|&v| palette.color(if scale > 0.0 { v / scale } else { 0.0 }))
        .collect();
    RawImage::new(map.height(), map.width(), data)
}

/// Alpha-blends a heatmap over a grayscale copy of the face.
pub fn overlay(heat: &RawImage, face: &RawImage, alpha: f64) -> Result<RawImage> {
    if heat.shape() != face.shape() {
        return Err(Error::Shape("heatmap and face differ in size".into()));
    }
    let alpha = alpha.clamp(0.0, 1.0);
    let data = heat
        .data()
        .chunks_exact(3)
        .zip(face.data().chunks_exact(3))
        .flat_map(|(h, f)| {
            let gray = 0.299 * f64::from(f[0]) + 0.587 * f64::from(f[1]) + 0.114 * f64::from(f[2]);
            let mut px = [0u8; 3];
            for c in 0..3 {
                px[c] = (alpha * f64::from(h[c]) + (1.0 - alpha) * gray).round() as u8;
            }
            px
        })
        .collect();
    RawImage::new(heat.height(), heat.width(), data)
}

/// Renders the fused map to an 8-bit PNG, optionally over the face image.
pub fn render_heatmap(
    map: &ExplanationMap,
    out_path: &Path,
    palette: Palette,
    face: Option<&RawImage>,
) -> Result<()> {
    let mut img = heatmap(&map.fused, palette)?;
    if let Some(face) = face {
        img = overlay(&img, face, 0.6)?;
    }
    write_png(&img, out_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::read_png;

    #[test]
    fn zero_map_is_neutral() {
        let img = heatmap(&PixelMap::zeros(3, 4), Palette::GreenPink).unwrap();
        assert!(img.data().chunks(3).all(|px| px == Palette::NEUTRAL));
    }

    #[test]
    fn extremes_hit_palette_endpoints() {
        let m = PixelMap::new(1, 3, vec![2.0, -1.0, 0.0]).unwrap();
        for p in [Palette::GreenPink, Palette::ColorblindSafe] {
            let img = heatmap(&m, p).unwrap();
            assert_eq!(img.pixel(0, 0), p.positive());
            assert_eq!(img.pixel(0, 2), Palette::NEUTRAL);
            // -1 is half the max magnitude: halfway to the negative end.
            assert_ne!(img.pixel(0, 1), p.negative());
        }
    }

    #[test]
    fn rendered_png_has_map_shape() {
        let dir = tempfile::tempdir().unwrap();
        let m =
            ExplanationMap::from_signed(PixelMap::new(5, 6, vec![0.5; 30]).unwrap(), "a", "b", 0.0);
        let path = dir.path().join("m.png");
        render_heatmap(&m, &path, Palette::ColorblindSafe, None).unwrap();
        assert_eq!(read_png(&path).unwrap().shape(), (5, 6));
        let err = render_heatmap(
            &m,
            Path::new("/proc/forbidden/m.png"),
            Palette::GreenPink,
            None,
        )
        .unwrap_err();
        assert_eq!(err.category(), "io");
    }

    #[test]
    fn nan_map_rejected() {
        let m = PixelMap::new(1, 1, vec![f64::NAN]).unwrap();
        assert!(heatmap(&m, Palette::GreenPink).is_err());
    }
}
