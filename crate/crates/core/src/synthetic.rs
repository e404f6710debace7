//! Seeded block-structured toy faces for desk-scale experiments.
//!
//! Each identity is a grid of `block × block` tiles with a per-identity base
//! color per tile. Images of an identity add a per-image tile offset and a
//! little per-pixel noise. Block-wired linear models read the tile means
//! directly, which makes patch effects on the embedding easy to reason about.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::{Dataset, MemoryStore, PairLabel, PairSpec};
use crate::error::Result;
use crate::imageio::write_png;
use crate::tensor::RawImage;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub identities: usize,
    pub images_per_identity: usize,
    pub height: usize,
    pub width: usize,
    pub block: usize,
    /// Maximum per-image shift of a tile's color, in 8-bit levels.
    pub image_jitter: f64,
    /// Maximum per-pixel noise, in 8-bit levels.
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            identities: 12,
            images_per_identity: 4,
            height: 112,
            width: 112,
            block: 16,
            image_jitter: 60.0,
            pixel_noise: 8.0,
            seed: 0,
        }
    }
}

pub struct SyntheticFaces {
    pub dataset: Dataset,
    pub store: MemoryStore,
    /// `(id, image)` in id order.
    pub images: Vec<(String, RawImage)>,
}

impl SyntheticFaces {
    pub fn write(&self, root: &Path) -> Result<()> {
        for (id, img) in &self.images {
            write_png(img, &root.join(id))?;
        }
        Ok(())
    }
}

pub fn synthetic_faces(spec: &SyntheticSpec) -> SyntheticFaces {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rows = spec.height.div_ceil(spec.block);
    let cols = spec.width.div_ceil(spec.block);
    let mut images = Vec::new();
    for k in 0..spec.identities {
        let base: Vec<[f64; 3]> = (0..rows * cols)
            .map(|_| {
                let v: f64 = rng.gen_range(30.0..225.0);
                [
                    v,
                    v + rng.gen_range(-20.0..20.0),
                    v + rng.gen_range(-20.0..20.0),
                ]
            })
            .collect();
        for n in 0..spec.images_per_identity {
            let shift: Vec<f64> = (0..rows * cols)
                .map(|_| rng.gen_range(-spec.image_jitter..=spec.image_jitter))
                .collect();
            let mut data = Vec::with_capacity(spec.height * spec.width * 3);
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let t = (y / spec.block) * cols + x / spec.block;
                    for b in base[t] {
                        let v = b + shift[t] + rng.gen_range(-spec.pixel_noise..=spec.pixel_noise);
                        data.push(v.round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
            let id = format!("id{k:03}/{n:02}.png");
            images.push((
                id,
                RawImage::new(spec.height, spec.width, data).expect("sized"),
            ));
        }
    }
    let dataset = Dataset::from_entries(
        images
            .iter()
            .map(|(id, _)| (id.clone(), id[..5].to_string())),
    );
    let mut store = MemoryStore::default();
    for (id, img) in &images {
        store.insert(id.clone(), img.clone());
    }
    SyntheticFaces {
        dataset,
        store,
        images,
    }
}

/// `genuine` same-identity pairs and `imposter` cross-identity pairs, drawn
/// without repeating an ordered pair where possible.
pub fn synthetic_pairs(
    dataset: &Dataset,
    genuine: usize,
    imposter: usize,
    seed: u64,
) -> Vec<PairSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identities: Vec<&str> = dataset.identities().collect();
    let mut pairs = Vec::with_capacity(genuine + imposter);
    let multi: Vec<&str> = identities
        .iter()
        .copied()
        .filter(|id| dataset.images_of(id).len() >= 2)
        .collect();
    for _ in 0..genuine {
        let Some(who) = multi.choose(&mut rng) else {
            break;
        };
        let imgs = dataset.images_of(who);
        let picked: Vec<&String> = imgs.choose_multiple(&mut rng, 2).collect();
        pairs.push(PairSpec {
            reference: picked[0].clone(),
            probe: picked[1].clone(),
            label: PairLabel::Genuine,
        });
    }
    if identities.len() >= 2 {
        for _ in 0..imposter {
            let two: Vec<&&str> = identities.choose_multiple(&mut rng, 2).collect();
            pairs.push(PairSpec {
                reference: dataset.images_of(two[0]).choose(&mut rng).unwrap().clone(),
                probe: dataset.images_of(two[1]).choose(&mut rng).unwrap().clone(),
                label: PairLabel::Imposter,
            });
        }
    }
    pairs
}

pub fn format_pairs(pairs: &[PairSpec]) -> String {
    pairs
        .iter()
        .map(|p| {
            let label = match p.label {
                PairLabel::Genuine => "genuine",
                PairLabel::Imposter => "imposter",
            };
            format!("{} {} {label}\n", p.reference, p.probe)
        })
        .collect()
}
