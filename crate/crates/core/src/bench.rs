//! Patch benchmark construction.
//!
//! Every pair gets 27 randomly placed 16×16 patches pasted into its
//! reference image at the same coordinates they occupy in a source image.
//! Genuine pairs take their source from a random image of a different
//! identity (pushing towards false non-matches); imposter pairs take it from
//! their own probe (pushing towards false matches). Probes are never touched.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{read_png, write_png};
use crate::tensor::{RawImage, CHANNELS};

pub const PATCH_COUNT: usize = 27;
pub const PATCH_SIZE: usize = 16;

pub const MANIFEST_FORMAT: &str = "xssab-patch-bench";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl PatchRect {
    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Genuine,
    Imposter,
}

impl PairLabel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "genuine" => Ok(PairLabel::Genuine),
            "imposter" => Ok(PairLabel::Imposter),
            other => Err(Error::Format(format!("unknown pair label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub reference: String,
    pub probe: String,
    pub label: PairLabel,
}

/// Parses `<ref_path> <probe_path> <genuine|imposter>` lines. Blank lines
/// and lines starting with `#` are ignored.
pub fn parse_pairs(text: &str) -> Result<Vec<PairSpec>> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [reference, probe, label] = fields[..] else {
            return Err(Error::Format(format!(
                "pairs line {}: expected `<ref> <probe> <genuine|imposter>`, got {} fields",
                lineno + 1,
                fields.len()
            )));
        };
        let label = PairLabel::parse(label)
            .map_err(|e| Error::Format(format!("pairs line {}: {e}", lineno + 1)))?;
        pairs.push(PairSpec {
            reference: reference.to_string(),
            probe: probe.to_string(),
            label,
        });
    }
    Ok(pairs)
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairSpec>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text)
}

/// Source of images by id.
pub trait ImageStore: Sync {
    fn load(&self, id: &str) -> Result<RawImage>;
}

/// Images addressed by path relative to a root directory.
#[derive(Debug, Clone)]
pub struct DirStore {
    root: PathBuf,
}

impl DirStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl ImageStore for DirStore {
    fn load(&self, id: &str) -> Result<RawImage> {
        read_png(&self.root.join(id))
    }
}

#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    images: BTreeMap<String, RawImage>,
}

impl MemoryStore {
    pub fn insert(&mut self, id: impl Into<String>, image: RawImage) {
        self.images.insert(id.into(), image);
    }
}

impl ImageStore for MemoryStore {
    fn load(&self, id: &str) -> Result<RawImage> {
        self.images
            .get(id)
            .cloned()
            .ok_or_else(|| Error::Data(format!("no image `{id}`")))
    }
}

/// Image ids grouped by identity, in sorted order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    identity_of: BTreeMap<String, String>,
    images_of: BTreeMap<String, Vec<String>>,
}

impl Dataset {
    pub fn from_entries<I, S, T>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut ds = Self::default();
        for (id, identity) in entries {
            let (id, identity) = (id.into(), identity.into());
            ds.images_of
                .entry(identity.clone())
                .or_default()
                .push(id.clone());
            ds.identity_of.insert(id, identity);
        }
        for ids in ds.images_of.values_mut() {
            ids.sort();
            ids.dedup();
        }
        ds
    }

    /// Indexes every `.png` under `root`; the identity of an image is its
    /// parent directory relative to `root`.
    pub fn scan_dir(root: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let path = entry.map_err(|e| Error::io(&dir, e))?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path
                    .extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
                {
                    let rel = path.strip_prefix(root).expect("walked under root");
                    let Some(parent) = rel.parent().filter(|p| !p.as_os_str().is_empty()) else {
                        continue;
                    };
                    entries.push((to_id(rel), to_id(parent)));
                }
            }
        }
        Ok(Self::from_entries(entries))
    }

    pub fn identity_of(&self, id: &str) -> Option<&str> {
        self.identity_of.get(id).map(String::as_str)
    }

    pub fn identities(&self) -> impl Iterator<Item = &str> {
        self.images_of.keys().map(String::as_str)
    }

    pub fn images_of(&self, identity: &str) -> &[String] {
        self.images_of
            .get(identity)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.identity_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identity_of.is_empty()
    }
}

fn to_id(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Uniform top-left corners for `count` in-bounds `size × size` rects.
pub fn sample_rects<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    size: usize,
    shape: (usize, usize),
) -> Result<Vec<PatchRect>> {
    let (h, w) = shape;
    if size == 0 || h < size || w < size {
        return Err(Error::Domain(format!(
            "{h}x{w} image cannot hold a {size}x{size} patch"
        )));
    }
    Ok((0..count)
        .map(|_| PatchRect {
            x: rng.gen_range(0..=w - size),
            y: rng.gen_range(0..=h - size),
            w: size,
            h: size,
        })
        .collect())
}

pub fn sample_rects_seeded(
    seed: u64,
    count: usize,
    size: usize,
    shape: (usize, usize),
) -> Result<Vec<PatchRect>> {
    sample_rects(&mut ChaCha8Rng::seed_from_u64(seed), count, size, shape)
}

/// Boolean pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl PatchMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_rects(height: usize, width: usize, rects: &[PatchRect]) -> Result<Self> {
        let mut mask = Self::empty(height, width);
        for r in rects {
            if !r.fits(height, width) {
                return Err(Error::Domain(format!(
                    "rect {r:?} outside {height}x{width} image"
                )));
            }
            for y in r.y..r.y + r.h {
                mask.bits[y * width + r.x..y * width + r.x + r.w].fill(true);
            }
        }
        Ok(mask)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn contains(&self, pixel: usize) -> bool {
        self.bits[pixel]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Row-major indices of masked pixels.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }
}

fn copy_pixel(dst: &mut RawImage, src: &RawImage, pixel: usize) {
    let at = pixel * CHANNELS;
    dst.data_mut()[at..at + CHANNELS].copy_from_slice(&src.data()[at..at + CHANNELS]);
}

/// Copies each rect of `source` into `reference` at the same coordinates.
pub fn apply_patches(
    reference: &RawImage,
    source: &RawImage,
    rects: &[PatchRect],
) -> Result<(RawImage, PatchMask)> {
    if reference.shape() != source.shape() {
        return Err(Error::Shape(format!(
            "reference {:?} and source {:?} differ in size",
            reference.shape(),
            source.shape()
        )));
    }
    let (h, w) = reference.shape();
    let mask = PatchMask::from_rects(h, w, rects)?;
    let mut patched = reference.clone();
    for p in mask.indices() {
        copy_pixel(&mut patched, source, p);
    }
    Ok((patched, mask))
}

/// `out[p] = original[p]` for `p` in `pixels`, `patched[p]` elsewhere.
pub fn restore_pixels<I>(patched: &RawImage, original: &RawImage, pixels: I) -> Result<RawImage>
where
    I: IntoIterator<Item = usize>,
{
    if patched.shape() != original.shape() {
        return Err(Error::Shape(
            "patched and original images differ in size".into(),
        ));
    }
    let n = patched.pixels();
    let mut out = patched.clone();
    for p in pixels {
        if p >= n {
            return Err(Error::Domain(format!(
                "pixel index {p} out of range for {n} pixels"
            )));
        }
        copy_pixel(&mut out, original, p);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub index: usize,
    pub pair: PairSpec,
    /// Path of the patched reference, relative to the benchmark directory.
    pub patched_reference: String,
    /// Image the patches were cut from.
    pub source: String,
    pub source_identity: String,
    pub reference_identity: String,
    pub rects: Vec<PatchRect>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub index: usize,
    pub pair: PairSpec,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub patch_count: usize,
    pub patch_size: usize,
    /// Directory the original images are resolved against.
    pub data_root: Option<String>,
    pub records: Vec<BenchmarkRecord>,
    pub skipped: Vec<SkippedPair>,
}

impl BenchmarkManifest {
    pub fn genuine_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.pair.label == PairLabel::Genuine)
            .count()
    }

    pub fn imposter_count(&self) -> usize {
        self.records.len() - self.genuine_count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!(
                "manifest format `{}` is not {MANIFEST_FORMAT}",
                m.format
            )));
        }
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version {}",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn record(&self, index: usize) -> Result<&BenchmarkRecord> {
        self.records
            .iter()
            .find(|r| r.index == index)
            .ok_or_else(|| Error::Data(format!("pair {index} not in manifest")))
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub manifest: BenchmarkManifest,
    /// Patched reference images, aligned with `manifest.records`.
    pub patched: Vec<RawImage>,
}

enum Outcome {
    Built(BenchmarkRecord, RawImage),
    Skipped(SkippedPair),
}

/// RNG stream for pair `index`; independent of processing order.
pub fn pair_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn build_one(
    dataset: &Dataset,
    store: &dyn ImageStore,
    index: usize,
    pair: &PairSpec,
    seed: u64,
) -> Result<Outcome> {
    let identity = |id: &str| {
        dataset
            .identity_of(id)
            .map(str::to_string)
            .ok_or_else(|| Error::Data(format!("pair {index}: image `{id}` is not in the dataset")))
    };
    let ref_identity = identity(&pair.reference)?;
    let probe_identity = identity(&pair.probe)?;
    match (pair.label, ref_identity == probe_identity) {
        (PairLabel::Genuine, false) => {
            return Err(Error::Data(format!(
            "pair {index}: genuine pair spans identities `{ref_identity}` and `{probe_identity}`"
        )))
        }
        (PairLabel::Imposter, true) => {
            return Err(Error::Data(format!(
                "pair {index}: imposter pair has a single identity `{ref_identity}`"
            )))
        }
        _ => {}
    }

    let mut rng = pair_rng(seed, index);
    let (source, source_identity) = match pair.label {
        PairLabel::Imposter => (pair.probe.clone(), probe_identity),
        PairLabel::Genuine => {
            let others: Vec<&str> = dataset
                .identities()
                .filter(|&id| id != ref_identity && !dataset.images_of(id).is_empty())
                .collect();
            let Some(&chosen) = others.choose(&mut rng) else {
                return Ok(Outcome::Skipped(SkippedPair {
                    index,
                    pair: pair.clone(),
                    reason: format!("no identity other than `{ref_identity}` to take patches from"),
                }));
            };
            let image = dataset
                .images_of(chosen)
                .choose(&mut rng)
                .expect("non-empty");
            (image.clone(), chosen.to_string())
        }
    };

    let reference = store.load(&pair.reference)?;
    let source_image = store.load(&source)?;
    let rects = sample_rects(&mut rng, PATCH_COUNT, PATCH_SIZE, reference.shape())?;
    let (patched, _) = apply_patches(&reference, &source_image, &rects)?;
    Ok(Outcome::Built(
        BenchmarkRecord {
            index,
            pair: pair.clone(),
            patched_reference: format!("patched/{index:05}.png"),
            source,
            source_identity,
            reference_identity: ref_identity,
            rects,
        },
        patched,
    ))
}

/// Builds patched references for every pair. Pairs are processed in
/// parallel; results are identical for any worker count.
pub fn build_benchmark(
    dataset: &Dataset,
    store: &dyn ImageStore,
    pairs: &[PairSpec],
    seed: u64,
) -> Result<Benchmark> {
    let outcomes: Vec<Outcome> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| build_one(dataset, store, i, p, seed))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut patched = Vec::new();
    let mut skipped = Vec::new();
    for outcome in outcomes {
        match outcome {
            Outcome::Built(r, img) => {
                records.push(r);
                patched.push(img);
            }
            Outcome::Skipped(s) => {
                log::warn!("skipping pair {}: {}", s.index, s.reason);
                skipped.push(s);
            }
        }
    }
    Ok(Benchmark {
        manifest: BenchmarkManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            seed,
            patch_count: PATCH_COUNT,
            patch_size: PATCH_SIZE,
            data_root: None,
            records,
            skipped,
        },
        patched,
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `manifest.json` and the patched PNGs under `dir`.
pub fn write_benchmark(bench: &Benchmark, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (record, img) in bench.manifest.records.iter().zip(&bench.patched) {
        write_png(img, &dir.join(&record.patched_reference))?;
    }
    bench.manifest.write(&dir.join(MANIFEST_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, v: u8) -> RawImage {
        RawImage::filled(h, w, v).unwrap()
    }

    fn gradient(h: usize, w: usize, k: usize) -> RawImage {
        RawImage::new(
            h,
            w,
            (0..h * w * 3).map(|i| ((i * k) % 251) as u8).collect(),
        )
        .unwrap()
    }

    #[test]
    fn rects_are_deterministic_and_in_bounds() {
        let a = sample_rects_seeded(11, PATCH_COUNT, PATCH_SIZE, (112, 112)).unwrap();
        let b = sample_rects_seeded(11, PATCH_COUNT, PATCH_SIZE, (112, 112)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 27);
        assert!(a
            .iter()
            .all(|r| r.x <= 96 && r.y <= 96 && r.w == 16 && r.h == 16));
        assert!(matches!(
            sample_rects_seeded(1, 27, 16, (15, 112)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn patching_copies_same_coordinates_only() {
        let reference = gradient(20, 24, 3);
        let source = gradient(20, 24, 7);
        let rects = [PatchRect {
            x: 0,
            y: 0,
            w: 16,
            h: 16,
        }];
        let (patched, mask) = apply_patches(&reference, &source, &rects).unwrap();
        assert_eq!(mask.count(), 256);
        for y in 0..20 {
            for x in 0..24 {
                let expect = if y < 16 && x < 16 {
                    source.pixel(y, x)
                } else {
                    reference.pixel(y, x)
                };
                assert_eq!(patched.pixel(y, x), expect);
            }
        }
        let (same, mask2) = apply_patches(&reference, &reference, &rects).unwrap();
        assert_eq!(same, reference);
        assert_eq!(mask2, mask);
        assert!(matches!(
            apply_patches(&reference, &img(20, 20, 0), &rects),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn restore_examples() {
        let original = gradient(18, 18, 5);
        let rects = sample_rects_seeded(2, 4, 16, (18, 18)).unwrap();
        let (patched, mask) = apply_patches(&original, &gradient(18, 18, 9), &rects).unwrap();
        assert_eq!(
            restore_pixels(&patched, &original, 0..18 * 18).unwrap(),
            original
        );
        assert_eq!(
            restore_pixels(&patched, &original, std::iter::empty()).unwrap(),
            patched
        );
        let outside: Vec<usize> = (0..18 * 18).filter(|&p| !mask.contains(p)).collect();
        assert_eq!(
            restore_pixels(&patched, &original, outside).unwrap(),
            patched
        );
        assert!(matches!(
            restore_pixels(&patched, &original, [18 * 18]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn pairs_parsing() {
        let pairs =
            parse_pairs("# header\na/1.png a/2.png genuine\n\nb/1.png a/1.png imposter\n").unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].label, PairLabel::Imposter);
        let err = parse_pairs("a b genuine\na b c d\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_pairs("a b maybe\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    fn toy_world() -> (Dataset, MemoryStore) {
        let mut store = MemoryStore::default();
        let mut entries = Vec::new();
        for (k, who) in ["ann", "bob", "cat"].iter().enumerate() {
            for n in 0..2 {
                let id = format!("{who}/{n}.png");
                store.insert(id.clone(), gradient(32, 32, 3 + 2 * k + n));
                entries.push((id, who.to_string()));
            }
        }
        (Dataset::from_entries(entries), store)
    }

    #[test]
    fn build_follows_source_rules() {
        let (ds, store) = toy_world();
        let pairs = parse_pairs(
            "ann/0.png ann/1.png genuine\nbob/0.png ann/1.png imposter\ncat/0.png cat/1.png genuine\n",
        )
        .unwrap();
        let bench = build_benchmark(&ds, &store, &pairs, 5).unwrap();
        assert_eq!(bench.manifest.records.len(), 3);
        for r in &bench.manifest.records {
            assert_eq!(r.rects.len(), PATCH_COUNT);
            match r.pair.label {
                PairLabel::Genuine => assert_ne!(r.source_identity, r.reference_identity),
                PairLabel::Imposter => assert_eq!(r.source, r.pair.probe),
            }
        }
        let again = build_benchmark(&ds, &store, &pairs, 5).unwrap();
        assert_eq!(again.manifest, bench.manifest);
        assert_eq!(again.patched, bench.patched);
    }

    #[test]
    fn lone_identity_is_skipped() {
        let mut store = MemoryStore::default();
        store.insert("solo/0.png", img(16, 16, 1));
        store.insert("solo/1.png", img(16, 16, 2));
        let ds = Dataset::from_entries([("solo/0.png", "solo"), ("solo/1.png", "solo")]);
        let pairs = parse_pairs("solo/0.png solo/1.png genuine\n").unwrap();
        let bench = build_benchmark(&ds, &store, &pairs, 0).unwrap();
        assert!(bench.manifest.records.is_empty());
        assert_eq!(bench.manifest.skipped.len(), 1);
    }

    #[test]
    fn mislabeled_pairs_rejected() {
        let (ds, store) = toy_world();
        let pairs = parse_pairs("ann/0.png bob/1.png genuine\n").unwrap();
        assert!(matches!(
            build_benchmark(&ds, &store, &pairs, 0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn manifest_roundtrip() {
        let (ds, store) = toy_world();
        let pairs = parse_pairs("ann/0.png ann/1.png genuine\n").unwrap();
        let m = build_benchmark(&ds, &store, &pairs, 9).unwrap().manifest;
        assert_eq!(BenchmarkManifest::from_json(&m.to_json()).unwrap(), m);
        let wrong = m.to_json().replace(MANIFEST_FORMAT, "other");
        assert!(BenchmarkManifest::from_json(&wrong).is_err());
    }
}
