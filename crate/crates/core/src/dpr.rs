//! Decision-based patch replacement.
//!
//! Each patched pair is explained once. Pairs accepted at the decision
//! threshold have their most similar pixels restored first, rejected pairs
//! their least similar ones. Ranked pixels are restored to their original
//! values in cumulative steps; pixels outside the inserted patches are
//! already original and stay as they are. After each step every pair is
//! re-scored and FMR/FNMR recorded.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::argument::{cosine_score, decompose, DecisionThreshold};
use crate::bench::{
    pair_rng, restore_pixels, Benchmark, BenchmarkManifest, ImageStore, PairLabel, PatchMask,
};
use crate::error::{Error, Result};
use crate::imageio::read_png;
use crate::metrics::{fmr_fnmr, trapezoid, ScoreSet};
use crate::model::ModelAdapter;
use crate::saliency::{explain_subject, BlurKernel, ExplanationMap, ImageRef};
use crate::tensor::{preprocess, Embedding, ImageTensor, PixelMap, RawImage};

pub const DEFAULT_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    MostSimilarFirst,
    LeastSimilarFirst,
}

impl Orientation {
    /// Accepted pairs restore their most similar pixels first.
    pub fn for_decision(is_match: bool) -> Self {
        if is_match {
            Orientation::MostSimilarFirst
        } else {
            Orientation::LeastSimilarFirst
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplainerRanking {
    pub explainer: String,
    pub orientation: Orientation,
    /// Row-major pixel indices, most important first. A permutation.
    pub order: Vec<usize>,
}

impl ExplainerRanking {
    pub fn is_permutation(&self, pixels: usize) -> bool {
        if self.order.len() != pixels {
            return false;
        }
        let mut seen = vec![false; pixels];
        self.order
            .iter()
            .all(|&p| p < pixels && !std::mem::replace(&mut seen[p], true))
    }
}

/// Sorts pixels by fused value (descending for most-similar-first); ties go
/// to the lower row-major index.
pub fn rank_pixels(
    map: &PixelMap,
    orientation: Orientation,
    explainer: &str,
) -> Result<ExplainerRanking> {
    if !map.is_finite() {
        return Err(Error::Domain(
            "cannot rank a map with non-finite values".into(),
        ));
    }
    let v = map.data();
    let mut order: Vec<usize> = (0..v.len()).collect();
    match orientation {
        Orientation::MostSimilarFirst => {
            order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)))
        }
        Orientation::LeastSimilarFirst => {
            order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)))
        }
    }
    Ok(ExplainerRanking {
        explainer: explainer.to_string(),
        orientation,
        order,
    })
}

/// Uniform permutation drawn from the stream for `(seed, pair_index)`.
pub fn random_ranking(
    seed: u64,
    pair_index: usize,
    pixels: usize,
    orientation: Orientation,
) -> ExplainerRanking {
    let mut order: Vec<usize> = (0..pixels).collect();
    order.shuffle(&mut pair_rng(seed, pair_index));
    ExplainerRanking {
        explainer: "random".into(),
        orientation,
        order,
    }
}

/// Patch pixels first, then the rest, each in row-major order.
pub fn oracle_ranking(mask: &PatchMask, orientation: Orientation) -> ExplainerRanking {
    let mut order: Vec<usize> = mask.indices().collect();
    order.extend((0..mask.bits().len()).filter(|&p| !mask.contains(p)));
    ExplainerRanking {
        explainer: "oracle".into(),
        orientation,
        order,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub stride: usize,
    pub patch_sizes: Vec<usize>,
    /// Fill value in model input scale.
    pub occluder: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            stride: 5,
            patch_sizes: vec![7, 14, 28],
            occluder: 0.0,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Domain("occlusion stride must be at least 1".into()));
        }
        if self.patch_sizes.is_empty() {
            return Err(Error::Domain(
                "occlusion needs at least one patch size".into(),
            ));
        }
        for &p in &self.patch_sizes {
            if p == 0 || p > height.min(width) {
                return Err(Error::Domain(format!(
                    "occlusion patch {p} does not fit a {height}x{width} image"
                )));
            }
        }
        if !self.occluder.is_finite() {
            return Err(Error::Domain("occluder value must be finite".into()));
        }
        Ok(())
    }

    /// Number of occluded forward passes for one image.
    pub fn passes_per_image(&self, height: usize, width: usize) -> usize {
        self.patch_sizes
            .iter()
            .map(|&p| {
                window_positions(height, p, self.stride) * window_positions(width, p, self.stride)
            })
            .sum()
    }
}

/// `⌊(len − p)/s⌋ + 1`.
pub fn window_positions(len: usize, patch: usize, stride: usize) -> usize {
    (len - patch) / stride + 1
}

/// Score-drop occlusion map for `subject` against a fixed comparison
/// embedding. Each window's drop is spread over its pixels and averaged
/// over coverage, then averaged over the patch sizes that reached the
/// pixel. Positive values mark pixels whose occlusion lowered similarity.
pub fn occlusion_map<M: ModelAdapter + ?Sized>(
    model: &M,
    subject: &ImageTensor,
    subject_embedding: &Embedding,
    comparison: &Embedding,
    cfg: &OcclusionConfig,
) -> Result<PixelMap> {
    let (h, w) = subject.shape();
    cfg.validate(h, w)?;
    let base = cosine_score(subject_embedding, comparison)?;
    let mut total = vec![0.0; h * w];
    let mut sizes_covering = vec![0usize; h * w];
    for &p in &cfg.patch_sizes {
        let mut sum = vec![0.0; h * w];
        let mut cover = vec![0usize; h * w];
        for wy in 0..window_positions(h, p, cfg.stride) {
            for wx in 0..window_positions(w, p, cfg.stride) {
                let (y0, x0) = (wy * cfg.stride, wx * cfg.stride);
                let mut occluded = subject.clone();
                occluded.fill_rect(y0, x0, p, p, cfg.occluder);
                let drop = base - cosine_score(&model.embed(&occluded)?, comparison)?;
                for y in y0..y0 + p {
                    for x in x0..x0 + p {
                        sum[y * w + x] += drop;
                        cover[y * w + x] += 1;
                    }
                }
            }
        }
        for i in 0..h * w {
            if cover[i] > 0 {
                total[i] += sum[i] / cover[i] as f64;
                sizes_covering[i] += 1;
            }
        }
    }
    for (t, &n) in total.iter_mut().zip(&sizes_covering) {
        if n > 0 {
            *t /= n as f64;
        }
    }
    PixelMap::new(h, w, total)
}

/// Occlusion maps for both images of a pair: two embeddings plus
/// `passes_per_image` occluded forwards per image.
pub fn occlusion_explain_pair<M: ModelAdapter + ?Sized>(
    model: &M,
    image_i: ImageRef<'_>,
    image_j: ImageRef<'_>,
    cfg: &OcclusionConfig,
) -> Result<(ExplanationMap, ExplanationMap)> {
    let ei = model.embed(image_i.image)?;
    let ej = model.embed(image_j.image)?;
    let mi = occlusion_map(model, image_i.image, &ei, &ej, cfg)?;
    let mj = occlusion_map(model, image_j.image, &ej, &ei, cfg)?;
    Ok((
        ExplanationMap::from_signed(mi, image_i.id, image_j.id, f64::NAN),
        ExplanationMap::from_signed(mj, image_j.id, image_i.id, f64::NAN),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Explainer {
    Xssab,
    Random { seed: u64 },
    Occlusion(OcclusionConfig),
    Oracle,
}

impl Explainer {
    pub fn name(&self) -> &'static str {
        match self {
            Explainer::Xssab => "xssab",
            Explainer::Random { .. } => "random",
            Explainer::Occlusion(_) => "occlusion",
            Explainer::Oracle => "oracle",
        }
    }
}

/// One patched pair with everything DPR needs.
#[derive(Debug, Clone)]
pub struct DprPair {
    pub index: usize,
    pub label: PairLabel,
    pub reference_id: String,
    pub probe_id: String,
    pub original: RawImage,
    pub patched: RawImage,
    pub probe: RawImage,
    pub mask: PatchMask,
}

impl DprPair {
    pub fn new(
        index: usize,
        label: PairLabel,
        original: RawImage,
        patched: RawImage,
        probe: RawImage,
        mask: PatchMask,
    ) -> Result<Self> {
        if original.shape() != patched.shape() || mask.shape() != original.shape() {
            return Err(Error::Shape(format!(
                "pair {index}: original, patched and mask differ in size"
            )));
        }
        Ok(Self {
            index,
            label,
            reference_id: format!("pair{index}/reference"),
            probe_id: format!("pair{index}/probe"),
            original,
            patched,
            probe,
            mask,
        })
    }
}

/// Resolves every manifest record into a [`DprPair`]; originals and probes
/// come from `store`, patched references from `bench_dir`.
pub fn load_dpr_pairs(
    manifest: &BenchmarkManifest,
    bench_dir: &Path,
    store: &dyn ImageStore,
) -> Result<Vec<DprPair>> {
    manifest
        .records
        .par_iter()
        .map(|r| {
            let original = store.load(&r.pair.reference).map_err(|e| {
                Error::Data(format!(
                    "pair {}: original `{}` unavailable: {e}",
                    r.index, r.pair.reference
                ))
            })?;
            let patched = read_png(&bench_dir.join(&r.patched_reference))?;
            let probe = store.load(&r.pair.probe)?;
            let (h, w) = original.shape();
            let mask = PatchMask::from_rects(h, w, &r.rects)?;
            let mut pair = DprPair::new(r.index, r.pair.label, original, patched, probe, mask)?;
            pair.reference_id = r.pair.reference.clone();
            pair.probe_id = r.pair.probe.clone();
            Ok(pair)
        })
        .collect()
}

/// Same as [`load_dpr_pairs`] for a benchmark still held in memory.
pub fn dpr_pairs_from_benchmark(bench: &Benchmark, store: &dyn ImageStore) -> Result<Vec<DprPair>> {
    bench
        .manifest
        .records
        .par_iter()
        .zip(bench.patched.par_iter())
        .map(|(r, patched)| {
            let original = store.load(&r.pair.reference)?;
            let probe = store.load(&r.pair.probe)?;
            let (h, w) = original.shape();
            let mask = PatchMask::from_rects(h, w, &r.rects)?;
            let mut pair = DprPair::new(
                r.index,
                r.pair.label,
                original,
                patched.clone(),
                probe,
                mask,
            )?;
            pair.reference_id = r.pair.reference.clone();
            pair.probe_id = r.pair.probe.clone();
            Ok(pair)
        })
        .collect()
}

/// Cumulative budgets `0, step, 2·step, …` with the last point forced to 1.
pub fn budget_fractions(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Domain(format!(
            "step must lie in (0, 1], got {step}"
        )));
    }
    let steps = (1.0 / step - 1e-9).ceil() as usize;
    let mut f: Vec<f64> = (0..steps).map(|k| k as f64 * step).collect();
    f.push(1.0);
    Ok(f)
}

/// `⌈fraction · pixels⌉`, clamped to `pixels`.
pub fn pixel_budget(fraction: f64, pixels: usize) -> usize {
    ((fraction * pixels as f64 - 1e-9).ceil().max(0.0) as usize).min(pixels)
}

/// Reference image after restoring the first `n` ranked pixels that lie in
/// the patch mask.
pub fn replaced_reference(
    pair: &DprPair,
    ranking: &ExplainerRanking,
    n: usize,
) -> Result<RawImage> {
    restore_pixels(
        &pair.patched,
        &pair.original,
        ranking.order[..n]
            .iter()
            .copied()
            .filter(|&p| pair.mask.contains(p)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DprCurve {
    pub explainer: String,
    pub fractions: Vec<f64>,
    pub fmr: Vec<f64>,
    pub fnmr: Vec<f64>,
    pub auc_fmr: f64,
    pub auc_fnmr: f64,
}

impl DprCurve {
    pub fn new(
        explainer: &str,
        fractions: Vec<f64>,
        fmr: Vec<f64>,
        fnmr: Vec<f64>,
    ) -> Result<Self> {
        if fractions.len() != fmr.len() || fractions.len() != fnmr.len() {
            return Err(Error::Shape("curve columns differ in length".into()));
        }
        if fractions.first() != Some(&0.0) || fractions.last() != Some(&1.0) {
            return Err(Error::Domain("curve fractions must run from 0 to 1".into()));
        }
        if fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain(
                "curve fractions must be strictly increasing".into(),
            ));
        }
        let mut curve = Self {
            explainer: explainer.to_string(),
            fractions,
            fmr,
            fnmr,
            auc_fmr: 0.0,
            auc_fnmr: 0.0,
        };
        (curve.auc_fmr, curve.auc_fnmr) = auc(&curve)?;
        Ok(curve)
    }

    /// `fraction fmr fnmr` rows followed by an AUC footer.
    pub fn to_table(&self) -> String {
        let mut s = format!("# explainer: {}\nfraction\tfmr\tfnmr\n", self.explainer);
        for ((f, a), b) in self.fractions.iter().zip(&self.fmr).zip(&self.fnmr) {
            s.push_str(&format!("{f:.4}\t{a:.6}\t{b:.6}\n"));
        }
        s.push_str(&format!(
            "# auc_fmr: {:.6}\n# auc_fnmr: {:.6}\n",
            self.auc_fmr, self.auc_fnmr
        ));
        s
    }
}

/// Trapezoidal areas under the FMR and FNMR curves.
pub fn auc(curve: &DprCurve) -> Result<(f64, f64)> {
    Ok((
        trapezoid(&curve.fractions, &curve.fmr)?,
        trapezoid(&curve.fractions, &curve.fnmr)?,
    ))
}

/// Scores at every budget for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTrace {
    pub index: usize,
    pub label: PairLabel,
    pub is_match: bool,
    pub scores: Vec<f64>,
}

/// Ranking `explainer` produces for `pair`, given the patched reference and
/// both embeddings.
#[allow(clippy::too_many_arguments)]
pub fn explainer_ranking<M: ModelAdapter + ?Sized>(
    model: &M,
    explainer: &Explainer,
    pair: &DprPair,
    patched: &ImageTensor,
    patched_embedding: &Embedding,
    probe_embedding: &Embedding,
    th: &DecisionThreshold,
    orientation: Orientation,
) -> Result<ExplainerRanking> {
    match explainer {
        Explainer::Oracle => Ok(oracle_ranking(&pair.mask, orientation)),
        Explainer::Random { seed } => Ok(random_ranking(
            *seed,
            pair.index,
            pair.original.pixels(),
            orientation,
        )),
        Explainer::Xssab => {
            let decomposition = decompose(patched_embedding, probe_embedding, th)?;
            let map = explain_subject(
                model,
                ImageRef::new(&pair.reference_id, patched),
                &pair.probe_id,
                probe_embedding,
                &decomposition,
                th,
                &BlurKernel::default(),
            )?;
            rank_pixels(&map.fused, orientation, "xssab")
        }
        Explainer::Occlusion(cfg) => {
            let map = occlusion_map(model, patched, patched_embedding, probe_embedding, cfg)?;
            rank_pixels(&map, orientation, "occlusion")
        }
    }
}

/// Runs one pair through the replacement schedule.
pub fn trace_pair<M: ModelAdapter + ?Sized>(
    model: &M,
    pair: &DprPair,
    probe_embedding: &Embedding,
    th: &DecisionThreshold,
    explainer: &Explainer,
    fractions: &[f64],
) -> Result<PairTrace> {
    let patched = preprocess(&pair.patched);
    let patched_embedding = model.embed(&patched)?;
    let score = cosine_score(&patched_embedding, probe_embedding)?;
    let is_match = score >= th.value();
    let orientation = Orientation::for_decision(is_match);
    let ranking = explainer_ranking(
        model,
        explainer,
        pair,
        &patched,
        &patched_embedding,
        probe_embedding,
        th,
        orientation,
    )?;
    let pixels = pair.original.pixels();
    if !ranking.is_permutation(pixels) {
        return Err(Error::Contract(format!(
            "{} ranking is not a pixel permutation",
            ranking.explainer
        )));
    }

    let mut current = pair.patched.clone();
    let mut restored = 0;
    let mut scores = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let n = pixel_budget(f, pixels);
        let mut changed = false;
        for &p in &ranking.order[restored..n] {
            if pair.mask.contains(p) {
                let at = p * 3;
                current.data_mut()[at..at + 3].copy_from_slice(&pair.original.data()[at..at + 3]);
                changed = true;
            }
        }
        restored = n;
        // Unchanged images keep their previous score; embedding is deterministic.
        let s = if changed {
            cosine_score(&model.embed(&preprocess(&current))?, probe_embedding)?
        } else {
            scores.last().copied().unwrap_or(score)
        };
        scores.push(s);
    }
    Ok(PairTrace {
        index: pair.index,
        label: pair.label,
        is_match,
        scores,
    })
}

fn rates_at(traces: &[PairTrace], k: usize, th: f64) -> Result<(f64, f64)> {
    let mut set = ScoreSet::default();
    for t in traces {
        match t.label {
            PairLabel::Genuine => set.genuine.push(t.scores[k]),
            PairLabel::Imposter => set.imposter.push(t.scores[k]),
        }
    }
    fmr_fnmr(&set, th)
}

/// FMR/FNMR after each replacement step for one explainer.
pub fn dpr_curve<M: ModelAdapter + ?Sized>(
    model: &M,
    pairs: &[DprPair],
    th: &DecisionThreshold,
    explainer: &Explainer,
    step: f64,
) -> Result<(DprCurve, Vec<PairTrace>)> {
    let fractions = budget_fractions(step)?;
    let traces: Vec<PairTrace> = pairs
        .par_iter()
        .map(|pair| {
            let probe = model.embed(&preprocess(&pair.probe))?;
            trace_pair(model, pair, &probe, th, explainer, &fractions)
        })
        .collect::<Result<_>>()?;
    let mut fmr = Vec::with_capacity(fractions.len());
    let mut fnmr = Vec::with_capacity(fractions.len());
    for k in 0..fractions.len() {
        let (a, b) = rates_at(&traces, k, th.value())?;
        fmr.push(a);
        fnmr.push(b);
    }
    Ok((
        DprCurve::new(explainer.name(), fractions, fmr, fnmr)?,
        traces,
    ))
}

/// Scores of the unpatched (original) and patched pairs.
pub fn pair_scores<M: ModelAdapter + ?Sized>(
    model: &M,
    pairs: &[DprPair],
) -> Result<(ScoreSet, ScoreSet)> {
    let scored: Vec<(PairLabel, f64, f64)> = pairs
        .par_iter()
        .map(|p| {
            let probe = model.embed(&preprocess(&p.probe))?;
            let original = cosine_score(&model.embed(&preprocess(&p.original))?, &probe)?;
            let patched = cosine_score(&model.embed(&preprocess(&p.patched))?, &probe)?;
            Ok((p.label, original, patched))
        })
        .collect::<Result<_>>()?;
    let mut original = ScoreSet::default();
    let mut patched = ScoreSet::default();
    for (label, o, p) in scored {
        let (os, ps) = match label {
            PairLabel::Genuine => (&mut original.genuine, &mut patched.genuine),
            PairLabel::Imposter => (&mut original.imposter, &mut patched.imposter),
        };
        os.push(o);
        ps.push(p);
    }
    Ok((original, patched))
}
