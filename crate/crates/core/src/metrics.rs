//! Verification error rates.
//!
//! A comparison is a match when `score >= threshold`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, imposter: Vec<f64>) -> Result<Self> {
        let set = Self { genuine, imposter };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.genuine.is_empty() || self.imposter.is_empty() {
            return Err(Error::Domain(format!(
                "need genuine and imposter scores (got {} genuine, {} imposter)",
                self.genuine.len(),
                self.imposter.len()
            )));
        }
        let bound = 1.0 + crate::argument::SCORE_SLACK;
        if let Some(bad) = self
            .genuine
            .iter()
            .chain(&self.imposter)
            .find(|s| !s.is_finite() || s.abs() > bound)
        {
            return Err(Error::Domain(format!("score {bad} outside [-1, 1]")));
        }
        Ok(())
    }
}

/// `(FMR, FNMR)` at `threshold`.
pub fn fmr_fnmr(scores: &ScoreSet, threshold: f64) -> Result<(f64, f64)> {
    scores.validate()?;
    let false_matches = scores.imposter.iter().filter(|&&s| s >= threshold).count();
    let false_non_matches = scores.genuine.iter().filter(|&&s| s < threshold).count();
    Ok((
        false_matches as f64 / scores.imposter.len() as f64,
        false_non_matches as f64 / scores.genuine.len() as f64,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub threshold: f64,
    pub eer: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

/// Equal-error operating point.
///
/// Candidate thresholds are the midpoints of consecutive sorted pooled
/// scores. The chosen one minimizes `|FMR − FNMR|`, then `FMR + FNMR`; if
/// several remain, the one nearest the middle of their span wins (lower on
/// an exact tie). Rates are compared as exact integer ratios.
pub fn compute_eer_threshold(scores: &ScoreSet) -> Result<EerPoint> {
    scores.validate()?;
    let mut genuine = scores.genuine.clone();
    let mut imposter = scores.imposter.clone();
    genuine.sort_by(f64::total_cmp);
    imposter.sort_by(f64::total_cmp);
    let mut pooled: Vec<f64> = genuine.iter().chain(&imposter).copied().collect();
    pooled.sort_by(f64::total_cmp);

    let g = genuine.len() as u128;
    let i = imposter.len() as u128;
    // (threshold, |fm·G − fnm·I|, fm·G + fnm·I)
    let mut best: Option<(u128, u128)> = None;
    let mut tied: Vec<f64> = Vec::new();
    for pair in pooled.windows(2) {
        let t = 0.5 * (pair[0] + pair[1]);
        let fm = (imposter.len() - imposter.partition_point(|&s| s < t)) as u128;
        let fnm = genuine.partition_point(|&s| s < t) as u128;
        let key = ((fm * g).abs_diff(fnm * i), fm * g + fnm * i);
        match best {
            Some(b) if key > b => {}
            Some(b) if key == b => tied.push(t),
            _ => {
                best = Some(key);
                tied.clear();
                tied.push(t);
            }
        }
    }
    let threshold = pick_middle(&tied);
    let (fmr, fnmr) = fmr_fnmr(scores, threshold)?;
    Ok(EerPoint {
        threshold,
        eer: 0.5 * (fmr + fnmr),
        fmr,
        fnmr,
    })
}

/// Element of a non-empty ascending list nearest the midpoint of its span.
fn pick_middle(sorted: &[f64]) -> f64 {
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let mid = 0.5 * (lo + hi);
    let mut best = lo;
    for &t in sorted {
        if (t - mid).abs() < (best - mid).abs() {
            best = t;
        }
    }
    best
}

/// Trapezoidal area under `values` over `fractions`.
pub fn trapezoid(fractions: &[f64], values: &[f64]) -> Result<f64> {
    if fractions.len() != values.len() {
        return Err(Error::Shape(
            "curve abscissa and ordinate differ in length".into(),
        ));
    }
    if fractions.len() < 2 {
        return Err(Error::Domain("AUC needs at least two curve points".into()));
    }
    Ok(fractions
        .windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * 0.5 * (y[0] + y[1]))
        .sum())
}
