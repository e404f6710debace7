//! Per-pair timing of explanation-map creation.
//!
//! Pairs are processed one at a time on the calling thread. Only map
//! creation is timed; image decoding and preprocessing happen beforehand.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::argument::DecisionThreshold;
use crate::dpr::{occlusion_explain_pair, OcclusionConfig};
use crate::error::{Error, Result};
use crate::model::{CountingModel, ModelAdapter};
use crate::saliency::{explain_pair, ImageRef};
use crate::tensor::ImageTensor;

/// Published per-pair means for a ResNet-100 on GPU, printed next to local
/// measurements for context only.
pub const PUBLISHED_SECONDS: [(&str, f64); 2] = [("xssab", 0.24), ("occlusion", 12.49)];

#[derive(Debug, Clone, PartialEq)]
pub enum Approach {
    Xssab,
    Occlusion(OcclusionConfig),
}

impl Approach {
    pub fn name(&self) -> &'static str {
        match self {
            Approach::Xssab => "xssab",
            Approach::Occlusion(_) => "occlusion",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "xssab" => Ok(Approach::Xssab),
            "occlusion" => Ok(Approach::Occlusion(OcclusionConfig::default())),
            other => Err(Error::Domain(format!(
                "latency supports xssab and occlusion, not `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachLatency {
    pub approach: String,
    pub pairs: usize,
    /// Mean seconds per pair.
    pub t_mean: f64,
    /// Sum of per-pair seconds.
    pub t_total: f64,
    pub forward_passes: usize,
    pub backward_passes: usize,
}

impl ApproachLatency {
    pub fn forward_per_pair(&self) -> f64 {
        self.forward_passes as f64 / self.pairs as f64
    }

    pub fn backward_per_pair(&self) -> f64 {
        self.backward_passes as f64 / self.pairs as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyReport {
    pub entries: Vec<ApproachLatency>,
}

impl LatencyReport {
    pub fn to_table(&self) -> String {
        let mut s = String::from("approach\tpairs\tT_Mean[s]\tT_Total[s]\tforward\tbackward\tforward/pair\tbackward/pair\n");
        for e in &self.entries {
            s += &format!(
                "{}\t{}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\n",
                e.approach,
                e.pairs,
                e.t_mean,
                e.t_total,
                e.forward_passes,
                e.backward_passes,
                e.forward_per_pair(),
                e.backward_per_pair()
            );
        }
        s
    }
}

/// Times `approach` over `pairs`, one pair at a time.
pub fn measure<M: ModelAdapter>(
    model: &M,
    pairs: &[(ImageTensor, ImageTensor)],
    approach: &Approach,
    th: &DecisionThreshold,
) -> Result<ApproachLatency> {
    if pairs.is_empty() {
        return Err(Error::Data("no pairs to time".into()));
    }
    let counted = CountingModel::new(model);
    let mut t_total = 0.0;
    for (k, (a, b)) in pairs.iter().enumerate() {
        let ia = format!("pair{k}/a");
        let ib = format!("pair{k}/b");
        let start = Instant::now();
        match approach {
            Approach::Xssab => {
                std::hint::black_box(explain_pair(
                    &counted,
                    ImageRef::new(&ia, a),
                    ImageRef::new(&ib, b),
                    th,
                )?);
            }
            Approach::Occlusion(cfg) => {
                std::hint::black_box(occlusion_explain_pair(
                    &counted,
                    ImageRef::new(&ia, a),
                    ImageRef::new(&ib, b),
                    cfg,
                )?);
            }
        }
        t_total += start.elapsed().as_secs_f64();
    }
    let counts = counted.counts();
    Ok(ApproachLatency {
        approach: approach.name().into(),
        pairs: pairs.len(),
        t_mean: t_total / pairs.len() as f64,
        t_total,
        forward_passes: counts.forward,
        backward_passes: counts.backward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ReferenceModelSpec;

    #[test]
    fn counts_follow_the_pass_contract() {
        let model = ReferenceModelSpec::linear_toy(2, 32, 32, 6)
            .build()
            .unwrap();
        let a = ImageTensor::filled(32, 32, 0.3).unwrap();
        let mut b = a.clone();
        b.set(3, 4, 1, -0.7);
        let pairs = vec![(a.clone(), b.clone()), (b, a)];
        let th = DecisionThreshold::new(0.2, "test").unwrap();

        let x = measure(&model, &pairs, &Approach::Xssab, &th).unwrap();
        assert_eq!((x.forward_passes, x.backward_passes), (4, 8));
        assert!((x.t_mean * 2.0 - x.t_total).abs() < 1e-12);

        let cfg = OcclusionConfig {
            stride: 5,
            patch_sizes: vec![7, 14],
            occluder: 0.0,
        };
        let per_image = cfg.passes_per_image(32, 32);
        let o = measure(&model, &pairs, &Approach::Occlusion(cfg), &th).unwrap();
        assert_eq!(o.forward_passes, 2 * (2 + 2 * per_image));
        assert_eq!(o.backward_passes, 0);
    }

    #[test]
    fn unknown_approach_is_rejected() {
        assert!(Approach::parse("random").is_err());
    }
}
