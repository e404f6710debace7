//! Similarity-score arguments.
//!
//! For unit-norm embeddings the cosine score is `Σ ei_n · ej_n`; each term is
//! a feature argument. Terms at or above `th_d / N` argue for a match, the
//! rest against it. Masking the comparison embedding to one side yields the
//! cosine-layer weights whose gradients give the similarity and
//! dissimilarity maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, Embedding};

/// Bound on `|S_C|` beyond 1 tolerated from rounding.
pub const SCORE_SLACK: f64 = 1e-9;

/// System decision threshold in cosine-score units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionThreshold {
    value: f64,
    provenance: String,
}

impl DecisionThreshold {
    pub fn new(value: f64, provenance: impl Into<String>) -> Result<Self> {
        if !value.is_finite() || value <= -1.0 || value >= 1.0 {
            return Err(Error::Domain(format!(
                "decision threshold must lie in (-1, 1), got {value}"
            )));
        }
        Ok(Self {
            value,
            provenance: provenance.into(),
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgumentDecomposition {
    /// Cosine score, equal to the sum of `arguments`.
    pub score: f64,
    /// Argument threshold `th_d / N`.
    pub threshold: f64,
    /// Zero-based indices with `arguments[n] >= threshold`.
    pub positive: Vec<usize>,
    /// Zero-based indices with `arguments[n] < threshold`.
    pub negative: Vec<usize>,
    pub arguments: Vec<f64>,
}

impl ArgumentDecomposition {
    pub fn dim(&self) -> usize {
        self.arguments.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("decomposition serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedWeights {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

fn check_pair(ei: &Embedding, ej: &Embedding) -> Result<()> {
    if !ei.is_normalized() || !ej.is_normalized() {
        return Err(Error::Contract(
            "feature arguments are only defined on normalized embeddings".into(),
        ));
    }
    if ei.dim() != ej.dim() {
        return Err(Error::Shape(format!(
            "embedding dims differ: {} vs {}",
            ei.dim(),
            ej.dim()
        )));
    }
    Ok(())
}

pub fn cosine_score(ei: &Embedding, ej: &Embedding) -> Result<f64> {
    check_pair(ei, ej)?;
    Ok(dot(ei.values(), ej.values()))
}

/// `a_n = ei_n · ej_n`.
pub fn feature_arguments(ei: &Embedding, ej: &Embedding) -> Result<Vec<f64>> {
    check_pair(ei, ej)?;
    Ok(ei
        .values()
        .iter()
        .zip(ej.values())
        .map(|(x, y)| x * y)
        .collect())
}

/// `th_d / n`.
pub fn argument_threshold(th: &DecisionThreshold, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("argument threshold needs n >= 1".into()));
    }
    Ok(th.value() / n as f64)
}

/// Splits indices by `a_n >= threshold`; ties land on the positive side.
pub fn partition_arguments(arguments: &[f64], threshold: f64) -> Result<ArgumentDecomposition> {
    if arguments.iter().any(|a| a.is_nan()) || threshold.is_nan() {
        return Err(Error::Domain("NaN in feature arguments".into()));
    }
    let (positive, negative): (Vec<usize>, Vec<usize>) =
        (0..arguments.len()).partition(|&n| arguments[n] >= threshold);
    Ok(ArgumentDecomposition {
        score: arguments.iter().sum(),
        threshold,
        positive,
        negative,
        arguments: arguments.to_vec(),
    })
}

/// Arguments, threshold and partition for a pair in one go.
pub fn decompose(
    ei: &Embedding,
    ej: &Embedding,
    th: &DecisionThreshold,
) -> Result<ArgumentDecomposition> {
    let arguments = feature_arguments(ei, ej)?;
    let threshold = argument_threshold(th, arguments.len())?;
    let mut decomp = partition_arguments(&arguments, threshold)?;
    decomp.score = cosine_score(ei, ej)?;
    Ok(decomp)
}

/// Copies `ej` into the positive or negative weight vector according to the
/// partition; the two always sum to `ej`.
pub fn masked_weights(ej: &Embedding, decomp: &ArgumentDecomposition) -> Result<MaskedWeights> {
    let n = ej.dim();
    if decomp.dim() != n {
        return Err(Error::Shape(format!(
            "decomposition has {} arguments, embedding has {n}",
            decomp.dim()
        )));
    }
    if decomp.positive.len() + decomp.negative.len() != n {
        return Err(Error::Shape(
            "index sets do not cover every dimension".into(),
        ));
    }
    let mut positive = vec![0.0; n];
    let mut negative = vec![0.0; n];
    let mut seen = vec![false; n];
    for (indices, target) in [
        (&decomp.positive, &mut positive),
        (&decomp.negative, &mut negative),
    ] {
        for &i in indices {
            if i >= n {
                return Err(Error::Shape(format!(
                    "argument index {i} out of range for dim {n}"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Shape(format!("argument index {i} appears twice")));
            }
            target[i] = ej.values()[i];
        }
    }
    Ok(MaskedWeights { positive, negative })
}

/// Output of the cosine head with weights `w`: `Σ ei_n · w_n`.
pub fn masked_score(ei: &Embedding, w: &[f64]) -> Result<f64> {
    if ei.dim() != w.len() {
        return Err(Error::Shape(format!(
            "weights have {} entries, embedding has {}",
            w.len(),
            ei.dim()
        )));
    }
    Ok(dot(ei.values(), w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::normalize;
    use proptest::prelude::*;

    fn unit(v: &[f64]) -> Embedding {
        Embedding::unit(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let x = normalize(&[0.3, -1.2, 2.0]).unwrap();
        assert!((cosine_score(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg = unit(&x.values().iter().map(|v| -v).collect::<Vec<_>>());
        assert!((cosine_score(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        let ei = unit(&[0.5, 0.5, 0.5, 0.5]);
        let ej = unit(&[0.5, 0.5, -0.5, 0.5]);
        assert_eq!(cosine_score(&ei, &ej).unwrap(), 0.5);
    }

    #[test]
    fn unnormalized_input_rejected() {
        let raw = Embedding::raw(vec![3.0, 4.0]).unwrap();
        let u = unit(&[0.6, 0.8]);
        assert!(matches!(cosine_score(&raw, &u), Err(Error::Contract(_))));
        assert!(matches!(
            feature_arguments(&u, &raw),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn dim_mismatch_is_shape_error() {
        let a = unit(&[1.0, 0.0]);
        let b = unit(&[1.0, 0.0, 0.0]);
        assert!(matches!(feature_arguments(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(masked_score(&a, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn argument_examples() {
        let ei = unit(&[0.5, 0.5, 0.5, 0.5]);
        let ej = unit(&[0.5, 0.5, -0.5, 0.5]);
        assert_eq!(
            feature_arguments(&ei, &ej).unwrap(),
            vec![0.25, 0.25, -0.25, 0.25]
        );
        let e1 = unit(&[1.0, 0.0, 0.0]);
        let e2 = unit(&[0.0, 1.0, 0.0]);
        assert_eq!(feature_arguments(&e1, &e2).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn threshold_examples() {
        let th = DecisionThreshold::new(0.4, "test").unwrap();
        assert!((argument_threshold(&th, 4).unwrap() - 0.1).abs() < 1e-17);
        let zero = DecisionThreshold::new(0.0, "test").unwrap();
        assert_eq!(argument_threshold(&zero, 17).unwrap(), 0.0);
        let th = DecisionThreshold::new(0.512, "test").unwrap();
        assert!((argument_threshold(&th, 512).unwrap() - 0.001).abs() < 1e-18);
        assert!(matches!(argument_threshold(&th, 0), Err(Error::Domain(_))));
        assert!(DecisionThreshold::new(1.0, "").is_err());
        assert!(DecisionThreshold::new(-1.0, "").is_err());
        assert!(DecisionThreshold::new(-0.3, "negative thresholds are allowed").is_ok());
    }

    #[test]
    fn partition_examples() {
        let d = partition_arguments(&[0.25, 0.25, -0.25, 0.25], 0.1).unwrap();
        assert_eq!(d.positive, vec![0, 1, 3]);
        assert_eq!(d.negative, vec![2]);
        let ties = partition_arguments(&[0.2, 0.2, 0.2], 0.2).unwrap();
        assert_eq!(ties.positive, vec![0, 1, 2]);
        assert!(ties.negative.is_empty());
        let high = partition_arguments(&[0.2, -0.1], 0.5).unwrap();
        assert!(high.positive.is_empty());
        assert_eq!(high.negative, vec![0, 1]);
        assert!(matches!(
            partition_arguments(&[0.1, f64::NAN], 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn masked_weight_examples() {
        let ei = unit(&[0.5, 0.5, 0.5, 0.5]);
        let ej = unit(&[0.5, 0.5, -0.5, 0.5]);
        let d = decompose(&ei, &ej, &DecisionThreshold::new(0.4, "").unwrap()).unwrap();
        let w = masked_weights(&ej, &d).unwrap();
        assert_eq!(w.positive, vec![0.5, 0.5, 0.0, 0.5]);
        assert_eq!(w.negative, vec![0.0, 0.0, -0.5, 0.0]);
        assert_eq!(masked_score(&ei, &w.positive).unwrap(), 0.75);
        assert_eq!(masked_score(&ei, &w.negative).unwrap(), -0.25);
        assert_eq!(
            masked_score(&ei, &w.positive).unwrap() + masked_score(&ei, &w.negative).unwrap(),
            0.5
        );
        assert_eq!(masked_score(&ei, &[0.0; 4]).unwrap(), 0.0);

        let none = partition_arguments(&d.arguments, 1.0).unwrap();
        let w = masked_weights(&ej, &none).unwrap();
        assert_eq!(w.positive, vec![0.0; 4]);
    }

    #[test]
    fn masked_weights_rejects_bad_indices() {
        let ej = unit(&[0.6, 0.8]);
        let bad = ArgumentDecomposition {
            score: 0.0,
            threshold: 0.0,
            positive: vec![0, 5],
            negative: vec![],
            arguments: vec![0.0, 0.0],
        };
        assert!(matches!(masked_weights(&ej, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn decomposition_serializes_readably() {
        let d = partition_arguments(&[0.25, -0.25], 0.0).unwrap();
        let json = d.to_json();
        assert!(json.contains("\"positive\""));
        let back: ArgumentDecomposition = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }

    fn unit_pair(dim: usize) -> impl Strategy<Value = (Embedding, Embedding)> {
        let v = prop::collection::vec(-1.0f64..1.0, dim);
        (v.clone(), v)
            .prop_filter("non-degenerate", |(a, b)| {
                a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3)
            })
            .prop_map(|(a, b)| (normalize(&a).unwrap(), normalize(&b).unwrap()))
    }

    proptest! {
        #[test]
        fn partition_is_total_and_disjoint(
            a in prop::collection::vec(-1.0f64..1.0, 1..64),
            th in -0.5f64..0.5,
        ) {
            let d = partition_arguments(&a, th).unwrap();
            let mut all: Vec<usize> = d.positive.iter().chain(&d.negative).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..a.len()).collect::<Vec<_>>());
            for &i in &d.positive { prop_assert!(a[i] >= th); }
            for &i in &d.negative { prop_assert!(a[i] < th); }
        }

        #[test]
        fn raising_threshold_never_promotes(
            a in prop::collection::vec(-1.0f64..1.0, 1..64),
            t1 in -0.5f64..0.5,
            dt in 0.0f64..0.5,
        ) {
            let lo = partition_arguments(&a, t1).unwrap();
            let hi = partition_arguments(&a, t1 + dt).unwrap();
            for i in lo.negative { prop_assert!(hi.negative.contains(&i)); }
        }

        #[test]
        fn arguments_are_symmetric((ei, ej) in unit_pair(16)) {
            prop_assert_eq!(feature_arguments(&ei, &ej).unwrap(), feature_arguments(&ej, &ei).unwrap());
        }

        #[test]
        fn score_is_conserved((ei, ej) in unit_pair(32), th in -0.9f64..0.9) {
            let d = decompose(&ei, &ej, &DecisionThreshold::new(th, "").unwrap()).unwrap();
            let w = masked_weights(&ej, &d).unwrap();
            let sum: f64 = d.arguments.iter().sum();
            prop_assert!((sum - d.score).abs() <= 1e-9);
            let split = masked_score(&ei, &w.positive).unwrap() + masked_score(&ei, &w.negative).unwrap();
            prop_assert!((split - d.score).abs() <= 1e-9);
            let recombined: Vec<f64> = w.positive.iter().zip(&w.negative).map(|(p, n)| p + n).collect();
            prop_assert_eq!(recombined.as_slice(), ej.values());
        }
    }
}
