//! The mention-entity scoring contract.
//!
//! The default matcher scores the global text features with cosine
//! similarity; the fused variant averages the unit text and unit image
//! vectors per side first. A missing image contributes the zero vector, and
//! cos(x, 0) is defined as 0, so items degrade gracefully rather than
//! erroring. All arithmetic is 64-bit regardless of the stored precision.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kb::FeatureBundle;

/// Matcher variant selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatcherVariant {
    /// cos(text_M, text_E) / tau.
    CosineText,
    /// cos(u_M, u_E) / tau with u = (unit(text) + unit(image)) / 2.
    CosineFused,
}

impl std::str::FromStr for MatcherVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine-text" => Ok(MatcherVariant::CosineText),
            "cosine-fused" => Ok(MatcherVariant::CosineFused),
            other => Err(Error::InvalidConfig(format!(
                "unknown matcher variant '{other}' (expected cosine-text or cosine-fused)"
            ))),
        }
    }
}

impl std::fmt::Display for MatcherVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MatcherVariant::CosineText => write!(f, "cosine-text"),
            MatcherVariant::CosineFused => write!(f, "cosine-fused"),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MatcherConfig {
    pub variant: MatcherVariant,
    /// Score divisor; 1.0 reproduces plain cosine.
    pub temperature: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            variant: MatcherVariant::CosineText,
            temperature: 1.0,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "temperature must be finite and positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// The per-item features the matcher consumes: a text bundle and an optional
/// visual bundle of the same dimension.
#[derive(Debug, Clone)]
pub struct ItemFeatures {
    pub text: FeatureBundle,
    pub visual: Option<FeatureBundle>,
}

impl ItemFeatures {
    pub fn dim(&self) -> usize {
        self.text.dim()
    }
}

/// Cosine similarity in f64, with cos := 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Cosine plus its gradients with respect to both inputs.
///
/// d cos / dx = y / (|x||y|) - cos * x / |x|^2, symmetrically for y.
/// Zero-norm inputs return (0, zero gradients) to match the cos convention.
pub fn cosine_with_grad(x: &[f64], y: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (mut dot, mut nx2, mut ny2) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in x.iter().zip(y) {
        dot += a * b;
        nx2 += a * a;
        ny2 += b * b;
    }
    if nx2 == 0.0 || ny2 == 0.0 {
        return (0.0, vec![0.0; x.len()], vec![0.0; y.len()]);
    }
    let nx = nx2.sqrt();
    let ny = ny2.sqrt();
    let cos = dot / (nx * ny);
    let gx: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| b / (nx * ny) - cos * a / nx2)
        .collect();
    let gy: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a / (nx * ny) - cos * b / ny2)
        .collect();
    (cos, gx, gy)
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn unit_or_zero(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

/// Fused representation: (unit(text) + unit(image)) / 2, with a missing
/// image contributing the zero vector.
fn fused(item: &ItemFeatures) -> Vec<f64> {
    let t = unit_or_zero(&to_f64(item.text.global()));
    let v = item
        .visual
        .as_ref()
        .map(|b| unit_or_zero(&to_f64(b.global())))
        .unwrap_or_else(|| vec![0.0; t.len()]);
    t.iter().zip(&v).map(|(a, b)| 0.5 * (a + b)).collect()
}

fn check_dims(mention: &ItemFeatures, entity: &ItemFeatures) -> Result<()> {
    if mention.dim() != entity.dim() {
        return Err(Error::DimensionMismatch {
            expected: mention.dim(),
            got: entity.dim(),
        });
    }
    for item in [mention, entity] {
        if let Some(v) = &item.visual {
            if v.dim() != item.text.dim() {
                return Err(Error::DimensionMismatch {
                    expected: item.text.dim(),
                    got: v.dim(),
                });
            }
        }
    }
    Ok(())
}

/// Scores one mention against one entity.
pub fn score(mention: &ItemFeatures, entity: &ItemFeatures, cfg: &MatcherConfig) -> Result<f64> {
    cfg.validate()?;
    check_dims(mention, entity)?;
    let raw = match cfg.variant {
        MatcherVariant::CosineText => cosine(
            &to_f64(mention.text.global()),
            &to_f64(entity.text.global()),
        ),
        MatcherVariant::CosineFused => cosine(&fused(mention), &fused(entity)),
    };
    Ok(raw / cfg.temperature)
}

/// Scores one mention against every entity, in entity order.
pub fn score_all(
    mention: &ItemFeatures,
    entities: &[ItemFeatures],
    cfg: &MatcherConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    entities
        .iter()
        .map(|entity| score(mention, entity, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(text: Vec<f32>, visual: Option<Vec<f32>>) -> ItemFeatures {
        ItemFeatures {
            text: FeatureBundle::global_only(text).unwrap(),
            visual: visual.map(|v| FeatureBundle::global_only(v).unwrap()),
        }
    }

    #[test]
    fn identical_unit_vectors_score_one() {
        let cfg = MatcherConfig::default();
        let m = item(vec![1.0, 0.0], None);
        let e = item(vec![1.0, 0.0], None);
        assert!((score(&m, &e, &cfg).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_vectors_score_zero() {
        let cfg = MatcherConfig::default();
        let m = item(vec![1.0, 0.0], None);
        let e = item(vec![0.0, 1.0], None);
        assert_eq!(score(&m, &e, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_cosine() {
        let cfg = MatcherConfig::default();
        let m = item(vec![1.0, 0.0], None);
        let e = item(vec![1.0, 1.0], None);
        let s = score(&m, &e, &cfg).unwrap();
        assert!((s - 1.0 / 2.0_f64.sqrt()).abs() < 1e-12);
        assert!((s - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn scale_invariance() {
        let cfg = MatcherConfig::default();
        for c in [0.5f32, 3.0, 1e-3, 1e3] {
            let m = item(vec![0.3, -0.7, 0.2], None);
            let scaled = item(vec![0.3 * c, -0.7 * c, 0.2 * c], None);
            let e = item(vec![0.1, 0.9, -0.4], None);
            let a = score(&m, &e, &cfg).unwrap();
            let b = score(&scaled, &e, &cfg).unwrap();
            assert!((a - b).abs() < 1e-12, "c={c}: {a} vs {b}");
        }
    }

    #[test]
    fn temperature_scales_scores_and_preserves_argmax() {
        let m = item(vec![0.3, -0.7, 0.2], None);
        let entities: Vec<ItemFeatures> = vec![
            item(vec![0.1, 0.9, -0.4], None),
            item(vec![0.3, -0.7, 0.2], None),
            item(vec![-0.2, 0.4, 0.8], None),
        ];
        let base = score_all(&m, &entities, &MatcherConfig::default()).unwrap();
        let cfg = MatcherConfig {
            temperature: 2.0,
            ..MatcherConfig::default()
        };
        let halved = score_all(&m, &entities, &cfg).unwrap();
        for (a, b) in base.iter().zip(&halved) {
            assert_eq!((a / 2.0).to_bits(), b.to_bits());
        }
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        assert_eq!(argmax(&base), argmax(&halved));
    }

    #[test]
    fn invalid_temperature_rejected() {
        let cfg = MatcherConfig {
            temperature: 0.0,
            ..MatcherConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = MatcherConfig {
            temperature: f64::NAN,
            ..MatcherConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fused_variant_handles_missing_images() {
        let cfg = MatcherConfig {
            variant: MatcherVariant::CosineFused,
            temperature: 1.0,
        };
        let m = item(vec![1.0, 0.0], Some(vec![0.0, 1.0]));
        let e_with = item(vec![1.0, 0.0], Some(vec![0.0, 1.0]));
        let e_without = item(vec![1.0, 0.0], None);
        let s_with = score(&m, &e_with, &cfg).unwrap();
        assert!((s_with - 1.0).abs() < 1e-12);
        // Missing image halves the fused vector; cosine is scale invariant
        // so only the direction difference matters.
        let s_without = score(&m, &e_without, &cfg).unwrap();
        assert!((s_without - 1.0 / 2.0_f64.sqrt()).abs() < 1e-12);
        // Both sides zero -> score 0 by convention.
        let z = item(vec![0.0, 0.0], None);
        assert_eq!(score(&z, &z, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn fused_cosine_is_symmetric_in_roles() {
        let cfg = MatcherConfig {
            variant: MatcherVariant::CosineFused,
            temperature: 1.0,
        };
        let a = item(vec![0.2, 0.5, -0.1], Some(vec![0.4, 0.4, 0.4]));
        let b = item(vec![-0.3, 0.8, 0.1], None);
        assert_eq!(
            score(&a, &b, &cfg).unwrap().to_bits(),
            score(&b, &a, &cfg).unwrap().to_bits()
        );
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let cfg = MatcherConfig::default();
        let m = item(vec![1.0, 0.0], None);
        let e = item(vec![1.0, 0.0, 0.0], None);
        assert!(matches!(
            score(&m, &e, &cfg).unwrap_err(),
            Error::DimensionMismatch { .. }
        ));
    }

    #[test]
    fn score_all_matches_individual_calls_and_permutes() {
        let cfg = MatcherConfig::default();
        let m = item(vec![0.3, -0.7, 0.2], None);
        let entities: Vec<ItemFeatures> = vec![
            item(vec![0.1, 0.9, -0.4], None),
            item(vec![0.3, -0.7, 0.2], None),
            item(vec![-0.2, 0.4, 0.8], None),
        ];
        assert!(score_all(&m, &[], &cfg).unwrap().is_empty());
        let all = score_all(&m, &entities, &cfg).unwrap();
        for (i, e) in entities.iter().enumerate() {
            assert_eq!(all[i].to_bits(), score(&m, e, &cfg).unwrap().to_bits());
        }
        let permuted: Vec<ItemFeatures> =
            vec![entities[2].clone(), entities[0].clone(), entities[1].clone()];
        let p = score_all(&m, &permuted, &cfg).unwrap();
        assert_eq!(p[0].to_bits(), all[2].to_bits());
        assert_eq!(p[1].to_bits(), all[0].to_bits());
        assert_eq!(p[2].to_bits(), all[1].to_bits());
    }

    #[test]
    fn cosine_gradient_matches_finite_differences() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..20 {
            let d = rng.random_range(2..8);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            if x.iter().map(|v| v * v).sum::<f64>() < 0.1
                || y.iter().map(|v| v * v).sum::<f64>() < 0.1
            {
                continue;
            }
            let (_, gx, gy) = cosine_with_grad(&x, &y);
            for i in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (cosine(&xp, &y) - cosine(&xm, &y)) / (2.0 * h);
                assert!((gx[i] - fd).abs() <= 1e-6 + 1e-4 * fd.abs());
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[i] += h;
                ym[i] -= h;
                let fd = (cosine(&x, &yp) - cosine(&x, &ym)) / (2.0 * h);
                assert!((gy[i] - fd).abs() <= 1e-6 + 1e-4 * fd.abs());
            }
        }
    }
}
