//! Softmax contrastive loss and its gradients.
//!
//! For a score vector s = [s_pos, s_neg1, ..., s_negk] the loss is
//! -log(exp(s_pos) / sum_j exp(s_j)), evaluated with the max-shift so large
//! scores cannot overflow. The gradient with respect to the scores is
//! softmax(s) - onehot(0), which sums to zero by construction. `batch_loss`
//! chains that through the cosine matcher down to the global embeddings.
//!
//! Everything here runs in f64 even when stores hold f32, so central finite
//! differences at h = 1e-5 are a meaningful oracle.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matcher::{cosine_with_grad, MatcherConfig};
use crate::sampler::TrainingBatch;

/// Loss value and score-space gradient for one batch.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub loss: f64,
    /// d loss / d s, positive first; entries sum to zero.
    pub grad_scores: Vec<f64>,
}

/// Contrastive loss over `[s_pos, s_neg1, ..., s_negk]`, k >= 1.
pub fn contrastive_loss(scores: &[f64]) -> Result<LossResult> {
    if scores.len() < 2 {
        return Err(Error::InvalidConfig(
            "need a positive score and at least one negative".to_string(),
        ));
    }
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::NonFiniteScore(i));
        }
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted_exp: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let denom: f64 = shifted_exp.iter().sum();
    let log_sum_exp = max + denom.ln();
    let loss = log_sum_exp - scores[0];
    let mut grad_scores: Vec<f64> = shifted_exp.iter().map(|&e| e / denom).collect();
    grad_scores[0] -= 1.0;
    Ok(LossResult { loss, grad_scores })
}

/// Per-row embedding views for `batch_loss`: mention rows are indexed by
/// `TrainingBatch::mention`, entity rows by entity ordinal.
pub struct PairEmbeddings<'a> {
    pub mention_rows: &'a [Vec<f64>],
    pub entity_rows: &'a [Vec<f64>],
}

/// Mean loss over batches plus accumulated (averaged) gradients with respect
/// to the global embedding rows that participated. Scores are
/// cos(mention, entity) / temperature, the default matcher.
#[derive(Debug, Clone)]
pub struct BatchLossResult {
    pub loss: f64,
    pub grad_mentions: BTreeMap<usize, Vec<f64>>,
    pub grad_entities: BTreeMap<usize, Vec<f64>>,
}

struct BatchContribution {
    loss: f64,
    mention: (usize, Vec<f64>),
    entities: Vec<(usize, Vec<f64>)>,
}

fn batch_contribution(
    batch: &TrainingBatch,
    feats: &PairEmbeddings<'_>,
    inv_tau: f64,
) -> Result<BatchContribution> {
    let mention = feats
        .mention_rows
        .get(batch.mention)
        .ok_or(Error::RowOutOfRange {
            row: batch.mention,
            rows: feats.mention_rows.len(),
            context: "mention rows".to_string(),
        })?;
    let mut ordinals = Vec::with_capacity(1 + batch.negatives.len());
    ordinals.push(batch.positive);
    ordinals.extend_from_slice(&batch.negatives);

    let mut scores = Vec::with_capacity(ordinals.len());
    let mut grads = Vec::with_capacity(ordinals.len());
    for &e in &ordinals {
        let row = feats.entity_rows.get(e).ok_or(Error::RowOutOfRange {
            row: e,
            rows: feats.entity_rows.len(),
            context: "entity rows".to_string(),
        })?;
        if row.len() != mention.len() {
            return Err(Error::DimensionMismatch {
                expected: mention.len(),
                got: row.len(),
            });
        }
        let (cos, gm, ge) = cosine_with_grad(mention, row);
        scores.push(cos * inv_tau);
        grads.push((gm, ge));
    }
    let lr = contrastive_loss(&scores)?;
    let mut grad_mention = vec![0.0; mention.len()];
    let mut entities = Vec::with_capacity(ordinals.len());
    for (i, &e) in ordinals.iter().enumerate() {
        let coeff = lr.grad_scores[i] * inv_tau;
        let (gm, ge) = &grads[i];
        for (acc, g) in grad_mention.iter_mut().zip(gm) {
            *acc += coeff * g;
        }
        entities.push((e, ge.iter().map(|g| coeff * g).collect()));
    }
    Ok(BatchContribution {
        loss: lr.loss,
        mention: (batch.mention, grad_mention),
        entities,
    })
}

/// Arithmetic mean of per-batch losses and gradients. Batches may be
/// evaluated in parallel; the reduction runs in batch order so results are
/// bit-identical regardless of thread count.
pub fn batch_loss(
    batches: &[TrainingBatch],
    feats: &PairEmbeddings<'_>,
    cfg: &MatcherConfig,
) -> Result<BatchLossResult> {
    cfg.validate()?;
    if batches.is_empty() {
        return Err(Error::InvalidConfig("no batches supplied".to_string()));
    }
    let inv_tau = 1.0 / cfg.temperature;
    let contributions: Vec<Result<BatchContribution>> = batches
        .par_iter()
        .map(|b| batch_contribution(b, feats, inv_tau))
        .collect();
    let scale = 1.0 / batches.len() as f64;
    let mut loss = 0.0;
    let mut grad_mentions: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut grad_entities: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for contribution in contributions {
        let c = contribution?;
        loss += c.loss * scale;
        let (m, gm) = c.mention;
        accumulate(&mut grad_mentions, m, &gm, scale);
        for (e, ge) in c.entities {
            accumulate(&mut grad_entities, e, &ge, scale);
        }
    }
    Ok(BatchLossResult {
        loss,
        grad_mentions,
        grad_entities,
    })
}

fn accumulate(map: &mut BTreeMap<usize, Vec<f64>>, key: usize, grad: &[f64], scale: f64) {
    let entry = map.entry(key).or_insert_with(|| vec![0.0; grad.len()]);
    for (acc, g) in entry.iter_mut().zip(grad) {
        *acc += g * scale;
    }
}
