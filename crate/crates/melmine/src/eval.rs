//! Full-KB ranking metrics and the pooled-view similarity analysis.
//!
//! For each mention the evaluator scores every entity, ranks the gold one,
//! and aggregates H@1/3/5 (percent) and MRR (fraction). The default tie
//! policy is pessimistic — the gold rank counts every equal-scoring rival —
//! because knowledge bases are full of duplicate-name entities that tie
//! exactly, and optimistic ranking would silently inflate H@k there.

use rayon::prelude::*;
use serde::Serialize;

use crate::cvacpt::{pool_views, transform, CvacptParams};
use crate::error::{Error, Result};
use crate::features::FeatureCatalog;
use crate::kb::{KnowledgeBase, Mention};
use crate::matcher::{score_all, ItemFeatures, MatcherConfig};

/// How equal scores count against the gold entity's rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// 1 + #{better} + #{equal rivals}: ties count against gold.
    #[default]
    Pessimistic,
    /// 1 + #{better}: gold wins every tie.
    Optimistic,
    /// Midpoint of the two.
    Average,
}

impl std::str::FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pessimistic" => Ok(TiePolicy::Pessimistic),
            "optimistic" => Ok(TiePolicy::Optimistic),
            "average" => Ok(TiePolicy::Average),
            other => Err(Error::InvalidConfig(format!(
                "unknown tie policy '{other}' (expected pessimistic, optimistic, or average)"
            ))),
        }
    }
}

impl std::fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TiePolicy::Pessimistic => write!(f, "pessimistic"),
            TiePolicy::Optimistic => write!(f, "optimistic"),
            TiePolicy::Average => write!(f, "average"),
        }
    }
}

/// 1-based rank of the gold entity in a score vector. Counts, not sort
/// positions, so the result is invariant to entity ordering.
pub fn rank_of_gold(scores: &[f64], gold: usize, policy: TiePolicy) -> f64 {
    let gold_score = scores[gold];
    let mut better = 0usize;
    let mut equal_rivals = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if s > gold_score {
            better += 1;
        } else if s == gold_score && i != gold {
            equal_rivals += 1;
        }
    }
    let optimistic = (1 + better) as f64;
    let pessimistic = (1 + better + equal_rivals) as f64;
    match policy {
        TiePolicy::Optimistic => optimistic,
        TiePolicy::Pessimistic => pessimistic,
        TiePolicy::Average => 0.5 * (optimistic + pessimistic),
    }
}

/// Gold rank for one mention.
#[derive(Debug, Clone, Serialize)]
pub struct MentionRank {
    pub id: String,
    pub rank: f64,
}

/// Per-mention ranks plus the aggregate metrics.
#[derive(Debug, Clone, Serialize)]
pub struct RankReport {
    pub tie_policy: TiePolicy,
    pub mention_count: usize,
    /// Percentages in [0, 100].
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_5: f64,
    /// Mean reciprocal rank in (0, 1].
    pub mrr: f64,
    pub per_mention: Vec<MentionRank>,
}

impl RankReport {
    /// Aggregates a list of (mention id, gold rank) pairs.
    pub fn from_ranks(ranks: Vec<MentionRank>, tie_policy: TiePolicy) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::InvalidConfig(
                "cannot aggregate metrics over zero mentions".to_string(),
            ));
        }
        let n = ranks.len() as f64;
        let hits = |k: f64| 100.0 * ranks.iter().filter(|r| r.rank <= k).count() as f64 / n;
        let mrr = ranks.iter().map(|r| 1.0 / r.rank).sum::<f64>() / n;
        Ok(RankReport {
            tie_policy,
            mention_count: ranks.len(),
            hits_at_1: hits(1.0),
            hits_at_3: hits(3.0),
            hits_at_5: hits(5.0),
            mrr,
            per_mention: ranks,
        })
    }

    /// Aligned human-readable table, percentages at two decimals.
    pub fn human_table(&self) -> String {
        format!(
            "metric  value\nH@1     {:>8.2}\nH@3     {:>8.2}\nH@5     {:>8.2}\nMRR     {:>8.5}\nn       {:>8}\nties    {}\n",
            self.hits_at_1, self.hits_at_3, self.hits_at_5, self.mrr, self.mention_count,
            self.tie_policy
        )
    }
}

/// Scores every mention against the whole base and aggregates ranks. When
/// transform parameters are supplied, each mention's visual bundle is run
/// through the patch transform first (mentions without synthetic views pass
/// through unchanged).
pub fn evaluate(
    kb: &KnowledgeBase,
    mentions: &[Mention],
    catalog: &FeatureCatalog<'_>,
    cfg: &MatcherConfig,
    policy: TiePolicy,
    cvacpt: Option<&CvacptParams>,
) -> Result<RankReport> {
    cfg.validate()?;
    catalog.validate(kb)?;
    if let Some(params) = cvacpt {
        params.validate()?;
        if params.dim != catalog.dim() {
            return Err(Error::DimensionMismatch {
                expected: catalog.dim(),
                got: params.dim,
            });
        }
    }
    let entities = catalog.all_entity_features(kb)?;
    let ranks: Vec<Result<MentionRank>> = mentions
        .par_iter()
        .map(|mention| {
            let gold = kb
                .ordinal_of(&mention.gold_entity)
                .ok_or_else(|| Error::DanglingReference {
                    mention: mention.id.clone(),
                    entity: mention.gold_entity.clone(),
                    line: 0,
                })?;
            let mut features = catalog.mention_features(mention)?;
            if let (Some(params), Some(visual)) = (cvacpt, features.visual.take()) {
                let transformed = match catalog.mention_views(mention)? {
                    Some(views) => {
                        let text = catalog
                            .mention_text
                            .try_row(mention.text_row, "mention text")?;
                        let vtes = pool_views(&views, text, params)?;
                        transform(&visual, &vtes, params)?
                    }
                    None => visual,
                };
                features.visual = Some(transformed);
            }
            let scores = score_all(&features, &entities, cfg)?;
            Ok(MentionRank {
                id: mention.id.clone(),
                rank: rank_of_gold(&scores, gold, policy),
            })
        })
        .collect();
    let ranks = ranks.into_iter().collect::<Result<Vec<_>>>()?;
    RankReport::from_ranks(ranks, policy)
}

/// One mention's views and the reference vector they are compared against.
pub struct PooledSimItem {
    pub views: Vec<Vec<f32>>,
    pub reference: Vec<f32>,
}

/// Mean cosine against the reference, without and with elementwise max
/// pooling of the raw views.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PooledSimilarity {
    /// Mean over items of the mean per-view cosine.
    pub individual_mean: f64,
    /// Mean over items of cos(elementwise max of views, reference).
    pub pooled_mean: f64,
    pub analyzed: usize,
}

/// The raw-view pooling analysis: does max-pooling the synthetic views align
/// them better with a reference embedding than averaging per-view scores?
pub fn pooled_similarity(items: &[PooledSimItem]) -> Result<PooledSimilarity> {
    if items.is_empty() {
        return Err(Error::EmptyViewSet);
    }
    let mut individual_sum = 0.0f64;
    let mut pooled_sum = 0.0f64;
    for item in items {
        if item.views.is_empty() {
            return Err(Error::EmptyViewSet);
        }
        let reference: Vec<f64> = item.reference.iter().map(|&v| f64::from(v)).collect();
        let mut per_view = 0.0f64;
        let mut pooled = vec![f64::NEG_INFINITY; reference.len()];
        for view in &item.views {
            if view.len() != reference.len() {
                return Err(Error::DimensionMismatch {
                    expected: reference.len(),
                    got: view.len(),
                });
            }
            let v64: Vec<f64> = view.iter().map(|&v| f64::from(v)).collect();
            per_view += crate::matcher::cosine(&v64, &reference);
            for (p, v) in pooled.iter_mut().zip(&v64) {
                *p = p.max(*v);
            }
        }
        individual_sum += per_view / item.views.len() as f64;
        pooled_sum += crate::matcher::cosine(&pooled, &reference);
    }
    let n = items.len() as f64;
    Ok(PooledSimilarity {
        individual_mean: individual_sum / n,
        pooled_mean: pooled_sum / n,
        analyzed: items.len(),
    })
}
