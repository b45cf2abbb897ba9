//! Negative drawing for one positive mention-entity pair.
//!
//! The conditional path takes the deterministic top-k prefix of the mined
//! hard-negative list; only a deficit (list shorter than k) consumes the
//! caller's RNG, and those fills are flagged so downstream analysis can
//! stratify mined vs. padded negatives. The random path is the classic
//! uniform baseline.
//!
//! Callers own their seeded generators; for reproducible parallel epochs,
//! derive one generator per unit of work (e.g. base seed combined with the
//! mention ordinal).

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jaccard::NegativeTable;
use crate::kb::KnowledgeBase;

/// Where a negative came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeSource {
    Mined,
    RandomFill,
}

/// How conditional sampling picks from the mined list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleMode {
    /// Deterministic top-k prefix of the mined list.
    #[default]
    TopK,
    /// k distinct entries drawn uniformly from the whole mined list.
    UniformFromTable,
}

/// One positive pair with its drawn negatives.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub mention: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
    pub sources: Vec<NegativeSource>,
}

impl TrainingBatch {
    pub fn new(
        mention: usize,
        positive: usize,
        drawn: Vec<(usize, NegativeSource)>,
    ) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &(j, _) in &drawn {
            if j == positive {
                return Err(Error::InvalidConfig(
                    "positive entity drawn as its own negative".to_string(),
                ));
            }
            if !seen.insert(j) {
                return Err(Error::InvalidConfig(format!(
                    "negative ordinal {j} drawn twice"
                )));
            }
        }
        let (negatives, sources) = drawn.into_iter().unzip();
        Ok(TrainingBatch {
            mention,
            positive,
            negatives,
            sources,
        })
    }
}

/// Draws negatives for `positive` from its mined list, topping up a short
/// list with uniform random entities (flagged `RandomFill`). The result is
/// shorter than k only when the base has fewer than k other entities.
pub fn sample_conditional(
    table: &NegativeTable,
    positive: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, NegativeSource)>> {
    sample_conditional_with_mode(table, positive, k, SampleMode::TopK, rng)
}

pub fn sample_conditional_with_mode(
    table: &NegativeTable,
    positive: usize,
    k: usize,
    mode: SampleMode,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, NegativeSource)>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".to_string()));
    }
    if positive >= table.len() {
        return Err(Error::PositiveNotInTable(positive));
    }
    let list = table.list(positive);
    let mut drawn: Vec<(usize, NegativeSource)> = match mode {
        SampleMode::TopK => list
            .iter()
            .take(k)
            .map(|&(j, _)| (j, NegativeSource::Mined))
            .collect(),
        SampleMode::UniformFromTable => {
            let take = k.min(list.len());
            let mut pool: Vec<usize> = list.iter().map(|&(j, _)| j).collect();
            partial_shuffle(&mut pool, take, rng);
            pool.truncate(take);
            pool.into_iter().map(|j| (j, NegativeSource::Mined)).collect()
        }
    };
    if drawn.len() < k {
        let n = table.len();
        let mut excluded: std::collections::HashSet<usize> =
            drawn.iter().map(|&(j, _)| j).collect();
        excluded.insert(positive);
        while drawn.len() < k && excluded.len() < n {
            let j = rng.random_range(0..n);
            if excluded.insert(j) {
                drawn.push((j, NegativeSource::RandomFill));
            }
        }
    }
    Ok(drawn)
}

/// Uniform random baseline: `min(k, N-1)` distinct entities != positive.
pub fn sample_random(
    kb: &KnowledgeBase,
    positive: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut others: Vec<usize> = (0..kb.len()).filter(|&j| j != positive).collect();
    let take = k.min(others.len());
    partial_shuffle(&mut others, take, rng);
    others.truncate(take);
    others
}

/// First `take` positions of a Fisher-Yates pass; uniform over subsets and
/// orders, consuming exactly `take` RNG draws.
fn partial_shuffle(items: &mut [usize], take: usize, rng: &mut impl Rng) {
    for i in 0..take.min(items.len()) {
        let j = rng.random_range(i..items.len());
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jaccard::build_exact_table;
    use crate::testutil::{kb_from_id_sets, random_kb};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_table_takes_prefix_without_touching_rng() {
        let kb = kb_from_id_sets(&[
            (0..6).collect(),
            (0..5).collect(),
            (0..4).collect(),
            (0..3).collect(),
            (0..2).collect(),
            (1..3).collect(),
            vec![100],
        ]);
        let table = build_exact_table(&kb, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let before = rng.clone().random::<u64>();
        let drawn = sample_conditional(&table, 0, 4, &mut rng).unwrap();
        assert_eq!(rng.random::<u64>(), before, "rng must be untouched");
        assert_eq!(drawn.len(), 4);
        let expected: Vec<usize> = table.list(0).iter().take(4).map(|e| e.0).collect();
        assert_eq!(drawn.iter().map(|e| e.0).collect::<Vec<_>>(), expected);
        assert!(drawn.iter().all(|e| e.1 == NegativeSource::Mined));
    }

    #[test]
    fn candidate_exhaustion_yields_short_list() {
        let kb = kb_from_id_sets(&[vec![1], vec![2], vec![3]]);
        let table = build_exact_table(&kb, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let drawn = sample_conditional(&table, 0, 5, &mut rng).unwrap();
        assert_eq!(drawn.len(), 2);
    }

    #[test]
    fn zero_k_rejected() {
        let kb = kb_from_id_sets(&[vec![1], vec![2]]);
        let table = build_exact_table(&kb, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_conditional(&table, 0, 0, &mut rng).is_err());
        assert!(matches!(
            sample_conditional(&table, 9, 1, &mut rng).unwrap_err(),
            Error::PositiveNotInTable(9)
        ));
    }

    #[test]
    fn random_fill_flagged_and_valid() {
        // Table built with k=2 but sampling k=5 forces fills.
        let kb = random_kb(20, 10, 5, 3);
        let table = build_exact_table(&kb, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let drawn = sample_conditional(&table, 4, 5, &mut rng).unwrap();
        assert_eq!(drawn.len(), 5);
        assert!(drawn[..2].iter().all(|e| e.1 == NegativeSource::Mined));
        assert!(drawn[2..].iter().all(|e| e.1 == NegativeSource::RandomFill));
        let batch = TrainingBatch::new(0, 4, drawn).unwrap();
        assert!(!batch.negatives.contains(&4));
        let mut sorted = batch.negatives.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 5);
    }

    #[test]
    fn random_sampler_basics() {
        let kb = kb_from_id_sets(&[vec![1], vec![2]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_random(&kb, 0, 1, &mut rng), vec![1]);

        let kb = random_kb(100, 10, 5, 9);
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_random(&kb, 3, 4, &mut rng)
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn random_sampler_is_uniform_within_3_sigma() {
        let kb = random_kb(50, 10, 5, 11);
        let n = kb.len();
        let positive = 7usize;
        let k = 4usize;
        let draws = 100_000usize;
        let mut counts = vec![0u64; n];
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..draws {
            for j in sample_random(&kb, positive, k, &mut rng) {
                counts[j] += 1;
            }
        }
        assert_eq!(counts[positive], 0);
        let p = k as f64 / (n - 1) as f64;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (j, &c) in counts.iter().enumerate() {
            if j == positive {
                continue;
            }
            assert!(
                (c as f64 - mean).abs() <= 3.0 * sigma,
                "entity {j}: {c} vs mean {mean:.1} (sigma {sigma:.1})"
            );
        }
    }

    #[test]
    fn uniform_mode_draws_from_whole_list() {
        let kb = random_kb(30, 8, 5, 2);
        let table = build_exact_table(&kb, 10).unwrap();
        let mut seen = std::collections::HashSet::new();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let drawn =
                sample_conditional_with_mode(&table, 0, 3, SampleMode::UniformFromTable, &mut rng)
                    .unwrap();
            assert_eq!(drawn.len(), 3);
            for (j, src) in drawn {
                assert_eq!(src, NegativeSource::Mined);
                seen.insert(j);
            }
        }
        // Over 50 seeds the draws should reach past the top-3 prefix.
        let prefix: std::collections::HashSet<usize> =
            table.list(0).iter().take(3).map(|e| e.0).collect();
        assert!(seen.len() > prefix.len());
    }
}
