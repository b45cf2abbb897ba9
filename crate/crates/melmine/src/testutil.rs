//! Shared fixtures for unit and integration tests.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::kb::{Entity, KnowledgeBase};

/// Random KB with attribute sets of size `0..=max_set` over `t0..t{vocab}`.
pub fn random_kb(n: usize, vocab: usize, max_set: usize, seed: u64) -> KnowledgeBase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entities: Vec<Entity> = (0..n)
        .map(|i| {
            let size = rng.random_range(0..=max_set);
            let mut attrs: Vec<String> = (0..size)
                .map(|_| format!("t{:04}", rng.random_range(0..vocab)))
                .collect();
            attrs.sort();
            attrs.dedup();
            Entity::new(format!("e{i}"), format!("e{i}"), attrs, String::new(), vec![]).unwrap()
        })
        .collect();
    KnowledgeBase::build(entities).unwrap()
}

/// Independent O(N^2) reference miner: full score matrix through hash sets,
/// full sort. Deliberately shares nothing with the heap-based production
/// path beyond the tie-break rule it checks.
pub fn brute_force_table(kb: &KnowledgeBase, k: usize) -> Vec<Vec<(usize, f64)>> {
    let sets: Vec<std::collections::HashSet<u32>> = kb
        .encoded_attribute_sets()
        .into_iter()
        .map(|v| v.into_iter().collect())
        .collect();
    (0..kb.len())
        .map(|i| {
            let mut scored: Vec<(usize, f64)> = (0..kb.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let inter = sets[i].intersection(&sets[j]).count();
                    let union = sets[i].union(&sets[j]).count();
                    let score = if sets[i].is_empty() || sets[j].is_empty() || union == 0 {
                        0.0
                    } else {
                        inter as f64 / union as f64
                    };
                    (j, score)
                })
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            scored.truncate(k);
            scored
        })
        .collect()
}

/// KB built from explicit attribute-id sets (token "t{id}" per element).
pub fn kb_from_id_sets(sets: &[Vec<u32>]) -> KnowledgeBase {
    let entities: Vec<Entity> = sets
        .iter()
        .enumerate()
        .map(|(i, ids)| {
            Entity::new(
                format!("e{i}"),
                format!("e{i}"),
                ids.iter().map(|t| format!("t{t:04}")),
                String::new(),
                vec![],
            )
            .unwrap()
        })
        .collect();
    KnowledgeBase::build(entities).unwrap()
}

/// Clustered KB: `groups` groups of `per_group` entities sharing a base
/// attribute set, each entity dropping one base token and adding one unique
/// token. Within-group similarity stays high and cross-group similarity is
/// zero, the regime banded LSH is built for.
pub fn clustered_kb(groups: usize, per_group: usize, base_size: usize, seed: u64) -> KnowledgeBase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = Vec::with_capacity(groups * per_group);
    let span = (base_size + per_group + 2) as u32;
    for g in 0..groups as u32 {
        let base: Vec<u32> = (0..base_size as u32).map(|t| g * span + t).collect();
        for e in 0..per_group as u32 {
            let mut set = base.clone();
            let drop = rng.random_range(0..set.len());
            set.remove(drop);
            set.push(g * span + base_size as u32 + e);
            set.sort_unstable();
            sets.push(set);
        }
    }
    kb_from_id_sets(&sets)
}
