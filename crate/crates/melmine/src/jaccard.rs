//! Attribute-set Jaccard similarity and exhaustive hard-negative mining.
//!
//! J(a, b) = |a ∩ b| / |a ∪ b| over encoded attribute-id sets, with
//! J(∅, ·) = 0: attribute-less entities carry no evidence of similarity, so
//! they never become each other's hard negatives.
//!
//! The exact miner scans all pairs but keeps only a k-entry heap per entity,
//! so memory stays O(N·k) rather than materializing the full score matrix.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;

/// Jaccard similarity of two sorted integer-id sets. Both-empty and
/// one-empty inputs score 0.
pub fn jaccard(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut inter = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// How a negative table was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiningMethod {
    Exact,
    MinHash,
}

impl std::fmt::Display for MiningMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MiningMethod::Exact => write!(f, "exact"),
            MiningMethod::MinHash => write!(f, "minhash"),
        }
    }
}

/// Per-entity top-k hard-negative lists with their Jaccard scores.
///
/// Lists are sorted by score descending, ties broken by ordinal ascending,
/// and never contain the entity itself. For the `MinHash` method a list that
/// had to be padded with random entities keeps the padding after the mined
/// prefix, in draw order.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeTable {
    k: usize,
    method: MiningMethod,
    seed: u64,
    fingerprint: u64,
    lists: Vec<Vec<(usize, f64)>>,
}

impl NegativeTable {
    pub(crate) fn from_parts(
        k: usize,
        method: MiningMethod,
        seed: u64,
        fingerprint: u64,
        lists: Vec<Vec<(usize, f64)>>,
    ) -> Self {
        NegativeTable {
            k,
            method,
            seed,
            fingerprint,
            lists,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn method(&self) -> MiningMethod {
        self.method
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    /// The (ordinal, score) list for one entity.
    pub fn list(&self, ordinal: usize) -> &[(usize, f64)] {
        &self.lists[ordinal]
    }

    pub fn lists(&self) -> &[Vec<(usize, f64)>] {
        &self.lists
    }
}

/// Heap entry ordered worst-first: lower score is greater, and among equal
/// scores the larger ordinal is greater. Popping the maximum therefore
/// evicts the candidate that top-k tie-breaking (score desc, ordinal asc)
/// ranks last.
#[derive(PartialEq)]
struct WorstFirst {
    score: f64,
    ordinal: usize,
}

impl Eq for WorstFirst {}

impl PartialOrd for WorstFirst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for WorstFirst {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.ordinal.cmp(&other.ordinal))
    }
}

/// Top-k selection over (ordinal, score) candidates with the table's
/// tie-break rule, returned best-first.
pub(crate) fn select_top_k(
    candidates: impl Iterator<Item = (usize, f64)>,
    k: usize,
) -> Vec<(usize, f64)> {
    let mut heap: BinaryHeap<WorstFirst> = BinaryHeap::with_capacity(k + 1);
    for (ordinal, score) in candidates {
        heap.push(WorstFirst { score, ordinal });
        if heap.len() > k {
            heap.pop();
        }
    }
    heap.into_sorted_vec()
        .into_iter()
        .map(|e| (e.ordinal, e.score))
        .collect()
}

/// Builds the exact top-k hard-negative table by scanning all pairs.
///
/// Every list has length `min(k, N-1)`; zero-score entities are eligible
/// fillers so the list length contract holds even for sparsely attributed
/// bases.
pub fn build_exact_table(kb: &KnowledgeBase, k: usize) -> Result<NegativeTable> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".to_string()));
    }
    let sets = kb.encoded_attribute_sets();
    let lists: Vec<Vec<(usize, f64)>> = (0..kb.len())
        .into_par_iter()
        .map(|i| {
            select_top_k(
                (0..kb.len())
                    .filter(|&j| j != i)
                    .map(|j| (j, jaccard(&sets[i], &sets[j]))),
                k,
            )
        })
        .collect();
    Ok(NegativeTable {
        k,
        method: MiningMethod::Exact,
        seed: 0,
        fingerprint: kb.fingerprint(),
        lists,
    })
}

#[derive(Serialize, Deserialize)]
struct TableHeader {
    k: usize,
    method: MiningMethod,
    seed: u64,
    kb_fingerprint: u64,
}

#[derive(Serialize, Deserialize)]
struct TableRow {
    entity_id: String,
    negatives: Vec<(String, f64)>,
}

/// Writes a table as a JSON header line followed by one JSON object per
/// entity, ids resolved through the knowledge base.
pub fn save_table(table: &NegativeTable, kb: &KnowledgeBase, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_table(table, kb, &mut w)
}

pub fn write_table(
    table: &NegativeTable,
    kb: &KnowledgeBase,
    w: &mut impl Write,
) -> Result<()> {
    let header = TableHeader {
        k: table.k,
        method: table.method,
        seed: table.seed,
        kb_fingerprint: table.fingerprint,
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for (ordinal, list) in table.lists.iter().enumerate() {
        let row = TableRow {
            entity_id: kb.entity(ordinal).id().to_string(),
            negatives: list
                .iter()
                .map(|&(j, s)| (kb.entity(j).id().to_string(), s))
                .collect(),
        };
        serde_json::to_writer(&mut *w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a table written by [`save_table`], verifying it was built on `kb`.
pub fn load_table(path: impl AsRef<Path>, kb: &KnowledgeBase) -> Result<NegativeTable> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header_line = match lines.next() {
        Some(line) => line?,
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                reason: "missing table header".to_string(),
            })
        }
    };
    let header: TableHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        reason: e.to_string(),
    })?;
    if header.kb_fingerprint != kb.fingerprint() {
        return Err(Error::IndexMismatch {
            expected: kb.fingerprint(),
            found: header.kb_fingerprint,
        });
    }
    let mut lists = vec![Vec::new(); kb.len()];
    for (lineno, line) in lines.enumerate() {
        let lineno = lineno + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: TableRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            reason: e.to_string(),
        })?;
        let ordinal = kb.ordinal_of(&row.entity_id).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            reason: format!("unknown entity id '{}'", row.entity_id),
        })?;
        let mut list = Vec::with_capacity(row.negatives.len());
        for (id, score) in row.negatives {
            let j = kb.ordinal_of(&id).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                reason: format!("unknown entity id '{id}'"),
            })?;
            list.push((j, score));
        }
        lists[ordinal] = list;
    }
    Ok(NegativeTable {
        k: header.k,
        method: header.method,
        seed: header.seed,
        fingerprint: header.kb_fingerprint,
        lists,
    })
}
