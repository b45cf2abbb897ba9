//! File formats and ingestion.
//!
//! Two line-oriented JSON files carry metadata (one object per line, unknown
//! fields ignored): the entities file and the mentions file. Embedding
//! matrices use the `EMB1` container:
//!
//! ```text
//! bytes 0..4   magic "EMB1"
//! bytes 4..8   row count, u32 little-endian
//! bytes 8..12  dimension, u32 little-endian
//! bytes 12..16 dtype code, u32 little-endian (0 = IEEE-754 binary32)
//! bytes 16..   row-major little-endian payload
//! ```
//!
//! Loads reject NaN/Inf outright; every downstream invariant assumes finite
//! values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::kb::{Entity, KnowledgeBase, Mention};

const MAGIC: &[u8; 4] = b"EMB1";
const DTYPE_F32: u32 = 0;

/// An immutable `rows x dim` matrix of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    source_path: String,
}

impl EmbeddingStore {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * dim,
                got: data.len(),
            });
        }
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    row: i / dim,
                    col: i % dim,
                });
            }
        }
        Ok(EmbeddingStore {
            rows,
            dim,
            data,
            source_path: String::new(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn try_row(&self, i: usize, context: &str) -> Result<&[f32]> {
        if i >= self.rows {
            return Err(Error::RowOutOfRange {
                row: i,
                rows: self.rows,
                context: context.to_string(),
            });
        }
        Ok(self.row(i))
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }
}

/// Writes a store to the EMB1 container. A `rows = 0` store produces a
/// 16-byte header-only file.
pub fn save_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(MAGIC)?;
    w.write_all(&(store.rows as u32).to_le_bytes())?;
    w.write_all(&(store.dim as u32).to_le_bytes())?;
    w.write_all(&DTYPE_F32.to_le_bytes())?;
    for v in &store.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Loads an EMB1 container, validating the header, the declared sizes
/// against the file length, and the finiteness of every value.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|_| Error::TruncatedFile {
        path: path.to_path_buf(),
        expected: 16,
        actual: std::fs::metadata(path).map(|m| m.len()).unwrap_or(0),
    })?;
    if &header[0..4] != MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let dtype = u32::from_le_bytes(header[12..16].try_into().unwrap());
    if dtype != DTYPE_F32 {
        return Err(Error::InvalidHeader {
            path: path.to_path_buf(),
            reason: format!("unsupported dtype code {dtype}"),
        });
    }
    if dim == 0 {
        return Err(Error::InvalidHeader {
            path: path.to_path_buf(),
            reason: "dimension must be positive".to_string(),
        });
    }
    let expected = 16 + (rows as u64) * (dim as u64) * 4;
    let actual = std::fs::metadata(path)?.len();
    if actual != expected {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    let mut payload = vec![0u8; rows * dim * 4];
    r.read_exact(&mut payload)?;
    let mut data = Vec::with_capacity(rows * dim);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                row: i / dim,
                col: i % dim,
            });
        }
    }
    let mut store = EmbeddingStore::new(rows, dim, data)?;
    store.source_path = path.display().to_string();
    Ok(store)
}

#[derive(Deserialize)]
struct EntityRecord {
    id: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    attributes: Vec<String>,
    #[serde(default)]
    description: String,
    #[serde(default)]
    image_rows: Vec<usize>,
}

#[derive(Deserialize)]
struct MentionRecord {
    id: String,
    #[serde(default)]
    mention_words: String,
    #[serde(default)]
    sentence: String,
    gold_entity: String,
    #[serde(default)]
    image_row: Option<usize>,
    #[serde(default)]
    synthetic_rows: Vec<usize>,
    text_row: usize,
}

fn parse_err(path: &Path, line: usize, reason: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    }
}

/// Loads an entities file (one JSON object per line) into a validated
/// knowledge base. Line numbers are 1-based in errors.
pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    load_kb_with_options(path, false)
}

pub fn load_kb_with_options(path: impl AsRef<Path>, fold_case: bool) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut entities = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EntityRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e))?;
        if !seen.insert(record.id.clone()) {
            return Err(parse_err(
                path,
                lineno,
                format!("duplicate entity id '{}'", record.id),
            ));
        }
        let entity = Entity::new(
            record.id,
            record.name,
            record.attributes,
            record.description,
            record.image_rows,
        )
        .map_err(|e| parse_err(path, lineno, e))?;
        entities.push(entity);
    }
    KnowledgeBase::build_with_options(entities, fold_case)
}

/// Mentions plus the non-fatal validation warnings produced while loading.
#[derive(Debug)]
pub struct LoadedMentions {
    pub mentions: Vec<Mention>,
    pub warnings: Vec<String>,
}

/// Loads a mentions file, resolving every `gold_entity` against `kb`.
/// A sentence that does not contain its mention words produces a warning,
/// not an error.
pub fn load_mentions(path: impl AsRef<Path>, kb: &KnowledgeBase) -> Result<LoadedMentions> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut mentions = Vec::new();
    let mut warnings = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MentionRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e))?;
        if kb.ordinal_of(&record.gold_entity).is_none() {
            return Err(Error::DanglingReference {
                mention: record.id,
                entity: record.gold_entity,
                line: lineno,
            });
        }
        let mention = Mention::new(
            record.id,
            record.mention_words,
            record.sentence,
            record.gold_entity,
            record.image_row,
            record.synthetic_rows,
            record.text_row,
        )
        .map_err(|e| parse_err(path, lineno, e))?;
        if !mention.mention_words.is_empty() && !mention.sentence_contains_words() {
            warnings.push(format!(
                "mention '{}' (line {}): sentence does not contain the mention words",
                mention.id, lineno
            ));
        }
        mentions.push(mention);
    }
    Ok(LoadedMentions { mentions, warnings })
}

/// Writes entities as one JSON object per line.
pub fn save_kb_jsonl(kb: &KnowledgeBase, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for entity in kb.entities() {
        serde_json::to_writer(&mut w, entity)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes mentions as one JSON object per line.
pub fn save_mentions_jsonl(mentions: &[Mention], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for mention in mentions {
        serde_json::to_writer(&mut w, mention)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Counts of mention-gold pairs by image availability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct DatasetStats {
    /// Mention and its gold entity both have an image.
    pub both_have_image: usize,
    /// Mention has an image, gold entity does not.
    pub mention_only: usize,
    /// Gold entity has an image, mention does not.
    pub entity_only: usize,
    /// Neither side has an image.
    pub neither: usize,
}

impl DatasetStats {
    pub fn total(&self) -> usize {
        self.both_have_image + self.mention_only + self.entity_only + self.neither
    }
}

/// Classifies every mention by image availability on both sides of its gold
/// pair. The four counts always sum to the mention count.
pub fn dataset_stats(kb: &KnowledgeBase, mentions: &[Mention]) -> DatasetStats {
    let mut stats = DatasetStats {
        both_have_image: 0,
        mention_only: 0,
        entity_only: 0,
        neither: 0,
    };
    for mention in mentions {
        let entity_has = kb
            .ordinal_of(&mention.gold_entity)
            .map(|o| kb.entity(o).has_image())
            .unwrap_or(false);
        match (mention.image_row.is_some(), entity_has) {
            (true, true) => stats.both_have_image += 1,
            (true, false) => stats.mention_only += 1,
            (false, true) => stats.entity_only += 1,
            (false, false) => stats.neither += 1,
        }
    }
    stats
}
