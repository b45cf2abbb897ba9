//! Domain model: entities, mentions, feature bundles, and the knowledge base.
//!
//! A `KnowledgeBase` is immutable after construction and safe to share across
//! threads. Attribute tokens are trimmed and kept as a set per entity; the
//! base assigns each distinct token a dense integer id in first-seen order so
//! that set arithmetic downstream works on sorted integer ids.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Default embedding dimension used by the bundled tooling.
pub const DEFAULT_DIM: usize = 96;

/// One record of the knowledge base.
#[derive(Debug, Clone, Serialize)]
pub struct Entity {
    id: String,
    name: String,
    /// Sorted, deduplicated attribute tokens.
    attributes: Vec<String>,
    description: String,
    /// Row indices into the entity-image embedding store. Empty means the
    /// entity has no image.
    image_rows: Vec<usize>,
}

impl Entity {
    pub fn new<S: Into<String>>(
        id: S,
        name: S,
        attributes: impl IntoIterator<Item = S>,
        description: S,
        image_rows: Vec<usize>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::EmptyId);
        }
        let mut attrs = Vec::new();
        for token in attributes {
            let token = token.into();
            let trimmed = token.trim();
            if trimmed.is_empty() {
                return Err(Error::EmptyAttribute);
            }
            attrs.push(trimmed.to_string());
        }
        attrs.sort();
        attrs.dedup();
        Ok(Entity {
            id,
            name: name.into(),
            attributes: attrs,
            description: description.into(),
            image_rows,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Attribute tokens, sorted and deduplicated.
    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn image_rows(&self) -> &[usize] {
        &self.image_rows
    }

    pub fn has_image(&self) -> bool {
        !self.image_rows.is_empty()
    }

    fn fold_attributes(&mut self) {
        for token in &mut self.attributes {
            *token = token.to_lowercase();
        }
        self.attributes.sort();
        self.attributes.dedup();
    }
}

/// A mention: the words referring to an entity, their sentence, and the rows
/// of its precomputed features.
#[derive(Debug, Clone, Serialize)]
pub struct Mention {
    pub id: String,
    pub mention_words: String,
    pub sentence: String,
    /// Id of the linked entity; resolved against the knowledge base at load.
    pub gold_entity: String,
    /// Row in the mention-image store, if the mention has an image.
    pub image_row: Option<usize>,
    /// Rows of the synthetic-view embeddings for this mention (may be empty).
    pub synthetic_rows: Vec<usize>,
    /// Row in the mention-text store holding the textual global feature.
    pub text_row: usize,
}

impl Mention {
    pub fn new(
        id: impl Into<String>,
        mention_words: impl Into<String>,
        sentence: impl Into<String>,
        gold_entity: impl Into<String>,
        image_row: Option<usize>,
        synthetic_rows: Vec<usize>,
        text_row: usize,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::EmptyMentionId);
        }
        Ok(Mention {
            id,
            mention_words: mention_words.into(),
            sentence: sentence.into(),
            gold_entity: gold_entity.into(),
            image_row,
            synthetic_rows,
            text_row,
        })
    }

    /// True when the sentence contains the mention words verbatim. Absence is
    /// a validation warning, not an error.
    pub fn sentence_contains_words(&self) -> bool {
        self.sentence.contains(&self.mention_words)
    }
}

/// A global vector plus an optional per-patch local matrix for one modality
/// of one item.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    global: Vec<f32>,
    /// Row-major `n_patches x dim` local features; empty when global-only.
    local: Vec<f32>,
    n_patches: usize,
    dim: usize,
}

impl FeatureBundle {
    pub fn new(global: Vec<f32>, local: Vec<f32>, n_patches: usize) -> Result<Self> {
        let dim = global.len();
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if local.len() != n_patches * dim {
            return Err(Error::DimensionMismatch {
                expected: n_patches * dim,
                got: local.len(),
            });
        }
        for (i, v) in global.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row: 0, col: i });
            }
        }
        for (i, v) in local.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    row: i / dim,
                    col: i % dim,
                });
            }
        }
        Ok(FeatureBundle {
            global,
            local,
            n_patches,
            dim,
        })
    }

    pub fn global_only(global: Vec<f32>) -> Result<Self> {
        FeatureBundle::new(global, Vec::new(), 0)
    }

    pub fn global(&self) -> &[f32] {
        &self.global
    }

    pub fn local(&self) -> &[f32] {
        &self.local
    }

    pub fn patch(&self, p: usize) -> &[f32] {
        &self.local[p * self.dim..(p + 1) * self.dim]
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Immutable, validated entity collection with the attribute vocabulary.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    entities: Vec<Entity>,
    index: HashMap<String, usize>,
    attr_ids: HashMap<String, u32>,
    attr_tokens: Vec<String>,
}

impl KnowledgeBase {
    /// Builds a knowledge base in input order. Duplicate ids are rejected;
    /// the attribute vocabulary is assigned dense ids in first-seen order
    /// (entities in input order, each entity's tokens in sorted order).
    pub fn build(entities: Vec<Entity>) -> Result<Self> {
        Self::build_with_options(entities, false)
    }

    /// Like [`KnowledgeBase::build`], optionally lowercasing attribute
    /// tokens before vocabulary assignment.
    pub fn build_with_options(mut entities: Vec<Entity>, fold_case: bool) -> Result<Self> {
        if fold_case {
            for e in &mut entities {
                e.fold_attributes();
            }
        }
        let mut index = HashMap::with_capacity(entities.len());
        let mut attr_ids = HashMap::new();
        let mut attr_tokens = Vec::new();
        for (ordinal, entity) in entities.iter().enumerate() {
            if entity.id.is_empty() {
                return Err(Error::EmptyId);
            }
            if index.insert(entity.id.clone(), ordinal).is_some() {
                return Err(Error::DuplicateId(entity.id.clone()));
            }
            for token in &entity.attributes {
                if !attr_ids.contains_key(token) {
                    attr_ids.insert(token.clone(), attr_tokens.len() as u32);
                    attr_tokens.push(token.clone());
                }
            }
        }
        Ok(KnowledgeBase {
            entities,
            index,
            attr_ids,
            attr_tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity(&self, ordinal: usize) -> &Entity {
        &self.entities[ordinal]
    }

    pub fn ordinal_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vocab_len(&self) -> usize {
        self.attr_tokens.len()
    }

    pub fn attribute_id(&self, token: &str) -> Option<u32> {
        self.attr_ids.get(token).copied()
    }

    pub fn attribute_token(&self, id: u32) -> Option<&str> {
        self.attr_tokens.get(id as usize).map(String::as_str)
    }

    /// Encodes an entity's attribute set as a strictly increasing id
    /// sequence. Fails with `UnknownAttribute` for tokens outside the
    /// vocabulary.
    pub fn encode_attributes(&self, entity: &Entity) -> Result<Vec<u32>> {
        let mut ids = Vec::with_capacity(entity.attributes.len());
        for token in &entity.attributes {
            match self.attr_ids.get(token) {
                Some(&id) => ids.push(id),
                None => return Err(Error::UnknownAttribute(token.clone())),
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    /// Encoded attribute sets for every entity, indexed by ordinal.
    pub fn encoded_attribute_sets(&self) -> Vec<Vec<u32>> {
        self.entities
            .iter()
            .map(|e| self.encode_attributes(e).expect("own entity encodes"))
            .collect()
    }

    /// Stable 64-bit hash of the entity-id list, used to pair derived
    /// artifacts (negative tables, signature indexes) with the base they
    /// were built on.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        for entity in &self.entities {
            h.update(entity.id.as_bytes());
            h.update(&[0xff]);
        }
        h.finish()
    }
}

/// FNV-1a, fixed here so fingerprints are identical across platforms.
pub(crate) struct Fnv64(u64);

impl Fnv64 {
    pub(crate) fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}
