//! Assembly of matcher inputs from embedding stores.
//!
//! Conventions: entity text features live at row = entity ordinal in the
//! entity-text store; entity images are the rows listed in `image_rows`
//! (several rows are averaged into one global vector); mention rows come
//! from the mention record itself. Items without an image get
//! `visual = None` and the matcher's zero-vector policy takes over.

use crate::cvacpt::ViewSet;
use crate::error::{Error, Result};
use crate::io::EmbeddingStore;
use crate::kb::{FeatureBundle, KnowledgeBase, Mention};
use crate::matcher::ItemFeatures;

/// Borrowed bundle of every store one evaluation run needs. Optional stores
/// may be absent when the corresponding modality is unused.
#[derive(Clone, Copy)]
pub struct FeatureCatalog<'a> {
    pub entity_text: &'a EmbeddingStore,
    pub entity_image: Option<&'a EmbeddingStore>,
    pub mention_text: &'a EmbeddingStore,
    pub mention_image: Option<&'a EmbeddingStore>,
    pub synthetic: Option<&'a EmbeddingStore>,
}

impl<'a> FeatureCatalog<'a> {
    /// Checks that the entity-text store covers the base and the dimensions
    /// agree across every supplied store.
    pub fn validate(&self, kb: &KnowledgeBase) -> Result<()> {
        if self.entity_text.rows() != kb.len() {
            return Err(Error::InvalidConfig(format!(
                "entity-text store has {} rows but the knowledge base has {} entities",
                self.entity_text.rows(),
                kb.len()
            )));
        }
        let d = self.entity_text.dim();
        let stores = [
            Some(self.mention_text),
            self.entity_image,
            self.mention_image,
            self.synthetic,
        ];
        for store in stores.into_iter().flatten() {
            if store.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: store.dim(),
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.entity_text.dim()
    }

    /// Entity features: text at the ordinal row, image as the mean of the
    /// listed rows (absent when the entity has no image rows or no image
    /// store is supplied).
    pub fn entity_features(&self, kb: &KnowledgeBase, ordinal: usize) -> Result<ItemFeatures> {
        let entity = kb.entity(ordinal);
        let text = FeatureBundle::global_only(
            self.entity_text
                .try_row(ordinal, &format!("entity-text for '{}'", entity.id()))?
                .to_vec(),
        )?;
        let visual = match (self.entity_image, entity.image_rows().is_empty()) {
            (Some(store), false) => {
                Some(FeatureBundle::global_only(mean_rows(
                    store,
                    entity.image_rows(),
                    &format!("entity-image for '{}'", entity.id()),
                )?)?)
            }
            _ => None,
        };
        Ok(ItemFeatures { text, visual })
    }

    pub fn all_entity_features(&self, kb: &KnowledgeBase) -> Result<Vec<ItemFeatures>> {
        (0..kb.len()).map(|o| self.entity_features(kb, o)).collect()
    }

    pub fn mention_features(&self, mention: &Mention) -> Result<ItemFeatures> {
        let text = FeatureBundle::global_only(
            self.mention_text
                .try_row(mention.text_row, &format!("mention-text for '{}'", mention.id))?
                .to_vec(),
        )?;
        let visual = match (self.mention_image, mention.image_row) {
            (Some(store), Some(row)) => Some(FeatureBundle::global_only(
                store
                    .try_row(row, &format!("mention-image for '{}'", mention.id))?
                    .to_vec(),
            )?),
            _ => None,
        };
        Ok(ItemFeatures { text, visual })
    }

    /// The mention's synthetic views, or None when it has none (or no
    /// synthetic store is supplied).
    pub fn mention_views(&self, mention: &Mention) -> Result<Option<ViewSet>> {
        let store = match self.synthetic {
            Some(s) => s,
            None => return Ok(None),
        };
        if mention.synthetic_rows.is_empty() {
            return Ok(None);
        }
        let views: Result<Vec<Vec<f32>>> = mention
            .synthetic_rows
            .iter()
            .map(|&row| {
                store
                    .try_row(row, &format!("synthetic view for '{}'", mention.id))
                    .map(|r| r.to_vec())
            })
            .collect();
        Ok(Some(ViewSet::new(views?)?))
    }
}

fn mean_rows(store: &EmbeddingStore, rows: &[usize], context: &str) -> Result<Vec<f32>> {
    let mut acc = vec![0.0f64; store.dim()];
    for &row in rows {
        for (a, &v) in acc.iter_mut().zip(store.try_row(row, context)?) {
            *a += f64::from(v);
        }
    }
    let n = rows.len() as f64;
    Ok(acc.into_iter().map(|v| (v / n) as f32).collect())
}
