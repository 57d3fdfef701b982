//! Manifest records for rated audio-visual items and optimal-selection
//! groups.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dimension::PerDimension;
use crate::subjective::MosRecord;

/// Scores for the three dimensions. Serialises as
/// `{"audio_quality", "consistency", "overall"}`.
pub type ScoreTriple = PerDimension<f64>;

/// One generated audio track dubbed onto one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgavItem {
    pub id: String,
    pub video_uri: String,
    pub audio_uri: String,
    pub source_video_id: String,
    pub category: String,
    pub vta_method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<MosRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
}

impl AgavItem {
    pub fn ground_truth_triple(&self) -> Option<ScoreTriple> {
        self.ground_truth.as_ref().map(MosRecord::triple)
    }
}

/// Candidates that share one video; `correct_item_id` is the labelled best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGroup {
    pub group_id: String,
    pub source_page: String,
    pub items: Vec<AgavItem>,
    pub correct_item_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManifestError {
    #[error("group `{0}` has fewer than 2 items")]
    GroupTooSmall(String),
    #[error("group `{group}`: correct item `{item}` is not a member")]
    CorrectItemMissing { group: String, item: String },
    #[error("duplicate item id `{0}`")]
    DuplicateItem(String),
    #[error("items `{a}` and `{b}` share source video `{video}` and method `{method}`")]
    DuplicateMethod {
        a: String,
        b: String,
        video: String,
        method: String,
    },
}

impl PairGroup {
    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.items.len() < 2 {
            return Err(ManifestError::GroupTooSmall(self.group_id.clone()));
        }
        if !self.items.iter().any(|i| i.id == self.correct_item_id) {
            return Err(ManifestError::CorrectItemMissing {
                group: self.group_id.clone(),
                item: self.correct_item_id.clone(),
            });
        }
        Ok(())
    }

    pub fn correct_position(&self) -> usize {
        self.items
            .iter()
            .position(|i| i.id == self.correct_item_id)
            .expect("validated group contains its correct item")
    }
}

/// Checks id uniqueness and that items sharing a source video come from
/// distinct methods.
pub fn validate_items(items: &[AgavItem]) -> Result<(), ManifestError> {
    let mut ids = HashSet::new();
    let mut seen: std::collections::HashMap<(&str, &str), &str> = Default::default();
    for item in items {
        if !ids.insert(item.id.as_str()) {
            return Err(ManifestError::DuplicateItem(item.id.clone()));
        }
        if let Some(prev) = seen.insert((&item.source_video_id, &item.vta_method), &item.id) {
            return Err(ManifestError::DuplicateMethod {
                a: prev.to_string(),
                b: item.id.clone(),
                video: item.source_video_id.clone(),
                method: item.vta_method.clone(),
            });
        }
    }
    Ok(())
}

/// Ids of the labelled best item of every group.
pub fn correct_ids(groups: &[PairGroup]) -> HashSet<String> {
    groups.iter().map(|g| g.correct_item_id.clone()).collect()
}
