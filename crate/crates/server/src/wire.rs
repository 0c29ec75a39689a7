//! Request and response bodies of the `/v1` API.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use aviscape_core::audio::Annotation;
use aviscape_core::classifier::{ClassificationResult, RecognitionMode};
use aviscape_core::game::{Quest, RewardOutcome};
use aviscape_core::geo::{ClipRef, DetectionId, GeoPoint, TileKey};
use aviscape_core::SpeciesId;

/// The `meta` part of a recording upload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingMeta {
    pub annotation: Annotation,
    pub position: GeoPoint,
    pub timestamp: DateTime<Utc>,
    pub mode: RecognitionMode,
    /// Required in `on-edge` mode: the client's own result.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationResult>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordingStatus {
    Stored,
    Duplicate,
    RejectedLowConfidence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingResponse {
    pub status: RecordingStatus,
    pub detection_id: Option<DetectionId>,
    pub clip_ref: Option<ClipRef>,
    pub classification: ClassificationResult,
    pub reward: Option<RewardOutcome>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileResponse {
    pub tile: TileKey,
    pub counts: BTreeMap<SpeciesId, usize>,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileCount {
    pub zoom: u8,
    pub x: u32,
    pub y: u32,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileLayerResponse {
    pub zoom: u8,
    pub tiles: Vec<TileCount>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestState {
    Available,
    Active,
    Completed,
    Expired,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestView {
    #[serde(flatten)]
    pub quest: Quest,
    pub state: QuestState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestsResponse {
    pub quests: Vec<QuestView>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankResponse {
    pub species_id: SpeciesId,
    pub clips: Vec<ClipRef>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub detections: usize,
    pub species_templates: usize,
}
