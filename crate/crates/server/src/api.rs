use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequestParts, Multipart, Path, Query, State};
use axum::http::header::{AUTHORIZATION, CACHE_CONTROL, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Duration, Utc};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use aviscape_core::audio::wav;
use aviscape_core::classifier::{ClassificationResult, RecognitionMode, ServiceRequest, ServiceResponse};
use aviscape_core::game::{Submission, UserProfile};
use aviscape_core::geo::{BBox, ClipRef, Detection, GeoPoint, TileKey, TimeRange, Trajectory};
use aviscape_core::soundscape::{build_scene, SceneRequest, SoundscapeScene};
use aviscape_core::SpeciesId;

use crate::error::{ApiError, ErrorCode};
use crate::wire::{
    BankResponse, HealthResponse, QuestState, QuestView, QuestsResponse, RecordingMeta, RecordingResponse,
    RecordingStatus, TileCount, TileLayerResponse, TileResponse,
};
use crate::AppState;

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_upload_bytes;
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/recordings", post(post_recording))
        .route("/v1/recognize", post(recognize))
        .route("/v1/scene", get(scene))
        .route("/v1/tiles/{z}", get(tile_layer))
        .route("/v1/tiles/{z}/{x}/{y}", get(tile))
        .route("/v1/quests", get(quests))
        .route("/v1/quests/{id}/accept", post(accept_quest))
        .route("/v1/profile", get(profile))
        .route("/v1/species/{id}/bank", get(species_bank))
        .route("/v1/trajectory/{species}", get(trajectory))
        .route("/v1/clips/{clip_ref}", get(clip))
        .fallback(|| async { ApiError::new(ErrorCode::NotFound, "no such endpoint") })
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// `Query` with JSON error bodies.
struct ApiQuery<T>(T);

impl<S: Send + Sync, T: DeserializeOwned + Send> FromRequestParts<S> for ApiQuery<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| Self(v))
            .map_err(|e| ApiError::new(ErrorCode::MalformedRequest, e.body_text()))
    }
}

/// `Path` with JSON error bodies.
struct ApiPath<T>(T);

impl<S: Send + Sync, T: DeserializeOwned + Send> FromRequestParts<S> for ApiPath<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Path::<T>::from_request_parts(parts, state)
            .await
            .map(|Path(v)| Self(v))
            .map_err(|e| ApiError::new(ErrorCode::MalformedRequest, e.body_text()))
    }
}

fn authenticate(state: &AppState, headers: &HeaderMap) -> ApiResult<String> {
    let token = headers
        .get(AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| ApiError::new(ErrorCode::Unauthenticated, "missing bearer token"))?;
    state
        .user_for_token(token.trim())
        .map(str::to_owned)
        .ok_or_else(|| ApiError::new(ErrorCode::Unauthenticated, "unknown bearer token"))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WindowQuery {
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
    species: Option<String>,
}

impl WindowQuery {
    fn range(&self) -> ApiResult<TimeRange> {
        TimeRange::new(self.from, self.to).map_err(ApiError::from)
    }

    fn species(&self) -> Option<SpeciesId> {
        self.species.as_deref().filter(|s| !s.is_empty()).map(SpeciesId::from)
    }
}

async fn health(State(state): Shared) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        detections: state.repo.len(),
        species_templates: state.recognizer.templates().len(),
    })
}

async fn post_recording(State(state): Shared, headers: HeaderMap, mut multipart: Multipart) -> ApiResult<Response> {
    let user = authenticate(&state, &headers)?;
    let malformed = |m: String| ApiError::new(ErrorCode::MalformedRequest, m);
    let (mut audio, mut meta) = (None, None);
    while let Some(field) = multipart.next_field().await.map_err(|e| malformed(e.body_text()))? {
        let name = field.name().unwrap_or_default().to_owned();
        let bytes = field.bytes().await.map_err(|e| malformed(e.body_text()))?;
        match name.as_str() {
            "audio" => audio = Some(bytes),
            "meta" => meta = Some(bytes),
            other => return Err(malformed(format!("unexpected part {other:?}"))),
        }
    }
    let audio = audio.ok_or_else(|| malformed("missing \"audio\" part".into()))?;
    let meta: RecordingMeta = serde_json::from_slice(&meta.ok_or_else(|| malformed("missing \"meta\" part".into()))?)
        .map_err(|e| malformed(format!("meta: {e}")))?;
    let (status, body) = blocking(move || ingest(&state, &user, &audio, meta)).await?;
    Ok((status, Json(body)).into_response())
}

/// Decode, recognize, store and reward one upload.
fn ingest(state: &AppState, user: &str, audio: &[u8], meta: RecordingMeta) -> ApiResult<(StatusCode, RecordingResponse)> {
    let clip = wav::decode(audio)?;
    meta.annotation
        .validate(clip.duration_s())
        .map_err(|e| ApiError::new(ErrorCode::InvalidAnnotation, e.to_string()))?;
    meta.position.validate().map_err(|e| ApiError::new(ErrorCode::InvalidCoordinates, e.to_string()))?;
    let excerpt = clip.excerpt(&meta.annotation)?;

    let classification: ClassificationResult = match meta.mode {
        RecognitionMode::OnEdge => {
            let result = meta.classification.ok_or_else(|| {
                ApiError::new(ErrorCode::MalformedRequest, "on-edge mode requires the client classification")
            })?;
            result.validate()?;
            result
        }
        RecognitionMode::Service => state.recognizer.recognize(&excerpt, RecognitionMode::Service)?,
    };
    let threshold = state.config.acceptance_threshold;
    let Some(top) = classification.top().filter(|t| t.score >= threshold).cloned() else {
        let body = RecordingResponse {
            status: RecordingStatus::RejectedLowConfidence,
            detection_id: None,
            clip_ref: None,
            classification,
            reward: None,
        };
        return Ok((StatusCode::OK, body));
    };

    let clip_ref = state.repo.clips().put(audio)?;
    let detection = Detection {
        id: Detection::derive_id(user, &clip_ref, &meta.annotation),
        species_id: top.species_id,
        confidence: top.score,
        timestamp: meta.timestamp,
        geo: meta.position,
        annotation: meta.annotation,
        clip_ref: clip_ref.clone(),
        submitter: user.to_owned(),
    };
    let inserted = state.repo.insert(detection.clone())?;
    let (status, code, reward) = if inserted.created {
        let reward = state.game.record_submission(user, &Submission::from(&detection))?;
        (StatusCode::CREATED, RecordingStatus::Stored, Some(reward))
    } else {
        (StatusCode::OK, RecordingStatus::Duplicate, None)
    };
    let body = RecordingResponse {
        status: code,
        detection_id: Some(inserted.id),
        clip_ref: Some(clip_ref),
        classification,
        reward,
    };
    Ok((status, body))
}

async fn recognize(State(state): Shared, body: Bytes) -> ApiResult<Json<ServiceResponse>> {
    let request: ServiceRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(ErrorCode::MalformedRequest, format!("recognize request: {e}")))?;
    blocking(move || {
        let templates = state.recognizer.templates();
        Ok(Json(ServiceResponse::answer(&request, state.recognizer.classifier(), &templates)?))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneQuery {
    lat: f64,
    lon: f64,
    #[serde(default)]
    heading: f64,
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
    species: Option<String>,
}

async fn scene(State(state): Shared, ApiQuery(q): ApiQuery<SceneQuery>) -> ApiResult<Response> {
    let position =
        GeoPoint::new(q.lat, q.lon).map_err(|e| ApiError::new(ErrorCode::InvalidCoordinates, e.to_string()))?;
    if !q.heading.is_finite() {
        return Err(ApiError::new(ErrorCode::MalformedRequest, "heading must be finite"));
    }
    let window = WindowQuery { from: q.from, to: q.to, species: q.species };
    let request = SceneRequest { position, heading: q.heading, time_window: window.range()?, species: window.species() };
    let scene: SoundscapeScene = blocking(move || {
        build_scene(&request, &state.repo, &state.config.scene, Utc::now()).map_err(ApiError::from)
    })
    .await?;
    Ok(([(CACHE_CONTROL, "no-store")], Json(scene)).into_response())
}

async fn tile(
    State(state): Shared,
    ApiPath((z, x, y)): ApiPath<(u8, u32, u32)>,
    ApiQuery(q): ApiQuery<WindowQuery>,
) -> ApiResult<Json<TileResponse>> {
    let tile = TileKey::new(z, x, y)?;
    let counts = state.repo.tile_species_counts(&tile, &q.range()?, q.species().as_ref())?;
    let total = counts.values().sum();
    Ok(Json(TileResponse { tile, counts, total }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerQuery {
    south: Option<f64>,
    west: Option<f64>,
    north: Option<f64>,
    east: Option<f64>,
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
    species: Option<String>,
}

async fn tile_layer(
    State(state): Shared,
    ApiPath(z): ApiPath<u8>,
    ApiQuery(q): ApiQuery<LayerQuery>,
) -> ApiResult<Json<TileLayerResponse>> {
    let bbox = match (q.south, q.west, q.north, q.east) {
        (None, None, None, None) => BBox::globe(),
        (Some(s), Some(w), Some(n), Some(e)) => {
            let corner = |lat, lon| GeoPoint::new(lat, lon).map_err(|e| ApiError::new(ErrorCode::InvalidCoordinates, e.to_string()));
            // an east edge of exactly 180 would wrap to -180
            let mut b = BBox::new(corner(s, w)?, corner(n, if e >= 180.0 { 179.999_999_999 } else { e })?)?;
            if e >= 180.0 {
                b.east = 180.0;
            }
            b
        }
        _ => return Err(ApiError::new(ErrorCode::MalformedRequest, "give all of south, west, north, east or none")),
    };
    let window = WindowQuery { from: q.from, to: q.to, species: q.species };
    let counts = state.repo.tile_counts(z, &bbox, &window.range()?, window.species().as_ref())?;
    let tiles = counts.into_iter().map(|(t, count)| TileCount { zoom: t.zoom, x: t.x, y: t.y, count }).collect();
    Ok(Json(TileLayerResponse { zoom: z, tiles }))
}

async fn quests(State(state): Shared, headers: HeaderMap) -> ApiResult<Json<QuestsResponse>> {
    let user = authenticate(&state, &headers)?;
    let profile = state.game.profile(&user, Utc::now())?;
    let quests = state
        .game
        .rules()
        .available_quests(&profile)
        .into_iter()
        .map(|quest| {
            let state = if profile.active_quests.contains_key(&quest.id) {
                QuestState::Active
            } else if profile.completed_quests.contains(&quest.id) {
                QuestState::Completed
            } else if profile.expired_quests.contains(&quest.id) {
                QuestState::Expired
            } else {
                QuestState::Available
            };
            QuestView { quest, state }
        })
        .collect();
    Ok(Json(QuestsResponse { quests }))
}

async fn accept_quest(
    State(state): Shared,
    headers: HeaderMap,
    ApiPath(id): ApiPath<String>,
) -> ApiResult<Json<UserProfile>> {
    let user = authenticate(&state, &headers)?;
    Ok(Json(state.game.accept_quest(&user, &id, Utc::now())?))
}

async fn profile(State(state): Shared, headers: HeaderMap) -> ApiResult<Json<UserProfile>> {
    let user = authenticate(&state, &headers)?;
    Ok(Json(state.game.profile(&user, Utc::now())?))
}

async fn species_bank(
    State(state): Shared,
    headers: HeaderMap,
    ApiPath(id): ApiPath<String>,
) -> ApiResult<Json<BankResponse>> {
    let user = authenticate(&state, &headers)?;
    let profile = state.game.profile(&user, Utc::now())?;
    let species = SpeciesId::from(id);
    let clips = state.repo.species_bank(&species, &profile)?;
    Ok(Json(BankResponse { species_id: species, clips }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryQuery {
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
    bucket_days: Option<i64>,
}

async fn trajectory(
    State(state): Shared,
    headers: HeaderMap,
    ApiPath(species): ApiPath<String>,
    ApiQuery(q): ApiQuery<TrajectoryQuery>,
) -> ApiResult<Json<Trajectory>> {
    authenticate(&state, &headers)?;
    let days = q.bucket_days.unwrap_or(state.config.scene.trajectory_bucket_days);
    if days <= 0 {
        return Err(ApiError::new(ErrorCode::MalformedRequest, "bucket_days must be positive"));
    }
    let range = TimeRange::new(q.from, q.to)?;
    Ok(Json(state.repo.trajectory(&SpeciesId::from(species), &range, Duration::days(days))?))
}

async fn clip(State(state): Shared, headers: HeaderMap, ApiPath(raw): ApiPath<String>) -> ApiResult<Response> {
    authenticate(&state, &headers)?;
    let raw = raw.strip_suffix(".wav").unwrap_or(&raw);
    let clip_ref = ClipRef::parse(raw).map_err(|_| ApiError::new(ErrorCode::NotFound, "unknown clip"))?;
    let bytes = state.repo.clips().get(&clip_ref)?;
    Ok(([(CONTENT_TYPE, "audio/wav")], bytes).into_response())
}
