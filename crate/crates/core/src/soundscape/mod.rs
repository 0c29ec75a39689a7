//! Position and time dependent virtual soundscapes: scene construction from
//! detections, constant-power panning, adaptive real/virtual mixing and
//! offline rendering.

mod mix;
mod pan;
mod render;

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::DspError;
use crate::geo::{normalize_lon, spherical_centroid, BBox, ClipRef, GeoPoint, RepoError, Repository, TileKey, TimeRange};
use crate::SpeciesId;

pub use mix::{ara_mix, MixOutput, MixParams};
pub use pan::{pan_gains, PanGains, REAR_ATTENUATION};
pub use render::{render_scene, source_rate};

#[derive(Debug, Error)]
pub enum SoundscapeError {
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A sonified cluster of detections placed around the listener.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualSource {
    pub species_id: SpeciesId,
    /// Degrees relative to the listener heading, clockwise, in `[-180, 180)`.
    pub azimuth: f64,
    pub distance_m: f64,
    /// Linear gain in `[0, 1]`.
    pub gain: f64,
    /// Loop speed in `[0.25, 4]`.
    pub playback_rate: f64,
    /// Pitch offset in semitones.
    pub spectral_shift: f64,
    pub clip_ref: ClipRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoundscapeScene {
    pub position: GeoPoint,
    /// Degrees clockwise from true north.
    pub heading: f64,
    pub time_window: TimeRange,
    /// Nearest first.
    pub sources: Vec<VirtualSource>,
    pub generated_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRequest {
    pub position: GeoPoint,
    pub heading: f64,
    pub time_window: TimeRange,
    pub species: Option<SpeciesId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub max_sources: usize,
    /// Detections farther than this are not sonified.
    pub radius_m: f64,
    /// Detections of one species within one tile at this zoom form a single source.
    pub cluster_zoom: u8,
    /// Distance at and below which a source plays at full gain.
    pub reference_distance_m: f64,
    /// Trajectory bucket for the mobility cue.
    pub trajectory_bucket_days: i64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { max_sources: 16, radius_m: 2000.0, cluster_zoom: 14, reference_distance_m: 10.0, trajectory_bucket_days: 7 }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SoundscapeError> {
        let bad = |m: &str| Err(SoundscapeError::InvalidParameter(m.into()));
        if self.max_sources == 0 {
            return bad("max_sources must be positive");
        }
        if !(self.radius_m.is_finite() && self.radius_m > 0.0) {
            return bad("radius_m must be positive");
        }
        if self.cluster_zoom > crate::geo::MAX_ZOOM {
            return bad("cluster_zoom above 18");
        }
        if !(self.reference_distance_m.is_finite() && self.reference_distance_m > 0.0) {
            return bad("reference_distance_m must be positive");
        }
        if self.trajectory_bucket_days <= 0 {
            return bad("trajectory_bucket_days must be positive");
        }
        Ok(())
    }
}

/// Wraps degrees into `[-180, 180)`.
pub fn normalize_azimuth(deg: f64) -> f64 {
    normalize_lon(deg)
}

/// Inverse-distance rolloff, 1 inside the reference distance.
pub fn distance_gain(distance_m: f64, reference_m: f64) -> f64 {
    reference_m / distance_m.max(reference_m)
}

/// `1 + log10(n)` clamped to `[0.25, 4]`.
pub fn playback_rate_for(count: usize) -> f64 {
    (1.0 + (count.max(1) as f64).log10()).clamp(0.25, 4.0)
}

/// Semitone shift for a mobility in km per bucket: one semitone per 100 km, at most 12.
pub fn spectral_shift_for(mobility_km_per_bucket: f64) -> f64 {
    (mobility_km_per_bucket / 100.0).clamp(0.0, 12.0)
}

/// Builds the scene heard at `request.position`. `as_of` stamps the scene so
/// identical inputs give identical output.
pub fn build_scene(
    request: &SceneRequest,
    repo: &Repository,
    config: &SceneConfig,
    as_of: DateTime<Utc>,
) -> Result<SoundscapeScene, SoundscapeError> {
    config.validate()?;
    request.position.validate()?;
    if !request.heading.is_finite() {
        return Err(SoundscapeError::InvalidParameter(format!("heading {}", request.heading)));
    }
    let heading = request.heading.rem_euclid(360.0);
    let position = request.position;
    let bbox = BBox::around(&position, config.radius_m);
    let nearby: Vec<_> = repo
        .query(&bbox, &request.time_window, request.species.as_ref())
        .into_iter()
        .filter(|d| position.distance_m(&d.geo) <= config.radius_m)
        .collect();

    let mut clusters: BTreeMap<(SpeciesId, TileKey), Vec<&crate::geo::Detection>> = BTreeMap::new();
    for d in &nearby {
        clusters.entry((d.species_id.clone(), TileKey::for_point(&d.geo, config.cluster_zoom))).or_default().push(d);
    }

    let bucket = Duration::days(config.trajectory_bucket_days);
    let mut mobility: BTreeMap<SpeciesId, f64> = BTreeMap::new();
    let mut sources = Vec::with_capacity(clusters.len());
    for ((species, tile), members) in clusters {
        let centroid = spherical_centroid(members.iter().map(|d| &d.geo)).unwrap_or(members[0].geo);
        let distance_m = position.distance_m(&centroid);
        let latest = members
            .iter()
            .max_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)))
            .expect("non-empty cluster");
        let km = match mobility.get(&species) {
            Some(&km) => km,
            None => {
                let km = repo.trajectory(&species, &request.time_window, bucket)?.mobility_km_per_bucket;
                mobility.insert(species.clone(), km);
                km
            }
        };
        sources.push((
            tile,
            VirtualSource {
                azimuth: normalize_azimuth(position.bearing_to(&centroid) - heading),
                distance_m,
                gain: distance_gain(distance_m, config.reference_distance_m),
                playback_rate: playback_rate_for(members.len()),
                spectral_shift: spectral_shift_for(km),
                clip_ref: latest.clip_ref.clone(),
                species_id: species,
            },
        ));
    }
    sources.sort_by(|(ta, a), (tb, b)| {
        a.distance_m.total_cmp(&b.distance_m).then_with(|| a.species_id.cmp(&b.species_id)).then_with(|| ta.cmp(tb))
    });
    sources.truncate(config.max_sources);

    Ok(SoundscapeScene {
        position,
        heading,
        time_window: request.time_window,
        sources: sources.into_iter().map(|(_, s)| s).collect(),
        generated_at: as_of,
    })
}

/// Scene for the same request with its time window moved by `shift`.
pub fn time_scrub(
    request: &SceneRequest,
    shift: Duration,
    repo: &Repository,
    config: &SceneConfig,
    as_of: DateTime<Utc>,
) -> Result<SoundscapeScene, SoundscapeError> {
    let shifted = SceneRequest { time_window: request.time_window.shifted(shift), ..request.clone() };
    build_scene(&shifted, repo, config, as_of)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::Annotation;
    use crate::geo::{Detection, RepoConfig};
    use chrono::TimeZone;

    fn t(day: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 6, 1, 5, 0, 0).unwrap() + Duration::days(day)
    }

    fn add(repo: &Repository, n: u32, p: GeoPoint, species: &str, day: i64) -> Detection {
        let clip_ref = repo.clips().put(format!("{n}").as_bytes()).unwrap();
        let annotation = Annotation::new(0.0, 1.0);
        let d = Detection {
            id: Detection::derive_id("u", &clip_ref, &annotation),
            species_id: species.into(),
            confidence: 0.9,
            timestamp: t(day),
            geo: p,
            annotation,
            clip_ref,
            submitter: "u".into(),
        };
        repo.insert(d.clone()).unwrap();
        d
    }

    fn request(p: GeoPoint, heading: f64) -> SceneRequest {
        SceneRequest { position: p, heading, time_window: TimeRange::all(), species: None }
    }

    fn home() -> GeoPoint {
        GeoPoint::new(40.6401, 22.9444).unwrap()
    }

    #[test]
    fn empty_store_gives_empty_scene() {
        let repo = Repository::in_memory(RepoConfig::default());
        let scene = build_scene(&request(home(), 0.0), &repo, &SceneConfig::default(), t(0)).unwrap();
        assert!(scene.sources.is_empty());
    }

    #[test]
    fn source_due_east_at_plus_ninety() {
        let repo = Repository::in_memory(RepoConfig::default());
        add(&repo, 1, home().destination(90.0, 150.0), "synth-00", 0);
        let scene = build_scene(&request(home(), 0.0), &repo, &SceneConfig::default(), t(0)).unwrap();
        assert_eq!(scene.sources.len(), 1);
        let s = &scene.sources[0];
        assert!((s.azimuth - 90.0).abs() < 0.5, "{}", s.azimuth);
        assert!((s.distance_m - 150.0).abs() < 0.01);
        assert_eq!(s.playback_rate, 1.0);
        assert_eq!(s.spectral_shift, 0.0);
        let facing_east = build_scene(&request(home(), 90.0), &repo, &SceneConfig::default(), t(0)).unwrap();
        assert!(facing_east.sources[0].azimuth.abs() < 0.5);
        let facing_south = build_scene(&request(home(), 180.0), &repo, &SceneConfig::default(), t(0)).unwrap();
        assert!((facing_south.sources[0].azimuth + 90.0).abs() < 0.5);
    }

    #[test]
    fn rolloff_law() {
        assert_eq!(distance_gain(10.0, 10.0), 1.0);
        assert_eq!(distance_gain(20.0, 10.0), 0.5);
        assert_eq!(distance_gain(0.0, 10.0), 1.0);
        assert_eq!(playback_rate_for(1), 1.0);
        assert_eq!(playback_rate_for(10), 2.0);
        assert_eq!(playback_rate_for(100_000), 4.0);
        assert_eq!(spectral_shift_for(250.0), 2.5);
        assert_eq!(spectral_shift_for(1e9), 12.0);
    }

    #[test]
    fn clustering_counts_and_nearest_first_cap() {
        let repo = Repository::in_memory(RepoConfig::default());
        let p = home().destination(0.0, 300.0);
        for n in 0..10 {
            add(&repo, n, p, "synth-01", 0);
        }
        for n in 0..20u32 {
            add(&repo, 100 + n, home().destination(n as f64 * 18.0, 200.0 + 60.0 * n as f64), "synth-02", 0);
        }
        let config = SceneConfig { max_sources: 5, ..SceneConfig::default() };
        let scene = build_scene(&request(home(), 0.0), &repo, &config, t(0)).unwrap();
        assert_eq!(scene.sources.len(), 5);
        assert!(scene.sources.windows(2).all(|w| w[0].distance_m <= w[1].distance_m));
        let full = build_scene(&request(home(), 0.0), &repo, &SceneConfig::default(), t(0)).unwrap();
        let cluster = full.sources.iter().find(|s| s.species_id.as_str() == "synth-01").unwrap();
        assert_eq!(cluster.playback_rate, 2.0);
        assert!(full.sources.len() <= 16);
    }

    #[test]
    fn mobility_drives_spectral_shift() {
        let repo = Repository::in_memory(RepoConfig::default());
        add(&repo, 1, home().destination(45.0, 100.0), "synth-03", 0);
        add(&repo, 2, home().destination(0.0, 300_000.0), "synth-03", 7);
        let config = SceneConfig { radius_m: 500.0, ..SceneConfig::default() };
        let scene = build_scene(&request(home(), 0.0), &repo, &config, t(8)).unwrap();
        assert_eq!(scene.sources.len(), 1);
        assert!((scene.sources[0].spectral_shift - 3.0).abs() < 0.01, "{}", scene.sources[0].spectral_shift);
    }

    #[test]
    fn scrub_is_deterministic_and_respects_windows() {
        let repo = Repository::in_memory(RepoConfig::default());
        add(&repo, 1, home().destination(10.0, 50.0), "synth-04", 0);
        add(&repo, 2, home().destination(200.0, 80.0), "synth-05", 20);
        let base = SceneRequest {
            time_window: TimeRange::new(Some(t(-30)), Some(t(-10))).unwrap(),
            ..request(home(), 0.0)
        };
        let config = SceneConfig::default();
        assert!(build_scene(&base, &repo, &config, t(30)).unwrap().sources.is_empty());
        let a = time_scrub(&base, Duration::days(30), &repo, &config, t(30)).unwrap();
        let b = time_scrub(&base, Duration::days(30), &repo, &config, t(30)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sources.len(), 1);
        assert_eq!(a.sources[0].species_id.as_str(), "synth-04");
        let all = SceneRequest { time_window: TimeRange::all(), ..base };
        assert_eq!(build_scene(&all, &repo, &config, t(30)).unwrap().sources.len(), 2);
    }
}
