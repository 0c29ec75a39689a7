use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::{spherical_centroid, Detection, GeoPoint, RepoError};
use crate::SpeciesId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Bucket index counted from the Unix epoch.
    pub bucket: i64,
    pub bucket_start: DateTime<Utc>,
    pub centroid: GeoPoint,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub species_id: SpeciesId,
    pub bucket_seconds: i64,
    pub points: Vec<TrajectoryPoint>,
    /// Great-circle path length over the elapsed bucket count; 0 for fewer than two buckets.
    pub mobility_km_per_bucket: f64,
}

impl Trajectory {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Buckets detections on epoch-aligned windows of length `bucket` and joins the
/// per-bucket spherical centroids in time order. Empty buckets are omitted.
pub fn build_trajectory(species_id: SpeciesId, detections: &[Detection], bucket: Duration) -> Result<Trajectory, RepoError> {
    let seconds = bucket.num_seconds();
    if seconds <= 0 {
        return Err(RepoError::InvalidRange(format!("bucket must be at least one second, got {bucket}")));
    }
    let mut buckets: BTreeMap<i64, Vec<GeoPoint>> = BTreeMap::new();
    for d in detections.iter().filter(|d| d.species_id == species_id) {
        buckets.entry(d.timestamp.timestamp().div_euclid(seconds)).or_default().push(d.geo);
    }
    let points: Vec<TrajectoryPoint> = buckets
        .into_iter()
        .map(|(b, pts)| TrajectoryPoint {
            bucket: b,
            bucket_start: DateTime::from_timestamp(b * seconds, 0).unwrap_or(DateTime::UNIX_EPOCH),
            // mutually cancelling points have no defined mean; take an order-independent representative
            centroid: spherical_centroid(&pts).unwrap_or_else(|| {
                *pts.iter().min_by(|a, b| a.lat.total_cmp(&b.lat).then(a.lon.total_cmp(&b.lon))).expect("non-empty bucket")
            }),
            count: pts.len(),
        })
        .collect();
    let mobility_km_per_bucket = match (points.first(), points.last()) {
        (Some(first), Some(last)) if last.bucket > first.bucket => {
            let path: f64 = points.windows(2).map(|w| w[0].centroid.distance_km(&w[1].centroid)).sum();
            path / (last.bucket - first.bucket) as f64
        }
        _ => 0.0,
    };
    Ok(Trajectory { species_id, bucket_seconds: seconds, points, mobility_km_per_bucket })
}
