//! Detection repository: geo/time queries, Web-Mercator tile aggregation and
//! species trajectories.

mod clips;
mod store;
mod trajectory;

use std::f64::consts::PI;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::Annotation;
use crate::SpeciesId;

pub use clips::{ClipRef, ClipStore};
pub use store::{BankAccess, InsertOutcome, RepoConfig, Repository};
pub use trajectory::{build_trajectory, Trajectory, TrajectoryPoint};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;
/// Deepest zoom level of the tile pyramid.
pub const MAX_ZOOM: u8 = 18;
/// Latitude limit of the Web-Mercator projection.
pub const MERCATOR_MAX_LAT: f64 = 85.051_128_779_806_59;

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("zoom {0} outside 0..=18")]
    InvalidZoom(u8),
    #[error("tile {0:?} out of range")]
    InvalidTile(TileKey),
    #[error("clip {0} not found")]
    MissingClip(ClipRef),
    #[error("species bank locked: badge required")]
    AccessDenied,
    #[error("storage failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store: {0}")]
    Corrupt(String),
}

/// WGS84 position in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Validated point; longitude is wrapped into `[-180, 180)`.
    pub fn new(lat: f64, lon: f64) -> Result<Self, RepoError> {
        if !(lat.is_finite() && (-90.0..=90.0).contains(&lat)) {
            return Err(RepoError::Invalid(format!("latitude {lat}")));
        }
        if !(lon.is_finite() && (-180.0..=180.0).contains(&lon)) {
            return Err(RepoError::Invalid(format!("longitude {lon}")));
        }
        Ok(Self { lat, lon: normalize_lon(lon) })
    }

    pub fn validate(&self) -> Result<(), RepoError> {
        let p = Self::new(self.lat, self.lon)?;
        if p.lon != self.lon {
            return Err(RepoError::Invalid(format!("longitude {} not normalized", self.lon)));
        }
        Ok(())
    }

    fn unit_vector(&self) -> [f64; 3] {
        let (lat, lon) = (self.lat.to_radians(), self.lon.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    }

    /// Great-circle distance (haversine) in kilometres.
    pub fn distance_km(&self, other: &GeoPoint) -> f64 {
        let (p1, p2) = (self.lat.to_radians(), other.lat.to_radians());
        let dp = p2 - p1;
        let dl = (other.lon - self.lon).to_radians();
        let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
    }

    pub fn distance_m(&self, other: &GeoPoint) -> f64 {
        self.distance_km(other) * 1000.0
    }

    /// Initial great-circle bearing towards `other`, degrees clockwise from north in `[0, 360)`.
    pub fn bearing_to(&self, other: &GeoPoint) -> f64 {
        let (p1, p2) = (self.lat.to_radians(), other.lat.to_radians());
        let dl = (other.lon - self.lon).to_radians();
        let y = dl.sin() * p2.cos();
        let x = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos();
        y.atan2(x).to_degrees().rem_euclid(360.0)
    }

    /// Point reached after travelling `distance_m` along `bearing_deg`.
    pub fn destination(&self, bearing_deg: f64, distance_m: f64) -> GeoPoint {
        let d = distance_m / 1000.0 / EARTH_RADIUS_KM;
        let (p1, l1, b) = (self.lat.to_radians(), self.lon.to_radians(), bearing_deg.to_radians());
        let p2 = (p1.sin() * d.cos() + p1.cos() * d.sin() * b.cos()).asin();
        let l2 = l1 + (b.sin() * d.sin() * p1.cos()).atan2(d.cos() - p1.sin() * p2.sin());
        GeoPoint { lat: p2.to_degrees(), lon: normalize_lon(l2.to_degrees()) }
    }
}

/// Wraps a longitude into `[-180, 180)`.
pub fn normalize_lon(lon: f64) -> f64 {
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if wrapped >= 180.0 {
        -180.0
    } else {
        wrapped
    }
}

/// Spherical mean: normalized mean of unit vectors, so clusters straddling
/// the antimeridian average correctly. `None` when the points cancel out.
pub fn spherical_centroid<'a>(points: impl IntoIterator<Item = &'a GeoPoint>) -> Option<GeoPoint> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for p in points {
        let v = p.unit_vector();
        sum.iter_mut().zip(v).for_each(|(s, c)| *s += c);
        n += 1;
    }
    let norm = (sum[0] * sum[0] + sum[1] * sum[1] + sum[2] * sum[2]).sqrt();
    if n == 0 || norm < 1e-12 * n as f64 {
        return None;
    }
    let [x, y, z] = sum.map(|c| c / norm);
    Some(GeoPoint { lat: z.clamp(-1.0, 1.0).asin().to_degrees(), lon: normalize_lon(y.atan2(x).to_degrees()) })
}

/// Latitude/longitude box. `west > east` denotes a box crossing the antimeridian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
}

impl BBox {
    /// Box spanned by its south-west and north-east corners.
    pub fn new(south_west: GeoPoint, north_east: GeoPoint) -> Result<Self, RepoError> {
        south_west.validate()?;
        north_east.validate()?;
        if south_west.lat >= north_east.lat {
            return Err(RepoError::InvalidRange(format!(
                "south {} not below north {}",
                south_west.lat, north_east.lat
            )));
        }
        if south_west.lon == north_east.lon {
            return Err(RepoError::InvalidRange("zero-width box".into()));
        }
        Ok(Self { south: south_west.lat, west: south_west.lon, north: north_east.lat, east: north_east.lon })
    }

    pub fn globe() -> Self {
        Self { south: -90.0, west: -180.0, north: 90.0, east: 180.0 }
    }

    /// Box around `center` reaching at least `radius_m` in every direction.
    pub fn around(center: &GeoPoint, radius_m: f64) -> Self {
        let dlat = (radius_m / 1000.0 / EARTH_RADIUS_KM).to_degrees();
        let south = (center.lat - dlat).max(-90.0);
        let north = (center.lat + dlat).min(90.0);
        let max_abs_lat = south.abs().max(north.abs());
        if max_abs_lat >= 89.999 {
            return Self { south, west: -180.0, north, east: 180.0 };
        }
        let dlon = dlat / max_abs_lat.to_radians().cos();
        if dlon >= 180.0 {
            return Self { south, west: -180.0, north, east: 180.0 };
        }
        Self { south, west: normalize_lon(center.lon - dlon), north, east: normalize_lon(center.lon + dlon) }
    }

    pub fn crosses_antimeridian(&self) -> bool {
        self.west > self.east
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        if p.lat < self.south || p.lat > self.north {
            return false;
        }
        if self.crosses_antimeridian() {
            p.lon >= self.west || p.lon <= self.east
        } else {
            p.lon >= self.west && p.lon <= self.east
        }
    }

    /// Conservative intersection test against a latitude/longitude rectangle.
    fn intersects(&self, south: f64, west: f64, north: f64, east: f64) -> bool {
        const EPS: f64 = 1e-9;
        if north < self.south - EPS || south > self.north + EPS {
            return false;
        }
        if self.crosses_antimeridian() {
            east >= self.west - EPS || west <= self.east + EPS
        } else {
            east >= self.west - EPS && west <= self.east + EPS
        }
    }
}

/// Half-open time interval `[from, to)`; a missing bound is unbounded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl TimeRange {
    pub fn new(from: Option<DateTime<Utc>>, to: Option<DateTime<Utc>>) -> Result<Self, RepoError> {
        if let (Some(f), Some(t)) = (from, to) {
            if f > t {
                return Err(RepoError::InvalidRange(format!("time range {f} after {t}")));
            }
        }
        Ok(Self { from, to })
    }

    pub fn all() -> Self {
        Self::default()
    }

    pub fn contains(&self, t: &DateTime<Utc>) -> bool {
        self.from.is_none_or(|f| *t >= f) && self.to.is_none_or(|e| *t < e)
    }

    /// The same window moved by `delta`.
    pub fn shifted(&self, delta: chrono::Duration) -> Self {
        Self { from: self.from.map(|f| f + delta), to: self.to.map(|t| t + delta) }
    }
}

/// Web-Mercator tile address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileKey {
    pub zoom: u8,
    pub x: u32,
    pub y: u32,
}

impl TileKey {
    pub fn new(zoom: u8, x: u32, y: u32) -> Result<Self, RepoError> {
        let key = Self { zoom, x, y };
        if zoom > MAX_ZOOM {
            return Err(RepoError::InvalidZoom(zoom));
        }
        if x >= 1 << zoom || y >= 1 << zoom {
            return Err(RepoError::InvalidTile(key));
        }
        Ok(key)
    }

    pub fn root() -> Self {
        Self { zoom: 0, x: 0, y: 0 }
    }

    /// Tile containing `p`; latitudes beyond the projection limit land in the edge rows.
    pub fn for_point(p: &GeoPoint, zoom: u8) -> Self {
        let n = (1u64 << zoom) as f64;
        let lat = p.lat.clamp(-MERCATOR_MAX_LAT, MERCATOR_MAX_LAT).to_radians();
        let x = ((p.lon + 180.0) / 360.0 * n).floor();
        let y = ((1.0 - (lat.tan() + 1.0 / lat.cos()).ln() / PI) / 2.0 * n).floor();
        let max = (1u32 << zoom) - 1;
        Self { zoom, x: (x.max(0.0) as u32).min(max), y: (y.max(0.0) as u32).min(max) }
    }

    pub fn parent(&self) -> Option<Self> {
        (self.zoom > 0).then(|| Self { zoom: self.zoom - 1, x: self.x / 2, y: self.y / 2 })
    }

    pub fn children(&self) -> [Self; 4] {
        let (z, x, y) = (self.zoom + 1, self.x * 2, self.y * 2);
        [
            Self { zoom: z, x, y },
            Self { zoom: z, x: x + 1, y },
            Self { zoom: z, x, y: y + 1 },
            Self { zoom: z, x: x + 1, y: y + 1 },
        ]
    }

    /// Ancestor (or self) at `zoom`.
    pub fn at_zoom(&self, zoom: u8) -> Self {
        debug_assert!(zoom <= self.zoom);
        let shift = self.zoom - zoom;
        Self { zoom, x: self.x >> shift, y: self.y >> shift }
    }

    /// Morton-interleaved quadkey; a tile's descendants at depth `MAX_ZOOM`
    /// occupy the contiguous range [`Self::leaf_range`].
    pub fn quadkey(&self) -> u64 {
        let mut key = 0u64;
        for bit in (0..self.zoom).rev() {
            let digit = (((self.y >> bit) & 1) << 1) | ((self.x >> bit) & 1);
            key = (key << 2) | digit as u64;
        }
        key
    }

    pub fn from_quadkey(zoom: u8, key: u64) -> Self {
        let (mut x, mut y) = (0u32, 0u32);
        for level in 0..zoom {
            let digit = (key >> (2 * (zoom - 1 - level))) & 3;
            x = (x << 1) | (digit & 1) as u32;
            y = (y << 1) | (digit >> 1) as u32;
        }
        Self { zoom, x, y }
    }

    /// Half-open range of `MAX_ZOOM` quadkeys under this tile.
    pub fn leaf_range(&self) -> std::ops::Range<u64> {
        let shift = 2 * (MAX_ZOOM - self.zoom) as u32;
        (self.quadkey() << shift)..((self.quadkey() + 1) << shift)
    }

    /// `(south, west, north, east)` in degrees; edge rows extend to the poles.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let n = (1u64 << self.zoom) as f64;
        let lon = |x: f64| x / n * 360.0 - 180.0;
        let lat = |y: f64| (PI * (1.0 - 2.0 * y / n)).sinh().atan().to_degrees();
        let north = if self.y == 0 { 90.0 } else { lat(self.y as f64) };
        let south = if self.y + 1 == 1 << self.zoom { -90.0 } else { lat(self.y as f64 + 1.0) };
        (south, lon(self.x as f64), north, lon(self.x as f64 + 1.0))
    }
}

/// Stable identifier of a stored detection.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetectionId(pub String);

impl std::fmt::Display for DetectionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// One accepted, classified, geo/time-stamped observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: DetectionId,
    pub species_id: SpeciesId,
    pub confidence: f64,
    pub timestamp: DateTime<Utc>,
    pub geo: GeoPoint,
    pub annotation: Annotation,
    pub clip_ref: ClipRef,
    pub submitter: String,
}

impl Detection {
    /// Content-derived id of a `(submitter, clip, annotation)` triple.
    pub fn derive_id(submitter: &str, clip_ref: &ClipRef, annotation: &Annotation) -> DetectionId {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(submitter.as_bytes());
        h.update([0]);
        h.update(clip_ref.as_str().as_bytes());
        h.update([0]);
        for v in [annotation.start_s, annotation.end_s, annotation.fmin_hz.unwrap_or(-1.0), annotation.fmax_hz.unwrap_or(-1.0)] {
            h.update(v.to_bits().to_le_bytes());
        }
        DetectionId(hex::encode(&h.finalize()[..16]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn longitude_normalization() {
        assert_eq!(GeoPoint::new(0.0, 180.0).unwrap().lon, -180.0);
        assert_eq!(GeoPoint::new(0.0, -180.0).unwrap().lon, -180.0);
        assert_eq!(normalize_lon(190.0), -170.0);
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, 181.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn one_degree_on_equator() {
        let d = GeoPoint::new(0.0, 0.0).unwrap().distance_km(&GeoPoint::new(0.0, 1.0).unwrap());
        assert!((d - 111.195).abs() < 0.01, "{d}");
    }

    #[test]
    fn bearing_due_east_and_north() {
        let a = GeoPoint::new(47.0, 8.0).unwrap();
        assert!((a.bearing_to(&a.destination(90.0, 200.0)) - 90.0).abs() < 1e-3);
        assert!(a.bearing_to(&GeoPoint::new(48.0, 8.0).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn centroid_across_antimeridian() {
        let pts = [GeoPoint::new(10.0, 179.0).unwrap(), GeoPoint::new(10.0, -179.0).unwrap()];
        let c = spherical_centroid(&pts).unwrap();
        assert!((c.lon.abs() - 180.0).abs() < 1e-9, "{c:?}");
        assert!((c.lat - 10.0).abs() < 0.01);
        let sym = [GeoPoint::new(1.0, 5.0).unwrap(), GeoPoint::new(-1.0, 5.0).unwrap()];
        let c = spherical_centroid(&sym).unwrap();
        assert!(c.lat.abs() < 1e-12 && (c.lon - 5.0).abs() < 1e-12);
    }

    #[test]
    fn tile_math() {
        let p = GeoPoint::new(51.5, -0.12).unwrap();
        let t = TileKey::for_point(&p, 10);
        assert_eq!((t.x, t.y), (511, 340));
        assert_eq!(TileKey::for_point(&p, 0), TileKey::root());
        assert!(TileKey::new(2, 4, 0).is_err());
        assert!(TileKey::new(19, 0, 0).is_err());
        let (s, w, n, e) = t.bounds();
        assert!(p.lat >= s && p.lat <= n && p.lon >= w && p.lon <= e);
        let pole = TileKey::for_point(&GeoPoint::new(90.0, 0.0).unwrap(), 5);
        assert_eq!(pole.y, 0);
    }

    #[test]
    fn bbox_rules() {
        let sw = GeoPoint::new(10.0, 170.0).unwrap();
        let ne = GeoPoint::new(20.0, -170.0).unwrap();
        let b = BBox::new(sw, ne).unwrap();
        assert!(b.contains(&GeoPoint::new(15.0, 175.0).unwrap()));
        assert!(b.contains(&GeoPoint::new(15.0, -175.0).unwrap()));
        assert!(!b.contains(&GeoPoint::new(15.0, 0.0).unwrap()));
        assert!(BBox::new(ne, sw).is_err());
        let t = TimeRange::new(Some(Utc::now()), Some(Utc::now() - chrono::Duration::hours(1)));
        assert!(t.is_err());
    }

    proptest! {
        #[test]
        fn quadkey_round_trip_and_nesting(lat in -89.0f64..89.0, lon in -180.0f64..179.999, zoom in 0u8..=18) {
            let p = GeoPoint::new(lat, lon).unwrap();
            let leaf = TileKey::for_point(&p, MAX_ZOOM);
            let t = TileKey::for_point(&p, zoom);
            prop_assert_eq!(TileKey::from_quadkey(zoom, t.quadkey()), t);
            prop_assert_eq!(leaf.at_zoom(zoom), t);
            prop_assert!(t.leaf_range().contains(&leaf.quadkey()));
        }
    }
}
