use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::{
    build_trajectory, BBox, ClipRef, ClipStore, Detection, DetectionId, RepoError, TileKey, TimeRange, Trajectory,
    MAX_ZOOM,
};
use crate::SpeciesId;

const SNAPSHOT_FORMAT: u32 = 1;
const LOG_FILE: &str = "detections.log";
const SNAPSHOT_FILE: &str = "snapshot.json";
/// A quadtree node with at most this many entries is scanned instead of split.
const LEAF_CAPACITY: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepoConfig {
    /// Minimum confidence of an accepted detection.
    pub acceptance_threshold: f64,
    /// Tolerated client clock lead when checking that timestamps are not in the future.
    pub clock_skew_s: i64,
    /// Log entries between automatic snapshots (0 disables them).
    pub snapshot_every: usize,
    /// `fsync` after every log append.
    pub fsync: bool,
}

impl Default for RepoConfig {
    fn default() -> Self {
        Self { acceptance_threshold: 0.65, clock_skew_s: 300, snapshot_every: 1000, fsync: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertOutcome {
    pub id: DetectionId,
    /// `false` when an identical triple was already stored.
    pub created: bool,
}

/// Anything that can answer whether the species sound bank is unlocked.
pub trait BankAccess {
    fn bank_unlocked(&self) -> bool;
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: u32,
    /// Number of log lines already folded into `detections`.
    log_entries: usize,
    detections: Vec<Detection>,
}

#[derive(Default)]
struct State {
    detections: Vec<Detection>,
    leaf: Vec<u64>,
    by_id: HashMap<DetectionId, usize>,
    /// Linear quadtree: `(zoom-18 quadkey, detection index)`.
    index: BTreeSet<(u64, usize)>,
    log: Option<File>,
    log_entries: usize,
    since_snapshot: usize,
}

impl State {
    fn push(&mut self, d: Detection) -> usize {
        let i = self.detections.len();
        let key = TileKey::for_point(&d.geo, MAX_ZOOM).quadkey();
        self.by_id.insert(d.id.clone(), i);
        self.index.insert((key, i));
        self.leaf.push(key);
        self.detections.push(d);
        i
    }

    fn tile_entries(&self, tile: &TileKey) -> impl Iterator<Item = usize> + '_ {
        let r = tile.leaf_range();
        self.index.range((r.start, 0)..(r.end, 0)).map(|&(_, i)| i)
    }

    fn collect(&self, tile: TileKey, bbox: &BBox, out: &mut Vec<usize>) {
        let (s, w, n, e) = tile.bounds();
        if !bbox.intersects(s, w, n, e) {
            return;
        }
        if tile.zoom == MAX_ZOOM || self.tile_entries(&tile).nth(LEAF_CAPACITY).is_none() {
            out.extend(self.tile_entries(&tile).filter(|&i| bbox.contains(&self.detections[i].geo)));
            return;
        }
        for child in tile.children() {
            self.collect(child, bbox, out);
        }
    }
}

/// Detection store with a single serialized writer and concurrent readers.
pub struct Repository {
    config: RepoConfig,
    dir: Option<PathBuf>,
    clips: ClipStore,
    state: RwLock<State>,
}

impl Repository {
    pub fn in_memory(config: RepoConfig) -> Self {
        Self { config, dir: None, clips: ClipStore::memory(), state: RwLock::default() }
    }

    /// Opens (or creates) a store below `dir`, replaying the snapshot and the log.
    pub fn open(dir: &Path, config: RepoConfig) -> Result<Self, RepoError> {
        fs::create_dir_all(dir)?;
        let clips = ClipStore::disk(dir)?;
        let mut state = State::default();
        let snapshot_path = dir.join(SNAPSHOT_FILE);
        let mut covered = 0;
        if snapshot_path.exists() {
            let snap: Snapshot = serde_json::from_slice(&fs::read(&snapshot_path)?)
                .map_err(|e| RepoError::Corrupt(format!("{SNAPSHOT_FILE}: {e}")))?;
            if snap.format != SNAPSHOT_FORMAT {
                return Err(RepoError::Corrupt(format!("unsupported snapshot format {}", snap.format)));
            }
            covered = snap.log_entries;
            for d in snap.detections {
                state.push(d);
            }
        }

        let log_path = dir.join(LOG_FILE);
        let mut log = OpenOptions::new().create(true).read(true).append(true).open(&log_path)?;
        let (lines, valid_len) = read_log(&log)?;
        if valid_len < log.metadata()?.len() {
            // torn trailing write from a crash: drop it before appending again
            log.set_len(valid_len)?;
        }
        log.seek(SeekFrom::End(0))?;
        if lines.len() < covered {
            return Err(RepoError::Corrupt(format!("snapshot covers {covered} log entries, log has {}", lines.len())));
        }
        let total = lines.len();
        for d in lines.into_iter().skip(covered) {
            if !state.by_id.contains_key(&d.id) {
                state.push(d);
            }
        }
        state.log_entries = total;
        state.log = Some(log);
        Ok(Self { config, dir: Some(dir.to_owned()), clips, state: RwLock::new(state) })
    }

    pub fn config(&self) -> &RepoConfig {
        &self.config
    }

    pub fn clips(&self) -> &ClipStore {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.read().detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn read(&self) -> RwLockReadGuard<'_, State> {
        self.state.read().expect("repository lock poisoned")
    }

    fn write(&self) -> RwLockWriteGuard<'_, State> {
        self.state.write().expect("repository lock poisoned")
    }

    /// Checks the detection invariants against the clock value `now`.
    pub fn validate(&self, d: &Detection, now: DateTime<Utc>) -> Result<(), RepoError> {
        let invalid = |m: String| Err(RepoError::Invalid(m));
        d.geo.validate()?;
        if !(d.confidence.is_finite() && (0.0..=1.0).contains(&d.confidence)) {
            return invalid(format!("confidence {} outside [0, 1]", d.confidence));
        }
        if d.confidence < self.config.acceptance_threshold {
            return invalid(format!(
                "confidence {} below acceptance threshold {}",
                d.confidence, self.config.acceptance_threshold
            ));
        }
        if d.timestamp > now + Duration::seconds(self.config.clock_skew_s) {
            return invalid(format!("timestamp {} lies in the future", d.timestamp));
        }
        let a = &d.annotation;
        if !(a.start_s.is_finite() && a.end_s.is_finite() && a.start_s >= 0.0 && a.end_s > a.start_s) {
            return invalid(format!("annotation [{}, {}] is not a forward span", a.start_s, a.end_s));
        }
        if d.submitter.is_empty() || d.species_id.as_str().is_empty() {
            return invalid("empty submitter or species".into());
        }
        if d.id != Detection::derive_id(&d.submitter, &d.clip_ref, &d.annotation) {
            return invalid("id does not match its content".into());
        }
        if !self.clips.contains(&d.clip_ref) {
            return Err(RepoError::MissingClip(d.clip_ref.clone()));
        }
        Ok(())
    }

    pub fn insert(&self, d: Detection) -> Result<InsertOutcome, RepoError> {
        self.insert_at(d, Utc::now())
    }

    /// Inserts with an explicit clock value. Identical triples return the stored id.
    pub fn insert_at(&self, d: Detection, now: DateTime<Utc>) -> Result<InsertOutcome, RepoError> {
        let mut st = self.write();
        if st.by_id.contains_key(&d.id) {
            return Ok(InsertOutcome { id: d.id, created: false });
        }
        self.validate(&d, now)?;
        if let Some(log) = st.log.as_mut() {
            let mut line = serde_json::to_vec(&d).map_err(|e| RepoError::Corrupt(e.to_string()))?;
            line.push(b'\n');
            log.write_all(&line)?;
            log.flush()?;
            if self.config.fsync {
                log.sync_data()?;
            }
            st.log_entries += 1;
            st.since_snapshot += 1;
        }
        let id = d.id.clone();
        st.push(d);
        if self.config.snapshot_every > 0 && st.since_snapshot >= self.config.snapshot_every {
            self.write_snapshot(&mut st)?;
        }
        Ok(InsertOutcome { id, created: true })
    }

    /// Writes `snapshot.json` now (no-op for in-memory stores).
    pub fn snapshot(&self) -> Result<(), RepoError> {
        let mut st = self.write();
        self.write_snapshot(&mut st)
    }

    fn write_snapshot(&self, st: &mut State) -> Result<(), RepoError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        if let Some(log) = st.log.as_mut() {
            log.sync_data()?;
        }
        #[derive(Serialize)]
        struct SnapshotRef<'a> {
            format: u32,
            log_entries: usize,
            detections: &'a [Detection],
        }
        let body = serde_json::to_vec(&SnapshotRef {
            format: SNAPSHOT_FORMAT,
            log_entries: st.log_entries,
            detections: &st.detections,
        })
        .map_err(|e| RepoError::Corrupt(e.to_string()))?;
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let mut f = File::create(&tmp)?;
        f.write_all(&body)?;
        f.sync_all()?;
        fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
        st.since_snapshot = 0;
        Ok(())
    }

    pub fn get(&self, id: &DetectionId) -> Option<Detection> {
        let st = self.read();
        st.by_id.get(id).map(|&i| st.detections[i].clone())
    }

    /// Detections inside `bbox ∩ range` (optionally one species), sorted by timestamp then id.
    pub fn query(&self, bbox: &BBox, range: &TimeRange, species: Option<&SpeciesId>) -> Vec<Detection> {
        let st = self.read();
        let mut hits = Vec::new();
        st.collect(TileKey::root(), bbox, &mut hits);
        let mut out: Vec<Detection> = hits
            .into_iter()
            .map(|i| &st.detections[i])
            .filter(|d| range.contains(&d.timestamp) && species.is_none_or(|s| &d.species_id == s))
            .cloned()
            .collect();
        out.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
        out
    }

    /// Matching detections per tile at `zoom`; only nonzero tiles are listed.
    pub fn tile_counts(
        &self,
        zoom: u8,
        bbox: &BBox,
        range: &TimeRange,
        species: Option<&SpeciesId>,
    ) -> Result<BTreeMap<TileKey, usize>, RepoError> {
        if zoom > MAX_ZOOM {
            return Err(RepoError::InvalidZoom(zoom));
        }
        let st = self.read();
        let mut hits = Vec::new();
        st.collect(TileKey::root(), bbox, &mut hits);
        let shift = 2 * (MAX_ZOOM - zoom) as u32;
        let mut counts = BTreeMap::new();
        for i in hits {
            let d = &st.detections[i];
            if range.contains(&d.timestamp) && species.is_none_or(|s| &d.species_id == s) {
                *counts.entry(TileKey::from_quadkey(zoom, st.leaf[i] >> shift)).or_insert(0) += 1;
            }
        }
        Ok(counts)
    }

    /// Per-species counts of the detections located in `tile`.
    pub fn tile_species_counts(
        &self,
        tile: &TileKey,
        range: &TimeRange,
        species: Option<&SpeciesId>,
    ) -> Result<BTreeMap<SpeciesId, usize>, RepoError> {
        TileKey::new(tile.zoom, tile.x, tile.y)?;
        let st = self.read();
        let mut counts = BTreeMap::new();
        for i in st.tile_entries(tile) {
            let d = &st.detections[i];
            if range.contains(&d.timestamp) && species.is_none_or(|s| &d.species_id == s) {
                *counts.entry(d.species_id.clone()).or_insert(0) += 1;
            }
        }
        Ok(counts)
    }

    /// Migratory trajectory of a species; empty when nothing matches.
    pub fn trajectory(&self, species: &SpeciesId, range: &TimeRange, bucket: Duration) -> Result<Trajectory, RepoError> {
        let detections = self.query(&BBox::globe(), range, Some(species));
        build_trajectory(species.clone(), &detections, bucket)
    }

    /// All stored clips of a species, for profiles holding the unlocking badge.
    pub fn species_bank(&self, species: &SpeciesId, access: &impl BankAccess) -> Result<Vec<ClipRef>, RepoError> {
        if !access.bank_unlocked() {
            return Err(RepoError::AccessDenied);
        }
        let st = self.read();
        let refs: BTreeSet<ClipRef> =
            st.detections.iter().filter(|d| &d.species_id == species).map(|d| d.clip_ref.clone()).collect();
        Ok(refs.into_iter().collect())
    }

    /// Every stored detection in insertion order.
    pub fn all(&self) -> Vec<Detection> {
        self.read().detections.clone()
    }

    /// Distinct species with at least one detection.
    pub fn species(&self) -> Vec<SpeciesId> {
        let st = self.read();
        let set: BTreeSet<&SpeciesId> = st.detections.iter().map(|d| &d.species_id).collect();
        set.into_iter().cloned().collect()
    }
}

impl Drop for Repository {
    fn drop(&mut self) {
        if let Ok(mut st) = self.state.write() {
            if st.since_snapshot > 0 {
                let _ = self.write_snapshot(&mut st);
            }
        }
    }
}

/// Parsed log entries and the byte length of the well-formed prefix.
/// Only an unterminated final line may fail to parse.
fn read_log(file: &File) -> Result<(Vec<Detection>, u64), RepoError> {
    let mut reader = BufReader::new(file.try_clone()?);
    reader.seek(SeekFrom::Start(0))?;
    let mut out = Vec::new();
    let mut valid = 0u64;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        let terminated = buf.last() == Some(&b'\n');
        match serde_json::from_slice::<Detection>(&buf) {
            Ok(d) if terminated => {
                out.push(d);
                valid += n as u64;
            }
            Ok(_) => break,
            Err(_) if !terminated => break,
            Err(e) => return Err(RepoError::Corrupt(format!("{LOG_FILE} entry {}: {e}", out.len() + 1))),
        }
    }
    Ok((out, valid))
}
