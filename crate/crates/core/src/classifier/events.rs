use super::{ClassificationResult, ClassifierError};
use crate::audio::Annotation;
use crate::SpeciesId;

/// Turns frame-wise scores of one species into call annotations.
///
/// Maximal runs of window starts scoring at least `threshold` become intervals
/// from the first window's start to the last window's end. Overlapping
/// intervals are merged, and intervals shorter than `min_duration_s` are
/// dropped. The output is sorted and pairwise disjoint.
pub fn detect_events(
    result: &ClassificationResult,
    species: &SpeciesId,
    threshold: f64,
    min_duration_s: f64,
) -> Result<Vec<Annotation>, ClassifierError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ClassifierError::InvalidParameter(format!("threshold {threshold} outside [0, 1]")));
    }
    if min_duration_s.is_nan() || min_duration_s < 0.0 {
        return Err(ClassifierError::InvalidParameter(format!("minimum duration {min_duration_s}")));
    }
    let frames = result
        .frame_scores
        .as_ref()
        .ok_or_else(|| ClassifierError::InvalidParameter("result carries no frame scores".into()))?;
    let column = frames.column(species).ok_or_else(|| ClassifierError::UnknownSpecies(species.clone()))?;

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut open: Option<usize> = None;
    for (t, &s) in column.iter().enumerate() {
        match (s >= threshold, open) {
            (true, None) => open = Some(t),
            (false, Some(start)) => {
                runs.push((start, t - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        runs.push((start, column.len() - 1));
    }

    let mut merged: Vec<Annotation> = Vec::new();
    for (a, b) in runs {
        let start = a as f64 * frames.hop_s;
        let end = (b as f64 * frames.hop_s + frames.window_s).min(frames.clip_duration_s.max(start));
        match merged.last_mut() {
            Some(prev) if start <= prev.end_s => prev.end_s = prev.end_s.max(end),
            _ => merged.push(Annotation::new(start, end)),
        }
    }
    merged.retain(|e| e.duration_s() >= min_duration_s && e.end_s > e.start_s);
    Ok(merged)
}
