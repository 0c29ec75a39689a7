//! Species recognition by normalized cross-correlation against mel templates.
//!
//! A [`SpeciesTemplate`] is the mean of standardized, time-normalized mel
//! patches cut from annotated recordings. Scoring slides the template over a
//! spectrogram and maps the best Pearson correlation `r` to `(r + 1) / 2`.

mod eval;
mod events;
mod recognize;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{band_pass, mel_spectrogram, wav, Annotation, AudioClip, DspError, MelSpectrogram, SpectralConfig};
use crate::SpeciesId;

pub use eval::{evaluate, EvalReport, SpeciesAp};
pub use events::detect_events;
pub use recognize::{
    FeatureEndpoint, RecognitionMode, Recognizer, ServiceRequest, ServiceResponse, TemplateSet,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("no training clips for {0}")]
    NoTrainingClips(SpeciesId),
    #[error("no templates loaded")]
    NoTemplates,
    #[error("template shape {found:?} does not match configured {expected:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{predictions} predictions for {truth} labels")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("unknown species {0}")]
    UnknownSpecies(SpeciesId),
    #[error("recognition unavailable: {0}")]
    RecognitionUnavailable(String),
    #[error("malformed service payload: {0}")]
    MalformedPayload(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub spectral: SpectralConfig,
    /// Rate every clip is resampled to before analysis.
    pub analysis_rate: u32,
    /// Template length in seconds; converted to whole frames.
    pub template_seconds: f64,
    /// Minimum top-1 score for a submission to become a detection.
    pub acceptance_threshold: f64,
    /// Band-pass each clip to `[fmin, fmax]` before the short-time analysis.
    pub band_pass: bool,
    /// Subtract each mel bin's median over the clip and clip at zero, so
    /// stationary background carries no weight in the match.
    #[serde(default = "enabled")]
    pub noise_floor: bool,
    /// Length of the moving average applied along time after the noise
    /// floor step, in seconds; 0 disables it.
    #[serde(default)]
    pub smoothing_s: f64,
}

fn enabled() -> bool {
    true
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            spectral: SpectralConfig::default(),
            analysis_rate: wav::ANALYSIS_RATE,
            template_seconds: 1.0,
            acceptance_threshold: 0.65,
            band_pass: true,
            noise_floor: true,
            smoothing_s: 0.25,
        }
    }
}

impl ClassifierConfig {
    /// Frames whose windows fit inside `template_seconds` of audio.
    pub fn template_frames(&self) -> usize {
        let samples = (self.template_seconds * self.analysis_rate as f64).round() as usize;
        self.spectral.frame_count(samples).max(1)
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        self.spectral.validate(self.analysis_rate)?;
        if !(self.template_seconds > 0.0 && self.template_seconds.is_finite()) {
            return Err(ClassifierError::InvalidParameter("template length must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.acceptance_threshold) {
            return Err(ClassifierError::InvalidParameter("threshold outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Mean standardized mel patch of one species.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesTemplate {
    pub species_id: SpeciesId,
    pub frames: usize,
    pub mel_bins: usize,
    /// Row-major `frames × mel_bins`.
    pub values: Vec<f64>,
    /// Frequency band (Hz) of the training annotations.
    pub band: (f64, f64),
    pub training_clip_count: usize,
}

impl SpeciesTemplate {
    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.values[frame * self.mel_bins + bin]
    }

    /// Mel band with the largest mean template value.
    pub fn dominant_bin(&self) -> usize {
        (0..self.mel_bins)
            .map(|b| (b, (0..self.frames).map(|t| self.get(t, b)).sum::<f64>()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map_or(0, |(b, _)| b)
    }

    fn check(&self, config: &ClassifierConfig) -> Result<(), ClassifierError> {
        let expected = (config.template_frames(), config.spectral.mel_bins);
        let found = (self.frames, self.mel_bins);
        if expected != found || self.values.len() != self.frames * self.mel_bins {
            return Err(ClassifierError::ShapeMismatch { expected, found });
        }
        if self.training_clip_count == 0 || self.values.iter().any(|v| !v.is_finite()) {
            return Err(ClassifierError::InvalidParameter(format!("template {} is degenerate", self.species_id)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    ClipWise,
    FrameWise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSpecies {
    pub species_id: SpeciesId,
    pub score: f64,
}

/// Per-frame window scores. Row `t` holds, for each species column, the score
/// of the window starting at frame `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub species: Vec<SpeciesId>,
    pub rows: Vec<Vec<f64>>,
    /// Seconds between window starts.
    pub hop_s: f64,
    /// Seconds of audio covered by one window.
    pub window_s: f64,
    /// Duration of the analysed clip.
    pub clip_duration_s: f64,
}

impl FrameScores {
    pub fn column(&self, species: &SpeciesId) -> Option<Vec<f64>> {
        let c = self.species.iter().position(|s| s == species)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    /// Species sorted by descending score, ties by ascending id.
    pub ranking: Vec<RankedSpecies>,
    pub mode: InferenceMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_scores: Option<FrameScores>,
    /// Set when service recognition failed and the local classifier answered.
    #[serde(default)]
    pub fallback: bool,
}

impl ClassificationResult {
    pub fn top(&self) -> Option<&RankedSpecies> {
        self.ranking.first()
    }

    pub fn score_of(&self, species: &SpeciesId) -> Option<f64> {
        self.ranking.iter().find(|r| &r.species_id == species).map(|r| r.score)
    }

    /// Checks ordering and score range; used on results received from clients.
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.ranking.iter().any(|r| !(0.0..=1.0).contains(&r.score)) {
            return Err(ClassifierError::InvalidParameter("score outside [0, 1]".into()));
        }
        let sorted = self.ranking.windows(2).all(|w| rank_order(&w[0], &w[1]) != Ordering::Greater);
        if !sorted {
            return Err(ClassifierError::InvalidParameter("ranking not sorted".into()));
        }
        Ok(())
    }
}

pub(crate) fn rank_order(a: &RankedSpecies, b: &RankedSpecies) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.species_id.cmp(&b.species_id))
}

pub(crate) fn rank(mut ranking: Vec<RankedSpecies>) -> Vec<RankedSpecies> {
    ranking.sort_by(rank_order);
    ranking
}

/// Pre-processing and template matching bound to one [`ClassifierConfig`].
#[derive(Clone, Debug)]
pub struct Classifier {
    config: ClassifierConfig,
}

impl Classifier {
    pub fn new(config: ClassifierConfig) -> Result<Self, ClassifierError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    /// Downmix, resample to the analysis rate, optional band-pass, then mel analysis.
    pub fn features(&self, clip: &AudioClip) -> Result<MelSpectrogram, ClassifierError> {
        let mono = clip.downmix().resample(self.config.analysis_rate)?;
        let spectral = &self.config.spectral;
        let filtered = if self.config.band_pass {
            band_pass(&mono, spectral.fmin, spectral.fmax)?
        } else {
            mono
        };
        // short inputs are zero-padded to one analysis window
        let padded = if filtered.frames() < spectral.window_length {
            let mut s = filtered.samples().to_vec();
            s.resize(spectral.window_length, 0.0);
            AudioClip::mono(s, filtered.sample_rate())?
        } else {
            filtered
        };
        let mel = mel_spectrogram(&padded, spectral)?;
        let mel = if self.config.noise_floor { subtract_noise_floor(&mel)? } else { mel };
        let width = (self.config.smoothing_s / mel.hop_s()).round() as usize;
        Ok(if width > 1 { smooth_frames(&mel, width)? } else { mel })
    }

    /// Builds a template from annotated clips of one species.
    pub fn build_template(
        &self,
        species_id: SpeciesId,
        clips: &[(AudioClip, Annotation)],
    ) -> Result<SpeciesTemplate, ClassifierError> {
        if clips.is_empty() {
            return Err(ClassifierError::NoTrainingClips(species_id));
        }
        let frames = self.config.template_frames();
        let bins = self.config.spectral.mel_bins;
        let mut sum = vec![0.0; frames * bins];
        let mut band = (f64::INFINITY, f64::NEG_INFINITY);
        for (clip, annotation) in clips {
            annotation.validate(clip.duration_s())?;
            let mel = self.features(clip)?;
            let patch = standardize(resample_frames(&annotated_rows(&mel, annotation), bins, frames));
            sum.iter_mut().zip(&patch).for_each(|(s, p)| *s += p);
            band.0 = band.0.min(annotation.fmin_hz.unwrap_or(self.config.spectral.fmin));
            band.1 = band.1.max(annotation.fmax_hz.unwrap_or(self.config.spectral.fmax));
        }
        let n = clips.len() as f64;
        Ok(SpeciesTemplate {
            species_id,
            frames,
            mel_bins: bins,
            values: sum.into_iter().map(|v| v / n).collect(),
            band,
            training_clip_count: clips.len(),
        })
    }

    /// Clip-wise inference: best window score per template.
    pub fn classify_clip(
        &self,
        mel: &MelSpectrogram,
        templates: &[SpeciesTemplate],
    ) -> Result<ClassificationResult, ClassifierError> {
        let scores = self.window_scores(mel, templates)?;
        let ranking = templates
            .iter()
            .zip(&scores)
            .map(|(t, s)| RankedSpecies { species_id: t.species_id.clone(), score: column_max(s) })
            .collect();
        Ok(ClassificationResult { ranking: rank(ranking), mode: InferenceMode::ClipWise, frame_scores: None, fallback: false })
    }

    /// Frame-wise inference: the score of every window start, plus the
    /// per-species maximum as the clip-level ranking.
    pub fn classify_frames(
        &self,
        mel: &MelSpectrogram,
        templates: &[SpeciesTemplate],
    ) -> Result<ClassificationResult, ClassifierError> {
        let scores = self.window_scores(mel, templates)?;
        let ranking = templates
            .iter()
            .zip(&scores)
            .map(|(t, s)| RankedSpecies { species_id: t.species_id.clone(), score: column_max(s) })
            .collect();
        let positions = scores.first().map_or(0, Vec::len);
        let rows = (0..positions).map(|p| scores.iter().map(|s| s[p]).collect()).collect();
        let cfg = &self.config.spectral;
        let sr = mel.sample_rate as f64;
        let frames = self.config.template_frames();
        Ok(ClassificationResult {
            ranking: rank(ranking),
            mode: InferenceMode::FrameWise,
            frame_scores: Some(FrameScores {
                species: templates.iter().map(|t| t.species_id.clone()).collect(),
                rows,
                hop_s: cfg.hop_length as f64 / sr,
                window_s: ((frames - 1) * cfg.hop_length + cfg.window_length) as f64 / sr,
                clip_duration_s: mel.origin_clip_duration,
            }),
            fallback: false,
        })
    }

    /// `scores[template][position]` for every window start.
    fn window_scores(
        &self,
        mel: &MelSpectrogram,
        templates: &[SpeciesTemplate],
    ) -> Result<Vec<Vec<f64>>, ClassifierError> {
        if templates.is_empty() {
            return Err(ClassifierError::NoTemplates);
        }
        if mel.mel_bins() != self.config.spectral.mel_bins {
            return Err(ClassifierError::ShapeMismatch {
                expected: (self.config.template_frames(), self.config.spectral.mel_bins),
                found: (mel.frames(), mel.mel_bins()),
            });
        }
        for t in templates {
            t.check(&self.config)?;
        }
        let frames = self.config.template_frames();
        let bins = mel.mel_bins();
        let mut values = mel.values().to_vec();
        if mel.frames() < frames {
            let pad = if self.config.noise_floor { 0.0 } else { mel.config.floor_value() };
            values.resize(frames * bins, pad);
        }
        let total_frames = values.len() / bins;
        let windows: Vec<Centered> = (0..=total_frames - frames)
            .map(|p| Centered::new(&values[p * bins..(p + frames) * bins]))
            .collect();
        Ok(templates
            .iter()
            .map(|t| {
                let tc = Centered::new(&t.values);
                windows.iter().map(|w| w.score(&tc)).collect()
            })
            .collect())
    }
}

/// Per-bin robust standardization, `(v - median) / MAD`, rectified at zero.
/// Bins with a vanishing spread only have their median removed.
pub fn subtract_noise_floor(mel: &MelSpectrogram) -> Result<MelSpectrogram, ClassifierError> {
    let (frames, bins) = (mel.frames(), mel.mel_bins());
    let mut values = mel.values().to_vec();
    let mut column = Vec::with_capacity(frames);
    for b in 0..bins {
        column.clear();
        column.extend((0..frames).map(|t| values[t * bins + b]));
        let center = median(&mut column);
        column.iter_mut().for_each(|v| *v = (*v - center).abs());
        let spread = median(&mut column);
        let scale = if spread > 1e-9 { spread } else { 1.0 };
        for t in 0..frames {
            let v = &mut values[t * bins + b];
            *v = ((*v - center) / scale).max(0.0);
        }
    }
    Ok(MelSpectrogram::from_values(values, frames, mel.config, mel.sample_rate, mel.origin_clip_duration)?)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Centered moving average over `width` frames, shrinking at the edges.
pub fn smooth_frames(mel: &MelSpectrogram, width: usize) -> Result<MelSpectrogram, ClassifierError> {
    let (frames, bins) = (mel.frames(), mel.mel_bins());
    let src = mel.values();
    let half = width / 2;
    let mut values = vec![0.0; src.len()];
    for t in 0..frames {
        let (lo, hi) = (t.saturating_sub(half), (t + half + 1).min(frames));
        let n = (hi - lo) as f64;
        for b in 0..bins {
            values[t * bins + b] = (lo..hi).map(|u| src[u * bins + b]).sum::<f64>() / n;
        }
    }
    Ok(MelSpectrogram::from_values(values, frames, mel.config, mel.sample_rate, mel.origin_clip_duration)?)
}

fn column_max(scores: &[f64]) -> f64 {
    scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Mean-removed values with their Euclidean norm.
struct Centered {
    values: Vec<f64>,
    norm: f64,
}

impl Centered {
    fn new(values: &[f64]) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let values: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self { values, norm }
    }

    fn degenerate(&self) -> bool {
        self.norm <= 1e-9 * (self.values.len() as f64).sqrt()
    }

    /// `(r + 1) / 2` for Pearson correlation `r`; 0.5 when either side is constant.
    fn score(&self, other: &Centered) -> f64 {
        if self.degenerate() || other.degenerate() {
            return 0.5;
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let r = (dot / (self.norm * other.norm)).clamp(-1.0, 1.0);
        (r + 1.0) / 2.0
    }
}

/// Rows of the spectrogram whose windows lie inside the annotation.
fn annotated_rows(mel: &MelSpectrogram, annotation: &Annotation) -> Vec<f64> {
    let sr = mel.sample_rate as f64;
    let hop = mel.config.hop_length;
    let window = mel.config.window_length;
    let start = (annotation.start_s * sr).round() as usize;
    let end = (annotation.end_s * sr).round() as usize;
    let first = start.div_ceil(hop).min(mel.frames() - 1);
    let last = if end >= window { (end - window) / hop } else { 0 };
    let last = last.min(mel.frames() - 1).max(first);
    mel.values()[first * mel.mel_bins()..(last + 1) * mel.mel_bins()].to_vec()
}

/// Linear interpolation of a row-major patch along the frame axis.
fn resample_frames(patch: &[f64], bins: usize, target: usize) -> Vec<f64> {
    let rows = patch.len() / bins;
    if rows == target {
        return patch.to_vec();
    }
    let mut out = Vec::with_capacity(target * bins);
    for i in 0..target {
        let pos = if target == 1 { 0.0 } else { i as f64 * (rows - 1) as f64 / (target - 1) as f64 };
        let r0 = pos.floor() as usize;
        let r1 = (r0 + 1).min(rows - 1);
        let frac = pos - r0 as f64;
        for b in 0..bins {
            let a = patch[r0 * bins + b];
            let c = patch[r1 * bins + b];
            out.push(a + (c - a) * frac);
        }
    }
    out
}

/// Zero mean and unit variance; constant input maps to zeros.
fn standardize(values: Vec<f64>) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var <= 1e-18 {
        return vec![0.0; values.len()];
    }
    let sd = var.sqrt();
    values.into_iter().map(|v| (v - mean) / sd).collect()
}
