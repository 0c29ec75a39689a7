//! Audio clips and the signal-processing front end used by the classifier.

mod augment;
mod filter;
mod spectral;
pub mod synth;
pub mod wav;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{Augment, Augmentation};
pub use filter::band_pass;
pub use spectral::{hz_to_mel, mel_spectrogram, mel_to_hz, MelFilterbank, MelSpectrogram, SpectralConfig};

/// Errors raised by the audio front end.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("clip too short: {samples} samples, need at least {required}")]
    TooShort { samples: usize, required: usize },
    #[error("unknown synthetic species index {0}")]
    UnknownSpecies(usize),
    #[error("malformed audio: {0}")]
    Malformed(String),
    #[error("unsupported audio format: {0}")]
    Unsupported(String),
}

/// Channel layout of a clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channels {
    Mono,
    /// Two-channel binaural capture, interleaved left/right.
    Binaural,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Mono => 1,
            Channels::Binaural => 2,
        }
    }

    pub fn from_count(n: u16) -> Result<Self, DspError> {
        match n {
            1 => Ok(Channels::Mono),
            2 => Ok(Channels::Binaural),
            other => Err(DspError::Unsupported(format!("{other} channels"))),
        }
    }
}

/// Interleaved PCM audio with a channel layout and the capture gain applied so far.
///
/// Samples are finite and lie in `[-1, 1]`; construction clamps out-of-range
/// values and rejects non-finite ones.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    channels: Channels,
    sample_rate: u32,
    capture_gain_db: f64,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, channels: Channels, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::InvalidParameter("sample rate must be positive".into()));
        }
        if !samples.len().is_multiple_of(channels.count()) {
            return Err(DspError::InvalidParameter(format!(
                "{} samples do not divide into {} channels",
                samples.len(),
                channels.count()
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(DspError::InvalidParameter("non-finite sample".into()));
        }
        let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Ok(Self { samples, channels, sample_rate, capture_gain_db: 0.0 })
    }

    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Result<Self, DspError> {
        Self::new(samples, Channels::Mono, sample_rate)
    }

    pub fn binaural(left: &[f32], right: &[f32], sample_rate: u32) -> Result<Self, DspError> {
        if left.len() != right.len() {
            return Err(DspError::InvalidParameter("channel lengths differ".into()));
        }
        let samples = left.iter().zip(right).flat_map(|(&l, &r)| [l, r]).collect();
        Self::new(samples, Channels::Binaural, sample_rate)
    }

    /// A clip of digital silence.
    pub fn silence(frames: usize, channels: Channels, sample_rate: u32) -> Result<Self, DspError> {
        Self::new(vec![0.0; frames * channels.count()], channels, sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn capture_gain_db(&self) -> f64 {
        self.capture_gain_db
    }

    /// Number of frames (samples per channel).
    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels.count()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    /// Samples of one channel. Channel 1 of a mono clip is channel 0.
    pub fn channel(&self, index: usize) -> Vec<f32> {
        let n = self.channels.count();
        let index = index.min(n - 1);
        self.samples.iter().skip(index).step_by(n).copied().collect()
    }

    /// Mono version of the clip: the mean of both channels for binaural input.
    pub fn downmix(&self) -> AudioClip {
        match self.channels {
            Channels::Mono => self.clone(),
            Channels::Binaural => AudioClip {
                samples: self.samples.chunks_exact(2).map(|f| (f[0] + f[1]) * 0.5).collect(),
                channels: Channels::Mono,
                sample_rate: self.sample_rate,
                capture_gain_db: self.capture_gain_db,
            },
        }
    }

    /// Two-channel version; mono input is duplicated to both channels.
    pub fn to_binaural(&self) -> AudioClip {
        match self.channels {
            Channels::Binaural => self.clone(),
            Channels::Mono => AudioClip {
                samples: self.samples.iter().flat_map(|&s| [s, s]).collect(),
                channels: Channels::Binaural,
                sample_rate: self.sample_rate,
                capture_gain_db: self.capture_gain_db,
            },
        }
    }

    /// Root-mean-square over all samples of all channels; 0 for an empty clip.
    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    /// Frames `[start, end)` as a new clip.
    pub fn slice_frames(&self, start: usize, end: usize) -> AudioClip {
        let n = self.channels.count();
        let end = end.min(self.frames());
        let start = start.min(end);
        AudioClip {
            samples: self.samples[start * n..end * n].to_vec(),
            channels: self.channels,
            sample_rate: self.sample_rate,
            capture_gain_db: self.capture_gain_db,
        }
    }

    /// The part of the clip covered by `annotation`.
    pub fn excerpt(&self, annotation: &Annotation) -> Result<AudioClip, DspError> {
        annotation.validate(self.duration_s())?;
        let sr = self.sample_rate as f64;
        let start = (annotation.start_s * sr).floor() as usize;
        let end = (annotation.end_s * sr).ceil() as usize;
        Ok(self.slice_frames(start, end))
    }

    /// Replaces the sample buffer, keeping layout, rate and gain bookkeeping.
    pub(crate) fn with_samples(&self, samples: Vec<f32>) -> AudioClip {
        debug_assert_eq!(samples.len() % self.channels.count(), 0);
        AudioClip {
            samples: samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect(),
            channels: self.channels,
            sample_rate: self.sample_rate,
            capture_gain_db: self.capture_gain_db,
        }
    }

    /// Linear-interpolation resampling to `target_rate`.
    pub fn resample(&self, target_rate: u32) -> Result<AudioClip, DspError> {
        if target_rate == 0 {
            return Err(DspError::InvalidParameter("target rate must be positive".into()));
        }
        if target_rate == self.sample_rate {
            return Ok(self.clone());
        }
        let frames = self.frames();
        let out_frames = ((frames as u64 * target_rate as u64 + self.sample_rate as u64 / 2)
            / self.sample_rate as u64) as usize;
        let step = self.sample_rate as f64 / target_rate as f64;
        let n = self.channels.count();
        let mut out = Vec::with_capacity(out_frames * n);
        for i in 0..out_frames {
            let pos = i as f64 * step;
            let i0 = (pos.floor() as usize).min(frames.saturating_sub(1));
            let i1 = (i0 + 1).min(frames.saturating_sub(1));
            let frac = (pos - i0 as f64) as f32;
            for c in 0..n {
                let a = self.samples[i0 * n + c];
                let b = self.samples[i1 * n + c];
                out.push(a + (b - a) * frac);
            }
        }
        Ok(AudioClip {
            samples: out,
            channels: self.channels,
            sample_rate: target_rate,
            capture_gain_db: self.capture_gain_db,
        })
    }
}

/// Multiplies every sample by `10^(gain_db/20)` and clamps to `[-1, 1]`.
///
/// This is the user-adjustable capture amplification; the applied gain is
/// accumulated in [`AudioClip::capture_gain_db`].
pub fn apply_gain(clip: &AudioClip, gain_db: f64) -> Result<AudioClip, DspError> {
    if !gain_db.is_finite() {
        return Err(DspError::InvalidParameter(format!("gain {gain_db} dB")));
    }
    let factor = 10f64.powf(gain_db / 20.0);
    let mut out = clip.with_samples(
        clip.samples.iter().map(|&s| ((s as f64) * factor) as f32).collect(),
    );
    out.capture_gain_db += gain_db;
    Ok(out)
}

/// A time (and optionally frequency) region of a clip that holds a call.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fmin_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fmax_hz: Option<f64>,
}

impl Annotation {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s, fmin_hz: None, fmax_hz: None }
    }

    pub fn with_band(mut self, fmin_hz: f64, fmax_hz: f64) -> Self {
        self.fmin_hz = Some(fmin_hz);
        self.fmax_hz = Some(fmax_hz);
        self
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Checks `0 <= start < end <= clip_duration` (with a half-microsecond
    /// allowance for float round-off) and frequency-bound ordering.
    pub fn validate(&self, clip_duration_s: f64) -> Result<(), DspError> {
        const SLACK: f64 = 5e-7;
        let ok = self.start_s.is_finite()
            && self.end_s.is_finite()
            && self.start_s >= 0.0
            && self.start_s < self.end_s
            && self.end_s <= clip_duration_s + SLACK;
        if !ok {
            return Err(DspError::InvalidParameter(format!(
                "annotation [{}, {}] outside clip of {clip_duration_s} s",
                self.start_s, self.end_s
            )));
        }
        match (self.fmin_hz, self.fmax_hz) {
            (Some(lo), Some(hi)) if !(lo >= 0.0 && lo < hi) => Err(DspError::InvalidParameter(
                format!("annotation band [{lo}, {hi}] Hz"),
            )),
            (Some(_), None) | (None, Some(_)) => Err(DspError::InvalidParameter(
                "annotation band needs both bounds".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Length of the intersection with `other`, in seconds.
    pub fn overlap_s(&self, other: &Annotation) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }
}

pub(crate) fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    (sum / samples.len() as f64).sqrt()
}
