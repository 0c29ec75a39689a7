use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, DspError};

/// Short-time analysis parameters.
///
/// The defaults (1024-sample Hann window, 256 hop, 40 mel bands over
/// 500 Hz to 10 kHz) are project choices tuned for 22.05 kHz analysis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub window_length: usize,
    pub hop_length: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            window_length: 1024,
            hop_length: 256,
            mel_bins: 40,
            fmin: 500.0,
            fmax: 10_000.0,
            log_floor: 1e-10,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<(), DspError> {
        let nyquist = sample_rate as f64 / 2.0;
        if self.hop_length == 0 || self.hop_length > self.window_length {
            return Err(DspError::InvalidParameter(format!(
                "hop {} with window {}",
                self.hop_length, self.window_length
            )));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(DspError::InvalidParameter(format!(
                "band [{}, {}] Hz at {} Hz sample rate",
                self.fmin, self.fmax, sample_rate
            )));
        }
        if self.mel_bins < 2 {
            return Err(DspError::InvalidParameter("need at least 2 mel bins".into()));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return Err(DspError::InvalidParameter("log floor must be positive".into()));
        }
        Ok(())
    }

    /// Number of analysis frames for a signal of `samples` samples.
    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.window_length {
            0
        } else {
            (samples - self.window_length) / self.hop_length + 1
        }
    }

    /// Value written for zero-energy cells.
    pub fn floor_value(&self) -> f64 {
        self.log_floor.ln()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Sparse triangular filterbank with unit-peak triangles on mel-spaced points.
///
/// Adjacent triangles share edges, so the weights at any FFT bin sum to at
/// most one.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    centers_hz: Vec<f64>,
    filters: Vec<Vec<(usize, f64)>>,
}

impl MelFilterbank {
    pub fn new(n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64, bins: usize) -> Self {
        let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let points: Vec<f64> = (0..bins + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (bins + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let filters = (0..bins)
            .map(|k| {
                let (lo, center, hi) = (points[k], points[k + 1], points[k + 2]);
                (0..=n_fft / 2)
                    .filter_map(|j| {
                        let f = j as f64 * bin_hz;
                        let w = if f > lo && f <= center {
                            (f - lo) / (center - lo)
                        } else if f > center && f < hi {
                            (hi - f) / (hi - center)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect();
        Self { centers_hz: points[1..=bins].to_vec(), filters }
    }

    pub fn bins(&self) -> usize {
        self.filters.len()
    }

    pub fn center_hz(&self, bin: usize) -> f64 {
        self.centers_hz[bin]
    }

    /// Weight of FFT bin `fft_bin` in mel band `bin`.
    pub fn weight(&self, bin: usize, fft_bin: usize) -> f64 {
        self.filters[bin]
            .iter()
            .find(|(j, _)| *j == fft_bin)
            .map_or(0.0, |(_, w)| *w)
    }

    /// Applies the filterbank to a one-sided power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|f| f.iter().map(|&(j, w)| w * power[j]).sum())
            .collect()
    }
}

/// Frames × mel-bins matrix of log band energies, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    values: Vec<f64>,
    frames: usize,
    mel_bins: usize,
    pub config: SpectralConfig,
    pub sample_rate: u32,
    pub origin_clip_duration: f64,
}

impl MelSpectrogram {
    pub fn from_values(
        values: Vec<f64>,
        frames: usize,
        config: SpectralConfig,
        sample_rate: u32,
        origin_clip_duration: f64,
    ) -> Result<Self, DspError> {
        if values.len() != frames * config.mel_bins {
            return Err(DspError::InvalidParameter(format!(
                "{} values for {frames} frames of {} bins",
                values.len(),
                config.mel_bins
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DspError::InvalidParameter("non-finite mel value".into()));
        }
        Ok(Self { values, frames, mel_bins: config.mel_bins, config, sample_rate, origin_clip_duration })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn mel_bins(&self) -> usize {
        self.mel_bins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.values[frame * self.mel_bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.mel_bins..(frame + 1) * self.mel_bins]
    }

    /// Seconds between consecutive frames.
    pub fn hop_s(&self) -> f64 {
        self.config.hop_length as f64 / self.sample_rate as f64
    }

    /// Mel band with the highest mean value over all frames.
    pub fn dominant_bin(&self) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for b in 0..self.mel_bins {
            let mean = (0..self.frames).map(|t| self.get(t, b)).sum::<f64>() / self.frames.max(1) as f64;
            if mean > best.1 {
                best = (b, mean);
            }
        }
        best.0
    }
}

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Log mel-band energies of a clip.
///
/// Binaural clips are downmixed first. Each frame is Hann-windowed, its power
/// spectrum normalized by the squared window sum, passed through the mel
/// filterbank over `[fmin, fmax]`, and mapped through `ln(max(e, log_floor))`.
pub fn mel_spectrogram(clip: &AudioClip, config: &SpectralConfig) -> Result<MelSpectrogram, DspError> {
    config.validate(clip.sample_rate())?;
    let mono = clip.downmix();
    let samples = mono.samples();
    if samples.len() < config.window_length {
        return Err(DspError::TooShort { samples: samples.len(), required: config.window_length });
    }
    let n = config.window_length;
    let window = hann(n);
    let norm = window.iter().sum::<f64>().powi(2);
    let bank = MelFilterbank::new(n, clip.sample_rate(), config.fmin, config.fmax, config.mel_bins);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let frames = config.frame_count(samples.len());
    let mut values = Vec::with_capacity(frames * config.mel_bins);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut power = vec![0.0; n / 2 + 1];
    for t in 0..frames {
        let offset = t * config.hop_length;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(samples[offset + i] as f64 * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr() / norm;
        }
        values.extend(bank.apply(&power).into_iter().map(|e| e.max(config.log_floor).ln()));
    }
    MelSpectrogram::from_values(values, frames, *config, clip.sample_rate(), clip.duration_s())
}
