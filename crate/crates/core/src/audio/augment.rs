use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AudioClip, DspError, MelSpectrogram};

/// Data jitter applied to waveforms or to mel spectrograms.
///
/// `Noise` and `TimeShift` act on clips; `TimeMask` and `FrequencyMask` act on
/// spectrograms. Applying a descriptor to the wrong domain is an
/// invalid-parameter error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    /// Additive white Gaussian noise scaled to an exact signal-to-noise ratio.
    Noise { snr_db: f64, seed: u64 },
    /// Circular shift by `frames` (positive delays the signal).
    TimeShift { frames: i64 },
    /// Sets frames `[start, start + width)` to the log floor.
    TimeMask { start: usize, width: usize },
    /// Sets mel bins `[start, start + width)` to the log floor.
    FrequencyMask { start: usize, width: usize },
}

pub trait Augment: Sized {
    fn augment(&self, augmentation: &Augmentation) -> Result<Self, DspError>;
}

impl Augment for AudioClip {
    fn augment(&self, augmentation: &Augmentation) -> Result<Self, DspError> {
        match *augmentation {
            Augmentation::Noise { snr_db, seed } => add_noise(self, snr_db, seed),
            Augmentation::TimeShift { frames } => Ok(time_shift(self, frames)),
            _ => Err(DspError::InvalidParameter(
                "mask augmentations apply to spectrograms".into(),
            )),
        }
    }
}

impl Augment for MelSpectrogram {
    fn augment(&self, augmentation: &Augmentation) -> Result<Self, DspError> {
        let (frames, bins) = (self.frames(), self.mel_bins());
        let floor = self.config.floor_value();
        let mut out = self.clone();
        match *augmentation {
            Augmentation::TimeMask { start, width } => {
                check_mask(start, width, frames, "time")?;
                for t in start..start + width {
                    out.values_mut()[t * bins..(t + 1) * bins].fill(floor);
                }
            }
            Augmentation::FrequencyMask { start, width } => {
                check_mask(start, width, bins, "frequency")?;
                for t in 0..frames {
                    out.values_mut()[t * bins + start..t * bins + start + width].fill(floor);
                }
            }
            _ => {
                return Err(DspError::InvalidParameter(
                    "noise and shift augmentations apply to clips".into(),
                ))
            }
        }
        Ok(out)
    }
}

fn check_mask(start: usize, width: usize, axis: usize, name: &str) -> Result<(), DspError> {
    if width > axis || start + width > axis {
        return Err(DspError::InvalidParameter(format!(
            "{name} mask [{start}, {}) exceeds axis of {axis}",
            start + width
        )));
    }
    Ok(())
}

fn time_shift(clip: &AudioClip, frames: i64) -> AudioClip {
    let n = clip.frames();
    if n == 0 {
        return clip.clone();
    }
    let ch = clip.channels().count();
    let shift = frames.rem_euclid(n as i64) as usize;
    let src = clip.samples();
    let mut out = vec![0.0; src.len()];
    for i in 0..n {
        let j = (i + shift) % n;
        out[j * ch..(j + 1) * ch].copy_from_slice(&src[i * ch..(i + 1) * ch]);
    }
    clip.with_samples(out)
}

fn add_noise(clip: &AudioClip, snr_db: f64, seed: u64) -> Result<AudioClip, DspError> {
    if !snr_db.is_finite() {
        return Err(DspError::InvalidParameter(format!("SNR {snr_db} dB")));
    }
    let signal_rms = clip.rms();
    if signal_rms == 0.0 || clip.samples().is_empty() {
        return Ok(clip.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..clip.samples().len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let noise_rms = (noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64).sqrt();
    let scale = signal_rms / 10f64.powf(snr_db / 20.0) / noise_rms;
    Ok(clip.with_samples(
        clip.samples()
            .iter()
            .zip(&noise)
            .map(|(&s, &e)| (s as f64 + e * scale) as f32)
            .collect(),
    ))
}
