//! Synthetic bird calls with known labels.
//!
//! Each registry species repeats a short FM chirp inside its own frequency
//! band. Bands are disjoint, so a correct classifier can be measured without a
//! labelled field corpus. Rendering is deterministic for a given seed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{AudioClip, Channels, DspError};
use crate::SpeciesId;

/// Number of species in the synthetic registry.
pub const SPECIES_COUNT: usize = 10;

/// Background noise level of rendered clips (linear RMS).
const BACKGROUND_RMS: f64 = 0.002;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpecies {
    pub index: usize,
    /// Lower edge of the chirp band in Hz.
    pub band_lo: f64,
    /// Upper edge of the chirp band in Hz.
    pub band_hi: f64,
    /// Length of one chirp in seconds.
    pub chirp_s: f64,
    /// Time between chirp onsets in seconds.
    pub period_s: f64,
    /// Sweep direction: upward when true.
    pub rising: bool,
}

impl SyntheticSpecies {
    pub fn get(index: usize) -> Result<Self, DspError> {
        if index >= SPECIES_COUNT {
            return Err(DspError::UnknownSpecies(index));
        }
        let band_lo = 1000.0 + 900.0 * index as f64;
        Ok(Self {
            index,
            band_lo,
            band_hi: band_lo + 500.0,
            chirp_s: 0.06 + 0.015 * (index % 4) as f64,
            period_s: 0.18 + 0.04 * (index % 3) as f64,
            rising: index.is_multiple_of(2),
        })
    }

    pub fn all() -> impl Iterator<Item = SyntheticSpecies> {
        (0..SPECIES_COUNT).map(|i| Self::get(i).expect("index in range"))
    }

    pub fn id(&self) -> SpeciesId {
        species_id(self.index)
    }

    pub fn center_hz(&self) -> f64 {
        (self.band_lo + self.band_hi) / 2.0
    }

    /// Adds calls spanning `[start_s, start_s + duration_s)` into a mono buffer.
    fn render_into(&self, buf: &mut [f64], sample_rate: u32, start_s: f64, duration_s: f64, rng: &mut ChaCha8Rng) {
        let sr = sample_rate as f64;
        let end_s = start_s + duration_s;
        let mut onset = start_s + rng.random_range(0.0..0.3) * self.period_s;
        while onset + self.chirp_s <= end_s + 1e-9 {
            let margin = rng.random_range(0.0..60.0);
            let (f0, f1) = if self.rising {
                (self.band_lo + margin, self.band_hi - margin)
            } else {
                (self.band_hi - margin, self.band_lo + margin)
            };
            let amp = 0.45 + rng.random_range(-0.1..0.1);
            let first = (onset * sr).round() as usize;
            let len = (self.chirp_s * sr) as usize;
            let mut phase = rng.random_range(0.0..2.0 * PI);
            for i in 0..len {
                let Some(slot) = buf.get_mut(first + i) else { break };
                let u = i as f64 / len as f64;
                let freq = f0 + (f1 - f0) * u;
                phase += 2.0 * PI * freq / sr;
                let envelope = (PI * u).sin().powi(2);
                *slot += amp * envelope * phase.sin();
            }
            let jitter = rng.random_range(-0.1..0.1) * self.period_s;
            onset += self.period_s + jitter;
        }
    }
}

pub fn species_id(index: usize) -> SpeciesId {
    SpeciesId::new(format!("synth-{index:02}"))
}

/// Parses an id produced by [`species_id`].
pub fn species_index(id: &SpeciesId) -> Option<usize> {
    id.as_str().strip_prefix("synth-")?.parse().ok().filter(|&i| i < SPECIES_COUNT)
}

fn rng_for(species: usize, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (species as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn background(frames: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..frames)
        .map(|_| BACKGROUND_RMS * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

fn to_clip(buf: Vec<f64>, sample_rate: u32) -> Result<AudioClip, DspError> {
    AudioClip::new(buf.into_iter().map(|v| v as f32).collect(), Channels::Mono, sample_rate)
}

/// A mono clip of `duration_s` seconds in which species `species_index` calls
/// throughout, over faint background noise.
pub fn synthesize_call(
    species_index: usize,
    duration_s: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<AudioClip, DspError> {
    let species = SyntheticSpecies::get(species_index)?;
    if !(duration_s > 0.0 && duration_s.is_finite()) || sample_rate == 0 {
        return Err(DspError::InvalidParameter(format!("duration {duration_s} s at {sample_rate} Hz")));
    }
    let frames = (duration_s * sample_rate as f64).round() as usize;
    let mut rng = rng_for(species_index, seed);
    let mut buf = background(frames, &mut rng);
    species.render_into(&mut buf, sample_rate, 0.0, duration_s, &mut rng);
    to_clip(buf, sample_rate)
}

/// Background-only clip (faint noise, no calls).
pub fn synthesize_background(duration_s: f64, sample_rate: u32, seed: u64) -> Result<AudioClip, DspError> {
    let frames = (duration_s * sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    to_clip(background(frames, &mut rng), sample_rate)
}

/// Adds calls of a species over `[start_s, start_s + duration_s)` to a mono clip.
pub fn place_call(
    clip: &AudioClip,
    species_index: usize,
    start_s: f64,
    duration_s: f64,
    seed: u64,
) -> Result<AudioClip, DspError> {
    let species = SyntheticSpecies::get(species_index)?;
    if clip.channels() != Channels::Mono {
        return Err(DspError::InvalidParameter("calls are placed into mono clips".into()));
    }
    if start_s < 0.0 || start_s + duration_s > clip.duration_s() + 1e-9 {
        return Err(DspError::InvalidParameter(format!(
            "call [{start_s}, {}] outside clip",
            start_s + duration_s
        )));
    }
    let mut buf: Vec<f64> = clip.samples().iter().map(|&s| s as f64).collect();
    let mut rng = rng_for(species_index, seed);
    species.render_into(&mut buf, clip.sample_rate(), start_s, duration_s, &mut rng);
    to_clip(buf, clip.sample_rate())
}

/// White Gaussian noise at the given RMS level.
pub fn white_noise(duration_s: f64, sample_rate: u32, level_rms: f64, seed: u64) -> Result<AudioClip, DspError> {
    let frames = (duration_s * sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buf = (0..frames)
        .map(|_| level_rms * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    to_clip(buf, sample_rate)
}
