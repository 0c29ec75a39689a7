use serde::{Deserialize, Serialize};

use super::SoundscapeError;
use crate::audio::{AudioClip, Channels, DspError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixParams {
    /// Desired virtual level relative to the real environment, in dB.
    pub target_virtual_to_real_db: f64,
    pub min_gain: f64,
    pub max_gain: f64,
    /// Time constant of the one-pole gain smoother.
    pub smoothing_s: f64,
    /// Analysis block length.
    pub block_s: f64,
    /// Real-environment RMS below which the scene counts as silent and the
    /// virtual layer plays at `max_gain`.
    pub silence_floor_rms: f64,
    /// Virtual RMS below which a block carries no virtual signal; the gain is held.
    pub virtual_floor_rms: f64,
}

impl Default for MixParams {
    fn default() -> Self {
        Self {
            target_virtual_to_real_db: 0.0,
            min_gain: 0.05,
            max_gain: 4.0,
            smoothing_s: 0.3,
            block_s: 0.05,
            silence_floor_rms: 1e-4,
            virtual_floor_rms: 1e-6,
        }
    }
}

impl MixParams {
    pub fn validate(&self) -> Result<(), SoundscapeError> {
        let finite = [
            self.target_virtual_to_real_db,
            self.min_gain,
            self.max_gain,
            self.smoothing_s,
            self.block_s,
            self.silence_floor_rms,
            self.virtual_floor_rms,
        ]
        .iter()
        .all(|v| v.is_finite());
        let ok = finite
            && self.min_gain >= 0.0
            && self.min_gain <= self.max_gain
            && self.smoothing_s > 0.0
            && self.block_s > 0.0
            && self.silence_floor_rms > 0.0
            && self.virtual_floor_rms > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SoundscapeError::InvalidParameter(format!("mix parameters {self:?}")))
        }
    }

    /// Unsmoothed gain for one block.
    pub fn desired_gain(&self, real_rms: f64, virtual_rms: f64) -> f64 {
        if real_rms < self.silence_floor_rms {
            return self.max_gain;
        }
        let target = 10f64.powf(self.target_virtual_to_real_db / 20.0) * real_rms / virtual_rms;
        target.clamp(self.min_gain, self.max_gain)
    }
}

#[derive(Clone, Debug)]
pub struct MixOutput {
    /// Stereo mix.
    pub audio: AudioClip,
    /// Smoothed virtual gain reached at the end of each block.
    pub block_gains: Vec<f64>,
    pub block_frames: usize,
}

impl MixOutput {
    pub fn block_s(&self) -> f64 {
        self.block_frames as f64 / self.audio.sample_rate() as f64
    }
}

/// Adaptive real/virtual mix.
///
/// Each block measures the real and virtual RMS, derives the gain that puts
/// the virtual layer `target_virtual_to_real_db` above the real one, clamps
/// it, and smooths it with a one-pole filter (`α = 1 - exp(-block/τ)`). The
/// gain ramps linearly across each block. The scaled virtual signal is
/// soft-limited into the headroom left by the real sample, so the output
/// stays in `[-1, 1]` and equals the real input wherever the virtual layer is silent.
pub fn ara_mix(real: &AudioClip, virtual_: &AudioClip, params: &MixParams) -> Result<MixOutput, SoundscapeError> {
    params.validate()?;
    if real.sample_rate() != virtual_.sample_rate() {
        return Err(DspError::InvalidParameter(format!(
            "sample rate mismatch: {} vs {}",
            real.sample_rate(),
            virtual_.sample_rate()
        ))
        .into());
    }
    if real.frames() != virtual_.frames() {
        return Err(DspError::InvalidParameter(format!(
            "length mismatch: {} vs {} frames",
            real.frames(),
            virtual_.frames()
        ))
        .into());
    }
    let real = stereo(real);
    let virt = stereo(virtual_);
    let sr = real.sample_rate();
    let block_frames = ((params.block_s * sr as f64).round() as usize).max(1);
    let alpha = 1.0 - (-(block_frames as f64 / sr as f64) / params.smoothing_s).exp();

    let (rs, vs) = (real.samples(), virt.samples());
    let mut out = Vec::with_capacity(rs.len());
    let mut block_gains = Vec::new();
    let mut gain: Option<f64> = None;
    for start in (0..real.frames()).step_by(block_frames) {
        let end = (start + block_frames).min(real.frames());
        let (r, v) = (&rs[2 * start..2 * end], &vs[2 * start..2 * end]);
        let previous = gain;
        let virtual_rms = crate::audio::rms(v);
        if virtual_rms >= params.virtual_floor_rms {
            let desired = params.desired_gain(crate::audio::rms(r), virtual_rms);
            gain = Some(match gain {
                Some(g) => g + alpha * (desired - g),
                None => desired,
            });
        }
        let g_end = gain.unwrap_or(params.max_gain);
        let g_start = previous.unwrap_or(g_end);
        let frames = end - start;
        for f in 0..frames {
            let g = g_start + (g_end - g_start) * (f + 1) as f64 / frames as f64;
            for c in 0..2 {
                out.push(limit_into_headroom(r[2 * f + c] as f64, g * v[2 * f + c] as f64) as f32);
            }
        }
        block_gains.push(g_end);
    }
    let audio = AudioClip::new(out, Channels::Binaural, sr)?;
    Ok(MixOutput { audio, block_gains, block_frames })
}

fn stereo(clip: &AudioClip) -> AudioClip {
    match clip.channels() {
        Channels::Mono => clip.to_binaural(),
        Channels::Binaural => clip.clone(),
    }
}

/// `real + h·tanh(v/h)` with `h` the distance from `real` to the rail in the direction of `v`.
fn limit_into_headroom(real: f64, v: f64) -> f64 {
    if v == 0.0 {
        return real;
    }
    let headroom = if v > 0.0 { 1.0 - real } else { 1.0 + real };
    if headroom <= 0.0 {
        return real;
    }
    real + headroom * (v / headroom).tanh()
}
