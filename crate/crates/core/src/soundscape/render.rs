use rayon::prelude::*;

use super::{pan_gains, SoundscapeError, SoundscapeScene, VirtualSource};
use crate::audio::{wav, AudioClip, Channels, DspError};
use crate::geo::ClipStore;

/// Read-head increment per output sample: playback rate times the pitch
/// ratio of the spectral shift, corrected for the clip's own sample rate.
pub fn source_rate(source: &VirtualSource, clip_rate: u32, output_rate: u32) -> f64 {
    source.playback_rate * 2f64.powf(source.spectral_shift / 12.0) * clip_rate as f64 / output_rate as f64
}

/// Offline stereo render of a scene.
///
/// Every source loops its clip (mono downmix) with linear interpolation at
/// [`source_rate`], is scaled by gain, pan and rear attenuation, and is added
/// to the bus in scene order. Sources render in parallel; the sum is sequential,
/// so the output is deterministic.
pub fn render_scene(
    scene: &SoundscapeScene,
    clips: &ClipStore,
    duration_s: f64,
    sample_rate: u32,
) -> Result<AudioClip, SoundscapeError> {
    if !(duration_s.is_finite() && duration_s > 0.0) || sample_rate == 0 {
        return Err(SoundscapeError::InvalidParameter(format!("render of {duration_s} s at {sample_rate} Hz")));
    }
    let frames = (duration_s * sample_rate as f64).round() as usize;
    let rendered: Vec<(Vec<f64>, f64, f64)> = scene
        .sources
        .par_iter()
        .map(|source| -> Result<_, SoundscapeError> {
            let clip = wav::decode(&clips.get(&source.clip_ref)?)?.downmix();
            let rate = source_rate(source, clip.sample_rate(), sample_rate);
            let pan = pan_gains(source.azimuth);
            let level = source.gain * pan.attenuation();
            Ok((loop_resampled(clip.samples(), rate, frames)?, level * pan.left, level * pan.right))
        })
        .collect::<Result<_, _>>()?;

    let mut bus = vec![0.0f64; 2 * frames];
    for (signal, left, right) in &rendered {
        for (frame, &s) in bus.chunks_exact_mut(2).zip(signal) {
            frame[0] += left * s;
            frame[1] += right * s;
        }
    }
    Ok(AudioClip::new(bus.into_iter().map(|s| s as f32).collect(), Channels::Binaural, sample_rate)?)
}

fn loop_resampled(samples: &[f32], rate: f64, frames: usize) -> Result<Vec<f64>, DspError> {
    if samples.is_empty() {
        return Err(DspError::TooShort { samples: 0, required: 1 });
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(DspError::InvalidParameter(format!("read rate {rate}")));
    }
    let n = samples.len();
    Ok((0..frames)
        .map(|i| {
            let pos = (i as f64 * rate) % n as f64;
            let k = pos.floor() as usize % n;
            let frac = pos - pos.floor();
            let a = samples[k] as f64;
            let b = samples[(k + 1) % n] as f64;
            a + (b - a) * frac
        })
        .collect())
}
