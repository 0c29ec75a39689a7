use std::f64::consts::FRAC_PI_2;

use rustfft::{num_complex::Complex, FftPlanner};

use super::{AudioClip, DspError};

/// Width of each raised-cosine skirt, in octaves.
const SKIRT_OCTAVES: f64 = 0.5;

/// Zero-phase spectral band-pass.
///
/// Each channel is zero-padded to at least twice its length, transformed,
/// multiplied by a real mask that is 1 inside `[fmin, fmax]` and falls to 0
/// over a half-octave raised-cosine skirt on each side, and transformed back.
/// A mask edge sitting at 0 Hz or at Nyquist has no skirt.
pub fn band_pass(clip: &AudioClip, fmin: f64, fmax: f64) -> Result<AudioClip, DspError> {
    let nyquist = clip.sample_rate() as f64 / 2.0;
    if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
        return Err(DspError::InvalidParameter(format!(
            "band [{fmin}, {fmax}] Hz with Nyquist {nyquist} Hz"
        )));
    }
    let frames = clip.frames();
    if frames == 0 {
        return Ok(clip.clone());
    }
    let n_fft = (2 * frames).next_power_of_two();
    let bin_hz = clip.sample_rate() as f64 / n_fft as f64;
    let mask: Vec<f64> = (0..=n_fft / 2)
        .map(|k| band_mask(k as f64 * bin_hz, fmin, fmax, nyquist))
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n_fft);
    let inverse = planner.plan_fft_inverse(n_fft);
    let channels = clip.channels().count();
    let mut out = vec![0.0f32; clip.samples().len()];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for c in 0..channels {
        buf.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
        for (i, s) in clip.samples().iter().skip(c).step_by(channels).enumerate() {
            buf[i].re = *s as f64;
        }
        forward.process(&mut buf);
        for k in 0..n_fft {
            let m = mask[k.min(n_fft - k)];
            buf[k] *= m;
        }
        inverse.process(&mut buf);
        let scale = 1.0 / n_fft as f64;
        for i in 0..frames {
            out[i * channels + c] = (buf[i].re * scale) as f32;
        }
    }
    Ok(clip.with_samples(out))
}

fn band_mask(f: f64, fmin: f64, fmax: f64, nyquist: f64) -> f64 {
    let skirt = 2f64.powf(SKIRT_OCTAVES);
    let lower = if fmin <= 0.0 || f >= fmin {
        1.0
    } else if f <= fmin / skirt {
        0.0
    } else {
        let u = (f / (fmin / skirt)).log2() / SKIRT_OCTAVES;
        (u * FRAC_PI_2).sin().powi(2)
    };
    let upper = if fmax >= nyquist || f <= fmax {
        1.0
    } else if f >= fmax * skirt {
        0.0
    } else {
        let u = ((fmax * skirt) / f).log2() / SKIRT_OCTAVES;
        (u * FRAC_PI_2).sin().powi(2)
    };
    lower * upper
}
