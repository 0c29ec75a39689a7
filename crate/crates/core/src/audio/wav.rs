//! RIFF WAV reading and writing (PCM 16-bit and 32-bit float, mono or binaural).

use std::io::Cursor;

use hound::{SampleFormat as HoundFormat, WavReader, WavSpec, WavWriter};

use super::{AudioClip, Channels, DspError};

/// Lowest accepted input sample rate.
pub const MIN_SAMPLE_RATE: u32 = 16_000;
/// Highest accepted input sample rate.
pub const MAX_SAMPLE_RATE: u32 = 48_000;
/// Default analysis rate clips are resampled to.
pub const ANALYSIS_RATE: u32 = 22_050;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

/// Decodes a WAV payload without resampling.
pub fn decode(bytes: &[u8]) -> Result<AudioClip, DspError> {
    let mut reader = WavReader::new(Cursor::new(bytes)).map_err(|e| DspError::Malformed(e.to_string()))?;
    let spec = reader.spec();
    let channels = Channels::from_count(spec.channels)?;
    if !(MIN_SAMPLE_RATE..=MAX_SAMPLE_RATE).contains(&spec.sample_rate) {
        return Err(DspError::Unsupported(format!("sample rate {} Hz", spec.sample_rate)));
    }
    let expected = reader.len() as usize;
    let samples: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (HoundFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>(),
        (HoundFormat::Float, 32) => reader.samples::<f32>().collect::<Result<_, _>>(),
        (fmt, bits) => {
            return Err(DspError::Unsupported(format!("{bits}-bit {fmt:?} samples")));
        }
    }
    .map_err(|e| DspError::Malformed(e.to_string()))?;
    if samples.len() != expected {
        return Err(DspError::Malformed(format!(
            "data chunk holds {} of {expected} samples",
            samples.len()
        )));
    }
    AudioClip::new(samples, channels, spec.sample_rate)
        .map_err(|e| DspError::Malformed(e.to_string()))
}

/// Decodes a WAV payload and resamples it to `analysis_rate`.
pub fn decode_for_analysis(bytes: &[u8], analysis_rate: u32) -> Result<AudioClip, DspError> {
    decode(bytes)?.resample(analysis_rate)
}

pub fn encode(clip: &AudioClip, format: SampleFormat) -> Result<Vec<u8>, DspError> {
    let spec = WavSpec {
        channels: clip.channels().count() as u16,
        sample_rate: clip.sample_rate(),
        bits_per_sample: match format {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Pcm16 => HoundFormat::Int,
            SampleFormat::Float32 => HoundFormat::Float,
        },
    };
    let io = |e: hound::Error| DspError::Malformed(e.to_string());
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = WavWriter::new(&mut cursor, spec).map_err(io)?;
        for &s in clip.samples() {
            match format {
                SampleFormat::Pcm16 => writer
                    .write_sample((s * 32767.0).round().clamp(-32768.0, 32767.0) as i16)
                    .map_err(io)?,
                SampleFormat::Float32 => writer.write_sample(s).map_err(io)?,
            }
        }
        writer.finalize().map_err(io)?;
    }
    Ok(cursor.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn float_round_trip_is_exact() {
        let clip = AudioClip::binaural(&[0.1, -0.7, 1.0], &[0.0, 0.25, -1.0], 44100).unwrap();
        let back = decode(&encode(&clip, SampleFormat::Float32).unwrap()).unwrap();
        assert_eq!(back, clip);
    }

    #[test]
    fn truncated_payload_is_malformed() {
        let clip = AudioClip::mono(vec![0.5; 1000], 22050).unwrap();
        let bytes = encode(&clip, SampleFormat::Pcm16).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 100]), Err(DspError::Malformed(_))));
        assert!(matches!(decode(&bytes[..20]), Err(DspError::Malformed(_))));
        assert!(matches!(decode(b"not a wav file"), Err(DspError::Malformed(_))));
    }

    #[test]
    fn rates_outside_range_rejected() {
        let clip = AudioClip::mono(vec![0.0; 100], 8000).unwrap();
        let bytes = encode(&clip, SampleFormat::Pcm16).unwrap();
        assert!(matches!(decode(&bytes), Err(DspError::Unsupported(_))));
    }

    #[test]
    fn analysis_decode_resamples() {
        let clip = AudioClip::mono(vec![0.0; 48000], 48000).unwrap();
        let bytes = encode(&clip, SampleFormat::Pcm16).unwrap();
        let out = decode_for_analysis(&bytes, ANALYSIS_RATE).unwrap();
        assert_eq!(out.sample_rate(), ANALYSIS_RATE);
        assert_eq!(out.frames(), 22050);
    }

    proptest! {
        #[test]
        fn pcm16_round_trip_within_one_step(samples in proptest::collection::vec(-1.0f32..=1.0, 1..200)) {
            let clip = AudioClip::mono(samples, 16000).unwrap();
            let back = decode(&encode(&clip, SampleFormat::Pcm16).unwrap()).unwrap();
            for (a, b) in clip.samples().iter().zip(back.samples()) {
                prop_assert!((a - b).abs() <= 1.5 / 32768.0);
            }
        }
    }
}
