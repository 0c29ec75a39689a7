//! The model-delivery boundary: on-device template matching or a remote
//! recognition service fed with the same pre-processed features.

use std::sync::{Arc, RwLock};

use base64::{engine::general_purpose::STANDARD, Engine};
use serde::{Deserialize, Serialize};

use super::{
    rank, ClassificationResult, Classifier, ClassifierConfig, ClassifierError, FrameScores, InferenceMode,
    RankedSpecies, SpeciesTemplate,
};
use crate::audio::{AudioClip, MelSpectrogram, SpectralConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecognitionMode {
    OnEdge,
    Service,
}

/// Recognition-service request: a JSON header plus the mel matrix as base64
/// of little-endian `f32` values in row-major (frame-major) order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub sample_rate: u32,
    pub config: SpectralConfig,
    pub mode: InferenceMode,
    pub frames: usize,
    pub mel_bins: usize,
    pub mel: String,
}

impl ServiceRequest {
    pub fn encode(mel: &MelSpectrogram, mode: InferenceMode) -> Self {
        let bytes: Vec<u8> = mel.values().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        Self {
            sample_rate: mel.sample_rate,
            config: mel.config,
            mode,
            frames: mel.frames(),
            mel_bins: mel.mel_bins(),
            mel: STANDARD.encode(bytes),
        }
    }

    pub fn decode_mel(&self) -> Result<MelSpectrogram, ClassifierError> {
        let bad = |m: String| ClassifierError::MalformedPayload(m);
        let bytes = STANDARD.decode(&self.mel).map_err(|e| bad(e.to_string()))?;
        if self.mel_bins != self.config.mel_bins {
            return Err(bad(format!("mel_bins {} but config has {}", self.mel_bins, self.config.mel_bins)));
        }
        if bytes.len() != self.frames * self.mel_bins * 4 {
            return Err(bad(format!("{} bytes for {}×{} floats", bytes.len(), self.frames, self.mel_bins)));
        }
        self.config.validate(self.sample_rate)?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let duration = (self.frames.saturating_sub(1) * self.config.hop_length + self.config.window_length) as f64
            / self.sample_rate as f64;
        MelSpectrogram::from_values(values, self.frames, self.config, self.sample_rate, duration)
            .map_err(|e| bad(e.to_string()))
    }
}

/// Recognition-service response: species ranked by descending score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceResponse {
    pub ranking: Vec<RankedSpecies>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_scores: Option<FrameScores>,
}

impl ServiceResponse {
    /// Server side of the contract, answered by the local template matcher.
    pub fn answer(
        request: &ServiceRequest,
        classifier: &Classifier,
        templates: &[SpeciesTemplate],
    ) -> Result<Self, ClassifierError> {
        let mel = request.decode_mel()?;
        if mel.config != classifier.config().spectral || mel.sample_rate != classifier.config().analysis_rate {
            return Err(ClassifierError::MalformedPayload("features computed with a different configuration".into()));
        }
        let result = match request.mode {
            InferenceMode::ClipWise => classifier.classify_clip(&mel, templates)?,
            InferenceMode::FrameWise => classifier.classify_frames(&mel, templates)?,
        };
        Ok(Self { ranking: result.ranking, frame_scores: result.frame_scores })
    }
}

/// A remote recognition service speaking the [`ServiceRequest`] contract.
pub trait FeatureEndpoint: Send + Sync {
    fn classify(&self, request: &ServiceRequest) -> Result<ServiceResponse, String>;
}

/// Serialized classifier state: configuration plus templates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub config: ClassifierConfig,
    pub templates: Vec<SpeciesTemplate>,
}

/// Front door for recognition in either delivery mode.
///
/// Templates sit behind a read-mostly lock: inference clones the current
/// `Arc`, replacement takes the write side.
pub struct Recognizer {
    classifier: Classifier,
    templates: RwLock<Arc<Vec<SpeciesTemplate>>>,
    endpoint: Option<Arc<dyn FeatureEndpoint>>,
    fallback_enabled: bool,
}

impl Recognizer {
    pub fn new(set: TemplateSet) -> Result<Self, ClassifierError> {
        let classifier = Classifier::new(set.config)?;
        if set.templates.is_empty() {
            return Err(ClassifierError::NoTemplates);
        }
        for t in &set.templates {
            t.check(classifier.config())?;
        }
        Ok(Self {
            classifier,
            templates: RwLock::new(Arc::new(set.templates)),
            endpoint: None,
            fallback_enabled: true,
        })
    }

    pub fn with_endpoint(mut self, endpoint: Arc<dyn FeatureEndpoint>) -> Self {
        self.endpoint = Some(endpoint);
        self
    }

    pub fn with_fallback(mut self, enabled: bool) -> Self {
        self.fallback_enabled = enabled;
        self
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn config(&self) -> &ClassifierConfig {
        self.classifier.config()
    }

    pub fn templates(&self) -> Arc<Vec<SpeciesTemplate>> {
        self.templates.read().expect("template lock poisoned").clone()
    }

    pub fn template_set(&self) -> TemplateSet {
        TemplateSet { config: *self.config(), templates: self.templates().as_ref().clone() }
    }

    pub fn replace_templates(&self, templates: Vec<SpeciesTemplate>) -> Result<(), ClassifierError> {
        if templates.is_empty() {
            return Err(ClassifierError::NoTemplates);
        }
        for t in &templates {
            t.check(self.config())?;
        }
        *self.templates.write().expect("template lock poisoned") = Arc::new(templates);
        Ok(())
    }

    /// Clip-wise recognition of a whole clip.
    pub fn recognize(&self, clip: &AudioClip, mode: RecognitionMode) -> Result<ClassificationResult, ClassifierError> {
        self.recognize_with(clip, mode, InferenceMode::ClipWise)
    }

    pub fn recognize_with(
        &self,
        clip: &AudioClip,
        mode: RecognitionMode,
        inference: InferenceMode,
    ) -> Result<ClassificationResult, ClassifierError> {
        let mel = self.classifier.features(clip)?;
        let templates = self.templates();
        let local = |mel: &MelSpectrogram| match inference {
            InferenceMode::ClipWise => self.classifier.classify_clip(mel, &templates),
            InferenceMode::FrameWise => self.classifier.classify_frames(mel, &templates),
        };
        match mode {
            RecognitionMode::OnEdge => local(&mel),
            RecognitionMode::Service => {
                let outcome = match &self.endpoint {
                    Some(endpoint) => endpoint.classify(&ServiceRequest::encode(&mel, inference)),
                    None => Err("no recognition endpoint configured".to_owned()),
                };
                match outcome {
                    Ok(response) => Ok(ClassificationResult {
                        ranking: rank(response.ranking),
                        mode: inference,
                        frame_scores: response.frame_scores,
                        fallback: false,
                    })
                    .and_then(|r| r.validate().map(|_| r)),
                    Err(_) if self.fallback_enabled => {
                        let mut result = local(&mel)?;
                        result.fallback = true;
                        Ok(result)
                    }
                    Err(reason) => Err(ClassifierError::RecognitionUnavailable(reason)),
                }
            }
        }
    }
}
