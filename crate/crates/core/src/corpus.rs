//! Labelled synthetic corpora and the train/validation evaluation protocol.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::synth::{self, SyntheticSpecies};
use crate::audio::{Annotation, Augment, Augmentation, AudioClip};
use crate::classifier::{evaluate, ClassificationResult, Classifier, ClassifierConfig, ClassifierError, EvalReport, SpeciesTemplate};
use crate::SpeciesId;

/// Length of every synthetic corpus clip.
pub const CLIP_SECONDS: f64 = 2.0;
/// Length of the annotated call span inside each clip.
pub const ANNOTATION_SECONDS: f64 = 1.0;
/// Fraction of each species' clips used for template building.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    /// File name relative to the corpus directory.
    pub file: String,
    pub species_id: SpeciesId,
    pub species_index: usize,
    pub seed: u64,
    pub annotation: Annotation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub sample_rate: u32,
    pub clip_seconds: f64,
    pub species_count: usize,
    pub clips_per_species: usize,
    pub entries: Vec<CorpusEntry>,
}

/// Deterministic manifest for `species_count × clips_per_species` clips.
pub fn manifest(species_count: usize, clips_per_species: usize, seed: u64, sample_rate: u32) -> Result<CorpusManifest, ClassifierError> {
    if species_count == 0 || species_count > synth::SPECIES_COUNT {
        return Err(ClassifierError::InvalidParameter(format!(
            "species count must be within 1..={}",
            synth::SPECIES_COUNT
        )));
    }
    if clips_per_species == 0 {
        return Err(ClassifierError::InvalidParameter("need at least one clip per species".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(species_count * clips_per_species);
    for species in SyntheticSpecies::all().take(species_count) {
        for c in 0..clips_per_species {
            let start = rng.random_range(0.0..CLIP_SECONDS - ANNOTATION_SECONDS);
            entries.push(CorpusEntry {
                file: format!("{}_{c:03}.wav", species.id()),
                species_id: species.id(),
                species_index: species.index,
                seed: rng.random(),
                annotation: Annotation::new(start, start + ANNOTATION_SECONDS)
                    .with_band(species.band_lo, species.band_hi),
            });
        }
    }
    Ok(CorpusManifest { seed, sample_rate, clip_seconds: CLIP_SECONDS, species_count, clips_per_species, entries })
}

/// Renders the clip described by a manifest entry.
pub fn render_entry(manifest: &CorpusManifest, entry: &CorpusEntry) -> Result<AudioClip, ClassifierError> {
    Ok(synth::synthesize_call(entry.species_index, manifest.clip_seconds, manifest.sample_rate, entry.seed)?)
}

/// Stratified split: within each label, a seeded shuffle puts the first
/// `TRAIN_FRACTION` (at least one clip) into training.
pub fn split(labels: &[SpeciesId], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_label: BTreeMap<&SpeciesId, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_label {
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1, idx.len());
        train.extend_from_slice(&idx[..n_train]);
        validation.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    (train, validation)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Additive-noise SNR applied to validation clips.
    pub noise_snr_db: Option<f64>,
    /// Permute labels with this seed before splitting (chance-level control).
    pub shuffle_labels_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub train_clips: usize,
    pub validation_clips: usize,
    pub split_seed: u64,
    pub options: EvalOptions,
}

/// Labelled clip with its call annotation.
#[derive(Clone, Debug)]
pub struct LabelledClip {
    pub clip: AudioClip,
    pub label: SpeciesId,
    pub annotation: Annotation,
}

/// Builds templates on the training split, classifies the validation split
/// clip-wise and scores it.
pub fn run_eval(
    clips: &[LabelledClip],
    config: ClassifierConfig,
    split_seed: u64,
    options: &EvalOptions,
) -> Result<EvalOutcome, ClassifierError> {
    let mut labels: Vec<SpeciesId> = clips.iter().map(|c| c.label.clone()).collect();
    if let Some(seed) = options.shuffle_labels_seed {
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let (train, validation) = split(&labels, split_seed);
    if validation.is_empty() {
        return Err(ClassifierError::InvalidParameter("validation split is empty".into()));
    }
    let classifier = Classifier::new(config)?;
    let templates = train_templates(&classifier, clips, &labels, &train)?;

    let mut predictions: Vec<ClassificationResult> = Vec::with_capacity(validation.len());
    for &i in &validation {
        let clip = match options.noise_snr_db {
            Some(snr) => clips[i].clip.augment(&Augmentation::Noise { snr_db: snr, seed: split_seed ^ i as u64 })?,
            None => clips[i].clip.clone(),
        };
        predictions.push(classifier.classify_clip(&classifier.features(&clip)?, &templates)?);
    }
    let truth: Vec<SpeciesId> = validation.iter().map(|&i| labels[i].clone()).collect();
    let report = evaluate(&predictions, &truth, config.acceptance_threshold)?;
    Ok(EvalOutcome {
        report,
        train_clips: train.len(),
        validation_clips: validation.len(),
        split_seed,
        options: options.clone(),
    })
}

/// One template per label from the given training indices.
pub fn train_templates(
    classifier: &Classifier,
    clips: &[LabelledClip],
    labels: &[SpeciesId],
    train: &[usize],
) -> Result<Vec<SpeciesTemplate>, ClassifierError> {
    let mut grouped: BTreeMap<&SpeciesId, Vec<(AudioClip, Annotation)>> = BTreeMap::new();
    for &i in train {
        grouped.entry(&labels[i]).or_default().push((clips[i].clip.clone(), clips[i].annotation));
    }
    grouped
        .into_iter()
        .map(|(label, examples)| classifier.build_template(label.clone(), &examples))
        .collect()
}

/// Renders a whole manifest into labelled clips.
pub fn render_all(manifest: &CorpusManifest) -> Result<Vec<LabelledClip>, ClassifierError> {
    manifest
        .entries
        .iter()
        .map(|e| {
            Ok(LabelledClip { clip: render_entry(manifest, e)?, label: e.species_id.clone(), annotation: e.annotation })
        })
        .collect()
}

/// Templates for the first `species_count` synthetic species, built from
/// `clips_per_species` seeded clips each. Used to bootstrap a server.
pub fn synthetic_templates(
    config: ClassifierConfig,
    species_count: usize,
    clips_per_species: usize,
    seed: u64,
) -> Result<Vec<SpeciesTemplate>, ClassifierError> {
    let manifest = manifest(species_count, clips_per_species, seed, config.analysis_rate)?;
    let clips = render_all(&manifest)?;
    let labels: Vec<SpeciesId> = clips.iter().map(|c| c.label.clone()).collect();
    let all: Vec<usize> = (0..clips.len()).collect();
    train_templates(&Classifier::new(config)?, &clips, &labels, &all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_is_deterministic_and_sized() {
        let a = manifest(8, 20, 7, 22050).unwrap();
        assert_eq!(a, manifest(8, 20, 7, 22050).unwrap());
        assert_eq!(a.entries.len(), 160);
        assert_ne!(a, manifest(8, 20, 8, 22050).unwrap());
        for e in &a.entries {
            assert_eq!(synth::species_index(&e.species_id), Some(e.species_index));
            assert!(e.annotation.validate(CLIP_SECONDS).is_ok());
        }
        assert!(manifest(0, 1, 1, 22050).is_err());
        assert!(manifest(11, 1, 1, 22050).is_err());
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<SpeciesId> = (0..40).map(|i| synth::species_id(i % 4)).collect();
        let (train, val) = split(&labels, 3);
        assert_eq!(train.len(), 32);
        assert_eq!(val.len(), 8);
        assert!(train.iter().all(|i| !val.contains(i)));
        for k in 0..4 {
            assert_eq!(val.iter().filter(|&&i| labels[i] == synth::species_id(k)).count(), 2);
        }
        assert_eq!(split(&labels, 3), (train, val));
    }
}
