use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ClassificationResult, ClassifierError};
use crate::SpeciesId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesAp {
    pub species_id: SpeciesId,
    pub average_precision: f64,
    pub positives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_species: Vec<SpeciesAp>,
    pub mean_average_precision: f64,
    pub top1_accuracy: f64,
    /// Threshold applied to the top-1 score for precision and recall.
    pub threshold: f64,
    /// Correct accepted top-1 predictions over all accepted ones (1 when none accepted).
    pub precision: f64,
    /// Correct accepted top-1 predictions over all clips.
    pub recall: f64,
    /// Species that were scored but have no positive clip; excluded from the mean.
    pub excluded_species: Vec<SpeciesId>,
}

/// Ranking metrics of a batch of predictions against their true labels.
///
/// Average precision for a species ranks every clip by that species' score
/// (missing scores count as 0, ties keep input order) and averages the
/// precision at each positive. The mean covers species with at least one
/// positive.
pub fn evaluate(
    predictions: &[ClassificationResult],
    truth: &[SpeciesId],
    threshold: f64,
) -> Result<EvalReport, ClassifierError> {
    if predictions.len() != truth.len() {
        return Err(ClassifierError::LengthMismatch { predictions: predictions.len(), truth: truth.len() });
    }
    if predictions.is_empty() {
        return Err(ClassifierError::InvalidParameter("nothing to evaluate".into()));
    }
    let labelled: BTreeSet<&SpeciesId> = truth.iter().collect();
    let scored: BTreeSet<&SpeciesId> =
        predictions.iter().flat_map(|p| p.ranking.iter().map(|r| &r.species_id)).collect();
    let excluded_species = scored.difference(&labelled).map(|s| (*s).clone()).collect();

    let per_species: Vec<SpeciesAp> = labelled
        .iter()
        .map(|&species| {
            let scores: Vec<f64> = predictions.iter().map(|p| p.score_of(species).unwrap_or(0.0)).collect();
            let positives: Vec<bool> = truth.iter().map(|t| t == species).collect();
            SpeciesAp {
                species_id: species.clone(),
                average_precision: average_precision(&scores, &positives),
                positives: positives.iter().filter(|&&p| p).count(),
            }
        })
        .collect();
    let mean_average_precision =
        per_species.iter().map(|s| s.average_precision).sum::<f64>() / per_species.len() as f64;

    let n = predictions.len() as f64;
    let correct = |p: &ClassificationResult, t: &SpeciesId| p.top().is_some_and(|r| &r.species_id == t);
    let top1 = predictions.iter().zip(truth).filter(|(p, t)| correct(p, t)).count();
    let accepted: Vec<_> = predictions
        .iter()
        .zip(truth)
        .filter(|(p, _)| p.top().is_some_and(|r| r.score >= threshold))
        .collect();
    let accepted_correct = accepted.iter().filter(|(p, t)| correct(p, t)).count();

    Ok(EvalReport {
        per_species,
        mean_average_precision,
        top1_accuracy: top1 as f64 / n,
        threshold,
        precision: if accepted.is_empty() { 1.0 } else { accepted_correct as f64 / accepted.len() as f64 },
        recall: accepted_correct as f64 / n,
        excluded_species,
    })
}

fn average_precision(scores: &[f64], positives: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let hit_ranks: Vec<u64> = order
        .iter()
        .enumerate()
        .filter(|(_, &i)| positives[i])
        .map(|(rank, _)| rank as u64 + 1)
        .collect();
    if hit_ranks.is_empty() {
        return 0.0;
    }
    exact_mean_precision(&hit_ranks).unwrap_or_else(|| {
        let sum: f64 = hit_ranks.iter().enumerate().map(|(h, &r)| (h + 1) as f64 / r as f64).sum();
        sum / hit_ranks.len() as f64
    })
}

/// Mean of `(h+1)/rank_h` as a reduced fraction, rounded once at the end.
/// Returns `None` when the fraction outgrows 128 bits.
fn exact_mean_precision(hit_ranks: &[u64]) -> Option<f64> {
    fn gcd(mut a: u128, mut b: u128) -> u128 {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    }
    let (mut num, mut den) = (0u128, 1u128);
    for (h, &rank) in hit_ranks.iter().enumerate() {
        let (n, d) = ((h + 1) as u128, rank as u128);
        num = num.checked_mul(d)?.checked_add(n.checked_mul(den)?)?;
        den = den.checked_mul(d)?;
        let g = gcd(num, den);
        (num, den) = (num / g, den / g);
    }
    den = den.checked_mul(hit_ranks.len() as u128)?;
    let g = gcd(num, den);
    let (num, den) = (num / g, den / g);
    // both sides must convert to f64 without rounding for a single final rounding
    (num < (1 << 53) && den < (1 << 53)).then(|| num as f64 / den as f64)
}
