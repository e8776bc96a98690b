//! Episodic N-way K-shot classification with class-mean distances.
//!
//! A query is scored against each class by the mean distance to that
//! class's K support sequences; probabilities are the softmax of the negated
//! means and the prediction is the nearest class.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::SegmentSequence;
use crate::error::{Error, Result};
use crate::seqdist::SequenceMetric;

pub type Label = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub sequence: SegmentSequence,
    pub label: Label,
}

impl LabeledSequence {
    pub fn new(sequence: SegmentSequence, label: Label) -> Self {
        Self { sequence, label }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    support: Vec<LabeledSequence>,
    query: Vec<LabeledSequence>,
    n_way: usize,
    k_shot: usize,
    q_per_class: usize,
}

impl Episode {
    /// Checks that the support holds exactly `k_shot` instances of `n_way`
    /// distinct labels and that every query label appears in the support.
    pub fn new(
        support: Vec<LabeledSequence>,
        query: Vec<LabeledSequence>,
        n_way: usize,
        k_shot: usize,
        q_per_class: usize,
    ) -> Result<Self> {
        if n_way == 0 || k_shot == 0 {
            return Err(Error::InvalidEpisode(format!("n_way and k_shot must be positive, got {n_way}/{k_shot}")));
        }
        let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
        for s in &support {
            *counts.entry(s.label).or_default() += 1;
        }
        if counts.len() != n_way {
            return Err(Error::InvalidEpisode(format!("support has {} labels, expected {n_way}", counts.len())));
        }
        if let Some((label, count)) = counts.iter().find(|(_, c)| **c != k_shot) {
            return Err(Error::InvalidEpisode(format!("label {label} has {count} support instances, expected {k_shot}")));
        }
        if let Some(q) = query.iter().find(|q| !counts.contains_key(&q.label)) {
            return Err(Error::InvalidEpisode(format!("query label {} not in support", q.label)));
        }
        Ok(Self { support, query, n_way, k_shot, q_per_class })
    }

    pub fn support(&self) -> &[LabeledSequence] {
        &self.support
    }

    pub fn query(&self) -> &[LabeledSequence] {
        &self.query
    }

    pub fn n_way(&self) -> usize {
        self.n_way
    }

    pub fn k_shot(&self) -> usize {
        self.k_shot
    }

    pub fn q_per_class(&self) -> usize {
        self.q_per_class
    }

    /// Class labels in order of first appearance in the support list.
    pub fn classes(&self) -> Vec<Label> {
        let mut seen = Vec::with_capacity(self.n_way);
        for s in &self.support {
            if !seen.contains(&s.label) {
                seen.push(s.label);
            }
        }
        seen
    }

    /// Applies `f` to every sequence, keeping labels and shape.
    pub fn try_map_sequences<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&SegmentSequence) -> Result<SegmentSequence>,
    {
        let map = |items: &[LabeledSequence]| -> Result<Vec<LabeledSequence>> {
            items.iter().map(|l| Ok(LabeledSequence::new(f(&l.sequence)?, l.label))).collect()
        };
        Ok(Self { support: map(&self.support)?, query: map(&self.query)?, ..*self })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub classes: Vec<Label>,
    pub per_class_mean_distance: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted_label: Label,
    pub true_label: Label,
}

impl PredictionRecord {
    pub fn correct(&self) -> bool {
        self.predicted_label == self.true_label
    }
}

/// Mean distance from `query` to the support instances of each class, in
/// [`Episode::classes`] order.
pub fn class_mean_distance(query: &SegmentSequence, episode: &Episode, metric: &dyn SequenceMetric) -> Result<Vec<f64>> {
    episode
        .classes()
        .into_iter()
        .map(|label| {
            let members: Vec<_> = episode.support.iter().filter(|s| s.label == label).collect();
            if members.is_empty() {
                return Err(Error::EmptyClass { label });
            }
            let total = members.iter().try_fold(0.0, |acc, s| Ok::<_, Error>(acc + metric.distance(&s.sequence, query)?))?;
            Ok(total / members.len() as f64)
        })
        .collect()
}

/// Softmax of the negated distances, shifted by the minimum distance.
pub fn predict_proba(distances: &[f64]) -> Vec<f64> {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = distances.iter().map(|d| (min - d).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Index of the smallest distance; ties go to the lowest index.
pub fn nearest_class(distances: &[f64]) -> usize {
    let mut best = 0;
    for (i, d) in distances.iter().enumerate().skip(1) {
        if *d < distances[best] {
            best = i;
        }
    }
    if distances.iter().filter(|d| **d == distances[best]).count() > 1 {
        log::debug!("argmin tie among class distances {distances:?}; choosing index {best}");
    }
    best
}

pub fn predict(query: &LabeledSequence, episode: &Episode, metric: &dyn SequenceMetric) -> Result<PredictionRecord> {
    let classes = episode.classes();
    let distances = class_mean_distance(&query.sequence, episode, metric)?;
    let probabilities = predict_proba(&distances);
    let predicted_label = classes[nearest_class(&distances)];
    Ok(PredictionRecord {
        classes,
        per_class_mean_distance: distances,
        probabilities,
        predicted_label,
        true_label: query.label,
    })
}

/// `-log p(y = true | x)` for one query given its class-mean distances.
pub fn cross_entropy(distances: &[f64], true_index: usize) -> f64 {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let log_norm = distances.iter().map(|d| (min - d).exp()).sum::<f64>().ln();
    distances[true_index] - min + log_norm
}

/// Summed cross-entropy over the query set.
pub fn episode_loss(episode: &Episode, metric: &dyn SequenceMetric) -> Result<f64> {
    let classes = episode.classes();
    episode.query.iter().try_fold(0.0, |acc, q| {
        let distances = class_mean_distance(&q.sequence, episode, metric)?;
        let truth = classes.iter().position(|l| *l == q.label).expect("validated at construction");
        Ok(acc + cross_entropy(&distances, truth))
    })
}

/// Fraction of queries whose nearest class is the true one.
pub fn episode_accuracy(episode: &Episode, metric: &dyn SequenceMetric) -> Result<f64> {
    if episode.query.is_empty() {
        return Err(Error::InvalidEpisode("episode has no queries".into()));
    }
    let mut correct = 0usize;
    for q in &episode.query {
        if predict(q, episode, metric)?.correct() {
            correct += 1;
        }
    }
    Ok(correct as f64 / episode.query.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub metric: String,
    pub mean_accuracy: f64,
    /// `1.96 * s / sqrt(n)` with the `n - 1` sample standard deviation.
    pub ci95_halfwidth: f64,
    pub per_episode_accuracies: Vec<f64>,
    pub episode_count: usize,
    pub config_snapshot: serde_json::Value,
}

/// Mean episode accuracy with a 95% normal-approximation interval.
///
/// Episodes are scored in parallel; aggregates are reduced in episode order
/// so the report does not depend on scheduling.
pub fn evaluate_benchmark<'a, I>(episodes: I, metric: &dyn SequenceMetric) -> Result<BenchmarkReport>
where
    I: IntoIterator<Item = &'a Episode>,
{
    let episodes: Vec<&Episode> = episodes.into_iter().collect();
    if episodes.len() < 2 {
        return Err(Error::TooFewEpisodes(episodes.len()));
    }
    let accuracies = episodes
        .par_iter()
        .map(|e| episode_accuracy(e, metric))
        .collect::<Result<Vec<f64>>>()?;
    let (mean, halfwidth) = mean_and_ci95(&accuracies);
    Ok(BenchmarkReport {
        metric: metric.name().to_string(),
        mean_accuracy: mean,
        ci95_halfwidth: halfwidth,
        episode_count: accuracies.len(),
        per_episode_accuracies: accuracies,
        config_snapshot: serde_json::Value::Null,
    })
}

pub fn mean_and_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}
