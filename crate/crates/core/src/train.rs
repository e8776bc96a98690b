//! A linear segment embedding trained by episodic cross-entropy, with
//! gradients taken through the Sinkhorn solve.
//!
//! For a support/query pair the chain is
//!
//! ```text
//! dL/dW = sum_pairs dL/d dis * sum_pq (d dis / d C[p,q]) * e_pq (a_p - b_q)^T
//! ```
//!
//! where `d dis / d C` is the optimal plan (plus the median-heuristic term
//! when `lambda` depends on `C`) and `e_pq` is the unit vector from the
//! embedded query segment to the embedded support segment. The positional
//! cost does not depend on the embedding and contributes nothing; the bias
//! cancels inside every difference and receives a zero gradient.

use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::SegmentSequence;
use crate::error::{shape_mismatch, Error, Result};
use crate::fewshot::{cross_entropy, predict_proba, Episode};
use crate::ot::{array_to_rows, rows_to_array};
use crate::seqdist::{cmot_distance, CmotDistance, DistanceConfig};
use crate::synth::{EpisodeSampler, RngDescriptor};

/// Zero-distance pairs below this norm get a zero subgradient.
const ZERO_DISTANCE: f64 = 1e-300;

/// Consecutive over-threshold episodes before training is declared divergent.
const DIVERGENCE_PATIENCE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEmbedding {
    /// `D_out x D_in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearEmbedding {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() == 0 || weight.ncols() == 0 {
            return Err(Error::InvalidConfig("embedding needs D_out >= 1 and D_in >= 1".into()));
        }
        if weight.nrows() != bias.len() {
            return Err(shape_mismatch("embedding bias", weight.nrows(), bias.len()));
        }
        if weight.iter().chain(bias.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("embedding has non-finite entries".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(dim: usize) -> Self {
        Self { weight: Array2::eye(dim), bias: Array1::zeros(dim) }
    }

    pub fn zeros(d_out: usize, d_in: usize) -> Self {
        Self { weight: Array2::zeros((d_out, d_in)), bias: Array1::zeros(d_out) }
    }

    pub fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.nrows()
    }

    /// Frobenius norm over weight and bias together.
    pub fn norm(&self) -> f64 {
        (self.weight.iter().chain(self.bias.iter()).map(|x| x * x).sum::<f64>()).sqrt()
    }
}

/// Per-segment affine map `W v + b`, order preserved.
pub fn embed(raw: &SegmentSequence, emb: &LinearEmbedding) -> Result<SegmentSequence> {
    if raw.dim() != emb.d_in() {
        return Err(shape_mismatch("embed (input dim)", emb.d_in(), raw.dim()));
    }
    SegmentSequence::new(raw.segments().dot(&emb.weight.t()) + &emb.bias)
}

/// Episodic loss and its gradient with respect to `(W, b)`, packed as a
/// [`LinearEmbedding`].
pub fn loss_gradient(episode: &Episode, emb: &LinearEmbedding, cfg: &DistanceConfig) -> Result<(f64, LinearEmbedding)> {
    let embedded = episode.try_map_sequences(|s| embed(s, emb))?;
    let classes = episode.classes();
    let support = episode.support();
    let query = episode.query();

    let pairs: Vec<(usize, usize)> = (0..query.len()).flat_map(|j| (0..support.len()).map(move |i| (i, j))).collect();
    let solved: Vec<CmotDistance> = pairs
        .par_iter()
        .map(|&(i, j)| cmot_distance(&embedded.support()[i].sequence, &embedded.query()[j].sequence, cfg))
        .collect::<Result<_>>()?;
    for d in solved.iter().filter(|d| !d.solve.converged) {
        log::warn!("Sinkhorn did not converge (residual {:.3e}); gradient is approximate", d.solve.final_residual);
    }

    // Class-mean distances, softmax and per-pair loss weights.
    let class_of: Vec<usize> = support.iter().map(|s| classes.iter().position(|l| *l == s.label).unwrap()).collect();
    let counts: Vec<f64> = (0..classes.len()).map(|n| class_of.iter().filter(|c| **c == n).count() as f64).collect();
    let mut loss = 0.0;
    let mut pair_weight = vec![0.0; pairs.len()];
    for (j, q) in query.iter().enumerate() {
        let mut means = vec![0.0; classes.len()];
        for i in 0..support.len() {
            means[class_of[i]] += solved[j * support.len() + i].value / counts[class_of[i]];
        }
        let truth = classes.iter().position(|l| *l == q.label).expect("validated episode");
        loss += cross_entropy(&means, truth);
        let probs = predict_proba(&means);
        for i in 0..support.len() {
            let n = class_of[i];
            let indicator = if n == truth { 1.0 } else { 0.0 };
            pair_weight[j * support.len() + i] = (indicator - probs[n]) / counts[n];
        }
    }

    let contributions: Vec<Array2<f64>> = pairs
        .par_iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let cost_grad = solved[k].cost_gradient();
            pair_weight_gradient(
                &support[i].sequence,
                &query[j].sequence,
                &embedded.support()[i].sequence,
                &embedded.query()[j].sequence,
                &cost_grad,
            ) * pair_weight[k]
        })
        .collect();
    let mut weight = Array2::zeros(emb.weight.raw_dim());
    for c in &contributions {
        weight += c;
    }
    Ok((loss, LinearEmbedding { weight, bias: Array1::zeros(emb.d_out()) }))
}

/// `sum_pq G[p,q] * e_pq (a_p - b_q)^T` for one pair.
fn pair_weight_gradient(
    raw_a: &SegmentSequence,
    raw_b: &SegmentSequence,
    emb_a: &SegmentSequence,
    emb_b: &SegmentSequence,
    cost_grad: &Array2<f64>,
) -> Array2<f64> {
    let mut grad = Array2::zeros((emb_a.dim(), raw_a.dim()));
    for ((p, q), g) in cost_grad.indexed_iter() {
        let diff = &emb_a.segment(p) - &emb_b.segment(q);
        let norm = diff.dot(&diff).sqrt();
        if norm < ZERO_DISTANCE {
            log::debug!("zero semantic distance at ({p}, {q}); using subgradient 0");
            continue;
        }
        let unit = diff / norm;
        let raw_diff = &raw_a.segment(p) - &raw_b.segment(q);
        let outer = unit.view().insert_axis(ndarray::Axis(1)).dot(&raw_diff.view().insert_axis(ndarray::Axis(0)));
        grad.scaled_add(*g, &outer);
    }
    grad
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplies the learning rate every `decay_every` episodes.
    pub decay_factor: f64,
    pub decay_every: usize,
    pub total_episodes: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, decay_factor: 0.2, decay_every: 2000, total_episodes: 2000, rng_seed: 42 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::InvalidConfig(format!("decay factor must lie in (0, 1], got {}", self.decay_factor)));
        }
        if self.decay_every == 0 || self.total_episodes == 0 {
            return Err(Error::InvalidConfig("decay_every and total_episodes must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, episode: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((episode / self.decay_every) as i32)
    }
}

/// Anything that can hand out training episodes.
pub trait EpisodeSource {
    fn next_episode(&mut self) -> Result<Episode>;
}

impl EpisodeSource for EpisodeSampler {
    fn next_episode(&mut self) -> Result<Episode> {
        EpisodeSampler::next_episode(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub embedding: LinearEmbedding,
    pub losses: Vec<f64>,
}

/// Plain SGD over `tcfg.total_episodes` episodes with step decay.
///
/// Aborts with [`Error::Diverged`] once the loss has stayed above ten times
/// the first episode's loss for 100 consecutive episodes.
pub fn train_loop<S: EpisodeSource + ?Sized>(
    source: &mut S,
    emb: LinearEmbedding,
    tcfg: &TrainConfig,
    dcfg: &DistanceConfig,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    let mut emb = emb;
    let mut losses = Vec::with_capacity(tcfg.total_episodes);
    let mut over_threshold = 0usize;
    for t in 0..tcfg.total_episodes {
        let episode = source.next_episode()?;
        let (loss, grad) = loss_gradient(&episode, &emb, dcfg)?;
        let initial = *losses.first().unwrap_or(&loss);
        if loss > 10.0 * initial {
            over_threshold += 1;
            if over_threshold >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged { episode: t, loss, initial });
            }
        } else {
            over_threshold = 0;
        }
        losses.push(loss);

        let step = tcfg.learning_rate_at(t);
        if step != 0.0 {
            emb.weight.scaled_add(-step, &grad.weight);
            emb.bias.scaled_add(-step, &grad.bias);
        }
    }
    Ok(TrainOutcome { embedding: emb, losses })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Row-major `D_out x D_in`.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub episode: usize,
    pub rng: RngDescriptor,
}

impl Checkpoint {
    pub fn new(emb: &LinearEmbedding, episode: usize, rng: RngDescriptor) -> Self {
        Self { weight: array_to_rows(&emb.weight), bias: emb.bias.to_vec(), episode, rng }
    }

    pub fn embedding(&self) -> Result<LinearEmbedding> {
        let weight = rows_to_array(self.weight.clone()).map_err(Error::InvalidConfig)?;
        LinearEmbedding::new(weight, Array1::from(self.bias.clone()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
