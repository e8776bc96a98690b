//! Synthetic prototype-plus-noise sequences for the reversal experiment.
//!
//! Each base class is an ordered tuple of unit-length prototype vectors.
//! Instances add isotropic Gaussian noise. Reversing an instance either keeps
//! its label (content-dominated) or maps it to a separate reversed-class label
//! (ordering-dominated), which separates order-blind from order-rigid metrics.

use ndarray::{concatenate, Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::costs::SegmentSequence;
use crate::error::{Error, Result};
use crate::fewshot::{Episode, Label, LabeledSequence};

/// RNG stream used for episode sampling; stream 0 builds the class bank.
pub const EPISODE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// A reversed instance keeps its class label.
    ContentDominated,
    /// A reversed instance belongs to its own reversed-class label.
    OrderingDominated,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ContentDominated => "content",
            Self::OrderingDominated => "ordering",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_classes: usize,
    pub m_segments: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub regime: Regime,
    pub rng_seed: u64,
    /// Ordering-dominated episodes draw labels as (class, reversed class) pairs.
    pub pair_reversals: bool,
    /// Extra class-independent Gaussian coordinates appended to every segment.
    pub nuisance_dims: usize,
    pub nuisance_sigma: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            m_segments: 4,
            dim: 8,
            noise_sigma: 0.05,
            regime: Regime::OrderingDominated,
            rng_seed: 42,
            pair_reversals: true,
            nuisance_dims: 0,
            nuisance_sigma: 1.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig(format!("n_classes must be >= 2, got {}", self.n_classes)));
        }
        if self.m_segments == 0 || self.dim == 0 {
            return Err(Error::InvalidConfig("m_segments and dim must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.nuisance_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise scales must be nonnegative".into()));
        }
        if self.m_segments < 2 && self.regime == Regime::OrderingDominated {
            return Err(Error::InvalidConfig("ordering-dominated labels need m_segments >= 2".into()));
        }
        Ok(())
    }

    /// Number of distinct labels available to an episode.
    pub fn label_count(&self) -> usize {
        match self.regime {
            Regime::ContentDominated => self.n_classes,
            Regime::OrderingDominated => 2 * self.n_classes,
        }
    }

    /// Raw segment width including nuisance coordinates.
    pub fn raw_dim(&self) -> usize {
        self.dim + self.nuisance_dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBank {
    pub classes: Vec<SegmentSequence>,
    pub rng_seed: u64,
}

impl ClassBank {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Samples `n_classes` ordered tuples of unit-normalized Gaussian prototypes.
///
/// Tuples with repeated prototypes, palindromic order, or a duplicate of an
/// earlier class are redrawn.
pub fn generate_class_bank(cfg: &GeneratorConfig) -> Result<ClassBank> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut classes: Vec<SegmentSequence> = Vec::with_capacity(cfg.n_classes);
    while classes.len() < cfg.n_classes {
        let mut protos: Array2<f64> = Array2::from_shape_fn((cfg.m_segments, cfg.dim), |_| StandardNormal.sample(&mut rng));
        for mut row in protos.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row /= norm;
        }
        let candidate = SegmentSequence::new(protos)?;
        let distinct = (0..cfg.m_segments).all(|i| (0..i).all(|j| candidate.segment(i) != candidate.segment(j)));
        let palindrome = cfg.m_segments > 1 && candidate.reversed() == candidate;
        if !distinct || palindrome || classes.contains(&candidate) {
            log::debug!("rejected degenerate prototype tuple");
            continue;
        }
        classes.push(candidate);
    }
    Ok(ClassBank { classes, rng_seed: cfg.rng_seed })
}

/// A noisy draw of one class's prototype tuple.
pub fn sample_sequence<R: Rng + ?Sized>(
    bank: &ClassBank,
    class_index: usize,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<SegmentSequence> {
    let protos = bank
        .classes
        .get(class_index)
        .ok_or(Error::IndexOutOfRange { index: class_index, len: bank.len() })?;
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let noisy = protos.segments().mapv(|x| x + noise.sample(rng));
    SegmentSequence::new(noisy)
}

pub fn reverse_sequence(a: &SegmentSequence) -> SegmentSequence {
    a.reversed()
}

fn sample_instance<R: Rng + ?Sized>(
    bank: &ClassBank,
    cfg: &GeneratorConfig,
    base: usize,
    reversed: bool,
    rng: &mut R,
) -> Result<SegmentSequence> {
    let mut seq = sample_sequence(bank, base, cfg.noise_sigma, rng)?;
    if reversed {
        seq = reverse_sequence(&seq);
    }
    if cfg.nuisance_dims == 0 {
        return Ok(seq);
    }
    let nuisance = Normal::new(0.0, cfg.nuisance_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let extra = Array2::from_shape_fn((seq.len(), cfg.nuisance_dims), |_| nuisance.sample(rng));
    let joined = concatenate(Axis(1), &[seq.segments().view(), extra.view()]).expect("row counts agree");
    SegmentSequence::new(joined)
}

/// Base class and orientation behind an episode label.
pub fn decode_label(regime: Regime, label: Label) -> (usize, Option<bool>) {
    match regime {
        Regime::ContentDominated => (label, None),
        Regime::OrderingDominated => (label / 2, Some(label % 2 == 1)),
    }
}

/// The label of the reversal partner under the ordering-dominated labelling.
pub fn reversal_partner(label: Label) -> Label {
    label ^ 1
}

fn choose_labels<R: Rng + ?Sized>(cfg: &GeneratorConfig, n_way: usize, rng: &mut R) -> Vec<Label> {
    let mut labels = match cfg.regime {
        Regime::ContentDominated => index::sample(rng, cfg.n_classes, n_way).into_vec(),
        Regime::OrderingDominated if cfg.pair_reversals => {
            let bases = index::sample(rng, cfg.n_classes, n_way.div_ceil(2)).into_vec();
            let mut labels: Vec<Label> = bases.iter().flat_map(|b| [2 * b, 2 * b + 1]).collect();
            if n_way % 2 == 1 {
                // Odd way: the last base contributes a single orientation.
                let drop = labels.len() - 2 + usize::from(rng.random_bool(0.5));
                labels.remove(drop);
            }
            labels
        }
        Regime::OrderingDominated => index::sample(rng, 2 * cfg.n_classes, n_way).into_vec(),
    };
    labels.shuffle(rng);
    labels
}

/// Builds one N-way K-shot episode with `q` queries per class.
pub fn build_episode<R: Rng + ?Sized>(
    bank: &ClassBank,
    cfg: &GeneratorConfig,
    n_way: usize,
    k_shot: usize,
    q: usize,
    rng: &mut R,
) -> Result<Episode> {
    if bank.len() != cfg.n_classes {
        return Err(Error::InvalidConfig(format!(
            "bank has {} classes but config says {}",
            bank.len(),
            cfg.n_classes
        )));
    }
    if n_way > cfg.label_count() {
        return Err(Error::InsufficientClasses { needed: n_way, available: cfg.label_count() });
    }
    let labels = choose_labels(cfg, n_way, rng);
    let draw = |label: Label, rng: &mut R| -> Result<LabeledSequence> {
        let (base, orientation) = decode_label(cfg.regime, label);
        let reversed = orientation.unwrap_or_else(|| rng.random_bool(0.5));
        Ok(LabeledSequence::new(sample_instance(bank, cfg, base, reversed, rng)?, label))
    };
    let mut support = Vec::with_capacity(n_way * k_shot);
    for &label in &labels {
        for _ in 0..k_shot {
            support.push(draw(label, rng)?);
        }
    }
    let mut query = Vec::with_capacity(n_way * q);
    for &label in &labels {
        for _ in 0..q {
            query.push(draw(label, rng)?);
        }
    }
    Episode::new(support, query, n_way, k_shot, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeShape {
    pub n_way: usize,
    pub k_shot: usize,
    pub q: usize,
}

impl Default for EpisodeShape {
    fn default() -> Self {
        Self { n_way: 5, k_shot: 1, q: 1 }
    }
}

/// Seeded stream of episodes over one class bank.
#[derive(Debug, Clone)]
pub struct EpisodeSampler {
    pub bank: ClassBank,
    pub config: GeneratorConfig,
    pub shape: EpisodeShape,
    rng: ChaCha8Rng,
    produced: usize,
}

impl EpisodeSampler {
    /// Builds the bank from `config` and seeds the episode stream from the
    /// same seed on a separate ChaCha stream.
    pub fn new(config: GeneratorConfig, shape: EpisodeShape) -> Result<Self> {
        let bank = generate_class_bank(&config)?;
        Ok(Self::with_bank(bank, config, shape, EPISODE_STREAM))
    }

    pub fn with_bank(bank: ClassBank, config: GeneratorConfig, shape: EpisodeShape, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(stream);
        Self { bank, config, shape, rng, produced: 0 }
    }

    pub fn next_episode(&mut self) -> Result<Episode> {
        let ep = build_episode(&self.bank, &self.config, self.shape.n_way, self.shape.k_shot, self.shape.q, &mut self.rng)?;
        self.produced += 1;
        Ok(ep)
    }

    pub fn take(&mut self, count: usize) -> Result<Vec<Episode>> {
        (0..count).map(|_| self.next_episode()).collect()
    }

    pub fn produced(&self) -> usize {
        self.produced
    }

    pub fn rng_state(&self) -> RngDescriptor {
        RngDescriptor::of(&self.rng)
    }
}

/// Enough of a ChaCha8 state to resume it: seed, stream and word position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngDescriptor {
    pub algorithm: String,
    pub seed: Vec<u8>,
    pub stream: u64,
    pub word_pos: String,
}

impl RngDescriptor {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        Self {
            algorithm: "chacha8".into(),
            seed: rng.get_seed().to_vec(),
            stream: rng.get_stream(),
            // u128 does not fit JSON numbers.
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let seed: [u8; 32] = self
            .seed
            .clone()
            .try_into()
            .map_err(|_| Error::InvalidConfig("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad rng word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(regime: Regime) -> GeneratorConfig {
        GeneratorConfig { regime, ..Default::default() }
    }

    #[test]
    fn bank_is_deterministic_and_unit_norm() {
        let c = GeneratorConfig { n_classes: 2, m_segments: 4, dim: 8, ..Default::default() };
        let a = generate_class_bank(&c).unwrap();
        assert_eq!(a, generate_class_bank(&c).unwrap());
        assert_eq!(a.len(), 2);
        for class in &a.classes {
            assert_eq!((class.len(), class.dim()), (4, 8));
            for row in class.segments().rows() {
                assert!((row.dot(&row) - 1.0).abs() < 1e-12);
            }
        }
        let other = generate_class_bank(&GeneratorConfig { rng_seed: 43, ..c }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn noiseless_sample_equals_prototypes() {
        let bank = generate_class_bank(&GeneratorConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_sequence(&bank, 3, 0.0, &mut rng).unwrap(), bank.classes[3]);
        assert!(matches!(sample_sequence(&bank, 10, 0.0, &mut rng), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn same_rng_state_gives_same_draw() {
        let bank = generate_class_bank(&GeneratorConfig::default()).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = r1.clone();
        assert_eq!(sample_sequence(&bank, 1, 0.3, &mut r1).unwrap(), sample_sequence(&bank, 1, 0.3, &mut r2).unwrap());
    }

    #[test]
    fn noise_magnitude_matches_chi_mean() {
        let bank = generate_class_bank(&GeneratorConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut total = 0.0;
        let draws = 1000;
        for _ in 0..draws {
            let s = sample_sequence(&bank, 0, 0.1, &mut rng).unwrap();
            let diff = s.segments() - bank.classes[0].segments();
            total += diff.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / 4.0;
        }
        let mean = total / draws as f64;
        let target = 0.1 * 8f64.sqrt();
        assert!((mean - target).abs() < 0.1 * target, "mean deviation {mean}");
    }

    #[test]
    fn reversal_is_an_involution() {
        let bank = generate_class_bank(&GeneratorConfig::default()).unwrap();
        let a = &bank.classes[0];
        assert_eq!(reverse_sequence(&reverse_sequence(a)), *a);
        assert_eq!(reverse_sequence(a).segment(0), a.segment(3));
        let single = SegmentSequence::from_rows(vec![vec![1.0, 2.0]]).unwrap();
        assert_eq!(reverse_sequence(&single), single);
    }

    #[test]
    fn ordering_regime_doubles_label_space() {
        let c = cfg(Regime::OrderingDominated);
        assert_eq!(c.label_count(), 20);
        let bank = generate_class_bank(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ep = build_episode(&bank, &c, 20, 1, 1, &mut rng).unwrap();
        assert_eq!(ep.classes().len(), 20);
        assert!(matches!(build_episode(&bank, &c, 21, 1, 1, &mut rng), Err(Error::InsufficientClasses { .. })));
        let content = cfg(Regime::ContentDominated);
        assert!(build_episode(&bank, &content, 11, 1, 1, &mut rng).is_err());
    }

    #[test]
    fn ordering_labels_follow_orientation() {
        let c = GeneratorConfig { noise_sigma: 0.0, ..cfg(Regime::OrderingDominated) };
        let bank = generate_class_bank(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let ep = build_episode(&bank, &c, 5, 2, 1, &mut rng).unwrap();
            for item in ep.support().iter().chain(ep.query()) {
                let (base, reversed) = decode_label(c.regime, item.label);
                let expected = if reversed.unwrap() { bank.classes[base].reversed() } else { bank.classes[base].clone() };
                assert_eq!(item.sequence, expected);
            }
            // Paired draws: 5-way holds two full class/reversal pairs.
            let labels = ep.classes();
            let pairs = labels.iter().filter(|l| labels.contains(&reversal_partner(**l))).count();
            assert_eq!(pairs, 4);
        }
    }

    #[test]
    fn content_regime_mixes_orientations_under_one_label() {
        let c = GeneratorConfig { noise_sigma: 0.0, ..cfg(Regime::ContentDominated) };
        let bank = generate_class_bank(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut forward, mut backward) = (0, 0);
        for _ in 0..50 {
            let ep = build_episode(&bank, &c, 3, 2, 2, &mut rng).unwrap();
            assert_eq!((ep.support().len(), ep.query().len()), (6, 6));
            for item in ep.support().iter().chain(ep.query()) {
                if item.sequence == bank.classes[item.label] {
                    forward += 1;
                } else {
                    assert_eq!(item.sequence, bank.classes[item.label].reversed());
                    backward += 1;
                }
            }
        }
        assert!(forward > 200 && backward > 200, "{forward} / {backward}");
    }

    #[test]
    fn nuisance_columns_are_appended() {
        let c = GeneratorConfig { nuisance_dims: 3, noise_sigma: 0.0, ..cfg(Regime::ContentDominated) };
        let mut sampler = EpisodeSampler::new(c.clone(), EpisodeShape { n_way: 2, k_shot: 1, q: 1 }).unwrap();
        let ep = sampler.next_episode().unwrap();
        assert_eq!(ep.support()[0].sequence.dim(), 11);
        assert_eq!(c.raw_dim(), 11);
    }

    #[test]
    fn sampler_is_deterministic_and_resumable() {
        let c = GeneratorConfig::default();
        let mut a = EpisodeSampler::new(c.clone(), EpisodeShape::default()).unwrap();
        let mut b = EpisodeSampler::new(c, EpisodeShape::default()).unwrap();
        assert_eq!(a.take(5).unwrap(), b.take(5).unwrap());
        assert_eq!(a.produced(), 5);

        let desc = a.rng_state();
        let json = serde_json::to_string(&desc).unwrap();
        let restored = serde_json::from_str::<RngDescriptor>(&json).unwrap().restore().unwrap();
        let mut resumed = EpisodeSampler::with_bank(a.bank.clone(), a.config.clone(), a.shape, 0);
        resumed.rng = restored;
        assert_eq!(resumed.next_episode().unwrap(), a.next_episode().unwrap());
    }

    #[test]
    fn bank_round_trips_through_json() {
        let bank = generate_class_bank(&GeneratorConfig { n_classes: 3, ..Default::default() }).unwrap();
        let json = serde_json::to_string(&bank).unwrap();
        assert_eq!(serde_json::from_str::<ClassBank>(&json).unwrap(), bank);
    }
}
