//! Any closure can be benchmarked: here, cosine distance between pooled
//! means next to the built-in metrics.

use otseq::costs::SegmentSequence;
use otseq::fewshot::evaluate_benchmark;
use otseq::seqdist::{AggMetric, FnMetric};
use otseq::synth::{EpisodeSampler, EpisodeShape, GeneratorConfig, Regime};

fn cosine(a: &SegmentSequence, b: &SegmentSequence) -> f64 {
    let (x, y) = (a.mean(), b.mean());
    1.0 - x.dot(&y) / (x.dot(&x).sqrt() * y.dot(&y).sqrt()).max(1e-12)
}

fn main() -> otseq::Result<()> {
    let gen = GeneratorConfig { regime: Regime::ContentDominated, noise_sigma: 0.2, ..GeneratorConfig::default() };
    let episodes = EpisodeSampler::new(gen, EpisodeShape { n_way: 5, k_shot: 3, q: 2 })?.take(200)?;
    let cos = FnMetric::new("cosine", cosine);
    for report in [evaluate_benchmark(&episodes, &cos)?, evaluate_benchmark(&episodes, &AggMetric)?] {
        println!("{:<7} {:.3} +/- {:.3}", report.metric, report.mean_accuracy, report.ci95_halfwidth);
    }
    Ok(())
}
