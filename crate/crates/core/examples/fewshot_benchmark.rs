//! Nearest-class-mean evaluation of the three distances on both synthetic
//! regimes.

use otseq::costs::FusionConfig;
use otseq::fewshot::evaluate_benchmark;
use otseq::seqdist::{AggMetric, CmotMetric, DistanceConfig, DtwMetric, SequenceMetric};
use otseq::synth::{EpisodeSampler, EpisodeShape, GeneratorConfig, Regime};

fn main() -> otseq::Result<()> {
    let episodes_per_regime = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let cmot = CmotMetric::new(DistanceConfig { fusion: FusionConfig { alpha: 0.8 }, ..DistanceConfig::default() });
    let metrics: [&dyn SequenceMetric; 3] = [&cmot, &AggMetric, &DtwMetric];

    for regime in [Regime::ContentDominated, Regime::OrderingDominated] {
        let gen = GeneratorConfig { regime, ..GeneratorConfig::default() };
        let episodes = EpisodeSampler::new(gen, EpisodeShape::default())?.take(episodes_per_regime)?;
        println!("{} regime, {} episodes of 5-way 1-shot", regime.as_str(), episodes.len());
        for metric in metrics {
            let r = evaluate_benchmark(&episodes, metric)?;
            println!("  {:<5} {:.3} +/- {:.3}", r.metric, r.mean_accuracy, r.ci95_halfwidth);
        }
    }
    let (solves, capped) = cmot.convergence_stats();
    println!("{solves} Sinkhorn solves, {capped} hit the iteration cap");
    Ok(())
}
