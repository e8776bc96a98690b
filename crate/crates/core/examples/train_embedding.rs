//! Learns a linear embedding that suppresses nuisance coordinates, then
//! compares held-out accuracy before and after.

use otseq::fewshot::{evaluate_benchmark, Episode};
use otseq::seqdist::{CmotMetric, DistanceConfig};
use otseq::synth::{EpisodeSampler, EpisodeShape, GeneratorConfig, Regime};
use otseq::train::{embed, train_loop, Checkpoint, LinearEmbedding, TrainConfig};

fn accuracy(episodes: &[Episode], emb: &LinearEmbedding, cfg: &DistanceConfig) -> otseq::Result<f64> {
    let embedded: Vec<Episode> =
        episodes.iter().map(|e| e.try_map_sequences(|s| embed(s, emb))).collect::<otseq::Result<_>>()?;
    Ok(evaluate_benchmark(&embedded, &CmotMetric::new(cfg.clone()))?.mean_accuracy)
}

fn main() -> otseq::Result<()> {
    let gen = GeneratorConfig { regime: Regime::ContentDominated, nuisance_dims: 8, ..GeneratorConfig::default() };
    let shape = EpisodeShape { n_way: 2, k_shot: 1, q: 1 };
    let held_out = EpisodeSampler::new(GeneratorConfig { rng_seed: 7, ..gen.clone() }, shape)?.take(300)?;
    let dcfg = DistanceConfig::default();

    let init = LinearEmbedding::identity(gen.raw_dim());
    println!("before: {:.3}", accuracy(&held_out, &init, &dcfg)?);

    let mut sampler = EpisodeSampler::new(gen, shape)?;
    let schedule = TrainConfig::default();
    let out = train_loop(&mut sampler, init, &schedule, &dcfg)?;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    println!("loss {:.3} -> {:.3}", mean(&out.losses[..100]), mean(&out.losses[out.losses.len() - 100..]));
    println!("after:  {:.3}", accuracy(&held_out, &out.embedding, &dcfg)?);

    // Column norms show which raw coordinates the embedding kept.
    let norms: Vec<String> =
        out.embedding.weight.columns().into_iter().map(|c| format!("{:.2}", c.dot(&c).sqrt())).collect();
    println!("column norms (8 signal, 8 nuisance): {}", norms.join(" "));

    let path = std::env::temp_dir().join("otseq-example-checkpoint.json");
    Checkpoint::new(&out.embedding, sampler.produced(), sampler.rng_state()).save(&path)?;
    println!("checkpoint written to {}", path.display());
    Ok(())
}
