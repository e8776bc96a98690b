//! A sequence against its own reversal: the pooled baseline sees no
//! difference, DTW and the fused-cost OT distance do.

use otseq::costs::FusionConfig;
use otseq::experiment::heatmap_text;
use otseq::seqdist::{agg_distance, cmot_distance, dtw_distance, DistanceConfig};
use otseq::synth::{generate_class_bank, GeneratorConfig};

fn main() -> otseq::Result<()> {
    let bank = generate_class_bank(&GeneratorConfig::default())?;
    let a = bank.classes[0].clone();
    let b = a.reversed();

    println!("agg  = {:.6}", agg_distance(&a, &b)?);
    let dtw = dtw_distance(&a, &b)?;
    println!("dtw  = {:.4}, path {:?}", dtw.cost, dtw.path);
    for alpha in [0.0, 0.4, 1.6] {
        let cfg = DistanceConfig { fusion: FusionConfig { alpha }, ..DistanceConfig::default() };
        let same = cmot_distance(&a, &a, &cfg)?.value;
        let d = cmot_distance(&a, &b, &cfg)?;
        println!(
            "cmot alpha {alpha}: d(a, a) = {same:+.4}, d(a, rev a) = {:+.4}, lambda {:.2}, diagonal mass {:.3}",
            d.value,
            d.lambda,
            d.plan().diagonal_mass()
        );
    }

    let d = cmot_distance(&a, &b, &DistanceConfig::default())?;
    print!("{}", heatmap_text("plan between a and reverse(a)", d.plan().entries()));
    Ok(())
}
