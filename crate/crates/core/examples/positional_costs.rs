//! The three positional cost variants and how fusion mixes them into the
//! semantic cost.

use ndarray::array;
use otseq::costs::{fused_cost, positional_cost, semantic_cost, FusionConfig, PositionalConfig, PositionalVariant, SegmentSequence};

fn main() -> otseq::Result<()> {
    for variant in [PositionalVariant::Bounded, PositionalVariant::UniformPe, PositionalVariant::SinusoidPe] {
        let cfg = PositionalConfig { variant, ..PositionalConfig::default() };
        let po = positional_cost(4, 4, &cfg, 8)?;
        println!("{variant:?}:\n{:.3}\n", po.entries());
    }

    let a = SegmentSequence::new(array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])?;
    let b = a.reversed();
    let se = semantic_cost(&a, &b)?;
    let po = positional_cost(3, 3, &PositionalConfig::default(), a.dim())?;
    for alpha in [0.0, 0.4, 2.0] {
        let fused = fused_cost(&se, &po, &FusionConfig { alpha })?;
        println!("alpha {alpha}: fused cost\n{:.3}", fused.entries());
    }
    Ok(())
}
