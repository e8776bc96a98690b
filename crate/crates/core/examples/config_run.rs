//! Drives a run from the same key-value configuration the binary accepts.

use otseq::config::{parse_config_text, resolve, Command};
use otseq::experiment::run_experiment;

const CONFIG: &str = "
[generator]
regime = content
noise_sigma = 0.1

[episode]
count = 100
n_way = 5

sweep.parameter = lambda
sweep.values = 5, 7, 9
";

fn main() -> otseq::Result<()> {
    let out = std::env::temp_dir().join("otseq-example-sweep");
    let file = parse_config_text(CONFIG)?;
    let flags = vec![("run.output_dir".to_string(), out.display().to_string())];
    let cfg = resolve(Command::Sweep, &file, &flags)?;
    for key in ["generator.regime", "episode.count", "run.output_dir", "fusion.alpha"] {
        println!("{key:<18} = {:<10} ({:?})", cfg.settings[key].value, cfg.provenance(key).unwrap());
    }

    let summary = run_experiment(&cfg)?;
    for row in &summary.rows {
        println!(
            "{} = {}: {} accuracy {:.3} +/- {:.3}",
            row.sweep_parameter.as_deref().unwrap_or("-"),
            row.sweep_value.unwrap_or(f64::NAN),
            row.metric,
            row.accuracy,
            row.ci95
        );
    }
    for f in &summary.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
