use std::process::ExitCode;

use otseq::config::parse_config;
use otseq::experiment::run_experiment;

const USAGE: &str = "usage: otseq <solve|dist|bench|train|sweep> [--config path] [--section.key=value ...]";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" {
        eprintln!("{USAGE}");
        return ExitCode::from(2);
    }
    let cfg = match parse_config(&args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("otseq: {e}\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    match run_experiment(&cfg) {
        Ok(summary) => {
            for row in &summary.rows {
                println!("{:<12} {:>8} {:.4} ± {:.4}", row.metric, row.regime, row.accuracy, row.ci95);
            }
            for f in &summary.files {
                println!("wrote {}", f.display());
            }
            if summary.ok {
                ExitCode::SUCCESS
            } else {
                eprintln!("otseq: {} of {} solves did not converge", summary.nonconverged, summary.solves);
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("otseq: {e}");
            ExitCode::from(2)
        }
    }
}
