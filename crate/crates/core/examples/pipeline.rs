// Every stage through the library entry points the CLI uses, on a reduced
// synthetic benchmark. Outputs land in the given directory.
//
//   cargo run --release --example pipeline -- /tmp/logmlm-run

use std::path::PathBuf;

use logmlm::cli::{cmd_e2e, RunConfig, SynthConfig};
use logmlm::trainer::TrainConfig;

fn main() {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("logmlm-pipeline"));
    let base = RunConfig::synthetic_benchmark();
    let cfg = RunConfig {
        output_dir: out.clone(),
        synth: SynthConfig {
            train_lines: 4000,
            test_lines: 500,
            ..base.synth.clone()
        },
        train: TrainConfig {
            steps: 500,
            ..base.train.clone()
        },
        ..base
    };
    let summary = cmd_e2e(&cfg, true).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code())
    });
    // targets in the e2e summary refer to the full-size benchmark
    for (name, r) in [("abnormal_error", &summary.report.abnormal_error), ("abnormal_prob", &summary.report.abnormal_prob)] {
        println!("{name:<15} auroc {:.4} best_f1 {:.4}", r.auroc, r.best_f1);
    }
    println!("outputs in {}", out.display());
}
