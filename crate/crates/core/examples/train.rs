// Train the tiny configuration on synthetic normal logs.
//
//   cargo run --release --example train -- [steps]

use logmlm::ingest::NormalizationRuleSet;
use logmlm::model::ModelConfig;
use logmlm::synthgen::{generate_normal, to_records, LogGrammar};
use logmlm::tokenizer::{encode, train_wordpiece, WordPieceConfig};
use logmlm::trainer::{train, TrainConfig};

fn main() {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let grammar = LogGrammar::default_benchmark();
    let lines: Vec<String> = to_records(&generate_normal(&grammar, 5000, 0).unwrap(), &NormalizationRuleSet::default())
        .into_iter()
        .map(|r| r.normalized)
        .collect();
    let vocab = train_wordpiece(lines.iter().map(String::as_str), WordPieceConfig::default()).unwrap();
    let model_cfg = ModelConfig::tiny(vocab.len());
    let corpus: Vec<_> = lines.iter().map(|l| encode(l, &vocab, model_cfg.max_seq_len).sequence).collect();

    let train_cfg = TrainConfig {
        steps,
        batch_size: 64,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let outcome = train(&corpus, &model_cfg, &train_cfg).unwrap();
    for (step, loss) in outcome.loss_curve.iter().step_by((steps as usize / 10).max(1)) {
        println!("step {step:>5} loss {loss:.4}");
    }
    if let Some(h) = &outcome.holdout {
        println!("holdout: loss {:.4}, accuracy {:.4} over {} masked tokens", h.loss, h.accuracy, h.masked_positions);
    }
}
