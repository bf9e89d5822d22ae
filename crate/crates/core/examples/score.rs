// Per-position scores of normal and corrupted lines under a briefly
// trained model.

use logmlm::ingest::NormalizationRuleSet;
use logmlm::model::{Checkpoint, ModelConfig};
use logmlm::scorer::{MaskMode, ScoringContext};
use logmlm::synthgen::{generate_normal, to_records, LogGrammar};
use logmlm::tokenizer::{encode, train_wordpiece, WordPieceConfig};
use logmlm::trainer::{train, TrainConfig};

fn main() {
    let lines: Vec<String> = to_records(&generate_normal(&LogGrammar::default_benchmark(), 3000, 0).unwrap(), &NormalizationRuleSet::default())
        .into_iter()
        .map(|r| r.normalized)
        .collect();
    let vocab = train_wordpiece(lines.iter().map(String::as_str), WordPieceConfig::default()).unwrap();
    let cfg = ModelConfig::tiny(vocab.len());
    let corpus: Vec<_> = lines.iter().map(|l| encode(l, &vocab, cfg.max_seq_len).sequence).collect();
    let tc = TrainConfig { steps: 400, batch_size: 64, learning_rate: 2e-3, ..TrainConfig::default() };
    let ckpt = train(&corpus, &cfg, &tc).unwrap().into_checkpoint(&vocab);

    let normal = lines[0].clone();
    let mut words: Vec<&str> = normal.split(' ').collect();
    let last = words.len() - 1;
    let unseen = words.iter().map(|w| if *w == "block" { "qzx" } else { w }).collect::<Vec<_>>().join(" ");
    words.swap(last - 1, last);
    let swapped = words.join(" ");

    for mode in [MaskMode::Token, MaskMode::Key] {
        let ctx = ScoringContext::new(Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap(), vocab.clone(), 5, mode).unwrap();
        println!("mask mode {mode}");
        for line in [&normal, &unseen, &swapped] {
            let (seq, _) = ctx.encode(line);
            let (s, _) = ctx.score_text(line).unwrap();
            println!("  {line}\n    error {:.3} prob {:.3}", s.abnormal_error, s.abnormal_prob);
            let cells: Vec<String> = ctx
                .score_positions(&seq)
                .unwrap()
                .iter()
                .map(|p| format!("{}:{:.2}/{:.2}", vocab.token(seq.ids[p.position]).unwrap(), p.error, p.prob))
                .collect();
            println!("    {}", cells.join(" "));
        }
    }
}
