// Duplicate lines are scored once; the cache survives a save/load cycle and
// refuses a different scoring setup.

use logmlm::cache::ScoreCache;
use logmlm::ingest::{Label, LogRecord, LogSource};
use logmlm::model::{Checkpoint, ModelConfig, ModelParameters};
use logmlm::scorer::{score_records, MaskMode, ScoringContext};
use logmlm::tokenizer::Vocab;

fn main() {
    let vocab = Vocab::from_tokens(["served", "block", "BLK", "to", "IP", "deleting", "file"]).unwrap();
    let cfg = ModelConfig::tiny(vocab.len());
    let params = ModelParameters::init(&cfg, 1);
    let context = |k| ScoringContext::new(Checkpoint::new(cfg, &vocab, 0, params.clone()), vocab.clone(), k, MaskMode::Token).unwrap();

    let texts = ["served block BLK to IP", "deleting block BLK file", "served block BLK to IP"];
    let records: Vec<LogRecord> = (0..300)
        .map(|i| LogRecord {
            raw: String::new(),
            normalized: texts[i % 3].to_string(),
            source: LogSource::Generic,
            group_id: None,
            label: Label::Normal,
            line_no: i + 1,
        })
        .collect();

    let ctx = context(5);
    let cache = ScoreCache::for_context(&ctx);
    score_records(&ctx, Some(&cache), &records).unwrap();
    println!("{:?}, {} forward passes for {} lines", cache.stats(), ctx.forward_passes(), records.len());

    let path = std::env::temp_dir().join("logmlm-example-cache.txt");
    cache.save(&path).unwrap();
    let reloaded = ScoreCache::load(&path, ctx.binding()).unwrap();
    println!("reloaded {} entries", reloaded.len());
    match ScoreCache::load(&path, context(3).binding()) {
        Ok(_) => println!("unexpected: cache accepted for k = 3"),
        Err(e) => println!("k = 3: {e}"),
    }
    std::fs::remove_file(path).ok();
}
