// Forward pass, a finite-difference check of one gradient, and a
// checkpoint round trip.

use logmlm::model::{backward, forward, mlm_loss, Checkpoint, ForwardMode, ModelConfig, ModelParameters};
use logmlm::tokenizer::{encode, Vocab, MASK, PAD};

fn main() {
    let vocab = Vocab::from_tokens(["node", "alpha", "beta", "up", "down", "##s"]).unwrap();
    let cfg = ModelConfig::tiny(vocab.len());
    let params = ModelParameters::init(&cfg, 3);
    println!("{} parameters", params.num_parameters());

    let mut seq = encode("node alpha up", &vocab, cfg.max_seq_len).sequence;
    let mut labels = vec![PAD; seq.len()];
    let mut masked = vec![false; seq.len()];
    labels[2] = seq.ids[2];
    masked[2] = true;
    seq.ids[2] = MASK;

    let attention = vec![true; seq.len()];
    let out = forward(&params, &cfg, &seq, &attention, ForwardMode::Eval).unwrap();
    println!("logits {:?}, loss {:.4} (ln V = {:.4})", out.logits.dim(), mlm_loss(&out, &labels, &masked).unwrap(), (vocab.len() as f64).ln());

    let grads = backward(&params, &cfg, &seq, &labels, &masked).unwrap().grads.to_flat();
    let flat = params.to_flat();
    let i = grads.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
    let eps = 1e-4;
    let loss_with = |delta: f64| {
        let mut theta = flat.clone();
        theta[i] += delta;
        let mut p = params.clone();
        p.set_flat(&theta);
        let out = forward(&p, &cfg, &seq, &attention, ForwardMode::Eval).unwrap();
        mlm_loss(&out, &labels, &masked).unwrap()
    };
    let numeric = (loss_with(eps) - loss_with(-eps)) / (2.0 * eps);
    println!("parameter {i}: analytic {:.8}, numeric {numeric:.8}", grads[i]);

    let path = std::env::temp_dir().join("logmlm-example.ckpt");
    let ckpt = Checkpoint::new(cfg, &vocab, 0, params);
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path, &vocab).unwrap();
    println!("checkpoint {} bytes, reload equal: {}", ckpt.to_bytes().len(), back.to_bytes() == ckpt.to_bytes());
    let other = Vocab::from_tokens(["node"]).unwrap();
    println!("load with another vocab: {}", Checkpoint::load(&path, &other).unwrap_err());
    std::fs::remove_file(path).ok();
}
