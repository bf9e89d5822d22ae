//! Masked-language-model training on normal sequences.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    backward_batch, forward_ids, log_softmax_row, Checkpoint, ForwardMode, MaskedExample, ModelConfig,
    ModelError, ModelParameters,
};
use crate::tokenizer::{TokenSequence, Vocab, MASK, PAD, SPECIAL_TOKENS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training corpus has no sequence with content tokens")]
    EmptyCorpus,
    #[error("loss became non-finite at step {step}")]
    DivergedLoss { step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoint sink failed: {0}")]
    Sink(String),
}

/// How selected positions are corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Every selected position becomes `[MASK]`, matching what scoring sees.
    #[default]
    MaskOnly,
    /// BERT's mix: 80% `[MASK]`, 10% random token, 10% unchanged.
    Bert801010,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    /// Linear warmup length; `None` means 10% of `steps`.
    pub warmup_steps: Option<u64>,
    pub seed: u64,
    pub mask_rate: f64,
    /// Emit a checkpoint every this many steps (0 disables).
    pub checkpoint_every: u64,
    pub corruption: Corruption,
    /// Drop duplicate sequences before training.
    pub dedup: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip (0 disables).
    pub clip_norm: f64,
    /// Fraction of the corpus held out for the final loss/accuracy report.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            steps: 1000,
            learning_rate: 1e-4,
            warmup_steps: None,
            seed: 0,
            mask_rate: 0.2,
            checkpoint_every: 0,
            corruption: Corruption::MaskOnly,
            dedup: false,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            holdout_fraction: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad("mask_rate must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn effective_warmup(&self) -> u64 {
        self.warmup_steps.unwrap_or(self.steps / 10)
    }

    fn learning_rate_at(&self, step: u64) -> f64 {
        let warmup = self.effective_warmup();
        if warmup > 0 && step <= warmup {
            self.learning_rate * step as f64 / warmup as f64
        } else {
            self.learning_rate
        }
    }
}

/// Selects each content position independently with probability
/// `mask_rate` and replaces it with `[MASK]`. When nothing is selected one
/// content position is chosen uniformly. CLS, SEP and PAD are never touched.
pub fn apply_mask<R: Rng>(seq: &TokenSequence, mask_rate: f64, rng: &mut R) -> MaskedExample {
    apply_corruption(seq, mask_rate, Corruption::MaskOnly, 0, rng)
}

/// [`apply_mask`] with a choice of corruption; `vocab_size` bounds the random
/// replacement tokens of [`Corruption::Bert801010`].
pub fn apply_corruption<R: Rng>(
    seq: &TokenSequence,
    mask_rate: f64,
    corruption: Corruption,
    vocab_size: usize,
    rng: &mut R,
) -> MaskedExample {
    assert!(seq.s_len >= 1, "masking needs at least one content position");
    let n = seq.ids.len();
    let mut ids = seq.ids.clone();
    let mut labels = vec![PAD; n];
    let mut mask_positions = vec![false; n];
    let content = seq.content_positions();
    let mut selected: Vec<usize> = content.clone().filter(|_| rng.random::<f64>() < mask_rate).collect();
    if selected.is_empty() {
        selected.push(rng.random_range(content));
    }
    for pos in selected {
        labels[pos] = ids[pos];
        mask_positions[pos] = true;
        ids[pos] = match corruption {
            Corruption::MaskOnly => MASK,
            Corruption::Bert801010 => {
                let r: f64 = rng.random();
                if r < 0.8 {
                    MASK
                } else if r < 0.9 && vocab_size > SPECIAL_TOKENS.len() {
                    rng.random_range(SPECIAL_TOKENS.len() as u32..vocab_size as u32)
                } else {
                    ids[pos]
                }
            }
        };
    }
    MaskedExample {
        ids,
        labels,
        mask_positions,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutReport {
    pub loss: f64,
    /// Top-1 accuracy of the prediction at masked positions.
    pub accuracy: f64,
    pub masked_positions: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    pub config: ModelConfig,
    pub steps: u64,
    /// Batch loss per step.
    pub loss_curve: Vec<(u64, f64)>,
    pub holdout: Option<HoldoutReport>,
}

impl TrainOutcome {
    pub fn into_checkpoint(self, vocab: &Vocab) -> Checkpoint {
        Checkpoint::new(self.config, vocab, self.steps, self.params)
    }
}

/// Evaluates masked-token loss and accuracy with fixed masks drawn from `seed`.
pub fn evaluate_masked(
    params: &ModelParameters,
    cfg: &ModelConfig,
    sequences: &[TokenSequence],
    mask_rate: f64,
    seed: u64,
) -> Result<HoldoutReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut count = 0usize;
    for seq in sequences.iter().filter(|s| s.s_len > 0) {
        let ex = apply_mask(seq, mask_rate, &mut rng);
        let out = forward_ids(params, cfg, &ex.ids, &vec![true; ex.ids.len()], ForwardMode::Eval)?;
        for (i, &m) in ex.mask_positions.iter().enumerate() {
            if !m {
                continue;
            }
            let lsm = log_softmax_row(out.logits.row(i));
            loss -= lsm[ex.labels[i] as usize];
            let argmax = lsm
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0;
            correct += usize::from(argmax == ex.labels[i] as usize);
            count += 1;
        }
    }
    if count == 0 {
        return Err(ModelError::NoMaskedPositions);
    }
    Ok(HoldoutReport {
        loss: loss / count as f64,
        accuracy: correct as f64 / count as f64,
        masked_positions: count,
    })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Trains from freshly initialized parameters. See [`train_with_sink`].
pub fn train(corpus: &[TokenSequence], model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with_sink(corpus, model_cfg, train_cfg, |_, _| Ok(()))
}

/// Runs `steps` Adam updates with linear warmup then a constant rate.
/// `sink` receives `(step, params)` every `checkpoint_every` steps.
pub fn train_with_sink<F>(
    corpus: &[TokenSequence],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut sink: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(u64, &ModelParameters) -> Result<(), TrainError>,
{
    train_cfg.validate()?;
    model_cfg.validate()?;

    let mut sequences: Vec<TokenSequence> = corpus.iter().filter(|s| s.s_len > 0).cloned().collect();
    if train_cfg.dedup {
        let mut seen = std::collections::HashSet::new();
        sequences.retain(|s| seen.insert(s.ids.clone()));
    }
    if sequences.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if let Some(s) = sequences.iter().find(|s| s.ids.len() > model_cfg.max_seq_len) {
        return Err(ModelError::SequenceTooLong {
            len: s.ids.len(),
            max: model_cfg.max_seq_len,
        }
        .into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    order.shuffle(&mut rng);
    let n_holdout = if sequences.len() >= 20 {
        ((sequences.len() as f64 * train_cfg.holdout_fraction) as usize).min(2000)
    } else {
        0
    };
    let holdout: Vec<TokenSequence> = order[..n_holdout].iter().map(|&i| sequences[i].clone()).collect();
    let mut train_idx: Vec<usize> = order[n_holdout..].to_vec();

    let mut params = ModelParameters::init(model_cfg, rng.random());
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len());
    let mut loss_curve = Vec::with_capacity(train_cfg.steps as usize);
    let mut cursor = train_idx.len();

    for step in 1..=train_cfg.steps {
        let mut batch = Vec::with_capacity(train_cfg.batch_size);
        let mut seeds = Vec::with_capacity(train_cfg.batch_size);
        for _ in 0..train_cfg.batch_size {
            if cursor == train_idx.len() {
                train_idx.shuffle(&mut rng);
                cursor = 0;
            }
            let seq = &sequences[train_idx[cursor]];
            cursor += 1;
            batch.push(apply_corruption(
                seq,
                train_cfg.mask_rate,
                train_cfg.corruption,
                model_cfg.vocab_size,
                &mut rng,
            ));
            seeds.push(rng.random::<u64>());
        }
        let dropout = (model_cfg.dropout_rate > 0.0).then_some(seeds.as_slice());
        let lg = backward_batch(&params, model_cfg, &batch, dropout)?;
        if !lg.loss.is_finite() {
            return Err(TrainError::DivergedLoss { step });
        }
        let mut grads = lg.grads;
        if train_cfg.clip_norm > 0.0 {
            let norm = grads.squared_norm().sqrt();
            if norm > train_cfg.clip_norm {
                grads.scale(train_cfg.clip_norm / norm);
            }
        }
        adam.step(&mut flat, &grads.to_flat(), train_cfg.learning_rate_at(step), train_cfg);
        params.set_flat(&flat);
        if !params.all_finite() {
            return Err(TrainError::DivergedLoss { step });
        }
        loss_curve.push((step, lg.loss));
        if step % 100 == 0 {
            log::info!("step {step} loss {:.4}", lg.loss);
        }
        if train_cfg.checkpoint_every > 0 && step % train_cfg.checkpoint_every == 0 && step != train_cfg.steps {
            let mut snapshot = params.clone();
            snapshot.round_to_f32();
            sink(step, &snapshot)?;
        }
    }

    // checkpoints store f32; keep the in-memory model identical to what a
    // reload would produce
    params.round_to_f32();
    sink(train_cfg.steps, &params)?;
    let holdout = if holdout.is_empty() {
        None
    } else {
        Some(evaluate_masked(&params, model_cfg, &holdout, train_cfg.mask_rate, train_cfg.seed ^ 0x5eed)?)
    };
    Ok(TrainOutcome {
        params,
        config: *model_cfg,
        steps: train_cfg.steps,
        loss_curve,
        holdout,
    })
}

/// Writes `step,loss` rows.
pub fn write_loss_csv(path: &Path, curve: &[(u64, f64)]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,loss")?;
    for (step, loss) in curve {
        writeln!(f, "{step},{loss}")?;
    }
    f.flush()
}
