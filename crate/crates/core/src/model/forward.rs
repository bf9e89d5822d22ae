use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, ModelParameters};
use crate::tokenizer::TokenSequence;

pub(crate) const LN_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// No dropout; fully deterministic.
    Eval,
    /// Dropout active, masks drawn from a generator seeded with `seed`.
    Train { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[seq_len × vocab_size]`
    pub logits: Array2<f64>,
    /// `[seq_len × d_model]`, output of the last encoder layer.
    pub hidden: Array2<f64>,
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax_row(row: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    row.mapv(|x| x - lse)
}

pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.axis_iter_mut(Axis(0)).zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rr = *r;
        row.mapv_inplace(|v| v * rr);
    }
    let y = &xhat * gamma + beta;
    (y, LnCache { xhat, rstd })
}

pub(crate) struct Dropout {
    rng: Option<ChaCha8Rng>,
    rate: f64,
}

impl Dropout {
    fn new(mode: ForwardMode, rate: f64) -> Self {
        let rng = match mode {
            ForwardMode::Train { seed } if rate > 0.0 => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        Self { rng, rate }
    }

    /// Returns a scaled keep-mask, or `None` when dropout is inactive.
    fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f64>> {
        let rate = self.rate;
        let rng = self.rng.as_mut()?;
        let keep = 1.0 / (1.0 - rate);
        Some(Array2::from_shape_fn((rows, cols), |_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        }))
    }
}

fn apply(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

pub(crate) struct LayerCache {
    pub input: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Attention probabilities per head, before dropout.
    pub probs: Vec<Array2<f64>>,
    pub probs_mask: Vec<Option<Array2<f64>>>,
    pub context: Array2<f64>,
    pub attn_mask: Option<Array2<f64>>,
    pub ln1: LnCache,
    pub h1: Array2<f64>,
    pub ff_pre: Array2<f64>,
    pub ff_act: Array2<f64>,
    pub ff_mask: Option<Array2<f64>>,
    pub ln2: LnCache,
}

pub(crate) struct ForwardCache {
    pub ids: Vec<u32>,
    pub emb_ln: LnCache,
    pub emb_mask: Option<Array2<f64>>,
    pub layers: Vec<LayerCache>,
}

fn check_inputs(
    params: &ModelParameters,
    cfg: &ModelConfig,
    ids: &[u32],
    attention_mask: &[bool],
) -> Result<(), ModelError> {
    if ids.len() > cfg.max_seq_len {
        return Err(ModelError::SequenceTooLong {
            len: ids.len(),
            max: cfg.max_seq_len,
        });
    }
    if ids.is_empty() {
        return Err(ModelError::ShapeMismatch("empty sequence".into()));
    }
    if attention_mask.len() != ids.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "attention mask has {} entries for {} tokens",
            attention_mask.len(),
            ids.len()
        )));
    }
    if !attention_mask.iter().any(|&m| m) {
        return Err(ModelError::ShapeMismatch("attention mask hides every position".into()));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::ShapeMismatch(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let te = params.token_embedding.dim();
    if te != (cfg.vocab_size, cfg.d_model)
        || params.position_embedding.dim() != (cfg.max_seq_len, cfg.d_model)
        || params.layers.len() != cfg.n_layers
        || params.layers.first().is_some_and(|l| l.w_ff1.dim() != (cfg.d_model, cfg.d_ff))
    {
        return Err(ModelError::ShapeMismatch("parameters do not match config".into()));
    }
    Ok(())
}

pub(crate) fn forward_cached(
    params: &ModelParameters,
    cfg: &ModelConfig,
    ids: &[u32],
    attention_mask: &[bool],
    mode: ForwardMode,
) -> Result<(ForwardOutput, ForwardCache), ModelError> {
    check_inputs(params, cfg, ids, attention_mask)?;
    let t = ids.len();
    let d = cfg.d_model;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dropout = Dropout::new(mode, cfg.dropout_rate);

    let mut emb = Array2::zeros((t, d));
    for (i, &id) in ids.iter().enumerate() {
        let mut row = emb.row_mut(i);
        row += &params.token_embedding.row(id as usize);
        row += &params.position_embedding.row(i);
    }
    let (x, emb_ln) = layer_norm(&emb, &params.emb_ln_gamma, &params.emb_ln_beta);
    let emb_mask = dropout.mask(t, d);
    let mut x = apply(x, &emb_mask);

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for layer in &params.layers {
        let q = x.dot(&layer.w_q) + &layer.b_q;
        let k = x.dot(&layer.w_k) + &layer.b_k;
        let v = x.dot(&layer.w_v) + &layer.b_v;
        let mut context = Array2::zeros((t, d));
        let mut probs = Vec::with_capacity(cfg.n_heads);
        let mut probs_mask = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for (j, &visible) in attention_mask.iter().enumerate() {
                if !visible {
                    scores.column_mut(j).fill(f64::NEG_INFINITY);
                }
            }
            for mut row in scores.axis_iter_mut(Axis(0)) {
                let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                row.mapv_inplace(|x| (x - max).exp());
                let sum = row.sum();
                row /= sum;
            }
            let pm = dropout.mask(t, t);
            let dropped = match &pm {
                Some(m) => &scores * m,
                None => scores.clone(),
            };
            context.slice_mut(cols).assign(&dropped.dot(&v.slice(cols)));
            probs.push(scores);
            probs_mask.push(pm);
        }
        let attn = context.dot(&layer.w_o) + &layer.b_o;
        let attn_mask = dropout.mask(t, d);
        let (h1, ln1) = layer_norm(
            &(&x + &apply(attn, &attn_mask)),
            &layer.attn_ln_gamma,
            &layer.attn_ln_beta,
        );
        let ff_pre = h1.dot(&layer.w_ff1) + &layer.b_ff1;
        let ff_act = ff_pre.mapv(gelu);
        let ff = ff_act.dot(&layer.w_ff2) + &layer.b_ff2;
        let ff_mask = dropout.mask(t, d);
        let (out, ln2) = layer_norm(
            &(&h1 + &apply(ff, &ff_mask)),
            &layer.ff_ln_gamma,
            &layer.ff_ln_beta,
        );
        layers.push(LayerCache {
            input: std::mem::replace(&mut x, out),
            q,
            k,
            v,
            probs,
            probs_mask,
            context,
            attn_mask,
            ln1,
            h1,
            ff_pre,
            ff_act,
            ff_mask,
            ln2,
        });
    }

    let logits = x.dot(&params.token_embedding.t()) + &params.mlm_output_bias;
    Ok((
        ForwardOutput { logits, hidden: x },
        ForwardCache {
            ids: ids.to_vec(),
            emb_ln,
            emb_mask,
            layers,
        },
    ))
}

/// Runs the encoder and MLM head over one sequence. Positions whose
/// `attention_mask` entry is `false` (padding) are excluded as attention keys.
pub fn forward(
    params: &ModelParameters,
    cfg: &ModelConfig,
    seq: &TokenSequence,
    attention_mask: &[bool],
    mode: ForwardMode,
) -> Result<ForwardOutput, ModelError> {
    forward_ids(params, cfg, &seq.ids, attention_mask, mode)
}

pub fn forward_ids(
    params: &ModelParameters,
    cfg: &ModelConfig,
    ids: &[u32],
    attention_mask: &[bool],
    mode: ForwardMode,
) -> Result<ForwardOutput, ModelError> {
    forward_cached(params, cfg, ids, attention_mask, mode).map(|(out, _)| out)
}

/// Mean cross-entropy `-log softmax(logits[i])[labels[i]]` over masked positions.
pub fn mlm_loss(output: &ForwardOutput, labels: &[u32], mask_positions: &[bool]) -> Result<f64, ModelError> {
    let rows = output.logits.nrows();
    if labels.len() != rows || mask_positions.len() != rows {
        return Err(ModelError::ShapeMismatch(format!(
            "{} labels / {} mask flags for {rows} positions",
            labels.len(),
            mask_positions.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, (&label, &masked)) in labels.iter().zip(mask_positions).enumerate() {
        if !masked {
            continue;
        }
        let row = output.logits.row(i);
        if label as usize >= row.len() {
            return Err(ModelError::ShapeMismatch(format!("label {label} outside vocabulary")));
        }
        total -= log_softmax_row(row)[label as usize];
        count += 1;
    }
    if count == 0 {
        return Err(ModelError::NoMaskedPositions);
    }
    Ok(total / count as f64)
}

/// Row-wise softmax.
#[cfg(test)]
pub(crate) fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let lsm = log_softmax_row(row.view());
        ndarray::Zip::from(&mut row).and(&lsm).for_each(|o, &l| *o = l.exp());
    }
    out
}
