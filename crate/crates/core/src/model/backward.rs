use ndarray::{s, Array1, Array2, Axis};
use rayon::prelude::*;

use super::forward::{forward_cached, gelu_grad, log_softmax_row, ForwardCache, LnCache};
use super::{ForwardMode, ModelConfig, ModelError, ModelParameters};
use crate::tokenizer::{TokenSequence, PAD};

/// Gradients share the parameter layout.
pub type Gradients = ModelParameters;

#[derive(Debug, Clone)]
pub struct LossAndGrads {
    /// Mean cross-entropy over all masked positions.
    pub loss: f64,
    pub grads: Gradients,
    pub masked_positions: usize,
}

/// One training example: corrupted input ids, original ids at masked
/// positions, and the mask flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedExample {
    pub ids: Vec<u32>,
    pub labels: Vec<u32>,
    pub mask_positions: Vec<bool>,
}

fn ln_backward(dy: &Array2<f64>, cache: &LnCache, gamma: &Array1<f64>, dgamma: &mut Array1<f64>, dbeta: &mut Array1<f64>) -> Array2<f64> {
    *dgamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbeta += &dy.sum_axis(Axis(0));
    let dxhat = dy * gamma;
    let n = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.dim());
    for i in 0..dy.nrows() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let sum_g = g.sum();
        let sum_gx = g.dot(&xh);
        let r = cache.rstd[i];
        let mut row = dx.row_mut(i);
        for j in 0..row.len() {
            row[j] = r / n * (n * g[j] - sum_g - xh[j] * sum_gx);
        }
    }
    dx
}

fn masked(dy: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => dy * m,
        None => dy,
    }
}

/// Backpropagates `d_logits` through one cached forward pass, accumulating
/// into `grads`.
fn backprop(params: &ModelParameters, cfg: &ModelConfig, cache: &ForwardCache, hidden: &Array2<f64>, d_logits: &Array2<f64>, grads: &mut Gradients) {
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    grads.mlm_output_bias += &d_logits.sum_axis(Axis(0));
    grads.token_embedding += &d_logits.t().dot(hidden);
    let mut dx = d_logits.dot(&params.token_embedding);

    for (l, (layer, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        let g = &mut grads.layers[l];
        // out = LN2(h1 + drop(ff))
        let d_res2 = ln_backward(&dx, &lc.ln2, &layer.ff_ln_gamma, &mut g.ff_ln_gamma, &mut g.ff_ln_beta);
        let d_ff = masked(d_res2.clone(), &lc.ff_mask);
        g.w_ff2 += &lc.ff_act.t().dot(&d_ff);
        g.b_ff2 += &d_ff.sum_axis(Axis(0));
        let mut d_pre = d_ff.dot(&layer.w_ff2.t());
        d_pre.zip_mut_with(&lc.ff_pre, |d, &u| *d *= gelu_grad(u));
        g.w_ff1 += &lc.h1.t().dot(&d_pre);
        g.b_ff1 += &d_pre.sum_axis(Axis(0));
        let d_h1 = d_res2 + d_pre.dot(&layer.w_ff1.t());

        // h1 = LN1(x + drop(attn))
        let d_res1 = ln_backward(&d_h1, &lc.ln1, &layer.attn_ln_gamma, &mut g.attn_ln_gamma, &mut g.attn_ln_beta);
        let d_attn = masked(d_res1.clone(), &lc.attn_mask);
        g.w_o += &lc.context.t().dot(&d_attn);
        g.b_o += &d_attn.sum_axis(Axis(0));
        let d_ctx = d_attn.dot(&layer.w_o.t());

        let mut dq = Array2::zeros(lc.q.dim());
        let mut dk = Array2::zeros(lc.k.dim());
        let mut dv = Array2::zeros(lc.v.dim());
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let probs = &lc.probs[h];
            let dropped = match &lc.probs_mask[h] {
                Some(m) => probs * m,
                None => probs.clone(),
            };
            let d_ctx_h = d_ctx.slice(cols);
            dv.slice_mut(cols).assign(&dropped.t().dot(&d_ctx_h));
            let d_probs = masked(d_ctx_h.dot(&lc.v.slice(cols).t()), &lc.probs_mask[h]);
            let mut d_scores = Array2::zeros(probs.dim());
            for i in 0..probs.nrows() {
                let p = probs.row(i);
                let dp = d_probs.row(i);
                let inner = p.dot(&dp);
                let mut row = d_scores.row_mut(i);
                for j in 0..row.len() {
                    row[j] = p[j] * (dp[j] - inner) * scale;
                }
            }
            dq.slice_mut(cols).assign(&d_scores.dot(&lc.k.slice(cols)));
            dk.slice_mut(cols).assign(&d_scores.t().dot(&lc.q.slice(cols)));
        }
        g.w_q += &lc.input.t().dot(&dq);
        g.b_q += &dq.sum_axis(Axis(0));
        g.w_k += &lc.input.t().dot(&dk);
        g.b_k += &dk.sum_axis(Axis(0));
        g.w_v += &lc.input.t().dot(&dv);
        g.b_v += &dv.sum_axis(Axis(0));
        dx = d_res1 + dq.dot(&layer.w_q.t()) + dk.dot(&layer.w_k.t()) + dv.dot(&layer.w_v.t());
    }

    let d_ln = masked(dx, &cache.emb_mask);
    let d_emb = ln_backward(&d_ln, &cache.emb_ln, &params.emb_ln_gamma, &mut grads.emb_ln_gamma, &mut grads.emb_ln_beta);
    for (pos, &id) in cache.ids.iter().enumerate() {
        let row = d_emb.row(pos);
        let mut te = grads.token_embedding.row_mut(id as usize);
        te += &row;
        let mut pe = grads.position_embedding.row_mut(pos);
        pe += &row;
    }
}

fn check_labels(ids: &[u32], labels: &[u32], mask_positions: &[bool], vocab: usize) -> Result<usize, ModelError> {
    if labels.len() != ids.len() || mask_positions.len() != ids.len() {
        return Err(ModelError::ShapeMismatch("labels and mask must match sequence length".into()));
    }
    for (&l, &m) in labels.iter().zip(mask_positions) {
        if m && l as usize >= vocab {
            return Err(ModelError::ShapeMismatch(format!("label {l} outside vocabulary")));
        }
    }
    Ok(mask_positions.iter().filter(|&&m| m).count())
}

/// Forward + backward for one example, with the cross-entropy of each masked
/// position weighted by `weight`. Returns the unweighted loss sum.
fn example_grads(
    params: &ModelParameters,
    cfg: &ModelConfig,
    ex: &MaskedExample,
    mode: ForwardMode,
    weight: f64,
) -> Result<(f64, Gradients), ModelError> {
    let attention: Vec<bool> = ex.ids.iter().map(|&id| id != PAD).collect();
    let (out, cache) = forward_cached(params, cfg, &ex.ids, &attention, mode)?;
    let mut d_logits = Array2::zeros(out.logits.dim());
    let mut loss_sum = 0.0;
    for (i, (&label, &m)) in ex.labels.iter().zip(&ex.mask_positions).enumerate() {
        if !m {
            continue;
        }
        let lsm = log_softmax_row(out.logits.row(i));
        loss_sum -= lsm[label as usize];
        let mut row = d_logits.row_mut(i);
        for (j, d) in row.iter_mut().enumerate() {
            *d = weight * lsm[j].exp();
        }
        row[label as usize] -= weight;
    }
    let mut grads = Gradients::zeros(cfg);
    backprop(params, cfg, &cache, &out.hidden, &d_logits, &mut grads);
    Ok((loss_sum, grads))
}

/// Exact gradients of the mean masked-position cross-entropy for one
/// sequence, with dropout disabled.
pub fn backward(
    params: &ModelParameters,
    cfg: &ModelConfig,
    seq: &TokenSequence,
    labels: &[u32],
    mask_positions: &[bool],
) -> Result<LossAndGrads, ModelError> {
    let ex = MaskedExample {
        ids: seq.ids.clone(),
        labels: labels.to_vec(),
        mask_positions: mask_positions.to_vec(),
    };
    backward_batch(params, cfg, std::slice::from_ref(&ex), None)
}

/// Gradients of the mean cross-entropy over every masked position in the
/// batch. With `dropout_seeds`, example `i` runs in training mode with seed
/// `dropout_seeds[i]`. Examples are processed in parallel and reduced in
/// input order, so the result does not depend on scheduling.
pub fn backward_batch(
    params: &ModelParameters,
    cfg: &ModelConfig,
    examples: &[MaskedExample],
    dropout_seeds: Option<&[u64]>,
) -> Result<LossAndGrads, ModelError> {
    let mut total_masked = 0;
    for ex in examples {
        total_masked += check_labels(&ex.ids, &ex.labels, &ex.mask_positions, cfg.vocab_size)?;
    }
    if total_masked == 0 {
        return Err(ModelError::NoMaskedPositions);
    }
    let weight = 1.0 / total_masked as f64;
    let parts: Vec<Result<(f64, Gradients), ModelError>> = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mode = match dropout_seeds {
                Some(seeds) => ForwardMode::Train { seed: seeds[i] },
                None => ForwardMode::Eval,
            };
            example_grads(params, cfg, ex, mode, weight)
        })
        .collect();
    let mut grads = Gradients::zeros(cfg);
    let mut loss_sum = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss_sum += l;
        grads.add_scaled(&g, 1.0);
    }
    Ok(LossAndGrads {
        loss: loss_sum * weight,
        grads,
        masked_positions: total_masked,
    })
}
