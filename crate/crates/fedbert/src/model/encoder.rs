//! Encoder forward pass, loss, and analytic gradients.
//!
//! Math conventions: a linear layer computes `y = x·W + b` with `W` stored
//! row-major as `[d_in, d_out]`; attention uses additive masking, adding -1e9
//! to pre-softmax scores at padded key positions, which underflows to an
//! exact zero attention weight after the shifted softmax. Because padded
//! positions contribute exact zeros, appending extra PAD columns (with a
//! correspondingly extended position embedding) leaves logits unchanged.

use crate::tokenizer::TokenSequence;

use super::params::{GradientSet, Layout, ParameterSet};
use super::{EncoderConfig, ModelError};

const MASK_SCORE: f64 = -1e9;

fn gelu(x: f64) -> f64 {
    let c0 = (2.0 / std::f64::consts::PI).sqrt();
    let u = c0 * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let c0 = (2.0 / std::f64::consts::PI).sqrt();
    let u = c0 * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c0 * (1.0 + 3.0 * 0.044715 * x * x)
}

/// `y[r] = x[r]·W + b` over `rows` rows.
fn linear(x: &[f64], rows: usize, d_in: usize, w: &[f64], bias: &[f64], d_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * d_out];
    for r in 0..rows {
        let xr = &x[r * d_in..(r + 1) * d_in];
        let yr = &mut out[r * d_out..(r + 1) * d_out];
        yr.copy_from_slice(bias);
        for (i, &xv) in xr.iter().enumerate() {
            let wr = &w[i * d_out..(i + 1) * d_out];
            for j in 0..d_out {
                yr[j] += xv * wr[j];
            }
        }
    }
    out
}

/// Backward of [`linear`]: accumulates into `dw`/`db`, returns `dx`.
fn linear_backward(
    x: &[f64],
    rows: usize,
    d_in: usize,
    w: &[f64],
    d_out: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d_in];
    for r in 0..rows {
        let xr = &x[r * d_in..(r + 1) * d_in];
        let dyr = &dy[r * d_out..(r + 1) * d_out];
        for j in 0..d_out {
            db[j] += dyr[j];
        }
        let dxr = &mut dx[r * d_in..(r + 1) * d_in];
        for i in 0..d_in {
            let wr = &w[i * d_out..(i + 1) * d_out];
            let dwr = &mut dw[i * d_out..(i + 1) * d_out];
            let xv = xr[i];
            let mut acc = 0.0;
            for j in 0..d_out {
                acc += dyr[j] * wr[j];
                dwr[j] += xv * dyr[j];
            }
            dxr[i] = acc;
        }
    }
    dx
}

/// Normalizes each row of `x`; records `xhat` and `1/std` for backward.
fn layer_norm(
    x: &[f64],
    rows: usize,
    d: usize,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std[r] = istd;
        for i in 0..d {
            let xh = (xr[i] - mean) * istd;
            xhat[r * d + i] = xh;
            y[r * d + i] = gain[i] * xh + bias[i];
        }
    }
    (y, xhat, inv_std)
}

fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    rows: usize,
    d: usize,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    let dn = d as f64;
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xhr = &xhat[r * d..(r + 1) * d];
        let mut sum_dxh = 0.0;
        let mut sum_dxh_xh = 0.0;
        for i in 0..d {
            dbias[i] += dyr[i];
            dgain[i] += dyr[i] * xhr[i];
            let dxh = dyr[i] * gain[i];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xhr[i];
        }
        let istd = inv_std[r];
        let dxr = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            let dxh = dyr[i] * gain[i];
            dxr[i] = istd * (dxh - sum_dxh / dn - xhr[i] * (sum_dxh_xh / dn));
        }
    }
    dx
}

struct LayerCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    ctx: Vec<f64>,
    xhat1: Vec<f64>,
    inv_std1: Vec<f64>,
    h1: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    xhat2: Vec<f64>,
    inv_std2: Vec<f64>,
}

pub(crate) struct Forward {
    bsz: usize,
    t_len: usize,
    ids: Vec<u32>,
    /// xs[0] is the embedding output; xs[l + 1] is layer l's output.
    xs: Vec<Vec<f64>>,
    layers: Vec<LayerCache>,
    cls: Vec<f64>,
    pooled: Vec<f64>,
    pub logits: Vec<f64>,
    probs: Vec<f64>,
}

fn validate_batch(config: &EncoderConfig, batch: &[TokenSequence]) -> Result<(usize, usize), ModelError> {
    config.validate()?;
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let t_len = batch[0].ids.len();
    if t_len > config.max_len {
        return Err(ModelError::SequenceTooLong { got: t_len, max: config.max_len });
    }
    for seq in batch {
        if seq.ids.len() != t_len {
            return Err(ModelError::RaggedBatch { first: t_len, other: seq.ids.len() });
        }
        for &id in &seq.ids {
            if id as usize >= config.vocab_size {
                return Err(ModelError::IdOutOfRange { id, vocab: config.vocab_size });
            }
        }
    }
    Ok((batch.len(), t_len))
}

pub(crate) fn forward(
    params: &ParameterSet,
    config: &EncoderConfig,
    batch: &[TokenSequence],
) -> Result<Forward, ModelError> {
    let (bsz, t_len) = validate_batch(config, batch)?;
    let layout = Layout::new(config.n_layers);
    let (d, heads, hd, f, c) = (
        config.d_model,
        config.n_heads,
        config.head_dim(),
        config.d_ff,
        config.n_classes,
    );
    let rows = bsz * t_len;
    let scale = 1.0 / (hd as f64).sqrt();

    let mut ids = Vec::with_capacity(rows);
    let mut mask = Vec::with_capacity(rows);
    for seq in batch {
        ids.extend_from_slice(&seq.ids);
        mask.extend(seq.mask.iter().map(|&m| f64::from(m.min(1))));
    }

    let tok = &params.tensor(layout.token).values;
    let pos = &params.tensor(layout.position).values;
    let mut x0 = vec![0.0; rows * d];
    for b in 0..bsz {
        for t in 0..t_len {
            let row = b * t_len + t;
            let id = ids[row] as usize;
            for i in 0..d {
                x0[row * d + i] = tok[id * d + i] + pos[t * d + i];
            }
        }
    }

    let mut xs = vec![x0];
    let mut layers = Vec::with_capacity(config.n_layers);
    for idx in &layout.layers {
        let x = xs.last().unwrap();
        let q = linear(x, rows, d, &params.tensor(idx.q_w).values, &params.tensor(idx.q_b).values, d);
        let k = linear(x, rows, d, &params.tensor(idx.k_w).values, &params.tensor(idx.k_b).values, d);
        let v = linear(x, rows, d, &params.tensor(idx.v_w).values, &params.tensor(idx.v_b).values, d);

        let mut attn = vec![0.0; bsz * heads * t_len * t_len];
        let mut ctx = vec![0.0; rows * d];
        let mut scores = vec![0.0; t_len];
        for b in 0..bsz {
            for h in 0..heads {
                let off = h * hd;
                for i in 0..t_len {
                    let qrow = &q[(b * t_len + i) * d + off..(b * t_len + i) * d + off + hd];
                    for (j, score) in scores.iter_mut().enumerate() {
                        let krow = &k[(b * t_len + j) * d + off..(b * t_len + j) * d + off + hd];
                        let mut dot = 0.0;
                        for e in 0..hd {
                            dot += qrow[e] * krow[e];
                        }
                        let mut s = dot * scale;
                        if mask[b * t_len + j] == 0.0 {
                            s += MASK_SCORE;
                        }
                        *score = s;
                    }
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    let arow = ((b * heads + h) * t_len + i) * t_len;
                    for j in 0..t_len {
                        let e = (scores[j] - max).exp();
                        attn[arow + j] = e;
                        sum += e;
                    }
                    let crow = (b * t_len + i) * d + off;
                    for j in 0..t_len {
                        attn[arow + j] /= sum;
                        let a = attn[arow + j];
                        let vrow = &v[(b * t_len + j) * d + off..(b * t_len + j) * d + off + hd];
                        for e in 0..hd {
                            ctx[crow + e] += a * vrow[e];
                        }
                    }
                }
            }
        }

        let attn_out = linear(&ctx, rows, d, &params.tensor(idx.o_w).values, &params.tensor(idx.o_b).values, d);
        let mut res1 = vec![0.0; rows * d];
        for i in 0..rows * d {
            res1[i] = x[i] + attn_out[i];
        }
        let (h1, xhat1, inv_std1) = layer_norm(
            &res1,
            rows,
            d,
            &params.tensor(idx.ln1_g).values,
            &params.tensor(idx.ln1_b).values,
            config.layernorm_eps,
        );

        let ff_pre = linear(&h1, rows, d, &params.tensor(idx.ff1_w).values, &params.tensor(idx.ff1_b).values, f);
        let ff_act: Vec<f64> = ff_pre.iter().map(|&u| gelu(u)).collect();
        let ff_out = linear(&ff_act, rows, f, &params.tensor(idx.ff2_w).values, &params.tensor(idx.ff2_b).values, d);
        let mut res2 = vec![0.0; rows * d];
        for i in 0..rows * d {
            res2[i] = h1[i] + ff_out[i];
        }
        let (h2, xhat2, inv_std2) = layer_norm(
            &res2,
            rows,
            d,
            &params.tensor(idx.ln2_g).values,
            &params.tensor(idx.ln2_b).values,
            config.layernorm_eps,
        );

        layers.push(LayerCache {
            q,
            k,
            v,
            attn,
            ctx,
            xhat1,
            inv_std1,
            h1,
            ff_pre,
            ff_act,
            xhat2,
            inv_std2,
        });
        xs.push(h2);
    }

    let top = xs.last().unwrap();
    let mut cls = vec![0.0; bsz * d];
    for b in 0..bsz {
        cls[b * d..(b + 1) * d].copy_from_slice(&top[b * t_len * d..b * t_len * d + d]);
    }
    let pool_pre = linear(
        &cls,
        bsz,
        d,
        &params.tensor(layout.pooler_w).values,
        &params.tensor(layout.pooler_b).values,
        d,
    );
    let pooled: Vec<f64> = pool_pre.iter().map(|&u| u.tanh()).collect();
    let logits = linear(
        &pooled,
        bsz,
        d,
        &params.tensor(layout.cls_w).values,
        &params.tensor(layout.cls_b).values,
        c,
    );

    let mut probs = vec![0.0; bsz * c];
    for b in 0..bsz {
        let lrow = &logits[b * c..(b + 1) * c];
        let max = lrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..c {
            let e = (lrow[j] - max).exp();
            probs[b * c + j] = e;
            sum += e;
        }
        for j in 0..c {
            probs[b * c + j] /= sum;
        }
    }

    Ok(Forward { bsz, t_len, ids, xs, layers, cls, pooled, logits, probs })
}

/// Logits per batch row.
pub fn forward_logits(
    params: &ParameterSet,
    config: &EncoderConfig,
    batch: &[TokenSequence],
) -> Result<Vec<Vec<f64>>, ModelError> {
    let fwd = forward(params, config, batch)?;
    let c = config.n_classes;
    Ok((0..fwd.bsz).map(|b| fwd.logits[b * c..(b + 1) * c].to_vec()).collect())
}

/// Mean softmax cross-entropy over the batch, with gradients for every
/// parameter tensor.
pub fn loss_and_grad(
    params: &ParameterSet,
    config: &EncoderConfig,
    batch: &[TokenSequence],
    targets: &[usize],
) -> Result<(f64, GradientSet), ModelError> {
    if batch.len() != targets.len() {
        return Err(ModelError::TargetCountMismatch { inputs: batch.len(), targets: targets.len() });
    }
    let c = config.n_classes;
    for &t in targets {
        if t >= c {
            return Err(ModelError::TargetOutOfRange { target: t, classes: c });
        }
    }
    let fwd = forward(params, config, batch)?;
    let layout = Layout::new(config.n_layers);
    let (bsz, t_len) = (fwd.bsz, fwd.t_len);
    let (d, heads, hd, f) = (config.d_model, config.n_heads, config.head_dim(), config.d_ff);
    let rows = bsz * t_len;
    let scale = 1.0 / (hd as f64).sqrt();

    // Loss via log-sum-exp for stability; probs are reused for the gradient.
    let mut loss = 0.0;
    for (b, &y) in targets.iter().enumerate() {
        let lrow = &fwd.logits[b * c..(b + 1) * c];
        let max = lrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lrow.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
        loss += lse - lrow[y];
    }
    loss /= bsz as f64;

    let mut grads = params.zeros_like();
    let mut dlogits = vec![0.0; bsz * c];
    for (b, &y) in targets.iter().enumerate() {
        for j in 0..c {
            let indicator = if j == y { 1.0 } else { 0.0 };
            dlogits[b * c + j] = (fwd.probs[b * c + j] - indicator) / bsz as f64;
        }
    }

    // Classifier head.
    let dpooled = {
        let w = params.tensor(layout.cls_w).values.clone();
        let (dw, rest) = grads_pair(&mut grads, layout.cls_w, layout.cls_b);
        linear_backward(&fwd.pooled, bsz, d, &w, c, &dlogits, dw, rest)
    };
    // Pooler tanh.
    let mut dpool_pre = vec![0.0; bsz * d];
    for i in 0..bsz * d {
        dpool_pre[i] = dpooled[i] * (1.0 - fwd.pooled[i] * fwd.pooled[i]);
    }
    let dcls = {
        let w = params.tensor(layout.pooler_w).values.clone();
        let (dw, db) = grads_pair(&mut grads, layout.pooler_w, layout.pooler_b);
        linear_backward(&fwd.cls, bsz, d, &w, d, &dpool_pre, dw, db)
    };

    // Only the CLS position feeds the heads.
    let mut dx = vec![0.0; rows * d];
    for b in 0..bsz {
        dx[b * t_len * d..b * t_len * d + d].copy_from_slice(&dcls[b * d..(b + 1) * d]);
    }

    for (l, idx) in layout.layers.iter().enumerate().rev() {
        let cache = &fwd.layers[l];
        let x_in = &fwd.xs[l];

        // Second layer norm.
        let dres2 = {
            let gain = params.tensor(idx.ln2_g).values.clone();
            let (dg, db) = grads_pair(&mut grads, idx.ln2_g, idx.ln2_b);
            layer_norm_backward(&dx, &cache.xhat2, &cache.inv_std2, rows, d, &gain, dg, db)
        };

        // Feed-forward with residual: res2 = h1 + ffn(h1).
        let dff_act = {
            let w = params.tensor(idx.ff2_w).values.clone();
            let (dw, db) = grads_pair(&mut grads, idx.ff2_w, idx.ff2_b);
            linear_backward(&cache.ff_act, rows, f, &w, d, &dres2, dw, db)
        };
        let mut dff_pre = vec![0.0; rows * f];
        for i in 0..rows * f {
            dff_pre[i] = dff_act[i] * gelu_grad(cache.ff_pre[i]);
        }
        let mut dh1 = {
            let w = params.tensor(idx.ff1_w).values.clone();
            let (dw, db) = grads_pair(&mut grads, idx.ff1_w, idx.ff1_b);
            linear_backward(&cache.h1, rows, d, &w, f, &dff_pre, dw, db)
        };
        for i in 0..rows * d {
            dh1[i] += dres2[i];
        }

        // First layer norm.
        let dres1 = {
            let gain = params.tensor(idx.ln1_g).values.clone();
            let (dg, db) = grads_pair(&mut grads, idx.ln1_g, idx.ln1_b);
            layer_norm_backward(&dh1, &cache.xhat1, &cache.inv_std1, rows, d, &gain, dg, db)
        };

        // Attention output projection; res1 = x_in + proj(ctx).
        let dctx = {
            let w = params.tensor(idx.o_w).values.clone();
            let (dw, db) = grads_pair(&mut grads, idx.o_w, idx.o_b);
            linear_backward(&cache.ctx, rows, d, &w, d, &dres1, dw, db)
        };

        // Attention core.
        let mut dq = vec![0.0; rows * d];
        let mut dk = vec![0.0; rows * d];
        let mut dv = vec![0.0; rows * d];
        let mut da = vec![0.0; t_len];
        for b in 0..bsz {
            for h in 0..heads {
                let off = h * hd;
                for i in 0..t_len {
                    let arow = ((b * heads + h) * t_len + i) * t_len;
                    let dctx_row = &dctx[(b * t_len + i) * d + off..(b * t_len + i) * d + off + hd];
                    let mut dot_a = 0.0;
                    for (j, daj) in da.iter_mut().enumerate() {
                        let vrow = &cache.v[(b * t_len + j) * d + off..(b * t_len + j) * d + off + hd];
                        let mut acc = 0.0;
                        for e in 0..hd {
                            acc += dctx_row[e] * vrow[e];
                        }
                        *daj = acc;
                        dot_a += acc * cache.attn[arow + j];
                    }
                    for j in 0..t_len {
                        let a = cache.attn[arow + j];
                        // dV accumulates attention-weighted context grads.
                        let dvrow = &mut dv[(b * t_len + j) * d + off..(b * t_len + j) * d + off + hd];
                        for e in 0..hd {
                            dvrow[e] += a * dctx_row[e];
                        }
                        let ds = a * (da[j] - dot_a) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let qrow_base = (b * t_len + i) * d + off;
                        let krow_base = (b * t_len + j) * d + off;
                        for e in 0..hd {
                            dq[qrow_base + e] += ds * cache.k[krow_base + e];
                            dk[krow_base + e] += ds * cache.q[qrow_base + e];
                        }
                    }
                }
            }
        }

        // Q/K/V projections, then the attention residual.
        let dx_q = {
            let w = params.tensor(idx.q_w).values.clone();
            let (dw, db) = grads_pair(&mut grads, idx.q_w, idx.q_b);
            linear_backward(x_in, rows, d, &w, d, &dq, dw, db)
        };
        let dx_k = {
            let w = params.tensor(idx.k_w).values.clone();
            let (dw, db) = grads_pair(&mut grads, idx.k_w, idx.k_b);
            linear_backward(x_in, rows, d, &w, d, &dk, dw, db)
        };
        let dx_v = {
            let w = params.tensor(idx.v_w).values.clone();
            let (dw, db) = grads_pair(&mut grads, idx.v_w, idx.v_b);
            linear_backward(x_in, rows, d, &w, d, &dv, dw, db)
        };
        // Residual from x_in to res1, plus the three projection paths.
        let mut next = dres1;
        for i in 0..rows * d {
            next[i] += dx_q[i] + dx_k[i] + dx_v[i];
        }
        dx = next;
    }

    // Embedding tables.
    let dtok = &mut grads.tensor_mut(layout.token).values;
    for b in 0..bsz {
        for t in 0..t_len {
            let row = b * t_len + t;
            let id = fwd.ids[row] as usize;
            for i in 0..d {
                dtok[id * d + i] += dx[row * d + i];
            }
        }
    }
    let dpos = &mut grads.tensor_mut(layout.position).values;
    for b in 0..bsz {
        for t in 0..t_len {
            let row = b * t_len + t;
            for i in 0..d {
                dpos[t * d + i] += dx[row * d + i];
            }
        }
    }

    Ok((loss, grads))
}

/// Borrows two distinct gradient tensors' value buffers mutably.
fn grads_pair(grads: &mut GradientSet, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert_ne!(a, b);
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let (head, tail) = grads.tensors_mut().split_at_mut(hi);
    let (lo_t, hi_t) = (&mut head[lo], &mut tail[0]);
    if a < b {
        (&mut lo_t.values, &mut hi_t.values)
    } else {
        (&mut hi_t.values, &mut lo_t.values)
    }
}

/// Argmax class per sequence; ties resolve to the smallest class index.
/// Sequences are processed in fixed-size chunks to bound memory.
pub fn predict(
    params: &ParameterSet,
    config: &EncoderConfig,
    sequences: &[TokenSequence],
) -> Result<Vec<usize>, ModelError> {
    let mut out = Vec::with_capacity(sequences.len());
    for chunk in sequences.chunks(64) {
        let logits = forward_logits(params, config, chunk)?;
        for row in logits {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{init_params, Tensor};
    use crate::tokenizer::{build_vocab, encode};

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 16,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            max_len: 8,
            n_classes: 6,
            layernorm_eps: 1e-5,
        }
    }

    fn sample_batch(max_len: usize) -> Vec<TokenSequence> {
        let vocab = build_vocab(&["0 1 2 . - 5 7 9"], 16);
        ["12.5", "-3 7", "999"]
            .iter()
            .map(|t| encode(&vocab, t, max_len))
            .collect()
    }

    #[test]
    fn zeroed_classifier_gives_uniform_loss() {
        let cfg = tiny_config();
        let mut params = init_params(&cfg, 5);
        for name in ["classifier.weight", "classifier.bias"] {
            let idx = params.tensors().iter().position(|t| t.name == name).unwrap();
            params.tensor_mut(idx).values.iter_mut().for_each(|v| *v = 0.0);
        }
        let batch = sample_batch(8);
        let logits = forward_logits(&params, &cfg, &batch).unwrap();
        assert!(logits.iter().flatten().all(|&v| v == 0.0));
        let (loss, _) = loss_and_grad(&params, &cfg, &batch, &[0, 1, 2]).unwrap();
        assert!((loss - 6.0f64.ln()).abs() < 1e-12);
        // All-zero logits tie; argmax resolves to class 0.
        assert_eq!(predict(&params, &cfg, &batch).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn identical_sequences_get_identical_rows() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 7);
        let mut batch = sample_batch(8);
        batch[2] = batch[0].clone();
        let logits = forward_logits(&params, &cfg, &batch).unwrap();
        assert_eq!(logits[0], logits[2]);
    }

    #[test]
    fn batch_permutation_permutes_logits_and_keeps_loss() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 11);
        let batch = sample_batch(8);
        let targets = [3usize, 1, 4];
        let logits = forward_logits(&params, &cfg, &batch).unwrap();
        let perm_batch = vec![batch[2].clone(), batch[0].clone(), batch[1].clone()];
        let perm_logits = forward_logits(&params, &cfg, &perm_batch).unwrap();
        assert_eq!(perm_logits[0], logits[2]);
        assert_eq!(perm_logits[1], logits[0]);
        let (loss, _) = loss_and_grad(&params, &cfg, &batch, &targets).unwrap();
        let (perm_loss, _) = loss_and_grad(&params, &cfg, &perm_batch, &[4, 3, 1]).unwrap();
        assert!((loss - perm_loss).abs() < 1e-12);
    }

    #[test]
    fn duplicated_batch_keeps_loss_and_gradients() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 13);
        let batch = sample_batch(8);
        let targets = [0usize, 2, 5];
        let (loss, grads) = loss_and_grad(&params, &cfg, &batch, &targets).unwrap();
        let doubled: Vec<TokenSequence> = batch.iter().chain(batch.iter()).cloned().collect();
        let (loss2, grads2) = loss_and_grad(&params, &cfg, &doubled, &[0, 2, 5, 0, 2, 5]).unwrap();
        assert!((loss - loss2).abs() < 1e-12);
        for (a, b) in grads.tensors().iter().zip(grads2.tensors()) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-12, "tensor {} diverged", a.name);
            }
        }
    }

    #[test]
    fn extra_padding_columns_leave_logits_unchanged() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 17);
        let short = sample_batch(8);

        let mut wide_cfg = cfg;
        wide_cfg.max_len = 12;
        let mut tensors = params.tensors().to_vec();
        let old_pos = tensors[1].clone();
        let mut values = old_pos.values.clone();
        for i in 0..(12 - 8) * cfg.d_model {
            values.push(0.37 * (i as f64 + 1.0));
        }
        tensors[1] = Tensor::new(old_pos.name, vec![12, cfg.d_model], values);
        let wide_params = ParameterSet::from_tensors(tensors);
        let wide = sample_batch(12);

        let a = forward_logits(&params, &cfg, &short).unwrap();
        let b = forward_logits(&wide_params, &wide_cfg, &wide).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 19);
        assert!(matches!(forward_logits(&params, &cfg, &[]), Err(ModelError::EmptyBatch)));
        let mut batch = sample_batch(8);
        batch[0].ids[1] = 99;
        assert!(matches!(
            forward_logits(&params, &cfg, &batch),
            Err(ModelError::IdOutOfRange { id: 99, .. })
        ));
        let batch = sample_batch(8);
        assert!(matches!(
            loss_and_grad(&params, &cfg, &batch, &[0, 1]),
            Err(ModelError::TargetCountMismatch { .. })
        ));
        assert!(matches!(
            loss_and_grad(&params, &cfg, &batch, &[0, 1, 6]),
            Err(ModelError::TargetOutOfRange { target: 6, classes: 6 })
        ));
    }

    #[test]
    fn analytic_gradients_match_finite_differences_spot_check() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 23);
        let batch = sample_batch(8);
        let targets = [1usize, 4, 0];
        let (_, grads) = loss_and_grad(&params, &cfg, &batch, &targets).unwrap();
        let h = 1e-5;
        // A few elements from structurally different tensors.
        for (name, elem) in [
            ("embedding.token", 37usize),
            ("embedding.position", 5),
            ("layer0.attn.query.weight", 11),
            ("layer0.ln1.gain", 3),
            ("layer0.ffn.in.weight", 20),
            ("pooler.weight", 9),
            ("classifier.weight", 14),
            ("classifier.bias", 2),
        ] {
            let idx = params.tensors().iter().position(|t| t.name == name).unwrap();
            let mut plus = params.clone();
            plus.tensor_mut(idx).values[elem] += h;
            let mut minus = params.clone();
            minus.tensor_mut(idx).values[elem] -= h;
            let (lp, _) = loss_and_grad(&plus, &cfg, &batch, &targets).unwrap();
            let (lm, _) = loss_and_grad(&minus, &cfg, &batch, &targets).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads.tensors()[idx].values[elem];
            let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-4);
            assert!(rel < 1e-5, "{name}[{elem}]: numeric {numeric} vs analytic {analytic}");
        }
    }
}
