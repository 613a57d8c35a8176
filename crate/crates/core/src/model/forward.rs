use rayon::prelude::*;

use super::kernels::{
    attend_row, axpy, dot, gelu, gelu_grad, layernorm_row, layernorm_row_backward, linear,
    linear_backward,
};
use super::{Layout, ModelError, ModelParams, Scalar};
use crate::corpus::TokenId;

/// One training sequence: model inputs, the target at each input position,
/// and whether that position contributes to the loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub inputs: Vec<TokenId>,
    pub targets: Vec<TokenId>,
    pub mask: Vec<bool>,
}

impl TokenSeq {
    pub fn unmasked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Next-token logits for every input position, row-major `n x V`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<F> {
    pub vocab_size: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Logits<F> {
    pub fn rows(&self) -> usize {
        self.data.len() / self.vocab_size.max(1)
    }

    pub fn row(&self, j: usize) -> &[F] {
        &self.data[j * self.vocab_size..(j + 1) * self.vocab_size]
    }
}

/// Mean loss over unmasked positions and its gradient w.r.t. every weight.
#[derive(Debug, Clone)]
pub struct BatchGrads<F> {
    pub loss: f64,
    pub token_count: usize,
    pub grads: Vec<F>,
}

struct BlockCache<F> {
    ln1_xhat: Vec<F>,
    ln1_rstd: Vec<F>,
    a: Vec<F>,
    qkv: Vec<F>,
    probs: Vec<F>,
    att: Vec<F>,
    ln2_xhat: Vec<F>,
    ln2_rstd: Vec<F>,
    b2: Vec<F>,
    f_pre: Vec<F>,
    f_act: Vec<F>,
}

struct Cache<F> {
    n: usize,
    blocks: Vec<BlockCache<F>>,
    lnf_xhat: Vec<F>,
    lnf_rstd: Vec<F>,
    hidden: Vec<F>,
    logits: Vec<F>,
}

pub(crate) fn check_ids<F: Scalar>(params: &ModelParams<F>, ids: &[TokenId]) -> Result<(), ModelError> {
    let cfg = &params.config;
    if ids.len() > cfg.context_len {
        return Err(ModelError::SequenceTooLong {
            len: ids.len(),
            context_len: cfg.context_len,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::BadToken {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

pub(crate) fn embed_row<F: Scalar>(p: &[F], layout: &Layout, d: usize, id: TokenId, pos: usize, out: &mut [F]) {
    let te = &p[layout.wte + id as usize * d..layout.wte + (id as usize + 1) * d];
    let pe = &p[layout.wpe + pos * d..layout.wpe + (pos + 1) * d];
    for i in 0..d {
        out[i] = te[i] + pe[i];
    }
}

fn forward_cached<F: Scalar>(params: &ModelParams<F>, layout: &Layout, ids: &[TokenId]) -> Cache<F> {
    let cfg = &params.config;
    let p = &params.data;
    let (n, d, ff, v, nh) = (ids.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);
    let hd = cfg.head_dim();
    let scale = F::one() / F::from_f64(hd as f64).sqrt();

    let mut x = vec![F::zero(); n * d];
    for (pos, &id) in ids.iter().enumerate() {
        embed_row(p, layout, d, id, pos, &mut x[pos * d..(pos + 1) * d]);
    }

    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for b in &layout.blocks {
        let x_in = x;
        let mut ln1_xhat = vec![F::zero(); n * d];
        let mut ln1_rstd = vec![F::zero(); n];
        let mut a = vec![F::zero(); n * d];
        for i in 0..n {
            let r = i * d..(i + 1) * d;
            ln1_rstd[i] = layernorm_row(
                &x_in[r.clone()],
                &p[b.ln1_g..b.ln1_g + d],
                &p[b.ln1_b..b.ln1_b + d],
                &mut ln1_xhat[r.clone()],
                &mut a[r],
            );
        }
        let mut qkv = vec![F::zero(); n * 3 * d];
        linear(&a, d, &p[b.w_qkv..b.w_qkv + 3 * d * d], &p[b.b_qkv..b.b_qkv + 3 * d], &mut qkv);
        let mut probs = vec![F::zero(); nh * n * n];
        let mut att = vec![F::zero(); n * d];
        for h in 0..nh {
            let kv = &qkv[d + h * hd..];
            for i in 0..n {
                attend_row(
                    &qkv[i * 3 * d + h * hd..i * 3 * d + (h + 1) * hd],
                    kv,
                    3 * d,
                    d,
                    i + 1,
                    scale,
                    &mut probs[(h * n + i) * n..(h * n + i + 1) * n],
                    &mut att[i * d + h * hd..i * d + (h + 1) * hd],
                );
            }
        }
        let mut x_mid = vec![F::zero(); n * d];
        linear(&att, d, &p[b.w_attn_out..b.w_attn_out + d * d], &p[b.b_attn_out..b.b_attn_out + d], &mut x_mid);
        for (m, xi) in x_mid.iter_mut().zip(&x_in) {
            *m = *xi + *m;
        }
        let mut ln2_xhat = vec![F::zero(); n * d];
        let mut ln2_rstd = vec![F::zero(); n];
        let mut b2 = vec![F::zero(); n * d];
        for i in 0..n {
            let r = i * d..(i + 1) * d;
            ln2_rstd[i] = layernorm_row(
                &x_mid[r.clone()],
                &p[b.ln2_g..b.ln2_g + d],
                &p[b.ln2_b..b.ln2_b + d],
                &mut ln2_xhat[r.clone()],
                &mut b2[r],
            );
        }
        let mut f_pre = vec![F::zero(); n * ff];
        linear(&b2, d, &p[b.w_fc..b.w_fc + d * ff], &p[b.b_fc..b.b_fc + ff], &mut f_pre);
        let f_act: Vec<F> = f_pre.iter().map(|&z| gelu(z)).collect();
        let mut out = vec![F::zero(); n * d];
        linear(&f_act, ff, &p[b.w_proj..b.w_proj + ff * d], &p[b.b_proj..b.b_proj + d], &mut out);
        for (o, m) in out.iter_mut().zip(&x_mid) {
            *o = *m + *o;
        }
        x = out;
        blocks.push(BlockCache {
            ln1_xhat,
            ln1_rstd,
            a,
            qkv,
            probs,
            att,
            ln2_xhat,
            ln2_rstd,
            b2,
            f_pre,
            f_act,
        });
    }

    let mut lnf_xhat = vec![F::zero(); n * d];
    let mut lnf_rstd = vec![F::zero(); n];
    let mut hidden = vec![F::zero(); n * d];
    for i in 0..n {
        let r = i * d..(i + 1) * d;
        lnf_rstd[i] = layernorm_row(
            &x[r.clone()],
            &p[layout.lnf_g..layout.lnf_g + d],
            &p[layout.lnf_b..layout.lnf_b + d],
            &mut lnf_xhat[r.clone()],
            &mut hidden[r],
        );
    }
    let mut logits = vec![F::zero(); n * v];
    linear(&hidden, d, &p[layout.w_head..layout.w_head + d * v], &p[layout.b_head..layout.b_head + v], &mut logits);
    Cache {
        n,
        blocks,
        lnf_xhat,
        lnf_rstd,
        hidden,
        logits,
    }
}

/// Splits `buf[a..b_end]` into the weight part `[a, b)` and bias part `[b, b_end)`.
fn pair_mut<F>(buf: &mut [F], a: usize, b: usize, b_len: usize) -> (&mut [F], &mut [F]) {
    buf[a..b + b_len].split_at_mut(b - a)
}

fn backward<F: Scalar>(
    params: &ModelParams<F>,
    layout: &Layout,
    ids: &[TokenId],
    cache: &Cache<F>,
    dlogits: &[F],
    grads: &mut [F],
) {
    let cfg = &params.config;
    let p = &params.data;
    let (n, d, ff, v, nh) = (cache.n, cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);
    let hd = cfg.head_dim();
    let scale = F::one() / F::from_f64(hd as f64).sqrt();

    let mut dhidden = vec![F::zero(); n * d];
    {
        let (dw, db) = pair_mut(grads, layout.w_head, layout.b_head, v);
        linear_backward(&cache.hidden, d, &p[layout.w_head..layout.w_head + d * v], dlogits, Some(&mut dhidden), dw, db);
    }
    let mut dx = vec![F::zero(); n * d];
    {
        let (dg, db) = pair_mut(grads, layout.lnf_g, layout.lnf_b, d);
        for i in 0..n {
            let r = i * d..(i + 1) * d;
            layernorm_row_backward(
                &dhidden[r.clone()],
                &cache.lnf_xhat[r.clone()],
                cache.lnf_rstd[i],
                &p[layout.lnf_g..layout.lnf_g + d],
                &mut dx[r],
                dg,
                db,
            );
        }
    }

    let mut df = vec![F::zero(); n * ff];
    let mut db2 = vec![F::zero(); n * d];
    let mut tmp = vec![F::zero(); n * d];
    let mut datt = vec![F::zero(); n * d];
    let mut dqkv = vec![F::zero(); n * 3 * d];
    let mut da = vec![F::zero(); n * d];
    for (b, c) in layout.blocks.iter().zip(&cache.blocks).rev() {
        // MLP branch: dx is the gradient w.r.t. the block output.
        {
            let (dw, db) = pair_mut(grads, b.w_proj, b.b_proj, d);
            linear_backward(&c.f_act, ff, &p[b.w_proj..b.w_proj + ff * d], &dx, Some(&mut df), dw, db);
        }
        for (g, &z) in df.iter_mut().zip(&c.f_pre) {
            *g *= gelu_grad(z);
        }
        {
            let (dw, db) = pair_mut(grads, b.w_fc, b.b_fc, ff);
            linear_backward(&c.b2, d, &p[b.w_fc..b.w_fc + d * ff], &df, Some(&mut db2), dw, db);
        }
        {
            let (dg, dbeta) = pair_mut(grads, b.ln2_g, b.ln2_b, d);
            for i in 0..n {
                let r = i * d..(i + 1) * d;
                layernorm_row_backward(
                    &db2[r.clone()],
                    &c.ln2_xhat[r.clone()],
                    c.ln2_rstd[i],
                    &p[b.ln2_g..b.ln2_g + d],
                    &mut tmp[r],
                    dg,
                    dbeta,
                );
            }
        }
        // dx now becomes the gradient w.r.t. x_mid.
        for (a, t) in dx.iter_mut().zip(&tmp) {
            *a += *t;
        }

        // Attention branch.
        {
            let (dw, db) = pair_mut(grads, b.w_attn_out, b.b_attn_out, d);
            linear_backward(&c.att, d, &p[b.w_attn_out..b.w_attn_out + d * d], &dx, Some(&mut datt), dw, db);
        }
        dqkv.fill(F::zero());
        let mut dp = vec![F::zero(); n];
        let mut dq = vec![F::zero(); hd];
        for h in 0..nh {
            let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
            for i in 0..n {
                let probs = &c.probs[(h * n + i) * n..(h * n + i) * n + i + 1];
                let dout = &datt[i * d + qo..i * d + qo + hd];
                let mut weighted = F::zero();
                for j in 0..=i {
                    let vj = &c.qkv[j * 3 * d + vo..j * 3 * d + vo + hd];
                    dp[j] = dot(dout, vj);
                    weighted += probs[j] * dp[j];
                    axpy(probs[j], dout, &mut dqkv[j * 3 * d + vo..j * 3 * d + vo + hd]);
                }
                let qi = &c.qkv[i * 3 * d + qo..i * 3 * d + qo + hd];
                dq.fill(F::zero());
                for j in 0..=i {
                    let ds = probs[j] * (dp[j] - weighted) * scale;
                    let kj = &c.qkv[j * 3 * d + ko..j * 3 * d + ko + hd];
                    axpy(ds, kj, &mut dq);
                    axpy(ds, qi, &mut dqkv[j * 3 * d + ko..j * 3 * d + ko + hd]);
                }
                axpy(F::one(), &dq, &mut dqkv[i * 3 * d + qo..i * 3 * d + qo + hd]);
            }
        }
        {
            let (dw, db) = pair_mut(grads, b.w_qkv, b.b_qkv, 3 * d);
            linear_backward(&c.a, d, &p[b.w_qkv..b.w_qkv + 3 * d * d], &dqkv, Some(&mut da), dw, db);
        }
        {
            let (dg, dbeta) = pair_mut(grads, b.ln1_g, b.ln1_b, d);
            for i in 0..n {
                let r = i * d..(i + 1) * d;
                layernorm_row_backward(
                    &da[r.clone()],
                    &c.ln1_xhat[r.clone()],
                    c.ln1_rstd[i],
                    &p[b.ln1_g..b.ln1_g + d],
                    &mut tmp[r],
                    dg,
                    dbeta,
                );
            }
        }
        for (a, t) in dx.iter_mut().zip(&tmp) {
            *a += *t;
        }
    }

    for (pos, &id) in ids.iter().enumerate() {
        let row = &dx[pos * d..(pos + 1) * d];
        let te = layout.wte + id as usize * d;
        axpy(F::one(), row, &mut grads[te..te + d]);
        let pe = layout.wpe + pos * d;
        axpy(F::one(), row, &mut grads[pe..pe + d]);
    }
}

/// Causal next-token logits at every position of `ids`.
pub fn forward<F: Scalar>(params: &ModelParams<F>, ids: &[TokenId]) -> Result<Logits<F>, ModelError> {
    check_ids(params, ids)?;
    let cache = forward_cached(params, &params.layout(), ids);
    Ok(Logits {
        vocab_size: params.config.vocab_size,
        data: cache.logits,
    })
}

/// Final-layer (post-norm) hidden states, row-major `n x d_model`.
pub fn forward_hidden<F: Scalar>(params: &ModelParams<F>, ids: &[TokenId]) -> Result<Vec<F>, ModelError> {
    check_ids(params, ids)?;
    Ok(forward_cached(params, &params.layout(), ids).hidden)
}

/// Sequences per gradient accumulation buffer. Fixed so the reduction order,
/// and therefore the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

/// Mean next-token cross-entropy over all unmasked positions of the batch and
/// its gradient. An empty mask yields zero loss and zero gradient.
pub fn loss_and_grads<F: Scalar>(params: &ModelParams<F>, batch: &[TokenSeq]) -> Result<BatchGrads<F>, ModelError> {
    let v = params.config.vocab_size;
    for (index, seq) in batch.iter().enumerate() {
        if seq.inputs.len() != seq.targets.len() || seq.inputs.len() != seq.mask.len() {
            return Err(ModelError::Misaligned { index });
        }
        check_ids(params, &seq.inputs)?;
        for (t, m) in seq.targets.iter().zip(&seq.mask) {
            if *m && *t as usize >= v {
                return Err(ModelError::BadToken { id: *t, vocab_size: v });
            }
        }
    }
    let token_count: usize = batch.iter().map(TokenSeq::unmasked).sum();
    let total = params.data.len();
    if token_count == 0 {
        return Ok(BatchGrads {
            loss: 0.0,
            token_count: 0,
            grads: vec![F::zero(); total],
        });
    }
    let layout = params.layout();
    let inv = F::one() / F::from_f64(token_count as f64);

    let partials: Vec<(f64, Vec<F>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = vec![F::zero(); total];
            let mut nll_sum = 0.0f64;
            for seq in chunk {
                if seq.unmasked() == 0 {
                    continue;
                }
                let cache = forward_cached(params, &layout, &seq.inputs);
                let mut dlogits = vec![F::zero(); cache.n * v];
                for i in 0..cache.n {
                    if !seq.mask[i] {
                        continue;
                    }
                    let row = &cache.logits[i * v..(i + 1) * v];
                    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                    let mut sum = F::zero();
                    let drow = &mut dlogits[i * v..(i + 1) * v];
                    for (g, &l) in drow.iter_mut().zip(row) {
                        *g = (l - max).exp();
                        sum += *g;
                    }
                    let target = seq.targets[i] as usize;
                    let lse = max.to_f64().unwrap() + sum.to_f64().unwrap().ln();
                    nll_sum += lse - row[target].to_f64().unwrap();
                    let scale = inv / sum;
                    for g in drow.iter_mut() {
                        *g *= scale;
                    }
                    drow[target] -= inv;
                }
                backward(params, &layout, &seq.inputs, &cache, &dlogits, &mut grads);
            }
            (nll_sum, grads)
        })
        .collect();

    let mut iter = partials.into_iter();
    let (mut nll, mut grads) = iter.next().expect("nonempty batch");
    for (l, g) in iter {
        nll += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += *b;
        }
    }
    Ok(BatchGrads {
        loss: nll / token_count as f64,
        token_count,
        grads,
    })
}
