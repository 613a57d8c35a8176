use super::forward::{check_ids, embed_row};
use super::kernels::{attend_row, gelu, layernorm_row, linear_row};
use super::{Layout, ModelError, ModelParams, Scalar};
use crate::corpus::TokenId;

/// Incremental decoder over frozen weights with a per-layer key/value cache.
///
/// Produces logits bit-identical to [`super::forward`] on the same prefix, since
/// both paths run the same row kernels in the same order.
pub struct InferenceState<'a, F: Scalar> {
    params: &'a ModelParams<F>,
    layout: Layout,
    /// Per layer, `context_len x 3 d_model` query/key/value rows.
    qkv: Vec<Vec<F>>,
    pos: usize,
    logits: Vec<F>,
    hidden: Vec<F>,
    // scratch
    x: Vec<F>,
    xhat: Vec<F>,
    a: Vec<F>,
    att: Vec<F>,
    o: Vec<F>,
    f: Vec<F>,
    probs: Vec<F>,
}

impl<'a, F: Scalar> InferenceState<'a, F> {
    pub fn new(params: &'a ModelParams<F>) -> Self {
        let cfg = &params.config;
        let d = cfg.d_model;
        Self {
            params,
            layout: params.layout(),
            qkv: vec![vec![F::zero(); cfg.context_len * 3 * d]; cfg.n_layers],
            pos: 0,
            logits: vec![F::zero(); cfg.vocab_size],
            hidden: vec![F::zero(); d],
            x: vec![F::zero(); d],
            xhat: vec![F::zero(); d],
            a: vec![F::zero(); d],
            att: vec![F::zero(); d],
            o: vec![F::zero(); d],
            f: vec![F::zero(); cfg.d_ff],
            probs: vec![F::zero(); cfg.context_len],
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Logits after the most recently fed token.
    pub fn logits(&self) -> &[F] {
        &self.logits
    }

    /// Final-layer hidden state of the most recently fed token.
    pub fn hidden(&self) -> &[F] {
        &self.hidden
    }

    /// Appends `tokens` and returns the logits after the last one.
    pub fn feed_all(&mut self, tokens: &[TokenId]) -> Result<&[F], ModelError> {
        check_ids(self.params, tokens)?;
        if self.pos + tokens.len() > self.params.config.context_len {
            return Err(ModelError::SequenceTooLong {
                len: self.pos + tokens.len(),
                context_len: self.params.config.context_len,
            });
        }
        for &t in tokens {
            self.step(t);
        }
        Ok(&self.logits)
    }

    pub fn feed(&mut self, token: TokenId) -> Result<&[F], ModelError> {
        self.feed_all(&[token])
    }

    fn step(&mut self, token: TokenId) {
        let cfg = &self.params.config;
        let p = &self.params.data;
        let (d, ff, nh) = (cfg.d_model, cfg.d_ff, cfg.n_heads);
        let hd = cfg.head_dim();
        let scale = F::one() / F::from_f64(hd as f64).sqrt();
        let pos = self.pos;

        embed_row(p, &self.layout, d, token, pos, &mut self.x);
        for (b, cache) in self.layout.blocks.iter().zip(self.qkv.iter_mut()) {
            layernorm_row(&self.x, &p[b.ln1_g..b.ln1_g + d], &p[b.ln1_b..b.ln1_b + d], &mut self.xhat, &mut self.a);
            let row = pos * 3 * d;
            linear_row(&self.a, &p[b.w_qkv..b.w_qkv + 3 * d * d], &p[b.b_qkv..b.b_qkv + 3 * d], &mut cache[row..row + 3 * d]);
            for h in 0..nh {
                let q = cache[row + h * hd..row + (h + 1) * hd].to_vec();
                attend_row(
                    &q,
                    &cache[d + h * hd..],
                    3 * d,
                    d,
                    pos + 1,
                    scale,
                    &mut self.probs,
                    &mut self.att[h * hd..(h + 1) * hd],
                );
            }
            linear_row(&self.att, &p[b.w_attn_out..b.w_attn_out + d * d], &p[b.b_attn_out..b.b_attn_out + d], &mut self.o);
            for (o, xi) in self.o.iter_mut().zip(&self.x) {
                *o = *xi + *o;
            }
            // self.o now holds the post-attention residual stream
            layernorm_row(&self.o, &p[b.ln2_g..b.ln2_g + d], &p[b.ln2_b..b.ln2_b + d], &mut self.xhat, &mut self.a);
            linear_row(&self.a, &p[b.w_fc..b.w_fc + d * ff], &p[b.b_fc..b.b_fc + ff], &mut self.f);
            for z in self.f.iter_mut() {
                *z = gelu(*z);
            }
            linear_row(&self.f, &p[b.w_proj..b.w_proj + ff * d], &p[b.b_proj..b.b_proj + d], &mut self.x);
            for (x, m) in self.x.iter_mut().zip(&self.o) {
                *x = *m + *x;
            }
        }
        let l = &self.layout;
        layernorm_row(&self.x, &p[l.lnf_g..l.lnf_g + d], &p[l.lnf_b..l.lnf_b + d], &mut self.xhat, &mut self.hidden);
        let v = cfg.vocab_size;
        linear_row(&self.hidden, &p[l.w_head..l.w_head + d * v], &p[l.b_head..l.b_head + v], &mut self.logits);
        self.pos += 1;
    }
}
