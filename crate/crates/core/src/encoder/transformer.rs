//! Post-norm transformer encoder with a leading summary token.

use rand::Rng;

use super::tokenizer::CLS_BUCKET;
use super::EncoderConfig;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
struct Block {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ff1: ParamId,
    ff1_bias: ParamId,
    ff2: ParamId,
    ff2_bias: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct TransformerLayout {
    embed: ParamId,
    positions: ParamId,
    blocks: Vec<Block>,
    dim: usize,
}

impl TransformerLayout {
    pub(crate) fn new<T: Scalar, R: Rng>(
        name: &str,
        cfg: &EncoderConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Self {
        let d = cfg.dim;
        let hidden = d * cfg.ffn_multiplier.max(1);
        let embed = store.add_uniform(format!("{name}/embed"), cfg.vocab_hash_size, d, d, rng);
        let positions = store.add_uniform(format!("{name}/positions"), cfg.max_len + 1, d, d, rng);
        let blocks = (0..cfg.num_layers)
            .map(|l| {
                let pre = format!("{name}/layer{}", l + 1);
                Block {
                    wq: store.add_uniform(format!("{pre}/wq"), d, d, d, rng),
                    wk: store.add_uniform(format!("{pre}/wk"), d, d, d, rng),
                    wv: store.add_uniform(format!("{pre}/wv"), d, d, d, rng),
                    wo: store.add_uniform(format!("{pre}/wo"), d, d, d, rng),
                    ln1_gain: store.add_ones(format!("{pre}/ln1/gain"), 1, d),
                    ln1_bias: store.add_zeros(format!("{pre}/ln1/bias"), 1, d),
                    ff1: store.add_uniform(format!("{pre}/ff1"), d, hidden, d, rng),
                    ff1_bias: store.add_zeros(format!("{pre}/ff1/bias"), 1, hidden),
                    ff2: store.add_uniform(format!("{pre}/ff2"), hidden, d, hidden, rng),
                    ff2_bias: store.add_zeros(format!("{pre}/ff2/bias"), 1, d),
                    ln2_gain: store.add_ones(format!("{pre}/ln2/gain"), 1, d),
                    ln2_bias: store.add_zeros(format!("{pre}/ln2/bias"), 1, d),
                }
            })
            .collect();
        Self {
            embed,
            positions,
            blocks,
            dim: d,
        }
    }

    /// Returns per-layer token matrices and per-layer pooled rows (the
    /// summary-token position).
    pub(crate) fn forward<'s, T: Scalar>(
        &self,
        g: &mut Graph<'s, T>,
        tokens: &[usize],
        p: &impl Fn(&mut Graph<'s, T>, ParamId) -> Var,
    ) -> (Vec<Var>, Vec<Var>) {
        let mut ids = Vec::with_capacity(tokens.len() + 1);
        ids.push(CLS_BUCKET);
        ids.extend_from_slice(tokens);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let embed = p(g, self.embed);
        let pos = p(g, self.positions);
        let tok = g.gather_rows(embed, &ids);
        let pe = g.gather_rows(pos, &positions);
        let mut x = g.add(tok, pe);
        let scale = T::one() / T::of_usize(self.dim).sqrt();
        let eps = T::lit(LN_EPS);
        let mut layer_tokens = Vec::with_capacity(self.blocks.len());
        let mut layer_pooled = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let wq = p(g, b.wq);
            let wk = p(g, b.wk);
            let wv = p(g, b.wv);
            let wo = p(g, b.wo);
            let q = g.matmul(x, wq);
            let k = g.matmul(x, wk);
            let v = g.matmul(x, wv);
            let scores = g.matmul_nt(q, k);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            let ctx = g.matmul(attn, v);
            let h = g.matmul(ctx, wo);
            let res = g.add(x, h);
            let (gain, bias) = (p(g, b.ln1_gain), p(g, b.ln1_bias));
            let x1 = affine_norm(g, res, gain, bias, eps);

            let ff1 = p(g, b.ff1);
            let ff1_b = p(g, b.ff1_bias);
            let ff2 = p(g, b.ff2);
            let ff2_b = p(g, b.ff2_bias);
            let f = g.matmul(x1, ff1);
            let f = g.add_row(f, ff1_b);
            let f = g.relu(f);
            let f = g.matmul(f, ff2);
            let f = g.add_row(f, ff2_b);
            let res2 = g.add(x1, f);
            let (gain, bias) = (p(g, b.ln2_gain), p(g, b.ln2_bias));
            x = affine_norm(g, res2, gain, bias, eps);
            layer_tokens.push(x);
            let pooled = g.row(x, 0);
            layer_pooled.push(pooled);
        }
        (layer_tokens, layer_pooled)
    }
}

fn affine_norm<T: Scalar>(g: &mut Graph<'_, T>, x: Var, gain: Var, bias: Var, eps: T) -> Var {
    let n = g.layer_norm(x, eps);
    let s = g.mul_row(n, gain);
    g.add_row(s, bias)
}
