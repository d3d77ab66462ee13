//! Convolutional encoder: parallel convolutions of several widths over token
//! embeddings, projected to `d` per position and max-pooled over time.

use rand::Rng;

use super::EncoderConfig;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
struct Conv {
    width: usize,
    kernel: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    convs: Vec<Conv>,
    proj: ParamId,
    proj_bias: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct CnnLayout {
    embed: ParamId,
    blocks: Vec<Block>,
}

impl CnnLayout {
    pub(crate) fn new<T: Scalar, R: Rng>(
        name: &str,
        cfg: &EncoderConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Self {
        let d = cfg.dim;
        let f = cfg.cnn_filters;
        let embed = store.add_uniform(format!("{name}/embed"), cfg.vocab_hash_size, d, d, rng);
        let blocks = (0..cfg.num_layers)
            .map(|l| {
                let pre = format!("{name}/layer{}", l + 1);
                let convs = cfg
                    .cnn_widths
                    .iter()
                    .map(|&w| Conv {
                        width: w,
                        kernel: store.add_uniform(format!("{pre}/conv{w}"), w * d, f, w * d, rng),
                        bias: store.add_zeros(format!("{pre}/conv{w}/bias"), 1, f),
                    })
                    .collect::<Vec<_>>();
                let total = f * convs.len();
                Block {
                    convs,
                    proj: store.add_uniform(format!("{pre}/proj"), total, d, total, rng),
                    proj_bias: store.add_zeros(format!("{pre}/proj/bias"), 1, d),
                }
            })
            .collect();
        Self { embed, blocks }
    }

    pub(crate) fn forward<'s, T: Scalar>(
        &self,
        g: &mut Graph<'s, T>,
        tokens: &[usize],
        p: &impl Fn(&mut Graph<'s, T>, ParamId) -> Var,
    ) -> (Vec<Var>, Vec<Var>) {
        let embed = p(g, self.embed);
        let mut x = g.gather_rows(embed, tokens);
        let mut layer_tokens = Vec::with_capacity(self.blocks.len());
        let mut layer_pooled = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let mut maps = Vec::with_capacity(b.convs.len());
            for c in &b.convs {
                let win = g.windows(x, c.width);
                let k = p(g, c.kernel);
                let bias = p(g, c.bias);
                let h = g.matmul(win, k);
                let h = g.add_row(h, bias);
                maps.push(g.relu(h));
            }
            let features = g.concat_cols(&maps);
            let proj = p(g, b.proj);
            let proj_b = p(g, b.proj_bias);
            let h = g.matmul(features, proj);
            x = g.add_row(h, proj_b);
            layer_tokens.push(x);
            let pooled = g.max_rows(x);
            layer_pooled.push(pooled);
        }
        (layer_tokens, layer_pooled)
    }
}
