//! Encoders `f_z`: text to per-layer token representations, a pooled vector
//! and a binary-class probability.

pub mod cnn;
pub mod tokenizer;
pub mod transformer;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Backbone {
    #[serde(rename = "toy-transformer")]
    ToyTransformer,
    #[serde(rename = "toy-cnn")]
    ToyCnn,
    #[serde(rename = "external-adapter")]
    ExternalAdapter,
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::ToyTransformer => "toy-transformer",
            Backbone::ToyCnn => "toy-cnn",
            Backbone::ExternalAdapter => "external-adapter",
        })
    }
}

impl FromStr for Backbone {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy-transformer" => Ok(Backbone::ToyTransformer),
            "toy-cnn" => Ok(Backbone::ToyCnn),
            "external-adapter" => Ok(Backbone::ExternalAdapter),
            other => Err(Error::Config(format!(
                "unknown backbone {other:?}; expected toy-transformer, toy-cnn or external-adapter"
            ))),
        }
    }
}

fn default_max_len() -> usize {
    128
}
fn default_ffn_multiplier() -> usize {
    2
}
fn default_cnn_filters() -> usize {
    100
}
fn default_cnn_widths() -> Vec<usize> {
    vec![2, 4, 5]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    /// Width `d` of every token and pooled representation.
    pub dim: usize,
    pub num_layers: usize,
    pub vocab_hash_size: usize,
    pub seed: u64,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub hash_seed: u64,
    #[serde(default = "default_ffn_multiplier")]
    pub ffn_multiplier: usize,
    #[serde(default = "default_cnn_filters")]
    pub cnn_filters: usize,
    #[serde(default = "default_cnn_widths")]
    pub cnn_widths: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::ToyTransformer,
            dim: 32,
            num_layers: 2,
            vocab_hash_size: 8192,
            seed: 0,
            max_len: default_max_len(),
            hash_seed: 0,
            ffn_multiplier: default_ffn_multiplier(),
            cnn_filters: default_cnn_filters(),
            cnn_widths: default_cnn_widths(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.num_layers < 1 {
            return Err(Error::Config("num_layers must be >= 1".into()));
        }
        if self.vocab_hash_size < 2 {
            return Err(Error::Config("vocab_hash_size must be >= 2".into()));
        }
        if self.max_len < 1 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        if self.backbone == Backbone::ToyCnn
            && (self.cnn_filters == 0 || self.cnn_widths.is_empty() || self.cnn_widths.contains(&0))
        {
            return Err(Error::Config("toy-cnn needs positive filters and widths".into()));
        }
        Ok(())
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.vocab_hash_size, self.hash_seed, self.max_len)
    }

    /// Same architecture with a different initialisation seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn check_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.num_layers {
            Err(Error::Encoder(format!(
                "layer {layer} out of range; valid layers are 1..={}",
                self.num_layers
            )))
        } else {
            Ok(())
        }
    }
}

/// Deterministic seed for the `stream`-th component derived from a base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = base
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Result of encoding one text.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    /// One `tokens x d` matrix per layer.
    pub layer_reps: Vec<Matrix<T>>,
    pub pooled: Vec<T>,
    pub prob: T,
}

/// Graph handles produced by a forward pass.
#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub layer_tokens: Vec<Var>,
    /// Pooled representation of each layer, `1 x d`.
    pub layer_pooled: Vec<Var>,
    pub pooled: Var,
    pub logit: Var,
    pub prob: Var,
}

#[derive(Debug, Clone)]
enum Body {
    Transformer(transformer::TransformerLayout),
    Cnn(cnn::CnnLayout),
}

/// An encoder plus its single-logit classification head. Parameters live in
/// a [`ParamStore`] shared with the rest of the model.
#[derive(Debug, Clone)]
pub struct Encoder {
    name: String,
    config: EncoderConfig,
    tokenizer: Tokenizer,
    body: Body,
    head_w: ParamId,
    head_b: ParamId,
    params: Vec<ParamId>,
}

impl Encoder {
    /// Allocates and initialises parameters under `name/...` in `store`.
    /// The classification head starts at zero, so a fresh encoder predicts 0.5.
    pub fn new<T: Scalar>(
        name: &str,
        config: &EncoderConfig,
        store: &mut ParamStore<T>,
    ) -> Result<Self> {
        config.validate()?;
        let first = store.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let body = match config.backbone {
            Backbone::ToyTransformer => {
                Body::Transformer(transformer::TransformerLayout::new(name, config, store, &mut rng))
            }
            Backbone::ToyCnn => Body::Cnn(cnn::CnnLayout::new(name, config, store, &mut rng)),
            Backbone::ExternalAdapter => {
                return Err(Error::Encoder(
                    "external-adapter backbone has no built-in weights; implement ExternalEncoder"
                        .into(),
                ))
            }
        };
        let head_w = store.add_zeros(format!("{name}/head/w"), config.dim, 1);
        let head_b = store.add_zeros(format!("{name}/head/b"), 1, 1);
        let params = (first..store.len()).map(ParamId).collect();
        Ok(Self {
            name: name.to_string(),
            config: config.clone(),
            tokenizer: config.tokenizer(),
            body,
            head_w,
            head_b,
            params,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    /// Every parameter owned by this encoder, head included.
    pub fn param_ids(&self) -> &[ParamId] {
        &self.params
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let ids = self.tokenizer.encode(text);
        if ids.is_empty() {
            return Err(Error::Encoder(format!("text {text:?} has no tokens")));
        }
        Ok(ids)
    }

    /// Records a forward pass over pre-tokenised input.
    pub fn forward<'s, T: Scalar>(&self, g: &mut Graph<'s, T>, tokens: &[usize]) -> Result<EncoderVars> {
        self.forward_with(g, tokens, true)
    }

    /// Forward pass that optionally reads parameters as frozen constants.
    pub fn forward_with<'s, T: Scalar>(
        &self,
        g: &mut Graph<'s, T>,
        tokens: &[usize],
        trainable: bool,
    ) -> Result<EncoderVars> {
        if tokens.is_empty() {
            return Err(Error::Encoder("empty token stream".into()));
        }
        let p = |g: &mut Graph<'s, T>, id: ParamId| {
            if trainable {
                g.param(id)
            } else {
                g.frozen_param(id)
            }
        };
        let (layer_tokens, layer_pooled) = match &self.body {
            Body::Transformer(t) => t.forward(g, tokens, &p),
            Body::Cnn(c) => c.forward(g, tokens, &p),
        };
        let pooled = *layer_pooled.last().expect("at least one layer");
        let w = p(g, self.head_w);
        let b = p(g, self.head_b);
        let wx = g.matmul(pooled, w);
        let logit = g.add(wx, b);
        let prob = g.sigmoid(logit);
        Ok(EncoderVars {
            layer_tokens,
            layer_pooled,
            pooled,
            logit,
            prob,
        })
    }

    pub fn encode<T: Scalar>(&self, store: &ParamStore<T>, text: &str) -> Result<EncoderOutput<T>> {
        let tokens = self.tokenize(text)?;
        self.encode_tokens(store, &tokens)
    }

    pub fn encode_tokens<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        tokens: &[usize],
    ) -> Result<EncoderOutput<T>> {
        let mut g = Graph::new(store);
        let vars = self.forward_with(&mut g, tokens, false)?;
        Ok(EncoderOutput {
            layer_reps: vars.layer_tokens.iter().map(|&v| g.value(v).clone()).collect(),
            pooled: g.value(vars.pooled).as_slice().to_vec(),
            prob: g.scalar(vars.prob),
        })
    }

    /// Pooled representation at `layer` (1-based).
    pub fn layer_representation<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        text: &str,
        layer: usize,
    ) -> Result<Vec<T>> {
        self.config.check_layer(layer)?;
        let tokens = self.tokenize(text)?;
        let mut g = Graph::new(store);
        let vars = self.forward_with(&mut g, &tokens, false)?;
        Ok(g.value(vars.layer_pooled[layer - 1]).as_slice().to_vec())
    }

    /// Graph handle for the pooled representation at `layer` (1-based).
    pub fn layer_var(vars: &EncoderVars, layer: usize) -> Result<Var> {
        if layer == 0 || layer > vars.layer_pooled.len() {
            return Err(Error::Encoder(format!(
                "layer {layer} out of range; valid layers are 1..={}",
                vars.layer_pooled.len()
            )));
        }
        Ok(vars.layer_pooled[layer - 1])
    }
}

/// Seam for binding a pretrained encoder that lives outside this crate.
pub trait ExternalEncoder<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    fn num_layers(&self) -> usize;
    fn encode(&self, text: &str) -> Result<EncoderOutput<T>>;
    /// Pooled representation at `layer` (1-based).
    fn layer_representation(&self, text: &str, layer: usize) -> Result<Vec<T>>;
    /// Names and shapes of the parameters an optimiser may update.
    fn trainable_parameters(&self) -> Vec<(String, (usize, usize))>;
}

#[cfg(test)]
mod tests;
