//! Rules for combining expert and shared-model probabilities.
//!
//! All combination happens in probability space. Member order is always
//! experts first (by expert index), then the shared model.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabelledExample;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::evaluation::{ConfusionCounts, Metric};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{dot, softmax, Matrix};

/// Tolerance on the simplex constraint.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// A participant in a mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Member {
    Expert(usize),
    Global,
}

impl fmt::Display for Member {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Member::Expert(k) => write!(f, "expert{k}"),
            Member::Global => f.write_str("global"),
        }
    }
}

/// Members `experts \ {excluded}` in index order, optionally followed by the
/// shared model.
pub fn members(num_experts: usize, excluded: Option<usize>, include_global: bool) -> Vec<Member> {
    let mut m: Vec<Member> = (0..num_experts)
        .filter(|&k| Some(k) != excluded)
        .map(Member::Expert)
        .collect();
    if include_global {
        m.push(Member::Global);
    }
    m
}

/// A point on the probability simplex over an ordered member list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixWeights<T> {
    weights: Vec<T>,
    members: Vec<Member>,
}

impl<T: Scalar> MixWeights<T> {
    pub fn new(weights: Vec<T>, members: Vec<Member>) -> Result<Self> {
        if weights.len() != members.len() {
            return Err(Error::Mixing(format!(
                "{} weights for {} members",
                weights.len(),
                members.len()
            )));
        }
        if weights.is_empty() {
            return Err(Error::Mixing("empty member set".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::Mixing("weights must be finite and non-negative".into()));
        }
        let total: T = weights.iter().copied().sum();
        if (total.to_f64_lossy() - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Mixing(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { weights, members })
    }

    pub fn uniform(members: Vec<Member>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Mixing("empty member set".into()));
        }
        let w = T::one() / T::of_usize(members.len());
        Self::new(vec![w; members.len()], members)
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn weight_of(&self, m: Member) -> Option<T> {
        self.members.iter().position(|&x| x == m).map(|i| self.weights[i])
    }

    pub fn cast<U: Scalar>(&self) -> MixWeights<U> {
        MixWeights {
            weights: self.weights.iter().map(|w| U::lit(w.to_f64_lossy())).collect(),
            members: self.members.clone(),
        }
    }
}

/// `(sum_k p_k + p_g) / (|K| + 1)` over a chosen expert subset.
pub fn mix_average<T: Scalar>(probs: &[T], global_prob: T) -> Result<T> {
    if probs.is_empty() {
        return Err(Error::Mixing("averaging needs at least one expert".into()));
    }
    // same kernel as uniform `mix_weighted`, so the two agree bit for bit
    let w = T::one() / T::of_usize(probs.len() + 1);
    Ok(probs
        .iter()
        .chain(std::iter::once(&global_prob))
        .fold(T::zero(), |acc, &p| acc + p * w))
}

/// `sum_m alpha_m p_m`, with `probs` aligned to `weights.members()`.
pub fn mix_weighted<T: Scalar>(probs: &[T], weights: &MixWeights<T>) -> Result<T> {
    if probs.len() != weights.weights.len() {
        return Err(Error::Mixing(format!(
            "{} probabilities for {} weights",
            probs.len(),
            weights.weights.len()
        )));
    }
    Ok(dot(probs, &weights.weights))
}

/// Static mixing weights from a domain classifier: `softmax(r_g W_C + b_C)`
/// over the `K` source domains. `w_c` is `d x K`.
pub fn domain_classifier_weights<T: Scalar>(
    w_c: &Matrix<T>,
    b_c: &[T],
    r_g: &[T],
) -> Result<MixWeights<T>> {
    if w_c.rows() != r_g.len() || w_c.cols() != b_c.len() {
        return Err(Error::Mixing(format!(
            "domain classifier is {}x{} with bias {}, representation width {}",
            w_c.rows(),
            w_c.cols(),
            b_c.len(),
            r_g.len()
        )));
    }
    let r = Matrix::row_vector(r_g.to_vec());
    let logits = r.matmul(w_c);
    let logits: Vec<T> = logits.as_slice().iter().zip(b_c).map(|(&a, &b)| a + b).collect();
    let k = logits.len();
    MixWeights::new(softmax(&logits), members(k, None, false))
}

/// `sum_{k in S} p_k alpha_C^(k)`. The shared model never takes part; passing
/// its probability is a contract violation.
pub fn mix_domain_classifier<T: Scalar>(
    expert_probs: &[T],
    global_prob: Option<T>,
    weights: &MixWeights<T>,
) -> Result<T> {
    if global_prob.is_some() || weights.members.contains(&Member::Global) {
        return Err(Error::Mixing(
            "domain-classifier mixing uses domain experts only; shared model supplied".into(),
        ));
    }
    if expert_probs.len() != weights.weights.len() {
        return Err(Error::Mixing(format!(
            "{} expert probabilities for {} source domains",
            expert_probs.len(),
            weights.weights.len()
        )));
    }
    mix_weighted(expert_probs, weights)
}

/// Query and key projections of the attention mixer, both `d x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub query: Matrix<T>,
    pub key: Matrix<T>,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn new(query: Matrix<T>, key: Matrix<T>) -> Result<Self> {
        let d = query.rows();
        if query.shape() != (d, d) || key.shape() != (d, d) {
            return Err(Error::Mixing("attention matrices must both be d x d".into()));
        }
        if !query.all_finite() || !key.all_finite() {
            return Err(Error::Mixing("attention matrices must be finite".into()));
        }
        Ok(Self { query, key })
    }
}

/// Attention weights over `member_reps`: `q = r_g Q^T`, `k_m = r_m K^T`,
/// `alpha = softmax(q k^T)` (optionally divided by `sqrt(d)`). Only the
/// members listed take part in the softmax.
pub fn attention_weights<T: Scalar>(
    params: &AttentionParams<T>,
    r_g: &[T],
    member_reps: &[(Member, &[T])],
    scaled: bool,
) -> Result<MixWeights<T>> {
    if member_reps.is_empty() {
        return Err(Error::Mixing("attention over an empty member list".into()));
    }
    let d = params.query.rows();
    if r_g.len() != d || member_reps.iter().any(|(_, r)| r.len() != d) {
        return Err(Error::Mixing(format!("representations must have width {d}")));
    }
    let q = Matrix::row_vector(r_g.to_vec()).matmul_nt(&params.query);
    let scale = if scaled {
        T::one() / T::of_usize(d).sqrt()
    } else {
        T::one()
    };
    let logits: Vec<T> = member_reps
        .iter()
        .map(|(_, r)| {
            let k = Matrix::row_vector(r.to_vec()).matmul_nt(&params.key);
            dot(q.as_slice(), k.as_slice()) * scale
        })
        .collect();
    MixWeights::new(
        softmax(&logits),
        member_reps.iter().map(|(m, _)| *m).collect(),
    )
}

/// Parameter handles of the attention mixer inside a model's store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionLayout {
    pub query: ParamId,
    pub key: ParamId,
    pub scaled: bool,
}

impl AttentionLayout {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        dim: usize,
        scaled: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            query: store.add_uniform("attention/query", dim, dim, dim, rng),
            key: store.add_uniform("attention/key", dim, dim, dim, rng),
            scaled,
        }
    }

    pub fn params<T: Scalar>(&self, store: &ParamStore<T>) -> AttentionParams<T> {
        AttentionParams {
            query: store.get(self.query).clone(),
            key: store.get(self.key).clone(),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.query, self.key]
    }

    /// Differentiable attention weights, `1 x m`.
    pub fn weights_var<T: Scalar>(&self, g: &mut Graph<'_, T>, r_g: Var, member_reps: &[Var]) -> Var {
        let q_mat = g.param(self.query);
        let k_mat = g.param(self.key);
        let q = g.matmul_nt(r_g, q_mat);
        let stacked = g.stack_rows(member_reps);
        let keys = g.matmul_nt(stacked, k_mat);
        let mut logits = g.matmul_nt(q, keys);
        if self.scaled {
            let d = g.value(r_g).cols();
            logits = g.scale(logits, T::one() / T::of_usize(d).sqrt());
        }
        g.softmax_rows(logits)
    }
}

/// Linear domain classifier `softmax(r W + b)` over the `K` source domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DomainClassifierLayout {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DomainClassifierLayout {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        dim: usize,
        num_domains: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add_uniform("domain_classifier/weight", dim, num_domains, dim, rng),
            bias: store.add_zeros("domain_classifier/bias", 1, num_domains),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    pub fn logits_var<T: Scalar>(&self, g: &mut Graph<'_, T>, r_g: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let h = g.matmul(r_g, w);
        g.add(h, b)
    }

    pub fn weights<T: Scalar>(&self, store: &ParamStore<T>, r_g: &[T]) -> Result<MixWeights<T>> {
        domain_classifier_weights(store.get(self.weight), store.get(self.bias).as_slice(), r_g)
    }
}

/// Differentiable `sum_m w_m p_m` for a `1 x m` weight row and `m` scalar nodes.
pub fn mix_weighted_var<T: Scalar>(g: &mut Graph<'_, T>, weights: Var, probs: &[Var]) -> Var {
    let stacked = g.stack_rows(probs);
    g.matmul(weights, stacked)
}

/// Differentiable mean of scalar nodes.
pub fn mix_average_var<T: Scalar>(g: &mut Graph<'_, T>, probs: &[Var]) -> Var {
    let total = g.add_all(probs);
    g.scale(total, T::one() / T::of_usize(probs.len()))
}

/// A read-only view of `K` domain experts and the shared model.
#[derive(Debug, Clone, Copy)]
pub struct ExpertBank<'a, T> {
    pub store: &'a ParamStore<T>,
    pub experts: &'a [Encoder],
    pub global: &'a Encoder,
}

impl<'a, T: Scalar> ExpertBank<'a, T> {
    pub fn new(store: &'a ParamStore<T>, experts: &'a [Encoder], global: &'a Encoder) -> Result<Self> {
        if experts.len() < 2 {
            return Err(Error::Mixing(format!(
                "an expert bank needs at least 2 experts, got {}",
                experts.len()
            )));
        }
        let d = global.config().dim;
        if experts.iter().any(|e| e.config().dim != d) {
            return Err(Error::Mixing("all bank members must share width d".into()));
        }
        Ok(Self {
            store,
            experts,
            global,
        })
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    /// Probabilities of every member, experts then shared model.
    pub fn member_probs(&self, text: &str) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(self.experts.len() + 1);
        for e in self.experts.iter().chain(std::iter::once(self.global)) {
            out.push(e.encode(self.store, text)?.prob);
        }
        Ok(out)
    }
}

/// One candidate evaluated by [`finetune_average_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    pub draw: Vec<u32>,
    pub weights: Vec<f64>,
    pub score: f64,
}

/// Normalises a non-zero integer draw onto the simplex.
pub fn normalize_draw<T: Scalar>(draw: &[u32]) -> Vec<T> {
    let total: u32 = draw.iter().sum();
    draw.iter()
        .map(|&v| T::lit(f64::from(v) / f64::from(total)))
        .collect()
}

/// Random search over integer weights in `{0..10}` for the `K + 1` members,
/// scored on a validation set. Returns the best candidate (earliest trial on
/// ties) and the full trial log.
///
/// `member_probs[i]` holds the member probabilities of validation example `i`
/// (experts then shared model). Draws that are all zero are redrawn.
pub fn finetune_search_probs<T: Scalar>(
    member_probs: &[Vec<T>],
    labels: &[u8],
    trials: usize,
    seed: u64,
    metric: Metric,
) -> Result<(MixWeights<T>, Vec<SearchTrial>)> {
    if member_probs.is_empty() {
        return Err(Error::Mixing("empty validation set".into()));
    }
    if member_probs.len() != labels.len() {
        return Err(Error::Mixing("probabilities and labels differ in length".into()));
    }
    if trials == 0 {
        return Err(Error::Mixing("need at least one trial".into()));
    }
    let m = member_probs[0].len();
    if m < 2 || member_probs.iter().any(|p| p.len() != m) {
        return Err(Error::Mixing("inconsistent member count".into()));
    }
    let member_list = members(m - 1, None, true);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(trials);
    let mut best: Option<(f64, MixWeights<T>)> = None;
    for _ in 0..trials {
        let draw = loop {
            let d: Vec<u32> = (0..m).map(|_| rng.gen_range(0..=10)).collect();
            if d.iter().any(|&v| v > 0) {
                break d;
            }
        };
        let w = MixWeights::new(normalize_draw::<T>(&draw), member_list.clone())?;
        let mut counts = ConfusionCounts::default();
        for (p, &y) in member_probs.iter().zip(labels) {
            counts.record(mix_weighted(p, &w)?.to_f64_lossy(), y);
        }
        let score = metric.score(&counts)?;
        log.push(SearchTrial {
            draw,
            weights: w.weights.iter().map(|v| v.to_f64_lossy()).collect(),
            score,
        });
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, w));
        }
    }
    Ok((best.expect("trials >= 1").1, log))
}

/// [`finetune_search_probs`] over a frozen bank and a labelled validation set.
pub fn finetune_average_search<T: Scalar>(
    bank: &ExpertBank<'_, T>,
    val_set: &[LabelledExample],
    trials: usize,
    seed: u64,
    metric: Metric,
) -> Result<MixWeights<T>> {
    if val_set.is_empty() {
        return Err(Error::Mixing("empty validation set".into()));
    }
    let probs = val_set
        .iter()
        .map(|e| bank.member_probs(&e.text))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<u8> = val_set.iter().map(|e| e.label).collect();
    Ok(finetune_search_probs(&probs, &labels, trials, seed, metric)?.0)
}
