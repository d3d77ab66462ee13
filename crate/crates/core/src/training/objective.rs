use super::{Model, Settings, Variant};
use crate::encoder::{Encoder, EncoderVars};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::mixing::{mix_average_var, mix_weighted_var};
use crate::scalar::Scalar;

/// Clamp applied to probabilities inside every cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// A labelled, pre-tokenised training example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchItem {
    pub tokens: Vec<usize>,
    pub label: u8,
}

/// An example that only feeds the domain classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdvItem {
    pub tokens: Vec<usize>,
    pub domain: usize,
}

/// Loss nodes of one episode. Components a variant does not use are `None`.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeVars {
    /// Meta-source loss `L_s`.
    pub source: Option<Var>,
    /// Meta-target loss `L_t`.
    pub target: Option<Var>,
    /// Plain task loss of the shared model.
    pub shared: Option<Var>,
    /// Domain-classifier loss `L_D`.
    pub domain: Option<Var>,
    pub total: Var,
}

fn clamp<T: Scalar>(p: T) -> T {
    let eps = T::lit(BCE_EPS);
    p.max(eps).min(T::one() - eps)
}

/// Mean two-sided cross-entropy of probabilities against binary labels.
pub fn binary_cross_entropy<T: Scalar>(probs: &[T], labels: &[u8]) -> Result<T> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::Training(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let total: T = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp(p);
            if y == 1 {
                -p.ln()
            } else {
                -(T::one() - p).ln()
            }
        })
        .sum();
    Ok(total / T::of_usize(probs.len()))
}

/// `L_s` from member probabilities with averaging over `S'`.
///
/// `member_probs[i]` holds the `K` expert probabilities of example `i`
/// followed by the shared model's.
pub fn meta_source_loss_probs<T: Scalar>(
    member_probs: &[Vec<T>],
    labels: &[u8],
    meta_target: usize,
    include_global: bool,
) -> Result<T> {
    let mixed = member_probs
        .iter()
        .map(|p| {
            let k = p.len().saturating_sub(1);
            if meta_target >= k || k < 2 {
                return Err(Error::Training(format!(
                    "meta-target {meta_target} invalid for {k} experts"
                )));
            }
            let experts = p[..k]
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != meta_target)
                .map(|(_, &v)| v);
            let (sum, n) = if include_global {
                (experts.sum::<T>() + p[k], k)
            } else {
                (experts.sum::<T>(), k - 1)
            };
            Ok(sum / T::of_usize(n))
        })
        .collect::<Result<Vec<T>>>()?;
    binary_cross_entropy(&mixed, labels)
}

/// `L_t` from member probabilities: the meta-target expert alone.
pub fn meta_target_loss_probs<T: Scalar>(
    member_probs: &[Vec<T>],
    labels: &[u8],
    meta_target: usize,
) -> Result<T> {
    let probs = member_probs
        .iter()
        .map(|p| {
            p.get(meta_target).copied().ok_or_else(|| {
                Error::Training(format!("meta-target {meta_target} out of range"))
            })
        })
        .collect::<Result<Vec<T>>>()?;
    binary_cross_entropy(&probs, labels)
}

/// `lambda L_s + (1 - lambda) L_t + gamma L_D`.
pub fn total_loss<T: Scalar>(l_s: T, l_t: T, l_d: T, lambda: T, gamma: T) -> T {
    lambda * l_s + (T::one() - lambda) * l_t + gamma * l_d
}

fn bce_mean<T: Scalar>(g: &mut Graph<'_, T>, probs: &[Var], batch: &[BatchItem]) -> Var {
    let eps = T::lit(BCE_EPS);
    let losses: Vec<Var> = probs
        .iter()
        .zip(batch)
        .map(|(&p, item)| g.bce_prob(p, T::of_usize(item.label as usize), eps))
        .collect();
    let total = g.add_all(&losses);
    g.scale(total, T::one() / T::of_usize(losses.len()))
}

fn check_batch(batch: &[BatchItem]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    Ok(())
}

fn forward_all<'s, T: Scalar>(
    g: &mut Graph<'s, T>,
    encoder: &Encoder,
    batch: &[BatchItem],
) -> Result<Vec<EncoderVars>> {
    batch.iter().map(|item| encoder.forward(g, &item.tokens)).collect()
}

fn expert<T>(model: &Model<T>, k: usize) -> Result<&Encoder> {
    model.experts.get(k).ok_or_else(|| {
        Error::Training(format!(
            "meta-target {k} out of range for {} experts",
            model.experts.len()
        ))
    })
}

/// `L_t`: cross-entropy of the meta-target expert on its own batch.
pub fn meta_target_loss<'s, T: Scalar>(
    g: &mut Graph<'s, T>,
    model: &Model<T>,
    meta_target: usize,
    batch: &[BatchItem],
) -> Result<Var> {
    check_batch(batch)?;
    let vars = forward_all(g, expert(model, meta_target)?, batch)?;
    let probs: Vec<Var> = vars.iter().map(|v| v.prob).collect();
    Ok(bce_mean(g, &probs, batch))
}

/// `L_s`: cross-entropy of the mixture over the meta-sources `S'`. The
/// meta-target expert is never evaluated.
pub fn meta_source_loss<'s, T: Scalar>(
    g: &mut Graph<'s, T>,
    model: &Model<T>,
    settings: &Settings,
    meta_target: usize,
    batch: &[BatchItem],
) -> Result<Var> {
    check_batch(batch)?;
    let globals = forward_all(g, &model.global, batch)?;
    source_loss_with(g, model, settings, meta_target, batch, &globals)
}

fn source_loss_with<'s, T: Scalar>(
    g: &mut Graph<'s, T>,
    model: &Model<T>,
    settings: &Settings,
    meta_target: usize,
    batch: &[BatchItem],
    globals: &[EncoderVars],
) -> Result<Var> {
    expert(model, meta_target)?;
    if model.experts.len() < 2 {
        return Err(Error::Training("meta-source mixing needs at least 2 experts".into()));
    }
    let include_global = settings.mixing.meta_source_include_global;
    let sources: Vec<&Encoder> = model
        .experts
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != meta_target)
        .map(|(_, e)| e)
        .collect();
    let mut per_source = Vec::with_capacity(sources.len());
    for e in &sources {
        per_source.push(forward_all(g, e, batch)?);
    }
    let mut mixed = Vec::with_capacity(batch.len());
    for (i, gv) in globals.iter().enumerate() {
        let mut probs: Vec<Var> = per_source.iter().map(|vs| vs[i].prob).collect();
        let mut reps: Vec<Var> = per_source.iter().map(|vs| vs[i].pooled).collect();
        if include_global {
            probs.push(gv.prob);
            reps.push(gv.pooled);
        }
        let p = match &model.attention {
            Some(att) => {
                let w = att.weights_var(g, gv.pooled, &reps);
                mix_weighted_var(g, w, &probs)
            }
            None => mix_average_var(g, &probs),
        };
        mixed.push(p);
    }
    Ok(bce_mean(g, &mixed, batch))
}

/// Mean adversarial loss over the shared model's layer-`X` representations of
/// the task batch (labelled with its source domain) and any extra items.
fn domain_loss<'s, T: Scalar>(
    g: &mut Graph<'s, T>,
    model: &Model<T>,
    domain: usize,
    globals: &[EncoderVars],
    extra: &[AdvItem],
) -> Result<Option<Var>> {
    let Some(branch) = &model.adversary else {
        return Ok(None);
    };
    let layer = branch.attach_layer();
    let mut losses = Vec::with_capacity(globals.len() + extra.len());
    for vars in globals {
        let rep = Encoder::layer_var(vars, layer)?;
        losses.push(branch.loss_var(g, rep, domain)?);
    }
    for item in extra {
        let vars = model.global.forward(g, &item.tokens)?;
        let rep = Encoder::layer_var(&vars, layer)?;
        losses.push(branch.loss_var(g, rep, item.domain)?);
    }
    let total = g.add_all(&losses);
    Ok(Some(g.scale(total, T::one() / T::of_usize(losses.len()))))
}

/// Records the full loss of one episode for `model`'s variant.
///
/// `domain` is the expert index of the batch (the meta-target); `extra` feeds
/// only the domain classifier. With `gamma = 0` the domain loss is still
/// evaluated for logging but does not enter the total, so the adversary
/// receives no gradient at all.
pub fn build_objective<'s, T: Scalar>(
    g: &mut Graph<'s, T>,
    model: &Model<T>,
    settings: &Settings,
    domain: usize,
    batch: &[BatchItem],
    extra: &[AdvItem],
) -> Result<EpisodeVars> {
    check_batch(batch)?;
    let train = &settings.train;
    let gamma = T::lit(train.gamma);
    let globals = forward_all(g, &model.global, batch)?;
    let domain_var = domain_loss(g, model, domain, &globals, extra)?;
    let with_domain = |g: &mut Graph<'s, T>, base: Var| match domain_var {
        Some(d) if train.gamma > 0.0 => {
            let scaled = g.scale(d, gamma);
            g.add(base, scaled)
        }
        _ => base,
    };
    let vars = match model.variant {
        Variant::Basic | Variant::Adv(_) => {
            let probs: Vec<Var> = globals.iter().map(|v| v.prob).collect();
            let shared = bce_mean(g, &probs, batch);
            let total = with_domain(g, shared);
            EpisodeVars {
                source: None,
                target: None,
                shared: Some(shared),
                domain: domain_var,
                total,
            }
        }
        Variant::IndependentAvg | Variant::IndependentFt | Variant::MoeDc => {
            let probs: Vec<Var> = globals.iter().map(|v| v.prob).collect();
            let shared = bce_mean(g, &probs, batch);
            let target = meta_target_loss(g, model, domain, batch)?;
            let total = g.add(target, shared);
            EpisodeVars {
                source: None,
                target: Some(target),
                shared: Some(shared),
                domain: domain_var,
                total,
            }
        }
        Variant::MoeAvg | Variant::MoeAtt | Variant::MoeAttAdv(_) => {
            let lambda = T::lit(train.lambda);
            let source = source_loss_with(g, model, settings, domain, batch, &globals)?;
            let target = meta_target_loss(g, model, domain, batch)?;
            let a = g.scale(source, lambda);
            let b = g.scale(target, T::one() - lambda);
            let mixed = g.add(a, b);
            let total = with_domain(g, mixed);
            EpisodeVars {
                source: Some(source),
                target: Some(target),
                shared: None,
                domain: domain_var,
                total,
            }
        }
    };
    Ok(vars)
}
