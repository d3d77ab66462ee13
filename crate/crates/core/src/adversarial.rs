//! Domain-adversarial branch with gradient reversal.
//!
//! The branch classifies the domain of an encoder layer's pooled
//! representation. Its own parameters follow the ordinary cross-entropy
//! gradient; the host encoder receives the negated gradient, pushing the
//! representation towards domain confusion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{softmax, Matrix};

/// Forward pass of the reversal operator: the identity.
pub fn grl_forward<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.clone()
}

/// Backward pass of the reversal operator: plain negation.
pub fn grl_backward<T: Scalar>(upstream: &Matrix<T>) -> Matrix<T> {
    upstream.map(|v| -v)
}

/// Which domains the branch distinguishes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainLabels {
    /// `K` source domains plus the unlabelled target as class `K`.
    #[default]
    SourcesAndTarget,
    /// Source domains only.
    SourcesOnly,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialConfig {
    #[serde(default)]
    pub domain_labels: DomainLabels,
}

impl AdversarialConfig {
    pub fn num_domains(&self, num_sources: usize) -> usize {
        match self.domain_labels {
            DomainLabels::SourcesAndTarget => num_sources + 1,
            DomainLabels::SourcesOnly => num_sources,
        }
    }
}

/// Linear domain classifier attached at a 1-based encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DomainAdvBranch {
    attach_layer: usize,
    num_domains: usize,
    weight: ParamId,
    bias: ParamId,
}

impl DomainAdvBranch {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        host: &EncoderConfig,
        attach_layer: usize,
        num_domains: usize,
        rng: &mut R,
    ) -> Result<Self> {
        host.check_layer(attach_layer)?;
        if num_domains < 2 {
            return Err(Error::Config(format!(
                "domain classifier needs at least 2 domains, got {num_domains}"
            )));
        }
        let d = host.dim;
        Ok(Self {
            attach_layer,
            num_domains,
            weight: store.add_uniform("adversary/weight", d, num_domains, d, rng),
            bias: store.add_zeros("adversary/bias", 1, num_domains),
        })
    }

    pub fn attach_layer(&self) -> usize {
        self.attach_layer
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    /// Domain logits of a `1 x d` representation, without reversal.
    pub fn logits_var<T: Scalar>(&self, g: &mut Graph<'_, T>, rep: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let h = g.matmul(rep, w);
        g.add(h, b)
    }

    /// `-log f_d(GRL(rep))[domain]`.
    pub fn loss_var<T: Scalar>(&self, g: &mut Graph<'_, T>, rep: Var, domain: usize) -> Result<Var> {
        self.check_domain(domain)?;
        let reversed = g.grad_reverse(rep);
        let logits = self.logits_var(g, reversed);
        Ok(g.cross_entropy(logits, domain))
    }

    fn check_domain(&self, domain: usize) -> Result<()> {
        if domain >= self.num_domains {
            return Err(Error::Training(format!(
                "domain index {domain} out of range for {} domains",
                self.num_domains
            )));
        }
        Ok(())
    }

    /// Domain probabilities for a plain representation.
    pub fn domain_probs<T: Scalar>(&self, store: &ParamStore<T>, rep: &[T]) -> Vec<T> {
        let r = Matrix::row_vector(rep.to_vec());
        let logits = r.matmul(store.get(self.weight));
        let logits: Vec<T> = logits
            .as_slice()
            .iter()
            .zip(store.get(self.bias).as_slice())
            .map(|(&a, &b)| a + b)
            .collect();
        softmax(&logits)
    }
}

/// Cross-entropy of the branch's prediction for a plain representation.
pub fn domain_adv_loss<T: Scalar>(
    branch: &DomainAdvBranch,
    store: &ParamStore<T>,
    layer_rep: &[T],
    true_domain: usize,
) -> Result<T> {
    branch.check_domain(true_domain)?;
    let probs = branch.domain_probs(store, layer_rep);
    Ok(-probs[true_domain].ln())
}
