use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Settings, Variant};
use crate::adversarial::DomainAdvBranch;
use crate::data::DomainId;
use crate::encoder::{derive_seed, Encoder, EncoderConfig, EncoderOutput};
use crate::error::{Error, Result};
use crate::mixing::{
    self, attention_weights, mix_average, mix_domain_classifier, mix_weighted, AttentionLayout,
    DomainClassifierLayout, ExpertBank, Member, MixWeights,
};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Seed streams for the independently initialised components.
pub(crate) mod streams {
    pub const GLOBAL: u64 = 0;
    pub const EXPERT_BASE: u64 = 1;
    pub const ATTENTION: u64 = 1_000;
    pub const DOMAIN_CLASSIFIER: u64 = 2_000;
    pub const ADVERSARY: u64 = 3_000;
    pub const VALIDATION: u64 = 4_000;
    pub const TARGET_ORDER: u64 = 5_000;
    pub const DC_SCHEDULE: u64 = 6_000;
    pub const FT_SEARCH: u64 = 7_000;
}

/// A trainable model of any variant. All parameters share one store.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub variant: Variant,
    /// Source domains in expert-index order.
    pub domains: Vec<DomainId>,
    pub encoder_config: EncoderConfig,
    pub store: ParamStore<T>,
    pub global: Encoder,
    pub experts: Vec<Encoder>,
    pub attention: Option<AttentionLayout>,
    pub domain_classifier: Option<DomainClassifierLayout>,
    pub adversary: Option<DomainAdvBranch>,
    /// Searched static weights (fine-tuned averaging only).
    pub fine_tuned: Option<MixWeights<T>>,
}

/// A mixed prediction plus the weights that produced it, when the variant
/// has any.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub prob: T,
    pub weights: Option<MixWeights<T>>,
}

impl<T: Scalar> Model<T> {
    /// Allocates and initialises every component the variant needs.
    pub fn build(variant: Variant, domains: Vec<DomainId>, settings: &Settings) -> Result<Self> {
        settings.validate_for(variant)?;
        if domains.len() < 2 {
            return Err(Error::Training(format!(
                "need at least 2 source domains, got {}",
                domains.len()
            )));
        }
        let base = derive_seed(settings.encoder.seed, settings.train.seed);
        let enc = &settings.encoder;
        let mut store = ParamStore::new();
        let global = Encoder::new(
            "global",
            &enc.with_seed(derive_seed(base, streams::GLOBAL)),
            &mut store,
        )?;
        let mut experts = Vec::new();
        if variant.has_experts() {
            for (k, d) in domains.iter().enumerate() {
                experts.push(Encoder::new(
                    &format!("expert-{d}"),
                    &enc.with_seed(derive_seed(base, streams::EXPERT_BASE + k as u64)),
                    &mut store,
                )?);
            }
        }
        let attention = variant.uses_attention().then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, streams::ATTENTION));
            AttentionLayout::new(&mut store, enc.dim, settings.mixing.attention_scaled, &mut rng)
        });
        let domain_classifier = (variant == Variant::MoeDc).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, streams::DOMAIN_CLASSIFIER));
            DomainClassifierLayout::new(&mut store, enc.dim, domains.len(), &mut rng)
        });
        let adversary = match variant.adversary_layer() {
            Some(layer) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, streams::ADVERSARY));
                let m = settings.adversarial.num_domains(domains.len());
                Some(DomainAdvBranch::new(&mut store, enc, layer, m, &mut rng)?)
            }
            None => None,
        };
        Ok(Self {
            variant,
            domains,
            encoder_config: enc.clone(),
            store,
            global,
            experts,
            attention,
            domain_classifier,
            adversary,
            fine_tuned: None,
        })
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn bank(&self) -> Result<ExpertBank<'_, T>> {
        ExpertBank::new(&self.store, &self.experts, &self.global)
    }

    /// Every encoder, experts first then the shared model.
    pub fn encoders(&self) -> impl Iterator<Item = &Encoder> {
        self.experts.iter().chain(std::iter::once(&self.global))
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        self.global.tokenize(text)
    }

    /// Parameters of the mixing components (attention or domain classifier).
    pub fn mixing_param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if let Some(a) = &self.attention {
            ids.extend(a.param_ids());
        }
        if let Some(dc) = &self.domain_classifier {
            ids.extend(dc.param_ids());
        }
        ids
    }

    pub fn predict(&self, text: &str) -> Result<Prediction<T>> {
        let tokens = self.tokenize(text)?;
        self.predict_tokens(&tokens)
    }

    /// The variant's inference rule over all `K` experts and the shared model.
    /// Components not trained yet fall back to plain averaging.
    pub fn predict_tokens(&self, tokens: &[usize]) -> Result<Prediction<T>> {
        let g_out = self.global.encode_tokens(&self.store, tokens)?;
        if self.experts.is_empty() {
            return Ok(Prediction {
                prob: g_out.prob,
                weights: None,
            });
        }
        let e_out: Vec<EncoderOutput<T>> = self
            .experts
            .iter()
            .map(|e| e.encode_tokens(&self.store, tokens))
            .collect::<Result<_>>()?;
        let expert_probs: Vec<T> = e_out.iter().map(|o| o.prob).collect();
        let mut all_probs = expert_probs.clone();
        all_probs.push(g_out.prob);
        let average = || -> Result<Prediction<T>> {
            Ok(Prediction {
                prob: mix_average(&expert_probs, g_out.prob)?,
                weights: None,
            })
        };
        match self.variant {
            Variant::IndependentFt => match &self.fine_tuned {
                Some(w) => Ok(Prediction {
                    prob: mix_weighted(&all_probs, w)?,
                    weights: Some(w.clone()),
                }),
                None => average(),
            },
            Variant::MoeAtt | Variant::MoeAttAdv(_) => {
                let layout = self.attention.as_ref().expect("attention variant has a mixer");
                let params = layout.params(&self.store);
                let mut reps: Vec<(Member, &[T])> = e_out
                    .iter()
                    .enumerate()
                    .map(|(k, o)| (Member::Expert(k), o.pooled.as_slice()))
                    .collect();
                reps.push((Member::Global, g_out.pooled.as_slice()));
                let w = attention_weights(&params, &g_out.pooled, &reps, layout.scaled)?;
                Ok(Prediction {
                    prob: mix_weighted(&all_probs, &w)?,
                    weights: Some(w),
                })
            }
            Variant::MoeDc => match &self.domain_classifier {
                Some(dc) => {
                    let w = dc.weights(&self.store, &g_out.pooled)?;
                    Ok(Prediction {
                        prob: mix_domain_classifier(&expert_probs, None, &w)?,
                        weights: Some(w),
                    })
                }
                None => average(),
            },
            _ => average(),
        }
    }

    /// Member list used at inference time.
    pub fn inference_members(&self) -> Vec<Member> {
        match self.variant {
            Variant::MoeDc => mixing::members(self.experts.len(), None, false),
            _ => mixing::members(self.experts.len(), None, true),
        }
    }
}
