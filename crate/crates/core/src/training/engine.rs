use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::streams;
use super::objective::{build_objective, AdvItem, BatchItem};
use super::{schedule, Model, Settings, Variant};
use crate::adversarial::DomainLabels;
use crate::data::{LabelledExample, TrainingBundle};
use crate::encoder::derive_seed;
use crate::error::{Error, Result};
use crate::evaluation::ConfusionCounts;
use crate::graph::Graph;
use crate::mixing::{finetune_search_probs, SearchTrial};
use crate::optim::{Accumulator, AdamW, AdamWConfig};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// One line of `history.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryRecord {
    Episode {
        epoch: usize,
        episode: usize,
        step: usize,
        domain: String,
        loss: f64,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        source: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        target: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        shared: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        domain_loss: Option<f64>,
    },
    Epoch {
        epoch: usize,
        train_loss: f64,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        val_metric: Option<f64>,
    },
    DomainClassifier {
        epoch: usize,
        loss: f64,
    },
    Selection {
        best_epoch: usize,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        val_metric: Option<f64>,
    },
    FineTune {
        trials: usize,
        best_score: f64,
        weights: Vec<f64>,
    },
}

/// Ordered training log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<HistoryRecord>,
}

impl History {
    pub fn push(&mut self, r: HistoryRecord) {
        self.records.push(r);
    }

    /// Mean training loss of each epoch, in order.
    pub fn epoch_losses(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| match r {
                HistoryRecord::Epoch { train_loss, .. } => Some(*train_loss),
                _ => None,
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Output of [`train`].
#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub model: Model<T>,
    pub history: History,
    /// Held-back validation examples used for selection.
    pub validation: Vec<LabelledExample>,
    pub best_epoch: usize,
    /// Candidate log of the fine-tuned averaging search, if any.
    pub search: Vec<SearchTrial>,
}

fn tokenize_sources<T: Scalar>(
    model: &Model<T>,
    bundle: &TrainingBundle,
) -> Vec<Vec<Option<BatchItem>>> {
    let mut dropped = 0usize;
    let out = bundle
        .indexed_sources()
        .map(|(_, exs)| {
            exs.iter()
                .map(|e| match model.tokenize(&e.text) {
                    Ok(tokens) => Some(BatchItem {
                        tokens,
                        label: e.label,
                    }),
                    Err(_) => {
                        dropped += 1;
                        None
                    }
                })
                .collect()
        })
        .collect();
    if dropped > 0 {
        warn!("{dropped} training examples have no tokens and are skipped");
    }
    out
}

/// Cycles through the target pool in seeded, reshuffled passes.
struct TargetFeed {
    items: Vec<AdvItem>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl TargetFeed {
    fn new(items: Vec<AdvItem>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        Self {
            items,
            order,
            cursor: 0,
            rng,
        }
    }

    fn take(&mut self, n: usize) -> Vec<AdvItem> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                let item = self.items[self.order[self.cursor]].clone();
                self.cursor += 1;
                item
            })
            .collect()
    }
}

/// Validation score of the model's current inference rule.
pub(crate) fn score_examples<T: Scalar>(
    model: &Model<T>,
    examples: &[LabelledExample],
    metric: crate::evaluation::Metric,
) -> Result<Option<f64>> {
    let mut counts = ConfusionCounts::default();
    for e in examples {
        let Ok(tokens) = model.tokenize(&e.text) else {
            continue;
        };
        let p = model.predict_tokens(&tokens)?.prob;
        counts.record(p.to_f64_lossy(), e.label);
    }
    if counts.total() == 0 {
        return Ok(None);
    }
    metric.score(&counts).map(Some)
}

fn check_finite(loss: f64, epoch: usize, episode: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Training(format!(
            "loss became non-finite at epoch {epoch}, episode {episode}"
        )));
    }
    Ok(())
}

/// Trains `variant` on the labelled sources of `bundle`.
///
/// A label-stratified validation split is held back from each source domain
/// and the epoch with the best validation score is kept (the last epoch when
/// there is no validation data). Unlabelled target text only reaches the
/// domain-adversarial loss.
pub fn train<T: Scalar>(
    variant: Variant,
    bundle: &TrainingBundle,
    settings: &Settings,
) -> Result<Trained<T>> {
    settings.validate_for(variant)?;
    let cfg = &settings.train;
    let base = derive_seed(settings.encoder.seed, cfg.seed);
    let (train_set, validation) = if cfg.val_fraction > 0.0 {
        bundle.split_validation(cfg.val_fraction, derive_seed(base, streams::VALIDATION))
    } else {
        (bundle.clone(), Vec::new())
    };
    let mut model: Model<T> = Model::build(variant, bundle.source_domains(), settings)?;
    let items = tokenize_sources(&model, &train_set);

    let mut feed = match (&model.adversary, settings.adversarial.domain_labels) {
        (Some(_), DomainLabels::SourcesAndTarget) => {
            let k = model.domains.len();
            let pool: Vec<AdvItem> = train_set
                .target_unlabelled()
                .iter()
                .filter_map(|e| model.tokenize(&e.text).ok())
                .map(|tokens| AdvItem { tokens, domain: k })
                .collect();
            if pool.is_empty() {
                warn!("no unlabelled target text; the target domain class is never seen");
            }
            Some(TargetFeed::new(pool, derive_seed(base, streams::TARGET_ORDER)))
        }
        _ => None,
    };

    let mut opt = AdamW::new(
        AdamWConfig::new(cfg.learning_rate, cfg.weight_decay, cfg.warmup_steps),
        &model.store,
    );
    let mut acc = Accumulator::new(cfg.grad_accumulation);
    let mut history = History::default();
    let mut best: Option<(f64, usize, ParamStore<T>)> = None;
    let mut last_epoch = 0;

    for epoch in 0..cfg.epochs {
        let episodes = schedule(&train_set, cfg.batch_size, cfg.seed, epoch)?;
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for (i, ep) in episodes.iter().enumerate() {
            let batch: Vec<BatchItem> = ep
                .examples
                .iter()
                .filter_map(|&j| items[ep.domain][j].clone())
                .collect();
            if batch.is_empty() {
                continue;
            }
            let extra = feed.as_mut().map(|f| f.take(batch.len())).unwrap_or_default();
            let (grads, record) = {
                let mut g = Graph::new(&model.store);
                let vars = build_objective(&mut g, &model, settings, ep.domain, &batch, &extra)?;
                let loss = g.scalar(vars.total).to_f64_lossy();
                check_finite(loss, epoch, i)?;
                let value = |v: Option<crate::graph::Var>| v.map(|v| g.scalar(v).to_f64_lossy());
                let record = HistoryRecord::Episode {
                    epoch,
                    episode: i,
                    step: opt.steps_taken(),
                    domain: ep.meta_target.to_string(),
                    loss,
                    source: value(vars.source),
                    target: value(vars.target),
                    shared: value(vars.shared),
                    domain_loss: value(vars.domain),
                };
                (g.backward(vars.total), record)
            };
            if let HistoryRecord::Episode { loss, .. } = &record {
                loss_sum += loss;
                loss_n += 1;
            }
            if cfg.log_interval > 0 && i % cfg.log_interval == 0 {
                history.push(record);
            }
            if let Some(avg) = acc.push(grads) {
                opt.step(&mut model.store, &avg);
            }
        }
        if let Some(avg) = acc.flush() {
            opt.step(&mut model.store, &avg);
        }
        let train_loss = if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 };
        let val_metric = score_examples(&model, &validation, cfg.metric)?;
        debug!("epoch {epoch}: loss {train_loss:.5} val {val_metric:?}");
        history.push(HistoryRecord::Epoch {
            epoch,
            train_loss,
            val_metric,
        });
        if let Some(score) = val_metric {
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, epoch, model.store.clone()));
            }
        }
        last_epoch = epoch;
    }

    let (best_epoch, best_score) = match best {
        Some((score, epoch, store)) => {
            model.store = store;
            (epoch, Some(score))
        }
        None => (last_epoch, None),
    };
    history.push(HistoryRecord::Selection {
        best_epoch,
        val_metric: best_score,
    });

    if variant == Variant::MoeDc {
        train_domain_classifier(&mut model, &train_set, settings, base, &mut history)?;
    }
    let mut search = Vec::new();
    if variant == Variant::IndependentFt {
        search = fit_fine_tuned(&mut model, &validation, settings, base, &mut history)?;
    }
    info!("trained {variant}: best epoch {best_epoch}");
    Ok(Trained {
        model,
        history,
        validation,
        best_epoch,
        search,
    })
}

/// Fits the domain classifier on frozen shared-model representations with a
/// fresh optimiser and the same epoch budget.
fn train_domain_classifier<T: Scalar>(
    model: &mut Model<T>,
    train_set: &TrainingBundle,
    settings: &Settings,
    base: u64,
    history: &mut History,
) -> Result<()> {
    let dc = model
        .domain_classifier
        .ok_or_else(|| Error::Training("variant has no domain classifier".into()))?;
    let cfg = &settings.train;
    let reps: Vec<Vec<Option<Matrix<T>>>> = train_set
        .indexed_sources()
        .map(|(_, exs)| {
            exs.iter()
                .map(|e| {
                    model
                        .global
                        .encode(&model.store, &e.text)
                        .ok()
                        .map(|o| Matrix::row_vector(o.pooled))
                })
                .collect()
        })
        .collect();
    let mut opt = AdamW::new(
        AdamWConfig::new(cfg.learning_rate, cfg.weight_decay, cfg.warmup_steps),
        &model.store,
    );
    let seed = derive_seed(base, streams::DC_SCHEDULE);
    for epoch in 0..cfg.epochs {
        let episodes = schedule(train_set, cfg.batch_size, seed, epoch)?;
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for ep in &episodes {
            let grads = {
                let mut g = Graph::new(&model.store);
                let losses: Vec<_> = ep
                    .examples
                    .iter()
                    .filter_map(|&j| reps[ep.domain][j].clone())
                    .map(|r| {
                        let r = g.constant(r);
                        let logits = dc.logits_var(&mut g, r);
                        g.cross_entropy(logits, ep.domain)
                    })
                    .collect();
                if losses.is_empty() {
                    continue;
                }
                let sum = g.add_all(&losses);
                let loss = g.scale(sum, T::one() / T::of_usize(losses.len()));
                loss_sum += g.scalar(loss).to_f64_lossy();
                loss_n += 1;
                g.backward(loss)
            };
            opt.step(&mut model.store, &grads);
        }
        let loss = if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 };
        history.push(HistoryRecord::DomainClassifier { epoch, loss });
    }
    Ok(())
}

/// Searches static mixing weights on the validation split.
fn fit_fine_tuned<T: Scalar>(
    model: &mut Model<T>,
    validation: &[LabelledExample],
    settings: &Settings,
    base: u64,
    history: &mut History,
) -> Result<Vec<SearchTrial>> {
    let bank = model.bank()?;
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for e in validation {
        if let Ok(p) = bank.member_probs(&e.text) {
            probs.push(p);
            labels.push(e.label);
        }
    }
    if probs.is_empty() {
        return Err(Error::Training(
            "Independent-Ft needs validation data; set val_fraction > 0".into(),
        ));
    }
    let (weights, log) = finetune_search_probs(
        &probs,
        &labels,
        settings.mixing.ft_trials,
        derive_seed(base, streams::FT_SEARCH),
        settings.train.metric,
    )?;
    let best_score = log
        .iter()
        .map(|t| t.score)
        .fold(f64::NEG_INFINITY, f64::max);
    history.push(HistoryRecord::FineTune {
        trials: log.len(),
        best_score,
        weights: weights.weights().iter().map(|w| w.to_f64_lossy()).collect(),
    });
    model.fine_tuned = Some(weights);
    Ok(log)
}
