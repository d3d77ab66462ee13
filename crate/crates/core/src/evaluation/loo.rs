use std::fmt::Write as _;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{f1, ConfusionCounts, Metric};
use crate::data::{DatasetBundle, DomainId};
use crate::error::{Error, Result};
use crate::mixing::Member;
use crate::scalar::Scalar;
use crate::training::{train, Settings, Trained, Variant};

/// What to run in a leave-one-out sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LooOptions {
    pub seeds: Vec<u64>,
    /// Worker threads across cells; 1 runs everything on the caller's thread.
    pub jobs: usize,
    /// Restrict to these held-out domains (all labelled domains when `None`).
    pub held_out: Option<Vec<DomainId>>,
}

impl Default for LooOptions {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            jobs: 1,
            held_out: None,
        }
    }
}

/// Test-set outcome of one seed on one held-out domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub counts: ConfusionCounts,
    pub score: f64,
    pub best_epoch: usize,
    /// Members and their mean mixing weight over the test set, when the
    /// variant produces weights.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mixing_weights: Option<Vec<(Member, f64)>>,
}

/// One training run that did not complete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellResult {
    pub seed: u64,
    pub error: String,
}

/// All seeds for one held-out domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub held_out_domain: DomainId,
    pub variant: Variant,
    pub metric: Metric,
    /// Mean of the per-seed scores; `None` if any seed failed.
    pub score: Option<f64>,
    pub seeds: Vec<SeedResult>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub failures: Vec<CellResult>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn failed(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// A full sweep: one report per held-out domain plus the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub variant: Variant,
    pub metric: Metric,
    /// `macroA` for accuracy, `μF1` for F1.
    pub aggregate_name: String,
    /// `None` when any cell failed.
    pub aggregate: Option<f64>,
    pub seeds: Vec<u64>,
    pub reports: Vec<RunReport>,
}

impl LooReport {
    pub fn any_failed(&self) -> bool {
        self.reports.iter().any(RunReport::failed)
    }

    /// Recomputes the aggregate from the per-seed fields.
    ///
    /// Accuracy: mean over domains of the per-domain seed means. F1: for each
    /// seed, F1 of the confusion counts pooled across domains, then the mean
    /// over seeds.
    pub fn recompute_aggregate(&self) -> Option<f64> {
        if self.any_failed() || self.reports.is_empty() {
            return None;
        }
        match self.metric {
            Metric::Accuracy => {
                let scores: Option<Vec<f64>> = self.reports.iter().map(|r| r.score).collect();
                let scores = scores?;
                Some(scores.iter().sum::<f64>() / scores.len() as f64)
            }
            Metric::F1 => {
                let per_seed: Vec<f64> = self
                    .seeds
                    .iter()
                    .map(|&s| {
                        let pooled: ConfusionCounts = self
                            .reports
                            .iter()
                            .filter_map(|r| r.seeds.iter().find(|x| x.seed == s))
                            .map(|x| x.counts)
                            .sum();
                        f1(&pooled)
                    })
                    .collect();
                Some(per_seed.iter().sum::<f64>() / per_seed.len() as f64)
            }
        }
    }
}

fn mean_weights<T: Scalar>(trained: &Trained<T>, tokens: &[Vec<usize>]) -> Result<Option<Vec<(Member, f64)>>> {
    let mut sum: Option<(Vec<Member>, Vec<f64>)> = None;
    let mut n = 0usize;
    for t in tokens {
        let Some(w) = trained.model.predict_tokens(t)?.weights else {
            return Ok(None);
        };
        let (_, acc) = sum.get_or_insert_with(|| (w.members().to_vec(), vec![0.0; w.weights().len()]));
        for (a, v) in acc.iter_mut().zip(w.weights()) {
            *a += v.to_f64_lossy();
        }
        n += 1;
    }
    Ok(sum.map(|(members, acc)| {
        members
            .into_iter()
            .zip(acc.into_iter().map(|a| a / n as f64))
            .collect()
    }))
}

/// Trains and scores one (held-out domain, seed) cell.
pub(crate) fn run_cell<T: Scalar>(
    variant: Variant,
    bundle: &DatasetBundle,
    domain: &DomainId,
    settings: &Settings,
    seed: u64,
) -> Result<(SeedResult, Trained<T>)> {
    let held = bundle.hold_out(domain)?;
    let view = held.training_view();
    let mut s = settings.clone();
    s.train.seed = seed;
    let trained: Trained<T> = train(variant, &view, &s)?;
    let mut counts = ConfusionCounts::default();
    let mut tokens = Vec::new();
    for ex in held.target_test() {
        let label = ex
            .label
            .ok_or_else(|| Error::Evaluation(format!("test example {} has no label", ex.id)))?;
        let Ok(t) = trained.model.tokenize(&ex.text) else {
            // empty after tokenisation: scored at the threshold
            counts.record(0.5, label);
            continue;
        };
        counts.record(trained.model.predict_tokens(&t)?.prob.to_f64_lossy(), label);
        tokens.push(t);
    }
    let score = settings.train.metric.score(&counts)?;
    let mixing_weights = mean_weights(&trained, &tokens)?;
    Ok((
        SeedResult {
            seed,
            counts,
            score,
            best_epoch: trained.best_epoch,
            mixing_weights,
        },
        trained,
    ))
}

/// Leave-one-out sweep: every labelled domain in turn is held out, the
/// variant is trained on the rest for each seed, and the held-out labels are
/// used for scoring only. A failing cell is recorded and the sweep continues.
pub fn loo_run<T: Scalar>(
    variant: Variant,
    bundle: &DatasetBundle,
    settings: &Settings,
    options: &LooOptions,
) -> Result<LooReport> {
    settings.validate_for(variant)?;
    if options.seeds.is_empty() {
        return Err(Error::Config("leave-one-out needs at least one seed".into()));
    }
    let all = bundle.labelled_domains();
    if all.len() < 3 {
        return Err(Error::Validation(format!(
            "leave-one-out needs at least 3 labelled domains (2 remain as sources), found {}",
            all.len()
        )));
    }
    let domains = match &options.held_out {
        Some(list) => {
            for d in list {
                if !all.contains(d) {
                    return Err(Error::Config(format!("held-out domain {d} is not in the dataset")));
                }
            }
            list.clone()
        }
        None => all,
    };
    let cells: Vec<(usize, u64)> = (0..domains.len())
        .flat_map(|d| options.seeds.iter().map(move |&s| (d, s)))
        .collect();
    let run = |&(d, seed): &(usize, u64)| -> std::result::Result<SeedResult, CellResult> {
        info!("cell {} seed {seed}", domains[d]);
        run_cell::<T>(variant, bundle, &domains[d], settings, seed)
            .map(|(r, _)| r)
            .map_err(|e| {
                warn!("cell {} seed {seed} failed: {e}", domains[d]);
                CellResult {
                    seed,
                    error: e.to_string(),
                }
            })
    };
    let results: Vec<_> = if options.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", options.jobs)))?;
        pool.install(|| cells.par_iter().map(run).collect())
    } else {
        cells.iter().map(run).collect()
    };

    let mut reports: Vec<RunReport> = domains
        .iter()
        .map(|d| RunReport {
            held_out_domain: d.clone(),
            variant,
            metric: settings.train.metric,
            score: None,
            seeds: Vec::new(),
            failures: Vec::new(),
            artifacts: Vec::new(),
        })
        .collect();
    for (&(d, _), res) in cells.iter().zip(results) {
        match res {
            Ok(r) => reports[d].seeds.push(r),
            Err(f) => reports[d].failures.push(f),
        }
    }
    for r in &mut reports {
        if r.failures.is_empty() {
            r.score = Some(r.seeds.iter().map(|s| s.score).sum::<f64>() / r.seeds.len() as f64);
        }
    }
    let mut report = LooReport {
        variant,
        metric: settings.train.metric,
        aggregate_name: settings.train.metric.aggregate_name().to_string(),
        aggregate: None,
        seeds: options.seeds.clone(),
        reports,
    };
    report.aggregate = report.recompute_aggregate();
    Ok(report)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "fail".to_string(), |x| format!("{:.1}", 100.0 * x))
}

/// Text table with one row per sweep: the variant, one column per held-out
/// domain and the aggregate, as percentages with one decimal.
pub fn render_table(sweeps: &[LooReport]) -> String {
    let Some(first) = sweeps.first() else {
        return String::new();
    };
    let domains: Vec<String> = first
        .reports
        .iter()
        .map(|r| r.held_out_domain.to_string())
        .collect();
    let name_w = sweeps
        .iter()
        .map(|s| s.variant.to_string().chars().count())
        .chain(std::iter::once(5))
        .max()
        .unwrap_or(5);
    let col_w: Vec<usize> = domains
        .iter()
        .map(|d| d.chars().count().max(5))
        .chain(std::iter::once(first.aggregate_name.chars().count().max(6)))
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:<name_w$}", "Model");
    for (h, w) in domains.iter().chain(std::iter::once(&first.aggregate_name)).zip(&col_w) {
        let _ = write!(out, "  {h:>w$}");
    }
    out.push('\n');
    for s in sweeps {
        let _ = write!(out, "{:<name_w$}", s.variant.to_string());
        let cells = s
            .reports
            .iter()
            .map(|r| pct(r.score))
            .chain(std::iter::once(pct(s.aggregate)));
        for (c, w) in cells.zip(&col_w) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    }
    out
}
