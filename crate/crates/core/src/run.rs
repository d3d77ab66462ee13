//! Run configuration files, run directories and the command implementations
//! behind the `msda` binary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adversarial::AdversarialConfig;
use crate::analysis::{
    mean_off_diagonal, pairwise_agreement, pca_project, svg, AgreementMatrix, ProjectionResult,
    Split,
};
use crate::checkpoint;
use crate::data::{self, DatasetBundle, DomainId, IngestSummary};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::evaluation::{loo_run, render_table, ConfusionCounts, LooOptions, LooReport};
use crate::fsio::{create_dir_all, read_to_string, write_atomic, write_json};
use crate::mixing::{Member, MixWeights, SearchTrial};
use crate::training::{train, MixingConfig, Model, Settings, TrainConfig, Trained, Variant};
use crate::Real;

/// Environment variable naming the default parent of run directories.
pub const OUTPUT_ROOT_ENV: &str = "MSDA_OUTPUT_ROOT";

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Everything needed to reproduce a run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory of canonical `*.jsonl` files. Relative paths are resolved
    /// against the config file's directory.
    pub dataset: PathBuf,
    pub variant: Variant,
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub adversarial: AdversarialConfig,
    #[serde(default)]
    pub mixing: MixingConfig,
    /// `train` uses the first seed; `eval-loo` averages over all of them.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Domain held out as the unlabelled target for `train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out: Option<DomainId>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving a relative dataset path.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.dataset.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset = dir.join(&cfg.dataset);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        self.settings().validate_for(self.variant)
    }

    /// Training settings with the first seed applied.
    pub fn settings(&self) -> Settings {
        let mut train = self.train.clone();
        train.seed = self.seeds.first().copied().unwrap_or(train.seed);
        Settings {
            encoder: self.encoder.clone(),
            train,
            adversarial: self.adversarial.clone(),
            mixing: self.mixing.clone(),
        }
    }

    /// Output directory: explicit override, then the config, then
    /// `$MSDA_OUTPUT_ROOT/<variant>`, then `runs/<variant>`.
    pub fn resolve_output(&self, explicit: Option<&Path>) -> PathBuf {
        if let Some(p) = explicit {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return p.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(self.variant.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    variant: Variant,
    domains: Vec<DomainId>,
    best_epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    held_out: Option<DomainId>,
}

/// Human-readable description of the mixing rule of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MixingReport {
    variant: Variant,
    rule: String,
    members: Vec<Member>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fine_tuned: Option<MixWeights<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attention_scaled: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    search: Vec<SearchTrial>,
}

fn rule_name(v: Variant) -> &'static str {
    match v {
        Variant::Basic | Variant::Adv(_) => "single-model",
        Variant::IndependentAvg | Variant::MoeAvg => "average",
        Variant::IndependentFt => "fine-tuned-average",
        Variant::MoeAtt | Variant::MoeAttAdv(_) => "attention",
        Variant::MoeDc => "domain-classifier",
    }
}

fn encoder_file(e: &Encoder) -> String {
    format!("{}.bin", e.name())
}

/// Writes the checkpoint files of a trained model into `dir`.
pub fn save_model(dir: &Path, trained: &Trained<Real>, search: &[SearchTrial]) -> Result<()> {
    let model = &trained.model;
    let enc_dir = dir.join("encoders");
    create_dir_all(&enc_dir)?;
    for e in model.encoders() {
        checkpoint::save(
            &enc_dir.join(encoder_file(e)),
            &model.store,
            e.param_ids(),
            json!({ "encoder": e.name() }),
        )?;
    }
    let mixing_ids = model.mixing_param_ids();
    if !mixing_ids.is_empty() {
        checkpoint::save(
            &dir.join("mixing.bin"),
            &model.store,
            &mixing_ids,
            json!({ "rule": rule_name(model.variant) }),
        )?;
    }
    if let Some(adv) = &model.adversary {
        checkpoint::save(
            &dir.join("adversarial.bin"),
            &model.store,
            &adv.param_ids(),
            json!({ "attach_layer": adv.attach_layer(), "num_domains": adv.num_domains() }),
        )?;
    }
    write_json(
        &dir.join("mixing.json"),
        &MixingReport {
            variant: model.variant,
            rule: rule_name(model.variant).into(),
            members: model.inference_members(),
            fine_tuned: model.fine_tuned.as_ref().map(MixWeights::cast),
            attention_scaled: model.attention.as_ref().map(|a| a.scaled),
            search: search.to_vec(),
        },
    )?;
    write_atomic(&dir.join("history.jsonl"), trained.history.to_jsonl()?.as_bytes())
}

/// Rebuilds a model from a run directory written by `train`.
pub fn load_model(dir: &Path) -> Result<(RunConfig, Model<Real>)> {
    let cfg: RunConfig = RunConfig::from_json(&read_to_string(&dir.join("config.json"))?)?;
    let manifest: Manifest = serde_json::from_str(&read_to_string(&dir.join("manifest.json"))?)?;
    let mut model: Model<Real> = Model::build(manifest.variant, manifest.domains, &cfg.settings())?;
    let mut files: Vec<PathBuf> = model
        .encoders()
        .map(|e| dir.join("encoders").join(encoder_file(e)))
        .collect();
    if !model.mixing_param_ids().is_empty() {
        files.push(dir.join("mixing.bin"));
    }
    if model.adversary.is_some() {
        files.push(dir.join("adversarial.bin"));
    }
    for f in files {
        let blob = checkpoint::load(&f)?;
        checkpoint::restore(&mut model.store, &blob)?;
    }
    let mixing: MixingReport = serde_json::from_str(&read_to_string(&dir.join("mixing.json"))?)?;
    model.fine_tuned = mixing.fine_tuned.map(|w| w.cast());
    Ok((cfg, model))
}

/// Converts a raw dataset into canonical JSONL files.
pub fn cmd_ingest(kind: &str, input: &Path, output: &Path) -> Result<IngestSummary> {
    match kind {
        "amazon" => data::amazon::adapt_amazon(input, output),
        "pheme" => data::pheme::adapt_pheme(input, output),
        "canonical" => {
            let bundle = data::load_canonical(input)?;
            data::write_canonical(&bundle, output)?;
            Ok(IngestSummary::from_bundle(&bundle))
        }
        other => Err(Error::Config(format!(
            "unknown source kind {other:?}; expected amazon, pheme or canonical"
        ))),
    }
}

/// Test-set score of a run trained with a held-out target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub held_out_domain: DomainId,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub f1: f64,
}

fn score_target(model: &Model<Real>, bundle: &DatasetBundle) -> Result<Option<TargetReport>> {
    let Some(domain) = bundle.target() else {
        return Ok(None);
    };
    let mut counts = ConfusionCounts::default();
    for ex in bundle.target_test() {
        let label = ex.label.unwrap_or_default();
        let p = match model.tokenize(&ex.text) {
            Ok(t) => model.predict_tokens(&t)?.prob.into(),
            Err(_) => 0.5,
        };
        counts.record(p, label);
    }
    Ok(Some(TargetReport {
        held_out_domain: domain.clone(),
        counts,
        accuracy: crate::evaluation::accuracy(&counts)?,
        f1: crate::evaluation::f1(&counts),
    }))
}

/// Trains one model and writes its run directory.
pub fn cmd_train(config_path: &Path, output: Option<&Path>) -> Result<PathBuf> {
    let cfg = RunConfig::load(config_path)?;
    let dir = cfg.resolve_output(output);
    let mut bundle = data::load_canonical(&cfg.dataset)?;
    if let Some(d) = &cfg.held_out {
        bundle = bundle.hold_out(d)?;
    }
    let settings = cfg.settings();
    let trained: Trained<Real> = train(cfg.variant, &bundle.training_view(), &settings)?;
    create_dir_all(&dir)?;
    write_json(&dir.join("config.json"), &cfg)?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            variant: cfg.variant,
            domains: trained.model.domains.clone(),
            best_epoch: trained.best_epoch,
            held_out: cfg.held_out.clone(),
        },
    )?;
    save_model(&dir, &trained, &trained.search)?;
    if let Some(report) = score_target(&trained.model, &bundle)? {
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(dir)
}

/// Runs the leave-one-out sweep and writes `loo_report.json` and
/// `loo_table.txt`.
pub fn cmd_eval_loo(
    config_path: &Path,
    jobs: usize,
    output: Option<&Path>,
) -> Result<(PathBuf, LooReport)> {
    let cfg = RunConfig::load(config_path)?;
    let dir = cfg.resolve_output(output);
    let bundle = data::load_canonical(&cfg.dataset)?;
    let options = LooOptions {
        seeds: cfg.seeds.clone(),
        jobs: jobs.max(1),
        held_out: cfg.held_out.clone().map(|d| vec![d]),
    };
    let report = loo_run::<Real>(cfg.variant, &bundle, &cfg.settings(), &options)?;
    create_dir_all(&dir)?;
    write_json(&dir.join("config.json"), &cfg)?;
    write_json(&dir.join("loo_report.json"), &report)?;
    write_atomic(
        &dir.join("loo_table.txt"),
        render_table(std::slice::from_ref(&report)).as_bytes(),
    )?;
    Ok((dir, report))
}

/// Texts scored by the analyses: the run's held-out domain if it has one,
/// otherwise every labelled example.
fn analysis_texts(cfg: &RunConfig, dataset: Option<&Path>) -> Result<(Vec<String>, Vec<Split>)> {
    let bundle = data::load_canonical(dataset.unwrap_or(&cfg.dataset))?;
    let mut texts = Vec::new();
    let mut splits = Vec::new();
    for (d, exs) in bundle.sources() {
        let split = if Some(d) == cfg.held_out.as_ref() {
            Split::OutOfDomain
        } else {
            Split::InDomain
        };
        for e in exs {
            texts.push(e.text.clone());
            splits.push(split);
        }
    }
    Ok((texts, splits))
}

/// Agreement of one run's experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementEntry {
    pub run: PathBuf,
    pub backbone: String,
    pub matrix: AgreementMatrix,
    pub mean_off_diagonal: f64,
}

/// Pairwise expert agreement for one or more runs, written as
/// `agreement.json` plus one heatmap per run.
pub fn cmd_analyze_agreement(
    runs: &[PathBuf],
    dataset: Option<&Path>,
    out: &Path,
) -> Result<Vec<AgreementEntry>> {
    if runs.is_empty() {
        return Err(Error::Config("name at least one run directory".into()));
    }
    create_dir_all(out)?;
    let mut entries = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let (cfg, model) = load_model(run)?;
        let (texts, splits) = analysis_texts(&cfg, dataset)?;
        let pooled: Vec<&str> = if cfg.held_out.is_some() {
            texts
                .iter()
                .zip(&splits)
                .filter(|(_, s)| **s == Split::OutOfDomain)
                .map(|(t, _)| t.as_str())
                .collect()
        } else {
            texts.iter().map(String::as_str).collect()
        };
        let matrix = pairwise_agreement(&model, &pooled)?;
        let backbone = cfg.encoder.backbone.to_string();
        let title = format!("Expert agreement ({backbone}, {})", cfg.variant);
        write_atomic(
            &out.join(format!("agreement-{i}.svg")),
            svg::heatmap(&title, &matrix.names, &matrix.alpha)?.as_bytes(),
        )?;
        entries.push(AgreementEntry {
            run: run.clone(),
            backbone,
            mean_off_diagonal: mean_off_diagonal(&matrix.alpha),
            matrix,
        });
    }
    write_json(&out.join("agreement.json"), &entries)?;
    Ok(entries)
}

/// PCA of final-layer pooled representations of one encoder, written as
/// `projection.json` and `projection.svg`.
pub fn cmd_analyze_project(
    run: &Path,
    dataset: Option<&Path>,
    encoder: &str,
    sample_size: usize,
    seed: u64,
    out: &Path,
) -> Result<ProjectionResult> {
    let (cfg, model) = load_model(run)?;
    let enc = model
        .encoders()
        .find(|e| e.name() == encoder)
        .ok_or_else(|| {
            let names: Vec<&str> = model.encoders().map(Encoder::name).collect();
            Error::Config(format!("no encoder {encoder:?}; available: {}", names.join(", ")))
        })?;
    let (texts, splits) = analysis_texts(&cfg, dataset)?;
    let mut reps = Vec::new();
    let mut kept = Vec::new();
    for (t, s) in texts.iter().zip(&splits) {
        if let Ok(o) = enc.encode(&model.store, t) {
            reps.push(o.pooled);
            kept.push(*s);
        }
    }
    let result = pca_project(&reps, &kept, sample_size, seed)?;
    create_dir_all(out)?;
    write_json(&out.join("projection.json"), &result)?;
    let title = format!("Final-layer representations of {encoder}");
    write_atomic(&out.join("projection.svg"), svg::scatter(&title, &result)?.as_bytes())?;
    Ok(result)
}
