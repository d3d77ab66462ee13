//! Multi-domain corpora: canonical JSON-lines storage, leave-one-out views
//! and the label firewall between training code and held-out targets.

pub mod amazon;
pub mod pheme;
pub mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

/// Name of a domain. Experts are indexed by the lexicographic rank of their
/// domain name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DomainId(String);

impl DomainId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::Validation("domain name is empty".into()));
        }
        if name
            .chars()
            .any(|c| c == '/' || c == '\\' || c.is_control() || c.is_whitespace())
        {
            return Err(Error::Validation(format!(
                "domain name {name:?} must not contain whitespace or path separators"
            )));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for DomainId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        DomainId::new(s)
    }
}

impl From<DomainId> for String {
    fn from(d: DomainId) -> String {
        d.0
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One line of a canonical file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    pub domain: DomainId,
}

impl Example {
    fn check(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.text.trim().is_empty() {
            return Err(format!("example {} has empty text", self.id));
        }
        match self.label {
            None | Some(0) | Some(1) => Ok(()),
            Some(l) => Err(format!("example {} has non-binary label {l}", self.id)),
        }
    }
}

/// A labelled training example. Only source-domain data takes this form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelledExample {
    pub id: String,
    pub text: String,
    pub label: u8,
    pub domain: DomainId,
}

/// Target-domain text with no label field at all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlabelledExample {
    pub id: String,
    pub text: String,
    pub domain: DomainId,
}

/// Labelled source corpora, optional unlabelled per-domain pools, and an
/// optional held-out target (unlabelled copy for training, labelled copy for
/// evaluation).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetBundle {
    sources: BTreeMap<DomainId, Vec<Example>>,
    unlabelled: BTreeMap<DomainId, Vec<Example>>,
    target: Option<DomainId>,
    target_unlabelled: Vec<Example>,
    target_test: Vec<Example>,
}

impl DatasetBundle {
    /// Builds a bundle with every domain as a source. Unlabelled examples go
    /// to the per-domain pools.
    pub fn from_examples(examples: impl IntoIterator<Item = Example>) -> Result<Self> {
        let mut bundle = DatasetBundle::default();
        for ex in examples {
            ex.check().map_err(Error::Validation)?;
            let pool = if ex.label.is_some() {
                &mut bundle.sources
            } else {
                &mut bundle.unlabelled
            };
            pool.entry(ex.domain.clone()).or_default().push(ex);
        }
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 labelled source domains, found {}",
                self.sources.len()
            )));
        }
        let mut seen = HashSet::new();
        let all = self
            .sources
            .values()
            .flatten()
            .chain(self.unlabelled.values().flatten())
            .chain(&self.target_test);
        for ex in all {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::Validation(format!("duplicate example id {}", ex.id)));
            }
        }
        let mut seen_u = HashSet::new();
        for ex in &self.target_unlabelled {
            if ex.label.is_some() {
                return Err(Error::Validation("target_unlabelled carries labels".into()));
            }
            if !seen_u.insert(ex.id.as_str()) {
                return Err(Error::Validation(format!("duplicate example id {}", ex.id)));
            }
        }
        if let Some(t) = &self.target {
            if self.sources.contains_key(t) {
                return Err(Error::Validation(format!("target {t} is also a source")));
            }
        }
        Ok(())
    }

    pub fn sources(&self) -> &BTreeMap<DomainId, Vec<Example>> {
        &self.sources
    }

    pub fn unlabelled_pools(&self) -> &BTreeMap<DomainId, Vec<Example>> {
        &self.unlabelled
    }

    pub fn target(&self) -> Option<&DomainId> {
        self.target.as_ref()
    }

    pub fn target_unlabelled(&self) -> &[Example] {
        &self.target_unlabelled
    }

    /// Held-out labelled examples. Evaluation only.
    pub fn target_test(&self) -> &[Example] {
        &self.target_test
    }

    pub fn source_domains(&self) -> Vec<DomainId> {
        self.sources.keys().cloned().collect()
    }

    /// Every domain with labelled data, including the held-out one.
    pub fn labelled_domains(&self) -> Vec<DomainId> {
        let mut all: Vec<DomainId> = self.sources.keys().cloned().collect();
        if let Some(t) = &self.target {
            all.push(t.clone());
            all.sort();
        }
        all
    }

    /// Expert index of a source domain (its rank in name order).
    pub fn domain_index(&self, domain: &DomainId) -> Option<usize> {
        self.sources.keys().position(|d| d == domain)
    }

    /// Leave-one-out view: `domain` becomes the target, its labelled examples
    /// form the test split and, labels stripped, the unlabelled pool.
    pub fn hold_out(&self, domain: &DomainId) -> Result<DatasetBundle> {
        if self.target.is_some() {
            return Err(Error::Validation("bundle already has a held-out target".into()));
        }
        let mut sources = self.sources.clone();
        let test = sources
            .remove(domain)
            .ok_or_else(|| Error::Validation(format!("unknown domain {domain}")))?;
        let stripped = test
            .iter()
            .map(|e| Example {
                label: None,
                ..e.clone()
            })
            .collect();
        let out = DatasetBundle {
            sources,
            unlabelled: self.unlabelled.clone(),
            target: Some(domain.clone()),
            target_unlabelled: stripped,
            target_test: test,
        };
        out.validate()?;
        Ok(out)
    }

    /// The view handed to training code. It has no access to target labels.
    pub fn training_view(&self) -> TrainingBundle {
        let sources = self
            .sources
            .iter()
            .map(|(d, exs)| {
                let labelled = exs
                    .iter()
                    .map(|e| LabelledExample {
                        id: e.id.clone(),
                        text: e.text.clone(),
                        label: e.label.expect("source examples are labelled"),
                        domain: e.domain.clone(),
                    })
                    .collect();
                (d.clone(), labelled)
            })
            .collect();
        let target_unlabelled = self
            .target_unlabelled
            .iter()
            .map(|e| UnlabelledExample {
                id: e.id.clone(),
                text: e.text.clone(),
                domain: e.domain.clone(),
            })
            .collect();
        TrainingBundle {
            sources,
            target: self.target.clone(),
            target_unlabelled,
        }
    }

    /// Total number of examples across every split and pool.
    pub fn len(&self) -> usize {
        self.sources.values().map(Vec::len).sum::<usize>()
            + self.unlabelled.values().map(Vec::len).sum::<usize>()
            + self.target_unlabelled.len()
            + self.target_test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Training-side view of a bundle: labelled sources plus label-free target text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingBundle {
    sources: BTreeMap<DomainId, Vec<LabelledExample>>,
    target: Option<DomainId>,
    target_unlabelled: Vec<UnlabelledExample>,
}

impl TrainingBundle {
    pub fn new(
        sources: BTreeMap<DomainId, Vec<LabelledExample>>,
        target: Option<DomainId>,
        target_unlabelled: Vec<UnlabelledExample>,
    ) -> Result<Self> {
        if sources.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 labelled source domains, found {}",
                sources.len()
            )));
        }
        Ok(Self {
            sources,
            target,
            target_unlabelled,
        })
    }

    pub fn sources(&self) -> &BTreeMap<DomainId, Vec<LabelledExample>> {
        &self.sources
    }

    pub fn source_domains(&self) -> Vec<DomainId> {
        self.sources.keys().cloned().collect()
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn target(&self) -> Option<&DomainId> {
        self.target.as_ref()
    }

    pub fn target_unlabelled(&self) -> &[UnlabelledExample] {
        &self.target_unlabelled
    }

    /// Source examples in expert-index order, each tagged with its index.
    pub fn indexed_sources(&self) -> impl Iterator<Item = (usize, &[LabelledExample])> {
        self.sources.values().enumerate().map(|(k, v)| (k, v.as_slice()))
    }

    /// Splits off a label-stratified validation set of `fraction` of each
    /// source domain. Returns the reduced bundle and the held-back examples.
    pub fn split_validation(
        &self,
        fraction: f64,
        seed: u64,
    ) -> (TrainingBundle, Vec<LabelledExample>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_7a1d);
        let mut train = BTreeMap::new();
        let mut val = Vec::new();
        for (domain, exs) in &self.sources {
            let mut keep = vec![true; exs.len()];
            for label in [0u8, 1u8] {
                let mut idx: Vec<usize> = (0..exs.len()).filter(|&i| exs[i].label == label).collect();
                idx.shuffle(&mut rng);
                let take = (idx.len() as f64 * fraction).floor() as usize;
                for &i in &idx[..take] {
                    keep[i] = false;
                }
            }
            let mut kept = Vec::new();
            for (i, ex) in exs.iter().enumerate() {
                if keep[i] {
                    kept.push(ex.clone());
                } else {
                    val.push(ex.clone());
                }
            }
            train.insert(domain.clone(), kept);
        }
        (
            TrainingBundle {
                sources: train,
                target: self.target.clone(),
                target_unlabelled: self.target_unlabelled.clone(),
            },
            val,
        )
    }
}

/// Reads a directory of `*.jsonl` files (one per domain) into a bundle with
/// every labelled domain as a source.
pub fn load_canonical(dir: &Path) -> Result<DatasetBundle> {
    let files = canonical_files(dir)?;
    let mut examples = Vec::new();
    for file in &files {
        let text = fsio::read_to_string(file)?;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ex: Example = serde_json::from_str(line).map_err(|e| Error::Parse {
                file: file.clone(),
                line: n + 1,
                message: e.to_string(),
            })?;
            ex.check().map_err(|message| Error::Parse {
                file: file.clone(),
                line: n + 1,
                message,
            })?;
            examples.push(ex);
        }
    }
    DatasetBundle::from_examples(examples)
}

fn canonical_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "jsonl") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Serialises one domain's examples as canonical JSON lines.
pub fn to_jsonl<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Result<String> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes one `<domain>.jsonl` file per domain: labelled lines first, then
/// the unlabelled pool. A held-out target is written back as a labelled domain.
pub fn write_canonical(bundle: &DatasetBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    fsio::create_dir_all(dir)?;
    let mut per_domain: BTreeMap<&DomainId, Vec<&Example>> = BTreeMap::new();
    for (d, exs) in &bundle.sources {
        per_domain.entry(d).or_default().extend(exs);
    }
    if let Some(t) = &bundle.target {
        per_domain.entry(t).or_default().extend(&bundle.target_test);
    }
    for (d, exs) in &bundle.unlabelled {
        per_domain.entry(d).or_default().extend(exs);
    }
    let mut written = Vec::new();
    for (domain, exs) in per_domain {
        let path = dir.join(format!("{domain}.jsonl"));
        fsio::write_atomic(&path, to_jsonl(exs)?.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Per-domain line counts written by an adapter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub domains: Vec<DomainCount>,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DomainCount {
    pub domain: DomainId,
    pub positive: usize,
    pub negative: usize,
    pub unlabelled: usize,
}

impl DomainCount {
    pub fn labelled(&self) -> usize {
        self.positive + self.negative
    }
}

impl IngestSummary {
    pub fn from_bundle(bundle: &DatasetBundle) -> Self {
        let mut domains: BTreeMap<DomainId, DomainCount> = BTreeMap::new();
        fn slot<'a>(m: &'a mut BTreeMap<DomainId, DomainCount>, d: &DomainId) -> &'a mut DomainCount {
            m.entry(d.clone()).or_insert_with(|| DomainCount {
                domain: d.clone(),
                positive: 0,
                negative: 0,
                unlabelled: 0,
            })
        }
        for (d, exs) in &bundle.sources {
            let c = slot(&mut domains, d);
            c.positive += exs.iter().filter(|e| e.label == Some(1)).count();
            c.negative += exs.iter().filter(|e| e.label == Some(0)).count();
        }
        for (d, exs) in &bundle.unlabelled {
            slot(&mut domains, d).unlabelled += exs.len();
        }
        IngestSummary {
            domains: domains.into_values().collect(),
            skipped: 0,
            warnings: Vec::new(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for d in &self.domains {
            out.push_str(&format!(
                "{:<24} labelled {:>6} (pos {:>6}, neg {:>6})  unlabelled {:>6}\n",
                d.domain.as_str(),
                d.labelled(),
                d.positive,
                d.negative,
                d.unlabelled
            ));
        }
        if self.skipped > 0 {
            out.push_str(&format!("skipped {} records\n", self.skipped));
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}
