//! Adapter for the multi-domain Amazon review corpus.
//!
//! Expected layout: one directory per product category holding
//! `positive.review`, `negative.review` and optionally `unlabeled.review`
//! (pseudo-XML, one `<review>` element per review, text inside
//! `<review_text>`).

use std::path::{Path, PathBuf};

use super::{to_jsonl, DomainCount, DomainId, Example, IngestSummary};
use crate::error::{Error, Result};
use crate::fsio;

const POSITIVE: &str = "positive.review";
const NEGATIVE: &str = "negative.review";
const UNLABELLED: [&str; 2] = ["unlabeled.review", "unlabelled.review"];

/// Converts every category under `root` into `<out>/<category>.jsonl`.
pub fn adapt_amazon(root: &Path, out: &Path) -> Result<IngestSummary> {
    let categories = category_dirs(root)?;
    if categories.is_empty() {
        return Err(Error::Validation(format!(
            "{}: expected per-category subdirectories containing {POSITIVE}/{NEGATIVE}",
            root.display()
        )));
    }
    let mut summary = IngestSummary::default();
    let mut outputs = Vec::new();
    for dir in categories {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Validation(format!("{}: non-UTF-8 name", dir.display())))?;
        let domain = DomainId::new(name)?;
        let pos_path = dir.join(POSITIVE);
        let neg_path = dir.join(NEGATIVE);
        let unl_path = UNLABELLED.iter().map(|f| dir.join(f)).find(|p| p.is_file());
        if !pos_path.is_file() && !neg_path.is_file() && unl_path.is_none() {
            return Err(Error::Validation(format!(
                "{}: unknown category layout, expected {POSITIVE}, {NEGATIVE} or {}",
                dir.display(),
                UNLABELLED[0]
            )));
        }
        let mut examples = Vec::new();
        let mut count = DomainCount {
            domain: domain.clone(),
            positive: 0,
            negative: 0,
            unlabelled: 0,
        };
        for (path, tag, label) in [(&pos_path, "pos", Some(1u8)), (&neg_path, "neg", Some(0u8))] {
            if !path.is_file() {
                continue;
            }
            let texts = review_texts(&fsio::read_to_string(path)?);
            for (i, text) in texts.into_iter().enumerate() {
                examples.push(Example {
                    id: format!("{domain}-{tag}-{:05}", i + 1),
                    text,
                    label,
                    domain: domain.clone(),
                });
            }
        }
        count.positive = examples.iter().filter(|e| e.label == Some(1)).count();
        count.negative = examples.iter().filter(|e| e.label == Some(0)).count();
        if let Some(path) = unl_path {
            for (i, text) in review_texts(&fsio::read_to_string(&path)?).into_iter().enumerate() {
                examples.push(Example {
                    id: format!("{domain}-unl-{:05}", i + 1),
                    text,
                    label: None,
                    domain: domain.clone(),
                });
                count.unlabelled += 1;
            }
        }
        if count.labelled() == 0 {
            summary
                .warnings
                .push(format!("category {domain} has no labelled reviews"));
        }
        outputs.push((out.join(format!("{domain}.jsonl")), examples));
        summary.domains.push(count);
    }
    fsio::create_dir_all(out)?;
    for (path, examples) in outputs {
        fsio::write_atomic(&path, to_jsonl(&examples)?.as_bytes())?;
    }
    Ok(summary)
}

fn category_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Extracts the whitespace-normalised contents of every `<review_text>`
/// element; empty reviews are dropped.
pub fn review_texts(raw: &str) -> Vec<String> {
    const OPEN: &str = "<review_text>";
    const CLOSE: &str = "</review_text>";
    let mut out = Vec::new();
    let mut rest = raw;
    while let Some(start) = rest.find(OPEN) {
        let after = &rest[start + OPEN.len()..];
        let Some(end) = after.find(CLOSE) else { break };
        let text = after[..end].split_whitespace().collect::<Vec<_>>().join(" ");
        if !text.is_empty() {
            out.push(text);
        }
        rest = &after[end + CLOSE.len()..];
    }
    out
}
