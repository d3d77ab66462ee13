//! Adapter for the PHEME rumour corpus.
//!
//! Expected layout: `<root>/<event>/{rumours,non-rumours}/<thread>/source-tweet[s]/<id>.json`.
//! Rumours are label 1, non-rumours label 0. Event directory suffixes such as
//! `-all-rnr-threads` are dropped from the domain name.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{to_jsonl, DomainCount, DomainId, Example, IngestSummary};
use crate::error::{Error, Result};
use crate::fsio;

const EVENT_SUFFIXES: [&str; 2] = ["-all-rnr-threads", "-all-rnr-annotated-threads"];

#[derive(Deserialize)]
struct Tweet {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    full_text: Option<String>,
}

pub fn adapt_pheme(root: &Path, out: &Path) -> Result<IngestSummary> {
    let events = subdirs(root)?;
    let mut summary = IngestSummary::default();
    let mut outputs = Vec::new();
    for event_dir in events {
        let raw = event_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Validation(format!("{}: non-UTF-8 name", event_dir.display())))?;
        let name = EVENT_SUFFIXES
            .iter()
            .find_map(|s| raw.strip_suffix(s))
            .unwrap_or(raw);
        let domain = DomainId::new(name)?;
        let rumours = event_dir.join("rumours");
        let non_rumours = event_dir.join("non-rumours");
        if !rumours.is_dir() && !non_rumours.is_dir() {
            summary.warnings.push(format!(
                "{}: no rumours/non-rumours annotation, event skipped",
                event_dir.display()
            ));
            summary.skipped += 1;
            continue;
        }
        let mut examples = Vec::new();
        for (dir, label) in [(&rumours, 1u8), (&non_rumours, 0u8)] {
            if !dir.is_dir() {
                continue;
            }
            for thread in subdirs(dir)? {
                match source_tweet(&thread)? {
                    Some((id, text)) => examples.push(Example {
                        id: format!("{domain}-{id}"),
                        text,
                        label: Some(label),
                        domain: domain.clone(),
                    }),
                    None => summary.skipped += 1,
                }
            }
        }
        summary.domains.push(DomainCount {
            domain: domain.clone(),
            positive: examples.iter().filter(|e| e.label == Some(1)).count(),
            negative: examples.iter().filter(|e| e.label == Some(0)).count(),
            unlabelled: 0,
        });
        outputs.push((out.join(format!("{domain}.jsonl")), examples));
    }
    if outputs.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no event directories with rumours/non-rumours annotation",
            root.display()
        )));
    }
    if summary.skipped > 0 {
        summary
            .warnings
            .push(format!("{} records skipped (missing or corrupt)", summary.skipped));
    }
    fsio::create_dir_all(out)?;
    for (path, examples) in outputs {
        fsio::write_atomic(&path, to_jsonl(&examples)?.as_bytes())?;
    }
    Ok(summary)
}

/// Reads the source tweet of a thread. `None` when missing or unreadable.
fn source_tweet(thread: &Path) -> Result<Option<(String, String)>> {
    let dir = ["source-tweet", "source-tweets"]
        .iter()
        .map(|d| thread.join(d))
        .find(|p| p.is_dir());
    let Some(dir) = dir else { return Ok(None) };
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let Some(file) = files.first() else { return Ok(None) };
    let raw = fsio::read_to_string(file)?;
    let Ok(tweet) = serde_json::from_str::<Tweet>(&raw) else {
        return Ok(None);
    };
    let text = tweet.full_text.or(tweet.text).unwrap_or_default();
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if text.is_empty() {
        return Ok(None);
    }
    let id = file
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("unknown")
        .to_string();
    Ok(Some((id, text)))
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}
