//! Generated multi-domain corpora with a known decision rule.
//!
//! Every example carries one or two polarity words drawn from a vocabulary
//! shared by all domains, embedded in domain-specific filler words. The
//! polarity words determine the label, so a classifier that keys on them is
//! perfect on every domain, including one never seen in training.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetBundle, DomainId, Example};
use crate::encoder::tokenizer::Tokenizer;
use crate::error::Result;

pub const POSITIVE_WORDS: [&str; 6] = [
    "excellent",
    "wonderful",
    "superb",
    "delightful",
    "great",
    "fantastic",
];
pub const NEGATIVE_WORDS: [&str; 6] = [
    "terrible",
    "awful",
    "dreadful",
    "horrible",
    "poor",
    "disappointing",
];

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ru", "te", "shi", "pa", "no", "vu", "de", "zo", "ri", "bex", "qua", "fen", "tu",
];

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub domains: Vec<String>,
    pub per_domain: usize,
    pub seed: u64,
    /// Distinct filler words per domain (or in the shared pool).
    pub filler_vocab: usize,
    /// Draw fillers from one pool common to every domain.
    pub shared_fillers: bool,
    /// Insert a token unique to the domain into every example.
    pub domain_marker: bool,
    pub min_fillers: usize,
    pub max_fillers: usize,
    /// Reject filler words whose bucket collides with a polarity or marker
    /// word under this tokenizer.
    pub avoid_collisions: Option<Tokenizer>,
}

impl SyntheticSpec {
    pub fn new(domains: &[&str], per_domain: usize, seed: u64) -> Self {
        Self {
            domains: domains.iter().map(|d| d.to_string()).collect(),
            per_domain,
            seed,
            filler_vocab: 40,
            shared_fillers: false,
            domain_marker: false,
            min_fillers: 6,
            max_fillers: 12,
            avoid_collisions: None,
        }
    }
}

pub fn marker_word(domain: &str) -> String {
    format!("zzmark{domain}")
}

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(2..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

fn filler_pool<R: Rng>(
    rng: &mut R,
    size: usize,
    taken: &mut HashSet<String>,
    reserved_buckets: &HashSet<usize>,
    tokenizer: Option<&Tokenizer>,
) -> Vec<String> {
    let mut pool = Vec::with_capacity(size);
    let mut attempts = 0;
    while pool.len() < size && attempts < size * 1000 {
        attempts += 1;
        let w = pseudo_word(rng);
        if taken.contains(&w) {
            continue;
        }
        if let Some(t) = tokenizer {
            if reserved_buckets.contains(&t.bucket(&w)) {
                continue;
            }
        }
        taken.insert(w.clone());
        pool.push(w);
    }
    pool
}

/// Generates a labelled, label-balanced bundle with every domain a source.
pub fn generate(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tokenizer = spec.avoid_collisions.as_ref();
    let mut reserved = HashSet::new();
    let mut taken: HashSet<String> = HashSet::new();
    if let Some(t) = tokenizer {
        let markers = spec.domains.iter().map(|d| marker_word(d));
        for w in POSITIVE_WORDS
            .iter()
            .chain(NEGATIVE_WORDS.iter())
            .map(|s| s.to_string())
            .chain(markers)
        {
            reserved.insert(t.bucket(&w));
        }
    }
    let shared = if spec.shared_fillers {
        filler_pool(&mut rng, spec.filler_vocab, &mut taken, &reserved, tokenizer)
    } else {
        Vec::new()
    };
    let mut examples = Vec::new();
    for domain in &spec.domains {
        let id = DomainId::new(domain.clone())?;
        let pool = if spec.shared_fillers {
            shared.clone()
        } else {
            filler_pool(&mut rng, spec.filler_vocab, &mut taken, &reserved, tokenizer)
        };
        for i in 0..spec.per_domain {
            let label = (i % 2 == 0) as u8;
            let n_fill = rng.gen_range(spec.min_fillers..=spec.max_fillers);
            let mut words: Vec<String> =
                (0..n_fill).map(|_| pool.choose(&mut rng).unwrap().clone()).collect();
            let polar = if label == 1 { &POSITIVE_WORDS } else { &NEGATIVE_WORDS };
            for _ in 0..rng.gen_range(1..=2) {
                let pos = rng.gen_range(0..=words.len());
                words.insert(pos, polar.choose(&mut rng).unwrap().to_string());
            }
            if spec.domain_marker {
                let pos = rng.gen_range(0..=words.len());
                words.insert(pos, marker_word(domain));
            }
            examples.push(Example {
                id: format!("{domain}-{i:05}"),
                text: words.join(" "),
                label: Some(label),
                domain: id.clone(),
            });
        }
    }
    DatasetBundle::from_examples(examples)
}
