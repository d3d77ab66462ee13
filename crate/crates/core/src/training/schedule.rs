use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DomainId, TrainingBundle};
use crate::encoder::derive_seed;
use crate::error::{Error, Result};

/// One single-domain batch. The batch's own domain is the meta-target; the
/// other sources are the meta-sources.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    /// Expert index of the batch domain.
    pub domain: usize,
    /// Positions into that domain's example list.
    pub examples: Vec<usize>,
    pub meta_target: DomainId,
    pub meta_sources: Vec<DomainId>,
}

/// Seeded episode order for one epoch: every source example appears exactly
/// once, batches never mix domains, and the batch sequence is shuffled.
pub fn schedule(
    bundle: &TrainingBundle,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Episode>> {
    if batch_size == 0 {
        return Err(Error::Training("batch_size must be >= 1".into()));
    }
    let domains = bundle.source_domains();
    if domains.len() < 2 {
        return Err(Error::Training("episodes need at least 2 source domains".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64));
    let mut episodes = Vec::new();
    for (k, exs) in bundle.indexed_sources() {
        let mut order: Vec<usize> = (0..exs.len()).collect();
        order.shuffle(&mut rng);
        let meta_sources: Vec<DomainId> = domains
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, d)| d.clone())
            .collect();
        for chunk in order.chunks(batch_size) {
            episodes.push(Episode {
                domain: k,
                examples: chunk.to_vec(),
                meta_target: domains[k].clone(),
                meta_sources: meta_sources.clone(),
            });
        }
    }
    episodes.shuffle(&mut rng);
    Ok(episodes)
}
