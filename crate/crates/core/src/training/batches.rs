use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};
use crate::signal::FeatureConfig;

/// Groups utterance indices into batches of at most `budget` total frames.
///
/// Utterances are sorted by length (ties by index) and packed greedily;
/// the batch order is then shuffled with `seed`.
pub fn make_batches_from_lengths(
    ids: &[String],
    lengths: &[usize],
    budget: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    assert_eq!(ids.len(), lengths.len());
    if let Some(i) = (0..lengths.len()).find(|&i| lengths[i] > budget) {
        return Err(Error::OverBudget {
            id: ids[i].clone(),
            frames: lengths[i],
            budget,
        });
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut used = 0;
    for i in order {
        if used + lengths[i] > budget && !cur.is_empty() {
            batches.push(std::mem::take(&mut cur));
            used = 0;
        }
        cur.push(i);
        used += lengths[i];
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(batches)
}

/// [`make_batches_from_lengths`] over a manifest; frame counts come from the
/// stored f0 files.
pub fn make_batches(
    manifest: &CorpusManifest,
    cfg: &FeatureConfig,
    budget: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let utts = manifest.load_all(cfg)?;
    let ids: Vec<String> = utts.iter().map(|u| u.id.clone()).collect();
    let lengths: Vec<usize> = utts.iter().map(|u| u.frames()).collect();
    make_batches_from_lengths(&ids, &lengths, budget, seed)
}
