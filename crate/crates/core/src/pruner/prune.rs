use rand::{seq::index, Rng};

use super::PruneError;

/// Entries frozen per round: `ceil(p% of the unfrozen count)`, at least one.
pub fn prune_count(remaining: usize, p: f64) -> usize {
    if remaining == 0 {
        return 0;
    }
    let k = (remaining as f64 * p / 100.0).ceil() as usize;
    k.clamp(1, remaining)
}

/// Freezes the lowest-scored unfrozen entries and resets survivors to 1.
///
/// The threshold is the `prune_count`-th smallest unfrozen value; every
/// unfrozen entry at or below it is frozen, so ties are pruned together.
/// Returns the number of newly frozen entries.
pub fn magnitude_prune(values: &mut [f64], frozen: &mut [bool], p: f64) -> Result<usize, PruneError> {
    magnitude_prune_ranked(values, None, frozen, p)
}

fn key_cmp(a: (f64, f64), b: (f64, f64)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1))
}

/// [`magnitude_prune`] with a secondary key. Entries are ranked by
/// `(value, tiebreak)`; only entries equal in both are pruned together.
/// Used to order scores that the projection clamped onto the same bound by
/// their unprojected pressure.
pub fn magnitude_prune_ranked(
    values: &mut [f64],
    tiebreak: Option<&[f64]>,
    frozen: &mut [bool],
    p: f64,
) -> Result<usize, PruneError> {
    let key = |i: usize| (values[i], tiebreak.map_or(0.0, |t| t[i]));
    let mut live: Vec<(f64, f64)> = (0..values.len()).filter(|&i| !frozen[i]).map(key).collect();
    if live.is_empty() {
        return Err(PruneError::NothingToPrune);
    }
    let k = prune_count(live.len(), p);
    live.sort_unstable_by(|a, b| key_cmp(*a, *b));
    let threshold = live[k - 1];
    let keys: Vec<(f64, f64)> = (0..values.len()).map(key).collect();
    let mut pruned = 0;
    for ((v, f), &kv) in values.iter_mut().zip(frozen.iter_mut()).zip(&keys) {
        if *f {
            continue;
        }
        if key_cmp(kv, threshold).is_le() {
            *f = true;
            *v = 0.0;
            pruned += 1;
        } else {
            *v = 1.0;
        }
    }
    Ok(pruned)
}

/// Freezes `prune_count` uniformly chosen unfrozen entries and resets
/// survivors to 1.
pub fn random_prune(
    values: &mut [f64],
    frozen: &mut [bool],
    p: f64,
    rng: &mut impl Rng,
) -> Result<usize, PruneError> {
    let live: Vec<usize> = (0..frozen.len()).filter(|&i| !frozen[i]).collect();
    if live.is_empty() {
        return Err(PruneError::NothingToPrune);
    }
    let k = prune_count(live.len(), p);
    for pick in index::sample(rng, live.len(), k) {
        frozen[live[pick]] = true;
    }
    for (v, &f) in values.iter_mut().zip(frozen.iter()) {
        *v = if f { 0.0 } else { 1.0 };
    }
    Ok(k)
}
