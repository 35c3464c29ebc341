use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded uniform sample of `floor(fraction * n)` frames (at least one when
/// `n > 0`) without replacement. Both index lists are sorted and together
/// cover `0..n` exactly once.
pub fn split_frames(n_frames: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "train fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let count =
        ((fraction * n_frames as f64 + 1e-9).floor() as usize).clamp(n_frames.min(1), n_frames);
    let mut order: Vec<usize> = (0..n_frames).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..count].to_vec();
    let mut eval = order[count..].to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    Ok((train, eval))
}
