//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit RNG. Parallel routines draw a
//! single `u64` from the caller's RNG and derive one ChaCha stream per work
//! chunk from it, so results depend only on the seed and the chunk layout,
//! never on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Samples per parallel work chunk. Fixed so that chunk streams, and hence
/// results, do not depend on how many workers are available.
pub const CHUNK: usize = 4096;

/// The RNG used throughout the crate.
pub type KacRng = ChaCha8Rng;

/// Counter-based stream `stream` under master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> KacRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Run `work(rng, count)` over `n` items split into fixed-size chunks, each
/// with its own stream, and fold the chunk results in chunk order.
pub fn par_chunks<T, R, W, F>(rng: &mut R, n: usize, work: W, fold: F) -> Option<T>
where
    R: Rng + ?Sized,
    T: Send,
    W: Fn(&mut KacRng, usize) -> T + Sync,
    F: Fn(T, T) -> T,
{
    let seed: u64 = rng.random();
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<T> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(n - c * CHUNK);
            let mut r = stream_rng(seed, c as u64);
            work(&mut r, count)
        })
        .collect();
    parts.into_iter().reduce(fold)
}

/// Like [`par_chunks`] but over an explicit list of jobs (grid points,
/// replicas). Results come back in job order.
pub fn par_jobs<J, T, R, W>(rng: &mut R, jobs: &[J], work: W) -> Vec<T>
where
    R: Rng + ?Sized,
    J: Sync,
    T: Send,
    W: Fn(&mut KacRng, &J) -> T + Sync,
{
    let seed: u64 = rng.random();
    jobs.par_iter()
        .enumerate()
        .map(|(i, job)| {
            let mut r = stream_rng(seed, i as u64);
            work(&mut r, job)
        })
        .collect()
}
