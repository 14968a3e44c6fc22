//! Seeded, portable random sampling.
//!
//! Every random draw in the harness goes through [`run_rng`], which is
//! ChaCha8 (from `rand_chacha`) seeded through `SeedableRng::seed_from_u64`
//! (PCG32 key expansion). Both algorithms are fixed by their crates and
//! produce identical streams on every platform.
//!
//! Without-replacement sampling uses sequential selection: for the `i`-th
//! pick, draw `j` uniformly from `0..remaining` and take the `j`-th element
//! of the remaining pool, keeping pool order. The output is in draw order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator used for all seeded draws.
pub type RunRng = ChaCha8Rng;

pub fn run_rng(seed: u64) -> RunRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws `k` distinct indices from `0..n` in draw order.
///
/// Panics if `k > n`; callers check population sizes first so they can
/// report which group or band came up short.
pub fn draw_indices<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot draw {k} of {n}");
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let j = rng.random_range(0..n - i);
        out.push(pool.remove(j));
    }
    out
}
