#![allow(dead_code)]

pub mod oracle;

use gts_core::grid::{TagGrid, TagSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Diagonal cells mostly A/O, off-diagonal cells sparse over every tag.
pub fn random_grid<T: TagSet>(rng: &mut ChaCha8Rng, n: usize) -> TagGrid<T> {
    let mut g = TagGrid::filled(n, T::NONE);
    for i in 0..n {
        for j in i..n {
            let tag = if i == j {
                match rng.gen_range(0..10) {
                    0..=3 => T::ASPECT,
                    4..=6 => T::OPINION,
                    _ => T::NONE,
                }
            } else if rng.gen_bool(0.35) {
                T::ALL[rng.gen_range(0..T::ALL.len())]
            } else {
                T::NONE
            };
            g.set(i, j, tag);
        }
    }
    g
}
