//! A dynamized learned metric index.
//!
//! The index is a shallow tree: inner nodes hold a small classifier that
//! routes vectors toward child subtrees, leaves hold buckets of object ids.
//! Queries descend best-first by cumulative routing probability and scan a
//! bounded number of buckets. Instead of periodically rebuilding the whole
//! structure as objects arrive, the index is maintained in place by three
//! operators (deepen, broaden, shorten) driven by occupancy policies, and a
//! cost model amortizes build work over the query load so the maintenance
//! strategies can be compared honestly.
//!
//! Module map:
//! - [`dataset`]: vectors, Euclidean distance, brute-force k-NN, recall.
//! - [`io`]: fvecs/ivecs readers and writers.
//! - [`synthetic`]: seeded Gaussian-blob dataset generator.
//! - [`kmeans`]: k-means++ / Lloyd clustering.
//! - [`model`]: routing classifiers (centroid softmax and a small MLP),
//!   including output-removal surgery.
//! - [`index`]: the tree itself — static build, insert, best-first search,
//!   consistency checking, occupancy stats.
//! - [`dynamize`]: the three structural operators plus the policy engine.
//! - [`baseline`]: no-rebuild / naive-rebuild lifecycles.
//! - [`costmodel`]: amortized cost, search-cost measurement, deterioration
//!   curves, rebuild-interval optimization.
//! - [`bench`]: the scenario-matrix runner and CSV emission.
//! - [`persist`]: versioned binary snapshot of an index.

pub mod baseline;
pub mod bench;
pub mod costmodel;
pub mod dataset;
pub mod dynamize;
mod error;
pub mod index;
pub mod io;
pub mod kmeans;
pub mod model;
pub mod persist;
pub mod synthetic;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// SplitMix64 finalizer. Used everywhere a sub-seed is derived from a master
/// seed so that independent components get decorrelated, reproducible RNG
/// streams.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit FNV-1a over a byte string; used to derive per-cell seeds
/// from textual labels without pulling in a hashing crate.
pub fn hash_label(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
