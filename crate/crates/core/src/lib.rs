//! Scientometric pipeline: country-mention extraction, fractional attention,
//! funding and migration networks, attention metrics, and a two-way
//! fixed-effects difference-in-differences stack with matching.
//!
//! Every stage is a pure function of its inputs. Parallel stages merge
//! their partial results in a fixed order, so outputs are byte-identical
//! across worker counts.

pub mod corpus;
pub mod econo;
pub mod eval;
pub mod extract;
pub mod gazetteer;
pub mod iso3;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod synth;

pub use iso3::Iso3;

/// Run `f` on a dedicated rayon pool with `n` threads (at least one).
pub(crate) fn with_workers<R: Send>(n: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
