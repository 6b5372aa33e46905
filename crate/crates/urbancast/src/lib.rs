//! Retrieval-augmented forecasting over urban region embeddings.
//!
//! The crate is organized around four pieces:
//!
//! - [`store`] — an immutable database of region records (planar centroid,
//!   latent embedding, text description, cached Shannon entropy) with exact
//!   spatial k-NN queries and a file bundle format.
//! - [`retrieval`] — task-aware dependency retrieval: a prompt template, a
//!   language-model prototype inference step, semantic scoring by cosine
//!   similarity over text embeddings, plus random / latent-similarity /
//!   lasso-sparse ablation mechanisms.
//! - [`model`] — a cross-attention decoder whose post-softmax scores are
//!   weighted by spatial proximity and information entropy, trained with MSE
//!   and exact analytic gradients; includes an MLP baseline.
//! - [`bench`] — a synthetic-city benchmark with planted spatial
//!   dependencies, regression metrics, and ablation experiment runners.

pub mod bench;
pub mod error;
pub mod model;
pub mod retrieval;
pub mod store;

pub use error::{Error, Result};

/// Mixes a base seed with a salt so that sub-streams (sampling, noise,
/// initialization) are decorrelated but still a pure function of the base.
/// SplitMix64 finalizer.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
