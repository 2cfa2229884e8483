//! Query anonymisation for keyword search.
//!
//! A query token is replaced by noisy related terms (nearest neighbours of
//! its perturbed embedding) and by distractor terms chosen to be dissimilar
//! from it. The caller retrieves results for every transmitted term and
//! rebuilds the original result set from the related terms alone.
//!
//! Modules:
//! - [`embed`]: word vectors, cosine similarity, nearest neighbours, noise
//! - [`corpus`]: tokenizer and boolean inverted index
//! - [`anonymise`]: related/distractor selection and query decomposition
//! - [`reconstruct`]: result reconstruction, anonymity and reconstructability
//! - [`theory`]: predicted α–log ρ relation and its least-squares fit
//! - [`attack`]: k-means clustering attacks and hit rates
//! - [`harness`]: seeded experiment grids with CSV output
//! - [`game`]: the two-stage query prediction game and its HTTP service
//! - [`synth`]: deterministic synthetic embeddings and corpora

pub mod anonymise;
pub mod attack;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod game;
pub mod harness;
pub mod plot;
pub mod reconstruct;
pub mod rng;
pub mod synth;
pub mod theory;

pub use error::{Error, Result};
