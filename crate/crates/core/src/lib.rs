//! Synthesis of subject-specific fMRI responses from visual semantic
//! embeddings: a variational fMRI autoencoder, a semantic-to-neural latent
//! mapper, training and few-shot adaptation, evaluation, and
//! augmentation of decoder training sets.

pub mod augment;
pub mod autograd;
pub mod blocks;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod metrics;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod plot;
pub mod s2n;
pub mod seed;
pub mod vae;
pub mod world;

pub use config::{ModelConfig, SubjectId};
pub use error::{Error, Result};
