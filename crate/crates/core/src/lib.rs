//! Sentence autoencoders (AE, VAE, AAE) with their training loops,
//! generation modes and automatic evaluation metrics.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod generate;
pub mod kv;
pub mod latent;
pub mod model;
pub mod nn;
pub mod schedule;
pub mod synthetic;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
