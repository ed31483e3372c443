//! Grammar-guided latent space optimization of robot designs.
//!
//! Designs are rooted trees of hardware components generated by a graph
//! grammar. A graph VAE learns a continuous embedding of them, co-trained with
//! a predictor of ground-contact features, and Bayesian optimization searches
//! the embedding for high-scoring designs.

pub mod grammar;
pub mod features;
pub mod nn;
pub mod vae;
pub mod latent_opt;
pub mod records;
pub mod eval_env;
pub mod baselines;
