//! Graph VAE over design trees.
//!
//! The encoder runs synchronous GRU message passing over every directed edge,
//! sums the node representations of the leaves (and, optionally, of the root)
//! and maps the result to the posterior mean and log-variance. An optional
//! input bit marks the root, since the unrooted message passing alone cannot
//! tell which end of a chain the decoder has to start from. The decoder rebuilds a tree depth-first
//! from the root, predicting at every visit whether another child follows and
//! the type of every created child. A small property head maps the posterior
//! mean to the padded contact vector.

mod checkpoint;
mod decoder;
mod encoder;
mod loss;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use decoder::{DecodeLoss, DecodeMode};
pub use loss::{kl_divergence, reparameterize, reparameterize_with, LatentNoise, LossComponents};
pub use train::{
    annealed_lr, evaluate_losses, reconstruction_rate, split_holdout, train, EpochMetrics, LossSummary, Sample,
    TrainingConfig, METRICS_HEADER,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::CONTACT_DIM;
use crate::grammar::GrammarError;
use crate::nn::{GruCellParams, NnError, ParamId, ParamSet, Scalar};

#[derive(Debug, Error)]
pub enum VaeError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("design contains nonterminal symbols")]
    NotTerminalComplete,
    #[error("data format error: {0}")]
    DataFormat(String),
    #[error("non-finite gradient in batch {batch}")]
    NonFiniteGradient { batch: usize },
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeConfig {
    /// Number of terminal component types (one-hot width).
    pub n_types: usize,
    pub d_hidden: usize,
    pub d_latent: usize,
    /// Message-passing iterations in the encoder.
    pub t_mp: usize,
    pub ppn_hidden: usize,
    pub contact_dim: usize,
    /// Extra encoder input bit marking the root node.
    #[serde(default)]
    pub root_flag: bool,
    /// Add the root's representation to the leaf sum.
    #[serde(default)]
    pub root_readout: bool,
}

impl VaeConfig {
    pub fn new(n_types: usize) -> Self {
        Self {
            n_types,
            d_hidden: 64,
            d_latent: 32,
            t_mp: 4,
            ppn_hidden: 64,
            contact_dim: CONTACT_DIM,
            root_flag: true,
            root_readout: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderParams {
    pub gru: GruCellParams,
    pub w_e: ParamId,
    pub u_e: ParamId,
    pub mu_w: ParamId,
    pub mu_b: ParamId,
    pub logvar_w: ParamId,
    pub logvar_b: ParamId,
    pub t_mp: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderParams {
    pub gru: GruCellParams,
    /// Expand head: `u_c . relu(W1 x + W2 z + W3 sum(h_in) + b)`.
    pub w1_c: ParamId,
    pub w2_c: ParamId,
    pub w3_c: ParamId,
    pub b_c: ParamId,
    pub u_c: ParamId,
    /// Label head: `U softmax-logits of relu(W1 z + W2 h + b)`.
    pub w1_l: ParamId,
    pub w2_l: ParamId,
    pub b_l: ParamId,
    pub u_l: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct PpnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct GraphVae<T> {
    pub config: VaeConfig,
    pub params: ParamSet<T>,
    pub enc: EncoderParams,
    pub dec: DecoderParams,
    pub ppn: PpnParams,
}

impl<T: Scalar> GraphVae<T> {
    /// Fresh model with uniform(±1/sqrt(fan_in)) weights from `seed`.
    pub fn new(config: VaeConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let (t, h, l) = (config.n_types, config.d_hidden, config.d_latent);
        let tx = t + usize::from(config.root_flag);

        let enc = EncoderParams {
            gru: GruCellParams::init(&mut p, "enc.gru", tx, h, &mut rng),
            w_e: p.uniform("enc.w_e", vec![h, tx], tx + h, &mut rng),
            u_e: p.uniform("enc.u_e", vec![h, h], tx + h, &mut rng),
            mu_w: p.uniform("enc.mu_w", vec![l, h], h, &mut rng),
            mu_b: p.uniform("enc.mu_b", vec![l], h, &mut rng),
            logvar_w: p.uniform("enc.logvar_w", vec![l, h], h, &mut rng),
            logvar_b: p.uniform("enc.logvar_b", vec![l], h, &mut rng),
            t_mp: config.t_mp,
        };
        let dec = DecoderParams {
            gru: GruCellParams::init(&mut p, "dec.gru", t, h, &mut rng),
            w1_c: p.uniform("dec.w1_c", vec![h, t], t + l + h, &mut rng),
            w2_c: p.uniform("dec.w2_c", vec![h, l], t + l + h, &mut rng),
            w3_c: p.uniform("dec.w3_c", vec![h, h], t + l + h, &mut rng),
            b_c: p.uniform("dec.b_c", vec![h], t + l + h, &mut rng),
            u_c: p.uniform("dec.u_c", vec![h], h, &mut rng),
            w1_l: p.uniform("dec.w1_l", vec![h, l], l + h, &mut rng),
            w2_l: p.uniform("dec.w2_l", vec![h, h], l + h, &mut rng),
            b_l: p.uniform("dec.b_l", vec![h], l + h, &mut rng),
            u_l: p.uniform("dec.u_l", vec![t, h], h, &mut rng),
        };
        let ph = config.ppn_hidden;
        let ppn = PpnParams {
            w1: p.uniform("ppn.w1", vec![ph, l], l, &mut rng),
            b1: p.uniform("ppn.b1", vec![ph], l, &mut rng),
            w2: p.uniform("ppn.w2", vec![config.contact_dim, ph], ph, &mut rng),
            b2: p.uniform("ppn.b2", vec![config.contact_dim], ph, &mut rng),
        };
        Self {
            config,
            params: p,
            enc,
            dec,
            ppn,
        }
    }

    /// Same architecture with another element type.
    pub fn cast<U: Scalar>(&self) -> GraphVae<U> {
        GraphVae {
            config: self.config,
            params: self.params.cast(),
            enc: self.enc,
            dec: self.dec,
            ppn: self.ppn,
        }
    }

    pub fn zero_params(&mut self) {
        self.params.fill_zero();
    }

    /// Tensor names belonging to the property head.
    pub fn ppn_param_ids(&self) -> [ParamId; 4] {
        [self.ppn.w1, self.ppn.b1, self.ppn.w2, self.ppn.b2]
    }
}

pub(crate) fn check_terminal<T>(model: &GraphVae<T>, g: &crate::grammar::DesignGraph) -> Result<(), VaeError> {
    if g
        .node_types()
        .iter()
        .all(|&t| usize::from(t) < model.config.n_types)
    {
        Ok(())
    } else {
        Err(VaeError::NotTerminalComplete)
    }
}
