use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{contact_vector, ContactVector};
use crate::grammar::{DesignGraph, DesignRecord, Grammar};
use crate::nn::{Adam, Gradients, NnError, Tape};

use super::loss::LatentNoise;
use super::{DecodeMode, GraphVae, VaeError};

/// Column names of the metrics log.
pub const METRICS_HEADER: &str = "epoch,l_d,l_kl,l_ppn,recon_rate,l_root";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Weight of the property-prediction loss; 0 disables the head.
    pub lambda: f64,
    pub beta_kl: f64,
    /// Fraction of all steps over which the KL weight ramps up linearly.
    pub kl_warmup: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate at the last step as a share of `lr`, reached by cosine
    /// annealing. 1 keeps the rate constant.
    pub final_lr_fraction: f64,
    pub seed: u64,
    /// Share of the data held out for the reconstruction metric.
    pub holdout_fraction: f64,
    pub max_holdout: usize,
    /// Rescale the batch gradient to at most this global norm.
    pub grad_clip: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            beta_kl: 0.005,
            kl_warmup: 0.1,
            epochs: 20,
            batch_size: 32,
            lr: 3e-3,
            final_lr_fraction: 0.05,
            seed: 0,
            holdout_fraction: 0.05,
            max_holdout: 1000,
            grad_clip: Some(10.0),
        }
    }
}

/// Training example: canonical design and its padded contact vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub graph: DesignGraph,
    pub contacts: Vec<f32>,
}

impl Sample {
    pub fn new(graph: &DesignGraph, grammar: &Grammar) -> Result<Self, VaeError> {
        let cv = contact_vector(graph, grammar).map_err(|_| VaeError::NotTerminalComplete)?;
        Ok(Self {
            graph: graph.canonicalize(),
            contacts: cv.to_f32(),
        })
    }

    /// Uses the stored contacts when present, else computes them.
    pub fn from_record(rec: &DesignRecord, grammar: &Grammar) -> Result<Self, VaeError> {
        let g = DesignGraph::try_from(rec)?;
        if !grammar.is_terminal_complete(&g) {
            return Err(VaeError::NotTerminalComplete);
        }
        match &rec.contacts {
            Some(raw) => Ok(Self {
                graph: g.canonicalize(),
                contacts: ContactVector::from_contacts(raw).to_f32(),
            }),
            None => Self::new(&g, grammar),
        }
    }

    /// Reads a JSONL dataset.
    pub fn read_jsonl<R: BufRead>(r: R, grammar: &Grammar) -> Result<Vec<Self>, VaeError> {
        let mut out = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DesignRecord = serde_json::from_str(&line)
                .map_err(|e| VaeError::DataFormat(format!("line {}: {e}", n + 1)))?;
            out.push(
                Self::from_record(&rec, grammar)
                    .map_err(|e| VaeError::DataFormat(format!("line {}: {e}", n + 1)))?,
            );
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_d: f64,
    pub l_kl: f64,
    pub l_ppn: f64,
    pub recon_rate: f64,
    pub l_root: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.l_d, self.l_kl, self.l_ppn, self.recon_rate, self.l_root
        )
    }

    pub fn write_csv<W: Write>(rows: &[EpochMetrics], mut w: W) -> std::io::Result<()> {
        writeln!(w, "{METRICS_HEADER}")?;
        for r in rows {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

/// Mean loss terms over `samples`, decoding from the posterior mean.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossSummary {
    pub l_d: f64,
    pub l_kl: f64,
    pub l_ppn: f64,
    pub l_root: f64,
}

pub fn evaluate_losses(model: &GraphVae<f32>, samples: &[Sample]) -> Result<LossSummary, VaeError> {
    let mut acc = LossSummary::default();
    let mut tape = Tape::new(&model.params);
    for s in samples {
        tape.clear();
        let c = model.example_loss(
            &mut tape,
            &s.graph,
            &s.contacts,
            LatentNoise::Mean,
        )?;
        acc.l_d += f64::from(tape.scalar(c.l_d));
        acc.l_kl += f64::from(tape.scalar(c.l_kl));
        acc.l_ppn += f64::from(tape.scalar(c.l_ppn));
        acc.l_root += f64::from(tape.scalar(c.l_root));
    }
    let n = samples.len().max(1) as f64;
    Ok(LossSummary {
        l_d: acc.l_d / n,
        l_kl: acc.l_kl / n,
        l_ppn: acc.l_ppn / n,
        l_root: acc.l_root / n,
    })
}

/// Share of designs reproduced exactly by deterministic decoding of their mean.
pub fn reconstruction_rate(model: &GraphVae<f32>, graphs: &[DesignGraph]) -> Result<f64, VaeError> {
    if graphs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for g in graphs {
        let canon = g.canonicalize();
        let mu = model.encode_mean(&canon)?;
        let out = model.decode(&mu, DecodeMode::Deterministic)?;
        if out.canonicalize() == canon {
            hits += 1;
        }
    }
    Ok(hits as f64 / graphs.len() as f64)
}

/// Splits `data` into (train, held-out) with a seeded shuffle.
pub fn split_holdout(data: &[Sample], cfg: &TrainingConfig) -> (Vec<Sample>, Vec<Sample>) {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_5e11);
    idx.shuffle(&mut rng);
    let n_hold = if data.len() < 2 {
        0
    } else {
        ((data.len() as f64 * cfg.holdout_fraction).round() as usize)
            .min(cfg.max_holdout)
            .min(data.len() - 1)
    };
    let hold = idx[..n_hold].iter().map(|&i| data[i].clone()).collect();
    let train = idx[n_hold..].iter().map(|&i| data[i].clone()).collect();
    (train, hold)
}

/// Cosine schedule from `lr` at step 0 to `lr * final_lr_fraction` at the last step.
pub fn annealed_lr(cfg: &TrainingConfig, step: usize, total_steps: usize) -> f64 {
    if total_steps < 2 {
        return cfg.lr;
    }
    let t = step as f64 / (total_steps - 1) as f64;
    let floor = cfg.lr * cfg.final_lr_fraction;
    floor + (cfg.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Trains `model` in place and returns one metrics row per epoch.
pub fn train(
    model: &mut GraphVae<f32>,
    data: &[Sample],
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>, VaeError> {
    if data.is_empty() {
        return Err(VaeError::DataFormat("empty dataset".into()));
    }
    if cfg.batch_size == 0 || cfg.lambda < 0.0 || cfg.beta_kl < 0.0 {
        return Err(VaeError::DataFormat("invalid training config".into()));
    }
    for s in data {
        if s.contacts.len() != model.config.contact_dim {
            return Err(VaeError::DataFormat(format!(
                "contact vector of {} for size {}",
                s.contacts.len(),
                model.config.contact_dim
            )));
        }
    }
    let (train_set, holdout) = split_holdout(data, cfg);
    let hold_graphs: Vec<DesignGraph> = holdout.iter().map(|s| s.graph.clone()).collect();

    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = Adam::new(&model.params, cfg.lr);
    let mut grads = Gradients::zeros_like(&model.params);

    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = (batches_per_epoch * cfg.epochs).max(1);
    let warm_steps = (cfg.kl_warmup * total_steps as f64).ceil().max(1.0);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut sums = [0.0f64; 4];
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch_index = epoch * batches_per_epoch + b;
            let beta = if cfg.kl_warmup > 0.0 {
                cfg.beta_kl * ((step + 1) as f64 / warm_steps).min(1.0)
            } else {
                cfg.beta_kl
            };
            let seed = 1.0 / chunk.len() as f32;
            grads.zero();
            {
                let mut tape = Tape::new(&model.params);
                for &i in chunk {
                    let s = &train_set[i];
                    tape.clear();
                    let fwd = model
                        .example_loss(
                            &mut tape,
                            &s.graph,
                            &s.contacts,
                            LatentNoise::Sample(&mut noise_rng),
                        )
                        .and_then(|c| Ok((c, model.combine(&mut tape, &c, beta, cfg.lambda)?)));
                    let (c, total) = match fwd {
                        Ok(v) => v,
                        Err(VaeError::Nn(NnError::NonFinite(_))) => {
                            return Err(VaeError::NonFiniteGradient { batch: batch_index })
                        }
                        Err(e) => return Err(e),
                    };
                    sums[0] += f64::from(tape.scalar(c.l_d));
                    sums[1] += f64::from(tape.scalar(c.l_kl));
                    sums[2] += f64::from(tape.scalar(c.l_ppn));
                    sums[3] += f64::from(tape.scalar(c.l_root));
                    tape.backward(total, seed, &mut grads)
                        .map_err(|_| VaeError::NonFiniteGradient { batch: batch_index })?;
                }
            }
            if !grads.is_finite() {
                return Err(VaeError::NonFiniteGradient { batch: batch_index });
            }
            if let Some(clip) = cfg.grad_clip {
                let norm = grads.global_norm();
                if norm > clip {
                    grads.scale((clip / norm) as f32);
                }
            }
            adam.lr = annealed_lr(cfg, step, total_steps);
            adam.step(&mut model.params, &grads);
            step += 1;
        }
        let n = train_set.len() as f64;
        let recon = reconstruction_rate(model, &hold_graphs)?;
        let row = EpochMetrics {
            epoch: epoch + 1,
            l_d: sums[0] / n,
            l_kl: sums[1] / n,
            l_ppn: sums[2] / n,
            recon_rate: recon,
            l_root: sums[3] / n,
        };
        on_epoch(&row);
        rows.push(row);
    }
    Ok(rows)
}
