//! Bayesian optimization over the latent space: GP surrogate, expected
//! improvement over random candidates, and a box that contracts around the
//! incumbent.

mod gp;

pub use gp::{
    expected_improvement, gp_fit, gp_posterior, normal_cdf, normal_pdf, sq_dist, GpModel, Kernel,
    MAX_JITTER, NOISE_VAR,
};

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{EvalRecord, RecordLog, PENALTY};

#[derive(Debug, Error)]
pub enum OptError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite observation")]
    NonFinite,
    #[error("covariance not positive definite after maximum jitter")]
    SingularCovariance,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Per-dimension search box.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter()
            .enumerate()
            .all(|(k, &v)| v >= self.lo[k] && v <= self.hi[k])
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.lo[k] + self.width(k) * rng.random::<f64>())
            .collect()
    }
}

/// Share of the initial half-width below which the box never shrinks.
pub const WIDTH_FLOOR: f64 = 0.10;
/// Per-step contraction factor of the half-width.
pub const CONTRACTION: f64 = 0.95;

/// Recentres the box on `incumbent` with a contracted half-width, then shifts
/// it back inside `initial` where it sticks out.
pub fn domain_reduce(bounds: &Bounds, initial: &Bounds, incumbent: &[f64]) -> Bounds {
    recentre(bounds, initial, incumbent, |half, init_half| {
        (CONTRACTION * half).max(WIDTH_FLOOR * init_half)
    })
}

/// Inverse step of [`domain_reduce`]: recentres on `incumbent` with the
/// half-width divided by [`CONTRACTION`], at most the initial half-width.
pub fn domain_expand(bounds: &Bounds, initial: &Bounds, incumbent: &[f64]) -> Bounds {
    recentre(bounds, initial, incumbent, |half, init_half| (half / CONTRACTION).min(init_half))
}

fn recentre(
    bounds: &Bounds,
    initial: &Bounds,
    incumbent: &[f64],
    new_half: impl Fn(f64, f64) -> f64,
) -> Bounds {
    let mut out = bounds.clone();
    for k in 0..bounds.dim() {
        let half = new_half(bounds.width(k) / 2.0, initial.width(k) / 2.0);
        let mut lo = incumbent[k] - half;
        let mut hi = incumbent[k] + half;
        if lo < initial.lo[k] {
            hi += initial.lo[k] - lo;
            lo = initial.lo[k];
        }
        if hi > initial.hi[k] {
            lo -= hi - initial.hi[k];
            hi = initial.hi[k];
        }
        out.lo[k] = lo.max(initial.lo[k]);
        out.hi[k] = hi;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    /// Objective evaluations allowed; memoized repeats are free.
    pub budget: usize,
    pub n_init: usize,
    pub candidates: usize,
    pub xi: f64,
    pub seed: u64,
    /// Half-width of the initial cube around the origin.
    pub init_box: f64,
    /// Hard cap on proposals including memo hits; 0 means three times the budget.
    pub max_proposals: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            budget: 500,
            n_init: 20,
            candidates: 2048,
            xi: 0.01,
            seed: 0,
            init_box: 3.0,
            max_proposals: 0,
        }
    }
}

impl BoConfig {
    fn proposal_cap(&self) -> usize {
        if self.max_proposals == 0 {
            3 * self.budget
        } else {
            self.max_proposals
        }
    }
}

/// Uniform candidate points for one proposal.
pub fn candidates(bounds: &Bounds, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| bounds.sample(&mut rng)).collect()
}

/// Candidate with the largest expected improvement; ties keep the lowest index.
pub fn propose_next(m: &GpModel, bounds: &Bounds, cfg: &BoConfig, seed: u64) -> Vec<f64> {
    let y_best = m.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cands = candidates(bounds, cfg.candidates.max(1), seed);
    let i = if m.is_empty() {
        0
    } else {
        m.argmax_ei(&cands, y_best, cfg.xi).expect("at least one candidate")
    };
    cands.swap_remove(i)
}

/// A black box over latent vectors.
pub trait LatentObjective {
    /// Key of the design `z` maps to, used to memoize scores. `None` means
    /// every point is distinct.
    fn design(&mut self, z: &[f64]) -> Option<String>;
    /// Score of `z`, whose design key was just returned by [`Self::design`].
    fn score(&mut self, z: &[f64], design: Option<&str>) -> Result<f64, String>;
}

/// Full optimization loop. Stops when the budget is spent or the proposal cap is hit.
pub fn bo_run<O: LatentObjective + ?Sized>(
    objective: &mut O,
    dim: usize,
    cfg: &BoConfig,
) -> Result<Vec<EvalRecord>, OptError> {
    if cfg.budget == 0 || cfg.n_init == 0 || cfg.n_init > cfg.budget {
        return Err(OptError::Config(format!(
            "need 0 < n_init ({}) <= budget ({})",
            cfg.n_init, cfg.budget
        )));
    }
    let initial = Bounds::cube(dim, -cfg.init_box, cfg.init_box);
    let mut bounds = initial.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = RecordLog::new();
    let mut memo: HashMap<String, f64> = HashMap::new();
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let cap = cfg.proposal_cap();

    let mut observe = |z: Vec<f64>, log: &mut RecordLog, xs: &mut Vec<Vec<f64>>, ys: &mut Vec<f64>| {
        let t = Instant::now();
        let key = objective.design(&z);
        let (score, cached) = match key.as_ref().and_then(|k| memo.get(k)) {
            Some(&s) => (s, true),
            None => {
                let s = match objective.score(&z, key.as_deref()) {
                    Ok(s) if s.is_finite() => s,
                    _ => PENALTY,
                };
                if let Some(k) = &key {
                    memo.insert(k.clone(), s);
                }
                (s, false)
            }
        };
        xs.push(z.clone());
        ys.push(score);
        log.push(Some(z), key, score, cached, t.elapsed().as_secs_f64() * 1e3);
    };

    while log.evals() < cfg.n_init && log.len() < cap {
        let z = initial.sample(&mut rng);
        observe(z, &mut log, &mut xs, &mut ys);
    }
    while log.evals() < cfg.budget && log.len() < cap {
        let gp = gp_fit(&xs, &ys)?;
        let z = propose_next(&gp, &bounds, cfg, rng.random());
        let before = log.evals();
        observe(z, &mut log, &mut xs, &mut ys);
        let best = ys
            .iter()
            .enumerate()
            .fold(0, |b, (i, &y)| if y > ys[b] { i } else { b });
        bounds = if log.evals() > before {
            domain_reduce(&bounds, &initial, &xs[best])
        } else {
            domain_expand(&bounds, &initial, &xs[best])
        };
    }
    Ok(log.into_records())
}

/// Objective defined directly on latent vectors, without a decoder.
pub struct FnObjective<F>(pub F);

impl<F: FnMut(&[f64]) -> f64> LatentObjective for FnObjective<F> {
    fn design(&mut self, _z: &[f64]) -> Option<String> {
        None
    }

    fn score(&mut self, z: &[f64], _design: Option<&str>) -> Result<f64, String> {
        Ok((self.0)(z))
    }
}
