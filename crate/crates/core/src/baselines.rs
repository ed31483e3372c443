//! Search baselines that work directly on designs: random grammar
//! derivations and a mutation-only genetic algorithm over free trees.
//!
//! Both charge one budget unit per scored design, like [`crate::latent_opt::bo_run`].

use std::time::Instant;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{
    random_derivation, random_free_graph_with, DesignGraph, Grammar, GrammarError, TypeId,
    MAX_NODES,
};
use crate::records::{EvalRecord, RecordLog, PENALTY};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

fn observe<F>(log: &mut RecordLog, objective: &mut F, g: &DesignGraph) -> f64
where
    F: FnMut(&DesignGraph) -> Result<f64, String>,
{
    let t = Instant::now();
    let score = match objective(g) {
        Ok(s) if s.is_finite() => s,
        _ => PENALTY,
    };
    log.push(None, Some(g.canonical_key()), score, false, t.elapsed().as_secs_f64() * 1e3);
    score
}

/// Scores `budget` independent random derivations.
pub fn random_search<F>(
    grammar: &Grammar,
    mut objective: F,
    budget: usize,
    seed: u64,
) -> Result<Vec<EvalRecord>, BaselineError>
where
    F: FnMut(&DesignGraph) -> Result<f64, String>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = RecordLog::new();
    for _ in 0..budget {
        let (g, _) = random_derivation(grammar, rng.random())?;
        observe(&mut log, &mut objective, &g);
    }
    Ok(log.into_records())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub elite_fraction: f64,
    /// Relative weights of relabel, leaf deletion and leaf attachment.
    pub mutation_weights: [f64; 3],
    pub seed: u64,
    pub budget: usize,
    pub n_terminals: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 50,
            elite_fraction: 0.2,
            mutation_weights: [0.4, 0.3, 0.3],
            seed: 0,
            budget: 500,
            n_terminals: 11,
        }
    }
}

impl GaConfig {
    fn validate(&self) -> Result<(), BaselineError> {
        if self.population == 0 || self.population > self.budget {
            return Err(BaselineError::Config(format!(
                "need 0 < population ({}) <= budget ({})",
                self.population, self.budget
            )));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(BaselineError::Config("elite_fraction must be in (0, 1]".into()));
        }
        if self.mutation_weights.iter().any(|w| !(*w >= 0.0)) || self.mutation_weights.iter().sum::<f64>() <= 0.0 {
            return Err(BaselineError::Config("mutation weights must be nonnegative with a positive sum".into()));
        }
        if self.n_terminals == 0 {
            return Err(BaselineError::Config("no terminal types".into()));
        }
        Ok(())
    }

    fn elites(&self) -> usize {
        ((self.population as f64 * self.elite_fraction).ceil() as usize).clamp(1, self.population)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    Relabel,
    DeleteLeaf,
    AttachLeaf,
}

/// Applies one mutation, drawn by weight among the ones valid for `g`.
pub fn mutate<R: Rng>(
    g: &DesignGraph,
    weights: &[f64; 3],
    n_terminals: usize,
    rng: &mut R,
) -> (DesignGraph, Mutation) {
    let ops = [Mutation::Relabel, Mutation::DeleteLeaf, Mutation::AttachLeaf];
    let allowed = [
        true,
        g.len() > 1,
        g.len() < MAX_NODES,
    ];
    let w: Vec<f64> = (0..3).map(|k| if allowed[k] { weights[k] } else { 0.0 }).collect();
    let op = match WeightedIndex::new(&w) {
        Ok(d) => ops[d.sample(rng)],
        Err(_) => Mutation::Relabel,
    };
    let label = rng.random_range(0..n_terminals) as TypeId;
    let out = match op {
        Mutation::Relabel => {
            let mut h = g.clone();
            h.set_node_type(rng.random_range(0..g.len()), label);
            h
        }
        Mutation::DeleteLeaf => {
            let leaves: Vec<usize> = g.leaves().into_iter().filter(|&i| i != 0).collect();
            let leaf = leaves[rng.random_range(0..leaves.len())];
            g.remove_leaf(leaf).expect("non-root leaf")
        }
        Mutation::AttachLeaf => {
            let mut h = g.clone();
            h.add_child(rng.random_range(0..g.len()), label);
            h
        }
    };
    (out, op)
}

/// Mutation-only GA. Elite scores are carried over, not re-evaluated.
pub fn ga_run<F>(mut objective: F, cfg: &GaConfig) -> Result<Vec<EvalRecord>, BaselineError>
where
    F: FnMut(&DesignGraph) -> Result<f64, String>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = RecordLog::new();
    let mut pop: Vec<(DesignGraph, f64)> = Vec::with_capacity(cfg.population);
    for _ in 0..cfg.population {
        let g = random_free_graph_with(&mut rng, cfg.n_terminals);
        let s = observe(&mut log, &mut objective, &g);
        pop.push((g, s));
    }
    let n_elite = cfg.elites();
    while log.evals() < cfg.budget {
        // stable sort keeps earlier individuals ahead on ties
        pop.sort_by(|a, b| b.1.total_cmp(&a.1));
        pop.truncate(n_elite);
        for _ in n_elite..cfg.population {
            if log.evals() >= cfg.budget {
                break;
            }
            let parent = &pop[rng.random_range(0..n_elite)].0;
            let (child, _) = mutate(parent, &cfg.mutation_weights, cfg.n_terminals, &mut rng);
            let s = observe(&mut log, &mut objective, &child);
            pop.push((child, s));
        }
    }
    Ok(log.into_records())
}
