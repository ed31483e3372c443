use std::collections::HashSet;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use glso_core::baselines::{ga_run, random_search, GaConfig};
use glso_core::eval_env::{Evaluator, Terrain, TerrainKind, DEFAULT_TIMEOUT};
use glso_core::features::{all_contacts, rest_pose};
use glso_core::grammar::{random_derivation, random_free_graph_with, DesignGraph, Grammar};
use glso_core::latent_opt::{bo_run, BoConfig};
use glso_core::records::{write_results_csv, write_timing_csv, EvalRecord};
use glso_core::vae::{
    load_checkpoint, save_checkpoint, train as train_vae, CheckpointHeader, EpochMetrics, GraphVae,
    Sample, TrainingConfig, VaeConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{required, BaselineSection, CollectSection, OptimizeSection, TrainSection};
use crate::error::CliError;
use crate::objective::DecodedObjective;
use crate::{BaselineArgs, CollectArgs, OptimizeArgs, TrainArgs};

/// `default` or a path to a grammar JSON file.
pub fn load_grammar(spec: Option<&str>) -> Result<Grammar, CliError> {
    match spec {
        None | Some("default") => Ok(Grammar::default_ruleset()),
        Some(path) => Ok(Grammar::load(path)?),
    }
}

/// `path` with `suffix` appended to its file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_task(task: &str) -> Result<TerrainKind, CliError> {
    task.parse().map_err(CliError::Usage)
}

fn evaluator(
    grammar: Grammar,
    task: &str,
    external: Option<&str>,
    timeout_secs: Option<u64>,
) -> Result<Evaluator, CliError> {
    let kind = parse_task(task)?;
    Ok(match external {
        None => Evaluator::surrogate(grammar, kind),
        Some(cmd) => {
            let cmd: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if cmd.is_empty() {
                return Err(CliError::Usage("--external needs a command".into()));
            }
            Evaluator::External {
                cmd,
                terrain: Terrain::new(kind),
                timeout: timeout_secs.map_or(DEFAULT_TIMEOUT, Duration::from_secs),
            }
        }
    })
}

fn write_results(out: &Path, records: &[EvalRecord]) -> Result<(), CliError> {
    write_results_csv(records, BufWriter::new(File::create(out)?))?;
    let mut w = BufWriter::new(File::create(sidecar(out, ".timing.csv"))?);
    write_timing_csv(records, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectStats {
    pub attempts: usize,
    pub unique: usize,
    pub mean_nodes: f64,
}

pub fn collect(a: &CollectArgs, f: &CollectSection) -> Result<CollectStats, CliError> {
    let grammar = load_grammar(a.grammar.as_deref().or(f.grammar.as_deref()))?;
    let out = required(a.out.clone(), f.out.clone(), "out")?;
    let seed = a.seed.or(f.seed).unwrap_or(0);
    let free = a.free_random || f.free_random.unwrap_or(false);
    let unique_target = a.unique.or(f.unique);
    let count = match (a.count.or(f.count), unique_target) {
        (_, Some(u)) => u.saturating_mul(100),
        (Some(c), None) => c,
        (None, None) => return Err(CliError::Usage("--count or --unique is required".into())),
    };
    let target = unique_target.unwrap_or(usize::MAX);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut w = BufWriter::new(File::create(&out)?);
    let mut attempts = 0;
    let mut nodes = 0usize;
    while attempts < count && seen.len() < target {
        attempts += 1;
        let g = if free {
            random_free_graph_with(&mut rng, grammar.n_terminals())
        } else {
            random_derivation(&grammar, rng.random())?.0
        };
        let g = g.canonicalize();
        if !seen.insert(g.canonical_key()) {
            continue;
        }
        let pose = rest_pose(&g, &grammar).map_err(|e| CliError::Data(e.to_string()))?;
        let mut rec = g.to_record();
        rec.contacts = Some(all_contacts(&g, &pose));
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
        nodes += g.len();
    }
    w.flush()?;
    let stats = CollectStats {
        attempts,
        unique: seen.len(),
        mean_nodes: nodes as f64 / seen.len().max(1) as f64,
    };
    eprintln!(
        "collect: {} attempts, {} unique ({:.1}% yield), mean {:.2} nodes",
        stats.attempts,
        stats.unique,
        100.0 * stats.unique as f64 / stats.attempts.max(1) as f64,
        stats.mean_nodes
    );
    if stats.unique < target && unique_target.is_some() {
        eprintln!("collect: stopped after {attempts} attempts short of {target} designs");
    }
    Ok(stats)
}

pub fn train(a: &TrainArgs, f: &TrainSection) -> Result<Vec<EpochMetrics>, CliError> {
    let grammar = load_grammar(a.grammar.as_deref().or(f.grammar.as_deref()))?;
    let data_path = required(a.data.clone(), f.data.clone(), "data")?;
    let out = required(a.out.clone(), f.out.clone(), "out")?;
    let seed = required(a.seed, f.seed, "seed")?;

    let defaults = TrainingConfig::default();
    let cfg = TrainingConfig {
        lambda: a.lambda.or(f.lambda).unwrap_or(defaults.lambda),
        beta_kl: a.beta.or(f.beta).unwrap_or(defaults.beta_kl),
        epochs: a.epochs.or(f.epochs).unwrap_or(defaults.epochs),
        batch_size: a.batch_size.or(f.batch_size).unwrap_or(defaults.batch_size),
        lr: a.lr.or(f.lr).unwrap_or(defaults.lr),
        final_lr_fraction: a
            .final_lr_fraction
            .or(f.final_lr_fraction)
            .unwrap_or(defaults.final_lr_fraction),
        seed,
        ..defaults
    };
    if cfg.epochs == 0
        || cfg.batch_size == 0
        || !(cfg.lambda >= 0.0)
        || !(cfg.lr > 0.0)
        || !(0.0..=1.0).contains(&cfg.final_lr_fraction)
    {
        return Err(CliError::Usage(
            "epochs, batch size and lr must be positive, lambda non-negative, final lr fraction in [0, 1]".into(),
        ));
    }
    let mut vc = VaeConfig::new(grammar.n_terminals());
    if let Some(d) = a.latent_dim.or(f.latent_dim) {
        vc.d_latent = d;
    }
    if let Some(h) = a.hidden.or(f.hidden) {
        vc.d_hidden = h;
    }
    if let Some(t) = a.t_mp.or(f.t_mp) {
        vc.t_mp = t;
    }
    if vc.d_latent == 0 || vc.d_hidden == 0 {
        return Err(CliError::Usage("latent and hidden sizes must be positive".into()));
    }

    let data = Sample::read_jsonl(BufReader::new(File::open(&data_path)?), &grammar)?;
    let mut model: GraphVae<f32> = GraphVae::new(vc, seed);
    let t0 = Instant::now();
    let mut timing = Vec::new();
    let quiet = a.quiet;
    let rows = train_vae(&mut model, &data, &cfg, |r| {
        let secs = t0.elapsed().as_secs_f64();
        timing.push((r.epoch, secs));
        if !quiet {
            eprintln!(
                "epoch {}: l_d {:.4} l_kl {:.4} l_ppn {:.4} recon {:.3} ({secs:.1}s)",
                r.epoch, r.l_d, r.l_kl, r.l_ppn, r.recon_rate
            );
        }
    })?;

    let header = CheckpointHeader {
        d_latent: vc.d_latent,
        t_mp: vc.t_mp,
        grammar_hash: grammar.hash(),
        model: vc,
        training: Some(cfg),
    };
    save_checkpoint(&out, &model, &header)?;
    let mut w = BufWriter::new(File::create(sidecar(&out, ".metrics.csv"))?);
    EpochMetrics::write_csv(&rows, &mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(sidecar(&out, ".timing.csv"))?);
    writeln!(w, "epoch,elapsed_s")?;
    for (e, s) in timing {
        writeln!(w, "{e},{s}")?;
    }
    w.flush()?;
    Ok(rows)
}

/// Loads a checkpoint and checks it was trained with `grammar`.
pub fn load_model(path: &Path, grammar: &Grammar) -> Result<GraphVae<f32>, CliError> {
    let (model, header) = load_checkpoint(path)?;
    if header.grammar_hash != grammar.hash() {
        return Err(CliError::Data(format!(
            "{} was trained with a different grammar",
            path.display()
        )));
    }
    Ok(model)
}

pub fn optimize(a: &OptimizeArgs, f: &OptimizeSection) -> Result<Vec<EvalRecord>, CliError> {
    let grammar = load_grammar(a.grammar.as_deref().or(f.grammar.as_deref()))?;
    let model_path = required(a.model.clone(), f.model.clone(), "model")?;
    let task = required(a.task.clone(), f.task.clone(), "task")?;
    let out = required(a.out.clone(), f.out.clone(), "out")?;
    let seed = required(a.seed, f.seed, "seed")?;
    let defaults = BoConfig::default();
    let cfg = BoConfig {
        budget: a.budget.or(f.budget).unwrap_or(defaults.budget),
        n_init: a.n_init.or(f.n_init).unwrap_or(defaults.n_init),
        candidates: a.candidates.or(f.candidates).unwrap_or(defaults.candidates),
        seed,
        ..defaults
    };
    let ev = evaluator(
        grammar.clone(),
        &task,
        a.external.as_deref().or(f.external.as_deref()),
        a.timeout_secs.or(f.timeout_secs),
    )?;
    let model = load_model(&model_path, &grammar)?;
    let dim = model.config.d_latent;
    let mut objective = DecodedObjective::new(model, ev);
    let records = bo_run(&mut objective, dim, &cfg)?;
    write_results(&out, &records)?;
    Ok(records)
}

pub fn baseline(a: &BaselineArgs, f: &BaselineSection) -> Result<Vec<EvalRecord>, CliError> {
    let grammar = load_grammar(a.grammar.as_deref().or(f.grammar.as_deref()))?;
    let algo = required(a.algo.clone(), f.algo.clone(), "algo")?;
    let task = required(a.task.clone(), f.task.clone(), "task")?;
    let out = required(a.out.clone(), f.out.clone(), "out")?;
    let seed = required(a.seed, f.seed, "seed")?;
    let budget = a.budget.or(f.budget).unwrap_or(500);
    let ev = evaluator(
        grammar.clone(),
        &task,
        a.external.as_deref().or(f.external.as_deref()),
        a.timeout_secs.or(f.timeout_secs),
    )?;
    let objective = |g: &DesignGraph| ev.evaluate(g).map(|s| s.value).map_err(|e| e.to_string());
    let records = match algo.as_str() {
        "random" => random_search(&grammar, objective, budget, seed)?,
        "ga" => {
            let mut cfg = GaConfig {
                seed,
                budget,
                n_terminals: grammar.n_terminals(),
                ..GaConfig::default()
            };
            if let Some(p) = a.population.or(f.population) {
                cfg.population = p;
            }
            ga_run(objective, &cfg)?
        }
        other => return Err(CliError::Usage(format!("unknown algorithm {other:?}; use random or ga"))),
    };
    write_results(&out, &records)?;
    Ok(records)
}
