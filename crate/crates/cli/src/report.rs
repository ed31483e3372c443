//! Best-so-far curves aggregated over seeds, and the latent-plane projection.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use glso_core::eval_env::Evaluator;
use glso_core::records::{best_curve, read_results_csv, EvalRecord};
use glso_core::vae::Sample;

use crate::commands::{load_grammar, load_model};
use crate::config::{required, ReportSection};
use crate::error::CliError;
use crate::stats::{median, pca};
use crate::ReportArgs;

/// Method name of a run given as `label=path` or a bare path.
pub fn run_label(spec: &str) -> (String, String) {
    if let Some((label, path)) = spec.split_once('=') {
        return (label.to_owned(), path.to_owned());
    }
    let stem = Path::new(spec)
        .file_stem()
        .map_or_else(|| spec.to_owned(), |s| s.to_string_lossy().into_owned());
    (strip_seed_suffix(&stem).to_owned(), spec.to_owned())
}

fn strip_seed_suffix(stem: &str) -> &str {
    let Some((head, tail)) = stem.rsplit_once('_') else {
        return stem;
    };
    let digits = tail.strip_prefix("seed").unwrap_or(tail);
    if !head.is_empty() && !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
        head
    } else {
        stem
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodCurve {
    pub method: String,
    pub seeds: usize,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Final best-so-far of each run, in input order.
    pub finals: Vec<f64>,
}

/// Groups runs by method (first appearance order) and aggregates their curves.
pub fn aggregate(runs: &[(String, Vec<EvalRecord>)], budget: usize) -> Vec<MethodCurve> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (label, records) in runs {
        if !groups.contains_key(label) {
            order.push(label.clone());
        }
        groups
            .entry(label.clone())
            .or_default()
            .push(best_curve(records, budget));
    }
    order
        .into_iter()
        .map(|method| {
            let curves = &groups[&method];
            let n = curves.len() as f64;
            let col = |k: usize| curves.iter().map(move |c| c[k]);
            MethodCurve {
                seeds: curves.len(),
                mean: (0..budget).map(|k| col(k).sum::<f64>() / n).collect(),
                min: (0..budget).map(|k| col(k).fold(f64::INFINITY, f64::min)).collect(),
                max: (0..budget).map(|k| col(k).fold(f64::NEG_INFINITY, f64::max)).collect(),
                finals: curves.iter().map(|c| c.last().copied().unwrap_or(f64::NAN)).collect(),
                method,
            }
        })
        .collect()
}

pub fn write_curves<W: Write>(curves: &[MethodCurve], mut w: W) -> std::io::Result<()> {
    writeln!(w, "method,evals,mean,min,max")?;
    for c in curves {
        for k in 0..c.mean.len() {
            writeln!(w, "{},{},{},{},{}", c.method, k + 1, c.mean[k], c.min[k], c.max[k])?;
        }
    }
    Ok(())
}

pub fn write_finals<W: Write>(curves: &[MethodCurve], mut w: W) -> std::io::Result<()> {
    writeln!(w, "method,seeds,median,mean,min,max")?;
    for c in curves {
        let n = c.finals.len() as f64;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            c.method,
            c.seeds,
            median(&c.finals),
            c.finals.iter().sum::<f64>() / n,
            c.finals.iter().copied().fold(f64::INFINITY, f64::min),
            c.finals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        )?;
    }
    Ok(())
}

pub fn run(a: &ReportArgs, f: &ReportSection) -> Result<(), CliError> {
    let out = required(a.out.clone(), f.out.clone(), "out")?;
    fs::create_dir_all(&out)?;
    if a.latent {
        return latent_projection(a, &out);
    }
    let specs = if a.runs.is_empty() {
        f.runs.clone().unwrap_or_default()
    } else {
        a.runs.clone()
    };
    if specs.is_empty() {
        return Err(CliError::Usage("--runs needs at least one result file".into()));
    }
    let mut runs = Vec::with_capacity(specs.len());
    for spec in &specs {
        let (label, path) = run_label(spec);
        let records = read_results_csv(BufReader::new(File::open(&path)?))?;
        if records.is_empty() {
            return Err(CliError::Data(format!("{path} has no records")));
        }
        runs.push((label, records));
    }
    let budget = a.budget.or(f.budget).unwrap_or_else(|| {
        runs.iter()
            .map(|(_, r)| r.last().map_or(0, |r| r.evals))
            .max()
            .unwrap_or(0)
    });
    let curves = aggregate(&runs, budget);
    let mut w = BufWriter::new(File::create(out.join("curves.csv"))?);
    write_curves(&curves, &mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(out.join("final.csv"))?);
    write_finals(&curves, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Rows of (pc1, pc2, score) for the first `limit` designs of a dataset.
pub fn latent_rows(
    model: &glso_core::vae::GraphVae<f32>,
    samples: &[Sample],
    evaluator: &Evaluator,
) -> Result<Vec<[f64; 3]>, CliError> {
    let mut points = Vec::with_capacity(samples.len());
    let mut scores = Vec::with_capacity(samples.len());
    for s in samples {
        let mu = model.encode_mean(&s.graph)?;
        points.push(mu.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>());
        scores.push(evaluator.evaluate(&s.graph)?.value);
    }
    let p = pca(&points, 2);
    Ok(points
        .iter()
        .zip(scores)
        .map(|(x, s)| {
            let y = p.project(x);
            [y[0], y.get(1).copied().unwrap_or(0.0), s]
        })
        .collect())
}

fn latent_projection(a: &ReportArgs, out: &Path) -> Result<(), CliError> {
    let grammar = load_grammar(a.grammar.as_deref())?;
    let model_path = a.model.as_ref().ok_or_else(|| CliError::Usage("--model is required".into()))?;
    let data_path = a.data.as_ref().ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let model = load_model(model_path, &grammar)?;
    let mut samples = Sample::read_jsonl(BufReader::new(File::open(data_path)?), &grammar)?;
    samples.truncate(a.limit.unwrap_or(500));
    let task = a.task.as_deref().unwrap_or("flat");
    let kind = task.parse().map_err(CliError::Usage)?;
    let ev = Evaluator::surrogate(grammar, kind);
    let rows = latent_rows(&model, &samples, &ev)?;
    let mut w = BufWriter::new(File::create(out.join("latent.csv"))?);
    writeln!(w, "pc1,pc2,score")?;
    for [x, y, s] in rows {
        writeln!(w, "{x},{y},{s}")?;
    }
    w.flush()?;
    Ok(())
}
