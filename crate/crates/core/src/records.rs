//! Evaluation records shared by latent optimization and the baselines, and
//! their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

/// Score assigned when an objective fails.
pub const PENALTY: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    /// Proposal index, starting at 0.
    pub step: usize,
    /// Budget units consumed up to and including this record.
    pub evals: usize,
    pub z: Option<Vec<f64>>,
    /// Design serialization, when the point maps to a design.
    pub design: Option<String>,
    pub score: f64,
    pub best_so_far: f64,
    /// Score was served from the memo and consumed no budget.
    pub cached: bool,
    pub wall_ms: f64,
}

/// Append-only record list that tracks the running best.
#[derive(Debug, Default, Clone)]
pub struct RecordLog {
    records: Vec<EvalRecord>,
    evals: usize,
    best: Option<f64>,
}

impl RecordLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn evals(&self) -> usize {
        self.evals
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(
        &mut self,
        z: Option<Vec<f64>>,
        design: Option<String>,
        score: f64,
        cached: bool,
        wall_ms: f64,
    ) -> &EvalRecord {
        if !cached {
            self.evals += 1;
        }
        let best = self.best.map_or(score, |b| b.max(score));
        self.best = Some(best);
        self.records.push(EvalRecord {
            step: self.records.len(),
            evals: self.evals,
            z,
            design,
            score,
            best_so_far: best,
            cached,
            wall_ms,
        });
        self.records.last().unwrap()
    }

    pub fn records(&self) -> &[EvalRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EvalRecord> {
        self.records
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    step: usize,
    evals: usize,
    score: f64,
    best_so_far: f64,
    cached: bool,
    design: String,
    z: String,
}

/// Writes `step,evals,score,best_so_far,cached,design,z`; z is `;`-joined.
pub fn write_results_csv<W: Write>(records: &[EvalRecord], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(Row {
            step: r.step,
            evals: r.evals,
            score: r.score,
            best_so_far: r.best_so_far,
            cached: r.cached,
            design: r.design.clone().unwrap_or_default(),
            z: r
                .z
                .as_ref()
                .map(|z| z.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"))
                .unwrap_or_default(),
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(r: R) -> csv::Result<Vec<EvalRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row?;
        let z = if row.z.is_empty() {
            None
        } else {
            Some(
                row.z
                    .split(';')
                    .map(|v| v.parse::<f64>().unwrap_or(f64::NAN))
                    .collect(),
            )
        };
        out.push(EvalRecord {
            step: row.step,
            evals: row.evals,
            z,
            design: (!row.design.is_empty()).then_some(row.design),
            score: row.score,
            best_so_far: row.best_so_far,
            cached: row.cached,
            wall_ms: 0.0,
        });
    }
    Ok(out)
}

/// Sidecar with per-record wall times, kept apart so result files stay reproducible.
pub fn write_timing_csv<W: Write>(records: &[EvalRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,wall_ms")?;
    for r in records {
        writeln!(w, "{},{}", r.step, r.wall_ms)?;
    }
    Ok(())
}

/// Best-so-far after each budget unit `1..=budget`, carrying the last value forward.
pub fn best_curve(records: &[EvalRecord], budget: usize) -> Vec<f64> {
    let mut curve = vec![f64::NAN; budget];
    let mut best = f64::NAN;
    let mut next = 0;
    for r in records {
        best = r.best_so_far;
        while next < budget && next < r.evals {
            curve[next] = best;
            next += 1;
        }
    }
    for v in curve.iter_mut().skip(next) {
        *v = best;
    }
    curve
}
