//! Design objectives: a deterministic surrogate locomotion score per terrain,
//! and a line-delimited JSON protocol for delegating evaluation to an
//! external process.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{all_contacts, rest_pose};
use crate::grammar::{ComponentClass, DesignGraph, DesignRecord, Grammar};

/// Contacts beyond this count add nothing to the base score.
pub const CONTACT_CAP: usize = 6;
/// Timeout for one external evaluation.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("design contains nonterminal symbols")]
    NotTerminalComplete,
    #[error("evaluator did not answer within {0:?}")]
    EvaluatorTimeout(Duration),
    #[error("evaluator protocol error: {0}")]
    EvaluatorProtocolError(String),
    #[error("failed to run evaluator: {0}")]
    Spawn(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainKind {
    Flat,
    FrozenLake,
    Ridged,
    Wall,
}

impl TerrainKind {
    pub const ALL: [TerrainKind; 4] = [
        TerrainKind::Flat,
        TerrainKind::FrozenLake,
        TerrainKind::Ridged,
        TerrainKind::Wall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TerrainKind::Flat => "flat",
            TerrainKind::FrozenLake => "frozen_lake",
            TerrainKind::Ridged => "ridged",
            TerrainKind::Wall => "wall",
        }
    }
}

impl fmt::Display for TerrainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TerrainKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown terrain {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub kind: TerrainKind,
    pub friction: f64,
}

impl Terrain {
    pub fn new(kind: TerrainKind) -> Self {
        let friction = match kind {
            TerrainKind::FrozenLake => 0.05,
            _ => 0.9,
        };
        Self { kind, friction }
    }
}

impl From<TerrainKind> for Terrain {
    fn from(kind: TerrainKind) -> Self {
        Self::new(kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub value: f64,
    /// Named factors and inputs, in a fixed order.
    pub breakdown: Vec<(&'static str, f64)>,
}

impl Score {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.breakdown.iter().find(|(k, _)| *k == name).map(|&(_, v)| v)
    }
}

/// Structural quantities the surrogate is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignStats {
    pub contacts: usize,
    /// Summed power of joint components.
    pub power: f64,
    pub mass: f64,
    /// Share of mounted subtrees that have an isomorphic twin on the other side of the same body node.
    pub symmetry: f64,
    /// Contact extent along x, meters.
    pub span: f64,
    /// Mean over mounts of the longest root-to-leaf length, meters.
    pub limb_length: f64,
}

pub fn design_stats(g: &DesignGraph, grammar: &Grammar) -> Result<DesignStats, EvalError> {
    if !grammar.is_terminal_complete(g) {
        return Err(EvalError::NotTerminalComplete);
    }
    let g = g.canonicalize();
    let pose = rest_pose(&g, grammar).map_err(|_| EvalError::NotTerminalComplete)?;
    let contacts = all_contacts(&g, &pose);

    let mut power = 0.0;
    let mut mass = 0.0;
    for &ty in g.node_types() {
        let geo = grammar.geometry(ty);
        if grammar.class(ty) == ComponentClass::Joint {
            power += geo.joint_power;
        }
        mass += geo.mass;
    }

    let span = match (contacts.first(), contacts.last()) {
        (Some(a), Some(b)) => b[0] - a[0],
        _ => 0.0,
    };

    let sizes = g.subtree_sizes();
    // canonical preorder keeps every subtree contiguous
    let shape = |root: usize| -> Vec<(u16, i64)> {
        (root..root + sizes[root])
            .map(|i| {
                let p = if i == root { -1 } else { (g.parent(i).unwrap() - root) as i64 };
                (g.node_type(i), p)
            })
            .collect()
    };
    let mounts = &pose.mounts;
    let mut paired = vec![false; mounts.len()];
    for a in 0..mounts.len() {
        if paired[a] {
            continue;
        }
        let side_a = pose.positions[mounts[a].root][1] - pose.positions[mounts[a].body][1];
        for b in a + 1..mounts.len() {
            let side_b = pose.positions[mounts[b].root][1] - pose.positions[mounts[b].body][1];
            if !paired[b]
                && mounts[b].body == mounts[a].body
                && side_a * side_b < 0.0
                && shape(mounts[a].root) == shape(mounts[b].root)
            {
                paired[a] = true;
                paired[b] = true;
                break;
            }
        }
    }
    let symmetry = if mounts.is_empty() {
        0.0
    } else {
        paired.iter().filter(|&&p| p).count() as f64 / mounts.len() as f64
    };

    // longest path from each node down to a leaf, children come after parents
    let mut reach = vec![0.0f64; g.len()];
    for i in (0..g.len()).rev() {
        let below = g.children(i).iter().map(|&c| reach[c]).fold(0.0, f64::max);
        reach[i] = grammar.geometry(g.node_type(i)).length + below;
    }
    let limb_length = if mounts.is_empty() {
        0.0
    } else {
        mounts.iter().map(|m| reach[m.root]).sum::<f64>() / mounts.len() as f64
    };

    Ok(DesignStats {
        contacts: contacts.len(),
        power,
        mass,
        symmetry,
        span,
        limb_length,
    })
}

/// Surrogate locomotion score. Pure and invariant under child reordering.
pub fn evaluate_design(g: &DesignGraph, grammar: &Grammar, t: Terrain) -> Result<Score, EvalError> {
    let st = design_stats(g, grammar)?;
    Ok(score_from_stats(&st, t))
}

pub fn score_from_stats(st: &DesignStats, t: Terrain) -> Score {
    let contact_factor = st.contacts.min(CONTACT_CAP) as f64 / CONTACT_CAP as f64;
    let mass_factor = 1.0 / (1.0 + 0.05 * st.mass);
    let base = contact_factor * st.power * mass_factor;
    let mut breakdown = vec![
        ("contacts", st.contacts as f64),
        ("power", st.power),
        ("mass", st.mass),
        ("symmetry", st.symmetry),
        ("span", st.span),
        ("limb_length", st.limb_length),
        ("contact_factor", contact_factor),
        ("mass_factor", mass_factor),
        ("base", base),
    ];
    let terrain_factor = match t.kind {
        TerrainKind::Flat => 1.0,
        TerrainKind::FrozenLake => {
            let sym = 0.25 + 0.75 * st.symmetry;
            let grip = (t.friction * st.contacts as f64 / 0.2).min(1.0);
            breakdown.push(("symmetry_factor", sym));
            breakdown.push(("grip_factor", grip));
            sym * grip
        }
        TerrainKind::Ridged => {
            let clearance = (st.limb_length / 0.3).min(1.5);
            breakdown.push(("clearance_factor", clearance));
            clearance
        }
        TerrainKind::Wall => {
            let reach = (st.span / 0.4).min(1.25);
            let sym = 0.5 + 0.5 * st.symmetry;
            breakdown.push(("span_factor", reach));
            breakdown.push(("symmetry_factor", sym));
            reach * sym
        }
    };
    let stability = if st.contacts < 2 { 0.1 } else { 1.0 };
    breakdown.push(("terrain_factor", terrain_factor));
    breakdown.push(("stability_factor", stability));
    Score {
        value: base * terrain_factor * stability,
        breakdown,
    }
}

#[derive(Serialize)]
struct Request<'a> {
    #[serde(flatten)]
    design: &'a DesignRecord,
    terrain: TerrainKind,
}

#[derive(Deserialize)]
struct Response {
    score: f64,
}

/// Runs `cmd` (program and arguments) once, sends the design as one JSON line
/// on stdin and reads `{"score": x}` back from the first stdout line.
pub fn external_evaluate(
    g: &DesignGraph,
    t: Terrain,
    cmd: &[String],
    timeout: Duration,
) -> Result<Score, EvalError> {
    let (program, args) = cmd
        .split_first()
        .ok_or_else(|| EvalError::EvaluatorProtocolError("empty evaluator command".into()))?;
    let record = g.to_record();
    let line = serde_json::to_string(&Request {
        design: &record,
        terrain: t.kind,
    })
    .expect("request serializes");

    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");

    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reply = String::new();
        let res = BufReader::new(stdout).read_line(&mut reply).map(|_| reply);
        let _ = tx.send(res);
    });
    // a child that exits without reading surfaces as a broken pipe here; its reply decides
    let _ = writeln!(stdin, "{line}").and_then(|_| stdin.flush());
    drop(stdin);

    let reply = match rx.recv_timeout(timeout) {
        Ok(r) => r,
        Err(_) => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(EvalError::EvaluatorTimeout(timeout));
        }
    };
    let _ = child.wait();
    let reply = reply?;
    if reply.trim().is_empty() {
        return Err(EvalError::EvaluatorProtocolError("no response line".into()));
    }
    let resp: Response = serde_json::from_str(reply.trim())
        .map_err(|e| EvalError::EvaluatorProtocolError(format!("{e}: {}", reply.trim())))?;
    if !resp.score.is_finite() {
        return Err(EvalError::EvaluatorProtocolError("non-finite score".into()));
    }
    Ok(Score {
        value: resp.score,
        breakdown: vec![("external", resp.score)],
    })
}

/// Objective over designs, either the surrogate or an external command.
#[derive(Debug, Clone)]
pub enum Evaluator {
    Surrogate { grammar: Grammar, terrain: Terrain },
    External { cmd: Vec<String>, terrain: Terrain, timeout: Duration },
}

impl Evaluator {
    pub fn surrogate(grammar: Grammar, kind: TerrainKind) -> Self {
        Evaluator::Surrogate {
            grammar,
            terrain: Terrain::new(kind),
        }
    }

    pub fn evaluate(&self, g: &DesignGraph) -> Result<Score, EvalError> {
        match self {
            Evaluator::Surrogate { grammar, terrain } => evaluate_design(g, grammar, *terrain),
            Evaluator::External { cmd, terrain, timeout } => {
                external_evaluate(g, *terrain, cmd, *timeout)
            }
        }
    }
}
