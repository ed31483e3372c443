//! Component library and rewrite rules.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::{DesignGraph, TypeId, MAX_NODES};
use super::GrammarError;

const DEFAULT_GRAMMAR: &str = include_str!("../../data/default_grammar.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolKind {
    Terminal,
    Nonterminal,
}

/// Role a component plays in the kinematic layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentClass {
    Body,
    #[default]
    Limb,
    Joint,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Geometry {
    /// meters
    pub length: f64,
    /// kilograms
    pub mass: f64,
    #[serde(default)]
    pub joint_power: f64,
    /// radians
    #[serde(default)]
    pub bend_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeType {
    pub id: TypeId,
    pub name: String,
    pub kind: SymbolKind,
    #[serde(default)]
    pub class: ComponentClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Geometry>,
}

/// Rewrites a nonterminal into a small forest of symbols.
///
/// `rhs_parent[i]` is `-1` for fragment roots, otherwise an index `< i`.
/// The `attach_root` node takes the place of the rewritten node; further
/// fragment roots become its following siblings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarRule {
    pub lhs: TypeId,
    pub rhs_nodes: Vec<TypeId>,
    pub rhs_parent: Vec<i64>,
    pub attach_root: usize,
    #[serde(default)]
    pub attach_tail: Vec<usize>,
}

impl GrammarRule {
    pub fn is_forest(&self) -> bool {
        self.rhs_parent.iter().filter(|&&p| p < 0).count() > 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GrammarFile {
    node_types: Vec<NodeType>,
    rules: Vec<GrammarRule>,
    start: TypeId,
}

/// Cost of the cheapest full expansion of a symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct Completion {
    pub nodes: usize,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct Grammar {
    file: GrammarFile,
    n_terminals: usize,
    completion: Vec<Completion>,
}

impl Grammar {
    /// The bundled legged-robot ruleset.
    pub fn default_ruleset() -> Self {
        Self::from_json(DEFAULT_GRAMMAR).expect("bundled grammar is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GrammarError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, GrammarError> {
        let file: GrammarFile =
            serde_json::from_str(text).map_err(|e| GrammarError::Parse(e.to_string()))?;
        Self::validate(file)
    }

    fn validate(file: GrammarFile) -> Result<Self, GrammarError> {
        let invalid = |msg: String| Err(GrammarError::InvalidGrammar(msg));
        let types = &file.node_types;
        if types.is_empty() {
            return invalid("no node types".into());
        }
        let mut names = HashSet::new();
        let mut n_terminals = 0;
        for (i, t) in types.iter().enumerate() {
            if usize::from(t.id) != i {
                return invalid(format!("node type ids must be dense; found {} at {i}", t.id));
            }
            if !names.insert(t.name.as_str()) {
                return invalid(format!("duplicate node type name {}", t.name));
            }
            match t.kind {
                SymbolKind::Terminal => {
                    if n_terminals != i {
                        return invalid("terminals must precede nonterminals".into());
                    }
                    n_terminals += 1;
                    let Some(g) = t.geometry else {
                        return invalid(format!("terminal {} has no geometry", t.name));
                    };
                    let finite = [g.length, g.mass, g.joint_power, g.bend_angle]
                        .iter()
                        .all(|v| v.is_finite());
                    if !finite || g.length <= 0.0 || g.mass <= 0.0 || g.joint_power < 0.0 {
                        return invalid(format!("terminal {} has bad geometry", t.name));
                    }
                }
                SymbolKind::Nonterminal => {}
            }
        }
        if n_terminals == 0 {
            return invalid("no terminal types".into());
        }
        let n_types = types.len();
        let is_nonterminal = |id: TypeId| usize::from(id) >= n_terminals && usize::from(id) < n_types;
        if !is_nonterminal(file.start) {
            return invalid("start symbol must be a nonterminal".into());
        }
        for (r, rule) in file.rules.iter().enumerate() {
            if !is_nonterminal(rule.lhs) {
                return invalid(format!("rule {r}: lhs is not a nonterminal"));
            }
            let k = rule.rhs_nodes.len();
            if k == 0 || rule.rhs_parent.len() != k {
                return invalid(format!("rule {r}: malformed rhs"));
            }
            if rule.rhs_nodes.iter().any(|&t| usize::from(t) >= n_types) {
                return invalid(format!("rule {r}: unknown rhs symbol"));
            }
            for (i, &p) in rule.rhs_parent.iter().enumerate() {
                if p >= i as i64 || p < -1 {
                    return invalid(format!("rule {r}: rhs parent {p} at {i} must be -1 or precede it"));
                }
            }
            if rule.attach_root >= k || rule.rhs_parent[rule.attach_root] != -1 {
                return invalid(format!("rule {r}: attach_root must be a fragment root"));
            }
            if rule.attach_tail.iter().any(|&t| t >= k) {
                return invalid(format!("rule {r}: attach_tail out of range"));
            }
        }
        for id in n_terminals..n_types {
            if !file.rules.iter().any(|r| usize::from(r.lhs) == id) {
                return invalid(format!("nonterminal {} has no rule", types[id].name));
            }
        }

        let completion = cheapest_completions(&file, n_terminals)?;
        Ok(Self {
            file,
            n_terminals,
            completion,
        })
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.file.node_types
    }

    pub fn node_type(&self, id: TypeId) -> &NodeType {
        &self.file.node_types[usize::from(id)]
    }

    pub fn rules(&self) -> &[GrammarRule] {
        &self.file.rules
    }

    pub fn start(&self) -> TypeId {
        self.file.start
    }

    pub fn n_terminals(&self) -> usize {
        self.n_terminals
    }

    pub fn is_terminal(&self, id: TypeId) -> bool {
        usize::from(id) < self.n_terminals
    }

    /// Geometry of a terminal id. Panics on nonterminals.
    pub fn geometry(&self, id: TypeId) -> Geometry {
        self.node_type(id)
            .geometry
            .unwrap_or_else(|| panic!("type {id} has no geometry"))
    }

    pub fn class(&self, id: TypeId) -> ComponentClass {
        self.node_type(id).class
    }

    pub fn type_id(&self, name: &str) -> Option<TypeId> {
        self.file
            .node_types
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.id)
    }

    pub fn is_terminal_complete(&self, g: &DesignGraph) -> bool {
        g.node_types().iter().all(|&t| self.is_terminal(t))
    }

    pub(crate) fn completion(&self, id: TypeId) -> Completion {
        self.completion[usize::from(id)]
    }

    /// Whether a rule introduces no nonterminals.
    pub fn is_terminating(&self, rule: &GrammarRule) -> bool {
        rule.rhs_nodes.iter().all(|&t| self.is_terminal(t))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("grammar serializes")
    }

    /// SHA-256 over the normalized JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(&self.file).expect("grammar serializes");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }
}

/// Per-symbol (nodes, steps) of the cheapest expansion, lexicographic.
fn cheapest_completions(
    file: &GrammarFile,
    n_terminals: usize,
) -> Result<Vec<Completion>, GrammarError> {
    let n = file.node_types.len();
    let mut best: Vec<Option<Completion>> = (0..n)
        .map(|i| (i < n_terminals).then_some(Completion { nodes: 1, steps: 0 }))
        .collect();
    loop {
        let mut changed = false;
        for rule in &file.rules {
            let mut cost = Completion { nodes: 0, steps: 1 };
            let mut known = true;
            for &t in &rule.rhs_nodes {
                match best[usize::from(t)] {
                    Some(c) => {
                        cost.nodes += c.nodes;
                        cost.steps += c.steps;
                    }
                    None => {
                        known = false;
                        break;
                    }
                }
            }
            let slot = &mut best[usize::from(rule.lhs)];
            if known && slot.is_none_or(|b| cost < b) {
                *slot = Some(cost);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    best.into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| {
                GrammarError::InvalidGrammar(format!(
                    "nonterminal {} can never derive a terminal graph",
                    file.node_types[i].name
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .and_then(|costs| {
            let start = costs[usize::from(file.start)];
            if start.nodes > MAX_NODES {
                Err(GrammarError::InvalidGrammar(format!(
                    "smallest derivation has {} nodes",
                    start.nodes
                )))
            } else {
                Ok(costs)
            }
        })
}
