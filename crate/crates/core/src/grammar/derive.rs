//! Rule application and random derivations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{DesignGraph, TypeId, MAX_NODES};
use super::rules::{Grammar, GrammarRule};
use super::GrammarError;

/// Maximum number of rewrites in one derivation.
pub const MAX_STEPS: usize = 40;

/// Seed plus the ordered (node index, rule id) rewrites of a derivation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationTrace {
    pub seed: u64,
    pub steps: Vec<(usize, usize)>,
}

/// Rewrites `node` with `rule`.
///
/// The rule's `attach_root` symbol replaces the node in place, extra fragment
/// roots are inserted as its following siblings, and the node's former
/// children are distributed round-robin over `attach_tail` (or kept under
/// the attach root when the tail is empty).
pub fn apply_rule(
    g: &DesignGraph,
    node: usize,
    rule: &GrammarRule,
) -> Result<DesignGraph, GrammarError> {
    if node >= g.len() {
        return Err(GrammarError::InvalidGraph(format!("no node {node}")));
    }
    let found = g.node_type(node);
    if found != rule.lhs {
        return Err(GrammarError::TypeMismatch {
            expected: rule.lhs,
            found,
        });
    }
    let new_len = g.len() - 1 + rule.rhs_nodes.len();
    if new_len > MAX_NODES {
        return Err(GrammarError::SizeExceeded { nodes: new_len });
    }
    let parent = g.parent(node);
    if rule.is_forest() && parent.is_none() {
        return Err(GrammarError::RootForest);
    }

    let mut out = g.clone();
    let former_children = out.take_children(node);
    out.set_node_type(node, rule.rhs_nodes[rule.attach_root]);

    let mut index = vec![usize::MAX; rule.rhs_nodes.len()];
    index[rule.attach_root] = node;
    let mut sibling_pos = parent
        .map(|p| out.children(p).iter().position(|&c| c == node).unwrap() + 1)
        .unwrap_or(0);
    for (i, (&ty, &p)) in rule.rhs_nodes.iter().zip(&rule.rhs_parent).enumerate() {
        if i == rule.attach_root {
            continue;
        }
        index[i] = if p < 0 {
            let at = sibling_pos;
            sibling_pos += 1;
            out.insert_child(parent.expect("checked above"), at, ty)
        } else {
            out.add_child(index[p as usize], ty)
        };
    }

    for (k, child) in former_children.into_iter().enumerate() {
        let target = if rule.attach_tail.is_empty() {
            node
        } else {
            index[rule.attach_tail[k % rule.attach_tail.len()]]
        };
        out.reparent(child, target);
    }
    Ok(out)
}

/// All (node, rule id) pairs for which [`apply_rule`] succeeds, ordered by
/// node index then rule id.
pub fn applicable(g: &DesignGraph, grammar: &Grammar) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for node in 0..g.len() {
        let ty = g.node_type(node);
        if grammar.is_terminal(ty) {
            continue;
        }
        for (rid, rule) in grammar.rules().iter().enumerate() {
            if rule.lhs == ty
                && g.len() - 1 + rule.rhs_nodes.len() <= MAX_NODES
                && !(rule.is_forest() && g.parent(node).is_none())
            {
                out.push((node, rid));
            }
        }
    }
    out
}

/// Nodes and steps still needed to finish `pending` nonterminals cheaply.
fn completion_cost(grammar: &Grammar, pending: impl Iterator<Item = TypeId>) -> (usize, usize) {
    pending
        .filter(|&t| !grammar.is_terminal(t))
        .map(|t| grammar.completion(t))
        .fold((0, 0), |(n, s), c| (n + c.nodes - 1, s + c.steps))
}

/// Random derivation from the start symbol.
///
/// Each step picks uniformly among the applicable pairs whose result can
/// still be completed within [`MAX_NODES`] and [`MAX_STEPS`] using the
/// cheapest expansion of every remaining nonterminal.
pub fn random_derivation(
    grammar: &Grammar,
    seed: u64,
) -> Result<(DesignGraph, DerivationTrace), GrammarError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = DesignGraph::single(grammar.start());
    let mut trace = DerivationTrace {
        seed,
        steps: Vec::new(),
    };
    let start = grammar.completion(grammar.start());
    if start.nodes > MAX_NODES || start.steps > MAX_STEPS {
        return Err(GrammarError::DerivationStuck { node: 0 });
    }

    while let Some(first_nt) = (0..g.len()).find(|&i| !grammar.is_terminal(g.node_type(i))) {
        let candidates: Vec<(usize, usize)> = applicable(&g, grammar)
            .into_iter()
            .filter(|&(node, rid)| {
                let rule = &grammar.rules()[rid];
                let others = (0..g.len()).filter(|&i| i != node).map(|i| g.node_type(i));
                let (extra_nodes, extra_steps) =
                    completion_cost(grammar, others.chain(rule.rhs_nodes.iter().copied()));
                let nodes = g.len() - 1 + rule.rhs_nodes.len() + extra_nodes;
                let steps = trace.steps.len() + 1 + extra_steps;
                nodes <= MAX_NODES && steps <= MAX_STEPS
            })
            .collect();
        if candidates.is_empty() {
            return Err(GrammarError::DerivationStuck { node: first_nt });
        }
        let (node, rid) = candidates[rng.random_range(0..candidates.len())];
        g = apply_rule(&g, node, &grammar.rules()[rid])?;
        trace.steps.push((node, rid));
    }
    Ok((g, trace))
}

/// Re-applies a recorded derivation.
pub fn replay(grammar: &Grammar, trace: &DerivationTrace) -> Result<DesignGraph, GrammarError> {
    let mut g = DesignGraph::single(grammar.start());
    for &(node, rid) in &trace.steps {
        let rule = grammar
            .rules()
            .get(rid)
            .ok_or_else(|| GrammarError::InvalidGrammar(format!("no rule {rid}")))?;
        g = apply_rule(&g, node, rule)?;
    }
    Ok(g)
}

/// Grammar-free random tree: node count uniform in `1..=MAX_NODES`, each
/// node `i > 0` hangs under a uniform parent in `0..i`, labels uniform over
/// the terminal types.
pub fn random_free_graph(seed: u64, n_terminals: usize) -> DesignGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_free_graph_with(&mut rng, n_terminals)
}

pub fn random_free_graph_with<R: Rng>(rng: &mut R, n_terminals: usize) -> DesignGraph {
    let n = rng.random_range(1..=MAX_NODES);
    let mut g = DesignGraph::single(rng.random_range(0..n_terminals) as TypeId);
    for i in 1..n {
        let p = rng.random_range(0..i);
        g.add_child(p, rng.random_range(0..n_terminals) as TypeId);
    }
    g
}
