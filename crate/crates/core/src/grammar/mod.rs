//! Design graphs and the graph grammar that generates them.

mod derive;
mod graph;
mod rules;

pub use derive::{
    applicable, apply_rule, random_derivation, random_free_graph, random_free_graph_with, replay,
    DerivationTrace, MAX_STEPS,
};
pub use graph::{DesignGraph, DesignRecord, TypeId, MAX_NODES};
pub use rules::{ComponentClass, Geometry, Grammar, GrammarRule, NodeType, SymbolKind};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),
    #[error("rule expects symbol {expected} but node has symbol {found}")]
    TypeMismatch { expected: TypeId, found: TypeId },
    #[error("rewrite would produce {nodes} nodes (limit {MAX_NODES})")]
    SizeExceeded { nodes: usize },
    #[error("a multi-root fragment cannot replace the graph root")]
    RootForest,
    #[error("derivation stuck at node {node}")]
    DerivationStuck { node: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
