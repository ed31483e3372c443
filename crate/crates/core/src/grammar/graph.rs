//! Rooted design trees.
//!
//! A [`DesignGraph`] is an acyclic rooted tree whose nodes carry component
//! type ids. The root always lives at index 0. Child lists are ordered; the
//! order matters for layout and for the decoder's traversal, which is why
//! most consumers work on [`DesignGraph::canonicalize`]d graphs.

use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use super::GrammarError;

/// Component type id. Terminal ids are dense from zero, nonterminals follow.
pub type TypeId = u16;

/// Upper bound on the number of nodes of any design.
pub const MAX_NODES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DesignGraph {
    nodes: Vec<TypeId>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
}

/// Line format used for datasets, result files and the evaluator protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub nodes: Vec<TypeId>,
    pub parent: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contacts: Option<Vec<[f64; 2]>>,
}

impl DesignGraph {
    /// A graph made of a single root node.
    pub fn single(ty: TypeId) -> Self {
        Self {
            nodes: vec![ty],
            parent: vec![None],
            children: vec![Vec::new()],
        }
    }

    /// Builds a graph from a node list and a parent array (`-1` for the root).
    ///
    /// The root must be node 0; children are ordered by ascending index.
    pub fn from_parts(nodes: &[TypeId], parent: &[i64]) -> Result<Self, GrammarError> {
        let n = nodes.len();
        if n == 0 {
            return Err(GrammarError::InvalidGraph("empty graph".into()));
        }
        if n > MAX_NODES {
            return Err(GrammarError::InvalidGraph(format!(
                "{n} nodes exceeds the limit of {MAX_NODES}"
            )));
        }
        if parent.len() != n {
            return Err(GrammarError::InvalidGraph(format!(
                "{} parents for {n} nodes",
                parent.len()
            )));
        }
        if parent[0] != -1 {
            return Err(GrammarError::InvalidGraph("node 0 must be the root".into()));
        }
        let mut par = vec![None; n];
        let mut children = vec![Vec::new(); n];
        for (i, &p) in parent.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= n || p as usize == i {
                return Err(GrammarError::InvalidGraph(format!(
                    "node {i} has invalid parent {p}"
                )));
            }
            par[i] = Some(p as usize);
            children[p as usize].push(i);
        }
        // every node must reach the root within n hops
        for start in 0..n {
            let mut cur = start;
            let mut hops = 0;
            while let Some(p) = par[cur] {
                cur = p;
                hops += 1;
                if hops > n {
                    return Err(GrammarError::InvalidGraph("cycle in parent array".into()));
                }
            }
        }
        Ok(Self {
            nodes: nodes.to_vec(),
            parent: par,
            children,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_type(&self, i: usize) -> TypeId {
        self.nodes[i]
    }

    pub fn node_types(&self) -> &[TypeId] {
        &self.nodes
    }

    pub fn set_node_type(&mut self, i: usize, ty: TypeId) {
        self.nodes[i] = ty;
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// Parent (if any) followed by the children, in order.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.parent[i].into_iter().chain(self.children[i].iter().copied())
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.children[i].is_empty()
    }

    /// Nodes without children. A single-node graph has its root as the only leaf.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    /// Appends a new leaf under `parent` and returns its index.
    pub fn add_child(&mut self, parent: usize, ty: TypeId) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(ty);
        self.parent.push(Some(parent));
        self.children.push(Vec::new());
        self.children[parent].push(idx);
        idx
    }

    /// Inserts a new leaf under `parent` at position `pos` of its child list.
    pub(crate) fn insert_child(&mut self, parent: usize, pos: usize, ty: TypeId) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(ty);
        self.parent.push(Some(parent));
        self.children.push(Vec::new());
        self.children[parent].insert(pos, idx);
        idx
    }

    /// Detaches and returns the children of `node`; they stay orphaned until
    /// reparented.
    pub(crate) fn take_children(&mut self, node: usize) -> Vec<usize> {
        let kids = std::mem::take(&mut self.children[node]);
        for &k in &kids {
            self.parent[k] = None;
        }
        kids
    }

    /// Moves the subtree at `node` under `new_parent` (appended last).
    pub(crate) fn reparent(&mut self, node: usize, new_parent: usize) {
        if let Some(old) = self.parent[node] {
            self.children[old].retain(|&c| c != node);
        }
        self.parent[node] = Some(new_parent);
        self.children[new_parent].push(node);
    }

    /// Removes a non-root leaf, compacting indices.
    pub fn remove_leaf(&self, leaf: usize) -> Option<DesignGraph> {
        if leaf == 0 || !self.is_leaf(leaf) {
            return None;
        }
        let remap = |i: usize| if i > leaf { i - 1 } else { i };
        let mut nodes = Vec::with_capacity(self.len() - 1);
        let mut parent = Vec::with_capacity(self.len() - 1);
        for i in (0..self.len()).filter(|&i| i != leaf) {
            nodes.push(self.nodes[i]);
            parent.push(self.parent[i].map(remap));
        }
        let mut children = vec![Vec::new(); nodes.len()];
        for i in (0..self.len()).filter(|&i| i != leaf) {
            children[remap(i)] = self.children[i]
                .iter()
                .filter(|&&c| c != leaf)
                .map(|&c| remap(c))
                .collect();
        }
        Some(DesignGraph {
            nodes,
            parent,
            children,
        })
    }

    /// Depth-first preorder following child-list order.
    pub fn preorder(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.len());
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            order.push(i);
            stack.extend(self.children[i].iter().rev());
        }
        order
    }

    pub fn subtree_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![1usize; self.len()];
        for &i in self.preorder().iter().rev() {
            if let Some(p) = self.parent[i] {
                sizes[p] += sizes[i];
            }
        }
        sizes
    }

    /// Parent array in the `-1`-rooted wire convention.
    pub fn parent_array(&self) -> Vec<i64> {
        self.parent
            .iter()
            .map(|p| p.map_or(-1, |p| p as i64))
            .collect()
    }

    /// Canonical form: children sorted by (type asc, subtree size desc,
    /// recursive key), nodes renumbered in preorder. Isomorphic trees map to
    /// identical canonical graphs.
    pub fn canonicalize(&self) -> DesignGraph {
        let sizes = self.subtree_sizes();
        let mut keys: Vec<Vec<u32>> = vec![Vec::new(); self.len()];
        let mut sorted_children: Vec<Vec<usize>> = vec![Vec::new(); self.len()];
        for &i in self.preorder().iter().rev() {
            let mut kids = self.children[i].clone();
            kids.sort_by(|&a, &b| {
                (self.nodes[a], Reverse(sizes[a]), &keys[a])
                    .cmp(&(self.nodes[b], Reverse(sizes[b]), &keys[b]))
            });
            let mut key = vec![u32::from(self.nodes[i]), kids.len() as u32];
            for &k in &kids {
                key.extend_from_slice(&keys[k]);
            }
            keys[i] = key;
            sorted_children[i] = kids;
        }

        let mut out = DesignGraph::single(self.nodes[0]);
        let mut stack: Vec<(usize, usize)> = sorted_children[0]
            .iter()
            .rev()
            .map(|&c| (c, 0usize))
            .collect();
        while let Some((old, new_parent)) = stack.pop() {
            let new = out.add_child(new_parent, self.nodes[old]);
            stack.extend(sorted_children[old].iter().rev().map(|&c| (c, new)));
        }
        out
    }

    pub fn to_record(&self) -> DesignRecord {
        DesignRecord {
            nodes: self.nodes.clone(),
            parent: self.parent_array(),
            contacts: None,
        }
    }

    /// One-line JSON serialization: `{"nodes":[...],"parent":[...]}`.
    pub fn serialize(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("design record serializes")
    }

    pub fn deserialize(text: &str) -> Result<Self, GrammarError> {
        let rec: DesignRecord =
            serde_json::from_str(text.trim()).map_err(|e| GrammarError::Parse(e.to_string()))?;
        DesignGraph::try_from(&rec)
    }

    /// Serialization of the canonical form; equal for isomorphic trees.
    pub fn canonical_key(&self) -> String {
        self.canonicalize().serialize()
    }
}

impl TryFrom<&DesignRecord> for DesignGraph {
    type Error = GrammarError;

    fn try_from(rec: &DesignRecord) -> Result<Self, Self::Error> {
        DesignGraph::from_parts(&rec.nodes, &rec.parent)
    }
}
