use crate::grammar::DesignGraph;
use crate::nn::{GateInputs, GruInput, PreparedMessage, Tape, Var};
use crate::nn::Scalar;

use super::{check_terminal, GraphVae, VaeError};

/// Directed edges of a tree and, per node, the edges pointing into it.
struct EdgeIndex {
    edges: Vec<(usize, usize)>,
    incoming: Vec<Vec<usize>>,
}

impl EdgeIndex {
    fn new(g: &DesignGraph) -> Self {
        let n = g.len();
        let mut edges = Vec::with_capacity(2 * n.saturating_sub(1));
        let mut incoming = vec![Vec::new(); n];
        for c in 1..n {
            let p = g.parent(c).expect("non-root node has a parent");
            for (a, b) in [(p, c), (c, p)] {
                incoming[b].push(edges.len());
                edges.push((a, b));
            }
        }
        Self { edges, incoming }
    }
}

impl<T: Scalar> GraphVae<T> {
    /// Posterior mean and log-variance of `g`.
    pub fn encode(&self, tape: &mut Tape<'_, T>, g: &DesignGraph) -> Result<(Var, Var), VaeError> {
        check_terminal(self, g)?;
        let enc = &self.enc;
        let cell = &enc.gru;
        let n = g.len();
        let idx = EdgeIndex::new(g);
        let mut leaves: Vec<usize> = g.leaves();
        if self.config.root_readout && leaves[0] != 0 {
            leaves.insert(0, 0);
        }
        let root_col = self.config.n_types;
        let flag = self.config.root_flag;

        // Only messages that eventually reach a leaf representation are computed.
        let t_mp = enc.t_mp;
        let mut needed = vec![vec![false; idx.edges.len()]; t_mp + 1];
        for &l in &leaves {
            for &e in &idx.incoming[l] {
                needed[t_mp][e] = true;
            }
        }
        for t in (1..t_mp).rev() {
            for e in 0..idx.edges.len() {
                if !needed[t + 1][e] {
                    continue;
                }
                let (i, j) = idx.edges[e];
                for &k in &idx.incoming[i] {
                    if idx.edges[k].0 != j {
                        needed[t][k] = true;
                    }
                }
            }
        }

        let mut gates: Vec<Option<GateInputs>> = vec![None; n];
        let mut gate = |tape: &mut Tape<'_, T>, i: usize| -> Result<GateInputs, VaeError> {
            if let Some(x) = gates[i] {
                return Ok(x);
            }
            let ty = usize::from(g.node_type(i));
            let x = if flag && i == 0 {
                cell.gate_inputs_hot(tape, &[ty, root_col])?
            } else {
                cell.gate_inputs(tape, GruInput::OneHot(ty))?
            };
            gates[i] = Some(x);
            Ok(x)
        };

        let mut msgs: Vec<Option<Var>> = vec![None; idx.edges.len()];
        for t in 1..=t_mp {
            let mut prepared: Vec<Option<PreparedMessage>> = vec![None; idx.edges.len()];
            let mut next = vec![None; idx.edges.len()];
            for e in 0..idx.edges.len() {
                if !needed[t][e] {
                    continue;
                }
                let (i, j) = idx.edges[e];
                let mut inputs = Vec::new();
                for &k in &idx.incoming[i] {
                    if idx.edges[k].0 == j {
                        continue;
                    }
                    if let Some(m) = msgs[k] {
                        let pm = match prepared[k] {
                            Some(pm) => pm,
                            None => {
                                let pm = cell.prepare(tape, m)?;
                                prepared[k] = Some(pm);
                                pm
                            }
                        };
                        inputs.push(pm);
                    }
                }
                let gi = gate(tape, i)?;
                next[e] = Some(cell.step(tape, &gi, &inputs)?);
            }
            msgs = next;
        }

        let mut reps = Vec::with_capacity(leaves.len());
        for &l in &leaves {
            let mut wx = tape.column(enc.w_e, usize::from(g.node_type(l)))?;
            if flag && l == 0 {
                let r = tape.column(enc.w_e, root_col)?;
                wx = tape.add(wx, r)?;
            }
            let inc: Vec<Var> = idx.incoming[l].iter().filter_map(|&e| msgs[e]).collect();
            let pre = if inc.is_empty() {
                wx
            } else {
                let s = if inc.len() == 1 { inc[0] } else { tape.sum(&inc)? };
                let us = tape.matvec(enc.u_e, s)?;
                tape.add(wx, us)?
            };
            reps.push(tape.relu(pre)?);
        }
        let h_g = if reps.len() == 1 { reps[0] } else { tape.sum(&reps)? };
        let mu = tape.affine(enc.mu_w, enc.mu_b, h_g)?;
        let logvar = tape.affine(enc.logvar_w, enc.logvar_b, h_g)?;
        Ok((mu, logvar))
    }

    /// Posterior mean as plain numbers.
    pub fn encode_mean(&self, g: &DesignGraph) -> Result<Vec<T>, VaeError> {
        let mut tape = Tape::new(&self.params);
        let (mu, _) = self.encode(&mut tape, g)?;
        Ok(tape.value(mu).to_vec())
    }
}
