use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grammar::{DesignGraph, TypeId, MAX_NODES};
use crate::nn::{GateInputs, GruInput, PreparedMessage, Scalar, Tape, Var};

use super::{check_terminal, GraphVae, VaeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// Expand iff `p > 0.5`; argmax label with ties to the lowest id.
    Deterministic,
    /// Sample both decisions from a stream seeded with `seed`.
    Stochastic { seed: u64 },
}

/// Teacher-forced decoder losses.
#[derive(Debug, Clone, Copy)]
pub struct DecodeLoss {
    /// Expand/stop cross-entropies plus child-label cross-entropies.
    pub l_d: Var,
    /// Cross-entropy of the root label, predicted from `z` alone.
    pub l_root: Var,
    pub decisions: usize,
}

#[derive(Clone, Copy)]
struct Msg {
    var: Var,
    prep: Option<PreparedMessage>,
}

/// Partial tree plus the message state of one decoding pass.
struct Walk<'m, T> {
    model: &'m GraphVae<T>,
    /// `W2_c z + b_c`
    zc: Var,
    /// `W1_l z + b_l`
    zl: Var,
    types: Vec<usize>,
    kids: Vec<Vec<usize>>,
    down: Vec<Option<Msg>>,
    up: Vec<Option<Msg>>,
    gates: Vec<Option<GateInputs>>,
    base: Vec<Option<Var>>,
}

impl<'m, T: Scalar> Walk<'m, T> {
    fn new(model: &'m GraphVae<T>, tape: &mut Tape<'_, T>, z: Var) -> Result<Self, VaeError> {
        let d = &model.dec;
        let zc = tape.affine(d.w2_c, d.b_c, z)?;
        let zl = tape.affine(d.w1_l, d.b_l, z)?;
        Ok(Self {
            model,
            zc,
            zl,
            types: Vec::with_capacity(MAX_NODES),
            kids: Vec::with_capacity(MAX_NODES),
            down: Vec::with_capacity(MAX_NODES),
            up: Vec::with_capacity(MAX_NODES),
            gates: Vec::with_capacity(MAX_NODES),
            base: Vec::with_capacity(MAX_NODES),
        })
    }

    fn len(&self) -> usize {
        self.types.len()
    }

    fn add_node(&mut self, parent: Option<(usize, Var)>, ty: usize) -> usize {
        let i = self.types.len();
        self.types.push(ty);
        self.kids.push(Vec::new());
        self.up.push(None);
        self.gates.push(None);
        self.base.push(None);
        match parent {
            Some((p, h)) => {
                self.kids[p].push(i);
                self.down.push(Some(Msg { var: h, prep: None }));
            }
            None => self.down.push(None),
        }
        i
    }

    fn gate(&mut self, tape: &mut Tape<'_, T>, i: usize) -> Result<GateInputs, VaeError> {
        if let Some(g) = self.gates[i] {
            return Ok(g);
        }
        let g = self
            .model
            .dec
            .gru
            .gate_inputs(tape, GruInput::OneHot(self.types[i]))?;
        self.gates[i] = Some(g);
        Ok(g)
    }

    fn prepared(
        &self,
        tape: &mut Tape<'_, T>,
        slot: &mut Option<Msg>,
    ) -> Result<Option<PreparedMessage>, VaeError> {
        let Some(m) = slot else { return Ok(None) };
        if m.prep.is_none() {
            m.prep = Some(self.model.dec.gru.prepare(tape, m.var)?);
        }
        Ok(m.prep)
    }

    /// Messages currently flowing into `i` from its parent and finished children.
    fn inward(&self, i: usize, with_parent: bool) -> Vec<Var> {
        let mut v = Vec::new();
        if with_parent {
            v.extend(self.down[i].map(|m| m.var));
        }
        v.extend(self.kids[i].iter().filter_map(|&c| self.up[c].map(|m| m.var)));
        v
    }

    fn expand_prob(&mut self, tape: &mut Tape<'_, T>, i: usize) -> Result<Var, VaeError> {
        let d = &self.model.dec;
        let base = match self.base[i] {
            Some(b) => b,
            None => {
                let wx = tape.column(d.w1_c, self.types[i])?;
                let b = tape.add(wx, self.zc)?;
                self.base[i] = Some(b);
                b
            }
        };
        let inward = self.inward(i, true);
        let pre = if inward.is_empty() {
            base
        } else {
            let s = if inward.len() == 1 {
                inward[0]
            } else {
                tape.sum(&inward)?
            };
            let w3 = tape.matvec(d.w3_c, s)?;
            tape.add(base, w3)?
        };
        let hidden = tape.relu(pre)?;
        let u = tape.param(d.u_c)?;
        let logit = tape.dot(u, hidden)?;
        Ok(tape.sigmoid(logit)?)
    }

    /// GRU message from `i` over `inputs` (already excluding the receiver).
    fn message(
        &mut self,
        tape: &mut Tape<'_, T>,
        i: usize,
        with_parent: bool,
    ) -> Result<Var, VaeError> {
        let gi = self.gate(tape, i)?;
        let mut prepared = Vec::new();
        if with_parent {
            let mut slot = self.down[i];
            if let Some(p) = self.prepared(tape, &mut slot)? {
                prepared.push(p);
            }
            self.down[i] = slot;
        }
        for k in 0..self.kids[i].len() {
            let c = self.kids[i][k];
            let mut slot = self.up[c];
            if let Some(p) = self.prepared(tape, &mut slot)? {
                prepared.push(p);
            }
            self.up[c] = slot;
        }
        Ok(self.model.dec.gru.step(tape, &gi, &prepared)?)
    }

    /// `h_{i,j}` for a child about to be created under `i`.
    fn down_message(&mut self, tape: &mut Tape<'_, T>, i: usize) -> Result<Var, VaeError> {
        self.message(tape, i, true)
    }

    /// `h_{c,parent}` once the subtree of `c` is complete.
    fn finish(&mut self, tape: &mut Tape<'_, T>, c: usize) -> Result<(), VaeError> {
        let h = self.message(tape, c, false)?;
        self.up[c] = Some(Msg { var: h, prep: None });
        Ok(())
    }

    fn label_logits(&mut self, tape: &mut Tape<'_, T>, h: Option<Var>) -> Result<Var, VaeError> {
        let d = &self.model.dec;
        let pre = match h {
            Some(h) => {
                let w2 = tape.matvec(d.w2_l, h)?;
                tape.add(self.zl, w2)?
            }
            None => self.zl,
        };
        let hidden = tape.relu(pre)?;
        Ok(tape.matvec(d.u_l, hidden)?)
    }
}

impl<T: Scalar> GraphVae<T> {
    /// Teacher-forced decoding of a canonical, terminal-complete `g` from `z`.
    pub fn decode_teacher_forced(
        &self,
        tape: &mut Tape<'_, T>,
        g: &DesignGraph,
        z: Var,
    ) -> Result<DecodeLoss, VaeError> {
        check_terminal(self, g)?;
        let mut walk = Walk::new(self, tape, z)?;
        let root_logits = walk.label_logits(tape, None)?;
        let l_root = tape.cross_entropy(root_logits, usize::from(g.node_type(0)))?;
        let root = walk.add_node(None, usize::from(g.node_type(0)));
        let mut terms = Vec::with_capacity(3 * g.len());
        let mut decisions = 0;
        teacher_visit(&mut walk, tape, g, 0, root, &mut terms, &mut decisions)?;
        let l_d = tape.sum(&terms)?;
        Ok(DecodeLoss {
            l_d,
            l_root,
            decisions,
        })
    }

    /// Builds a design from a latent vector.
    pub fn decode(&self, z: &[T], mode: DecodeMode) -> Result<DesignGraph, VaeError> {
        match mode {
            DecodeMode::Deterministic => self.decode_inner(z, None::<&mut ChaCha8Rng>),
            DecodeMode::Stochastic { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.decode_inner(z, Some(&mut rng))
            }
        }
    }

    /// Stochastic decoding from a caller-owned stream.
    pub fn decode_sample<R: Rng>(&self, z: &[T], rng: &mut R) -> Result<DesignGraph, VaeError> {
        self.decode_inner(z, Some(rng))
    }

    fn decode_inner<R: Rng>(&self, z: &[T], mut rng: Option<&mut R>) -> Result<DesignGraph, VaeError> {
        if z.len() != self.config.d_latent {
            return Err(VaeError::Nn(crate::nn::NnError::ShapeMismatch(format!(
                "latent of {} for size {}",
                z.len(),
                self.config.d_latent
            ))));
        }
        let mut tape = Tape::new(&self.params);
        let zv = tape.input(z)?;
        let mut walk = Walk::new(self, &mut tape, zv)?;
        let logits = walk.label_logits(&mut tape, None)?;
        let root_ty = pick_label(tape.value(logits), rng.as_deref_mut());
        let root = walk.add_node(None, root_ty);
        generate_visit(&mut walk, &mut tape, root, &mut rng)?;

        let mut g = DesignGraph::single(root_ty as TypeId);
        let mut index = vec![0usize; walk.len()];
        // Nodes were created in preorder, so parents precede children.
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            for &c in walk.kids[i].iter() {
                index[c] = g.add_child(index[i], walk.types[c] as TypeId);
            }
            stack.extend(walk.kids[i].iter().rev());
        }
        Ok(g)
    }
}

fn teacher_visit<T: Scalar>(
    walk: &mut Walk<'_, T>,
    tape: &mut Tape<'_, T>,
    g: &DesignGraph,
    gi: usize,
    wi: usize,
    terms: &mut Vec<Var>,
    decisions: &mut usize,
) -> Result<(), VaeError> {
    for &gc in g.children(gi) {
        let p = walk.expand_prob(tape, wi)?;
        terms.push(tape.bce(p, T::one())?);
        *decisions += 1;
        let h = walk.down_message(tape, wi)?;
        let logits = walk.label_logits(tape, Some(h))?;
        let ty = usize::from(g.node_type(gc));
        terms.push(tape.cross_entropy(logits, ty)?);
        let wc = walk.add_node(Some((wi, h)), ty);
        teacher_visit(walk, tape, g, gc, wc, terms, decisions)?;
        walk.finish(tape, wc)?;
    }
    let p = walk.expand_prob(tape, wi)?;
    terms.push(tape.bce(p, T::zero())?);
    *decisions += 1;
    Ok(())
}

fn generate_visit<T: Scalar, R: Rng>(
    walk: &mut Walk<'_, T>,
    tape: &mut Tape<'_, T>,
    i: usize,
    rng: &mut Option<&mut R>,
) -> Result<(), VaeError> {
    loop {
        if walk.len() >= MAX_NODES {
            return Ok(());
        }
        let p = walk.expand_prob(tape, i)?;
        let p = tape.scalar(p).to_f64().unwrap_or(0.0);
        let expand = match rng.as_deref_mut() {
            None => p > 0.5,
            Some(r) => r.random::<f64>() < p,
        };
        if !expand {
            return Ok(());
        }
        let h = walk.down_message(tape, i)?;
        let logits = walk.label_logits(tape, Some(h))?;
        let ty = pick_label(tape.value(logits), rng.as_deref_mut());
        let c = walk.add_node(Some((i, h)), ty);
        generate_visit(walk, tape, c, rng)?;
        if walk.len() >= MAX_NODES {
            return Ok(());
        }
        walk.finish(tape, c)?;
    }
}

fn pick_label<T: Scalar, R: Rng>(logits: &[T], rng: Option<&mut R>) -> usize {
    let l: Vec<f64> = logits.iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
    match rng {
        None => {
            let mut best = 0;
            for (k, &v) in l.iter().enumerate() {
                if v > l[best] {
                    best = k;
                }
            }
            best
        }
        Some(r) => {
            let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = l.iter().map(|&v| (v - max).exp()).collect();
            let total: f64 = w.iter().sum();
            let mut u = r.random::<f64>() * total;
            for (k, &wk) in w.iter().enumerate() {
                if u < wk {
                    return k;
                }
                u -= wk;
            }
            w.len() - 1
        }
    }
}
