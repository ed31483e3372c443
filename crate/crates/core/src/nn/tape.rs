//! Reverse-mode differentiation over vectors.
//!
//! A [`Tape`] records every operation of a forward pass into one flat value
//! arena. Trainable tensors live outside the tape in a [`ParamSet`]; ops that
//! read them ([`Tape::matvec`], [`Tape::column`], [`Tape::param`]) route their
//! gradients into a [`Gradients`] buffer during [`Tape::backward`].

use super::params::{Gradients, ParamId, ParamSet};
use super::{NnError, Scalar};

/// Lower and upper clamp applied to probabilities inside log losses.
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(u32);

#[derive(Debug, Clone, Copy)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatVec(ParamId, Var),
    Column(ParamId, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum { first: u32, count: u32 },
    Concat { first: u32, count: u32 },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Softmax(Var),
    Dot(Var, Var),
    SumAll(Var),
    CrossEntropy { logits: Var, target: usize },
    Bce { p: Var, target: T },
    Mse { pred: Var, target: Var },
    SqDist { pred: Var, target: Var },
    KlStdNormal { mu: Var, logvar: Var },
}

#[derive(Debug, Clone, Copy)]
struct Node<T> {
    op: Op<T>,
    start: usize,
    len: usize,
}

pub struct Tape<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    operands: Vec<Var>,
    data: Vec<T>,
    grad: Vec<T>,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    for (a, &b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn log_softmax_at<T: Scalar>(logits: &[T], target: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&v| (v - max).exp()).sum();
    logits[target] - max - sum.ln()
}

fn softmax_into<T: Scalar>(x: &[T], out: &mut [T]) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
            operands: Vec::new(),
            data: Vec::with_capacity(1 << 16),
            grad: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    /// Drops all recorded values, keeping allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.operands.clear();
        self.data.clear();
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn range(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0 as usize];
        (n.start, n.len)
    }

    pub fn value(&self, v: Var) -> &[T] {
        let (s, l) = self.range(v);
        &self.data[s..s + l]
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0 as usize].len
    }

    /// First element of a value; used for scalar losses.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    fn push(
        &mut self,
        op: Op<T>,
        len: usize,
        name: &'static str,
        f: impl FnOnce(&[T], &mut [T]),
    ) -> Result<Var, NnError> {
        let start = self.data.len();
        self.data.resize(start + len, T::zero());
        let (before, out) = self.data.split_at_mut(start);
        f(before, out);
        if !out.iter().all(|v| v.is_finite()) {
            self.data.truncate(start);
            return Err(NnError::NonFinite(name));
        }
        self.nodes.push(Node { op, start, len });
        Ok(Var((self.nodes.len() - 1) as u32))
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<usize, NnError> {
        let (la, lb) = (self.len_of(a), self.len_of(b));
        if la != lb {
            return Err(NnError::ShapeMismatch(format!("{what}: {la} vs {lb}")));
        }
        Ok(la)
    }

    /// Constant input; receives no gradient outside the tape.
    pub fn input(&mut self, values: &[T]) -> Result<Var, NnError> {
        self.push(Op::Input, values.len(), "input", |_, out| {
            out.copy_from_slice(values)
        })
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.push(Op::Input, len, "zeros", |_, _| {})
            .expect("zeros are finite")
    }

    /// Whole parameter tensor as a flat vector.
    pub fn param(&mut self, id: ParamId) -> Result<Var, NnError> {
        let t = self.params.get(id);
        self.push(Op::Param(id), t.data.len(), "param", |_, out| {
            out.copy_from_slice(&t.data)
        })
    }

    /// `W x` for a row-major `[rows, cols]` parameter.
    pub fn matvec(&mut self, w: ParamId, x: Var) -> Result<Var, NnError> {
        let t = self.params.get(w);
        let (rows, cols) = (t.rows(), t.cols());
        let (xs, xl) = self.range(x);
        if xl != cols || t.shape.len() != 2 {
            return Err(NnError::ShapeMismatch(format!(
                "matvec {}{:?} with vector of {xl}",
                t.name, t.shape
            )));
        }
        self.push(Op::MatVec(w, x), rows, "matvec", |before, out| {
            let xv = &before[xs..xs + xl];
            for (r, o) in out.iter_mut().enumerate() {
                *o = dot(&t.data[r * cols..(r + 1) * cols], xv);
            }
        })
    }

    /// Column `col` of a matrix parameter, i.e. `W e_col` for a one-hot input.
    pub fn column(&mut self, w: ParamId, col: usize) -> Result<Var, NnError> {
        let t = self.params.get(w);
        let (rows, cols) = (t.rows(), t.cols());
        if col >= cols || t.shape.len() != 2 {
            return Err(NnError::ShapeMismatch(format!(
                "column {col} of {}{:?}",
                t.name, t.shape
            )));
        }
        self.push(Op::Column(w, col), rows, "column", |_, out| {
            for (r, o) in out.iter_mut().enumerate() {
                *o = t.data[r * cols + col];
            }
        })
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: ParamId, b: ParamId, x: Var) -> Result<Var, NnError> {
        let wx = self.matvec(w, x)?;
        let bv = self.param(b)?;
        self.add(wx, bv)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        name: &'static str,
        f: fn(T, T) -> T,
    ) -> Result<Var, NnError> {
        let len = self.same_len(a, b, name)?;
        let (sa, _) = self.range(a);
        let (sb, _) = self.range(b);
        self.push(op, len, name, |before, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = f(before[sa + i], before[sb + i]);
            }
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, NnError> {
        let (s, l) = self.range(a);
        self.push(Op::Scale(a, c), l, "scale", |before, out| {
            for (o, &v) in out.iter_mut().zip(&before[s..s + l]) {
                *o = v * c;
            }
        })
    }

    /// Elementwise sum of equally sized vectors.
    pub fn sum(&mut self, vars: &[Var]) -> Result<Var, NnError> {
        let Some(&first) = vars.first() else {
            return Err(NnError::ShapeMismatch("sum of nothing".into()));
        };
        for &v in &vars[1..] {
            self.same_len(first, v, "sum")?;
        }
        let len = self.len_of(first);
        let ranges: Vec<usize> = vars.iter().map(|&v| self.range(v).0).collect();
        let op = Op::Sum {
            first: self.operands.len() as u32,
            count: vars.len() as u32,
        };
        self.operands.extend_from_slice(vars);
        self.push(op, len, "sum", |before, out| {
            for &s in &ranges {
                for (o, &v) in out.iter_mut().zip(&before[s..s + len]) {
                    *o += v;
                }
            }
        })
    }

    pub fn concat(&mut self, vars: &[Var]) -> Result<Var, NnError> {
        let ranges: Vec<(usize, usize)> = vars.iter().map(|&v| self.range(v)).collect();
        let len = ranges.iter().map(|r| r.1).sum();
        let op = Op::Concat {
            first: self.operands.len() as u32,
            count: vars.len() as u32,
        };
        self.operands.extend_from_slice(vars);
        self.push(op, len, "concat", |before, out| {
            let mut at = 0;
            for &(s, l) in &ranges {
                out[at..at + l].copy_from_slice(&before[s..s + l]);
                at += l;
            }
        })
    }

    fn unary(
        &mut self,
        a: Var,
        op: Op<T>,
        name: &'static str,
        f: fn(T) -> T,
    ) -> Result<Var, NnError> {
        let (s, l) = self.range(a);
        self.push(op, l, name, |before, out| {
            for (o, &v) in out.iter_mut().zip(&before[s..s + l]) {
                *o = f(v);
            }
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NnError> {
        self.unary(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NnError> {
        self.unary(a, Op::Tanh(a), "tanh", |v| v.tanh())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NnError> {
        self.unary(a, Op::Relu(a), "relu", |v| v.max(T::zero()))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NnError> {
        self.unary(a, Op::Exp(a), "exp", |v| v.exp())
    }

    /// Max-shifted softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NnError> {
        let (s, l) = self.range(a);
        self.push(Op::Softmax(a), l, "softmax", |before, out| {
            softmax_into(&before[s..s + l], out)
        })
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let len = self.same_len(a, b, "dot")?;
        let (sa, _) = self.range(a);
        let (sb, _) = self.range(b);
        self.push(Op::Dot(a, b), 1, "dot", |before, out| {
            out[0] = dot(&before[sa..sa + len], &before[sb..sb + len]);
        })
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, NnError> {
        let (s, l) = self.range(a);
        self.push(Op::SumAll(a), 1, "sum_all", |before, out| {
            out[0] = before[s..s + l].iter().copied().sum();
        })
    }

    /// `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, NnError> {
        let (s, l) = self.range(logits);
        if target >= l {
            return Err(NnError::ShapeMismatch(format!(
                "target {target} for {l} classes"
            )));
        }
        self.push(
            Op::CrossEntropy { logits, target },
            1,
            "cross_entropy",
            |before, out| out[0] = -log_softmax_at(&before[s..s + l], target),
        )
    }

    /// Binary cross-entropy of a probability `p` (length 1) against `target`,
    /// with `p` clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce(&mut self, p: Var, target: T) -> Result<Var, NnError> {
        let (s, l) = self.range(p);
        if l != 1 {
            return Err(NnError::ShapeMismatch(format!("bce on vector of {l}")));
        }
        let lo = T::from_f64(PROB_CLAMP).unwrap();
        let hi = T::one() - lo;
        self.push(Op::Bce { p, target }, 1, "bce", |before, out| {
            let pc = before[s].max(lo).min(hi);
            out[0] = -(target * pc.ln() + (T::one() - target) * (T::one() - pc).ln());
        })
    }

    /// Mean squared difference.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, NnError> {
        let len = self.same_len(pred, target, "mse")?;
        let (sp, _) = self.range(pred);
        let (st, _) = self.range(target);
        self.push(Op::Mse { pred, target }, 1, "mse", |before, out| {
            let ss: T = (0..len)
                .map(|i| {
                    let d = before[sp + i] - before[st + i];
                    d * d
                })
                .sum();
            out[0] = ss / T::from_usize(len.max(1)).unwrap();
        })
    }

    /// Squared L2 distance.
    pub fn sq_dist(&mut self, pred: Var, target: Var) -> Result<Var, NnError> {
        let len = self.same_len(pred, target, "sq_dist")?;
        let (sp, _) = self.range(pred);
        let (st, _) = self.range(target);
        self.push(Op::SqDist { pred, target }, 1, "sq_dist", |before, out| {
            out[0] = (0..len)
                .map(|i| {
                    let d = before[sp + i] - before[st + i];
                    d * d
                })
                .sum();
        })
    }

    /// `KL(N(mu, exp(logvar)) || N(0, I)) = 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)`.
    pub fn kl_std_normal(&mut self, mu: Var, logvar: Var) -> Result<Var, NnError> {
        let len = self.same_len(mu, logvar, "kl")?;
        let (sm, _) = self.range(mu);
        let (sl, _) = self.range(logvar);
        let half = T::from_f64(0.5).unwrap();
        self.push(Op::KlStdNormal { mu, logvar }, 1, "kl", |before, out| {
            out[0] = half
                * (0..len)
                    .map(|i| {
                        let m = before[sm + i];
                        let lv = before[sl + i];
                        m * m + lv.exp() - T::one() - lv
                    })
                    .sum::<T>();
        })
    }

    /// Accumulates `seed * d(loss)/d(param)` into `grads`.
    pub fn backward(
        &mut self,
        loss: Var,
        seed: T,
        grads: &mut Gradients<T>,
    ) -> Result<(), NnError> {
        let last = loss.0 as usize;
        let end = self.nodes[last].start + self.nodes[last].len;
        self.grad.clear();
        self.grad.resize(end, T::zero());
        let (ls, ll) = self.range(loss);
        for g in &mut self.grad[ls..ls + ll] {
            *g = seed;
        }

        for idx in (0..=last).rev() {
            let node = self.nodes[idx];
            let (before, after) = self.grad.split_at_mut(node.start);
            let go = &after[..node.len];
            if go.iter().all(|v| v.is_zero()) {
                continue;
            }
            let y = &self.data[node.start..node.start + node.len];
            let data = &self.data;
            let rng = |v: Var| {
                let n = &self.nodes[v.0 as usize];
                n.start..n.start + n.len
            };
            match node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (a, &g) in grads.get_mut(id).iter_mut().zip(go) {
                        *a += g;
                    }
                }
                Op::MatVec(w, x) => {
                    let t = self.params.get(w);
                    let cols = t.cols();
                    let xr = rng(x);
                    let xv = &data[xr.clone()];
                    let dw = grads.get_mut(w);
                    let dx = &mut before[xr];
                    for (r, &g) in go.iter().enumerate() {
                        if g.is_zero() {
                            continue;
                        }
                        axpy(dx, g, &t.data[r * cols..(r + 1) * cols]);
                        axpy(&mut dw[r * cols..(r + 1) * cols], g, xv);
                    }
                }
                Op::Column(w, col) => {
                    let cols = self.params.get(w).cols();
                    let dw = grads.get_mut(w);
                    for (r, &g) in go.iter().enumerate() {
                        dw[r * cols + col] += g;
                    }
                }
                Op::Add(a, b) => {
                    axpy(&mut before[rng(a)], T::one(), go);
                    axpy(&mut before[rng(b)], T::one(), go);
                }
                Op::Sub(a, b) => {
                    axpy(&mut before[rng(a)], T::one(), go);
                    axpy(&mut before[rng(b)], -T::one(), go);
                }
                Op::Mul(a, b) => {
                    let (ra, rb) = (rng(a), rng(b));
                    for i in 0..node.len {
                        let (va, vb) = (data[ra.start + i], data[rb.start + i]);
                        before[ra.start + i] += go[i] * vb;
                        before[rb.start + i] += go[i] * va;
                    }
                }
                Op::Scale(a, c) => axpy(&mut before[rng(a)], c, go),
                Op::Sum { first, count } => {
                    for k in 0..count as usize {
                        let v = self.operands[first as usize + k];
                        axpy(&mut before[rng(v)], T::one(), go);
                    }
                }
                Op::Concat { first, count } => {
                    let mut at = 0;
                    for k in 0..count as usize {
                        let r = rng(self.operands[first as usize + k]);
                        let l = r.len();
                        axpy(&mut before[r], T::one(), &go[at..at + l]);
                        at += l;
                    }
                }
                Op::Sigmoid(a) => {
                    for ((d, &g), &s) in before[rng(a)].iter_mut().zip(go).zip(y) {
                        *d += g * s * (T::one() - s);
                    }
                }
                Op::Tanh(a) => {
                    for ((d, &g), &t) in before[rng(a)].iter_mut().zip(go).zip(y) {
                        *d += g * (T::one() - t * t);
                    }
                }
                Op::Relu(a) => {
                    for ((d, &g), &o) in before[rng(a)].iter_mut().zip(go).zip(y) {
                        if o > T::zero() {
                            *d += g;
                        }
                    }
                }
                Op::Exp(a) => {
                    for ((d, &g), &e) in before[rng(a)].iter_mut().zip(go).zip(y) {
                        *d += g * e;
                    }
                }
                Op::Softmax(a) => {
                    let inner = dot(go, y);
                    for ((d, &g), &s) in before[rng(a)].iter_mut().zip(go).zip(y) {
                        *d += s * (g - inner);
                    }
                }
                Op::Dot(a, b) => {
                    let g = go[0];
                    let (ra, rb) = (rng(a), rng(b));
                    for i in 0..ra.len() {
                        let (va, vb) = (data[ra.start + i], data[rb.start + i]);
                        before[ra.start + i] += g * vb;
                        before[rb.start + i] += g * va;
                    }
                }
                Op::SumAll(a) => {
                    let g = go[0];
                    before[rng(a)].iter_mut().for_each(|d| *d += g);
                }
                Op::CrossEntropy { logits, target } => {
                    let g = go[0];
                    let r = rng(logits);
                    let mut p = vec![T::zero(); r.len()];
                    softmax_into(&data[r.clone()], &mut p);
                    p[target] = p[target] - T::one();
                    axpy(&mut before[r], g, &p);
                }
                Op::Bce { p, target } => {
                    let r = rng(p);
                    let pv = data[r.start];
                    let lo = T::from_f64(PROB_CLAMP).unwrap();
                    let hi = T::one() - lo;
                    if pv > lo && pv < hi {
                        let d = -target / pv + (T::one() - target) / (T::one() - pv);
                        before[r.start] += go[0] * d;
                    }
                }
                Op::Mse { pred, target } => {
                    let (rp, rt) = (rng(pred), rng(target));
                    let n = T::from_usize(rp.len().max(1)).unwrap();
                    let two = T::from_f64(2.0).unwrap();
                    for i in 0..rp.len() {
                        let d = two * go[0] * (data[rp.start + i] - data[rt.start + i]) / n;
                        before[rp.start + i] += d;
                        before[rt.start + i] -= d;
                    }
                }
                Op::SqDist { pred, target } => {
                    let (rp, rt) = (rng(pred), rng(target));
                    let two = T::from_f64(2.0).unwrap();
                    for i in 0..rp.len() {
                        let d = two * go[0] * (data[rp.start + i] - data[rt.start + i]);
                        before[rp.start + i] += d;
                        before[rt.start + i] -= d;
                    }
                }
                Op::KlStdNormal { mu, logvar } => {
                    let g = go[0];
                    let half = T::from_f64(0.5).unwrap();
                    let (rm, rl) = (rng(mu), rng(logvar));
                    for i in 0..rm.len() {
                        before[rm.start + i] += g * data[rm.start + i];
                        before[rl.start + i] += g * half * (data[rl.start + i].exp() - T::one());
                    }
                }
            }
        }
        if !grads.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        Ok(())
    }
}
