//! Message-passing GRU cell.
//!
//! For node input `x` and incoming messages `m_1..m_K`:
//!
//! ```text
//! s   = sum_k m_k
//! z   = sigmoid(W_z x + U_z s + b_z)
//! r_k = sigmoid(W_r x + U_r m_k + b_r)
//! h~  = tanh(W_h x + U_h sum_k (r_k * m_k) + b_h)
//! out = (1 - z) * s + z * h~
//! ```

use rand::Rng;

use super::params::{ParamId, ParamSet};
use super::tape::{Tape, Var};
use super::{NnError, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruCellParams {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub d_x: usize,
    pub d_h: usize,
}

/// Node input of a GRU step.
#[derive(Debug, Clone, Copy)]
pub enum GruInput {
    /// One-hot vector with a 1 at this index.
    OneHot(usize),
    Dense(Var),
}

/// `W x + b` for the three gates; reusable across all edges leaving a node.
#[derive(Debug, Clone, Copy)]
pub struct GateInputs {
    z: Var,
    r: Var,
    h: Var,
}

/// A message together with its `U_r m` product.
#[derive(Debug, Clone, Copy)]
pub struct PreparedMessage {
    pub message: Var,
    reset_term: Var,
}

impl GruCellParams {
    pub fn init<T: Scalar, R: Rng>(
        params: &mut ParamSet<T>,
        prefix: &str,
        d_x: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Self {
        let fan = d_x + d_h;
        let gate = |g: &str, params: &mut ParamSet<T>, rng: &mut R| {
            (
                params.uniform(format!("{prefix}.w_{g}"), vec![d_h, d_x], fan, rng),
                params.uniform(format!("{prefix}.u_{g}"), vec![d_h, d_h], fan, rng),
                params.uniform(format!("{prefix}.b_{g}"), vec![d_h], fan, rng),
            )
        };
        let (w_z, u_z, b_z) = gate("z", params, rng);
        let (w_r, u_r, b_r) = gate("r", params, rng);
        let (w_h, u_h, b_h) = gate("h", params, rng);
        Self {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            d_x,
            d_h,
        }
    }

    pub fn gate_inputs<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        x: GruInput,
    ) -> Result<GateInputs, NnError> {
        let term = |w: ParamId, b: ParamId, tape: &mut Tape<'_, T>| {
            let wx = match x {
                GruInput::OneHot(i) => tape.column(w, i)?,
                GruInput::Dense(v) => tape.matvec(w, v)?,
            };
            let bv = tape.param(b)?;
            tape.add(wx, bv)
        };
        Ok(GateInputs {
            z: term(self.w_z, self.b_z, tape)?,
            r: term(self.w_r, self.b_r, tape)?,
            h: term(self.w_h, self.b_h, tape)?,
        })
    }

    /// Gate inputs for a multi-hot input with ones at `cols`.
    pub fn gate_inputs_hot<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        cols: &[usize],
    ) -> Result<GateInputs, NnError> {
        let (&first, rest) = cols
            .split_first()
            .ok_or_else(|| NnError::ShapeMismatch("empty multi-hot input".into()))?;
        let mut g = self.gate_inputs(tape, GruInput::OneHot(first))?;
        for &c in rest {
            let z = tape.column(self.w_z, c)?;
            g.z = tape.add(g.z, z)?;
            let r = tape.column(self.w_r, c)?;
            g.r = tape.add(g.r, r)?;
            let h = tape.column(self.w_h, c)?;
            g.h = tape.add(g.h, h)?;
        }
        Ok(g)
    }

    pub fn prepare<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        message: Var,
    ) -> Result<PreparedMessage, NnError> {
        if tape.len_of(message) != self.d_h {
            return Err(NnError::ShapeMismatch(format!(
                "message of {} for hidden size {}",
                tape.len_of(message),
                self.d_h
            )));
        }
        Ok(PreparedMessage {
            message,
            reset_term: tape.matvec(self.u_r, message)?,
        })
    }

    /// One update from precomputed gate inputs and messages. An empty message
    /// list behaves like a single zero message.
    pub fn step<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        inputs: &GateInputs,
        msgs: &[PreparedMessage],
    ) -> Result<Var, NnError> {
        if msgs.is_empty() {
            let z = tape.sigmoid(inputs.z)?;
            let h = tape.tanh(inputs.h)?;
            return tape.mul(z, h);
        }
        let ms: Vec<Var> = msgs.iter().map(|m| m.message).collect();
        let s = if ms.len() == 1 { ms[0] } else { tape.sum(&ms)? };
        let uz = tape.matvec(self.u_z, s)?;
        let zp = tape.add(inputs.z, uz)?;
        let z = tape.sigmoid(zp)?;
        let mut gated = Vec::with_capacity(msgs.len());
        for m in msgs {
            let rp = tape.add(inputs.r, m.reset_term)?;
            let r = tape.sigmoid(rp)?;
            gated.push(tape.mul(r, m.message)?);
        }
        let gsum = if gated.len() == 1 {
            gated[0]
        } else {
            tape.sum(&gated)?
        };
        let uh = tape.matvec(self.u_h, gsum)?;
        let hp = tape.add(inputs.h, uh)?;
        let h = tape.tanh(hp)?;
        // (1 - z) * s + z * h = s + z * (h - s)
        let diff = tape.sub(h, s)?;
        let zd = tape.mul(z, diff)?;
        tape.add(s, zd)
    }
}

/// Single GRU step from raw inputs.
pub fn gru_step<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cell: &GruCellParams,
    x: GruInput,
    msgs: &[Var],
) -> Result<Var, NnError> {
    if let GruInput::Dense(v) = x {
        if tape.len_of(v) != cell.d_x {
            return Err(NnError::ShapeMismatch(format!(
                "input of {} for input size {}",
                tape.len_of(v),
                cell.d_x
            )));
        }
    }
    let inputs = cell.gate_inputs(tape, x)?;
    let prepared = msgs
        .iter()
        .map(|&m| cell.prepare(tape, m))
        .collect::<Result<Vec<_>, _>>()?;
    cell.step(tape, &inputs, &prepared)
}
