//! Central finite-difference gradient checking in 64-bit arithmetic.

use super::params::{Gradients, ParamSet};
use super::tape::{Tape, Var};
use super::NnError;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Relative errors use `max(|analytic|, |numeric|, rel_floor)` as the
    /// denominator, so gradients below the floor are compared absolutely.
    pub rel_floor: f64,
    /// Check at most this many evenly spaced elements per tensor.
    pub max_per_tensor: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            rel_floor: 1e-3,
            max_per_tensor: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Tensor name and element index of the largest relative error.
    pub worst: Option<(String, usize)>,
}

fn eval<F>(params: &ParamSet<f64>, f: &F) -> Result<f64, NnError>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var, NnError>,
{
    let mut tape = Tape::new(params);
    let out = f(&mut tape)?;
    Ok(tape.scalar(out))
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with respect to every parameter.
pub fn grad_check<F>(
    params: &ParamSet<f64>,
    opts: GradCheckOptions,
    f: F,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var, NnError>,
{
    let mut analytic = Gradients::zeros_like(params);
    {
        let mut tape = Tape::new(params);
        let out = f(&mut tape)?;
        tape.backward(out, 1.0, &mut analytic)?;
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut probe = params.clone();
    for id in params.ids() {
        let n = params.get(id).data.len();
        let stride = n.div_ceil(opts.max_per_tensor.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = params.get(id).data[i];
            probe.get_mut(id).data[i] = orig + opts.step;
            let plus = eval(&probe, &f)?;
            probe.get_mut(id).data[i] = orig - opts.step;
            let minus = eval(&probe, &f)?;
            probe.get_mut(id).data[i] = orig;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.get(id)[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.rel_floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}
