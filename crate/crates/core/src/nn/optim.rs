use super::params::{Gradients, ParamSet};
use super::Scalar;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, lr: f64) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.data.len()])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>) {
        self.t += 1;
        let b1 = T::from_f64(self.beta1).unwrap();
        let b2 = T::from_f64(self.beta2).unwrap();
        let c1 = T::from_f64(1.0 - self.beta1.powi(self.t)).unwrap();
        let c2 = T::from_f64(1.0 - self.beta2.powi(self.t)).unwrap();
        let lr = T::from_f64(self.lr).unwrap();
        let eps = T::from_f64(self.eps).unwrap();
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = grads.get(id);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in params.get_mut(id).data.iter_mut().enumerate() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamSet::<f64>::new();
        let id = p.push("w", vec![3], vec![1.0, -2.0, 0.5]);
        let mut g = Gradients::zeros_like(&p);
        g.get_mut(id).copy_from_slice(&[0.3, -7.0, 1e-3]);
        let mut adam = Adam::new(&p, 1e-3);
        adam.step(&mut p, &g);
        let moved: Vec<f64> = p
            .get(id)
            .data
            .iter()
            .zip([1.0, -2.0, 0.5])
            .map(|(a, b)| b - a)
            .collect();
        assert!((moved[0] - 1e-3).abs() < 1e-8);
        assert!((moved[1] + 1e-3).abs() < 1e-8);
        assert!((moved[2] - 1e-3).abs() < 1e-7);
    }
}
