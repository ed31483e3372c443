use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::grammar::DesignGraph;
use crate::nn::{Scalar, Tape, Var};

use super::{GraphVae, VaeError};

/// `z = mu + exp(logvar / 2) * eps` with `eps ~ N(0, I)` drawn from `rng`.
pub fn reparameterize<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<'_, T>,
    mu: Var,
    logvar: Var,
    rng: &mut R,
) -> Result<Var, VaeError> {
    let eps: Vec<T> = (0..tape.len_of(mu))
        .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal)).unwrap())
        .collect();
    reparameterize_with(tape, mu, logvar, &eps)
}

/// Reparameterization with explicit noise.
pub fn reparameterize_with<T: Scalar>(
    tape: &mut Tape<'_, T>,
    mu: Var,
    logvar: Var,
    eps: &[T],
) -> Result<Var, VaeError> {
    let half = tape.scale(logvar, T::from_f64(0.5).unwrap())?;
    let std = tape.exp(half)?;
    let e = tape.input(eps)?;
    let noise = tape.mul(std, e)?;
    Ok(tape.add(mu, noise)?)
}

/// Closed-form `KL(N(mu, exp(logvar)) || N(0, I))`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Per-example loss terms recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossComponents {
    pub l_d: Var,
    pub l_root: Var,
    pub l_kl: Var,
    pub l_ppn: Var,
    pub mu: Var,
}

/// How the latent code fed to the decoder is obtained.
pub enum LatentNoise<'a> {
    /// Decode from the posterior mean.
    Mean,
    Sample(&'a mut dyn RngCore),
    Fixed(&'a [f64]),
}

impl<T: Scalar> GraphVae<T> {
    /// Contact-vector prediction from a posterior mean.
    pub fn ppn_forward(&self, tape: &mut Tape<'_, T>, mu: Var) -> Result<Var, VaeError> {
        let h = tape.affine(self.ppn.w1, self.ppn.b1, mu)?;
        let h = tape.relu(h)?;
        Ok(tape.affine(self.ppn.w2, self.ppn.b2, h)?)
    }

    pub fn ppn_predict(&self, mu: &[T]) -> Result<Vec<T>, VaeError> {
        let mut tape = Tape::new(&self.params);
        let m = tape.input(mu)?;
        let out = self.ppn_forward(&mut tape, m)?;
        Ok(tape.value(out).to_vec())
    }

    /// Records every loss term for one (canonical graph, contact vector) pair.
    pub fn example_loss(
        &self,
        tape: &mut Tape<'_, T>,
        g: &DesignGraph,
        contacts: &[T],
        noise: LatentNoise<'_>,
    ) -> Result<LossComponents, VaeError> {
        let (mu, logvar) = self.encode(tape, g)?;
        let z = match noise {
            LatentNoise::Mean => mu,
            LatentNoise::Sample(rng) => reparameterize(tape, mu, logvar, rng)?,
            LatentNoise::Fixed(eps) => {
                let eps: Vec<T> = eps.iter().map(|&e| T::from_f64(e).unwrap()).collect();
                reparameterize_with(tape, mu, logvar, &eps)?
            }
        };
        let dec = self.decode_teacher_forced(tape, g, z)?;
        let l_kl = tape.kl_std_normal(mu, logvar)?;
        let pred = self.ppn_forward(tape, mu)?;
        let target = tape.input(contacts)?;
        let l_ppn = tape.sq_dist(pred, target)?;
        Ok(LossComponents {
            l_d: dec.l_d,
            l_root: dec.l_root,
            l_kl,
            l_ppn,
            mu,
        })
    }

    /// `L_d + L_root + beta * L_KL + lambda * L_PPN` for one example.
    pub fn combine(
        &self,
        tape: &mut Tape<'_, T>,
        c: &LossComponents,
        beta: f64,
        lambda: f64,
    ) -> Result<Var, VaeError> {
        let mut terms = vec![c.l_d, c.l_root];
        if beta != 0.0 {
            terms.push(tape.scale(c.l_kl, T::from_f64(beta).unwrap())?);
        }
        if lambda != 0.0 {
            terms.push(tape.scale(c.l_ppn, T::from_f64(lambda).unwrap())?);
        }
        Ok(tape.sum(&terms)?)
    }
}
