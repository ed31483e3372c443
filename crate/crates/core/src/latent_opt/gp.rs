//! Exact GP regression with a squared-exponential kernel and fixed,
//! data-derived hyperparameters.

use statrs::function::erf::erf;

use super::OptError;

/// Noise variance in standardized units.
pub const NOISE_VAR: f64 = 1e-6;
/// Candidates per block of the batched posterior.
const BLOCK: usize = 64;
/// Largest diagonal jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub lengthscale: f64,
    /// Signal variance in standardized units (always 1).
    pub signal_var: f64,
    pub noise_var: f64,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.signal_var * (-sq_dist(a, b) / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub kernel: Kernel,
    pub y_mean: f64,
    pub y_std: f64,
    /// Jitter added on top of the noise to obtain a factorization.
    pub jitter: f64,
    /// Row-major lower Cholesky factor of `K + (noise + jitter) I`, with the
    /// points in reverse order so that partial solves see recent points first.
    chol: Vec<f64>,
    /// `(K + (noise + jitter) I)^-1 y_standardized`, in the same order.
    alpha: Vec<f64>,
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    lanes(a, b, |x, y| (x - y) * (x - y))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    lanes(a, b, |x, y| x * y)
}

/// `sum f(a_i, b_i)` over four interleaved accumulators, which lets the
/// compiler vectorize the reduction.
#[inline(always)]
fn lanes(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += f(x[l], y[l]);
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(&x, &y)| f(x, y)).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// In-place lower Cholesky of a row-major `n x n` matrix. False if not positive definite.
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let (upper, lower) = a.split_at_mut((j + 1) * n);
        let row_j = &mut upper[j * n..];
        let d = row_j[j] - dot(&row_j[..j], &row_j[..j]);
        if !(d > 0.0 && d.is_finite()) {
            return false;
        }
        let d = d.sqrt();
        row_j[j] = d;
        row_j[j + 1..].iter_mut().for_each(|v| *v = 0.0);
        let row_j = &upper[j * n..j * n + j];
        for row_i in lower.chunks_exact_mut(n) {
            let s = dot(&row_i[..j], row_j);
            row_i[j] = (row_i[j] - s) / d;
        }
    }
    true
}

/// Solves `L x = b` in place.
fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let s = dot(row, &b[..i]);
        b[i] = (b[i] - s) / l[i * n + i];
    }
}

/// Solves `L^T x = b` in place.
fn backward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Fits the GP to `(x, y)`. Hyperparameters: lengthscale = median pairwise
/// distance (1 for fewer than two distinct points), targets standardized,
/// unit signal variance and [`NOISE_VAR`] noise in standardized units.
pub fn gp_fit(x: &[Vec<f64>], y: &[f64]) -> Result<GpModel, OptError> {
    if x.len() != y.len() {
        return Err(OptError::Shape(format!("{} inputs, {} targets", x.len(), y.len())));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(OptError::NonFinite);
    }
    let n = x.len();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(sq_dist(&x[i], &x[j]).sqrt());
        }
    }
    let lengthscale = if dists.is_empty() {
        1.0
    } else {
        let m = median(dists);
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let y_mean = if n == 0 { 0.0 } else { y.iter().sum::<f64>() / n as f64 };
    let var = if n < 2 {
        0.0
    } else {
        y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64
    };
    let y_std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let ys: Vec<f64> = y.iter().rev().map(|v| (v - y_mean) / y_std).collect();
    let kernel = Kernel {
        lengthscale,
        signal_var: 1.0,
        noise_var: NOISE_VAR,
    };

    let newest_first: Vec<&[f64]> = x.iter().rev().map(Vec::as_slice).collect();
    let mut base = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let k = kernel.eval(newest_first[i], newest_first[j]);
            base[i * n + j] = k;
            base[j * n + i] = k;
        }
    }
    let mut jitter = 0.0;
    let chol = loop {
        let mut a = base.clone();
        for i in 0..n {
            a[i * n + i] += kernel.noise_var + jitter;
        }
        if cholesky(&mut a, n) {
            break a;
        }
        jitter = if jitter == 0.0 { 1e-8 } else { jitter * 10.0 };
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(OptError::SingularCovariance);
        }
    };
    let mut alpha = ys;
    forward_solve(&chol, n, &mut alpha);
    backward_solve(&chol, n, &mut alpha);
    Ok(GpModel {
        x: x.to_vec(),
        y: y.to_vec(),
        kernel,
        y_mean,
        y_std,
        jitter,
        chol,
        alpha,
    })
}

impl GpModel {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Posterior mean and variance at `q` in the units of the observed targets.
    pub fn posterior(&self, q: &[f64]) -> (f64, f64) {
        self.posterior_many(std::slice::from_ref(&q))[0]
    }

    /// [`Self::posterior`] for many points. Points are processed in blocks so
    /// the triangular solve runs over rows of candidates at once.
    pub fn posterior_many<Q: AsRef<[f64]>>(&self, qs: &[Q]) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(qs.len());
        let mut v = Vec::new();
        for chunk in qs.chunks(BLOCK) {
            let (mean, explained) = self.solve_block(chunk, &mut v, |_, _, _| false).expect("never stopped");
            out.extend(mean.iter().zip(&explained).map(|(&m, &e)| self.unstandardize(m, e)));
        }
        out
    }

    /// Index of the point with the largest expected improvement over
    /// `y_best`, ties to the lowest index. Matches a scan over
    /// [`Self::posterior_many`], but abandons a block as soon as the variance
    /// explained so far bounds every point in it below the best found.
    pub fn argmax_ei<Q: AsRef<[f64]>>(&self, qs: &[Q], y_best: f64, xi: f64) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        let mut v = Vec::new();
        for (b, chunk) in qs.chunks(BLOCK).enumerate() {
            let dominated = |rows: usize, mean: &[f64], explained: &[f64]| {
                let Some((best_ei, _)) = best else { return false };
                rows.is_power_of_two()
                    && rows >= 16
                    && mean.iter().zip(explained).all(|(&m, &e)| {
                        let (mu, var) = self.unstandardize(m, e);
                        expected_improvement(mu, var.sqrt(), y_best, xi) * (1.0 + 1e-9) < best_ei
                    })
            };
            let Some((mean, explained)) = self.solve_block(chunk, &mut v, dominated) else {
                continue;
            };
            for (j, (&m, &e)) in mean.iter().zip(&explained).enumerate() {
                let (mu, var) = self.unstandardize(m, e);
                let ei = expected_improvement(mu, var.sqrt(), y_best, xi);
                if best.is_none_or(|(b, _)| ei > b) {
                    best = Some((ei, b * BLOCK + j));
                }
            }
        }
        best.map(|(_, i)| i)
    }

    fn unstandardize(&self, mean_s: f64, explained: f64) -> (f64, f64) {
        let var_s = (self.kernel.signal_var - explained).max(0.0);
        (self.y_mean + self.y_std * mean_s, self.y_std * self.y_std * var_s)
    }

    /// Standardized means and explained variances `|L^-1 k|^2` of a block.
    /// After each solved row, `stop(rows_done, mean, partial_explained)` may
    /// abandon the block.
    fn solve_block<Q: AsRef<[f64]>>(
        &self,
        chunk: &[Q],
        v: &mut Vec<f64>,
        mut stop: impl FnMut(usize, &[f64], &[f64]) -> bool,
    ) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.len();
        let c = chunk.len();
        v.clear();
        v.resize(n * c, 0.0);
        for (i, xi) in self.x.iter().rev().enumerate() {
            for (j, q) in chunk.iter().enumerate() {
                v[i * c + j] = self.kernel.eval(xi, q.as_ref());
            }
        }
        let mut mean = vec![0.0; c];
        for (row, a) in v.chunks_exact(c).zip(&self.alpha) {
            mean.iter_mut().zip(row).for_each(|(m, k)| *m += a * k);
        }
        let mut explained = vec![0.0; c];
        for i in 0..n {
            let (solved, rest) = v.split_at_mut(i * c);
            let row = &mut rest[..c];
            for (k, src) in solved.chunks_exact(c).enumerate() {
                let l = self.chol[i * n + k];
                row.iter_mut().zip(src).for_each(|(r, s)| *r -= l * s);
            }
            let d = self.chol[i * n + i];
            row.iter_mut().for_each(|r| *r /= d);
            explained.iter_mut().zip(row.iter()).for_each(|(e, r)| *e += r * r);
            if i + 1 < n && stop(i + 1, &mean, &explained) {
                return None;
            }
        }
        Some((mean, explained))
    }
}

/// Free-function form of [`GpModel::posterior`].
pub fn gp_posterior(m: &GpModel, q: &[f64]) -> (f64, f64) {
    m.posterior(q)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement for maximization with exploration offset `xi`.
pub fn expected_improvement(mu: f64, s: f64, y_best: f64, xi: f64) -> f64 {
    let delta = mu - y_best - xi;
    if s <= 0.0 {
        return delta.max(0.0);
    }
    let u = delta / s;
    (delta * normal_cdf(u) + s * normal_pdf(u)).max(0.0)
}
