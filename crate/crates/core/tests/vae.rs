use std::collections::HashMap;

use approx::assert_abs_diff_eq;
use glso_core::grammar::{random_derivation, DesignGraph, Grammar, MAX_NODES};
use glso_core::nn::{grad_check, GradCheckOptions, Gradients, NnError, ParamSet, Tape};
use glso_core::vae::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const LN2: f64 = std::f64::consts::LN_2;
/// The full loss has thousands of relu units; with a 1e-3 step some of them
/// cross zero inside the stencil and the central difference straddles a kink.
const SMOOTH_STEP: f64 = 1e-6;

fn grammar() -> Grammar {
    Grammar::default_ruleset()
}

fn model64(seed: u64) -> GraphVae<f64> {
    GraphVae::new(VaeConfig::new(11), seed)
}

fn small_config(t_mp: usize) -> VaeConfig {
    VaeConfig {
        n_types: 11,
        d_hidden: 8,
        d_latent: 4,
        t_mp,
        ppn_hidden: 6,
        contact_dim: 16,
        root_flag: false,
        root_readout: false,
    }
}

fn path(types: &[u16]) -> DesignGraph {
    let mut g = DesignGraph::single(types[0]);
    let mut last = 0;
    for &t in &types[1..] {
        last = g.add_child(last, t);
    }
    g
}

fn six_node_tree() -> DesignGraph {
    let mut g = DesignGraph::single(0);
    let a = g.add_child(0, 2);
    g.add_child(a, 9);
    let b = g.add_child(0, 6);
    let c = g.add_child(b, 4);
    g.add_child(c, 10);
    g.canonicalize()
}

// ---------- dense reference implementation ----------

struct Dense<'a> {
    p: &'a ParamSet<f64>,
}

impl Dense<'_> {
    fn t(&self, name: &str) -> (&[f64], usize) {
        let id = self.p.find(name).unwrap_or_else(|| panic!("{name}"));
        let t = self.p.get(id);
        (&t.data, t.cols())
    }

    fn mv(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let (w, cols) = self.t(name);
        assert_eq!(cols, x.len());
        w.chunks(cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn col(&self, name: &str, c: usize) -> Vec<f64> {
        let (w, cols) = self.t(name);
        w.chunks(cols).map(|row| row[c]).collect()
    }

    fn vec(&self, name: &str) -> Vec<f64> {
        self.t(name).0.to_vec()
    }

    /// Sum of the columns of `name` selected by a multi-hot input.
    fn cols(&self, name: &str, xs: &[usize]) -> Vec<f64> {
        xs.iter()
            .map(|&c| self.col(name, c))
            .reduce(|a, b| add(&a, &b))
            .unwrap()
    }

    fn gru(&self, prefix: &str, x: usize, msgs: &[Vec<f64>], d_h: usize) -> Vec<f64> {
        self.gru_hot(prefix, &[x], msgs, d_h)
    }

    fn gru_hot(&self, prefix: &str, x: &[usize], msgs: &[Vec<f64>], d_h: usize) -> Vec<f64> {
        let s = msgs.iter().fold(vec![0.0; d_h], |a, m| add(&a, m));
        let zi = add(
            &add(&self.cols(&format!("{prefix}.w_z"), x), &self.mv(&format!("{prefix}.u_z"), &s)),
            &self.vec(&format!("{prefix}.b_z")),
        );
        let z: Vec<f64> = zi.iter().map(|&v| sig(v)).collect();
        let mut gated = vec![0.0; d_h];
        for m in msgs {
            let ri = add(
                &add(&self.cols(&format!("{prefix}.w_r"), x), &self.mv(&format!("{prefix}.u_r"), m)),
                &self.vec(&format!("{prefix}.b_r")),
            );
            for k in 0..d_h {
                gated[k] += sig(ri[k]) * m[k];
            }
        }
        let hi = add(
            &add(&self.cols(&format!("{prefix}.w_h"), x), &self.mv(&format!("{prefix}.u_h"), &gated)),
            &self.vec(&format!("{prefix}.b_h")),
        );
        (0..d_h)
            .map(|k| (1.0 - z[k]) * s[k] + z[k] * hi[k].tanh())
            .collect()
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn log_softmax(v: &[f64], k: usize) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v[k] - m - v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn neighbors(g: &DesignGraph, i: usize) -> Vec<usize> {
    g.parent(i).into_iter().chain(g.children(i).iter().copied()).collect()
}

/// Every directed message updated every iteration, all node representations.
fn dense_encode(model: &GraphVae<f64>, g: &DesignGraph) -> (Vec<f64>, Vec<f64>) {
    let d = Dense { p: &model.params };
    let dh = model.config.d_hidden;
    let n = g.len();
    let root_col = model.config.n_types;
    // the root carries an extra input bit when the flag is on
    let input = |i: usize| -> Vec<usize> {
        let mut x = vec![g.node_type(i) as usize];
        if model.config.root_flag && i == 0 {
            x.push(root_col);
        }
        x
    };
    let mut msgs: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    for i in 0..n {
        for j in neighbors(g, i) {
            msgs.insert((i, j), vec![0.0; dh]);
        }
    }
    for _ in 0..model.config.t_mp {
        let mut next = HashMap::new();
        for (&(i, j), _) in &msgs {
            let inc: Vec<Vec<f64>> = neighbors(g, i)
                .into_iter()
                .filter(|&k| k != j)
                .map(|k| msgs[&(k, i)].clone())
                .collect();
            next.insert((i, j), d.gru_hot("enc.gru", &input(i), &inc, dh));
        }
        msgs = next;
    }
    let mut h_g = vec![0.0; dh];
    for i in 0..n {
        let readout = g.children(i).is_empty() || (i == 0 && model.config.root_readout);
        if !readout {
            continue;
        }
        let s = neighbors(g, i)
            .into_iter()
            .fold(vec![0.0; dh], |a, k| add(&a, &msgs[&(k, i)]));
        let h = relu(add(&d.cols("enc.w_e", &input(i)), &d.mv("enc.u_e", &s)));
        h_g = add(&h_g, &h);
    }
    (
        add(&d.mv("enc.mu_w", &h_g), &d.vec("enc.mu_b")),
        add(&d.mv("enc.logvar_w", &h_g), &d.vec("enc.logvar_b")),
    )
}

/// Step-by-step replay of the teacher-forced traversal. Returns (L_d, L_root, decisions).
fn scripted_decode(model: &GraphVae<f64>, g: &DesignGraph, z: &[f64]) -> (f64, f64, usize) {
    let d = Dense { p: &model.params };
    let dh = model.config.d_hidden;
    let zc = add(&d.mv("dec.w2_c", z), &d.vec("dec.b_c"));
    let zl = add(&d.mv("dec.w1_l", z), &d.vec("dec.b_l"));
    let label = |h: &[f64]| d.mv("dec.u_l", &relu(add(&zl, &d.mv("dec.w2_l", h))));
    let l_root = -log_softmax(&label(&vec![0.0; dh]), g.node_type(0) as usize);

    // messages[(from, to)]
    let mut msgs: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    let mut loss = 0.0;
    let mut decisions = 0;
    // explicit event script: (node, child index or None for stop)
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    while let Some((i, k)) = stack.pop() {
        let inward: Vec<Vec<f64>> = msgs
            .iter()
            .filter(|(&(_, to), _)| to == i)
            .map(|(_, v)| v.clone())
            .collect();
        let s = inward.iter().fold(vec![0.0; dh], |a, m| add(&a, m));
        let hidden = relu(add(
            &add(&d.col("dec.w1_c", g.node_type(i) as usize), &zc),
            &d.mv("dec.w3_c", &s),
        ));
        let p = sig(d.vec("dec.u_c").iter().zip(&hidden).map(|(a, b)| a * b).sum());
        decisions += 1;
        if k < g.children(i).len() {
            loss -= p.max(1e-7).min(1.0 - 1e-7).ln();
            let c = g.children(i)[k];
            let h = d.gru("dec.gru", g.node_type(i) as usize, &inward, dh);
            loss -= log_softmax(&label(&h), g.node_type(c) as usize);
            msgs.insert((i, c), h);
            stack.push((i, k + 1));
            stack.push((c, 0));
        } else {
            loss -= (1.0 - p).max(1e-7).min(1.0 - 1e-7).ln();
            if let Some(par) = g.parent(i) {
                let from_kids: Vec<Vec<f64>> = g
                    .children(i)
                    .iter()
                    .map(|&c| msgs[&(c, i)].clone())
                    .collect();
                let h = d.gru("dec.gru", g.node_type(i) as usize, &from_kids, dh);
                msgs.insert((i, par), h);
            }
        }
    }
    (loss, l_root, decisions)
}

// ---------- encoder ----------

#[test]
fn zero_params_give_standard_posterior() {
    let gr = grammar();
    let mut m = model64(0);
    m.zero_params();
    for seed in 0..20 {
        let (g, _) = random_derivation(&gr, seed).unwrap();
        let mut tape = Tape::new(&m.params);
        let (mu, lv) = m.encode(&mut tape, &g.canonicalize()).unwrap();
        assert!(tape.value(mu).iter().all(|&v| v == 0.0));
        assert!(tape.value(lv).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn encoder_matches_dense_reference_on_path() {
    let mut cfg = VaeConfig::new(11);
    cfg.t_mp = 2;
    let m: GraphVae<f64> = GraphVae::new(cfg, 7);
    let g = path(&[0, 6, 2, 4, 9]);
    let (mu_ref, lv_ref) = dense_encode(&m, &g);
    let mut tape = Tape::new(&m.params);
    let (mu, lv) = m.encode(&mut tape, &g).unwrap();
    for (a, b) in tape.value(mu).iter().zip(&mu_ref) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-6);
    }
    for (a, b) in tape.value(lv).iter().zip(&lv_ref) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-6);
    }
}

#[test]
fn encoder_matches_dense_reference_on_random_trees() {
    let gr = grammar();
    let plain = VaeConfig {
        root_flag: false,
        root_readout: false,
        ..VaeConfig::new(11)
    };
    for (m, seed) in [(model64(3), 0..15), (GraphVae::new(plain, 3), 15..30)] {
        check_encoder_on_seeds(&gr, &m, seed);
    }
}

fn check_encoder_on_seeds(gr: &Grammar, m: &GraphVae<f64>, seeds: std::ops::Range<u64>) {
    for seed in seeds {
        let (g, _) = random_derivation(gr, seed).unwrap();
        let g = g.canonicalize();
        let (mu_ref, _) = dense_encode(m, &g);
        let mut tape = Tape::new(&m.params);
        let (mu, _) = m.encode(&mut tape, &g).unwrap();
        for (a, b) in tape.value(mu).iter().zip(&mu_ref) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }
}

#[test]
fn isomorphic_inputs_share_a_posterior_mean() {
    let m = model64(5);
    let mut a = DesignGraph::single(0);
    let l = a.add_child(0, 2);
    a.add_child(l, 9);
    a.add_child(0, 7);
    let mut b = DesignGraph::single(0);
    b.add_child(0, 7);
    let l = b.add_child(0, 2);
    b.add_child(l, 9);
    let ma = m.encode_mean(&a.canonicalize()).unwrap();
    let mb = m.encode_mean(&b.canonicalize()).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn nonterminal_design_is_rejected() {
    let m = model64(0);
    let mut tape = Tape::new(&m.params);
    assert!(matches!(
        m.encode(&mut tape, &DesignGraph::single(12)),
        Err(VaeError::NotTerminalComplete)
    ));
}

// ---------- decoder ----------

fn teacher_loss(m: &GraphVae<f64>, g: &DesignGraph, z: &[f64]) -> (f64, f64, usize) {
    let mut tape = Tape::new(&m.params);
    let zv = tape.input(z).unwrap();
    let out = m.decode_teacher_forced(&mut tape, g, zv).unwrap();
    (tape.scalar(out.l_d), tape.scalar(out.l_root), out.decisions)
}

#[test]
fn zero_params_single_node_costs_one_stop() {
    let mut m = model64(0);
    m.zero_params();
    let (l_d, l_root, n) = teacher_loss(&m, &DesignGraph::single(0), &[0.0; 32]);
    assert_eq!(n, 1);
    assert_abs_diff_eq!(l_d, LN2, epsilon = 1e-12);
    assert_abs_diff_eq!(l_root, 11f64.ln(), epsilon = 1e-12);
}

#[test]
fn zero_params_root_with_child() {
    let mut m = model64(0);
    m.zero_params();
    let g = path(&[0, 9]);
    let (l_d, _, n) = teacher_loss(&m, &g, &[0.0; 32]);
    // expand at the root, stop at the child, final stop at the root
    assert_eq!(n, 3);
    assert_abs_diff_eq!(l_d, 3.0 * LN2 + 11f64.ln(), epsilon = 1e-12);
    assert_abs_diff_eq!(l_d, 4.4773, epsilon = 1e-4);
}

#[test]
fn decision_count_is_two_per_edge_plus_one() {
    let gr = grammar();
    let m = model64(1);
    for seed in 0..30 {
        let (g, _) = random_derivation(&gr, seed).unwrap();
        let (_, _, n) = teacher_loss(&m, &g.canonicalize(), &[0.1; 32]);
        assert_eq!(n, 2 * g.len() - 1);
    }
}

#[test]
fn teacher_forcing_matches_scripted_traversal() {
    let m = model64(11);
    let g = six_node_tree();
    assert_eq!(g.len(), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z: Vec<f64> = (0..32).map(|_| rng.sample(StandardNormal)).collect();
    let (l_d, l_root, n) = teacher_loss(&m, &g, &z);
    let (r_d, r_root, rn) = scripted_decode(&m, &g, &z);
    assert_eq!(n, rn);
    assert_abs_diff_eq!(l_d, r_d, epsilon = 1e-6);
    assert_abs_diff_eq!(l_root, r_root, epsilon = 1e-6);
}

#[test]
fn teacher_forcing_matches_scripted_traversal_on_random_trees() {
    let gr = grammar();
    let m = model64(12);
    for seed in 100..110 {
        let (g, _) = random_derivation(&gr, seed).unwrap();
        let g = g.canonicalize();
        let z = vec![0.3; 32];
        let (l_d, _, _) = teacher_loss(&m, &g, &z);
        let (r_d, _, _) = scripted_decode(&m, &g, &z);
        assert_abs_diff_eq!(l_d, r_d, epsilon = 1e-8);
    }
}

#[test]
fn zero_params_decode_to_single_node() {
    let mut m = model64(0);
    m.zero_params();
    let g = m.decode(&[0.0; 32], DecodeMode::Deterministic).unwrap();
    assert_eq!(g.len(), 1);
    assert_eq!(g.node_type(0), 0);
}

fn assert_valid(g: &DesignGraph) {
    assert!(g.len() >= 1 && g.len() <= MAX_NODES);
    assert!(g.node_types().iter().all(|&t| t < 11));
    let rec = g.to_record();
    let back = DesignGraph::try_from(&rec).unwrap();
    assert_eq!(&back, g);
}

#[test]
fn generation_is_total_for_wide_latents() {
    let m: GraphVae<f32> = GraphVae::new(VaeConfig::new(11), 4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in 0..300 {
        let z: Vec<f32> = (0..32)
            .map(|_| 3.0 * rng.sample::<f32, _>(StandardNormal))
            .collect();
        assert_valid(&m.decode(&z, DecodeMode::Deterministic).unwrap());
        assert_valid(&m.decode(&z, DecodeMode::Stochastic { seed: k }).unwrap());
    }
}

#[test]
fn budget_guard_stops_at_max_nodes() {
    // A model that always expands: large positive expand bias through u_c . relu(b_c).
    let mut m = model64(0);
    m.zero_params();
    m.params.get_mut(m.dec.b_c).data.fill(1.0);
    m.params.get_mut(m.dec.u_c).data.fill(1.0);
    let g = m.decode(&[0.0; 32], DecodeMode::Deterministic).unwrap();
    assert_eq!(g.len(), MAX_NODES);
    assert_valid(&g);
}

#[test]
fn stochastic_decoding_is_seeded() {
    let m: GraphVae<f32> = GraphVae::new(VaeConfig::new(11), 4);
    let z = vec![0.5f32; 32];
    let a = m.decode(&z, DecodeMode::Stochastic { seed: 3 }).unwrap();
    let b = m.decode(&z, DecodeMode::Stochastic { seed: 3 }).unwrap();
    assert_eq!(a, b);
}

// ---------- reparameterization and KL ----------

#[test]
fn reparameterize_with_fixed_noise() {
    let p = ParamSet::<f64>::new();
    let mut tape = Tape::new(&p);
    let mu = tape.input(&[0.5, -1.0, 2.0]).unwrap();
    let lv = tape.input(&[0.3, -0.7, 1.1]).unwrap();
    let z = reparameterize_with(&mut tape, mu, lv, &[0.0; 3]).unwrap();
    assert_eq!(tape.value(z), &[0.5, -1.0, 2.0]);
    let lv0 = tape.input(&[0.0; 3]).unwrap();
    let z = reparameterize_with(&mut tape, mu, lv0, &[1.0; 3]).unwrap();
    assert_eq!(tape.value(z), &[1.5, 0.0, 3.0]);
}

#[test]
fn reparameterize_moments_match() {
    let p = ParamSet::<f64>::new();
    let mut tape = Tape::new(&p);
    let mu = tape.input(&[0.7, -1.3]).unwrap();
    let lv = tape.input(&[0.4, -1.2]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    for _ in 0..n {
        tape.clear();
        let mu = tape.input(&[0.7, -1.3]).unwrap();
        let lv = tape.input(&[0.4, -1.2]).unwrap();
        let z = reparameterize(&mut tape, mu, lv, &mut rng).unwrap();
        for k in 0..2 {
            let v = tape.value(z)[k];
            sum[k] += v;
            sq[k] += v * v;
        }
    }
    let _ = (mu, lv);
    for (k, (&m, &l)) in [0.7f64, -1.3].iter().zip(&[0.4f64, -1.2]).enumerate() {
        let var = l.exp();
        let mean = sum[k] / n as f64;
        let emp_var = sq[k] / n as f64 - mean * mean;
        assert!((mean - m).abs() < 3.0 * (var / n as f64).sqrt());
        // standard error of a sample variance is about var * sqrt(2 / n)
        assert!((emp_var - var).abs() < 3.0 * var * (2.0 / n as f64).sqrt());
    }
}

#[test]
fn kl_closed_form_values() {
    assert_eq!(kl_divergence(&[0.0; 4], &[0.0; 4]), 0.0);
    assert_abs_diff_eq!(kl_divergence(&[1.0], &[0.0]), 0.5, epsilon = 1e-15);
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mu = [1.0, -0.4, 0.2];
    let lv = [0.0, 0.5, -0.8];
    let closed = kl_divergence(&mu, &lv);
    let n = 200_000;
    let mut acc = 0.0;
    for _ in 0..n {
        for k in 0..3 {
            let e: f64 = rng.sample(StandardNormal);
            let z = mu[k] + (lv[k] / 2.0).exp() * e;
            // log q(z) - log p(z)
            acc += -0.5 * lv[k] - 0.5 * e * e + 0.5 * z * z;
        }
    }
    let mc = acc / n as f64;
    assert!((mc - closed).abs() / closed < 0.02, "{mc} vs {closed}");
}

// ---------- property head and joint loss ----------

#[test]
fn zero_ppn_predicts_zero_and_loss_is_squared_norm() {
    let gr = grammar();
    let mut m = model64(0);
    m.zero_params();
    let (g, _) = random_derivation(&gr, 3).unwrap();
    let s = Sample::new(&g, &gr).unwrap();
    let target: Vec<f64> = s.contacts.iter().map(|&v| f64::from(v)).collect();
    assert!(m.ppn_predict(&[0.0; 32]).unwrap().iter().all(|&v| v == 0.0));
    let mut tape = Tape::new(&m.params);
    let c = m
        .example_loss(&mut tape, &s.graph, &target, LatentNoise::Mean)
        .unwrap();
    let norm: f64 = target.iter().map(|v| v * v).sum();
    assert_abs_diff_eq!(tape.scalar(c.l_ppn), norm, epsilon = 1e-12);
    assert_eq!(tape.scalar(c.l_kl), 0.0);
}

#[test]
fn lambda_zero_leaves_property_head_untouched() {
    let gr = grammar();
    let m = model64(2);
    let (g, _) = random_derivation(&gr, 8).unwrap();
    let s = Sample::new(&g, &gr).unwrap();
    let target: Vec<f64> = s.contacts.iter().map(|&v| f64::from(v)).collect();
    let mut grads = Gradients::zeros_like(&m.params);
    let mut tape = Tape::new(&m.params);
    let c = m
        .example_loss(&mut tape, &s.graph, &target, LatentNoise::Fixed(&[0.2; 32]))
        .unwrap();
    let total = m.combine(&mut tape, &c, 0.005, 0.0).unwrap();
    tape.backward(total, 1.0, &mut grads).unwrap();
    for id in m.ppn_param_ids() {
        assert!(grads.get(id).iter().all(|&v| v == 0.0));
    }
    let with = {
        let mut t = Tape::new(&m.params);
        let c = m
            .example_loss(&mut t, &s.graph, &target, LatentNoise::Fixed(&[0.2; 32]))
            .unwrap();
        let v = m.combine(&mut t, &c, 0.005, 0.0).unwrap();
        t.scalar(v)
    };
    let mut other = m.clone();
    for id in m.ppn_param_ids() {
        other.params.get_mut(id).data.iter_mut().for_each(|v| *v += 0.5);
    }
    let mut t = Tape::new(&other.params);
    let c = other
        .example_loss(&mut t, &s.graph, &target, LatentNoise::Fixed(&[0.2; 32]))
        .unwrap();
    let v = other.combine(&mut t, &c, 0.005, 0.0).unwrap();
    assert_eq!(t.scalar(v), with);
}

fn nn(e: VaeError) -> NnError {
    match e {
        VaeError::Nn(e) => e,
        other => panic!("{other}"),
    }
}

#[test]
fn full_loss_passes_gradient_check() {
    let m = model64(21);
    let g = path(&[1, 2, 5, 3, 9]);
    let gr = grammar();
    let target: Vec<f64> = Sample::new(&g, &gr)
        .unwrap()
        .contacts
        .iter()
        .map(|&v| f64::from(v))
        .collect();
    let eps: Vec<f64> = (0..32).map(|k| ((k as f64) * 0.37).sin()).collect();
    let g = g.canonicalize();
    let report = grad_check(
        &m.params,
        GradCheckOptions {
            max_per_tensor: 40,
            step: SMOOTH_STEP,
            ..Default::default()
        },
        |tape| {
            let c = m
                .example_loss(tape, &g, &target, LatentNoise::Fixed(&eps))
                .map_err(nn)?;
            m.combine(tape, &c, 0.005, 1.0).map_err(nn)
        },
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
    assert!(report.checked > 1000);
}

#[test]
fn small_model_passes_exhaustive_gradient_check() {
    let m: GraphVae<f64> = GraphVae::new(small_config(2), 5);
    let g = six_node_tree();
    let target = vec![0.25; 16];
    let eps = vec![0.4, -0.2, 1.1, -0.9];
    let report = grad_check(&m.params, GradCheckOptions {
            step: SMOOTH_STEP,
            ..Default::default()
        }, |tape| {
        let c = m
            .example_loss(tape, &g, &target, LatentNoise::Fixed(&eps))
            .map_err(nn)?;
        m.combine(tape, &c, 0.5, 2.0).map_err(nn)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert_eq!(report.checked, m.params.num_scalars());
}

// ---------- training ----------

fn dataset(n: usize, seed0: u64) -> Vec<Sample> {
    let gr = grammar();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let mut seed = seed0;
    while out.len() < n {
        let (g, _) = random_derivation(&gr, seed).unwrap();
        seed += 1;
        if seen.insert(g.canonical_key()) {
            out.push(Sample::new(&g, &gr).unwrap());
        }
    }
    out
}

#[test]
fn one_epoch_writes_one_row() {
    let data = dataset(100, 0);
    let mut m: GraphVae<f32> = GraphVae::new(small_config(2), 0);
    let cfg = TrainingConfig {
        epochs: 1,
        ..Default::default()
    };
    let mut seen = 0;
    let rows = train(&mut m, &data, &cfg, |_| seen += 1).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(seen, 1);
    let mut buf = Vec::new();
    EpochMetrics::write_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("epoch,l_d,l_kl,l_ppn,recon_rate"));
}

#[test]
fn training_is_deterministic() {
    let data = dataset(60, 10);
    let cfg = TrainingConfig {
        epochs: 2,
        batch_size: 8,
        seed: 3,
        ..Default::default()
    };
    let mut a: GraphVae<f32> = GraphVae::new(small_config(2), 1);
    let mut b: GraphVae<f32> = GraphVae::new(small_config(2), 1);
    let ra = train(&mut a, &data, &cfg, |_| {}).unwrap();
    let rb = train(&mut b, &data, &cfg, |_| {}).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.params, b.params);
}

#[test]
fn overfitting_one_design_drives_decoder_loss_down() {
    let data = dataset(1, 40);
    let mut m: GraphVae<f32> = GraphVae::new(VaeConfig::new(11), 2);
    let cfg = TrainingConfig {
        epochs: 500,
        batch_size: 1,
        kl_warmup: 0.0,
        lr: 3e-3,
        final_lr_fraction: 1.0,
        ..Default::default()
    };
    train(&mut m, &data, &cfg, |_| {}).unwrap();
    let s = evaluate_losses(&m, &data).unwrap();
    assert!(s.l_d < 1e-2, "{s:?}");
}

#[test]
fn cosine_schedule_hits_both_ends() {
    let cfg = TrainingConfig {
        lr: 2e-3,
        final_lr_fraction: 0.1,
        ..Default::default()
    };
    assert_eq!(annealed_lr(&cfg, 0, 101), 2e-3);
    assert_abs_diff_eq!(annealed_lr(&cfg, 50, 101), 1.1e-3, epsilon = 1e-15);
    assert_abs_diff_eq!(annealed_lr(&cfg, 100, 101), 2e-4, epsilon = 1e-15);
    let lrs: Vec<f64> = (0..101).map(|s| annealed_lr(&cfg, s, 101)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    let flat = TrainingConfig {
        final_lr_fraction: 1.0,
        ..cfg
    };
    assert!((0..10).all(|s| annealed_lr(&flat, s, 10) == 2e-3));
}

#[test]
fn exploding_parameters_report_the_batch() {
    let data = dataset(10, 0);
    let mut m: GraphVae<f32> = GraphVae::new(small_config(1), 0);
    for t in 0..m.params.len() {
        let id = m.params.ids().nth(t).unwrap();
        m.params.get_mut(id).data.fill(1e30);
    }
    let cfg = TrainingConfig {
        epochs: 1,
        ..Default::default()
    };
    assert!(matches!(
        train(&mut m, &data, &cfg, |_| {}),
        Err(VaeError::NonFiniteGradient { batch: 0 })
    ));
}

#[test]
fn empty_dataset_is_rejected() {
    let mut m: GraphVae<f32> = GraphVae::new(small_config(1), 0);
    assert!(matches!(
        train(&mut m, &[], &TrainingConfig::default(), |_| {}),
        Err(VaeError::DataFormat(_))
    ));
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let gr = grammar();
    let data = dataset(20, 0);
    let mut m: GraphVae<f32> = GraphVae::new(small_config(2), 0);
    let cfg = TrainingConfig {
        epochs: 1,
        ..Default::default()
    };
    train(&mut m, &data, &cfg, |_| {}).unwrap();
    let header = CheckpointHeader {
        d_latent: m.config.d_latent,
        t_mp: m.config.t_mp,
        grammar_hash: gr.hash(),
        model: m.config,
        training: Some(cfg),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &m, &header).unwrap();
    let (back, h2) = load_checkpoint(&path).unwrap();
    assert_eq!(h2, header);
    assert_eq!(back.params, m.params);
    for s in &data {
        let a = m.encode_mean(&s.graph).unwrap();
        let b = back.encode_mean(&s.graph).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            m.decode(&a, DecodeMode::Deterministic).unwrap(),
            back.decode(&b, DecodeMode::Deterministic).unwrap()
        );
    }
}

#[test]
fn dataset_lines_round_trip() {
    let gr = grammar();
    let (g, _) = random_derivation(&gr, 17).unwrap();
    let mut rec = g.to_record();
    let pose_contacts = glso_core::features::contact_vector(&g, &gr).unwrap();
    rec.contacts = Some(pose_contacts.contacts());
    let line = serde_json::to_string(&rec).unwrap();
    let text = format!("{line}\n\n{}\n", serde_json::to_string(&g.to_record()).unwrap());
    let samples = Sample::read_jsonl(text.as_bytes(), &gr).unwrap();
    assert_eq!(samples.len(), 2);
    assert_eq!(samples[0], samples[1]);
    assert!(matches!(
        Sample::read_jsonl("{\"nodes\":[1]".as_bytes(), &gr),
        Err(VaeError::DataFormat(_))
    ));
}
