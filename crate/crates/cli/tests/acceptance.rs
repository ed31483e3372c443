//! Acceptance suite. Runs every criterion in turn and prints one PASS/FAIL
//! line per criterion, then a summary.
//!
//! Set `GLSO_ACCEPTANCE_STRICT=1` to exit nonzero when a criterion fails, and
//! `GLSO_ACCEPTANCE_REUSE=1` to keep datasets and checkpoints from an earlier
//! run in the work directory instead of rebuilding them.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use glso_cli::report::{aggregate, run_label};
use glso_cli::run_from;
use glso_cli::stats::{median, pairwise_distances, spearman};
use glso_core::features::contact_vector;
use glso_core::grammar::{random_derivation, replay, DesignGraph, DesignRecord, Grammar, MAX_NODES};
use glso_core::latent_opt::{
    bo_run, expected_improvement, gp_fit, sq_dist, BoConfig, Bounds, FnObjective,
};
use glso_core::nn::{grad_check, gru_step, GradCheckOptions, GruCellParams, GruInput, NnError, ParamSet, Tape, Var};
use glso_core::records::{read_results_csv, EvalRecord};
use glso_core::vae::{
    kl_divergence, load_checkpoint, DecodeMode, GraphVae, LatentNoise, Sample, VaeConfig, VaeError,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const DESIGNS: usize = 50_000;
const FULL_EPOCHS: usize = 20;
const SMALL_DESIGNS: usize = 10_000;
const SMALL_EPOCHS: usize = 5;
const HELD_OUT: usize = 500;
const BUDGET: usize = 500;
const SEEDS: [u64; 3] = [0, 1, 2];
const TERRAINS: [&str; 4] = ["flat", "frozen_lake", "ridged", "wall"];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict, String> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

struct Suite {
    work: PathBuf,
    reuse: bool,
    grammar: Grammar,
    lines: Vec<(u8, String)>,
    failed: usize,
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_owned()
}

fn glso(args: &[String]) -> Result<(), String> {
    let mut full = vec!["glso".to_owned()];
    full.extend(args.iter().cloned());
    run_from(full).map_err(|e| format!("glso {}: {e}", args.join(" ")))
}

macro_rules! args {
    ($($a:expr),* $(,)?) => { vec![$($a.to_string()),*] };
}

fn read_records(p: &Path) -> Result<Vec<EvalRecord>, String> {
    read_results_csv(File::open(p).map_err(|e| format!("{}: {e}", p.display()))?)
        .map_err(|e| format!("{}: {e}", p.display()))
}

fn final_best(p: &Path) -> Result<f64, String> {
    Ok(read_records(p)?.last().ok_or("empty results")?.best_so_far)
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    matches!((fs::read(a), fs::read(b)), (Ok(x), Ok(y)) if x == y)
}

impl Suite {
    fn path(&self, name: &str) -> PathBuf {
        self.work.join(name)
    }

    fn check(&mut self, id: u8, name: &str, f: impl FnOnce(&mut Suite) -> Result<Verdict, String>) {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(self)))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            })
            .unwrap_or_else(|e| Verdict {
                pass: false,
                detail: format!("error: {e}"),
            });
        let line = format!(
            "{} {:>2} {:<26} {} [{:.0}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            id,
            name,
            outcome.detail,
            t.elapsed().as_secs_f64()
        );
        println!("{line}");
        std::io::stdout().flush().ok();
        if !outcome.pass {
            self.failed += 1;
        }
        self.lines.push((id, line));
    }

    /// Runs `build` unless `out` exists already, from earlier in this run or
    /// from a kept work directory.
    fn build(&self, out: &Path, build: impl FnOnce() -> Result<(), String>) -> Result<(), String> {
        if out.exists() {
            if self.reuse {
                println!("     reusing {}", out.display());
            }
            return Ok(());
        }
        let r = build();
        if r.is_err() {
            let _ = fs::remove_file(out);
        }
        r
    }

    fn dataset(&self) -> Result<PathBuf, String> {
        let out = self.path("grammar.jsonl");
        self.build(&out, || {
            glso(&args!["collect", "--unique", DESIGNS, "--seed", 0, "--out", s(&out)])
        })?;
        Ok(out)
    }

    fn free_dataset(&self) -> Result<PathBuf, String> {
        let out = self.path("free.jsonl");
        self.build(&out, || {
            glso(&args!["collect", "--free-random", "--unique", DESIGNS, "--seed", 0, "--out", s(&out)])
        })?;
        Ok(out)
    }

    fn train(&self, data: &Path, name: &str, epochs: usize, lambda: f64, seed: u64) -> Result<PathBuf, String> {
        let out = self.path(name);
        self.build(&out, || {
            let t = Instant::now();
            glso(&args![
                "train", "--data", s(data), "--epochs", epochs, "--lambda", lambda, "--seed", seed,
                "--quiet", "--out", s(&out)
            ])?;
            println!("     trained {name} in {:.0}s", t.elapsed().as_secs_f64());
            Ok(())
        })?;
        Ok(out)
    }

    fn full_model(&self) -> Result<PathBuf, String> {
        let data = self.dataset()?;
        self.train(&data, "glso.ckpt", FULL_EPOCHS, 1.0, 0)
    }

    fn optimize(&self, model: &Path, task: &str, seed: u64, out: &Path) -> Result<(), String> {
        self.build(out, || {
            glso(&args![
                "optimize", "--model", s(model), "--task", task, "--budget", BUDGET, "--seed", seed,
                "--out", s(out)
            ])
        })
    }

    fn baseline(&self, algo: &str, task: &str, seed: u64, out: &Path) -> Result<(), String> {
        self.build(out, || {
            glso(&args![
                "baseline", "--algo", algo, "--task", task, "--budget", BUDGET, "--seed", seed, "--out",
                s(out)
            ])
        })
    }
}

fn is_rooted_tree(rec: &DesignRecord) -> bool {
    let n = rec.nodes.len();
    if n == 0 || rec.parent.len() != n || rec.parent[0] != -1 {
        return false;
    }
    (1..n).all(|start| {
        let mut seen = HashSet::new();
        let mut i = start;
        while i != 0 {
            if !seen.insert(i) {
                return false;
            }
            match usize::try_from(rec.parent[i]) {
                Ok(p) if p < n => i = p,
                _ => return false,
            }
        }
        true
    })
}

fn valid_design(g: &DesignGraph, grammar: &Grammar) -> bool {
    g.len() <= MAX_NODES && grammar.is_terminal_complete(g) && is_rooted_tree(&g.to_record())
}

fn criterion_1(suite: &mut Suite) -> Result<Verdict, String> {
    let t = Instant::now();
    let mut bad = 0;
    for seed in 0..10_000 {
        let (g, trace) = random_derivation(&suite.grammar, seed).map_err(|e| e.to_string())?;
        let replayed = replay(&suite.grammar, &trace).map_err(|e| e.to_string())?;
        if !valid_design(&g, &suite.grammar) || replayed.serialize() != g.serialize() {
            bad += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        bad == 0 && secs < 30.0,
        format!("10000 derivations, {bad} invalid or non-replaying, {secs:.1}s (limit 30s)"),
    )
}

struct Fx {
    a: glso_core::nn::ParamId,
    b: glso_core::nn::ParamId,
    w: glso_core::nn::ParamId,
    bias: glso_core::nn::ParamId,
    proj: Vec<f64>,
}

type Primitive = Box<dyn Fn(&Fx, &mut Tape<'_, f64>) -> Result<Var, NnError>>;

fn project(t: &mut Tape<'_, f64>, v: Var, proj: &[f64]) -> Result<Var, NnError> {
    let c = t.input(&proj[..t.len_of(v)])?;
    t.dot(v, c)
}

fn primitives() -> Vec<(&'static str, Primitive)> {
    macro_rules! unary {
        ($name:literal, $op:ident) => {
            ($name, Box::new(|fx: &Fx, t: &mut Tape<'_, f64>| {
                let a = t.param(fx.a)?;
                let y = t.$op(a)?;
                project(t, y, &fx.proj)
            }) as Primitive)
        };
    }
    macro_rules! binary {
        ($name:literal, $op:ident) => {
            ($name, Box::new(|fx: &Fx, t: &mut Tape<'_, f64>| {
                let (a, b) = (t.param(fx.a)?, t.param(fx.b)?);
                let y = t.$op(a, b)?;
                project(t, y, &fx.proj)
            }) as Primitive)
        };
    }
    vec![
        binary!("add", add),
        binary!("sub", sub),
        binary!("mul", mul),
        unary!("sigmoid", sigmoid),
        unary!("tanh", tanh),
        unary!("relu", relu),
        unary!("exp", exp),
        unary!("softmax", softmax),
        ("scale", Box::new(|fx, t| {
            let a = t.param(fx.a)?;
            let y = t.scale(a, 2.5)?;
            project(t, y, &fx.proj)
        })),
        ("sum", Box::new(|fx, t| {
            let (a, b) = (t.param(fx.a)?, t.param(fx.b)?);
            let y = t.sum(&[a, b, b])?;
            project(t, y, &fx.proj)
        })),
        ("concat", Box::new(|fx, t| {
            let (a, b) = (t.param(fx.a)?, t.param(fx.b)?);
            let y = t.concat(&[a, b])?;
            let y = t.tanh(y)?;
            project(t, y, &fx.proj)
        })),
        ("sum_all", Box::new(|fx, t| {
            let a = t.param(fx.a)?;
            let y = t.mul(a, a)?;
            t.sum_all(y)
        })),
        ("dot", Box::new(|fx, t| {
            let (a, b) = (t.param(fx.a)?, t.param(fx.b)?);
            t.dot(a, b)
        })),
        ("matvec", Box::new(|fx, t| {
            let a = t.param(fx.a)?;
            let y = t.matvec(fx.w, a)?;
            project(t, y, &fx.proj)
        })),
        ("affine", Box::new(|fx, t| {
            let a = t.param(fx.a)?;
            let y = t.affine(fx.w, fx.bias, a)?;
            let y = t.sigmoid(y)?;
            project(t, y, &fx.proj)
        })),
        ("column", Box::new(|fx, t| {
            let y = t.column(fx.w, 0)?;
            let y = t.tanh(y)?;
            project(t, y, &fx.proj)
        })),
        ("cross_entropy", Box::new(|fx, t| {
            let a = t.param(fx.a)?;
            t.cross_entropy(a, 1)
        })),
        ("bce", Box::new(|fx, t| {
            let a = t.param(fx.a)?;
            let s = t.sum_all(a)?;
            let p = t.sigmoid(s)?;
            t.bce(p, 1.0)
        })),
        ("mse", Box::new(|fx, t| {
            let (a, b) = (t.param(fx.a)?, t.param(fx.b)?);
            t.mse(a, b)
        })),
        ("sq_dist", Box::new(|fx, t| {
            let (a, b) = (t.param(fx.a)?, t.param(fx.b)?);
            t.sq_dist(a, b)
        })),
        ("kl_std_normal", Box::new(|fx, t| {
            let (a, b) = (t.param(fx.a)?, t.param(fx.b)?);
            t.kl_std_normal(a, b)
        })),
    ]
}

fn criterion_2(_suite: &mut Suite) -> Result<Verdict, String> {
    let t = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut note = |name: &str, err: f64| {
        if err >= worst.0 {
            worst = (err, name.to_owned());
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut draw = |k: usize| -> Vec<f64> {
        (0..k)
            .map(|_| {
                let v: f64 = rng.random_range(0.1..1.5);
                if rng.random::<bool>() { v } else { -v }
            })
            .collect()
    };
    let (n, m) = (5, 3);
    let mut params = ParamSet::new();
    let fx = Fx {
        a: params.push("a", vec![n], draw(n)),
        b: params.push("b", vec![n], draw(n)),
        w: params.push("w", vec![m, n], draw(m * n)),
        bias: params.push("bias", vec![m], draw(m)),
        proj: draw(2 * n),
    };
    let prims = primitives();
    for (name, f) in &prims {
        let r = grad_check(&params, GradCheckOptions::default(), |t| f(&fx, t)).map_err(|e| e.to_string())?;
        note(name, r.max_rel_error);
    }

    let mut gp = ParamSet::new();
    let cell = GruCellParams::init(&mut gp, "gru", 4, 6, &mut rng);
    let x = gp.uniform("x", vec![4], 1, &mut rng);
    let m1 = gp.uniform("m1", vec![6], 1, &mut rng);
    let m2 = gp.uniform("m2", vec![6], 1, &mut rng);
    let proj: Vec<f64> = (0..6).map(|k| (k as f64 * 0.9).cos()).collect();
    for k in 0..3 {
        let r = grad_check(&gp, GradCheckOptions::default(), |t| {
            let input = if k == 1 { GruInput::OneHot(2) } else { GruInput::Dense(t.param(x)?) };
            let msgs = [t.param(m1)?, t.param(m2)?];
            let out = gru_step(t, &cell, input, &msgs[..k])?;
            project(t, out, &proj)
        })
        .map_err(|e| e.to_string())?;
        note("gru", r.max_rel_error);
    }

    let grammar = Grammar::default_ruleset();
    let g = DesignGraph::from_parts(&[1, 8, 6, 9, 9], &[-1, 0, 1, 2, 0])
        .map_err(|e| e.to_string())?
        .canonicalize();
    let target: Vec<f64> = Sample::new(&g, &grammar)
        .map_err(|e| e.to_string())?
        .contacts
        .iter()
        .map(|&v| f64::from(v))
        .collect();
    let model: GraphVae<f64> = GraphVae::new(VaeConfig::new(11), 21);
    let eps: Vec<f64> = (0..32).map(|k| (k as f64 * 0.37).sin()).collect();
    let to_nn = |e: VaeError| match e {
        VaeError::Nn(n) => n,
        other => NnError::ShapeMismatch(other.to_string()),
    };
    let r = grad_check(
        &model.params,
        GradCheckOptions {
            step: 1e-6,
            max_per_tensor: 40,
            ..Default::default()
        },
        |tape| {
            let c = model
                .example_loss(tape, &g, &target, LatentNoise::Fixed(&eps))
                .map_err(to_nn)?;
            model.combine(tape, &c, 0.005, 1.0).map_err(to_nn)
        },
    )
    .map_err(|e| e.to_string())?;
    note("full loss", r.max_rel_error);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst.0 < 1e-3 && secs < 60.0,
        format!(
            "{} primitives, GRU and the full loss on a 5-node graph ({} entries); worst rel error {:.2e} ({}), {secs:.1}s",
            prims.len(),
            r.checked,
            worst.0,
            worst.1
        ),
    )
}

fn criterion_3(_suite: &mut Suite) -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let d = 4;
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let lv: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.0)).collect();
        let closed = kl_divergence(&mu, &lv);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            for k in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                let z = mu[k] + (lv[k] / 2.0).exp() * e;
                acc += -0.5 * lv[k] - 0.5 * e * e + 0.5 * z * z;
            }
        }
        let mc = acc / n as f64;
        worst = worst.max((mc - closed).abs() / closed);
    }
    verdict(worst < 0.02, format!("10 draws, 1e6 samples each; worst relative gap {:.3}% (limit 2%)", 100.0 * worst))
}

fn criterion_4(suite: &mut Suite) -> Result<Verdict, String> {
    let (model, _) = load_checkpoint(suite.full_model()?).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut invalid = 0;
    let mut sizes = HashSet::new();
    for i in 0..10_000u64 {
        let z: Vec<f32> = (0..model.config.d_latent).map(|_| rng.sample(StandardNormal)).collect();
        for mode in [DecodeMode::Deterministic, DecodeMode::Stochastic { seed: i }] {
            match model.decode(&z, mode) {
                Ok(g) if valid_design(&g, &suite.grammar) => {
                    sizes.insert(g.len());
                }
                _ => invalid += 1,
            }
        }
    }
    verdict(
        invalid == 0,
        format!("10000 prior samples decoded greedily and by sampling; {invalid} invalid, {} distinct sizes", sizes.len()),
    )
}

fn criterion_5(suite: &mut Suite) -> Result<Verdict, String> {
    let t = Instant::now();
    let model = suite.full_model()?;
    let secs = t.elapsed().as_secs_f64();
    let metrics = fs::read_to_string(glso_cli::commands::sidecar(&model, ".metrics.csv")).map_err(|e| e.to_string())?;
    let last = metrics.lines().last().ok_or("no metrics")?;
    let recon: f64 = last.split(',').nth(4).ok_or("bad metrics row")?.parse().map_err(|_| "bad recon")?;
    let timing = fs::read_to_string(glso_cli::commands::sidecar(&model, ".timing.csv")).map_err(|e| e.to_string())?;
    let train_secs: f64 = timing
        .lines()
        .last()
        .and_then(|l| l.split(',').nth(1))
        .and_then(|v| v.parse().ok())
        .unwrap_or(secs);
    verdict(
        recon >= 0.60 && train_secs <= 7200.0,
        format!(
            "{DESIGNS} designs, {FULL_EPOCHS} epochs in {train_secs:.0}s (limit 7200s); held-out reconstruction {:.1}% (target 60%)",
            100.0 * recon
        ),
    )
}

fn latent_contact_spearman(model_path: &Path, held: &[DesignGraph], grammar: &Grammar) -> Result<f64, String> {
    let (model, _) = load_checkpoint(model_path).map_err(|e| e.to_string())?;
    let mut lat = Vec::with_capacity(held.len());
    let mut con = Vec::with_capacity(held.len());
    for g in held {
        let mu = model.encode_mean(g).map_err(|e| e.to_string())?;
        lat.push(mu.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>());
        con.push(contact_vector(g, grammar).map_err(|e| e.to_string())?.values.to_vec());
    }
    Ok(spearman(&pairwise_distances(&lat), &pairwise_distances(&con)))
}

fn criterion_6(suite: &mut Suite) -> Result<Verdict, String> {
    let data = suite.dataset()?;
    let small = suite.path("small.jsonl");
    let lines: Vec<String> = BufReader::new(File::open(&data).map_err(|e| e.to_string())?)
        .lines()
        .take(SMALL_DESIGNS)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    fs::write(&small, lines.join("\n") + "\n").map_err(|e| e.to_string())?;
    let train_keys: HashSet<String> = lines
        .iter()
        .map(|l| {
            let rec: DesignRecord = serde_json::from_str(l).unwrap();
            DesignGraph::try_from(&rec).unwrap().canonical_key()
        })
        .collect();

    let pool = suite.path("heldout_pool.jsonl");
    glso(&args!["collect", "--unique", 4 * HELD_OUT, "--seed", 6, "--out", s(&pool)])?;
    let held: Vec<DesignGraph> = Sample::read_jsonl(
        BufReader::new(File::open(&pool).map_err(|e| e.to_string())?),
        &suite.grammar,
    )
    .map_err(|e| e.to_string())?
    .into_iter()
    .map(|s| s.graph)
    .filter(|g| !train_keys.contains(&g.canonical_key()))
    .take(HELD_OUT)
    .collect();
    if held.len() < HELD_OUT {
        return Err(format!("only {} held-out designs", held.len()));
    }

    let mut rows = Vec::new();
    let mut all = true;
    for seed in SEEDS {
        let with = suite.train(&small, &format!("ppn_l1_s{seed}.ckpt"), SMALL_EPOCHS, 1.0, seed)?;
        let without = suite.train(&small, &format!("ppn_l0_s{seed}.ckpt"), SMALL_EPOCHS, 0.0, seed)?;
        let r1 = latent_contact_spearman(&with, &held, &suite.grammar)?;
        let r0 = latent_contact_spearman(&without, &held, &suite.grammar)?;
        all &= r1 > r0;
        rows.push(format!("seed {seed}: {r1:.3} vs {r0:.3}"));
    }
    verdict(
        all,
        format!("Spearman(latent, contact) lambda=1 vs lambda=0 on {HELD_OUT} held-out designs; {}", rows.join(", ")),
    )
}

/// Simpson integration of `E[max(Y - b, 0)]` for `Y ~ N(mu, s^2)`.
fn ei_integral(mu: f64, s: f64, b: f64) -> f64 {
    let lo = b.max(mu - 12.0 * s);
    let hi = (mu + 12.0 * s).max(lo);
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let f = |y: f64| {
        (y - b).max(0.0) * (-(y - mu).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

fn criterion_7(_suite: &mut Suite) -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut gp_err: f64 = 0.0;
    for &(n, d) in &[(20usize, 2usize), (200, 8), (150, 32)] {
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|p| p.iter().map(|v| v.sin()).sum::<f64>() + 0.1 * p[0]).collect();
        let m = gp_fit(&x, &y).map_err(|e| e.to_string())?;
        let k = m.kernel;
        let kmat = DMatrix::from_fn(n, n, |i, j| {
            k.eval(&x[i], &x[j]) + if i == j { k.noise_var + m.jitter } else { 0.0 }
        });
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - m.y_mean) / m.y_std));
        let lu = kmat.lu();
        let alpha = lu.solve(&ys).ok_or("singular")?;
        for _ in 0..50 {
            let q: Vec<f64> = (0..d).map(|_| rng.random_range(-2.5..2.5)).collect();
            let kq = DVector::from_iterator(n, x.iter().map(|xi| k.eval(xi, &q)));
            let v = lu.solve(&kq).ok_or("singular")?;
            let mean = m.y_mean + m.y_std * kq.dot(&alpha);
            let var = m.y_std * m.y_std * (k.signal_var - kq.dot(&v)).max(0.0);
            let (gm, gv) = m.posterior(&q);
            gp_err = gp_err.max((gm - mean).abs()).max((gv - var).abs());
        }
    }
    let mut ei_err: f64 = 0.0;
    for _ in 0..100 {
        let mu = rng.random_range(-3.0..3.0);
        let sd = rng.random_range(0.05..2.0);
        let best = rng.random_range(-3.0..3.0);
        ei_err = ei_err.max((expected_improvement(mu, sd, best, 0.0) - ei_integral(mu, sd, best)).abs());
    }
    verdict(
        gp_err < 1e-8 && ei_err < 1e-6,
        format!("posterior vs dense solve max gap {gp_err:.1e} (limit 1e-8); EI vs quadrature {ei_err:.1e} (limit 1e-6)"),
    )
}

fn criterion_8(_suite: &mut Suite) -> Result<Verdict, String> {
    let t = Instant::now();
    let d = 32;
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let target: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |z: &[f64]| -sq_dist(z, &target);
        let cfg = BoConfig {
            budget: 200,
            seed,
            ..Default::default()
        };
        let bo = bo_run(&mut FnObjective(f), d, &cfg).map_err(|e| e.to_string())?;
        let bo_best = bo.last().ok_or("no records")?.best_so_far;
        let b = Bounds::cube(d, -cfg.init_box, cfg.init_box);
        let rs_best = (0..200).map(|_| f(&b.sample(&mut rng))).fold(f64::NEG_INFINITY, f64::max);
        if bo_best > rs_best {
            wins += 1;
        }
        rows.push(format!("{bo_best:.1}/{rs_best:.1}"));
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        wins >= 9 && secs < 300.0,
        format!("BO beat random search in {wins}/10 seeds (need 9), {secs:.0}s (limit 300s); best BO/RS {}", rows.join(" ")),
    )
}

fn compare_methods(runs: &[(String, PathBuf)]) -> Result<Vec<(String, f64)>, String> {
    let mut by_method: Vec<(String, Vec<f64>)> = Vec::new();
    for (label, p) in runs {
        let v = final_best(p)?;
        match by_method.iter_mut().find(|(m, _)| m == label) {
            Some((_, vs)) => vs.push(v),
            None => by_method.push((label.clone(), vec![v])),
        }
    }
    Ok(by_method.into_iter().map(|(m, v)| (m, median(&v))).collect())
}

fn criterion_9(suite: &mut Suite) -> Result<Verdict, String> {
    let model = suite.full_model()?;
    let t = Instant::now();
    let mut all = true;
    let mut rows = Vec::new();
    for task in TERRAINS {
        let mut runs = Vec::new();
        for seed in SEEDS {
            let o = suite.path(&format!("{task}/glso_seed{seed}.csv"));
            fs::create_dir_all(o.parent().unwrap()).map_err(|e| e.to_string())?;
            suite.optimize(&model, task, seed, &o)?;
            runs.push(("glso".to_owned(), o));
            for algo in ["random", "ga"] {
                let o = suite.path(&format!("{task}/{algo}_seed{seed}.csv"));
                suite.baseline(algo, task, seed, &o)?;
                runs.push((algo.to_owned(), o));
            }
        }
        let report = suite.path(&format!("{task}/report"));
        let mut a = args!["report", "--out", s(&report), "--runs"];
        a.extend(runs.iter().map(|(_, p)| s(p)));
        glso(&a)?;
        let curves = fs::read_to_string(report.join("curves.csv")).map_err(|e| e.to_string())?;
        let curve_ok = curves.lines().next() == Some("method,evals,mean,min,max")
            && curves.lines().count() == 1 + 3 * BUDGET;
        let labels: Vec<String> = runs.iter().map(|(_, p)| run_label(&s(p)).0).collect();
        let loaded: Vec<(String, Vec<EvalRecord>)> = runs
            .iter()
            .zip(&labels)
            .map(|((_, p), l)| Ok((l.clone(), read_records(p)?)))
            .collect::<Result<_, String>>()?;
        let seeds_ok = aggregate(&loaded, BUDGET).iter().all(|c| c.seeds == SEEDS.len());
        let med = compare_methods(&runs)?;
        let get = |m: &str| med.iter().find(|(k, _)| k == m).map(|(_, v)| *v).unwrap();
        let (g, r, ga) = (get("glso"), get("random"), get("ga"));
        let ok = g >= r && g >= ga && curve_ok && seeds_ok;
        all &= ok;
        rows.push(format!("{task} {g:.3}/{r:.3}/{ga:.3}{}", if ok { "" } else { " (fails)" }));
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        all && secs < 1800.0,
        format!("median final best GLSO/random/GA: {}; {secs:.0}s (limit 1800s)", rows.join(", ")),
    )
}

fn criterion_10(suite: &mut Suite) -> Result<Verdict, String> {
    let full = suite.full_model()?;
    let data = suite.dataset()?;
    let nopred = suite.train(&data, "nopred.ckpt", FULL_EPOCHS, 0.0, 0)?;
    let free = suite.free_dataset()?;
    let nogram = suite.train(&free, "nogram.ckpt", FULL_EPOCHS, 1.0, 0)?;
    let mut runs = Vec::new();
    for seed in SEEDS {
        let o = suite.path(&format!("flat/glso_seed{seed}.csv"));
        fs::create_dir_all(o.parent().unwrap()).map_err(|e| e.to_string())?;
        suite.optimize(&full, "flat", seed, &o)?;
        runs.push(("glso".to_owned(), o));
        for (name, model) in [("nopred", &nopred), ("nogram", &nogram)] {
            let o = suite.path(&format!("flat/{name}_seed{seed}.csv"));
            suite.optimize(model, "flat", seed, &o)?;
            runs.push((name.to_owned(), o));
        }
    }
    let med = compare_methods(&runs)?;
    let get = |m: &str| med.iter().find(|(k, _)| k == m).map(|(_, v)| *v).unwrap();
    let (g, np, ng) = (get("glso"), get("nopred"), get("nogram"));
    verdict(
        g >= np && g >= ng,
        format!("flat median final best GLSO {g:.3}, nopred {np:.3}, nogram {ng:.3}"),
    )
}

fn criterion_11(suite: &mut Suite) -> Result<Verdict, String> {
    let again = suite.path("again");
    fs::create_dir_all(&again).map_err(|e| e.to_string())?;
    let mut checked = Vec::new();
    let mut diffs = Vec::new();
    let mut compare = |name: &str, a: PathBuf, b: PathBuf| {
        checked.push(name.to_owned());
        if !same_bytes(&a, &b) {
            diffs.push(name.to_owned());
        }
    };

    let d = again.join("grammar.jsonl");
    glso(&args!["collect", "--unique", DESIGNS, "--seed", 0, "--out", s(&d)])?;
    compare("dataset", suite.dataset()?, d);

    let small = suite.path("small.jsonl");
    let m = again.join("ppn_l1_s0.ckpt");
    glso(&args![
        "train", "--data", s(&small), "--epochs", SMALL_EPOCHS, "--lambda", 1.0, "--seed", 0, "--quiet",
        "--out", s(&m)
    ])?;
    compare("checkpoint", suite.path("ppn_l1_s0.ckpt"), m.clone());
    compare(
        "metrics",
        suite.path("ppn_l1_s0.ckpt.metrics.csv"),
        glso_cli::commands::sidecar(&m, ".metrics.csv"),
    );

    let o = again.join("glso_seed0.csv");
    glso(&args![
        "optimize", "--model", s(&suite.full_model()?), "--task", "flat", "--budget", BUDGET, "--seed", 0,
        "--out", s(&o)
    ])?;
    compare("optimize", suite.path("flat/glso_seed0.csv"), o);
    for algo in ["random", "ga"] {
        let o = again.join(format!("{algo}_seed1.csv"));
        glso(&args![
            "baseline", "--algo", algo, "--task", "ridged", "--budget", BUDGET, "--seed", 1, "--out", s(&o)
        ])?;
        compare(algo, suite.path(&format!("ridged/{algo}_seed1.csv")), o);
    }
    let report = again.join("report");
    let mut a = args!["report", "--out", s(&report), "--runs"];
    for seed in SEEDS {
        for m in ["glso", "random", "ga"] {
            a.push(s(&suite.path(&format!("wall/{m}_seed{seed}.csv"))));
        }
    }
    glso(&a)?;
    compare("report", suite.path("wall/report/curves.csv"), report.join("curves.csv"));

    verdict(
        diffs.is_empty(),
        format!(
            "reran {}; {}",
            checked.join(", "),
            if diffs.is_empty() { "all byte-identical".to_owned() } else { format!("differs: {}", diffs.join(", ")) }
        ),
    )
}

fn main() {
    let work = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let reuse = std::env::var_os("GLSO_ACCEPTANCE_REUSE").is_some();
    if !reuse {
        let _ = fs::remove_dir_all(&work);
    }
    fs::create_dir_all(&work).expect("work directory");
    println!("acceptance work directory {}", work.display());
    let started = Instant::now();
    let mut suite = Suite {
        work,
        reuse,
        grammar: Grammar::default_ruleset(),
        lines: Vec::new(),
        failed: 0,
    };
    suite.check(1, "grammar soundness", criterion_1);
    suite.check(2, "gradient integrity", criterion_2);
    suite.check(3, "KL correctness", criterion_3);
    suite.check(7, "GP/EI correctness", criterion_7);
    suite.check(8, "BO sanity", criterion_8);
    suite.check(5, "reconstruction", criterion_5);
    suite.check(4, "decoder totality", criterion_4);
    suite.check(6, "PPN latent structure", criterion_6);
    suite.check(9, "end-to-end comparison", criterion_9);
    suite.check(10, "ablation directionality", criterion_10);
    suite.check(11, "determinism", criterion_11);

    suite.lines.sort_by_key(|(id, _)| *id);
    println!("\nacceptance summary ({:.0} min)", started.elapsed().as_secs_f64() / 60.0);
    for (_, line) in &suite.lines {
        println!("{line}");
    }
    if suite.failed > 0 {
        println!("{} of {} criteria FAILED", suite.failed, suite.lines.len());
        if std::env::var_os("GLSO_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
