//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! The end-to-end search check (6) runs at a reduced scale by default so the suite
//! finishes on one core; set `RLDARTS_FULL_SCALE=1` for the full protocol.
//! `RLDARTS_ACCEPTANCE_OUT=dir` keeps its run directories.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rldarts::diffcore::{grad_check_all, ActKind, Graph, NodeId, ParamKind, ParamStore, PoolKind};
use rldarts::discretize::{discretize, CellPair};
use rldarts::envs::{normalized_score, EnvConfig, GameKind, LevelMode};
use rldarts::harness::{
    ablation, evaluate, jacobian_covariance_score, run_pipeline, run_search, AblationKind,
    ExperimentRecord, Phase, RunConfig,
};
use rldarts::rl::{dqn_loss, ppo_loss, Algorithm, PpoConfig};
use rldarts::searchspace::{
    builtin_opset, enumerate_cells, sample_random_cell, search_space_size, CellTopology, OpKind,
    OPSET_NAMES,
};
use rldarts::supernet::{
    build_discrete_network, build_supernet, copy_matching_params, ArchParams, CellRole,
    SupernetConfig,
};
use rldarts::Tensor;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Values in ±[0.01, 1]: away from the ReLU kink.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.random_range(0.01..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn search_space_arithmetic() -> Outcome {
    let micro = search_space_size(4, 4, 2).unwrap();
    let nz = |name: &str| builtin_opset(name).unwrap().nonzero_count();
    let classic = search_space_size(nz("classic_normal"), 4, 2).unwrap()
        * search_space_size(nz("classic_reduction"), 4, 2).unwrap();
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for name in OPSET_NAMES {
        let set = builtin_opset(name).unwrap();
        for nodes in 1..=6 {
            for top_k in 1..=2 {
                let size = search_space_size(set.nonzero_count(), nodes, top_k).unwrap();
                if size > 1_000_000 {
                    continue;
                }
                let topo = CellTopology::new(nodes, top_k).unwrap();
                let cells = enumerate_cells(&set, &topo, Default::default()).unwrap();
                let distinct: std::collections::HashSet<_> = cells.iter().collect();
                if cells.len() as u128 != size || distinct.len() != cells.len() {
                    mismatches.push(format!("{name} I={nodes} K={top_k}"));
                }
                checked += 1;
            }
        }
    }
    let pass = micro == 294_912 && classic == 414_720_000_000 && mismatches.is_empty();
    Outcome::new(
        pass,
        format!("micro {micro}, classic {classic}, enumeration matches on {checked} spaces, mismatches {mismatches:?}"),
    )
}

/// Worst finite-difference error of `build` over every parameter.
fn fd(
    store: &mut ParamStore<f64>,
    build: impl Fn(&mut Graph<'_, f64>) -> rldarts::Result<NodeId>,
) -> f64 {
    grad_check_all(store, 1e-6, build).unwrap()
}

/// Scalarizes `y` with fixed random coefficients.
fn project(g: &mut Graph<'_, f64>, y: NodeId, seed: u64) -> rldarts::Result<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let coeffs = rand_tensor(&mut rng, &shape, 1.0);
    g.dot_const(y, coeffs)
}

fn gradient_correctness() -> Outcome {
    const CONFIGS: u64 = 20;
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64| match worst.iter_mut().find(|(n, _)| *n == name)
    {
        Some((_, w)) => *w = w.max(err),
        None => worst.push((name, err)),
    };
    for c in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + c);
        let n = rng.random_range(1..=2);
        let h = rng.random_range(3..=6);
        let w = rng.random_range(3..=6);
        let cin = rng.random_range(1..=3);
        let shape = [n, h, w, cin];

        // conv2d
        let k = [1, 3, 5][rng.random_range(0..3)];
        let cout = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let dilation = rng.random_range(1..=2);
        let mut s = ParamStore::new();
        let x = s.add("x", rand_tensor(&mut rng, &shape, 1.0), ParamKind::Weight);
        let kk = s.add(
            "k",
            rand_tensor(&mut rng, &[k, k, cin, cout], 1.0),
            ParamKind::Weight,
        );
        let b = s.add("b", rand_tensor(&mut rng, &[cout], 1.0), ParamKind::Weight);
        record(
            "conv2d",
            fd(&mut s, |g| {
                let (xn, kn, bn) = (g.param(x), g.param(kk), g.param(b));
                let y = g.conv2d(xn, kn, Some(bn), stride, dilation)?;
                project(g, y, c)
            }),
        );

        // pooling and subsampling
        for (name, kind) in [("max_pool", PoolKind::Max), ("avg_pool", PoolKind::Avg)] {
            let stride = rng.random_range(1..=2);
            let mut s = ParamStore::new();
            let x = s.add("x", rand_tensor(&mut rng, &shape, 1.0), ParamKind::Weight);
            record(
                name,
                fd(&mut s, |g| {
                    let xn = g.param(x);
                    let y = g.pool2d(xn, kind, stride)?;
                    project(g, y, c)
                }),
            );
        }
        let mut s = ParamStore::new();
        let x = s.add("x", rand_tensor(&mut rng, &shape, 1.0), ParamKind::Weight);
        record(
            "subsample",
            fd(&mut s, |g| {
                let xn = g.param(x);
                let y = g.subsample(xn, 2)?;
                project(g, y, c)
            }),
        );

        // pointwise activations
        for (name, kind) in [
            ("relu", ActKind::Relu),
            ("tanh", ActKind::Tanh),
            ("identity", ActKind::Identity),
        ] {
            let mut s = ParamStore::new();
            let x = s.add("x", off_kink(&mut rng, &shape), ParamKind::Weight);
            record(
                name,
                fd(&mut s, |g| {
                    let xn = g.param(x);
                    let y = g.activation(xn, kind);
                    project(g, y, c)
                }),
            );
        }

        // dense algebra
        let (rows, d, m) = (
            rng.random_range(1..=4),
            rng.random_range(1..=5),
            rng.random_range(1..=5),
        );
        let mut s = ParamStore::new();
        let x = s.add(
            "x",
            rand_tensor(&mut rng, &[rows, d], 1.0),
            ParamKind::Weight,
        );
        let wt = s.add("w", rand_tensor(&mut rng, &[d, m], 1.0), ParamKind::Weight);
        let b = s.add("b", rand_tensor(&mut rng, &[m], 1.0), ParamKind::Weight);
        record(
            "affine",
            fd(&mut s, |g| {
                let (xn, wn, bn) = (g.param(x), g.param(wt), g.param(b));
                let y = g.affine(xn, wn, bn)?;
                project(g, y, c)
            }),
        );

        let terms = rng.random_range(1..=3);
        let mut s = ParamStore::new();
        let xs: Vec<_> = (0..terms)
            .map(|i| {
                s.add(
                    format!("x{i}"),
                    rand_tensor(&mut rng, &shape, 1.0),
                    ParamKind::Weight,
                )
            })
            .collect();
        record(
            "add",
            fd(&mut s, |g| {
                let nodes: Vec<_> = xs.iter().map(|&p| g.param(p)).collect();
                let y = g.add(&nodes)?;
                project(g, y, c)
            }),
        );
        record(
            "concat",
            fd(&mut s, |g| {
                let nodes: Vec<_> = xs.iter().map(|&p| g.param(p)).collect();
                let y = g.concat(&nodes)?;
                project(g, y, c)
            }),
        );
        record(
            "reshape+flatten+sum",
            fd(&mut s, |g| {
                let xn = g.param(xs[0]);
                let flat = g.flatten(xn)?;
                let len: usize = shape.iter().product();
                let back = g.reshape(flat, &[len])?;
                let y = g.activation(back, ActKind::Tanh);
                Ok(g.sum(y))
            }),
        );

        let ops = rng.random_range(2..=6);
        let temperature = [0.1, 0.2, 1.0][rng.random_range(0..3)];
        let mut s = ParamStore::new();
        let logits = s.add("a", rand_tensor(&mut rng, &[ops], 1.0), ParamKind::Arch);
        let xs: Vec<_> = (0..ops)
            .map(|i| {
                s.add(
                    format!("x{i}"),
                    rand_tensor(&mut rng, &shape, 1.0),
                    ParamKind::Weight,
                )
            })
            .collect();
        record(
            "softmax",
            fd(&mut s, |g| {
                let an = g.param(logits);
                let p = g.softmax(an, temperature)?;
                project(g, p, c)
            }),
        );
        record(
            "weighted_sum",
            fd(&mut s, |g| {
                let an = g.param(logits);
                let p = g.softmax(an, temperature)?;
                let terms: Vec<_> = xs
                    .iter()
                    .enumerate()
                    .map(|(k, &x)| (g.param(x), k))
                    .collect();
                let y = g.weighted_sum(&terms, p)?;
                project(g, y, c)
            }),
        );

        let actions = rng.random_range(2..=5);
        let mut s = ParamStore::new();
        let v = s.add(
            "v",
            rand_tensor(&mut rng, &[rows, 1], 1.0),
            ParamKind::Weight,
        );
        let a = s.add(
            "a",
            rand_tensor(&mut rng, &[rows, actions], 1.0),
            ParamKind::Weight,
        );
        record(
            "dueling",
            fd(&mut s, |g| {
                let (vn, an) = (g.param(v), g.param(a));
                let q = g.dueling(vn, an)?;
                project(g, q, c)
            }),
        );

        // RL losses on top of a small linear policy/value model
        let batch = rng.random_range(2..=6);
        let feat = rng.random_range(2..=4);
        let obs = rand_tensor(&mut rng, &[batch, feat], 1.0);
        let mut s = ParamStore::new();
        let pw = s.add(
            "pw",
            rand_tensor(&mut rng, &[feat, actions], 1.0),
            ParamKind::Weight,
        );
        let pb = s.add(
            "pb",
            rand_tensor(&mut rng, &[actions], 1.0),
            ParamKind::Weight,
        );
        let vw = s.add(
            "vw",
            rand_tensor(&mut rng, &[feat, 1], 1.0),
            ParamKind::Weight,
        );
        let vb = s.add("vb", rand_tensor(&mut rng, &[1], 1.0), ParamKind::Weight);
        let acts: Vec<usize> = (0..batch).map(|_| rng.random_range(0..actions)).collect();
        let logp_old: Vec<f64> = (0..batch).map(|_| rng.random_range(-2.5..-0.5)).collect();
        let adv: Vec<f64> = (0..batch).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ret: Vec<f64> = (0..batch).map(|_| rng.random_range(-2.0..2.0)).collect();
        let targets: Vec<f64> = (0..batch).map(|_| rng.random_range(-4.0..4.0)).collect();
        let cfg = PpoConfig {
            entropy_coef: rng.random_range(0.0..0.05),
            ..PpoConfig::default()
        };
        record(
            "ppo_loss",
            fd(&mut s, |g| {
                let x = g.input(obs.clone());
                let (pwn, pbn, vwn, vbn) = (g.param(pw), g.param(pb), g.param(vw), g.param(vb));
                let logits = g.affine(x, pwn, pbn)?;
                let values = g.affine(x, vwn, vbn)?;
                ppo_loss(g, logits, values, &acts, &logp_old, &adv, &ret, &cfg)
            }),
        );
        let delta = rng.random_range(0.5..2.0);
        record(
            "dqn_loss",
            fd(&mut s, |g| {
                let x = g.input(obs.clone());
                let (pwn, pbn, vwn, vbn) = (g.param(pw), g.param(pb), g.param(vw), g.param(vb));
                let a = g.affine(x, pwn, pbn)?;
                let v = g.affine(x, vwn, vbn)?;
                let q = g.dueling(v, a)?;
                dqn_loss(g, q, &acts, &targets, delta)
            }),
        );
    }
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let failing: Vec<_> = worst.iter().filter(|(_, e)| *e >= 1e-4).collect();
    Outcome::new(
        failing.is_empty(),
        format!(
            "{} checks x {CONFIGS} configs in f64, max relative error {max:.2e}, failing {failing:?}",
            worst.len()
        ),
    )
}

fn max_rel(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-6))
        .fold(0.0, f64::max)
}

fn one_hot_consistency() -> Outcome {
    let cfg = SupernetConfig {
        depths: vec![4, 4],
        feature_dim: 8,
        ..SupernetConfig::default()
    };
    let topo = cfg.topology().unwrap();
    let set = cfg.normal_set().unwrap();
    let shape = [8, 8, 3];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut forward_ok, mut inverse_ok, mut worst) = (0, 0, 0.0f64);
    for i in 0..100 {
        let cell = sample_random_cell(&mut rng, &set, &topo, cfg.merge);
        let arch = ArchParams::one_hot(CellRole::Normal, &cell, &set, &topo, cfg.temperature, 20.0)
            .unwrap();
        let mut sup = build_supernet::<f64>(&cfg, shape, i).unwrap();
        sup.set_arch_params(&arch).unwrap();
        let mut disc = build_discrete_network::<f64>(&cfg, &cell, None, shape, i + 1000).unwrap();
        copy_matching_params(&sup.params, &mut disc.params);
        let x = rand_tensor(&mut rng, &[2, 8, 8, 3], 1.0).map(f64::abs);
        let err = max_rel(
            &disc.features(x.clone()).unwrap(),
            &sup.features(x).unwrap(),
        );
        worst = worst.max(err);
        forward_ok += usize::from(err < 1e-5);
        inverse_ok += usize::from(discretize(&arch, cfg.top_k, cfg.merge).unwrap() == cell);
    }
    Outcome::new(
        forward_ok == 100 && inverse_ok == 100,
        format!("forward match {forward_ok}/100 (worst rel {worst:.1e}), discretize inverts {inverse_ok}/100"),
    )
}

fn discretization_contract() -> Outcome {
    let set = builtin_opset("micro").unwrap();
    let topo = CellTopology::new(4, 2).unwrap();
    let merge = Default::default();
    let zero = set.index_of(OpKind::Zero).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    for _ in 0..1000 {
        let scale = rng.random_range(0.1..5.0);
        let mut arch = ArchParams::uniform(CellRole::Normal, &set, &topo, 1.0);
        for v in arch.logits.values_mut() {
            v.iter_mut()
                .for_each(|x| *x = rng.random_range(-scale..scale));
        }
        // Expected op per edge: argmax of the logits over non-Zero ops.
        let best = |edge| {
            let l: &Vec<f64> = &arch.logits[&edge];
            (0..l.len())
                .filter(|&k| k != zero)
                .max_by(|&a, &b| l[a].total_cmp(&l[b]))
                .map(|k| set.ops[k])
                .unwrap()
        };
        let mut ok = true;
        for t in [0.1, 0.2, 1.0] {
            arch.temperature = t;
            let cell = discretize(&arch, topo.top_k, merge).unwrap();
            ok &= cell.validate(Some(&topo)).is_ok();
            ok &= cell.ops().all(|op| op != OpKind::Zero);
            for (idx, edges) in cell.nodes.iter().enumerate() {
                ok &= edges.iter().all(|e| e.op == best((e.from, idx + 1)));
            }
        }
        bad += usize::from(!ok);
    }
    Outcome::new(
        bad == 0,
        format!(
            "{}/1000 draws satisfy the contract at τ ∈ {{0.1, 0.2, 1.0}}",
            1000 - bad
        ),
    )
}

fn dueling_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (n, d, actions) = (
            rng.random_range(1..=8),
            rng.random_range(1..=16),
            rng.random_range(2..=15),
        );
        let scale = rng.random_range(0.01..10.0);
        let mut s = ParamStore::new();
        let vw = s.add(
            "vw",
            rand_tensor(&mut rng, &[d, 1], scale),
            ParamKind::Weight,
        );
        let vb = s.add("vb", rand_tensor(&mut rng, &[1], scale), ParamKind::Weight);
        let aw = s.add(
            "aw",
            rand_tensor(&mut rng, &[d, actions], scale),
            ParamKind::Weight,
        );
        let ab = s.add(
            "ab",
            rand_tensor(&mut rng, &[actions], scale),
            ParamKind::Weight,
        );
        let feats = rand_tensor(&mut rng, &[n, d], scale);
        let mut g = Graph::new(&s);
        let x = g.input(feats);
        let (vwn, vbn, awn, abn) = (g.param(vw), g.param(vb), g.param(aw), g.param(ab));
        let v = g.affine(x, vwn, vbn).unwrap();
        let a = g.affine(x, awn, abn).unwrap();
        let q = g.dueling(v, a).unwrap();
        for i in 0..n {
            let row = &g.value(q).data()[i * actions..(i + 1) * actions];
            let mean = row.iter().sum::<f64>() / actions as f64;
            worst = worst.max((mean - g.value(v).data()[i]).abs());
        }
    }
    Outcome::new(
        worst < 1e-6,
        format!("max |mean_a Q − V| = {worst:.1e} over 1000 draws"),
    )
}

fn normalized_score_algebra() -> Outcome {
    let (r_min, r_max) = (-12.8, 10.0);
    let top = normalized_score(r_max, r_min, r_max).unwrap();
    let bottom = normalized_score(r_min, r_min, r_max).unwrap();
    let below = normalized_score(2.0 - 12.0, 2.0, 27.0).unwrap();
    let pass = top == 1.0
        && bottom == 0.0
        && below == -0.48
        && normalized_score(-20.0, r_min, r_max).unwrap() < 0.0;
    Outcome::new(
        pass,
        format!("R_max → {top}, R_min → {bottom}, 12 below R_min on a 25 range → {below}"),
    )
}

fn jacobian_metric() -> Outcome {
    let eps = 1e-5;
    let (b, f) = (8, 16);
    // Rows 1..=8 of the order-16 Sylvester Hadamard matrix: orthogonal and zero mean.
    let data = (1..=b)
        .flat_map(|i| {
            (0..f).map(move |j: usize| {
                if (i & j).count_ones() % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
        })
        .collect();
    let rows = Tensor::from_vec(&[b, f], data).unwrap();
    let score = jacobian_covariance_score(&rows, eps).unwrap();
    let formula = -(b as f64) * ((1.0 + eps).ln() + 1.0 / (1.0 + eps));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let random = rand_tensor(&mut rng, &[b, 32], 1.0);
    let factors: Vec<f64> = (0..b).map(|_| rng.random_range(0.1..100.0)).collect();
    let scaled = Tensor::from_vec(
        &[b, 32],
        random
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * factors[i / 32])
            .collect(),
    )
    .unwrap();
    let (s0, s1) = (
        jacobian_covariance_score(&random, eps).unwrap(),
        jacobian_covariance_score(&scaled, eps).unwrap(),
    );
    let invariant = (s0 - s1).abs() <= 1e-9 * s0.abs();
    let pass = (score - formula).abs() < 1e-9 && (score + b as f64).abs() < 1e-6 && invariant;
    Outcome::new(
        pass,
        format!(
            "orthogonal rows {score:.9} (formula {formula:.9}), row scaling {s0:.6} vs {s1:.6}"
        ),
    )
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv" || e == "jsonl") {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn reproducibility(work: &Path) -> Outcome {
    let smoke =
        RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml"))
            .unwrap();
    let mut compared = 0;
    let mut differing = Vec::new();
    for algorithm in [Algorithm::Ppo, Algorithm::Dqn] {
        let mut cfg = smoke.clone();
        cfg.phase = Phase::Pipeline;
        cfg.train.algorithm = algorithm;
        cfg.train.workers = 1;
        cfg.eval.jobs = 1;
        let name = algorithm.as_str();
        let (a, b) = (
            work.join(format!("repro_{name}_a")),
            work.join(format!("repro_{name}_b")),
        );
        let ra = run_pipeline(&cfg, &a).unwrap();
        let rb = run_pipeline(&cfg, &b).unwrap();
        assert_eq!(ra.config_hash, rb.config_hash);
        let files = csv_files(&a);
        assert!(files.len() >= 3, "{name}: only {files:?}");
        for f in &files {
            compared += 1;
            if std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap() {
                differing.push(format!("{name}/{}", f.display()));
            }
        }
    }
    Outcome::new(
        differing.is_empty(),
        format!("{compared} metrics/α files compared across repeated PPO and DQN pipelines, differing {differing:?}"),
    )
}

fn desk_search(work: &Path, full: bool) -> Outcome {
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut cfg = RunConfig {
        name: "desk_search".into(),
        env: EnvConfig {
            games: vec![GameKind::Chase],
            level_mode: LevelMode::Infinite,
            ..EnvConfig::default()
        },
        supernet: SupernetConfig {
            normal_opset: "micro".into(),
            depths: vec![8, 8],
            nodes: 4,
            top_k: 2,
            ..SupernetConfig::default()
        },
        ..RunConfig::default()
    };
    cfg.eval.depths = vec![16, 16];
    cfg.eval.seeds = vec![0, 1, 2];
    cfg.eval.jobs = jobs;
    cfg.analysis.tasks.clear();
    let random_seeds: fn(u64) -> Vec<u64>;
    if full {
        cfg.train.budget = 200_000;
        cfg.eval.budget = 100_000;
        random_seeds = |_| vec![0, 1, 2];
    } else {
        cfg.env.size = 8;
        cfg.train.budget = 20_000;
        cfg.eval.budget = 10_000;
        random_seeds = |i| vec![100 + i];
    }
    cfg.validate().unwrap();
    let scale = if full {
        "full scale".to_string()
    } else {
        format!(
            "REDUCED scale (size {}, search {} / eval {} steps, random cells 1 seed each)",
            cfg.env.size, cfg.train.budget, cfg.eval.budget
        )
    };
    let out = work.join("desk_search");

    // (a) trainable vs frozen-uniform α supernets over 3 seeds
    let uniform = ablation(&cfg, AblationKind::UniformAlpha, &out).unwrap();
    let trainable = uniform.control_score.clone().unwrap().mean;
    let frozen = uniform.treatment_score.mean;

    // (b) final distinct cell of the seed-0 search vs 10 random cells
    let mut rec = ExperimentRecord::new(&cfg).unwrap();
    run_search(&cfg, &out.join("search"), &mut rec).unwrap();
    let final_cell = rec.distinct_cells.last().unwrap().cell.clone();
    let searched = evaluate(&cfg, &final_cell, &out.join("search"), "eval")
        .unwrap()
        .score
        .mean;
    let topo = cfg.supernet.topology().unwrap();
    let set = cfg.supernet.normal_set().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let mut random_means = Vec::new();
    for i in 0..10 {
        let cell = CellPair {
            normal: sample_random_cell(&mut rng, &set, &topo, cfg.supernet.merge),
            reduction: None,
        };
        let mut rcfg = cfg.clone();
        rcfg.eval.seeds = random_seeds(i);
        random_means.push(
            evaluate(&rcfg, &cell, &out.join("random"), &format!("cell_{i:02}"))
                .unwrap()
                .score
                .mean,
        );
    }
    let random = random_means.iter().sum::<f64>() / random_means.len() as f64;

    // (c) classic space with and without ReLU
    let norelu = ablation(&cfg, AblationKind::NoreluSpace, &out).unwrap();
    let (without, with) = (
        norelu.treatment_score.mean,
        norelu.control_score.clone().unwrap().mean,
    );

    let (a, b, c) = (trainable > frozen, searched >= random, without < with);
    Outcome::new(
        a && b && c,
        format!(
            "{scale}; (a) {} trainable α {trainable:.3} vs uniform α {frozen:.3}; \
             (b) {} final cell {searched:.3} vs 10 random cells {random:.3}; \
             (c) {} no-ReLU {without:.3} vs ReLU {with:.3}",
            verdict(a),
            verdict(b),
            verdict(c)
        ),
    )
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn run(id: u32, title: &str, hard: bool, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Outcome::new(false, format!("panicked: {msg}"))
    });
    println!(
        "criterion {id} [{}] {title}: {} ({:.1} s){}",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        start.elapsed().as_secs_f64(),
        if !outcome.pass && !hard {
            " [directional, reported only]"
        } else {
            ""
        },
    );
    outcome.pass || !hard
}

fn main() {
    // Respect `cargo test -- <filter>` style invocations that target other tests.
    if std::env::args().skip(1).any(|a| !a.starts_with('-')) {
        return;
    }
    let full = std::env::var("RLDARTS_FULL_SCALE").is_ok_and(|v| v == "1");
    let tmp = tempfile::tempdir().unwrap();
    let work = std::env::var_os("RLDARTS_ACCEPTANCE_OUT")
        .map_or_else(|| tmp.path().to_path_buf(), PathBuf::from);
    std::fs::create_dir_all(&work).unwrap();

    let mut ok = true;
    ok &= run(1, "search-space arithmetic", true, search_space_arithmetic);
    ok &= run(2, "gradient correctness", true, gradient_correctness);
    ok &= run(
        3,
        "one-hot/discretization consistency",
        true,
        one_hot_consistency,
    );
    ok &= run(4, "discretization contract", true, discretization_contract);
    ok &= run(5, "dueling identity", true, dueling_identity);
    ok &= run(6, "desk-scale end-to-end search", full, || {
        desk_search(&work, full)
    });
    ok &= run(
        7,
        "normalized-score algebra",
        true,
        normalized_score_algebra,
    );
    ok &= run(8, "Jacobian-covariance metric", true, jacobian_metric);
    ok &= run(9, "reproducibility", true, || reproducibility(&work));
    if !ok {
        std::process::exit(1);
    }
}
