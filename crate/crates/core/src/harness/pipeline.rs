use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::analysis::{
    correlation_analysis, jacobian_covariance_score, jacobian_rows, probe_batch,
};
use super::config::{AblationKind, Phase, RunConfig};
use super::record::{
    AblationOutcome, AnalysisOutcome, CellEntry, EvalOutcome, EvolutionPoint, ExperimentRecord,
    RandomSearchOutcome, RunSummary, SpaceReport, TaskScores,
};
use crate::discretize::{
    discretize_snapshot, distinct_cell_sequence, read_alpha_log, write_alpha_log, AlphaSnapshot,
    CellPair,
};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::rl::{
    derive_seed, random_search, train, train_cell, write_metrics_csv, CellScore, RunResult,
    TrainConfig,
};
use crate::searchspace::{builtin_opset, enumerate_cells, search_space_size, CellTopology};
use crate::supernet::{
    build_baseline_encoder, build_discrete_network, build_supernet, BaselineVariant, DiscreteCell,
    SupernetConfig,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const ALPHA_LOG_FILE: &str = "alpha_log.jsonl";
pub const CELL_FILE: &str = "cell.json";

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        mkdir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Maps `f` over `items` on up to `jobs` threads, keeping input order.
fn par_map<T, R, F>(items: Vec<T>, jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> Result<R> + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let mut groups: Vec<Vec<T>> = Vec::new();
    let mut it = items.into_iter().peekable();
    while it.peek().is_some() {
        groups.push(it.by_ref().take(chunk).collect());
    }
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = groups
            .into_iter()
            .map(|g| scope.spawn(move || g.into_iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::new();
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

/// Writes `stem.json` (the pair) and `stem.dot` (normal cell; reduction cell in
/// `stem.reduction.dot`). Returns the JSON path.
pub fn write_cell_files(dir: &Path, stem: &str, pair: &CellPair) -> Result<PathBuf> {
    mkdir(dir)?;
    let json = dir.join(format!("{stem}.json"));
    write_text(&json, &(serde_json::to_string_pretty(pair)? + "\n"))?;
    write_text(
        &dir.join(format!("{stem}.dot")),
        &pair.normal.to_dot(&format!("{stem} normal")),
    )?;
    if let Some(r) = &pair.reduction {
        write_text(
            &dir.join(format!("{stem}.reduction.dot")),
            &r.to_dot(&format!("{stem} reduction")),
        )?;
    }
    Ok(json)
}

/// Reads a cell file holding either a normal/reduction pair or a bare cell.
pub fn load_cell_file(path: &Path) -> Result<CellPair> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(pair) = serde_json::from_str::<CellPair>(&text) {
        return Ok(pair);
    }
    Ok(CellPair {
        normal: DiscreteCell::from_json(&text)?,
        reduction: None,
    })
}

fn check_cell(cfg: &SupernetConfig, pair: &CellPair) -> Result<()> {
    let topo = cfg.topology()?;
    pair.normal.validate(Some(&topo))?;
    match (&pair.reduction, cfg.reduction_cells > 0) {
        (Some(r), true) => r.validate(Some(&topo)),
        (None, false) => Ok(()),
        (Some(_), false) => Err(Error::InvalidCell(
            "reduction cell given for a space without reduction cells".into(),
        )),
        (None, true) => Err(Error::InvalidCell("space needs a reduction cell".into())),
    }
}

/// The snapshot the discretize phase uses: latest at or before `step`, else the last.
pub fn select_snapshot(snapshots: &[AlphaSnapshot], step: Option<u64>) -> Result<&AlphaSnapshot> {
    let pick = match step {
        Some(s) => snapshots.iter().rev().find(|snap| snap.step <= s),
        None => snapshots.last(),
    };
    pick.ok_or_else(|| Error::Config(format!("no α snapshot at or before step {step:?}")))
}

/// Discretizes one snapshot of an α log file.
pub fn discretize_log(
    path: &Path,
    step: Option<u64>,
    top_k: usize,
    cfg: &SupernetConfig,
) -> Result<(u64, CellPair)> {
    let snaps = read_alpha_log(path)?;
    let snap = select_snapshot(&snaps, step)?;
    Ok((snap.step, discretize_snapshot(snap, top_k, cfg.merge)?))
}

fn save_run(out: &Path, rel: &Path, seed: u64, run: &RunResult) -> Result<RunSummary> {
    let path = out.join(rel);
    if let Some(parent) = path.parent() {
        mkdir(parent)?;
    }
    write_metrics_csv(&path, &run.metrics)?;
    Ok(RunSummary::new(seed, run, rel.to_path_buf()))
}

fn train_supernet(
    space: &SupernetConfig,
    env: &EnvConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RunResult> {
    let net = build_supernet(space, env.obs_shape(), seed)?;
    Ok(train(net, env, cfg, seed)?.0)
}

/// Phase 1: joint supernet training. Writes the metrics CSV, the α log and the
/// distinct cells of the trajectory.
pub fn run_search(cfg: &RunConfig, out: &Path, rec: &mut ExperimentRecord) -> Result<()> {
    mkdir(out)?;
    let run = train_supernet(&cfg.supernet, &cfg.env, &cfg.train, cfg.seed)?;
    rec.search = Some(save_run(out, Path::new(METRICS_FILE), cfg.seed, &run)?);
    write_alpha_log(&out.join(ALPHA_LOG_FILE), &run.snapshots)?;
    rec.alpha_log = Some(PathBuf::from(ALPHA_LOG_FILE));
    record_distinct_cells(cfg, out, &run.snapshots, rec)
}

fn record_distinct_cells(
    cfg: &RunConfig,
    out: &Path,
    snaps: &[AlphaSnapshot],
    rec: &mut ExperimentRecord,
) -> Result<()> {
    let cells_dir = out.join("cells");
    rec.distinct_cells.clear();
    for (i, (step, pair)) in distinct_cell_sequence(snaps, cfg.supernet.top_k, cfg.supernet.merge)?
        .into_iter()
        .enumerate()
    {
        let stem = format!("{i:03}");
        write_cell_files(&cells_dir, &stem, &pair)?;
        rec.distinct_cells.push(CellEntry {
            step,
            file: PathBuf::from("cells").join(format!("{stem}.json")),
            cell: pair,
        });
    }
    Ok(())
}

/// Phase 2: discretizes the configured snapshot into `cell.json` / `cell.dot`.
pub fn run_discretize(cfg: &RunConfig, out: &Path, rec: &mut ExperimentRecord) -> Result<()> {
    let log = match &cfg.discretize.alpha_log {
        Some(p) => p.clone(),
        None => out.join(ALPHA_LOG_FILE),
    };
    let snaps = read_alpha_log(&log)?;
    record_distinct_cells(cfg, out, &snaps, rec)?;
    rec.alpha_log = Some(match &cfg.discretize.alpha_log {
        Some(p) => p.clone(),
        None => PathBuf::from(ALPHA_LOG_FILE),
    });
    let snap = select_snapshot(&snaps, cfg.discretize.step)?;
    let pair = discretize_snapshot(snap, cfg.supernet.top_k, cfg.supernet.merge)?;
    check_cell(&cfg.supernet, &pair)?;
    write_cell_files(out, "cell", &pair)?;
    rec.selected = Some(CellEntry {
        step: snap.step,
        file: PathBuf::from(CELL_FILE),
        cell: pair,
    });
    Ok(())
}

/// Trains `cell` from scratch at the evaluation depths for every eval seed.
pub fn evaluate(cfg: &RunConfig, cell: &CellPair, out: &Path, dir: &str) -> Result<EvalOutcome> {
    let space = cfg.eval_space();
    check_cell(&space, cell)?;
    let train_cfg = cfg.eval_train();
    let runs = par_map(cfg.eval.seeds.clone(), cfg.eval.jobs, |seed| {
        train_cell(&space, cell, &cfg.env, &train_cfg, seed).map(|r| (seed, r))
    })?;
    let summaries = runs
        .iter()
        .map(|(seed, run)| {
            save_run(
                out,
                &Path::new(dir).join(format!("seed_{seed}.csv")),
                *seed,
                run,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalOutcome {
        cell: cell.clone(),
        depths: cfg.eval.depths.clone(),
        score: CellScore::from_returns(runs.iter().map(|(_, r)| r.final_return).collect()),
        runs: summaries,
    })
}

/// Phase 3: evaluates the configured cell file, else the selected cell.
pub fn run_eval(cfg: &RunConfig, out: &Path, rec: &mut ExperimentRecord) -> Result<()> {
    let cell = match (&cfg.eval.cell, &rec.selected) {
        (Some(path), _) => load_cell_file(path)?,
        (None, Some(sel)) => sel.cell.clone(),
        (None, None) => {
            let path = out.join(CELL_FILE);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "no cell to evaluate: set eval.cell or run discretize first ({} missing)",
                    path.display()
                )));
            }
            load_cell_file(&path)?
        }
    };
    rec.eval = Some(evaluate(cfg, &cell, out, "eval")?);
    Ok(())
}

/// Runs `step` and records a failure instead of returning training divergence.
fn guarded(
    phase: Phase,
    rec: &mut ExperimentRecord,
    step: impl FnOnce(&mut ExperimentRecord) -> Result<()>,
) -> Result<bool> {
    match step(rec) {
        Ok(()) => {
            rec.phases.push(phase);
            Ok(true)
        }
        Err(e @ Error::Diverged { .. }) => {
            rec.fail(phase, &e);
            Ok(false)
        }
        Err(e) => Err(e),
    }
}

/// Search, discretize and evaluate. With `eval.cell` set only evaluation runs. A
/// diverged phase stops the pipeline and marks the record failed.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<ExperimentRecord> {
    let mut rec = ExperimentRecord::new(cfg)?;
    mkdir(out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    if cfg.eval.cell.is_none() {
        if !guarded(Phase::Search, &mut rec, |r| run_search(cfg, out, r))? {
            rec.save(out)?;
            return Ok(rec);
        }
        guarded(Phase::Discretize, &mut rec, |r| run_discretize(cfg, out, r))?;
    }
    guarded(Phase::Eval, &mut rec, |r| run_eval(cfg, out, r))?;
    rec.save(out)?;
    Ok(rec)
}

/// Whether two configs describe the same search run; later phases may differ.
fn same_search(a: &RunConfig, b: &RunConfig) -> bool {
    let space = |c: &RunConfig| SupernetConfig {
        top_k: 0,
        ..c.supernet.clone()
    };
    a.seed == b.seed && a.env == b.env && a.train == b.train && space(a) == space(b)
}

/// Runs one phase, extending the record already in `out` when it came from the
/// same search run.
pub fn run_phase(cfg: &RunConfig, out: &Path) -> Result<ExperimentRecord> {
    if cfg.phase == Phase::Pipeline {
        return run_pipeline(cfg, out);
    }
    let mut rec = ExperimentRecord::new(cfg)?;
    if let Ok(prev) = ExperimentRecord::load(out) {
        if same_search(&prev.run_config()?, cfg) && !prev.is_failed() {
            rec = ExperimentRecord {
                config_hash: rec.config_hash,
                config: rec.config,
                ..prev
            };
        }
    }
    mkdir(out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    let phase = cfg.phase;
    guarded(phase, &mut rec, |r| match phase {
        Phase::Pipeline => unreachable!("handled above"),
        Phase::Search => run_search(cfg, out, r),
        Phase::Discretize => run_discretize(cfg, out, r),
        Phase::Eval => run_eval(cfg, out, r),
        Phase::RandomSearch => run_random_search(cfg, out, r),
        Phase::Ablate => {
            let kinds = match cfg.ablation.kind {
                Some(k) => vec![k],
                None => AblationKind::ALL.to_vec(),
            };
            r.ablations.clear();
            for k in kinds {
                let outcome = ablation(cfg, k, out)?;
                r.ablations.push(outcome);
            }
            Ok(())
        }
        Phase::EnumerateSpace => {
            r.space = Some(enumerate_space(cfg)?);
            Ok(())
        }
        Phase::Analyze => run_analysis(cfg, out, r),
    })?;
    rec.save(out)?;
    Ok(rec)
}

/// Random search under budget parity: all runs together spend the search-phase
/// steps times the cost ratio. The winner is then evaluated like a searched cell.
pub fn run_random_search(cfg: &RunConfig, out: &Path, rec: &mut ExperimentRecord) -> Result<()> {
    let search_steps = rec.search.as_ref().map_or(cfg.train.budget, |s| s.steps);
    let ratio = cfg.random_search.cost_ratio;
    let target = (search_steps as f64 * ratio).floor() as u64;
    let cells = cfg.random_search.cell_count();
    let per_run = target / cells as u64;
    let train_cfg = TrainConfig {
        budget: per_run,
        freeze_alpha: false,
        ..cfg.train.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5EA2C4));
    let result = random_search(
        cells,
        &cfg.supernet,
        &cfg.env,
        &train_cfg,
        &[cfg.seed],
        &mut rng,
    )?;
    if result.steps > target {
        return Err(Error::Config(format!(
            "random search spent {} steps over its {target}-step budget",
            result.steps
        )));
    }
    let dir = out.join("random_search");
    for (i, c) in result.cells.iter().enumerate() {
        write_cell_files(&dir, &format!("{i:03}"), c)?;
    }
    let winner = evaluate(cfg, result.best_cell(), out, "random_search/eval")?;
    rec.random_search = Some(RandomSearchOutcome {
        cells: result.cells.clone(),
        scores: result.scores.clone(),
        best: result.best,
        cost_ratio: ratio,
        target_steps: target,
        per_run_budget: per_run,
        total_steps: result.steps,
        winner: Some(winner),
    });
    Ok(())
}

fn supernet_runs(
    space: &SupernetConfig,
    cfg: &RunConfig,
    freeze: bool,
    out: &Path,
    dir: &Path,
) -> Result<(CellScore, Vec<RunSummary>, Vec<f64>)> {
    let train_cfg = TrainConfig {
        freeze_alpha: freeze,
        ..cfg.train.clone()
    };
    let runs = par_map(cfg.eval.seeds.clone(), cfg.eval.jobs, |seed| {
        train_supernet(space, &cfg.env, &train_cfg, seed).map(|r| (seed, r))
    })?;
    let mut summaries = Vec::new();
    let mut devs = Vec::new();
    for (seed, run) in &runs {
        summaries.push(save_run(
            out,
            &dir.join(format!("seed_{seed}.csv")),
            *seed,
            run,
        )?);
        devs.push(
            run.snapshots
                .last()
                .map_or(0.0, AlphaSnapshot::max_dev_from_uniform),
        );
    }
    let score = CellScore::from_returns(runs.iter().map(|(_, r)| r.final_return).collect());
    Ok((score, summaries, devs))
}

fn baseline_runs(
    cfg: &RunConfig,
    variant: BaselineVariant,
    out: &Path,
    dir: &Path,
) -> Result<(CellScore, Vec<RunSummary>)> {
    let train_cfg = cfg.eval_train();
    let runs = par_map(cfg.eval.seeds.clone(), cfg.eval.jobs, |seed| {
        let net = build_baseline_encoder(
            &cfg.eval.depths,
            variant,
            cfg.supernet.feature_dim,
            cfg.env.obs_shape(),
            seed,
        )?;
        train(net, &cfg.env, &train_cfg, seed).map(|(r, _)| (seed, r))
    })?;
    let summaries = runs
        .iter()
        .map(|(seed, run)| save_run(out, &dir.join(format!("seed_{seed}.csv")), *seed, run))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        CellScore::from_returns(runs.iter().map(|(_, r)| r.final_return).collect()),
        summaries,
    ))
}

/// Runs one ablation over the eval seeds. Supernet ablations use the search budget
/// and compare against an unablated control; baseline encoders use the eval budget
/// and depths.
pub fn ablation(cfg: &RunConfig, kind: AblationKind, out: &Path) -> Result<AblationOutcome> {
    let base = Path::new("ablate").join(kind.as_str());
    match kind {
        AblationKind::UniformAlpha => {
            let (t, runs, devs) =
                supernet_runs(&cfg.supernet, cfg, true, out, &base.join("uniform"))?;
            let (c, _, _) = supernet_runs(&cfg.supernet, cfg, false, out, &base.join("trainable"))?;
            Ok(AblationOutcome {
                kind,
                treatment: "uniform α".into(),
                treatment_score: t,
                control: Some("trainable α".into()),
                control_score: Some(c),
                final_alpha_dev: devs,
                runs,
            })
        }
        AblationKind::NoreluSpace => {
            let with = SupernetConfig {
                normal_opset: "classic_normal".into(),
                ..cfg.supernet.clone()
            };
            let without = SupernetConfig {
                normal_opset: "classic_normal_norelu".into(),
                ..cfg.supernet.clone()
            };
            let (t, runs, devs) = supernet_runs(&without, cfg, false, out, &base.join("norelu"))?;
            let (c, _, _) = supernet_runs(&with, cfg, false, out, &base.join("relu"))?;
            Ok(AblationOutcome {
                kind,
                treatment: "classic_normal_norelu supernet".into(),
                treatment_score: t,
                control: Some("classic_normal supernet".into()),
                control_score: Some(c),
                final_alpha_dev: devs,
                runs,
            })
        }
        AblationKind::PureConv3x3 | AblationKind::PureConv5x5 => {
            let variant = kind.baseline_variant().expect("baseline ablation");
            let (t, runs) = baseline_runs(cfg, variant, out, &base)?;
            Ok(AblationOutcome {
                kind,
                treatment: format!("{} residual encoder", kind.as_str()),
                treatment_score: t,
                control: None,
                control_score: None,
                final_alpha_dev: Vec::new(),
                runs,
            })
        }
    }
}

/// Trains every `every`-th distinct cell (in discovery order) from scratch.
pub fn cell_evolution_study(
    cfg: &RunConfig,
    rec: &ExperimentRecord,
    out: &Path,
) -> Result<Vec<EvolutionPoint>> {
    if rec.distinct_cells.is_empty() {
        return Err(Error::Config(
            "record has no distinct cells; run search first".into(),
        ));
    }
    let every = cfg.discretize.every.max(1);
    rec.distinct_cells
        .iter()
        .enumerate()
        .filter(|(i, _)| i % every == 0)
        .map(|(i, entry)| {
            let e = evaluate(cfg, &entry.cell, out, &format!("evolution/{i:03}"))?;
            Ok(EvolutionPoint {
                step: entry.step,
                score: e.score,
            })
        })
        .collect()
}

/// Supernet, discretized-cell and baseline scores per analysis task, their
/// correlation, and Jacobian scores of the fresh supernet and selected cell.
pub fn correlation_study(
    cfg: &RunConfig,
    rec: &ExperimentRecord,
    out: &Path,
) -> Result<AnalysisOutcome> {
    let mut tasks = Vec::new();
    let mut first_cell = None;
    for task in &cfg.analysis.tasks {
        let task_cfg = RunConfig {
            env: task.env.clone(),
            ..cfg.clone()
        };
        let dir = Path::new("analysis").join(&task.name);
        let run = train_supernet(&cfg.supernet, &task.env, &cfg.train, cfg.seed)?;
        save_run(out, &dir.join("supernet.csv"), cfg.seed, &run)?;
        let snap = run
            .snapshots
            .last()
            .ok_or_else(|| Error::Usage("supernet run produced no α snapshot".into()))?;
        let cell = discretize_snapshot(snap, cfg.supernet.top_k, cfg.supernet.merge)?;
        let cell_eval = evaluate(&task_cfg, &cell, out, &dir.join("cell").to_string_lossy())?;
        let (baseline, _) = baseline_runs(
            &task_cfg,
            BaselineVariant::Conv3x3,
            out,
            &dir.join("baseline"),
        )?;
        first_cell.get_or_insert(cell);
        tasks.push(TaskScores {
            name: task.name.clone(),
            supernet: run.final_return,
            cell: cell_eval.score.mean,
            baseline: baseline.mean,
        });
    }
    let corr = correlation_analysis(&tasks)?;
    for name in &corr.excluded {
        eprintln!(
            "warning: task {name} has a zero baseline score and is excluded from the correlation"
        );
    }
    let probes = probe_batch(
        &cfg.env,
        cfg.analysis.probe_batch,
        cfg.analysis.probe_source,
        cfg.seed,
    )?;
    let supernet = build_supernet::<f32>(&cfg.supernet, cfg.env.obs_shape(), cfg.seed)?;
    let jac_super = jacobian_covariance_score(
        &jacobian_rows(&supernet, probes.clone())?,
        cfg.analysis.epsilon,
    )?;
    let cell = rec
        .selected
        .as_ref()
        .map(|s| s.cell.clone())
        .or(first_cell)
        .ok_or_else(|| Error::Config("no cell for the Jacobian score".into()))?;
    let discrete = build_discrete_network::<f32>(
        &cfg.supernet,
        &cell.normal,
        cell.reduction.as_ref(),
        cfg.env.obs_shape(),
        cfg.seed,
    )?;
    let jac_cell =
        jacobian_covariance_score(&jacobian_rows(&discrete, probes)?, cfg.analysis.epsilon)?;
    Ok(AnalysisOutcome {
        tasks,
        normalized: corr.normalized,
        excluded: corr.excluded,
        pearson: corr.r,
        jacobian_supernet: jac_super,
        jacobian_cell: jac_cell,
    })
}

fn run_analysis(cfg: &RunConfig, out: &Path, rec: &mut ExperimentRecord) -> Result<()> {
    if cfg.analysis.cell_evolution && !rec.distinct_cells.is_empty() {
        rec.cell_evolution = cell_evolution_study(cfg, rec, out)?;
    }
    if cfg.analysis.correlation {
        rec.analysis = Some(correlation_study(cfg, rec, out)?);
    }
    Ok(())
}

/// Closed-form size of the configured space, and the brute-force count when small.
pub fn enumerate_space(cfg: &RunConfig) -> Result<SpaceReport> {
    let q = &cfg.space;
    let set = builtin_opset(&q.opset)?;
    let topo = CellTopology::new(q.nodes, q.top_k)?;
    let size = search_space_size(set.nonzero_count(), q.nodes, q.top_k)?;
    let enumerated = if size <= u128::from(q.enumerate_limit) {
        match enumerate_cells(&set, &topo, cfg.supernet.merge) {
            Ok(cells) => Some(cells.len() as u64),
            Err(Error::SpaceTooLarge { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(SpaceReport {
        opset: q.opset.clone(),
        nonzero_ops: set.nonzero_count(),
        nodes: q.nodes,
        top_k: q.top_k,
        size: size.to_string(),
        enumerated,
    })
}
