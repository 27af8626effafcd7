use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rldarts::discretize::{discretize_snapshot, read_alpha_log};
use rldarts::envs::{write_ppm, EnvConfig, NUM_ACTIONS};
use rldarts::harness::{
    emit_plots, enumerate_space, run_phase, select_snapshot, ExperimentRecord, Phase, RunConfig,
};
use rldarts::rl::{derive_seed, VecEnv};
use rldarts::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "rl-darts",
    version,
    about = "Differentiable architecture search in RL training loops"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Writes PPM frames of a random-policy rollout to this directory first.
    #[arg(long)]
    dump_frames: Option<PathBuf>,
}

#[derive(Args)]
struct DiscretizeArgs {
    #[command(flatten)]
    common: Common,
    /// α snapshot log to discretize directly; `--out` then names the cell file.
    #[arg(long)]
    alpha: Option<PathBuf>,
    /// Snapshot step (latest at or before it); the last snapshot when omitted.
    #[arg(long)]
    step: Option<u64>,
    #[arg(long)]
    topk: Option<usize>,
    /// DOT output for the normal cell.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args)]
struct SpaceArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    opset: Option<String>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    topk: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Search, discretize and evaluate.
    Pipeline(Common),
    /// Joint supernet training.
    Search(Common),
    /// Turn an α snapshot into a discrete cell.
    Discretize(DiscretizeArgs),
    /// Train a discrete cell from scratch over the eval seeds.
    Eval(Common),
    /// Random cells under the search budget.
    RandomSearch(Common),
    /// Uniform-α, no-ReLU and pure-conv ablations.
    Ablate(Common),
    /// Size of a search space, enumerated when small.
    EnumerateSpace(SpaceArgs),
    /// Cell evolution, supernet-vs-cell correlation and Jacobian scores.
    Analyze(Common),
    /// SVG and DOT plots from an output directory's record.
    Plot(Common),
}

fn load_config(common: &Common, phase: Phase) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.phase = phase;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dump_frames(env: &EnvConfig, dir: &Path, seed: u64) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut venv = VecEnv::new(env, 1, seed, 1)?;
    let mut rng = derive_seed(seed, 0xF7A3E);
    for i in 0..64 {
        write_ppm(
            &dir.join(format!("frame_{i:04}.ppm")),
            venv.obs(0),
            env.obs_shape(),
            8,
        )?;
        rng = derive_seed(rng, i);
        venv.step(&[(rng % NUM_ACTIONS as u64) as usize])?;
    }
    Ok(())
}

fn report(rec: &ExperimentRecord, out: &Path) -> anyhow::Result<()> {
    let summary = serde_json::json!({
        "name": rec.name,
        "config_hash": rec.config_hash,
        "phases": rec.phases,
        "status": rec.status,
        "record": out.join(rldarts::harness::RECORD_FILE),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn run_and_report(cfg: &RunConfig) -> anyhow::Result<ExperimentRecord> {
    let rec = run_phase(cfg, &cfg.out)?;
    if cfg.phase == Phase::Pipeline && !rec.is_failed() {
        emit_plots(&rec, &cfg.out)?;
    }
    report(&rec, &cfg.out)?;
    Ok(rec)
}

fn standalone_discretize(args: &DiscretizeArgs, alpha: &Path) -> anyhow::Result<()> {
    let cfg = match &args.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let top_k = args.topk.unwrap_or(cfg.supernet.top_k);
    let snaps = read_alpha_log(alpha)?;
    let snap = select_snapshot(&snaps, args.step)?;
    let (step, pair) = (
        snap.step,
        discretize_snapshot(snap, top_k, cfg.supernet.merge)?,
    );
    let json = serde_json::to_string_pretty(&pair)? + "\n";
    match &args.common.out {
        Some(path) => {
            std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{json}"),
    }
    if let Some(dot) = &args.dot {
        std::fs::write(dot, pair.normal.to_dot(&format!("step {step} normal")))
            .with_context(|| format!("writing {}", dot.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (phase, common) = match &cli.command {
        Command::Pipeline(c) => (Phase::Pipeline, c),
        Command::Search(c) => (Phase::Search, c),
        Command::Eval(c) => (Phase::Eval, c),
        Command::RandomSearch(c) => (Phase::RandomSearch, c),
        Command::Ablate(c) => (Phase::Ablate, c),
        Command::Analyze(c) => (Phase::Analyze, c),
        Command::Discretize(d) => match &d.alpha {
            Some(alpha) => {
                standalone_discretize(d, alpha)?;
                return Ok(true);
            }
            None => (Phase::Discretize, &d.common),
        },
        Command::EnumerateSpace(s) => {
            let mut cfg = load_config(&s.common, Phase::EnumerateSpace)?;
            if let Some(o) = &s.opset {
                cfg.space.opset = o.clone();
            }
            if let Some(n) = s.nodes {
                cfg.space.nodes = n;
            }
            if let Some(k) = s.topk {
                cfg.space.top_k = k;
            }
            println!("{}", serde_json::to_string_pretty(&enumerate_space(&cfg)?)?);
            return Ok(true);
        }
        Command::Plot(c) => {
            let out = match (&c.out, &c.config) {
                (Some(out), _) => out.clone(),
                (None, Some(_)) => load_config(c, Phase::Search)?.out,
                (None, None) => bail!("plot needs --out or --config to locate record.json"),
            };
            let rec = ExperimentRecord::load(&out)?;
            for file in emit_plots(&rec, &out)? {
                println!("{}", file.display());
            }
            return Ok(true);
        }
    };
    let mut cfg = load_config(common, phase)?;
    if let Command::Discretize(d) = &cli.command {
        if d.step.is_some() {
            cfg.discretize.step = d.step;
        }
        if let Some(k) = d.topk {
            cfg.supernet.top_k = k;
        }
        cfg.validate()?;
    }
    if let Some(dir) = &common.dump_frames {
        dump_frames(&cfg.env, dir, cfg.seed)?;
    }
    let rec = run_and_report(&cfg)?;
    Ok(!rec.diverged())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: training diverged; see record.json for the failure cause");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let diverged = matches!(e.downcast_ref::<Error>(), Some(Error::Diverged { .. }));
            ExitCode::from(if diverged { EXIT_DIVERGED } else { EXIT_CONFIG })
        }
    }
}
