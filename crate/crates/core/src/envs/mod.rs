//! Procedurally generated pixel games with Procgen-style level sets.
//!
//! Observations are `size × size × 3` RGB grids in `[0, 1]`, flattened HWC. Actions are
//! up, down, left, right, stay.

mod chase;
mod dodge;
mod multi;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use chase::Chase;
pub use dodge::Dodge;
pub use multi::MultiGameEnv;

use crate::error::{Error, Result};

pub const NUM_ACTIONS: usize = 5;
pub const DEFAULT_SIZE: usize = 24;
pub const EPISODE_CAP: u32 = 128;
/// Infinite-mode level seeds start here, disjoint from any finite level set.
pub const INFINITE_SEED_BASE: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];

    pub fn from_index(a: usize) -> Result<Self> {
        Self::ALL
            .get(a)
            .copied()
            .ok_or_else(|| Error::Usage(format!("action {a} out of range")))
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay => (0, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    Chase,
    Dodge,
}

impl GameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GameKind::Chase => "chase",
            GameKind::Dodge => "dodge",
        }
    }
}

impl FromStr for GameKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chase" => Ok(GameKind::Chase),
            "dodge" => Ok(GameKind::Dodge),
            other => Err(Error::Config(format!(
                "unknown game {other:?}; expected chase or dodge"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameSpec {
    pub kind: GameKind,
    pub size: usize,
    pub episode_cap: u32,
    pub r_min: f64,
    pub r_max: f64,
}

impl GameSpec {
    pub fn new(kind: GameKind, size: usize) -> Self {
        let cap = EPISODE_CAP;
        let (r_min, r_max) = match kind {
            GameKind::Chase => (-0.1 * f64::from(cap), chase::GOAL_REWARD),
            GameKind::Dodge => (0.0, dodge::SURVIVE_REWARD * f64::from(cap)),
        };
        Self {
            kind,
            size,
            episode_cap: cap,
            r_min,
            r_max,
        }
    }

    pub fn obs_shape(&self) -> [usize; 3] {
        [self.size, self.size, 3]
    }

    pub fn obs_len(&self) -> usize {
        self.size * self.size * 3
    }
}

/// Which level seeds a reset may draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevelMode {
    Finite(u64),
    Infinite,
}

impl LevelMode {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> u64 {
        match self {
            LevelMode::Finite(n) => rng.random_range(0..n),
            LevelMode::Infinite => INFINITE_SEED_BASE + u64::from(rng.random::<u32>()),
        }
    }
}

impl fmt::Display for LevelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelMode::Finite(n) => write!(f, "finite:{n}"),
            LevelMode::Infinite => f.write_str("infinite"),
        }
    }
}

impl FromStr for LevelMode {
    type Err = Error;

    /// `"infinite"` or `"finite:N"` with `N ≥ 1`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "infinite" {
            return Ok(LevelMode::Infinite);
        }
        match s.strip_prefix("finite:").map(str::parse::<u64>) {
            Some(Ok(n)) if n > 0 => Ok(LevelMode::Finite(n)),
            _ => Err(Error::Config(format!(
                "level mode {s:?}; expected \"infinite\" or \"finite:N\""
            ))),
        }
    }
}

impl Serialize for LevelMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LevelMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f32>,
    /// Reward fed to the learner (normalized in multi-game mode).
    pub reward: f64,
    /// Reward in the game's own units.
    pub raw_reward: f64,
    pub done: bool,
}

/// A game state machine driven by a level seed. Dynamics randomness is reseeded from
/// the level seed, so `(level seed, actions)` fixes the trajectory.
pub trait Game: Send {
    fn spec(&self) -> &GameSpec;
    fn load_level(&mut self, level_seed: u64);
    /// Applies an action; returns `(reward, terminal)` before the step cap is applied.
    fn advance(&mut self, action: Action) -> (f64, bool);
    fn render(&self, obs: &mut [f32]);
    /// Hash of the generated layout, used to count distinct levels.
    fn layout_hash(&self) -> u64;
}

pub trait Env: Send {
    fn obs_shape(&self) -> [usize; 3];
    fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }
    fn reset(&mut self) -> Vec<f32>;
    fn step(&mut self, action: usize) -> Result<Step>;
    /// Index of the game being played, for per-game bookkeeping.
    fn game_index(&self) -> usize {
        0
    }
    fn games(&self) -> Vec<GameSpec>;
    fn layout_hash(&self) -> u64;
}

/// A single game with a level distribution.
pub struct EnvHandle {
    game: Box<dyn Game>,
    mode: LevelMode,
    level_rng: ChaCha8Rng,
    level_seed: u64,
    t: u32,
    done: bool,
    started: bool,
}

impl EnvHandle {
    pub fn new(game: Box<dyn Game>, mode: LevelMode, seed: u64) -> Self {
        Self {
            game,
            mode,
            level_rng: ChaCha8Rng::seed_from_u64(seed),
            level_seed: 0,
            t: 0,
            done: true,
            started: false,
        }
    }

    pub fn spec(&self) -> &GameSpec {
        self.game.spec()
    }

    pub fn level_seed(&self) -> u64 {
        self.level_seed
    }

    /// Starts a specific level, bypassing the level distribution.
    pub fn reset_to(&mut self, level_seed: u64) -> Vec<f32> {
        self.level_seed = level_seed;
        self.game.load_level(level_seed);
        self.t = 0;
        self.done = false;
        self.started = true;
        self.observe()
    }

    fn observe(&self) -> Vec<f32> {
        let mut obs = vec![0.0; self.game.spec().obs_len()];
        self.game.render(&mut obs);
        obs
    }
}

impl Env for EnvHandle {
    fn obs_shape(&self) -> [usize; 3] {
        self.game.spec().obs_shape()
    }

    fn reset(&mut self) -> Vec<f32> {
        let seed = self.mode.draw(&mut self.level_rng);
        self.reset_to(seed)
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if !self.started || self.done {
            return Err(Error::Usage(
                "step called on a finished episode; reset first".into(),
            ));
        }
        let (reward, terminal) = self.game.advance(Action::from_index(action)?);
        self.t += 1;
        self.done = terminal || self.t >= self.game.spec().episode_cap;
        Ok(Step {
            obs: self.observe(),
            reward,
            raw_reward: reward,
            done: self.done,
        })
    }

    fn games(&self) -> Vec<GameSpec> {
        vec![self.game.spec().clone()]
    }

    fn layout_hash(&self) -> u64 {
        self.game.layout_hash()
    }
}

/// Per-game options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameOptions {
    pub size: usize,
    /// Fraction of chase cells that are walls.
    pub wall_density: f64,
}

impl Default for GameOptions {
    fn default() -> Self {
        Self {
            size: DEFAULT_SIZE,
            wall_density: chase::DEFAULT_WALL_DENSITY,
        }
    }
}

impl GameOptions {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::Config(format!("game size {} is below 8", self.size)));
        }
        if !(0.0..0.5).contains(&self.wall_density) {
            return Err(Error::Config(format!(
                "wall_density {} outside [0, 0.5)",
                self.wall_density
            )));
        }
        Ok(())
    }
}

/// Game selection and level distribution for a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// One game, or several for the multi-game mixer.
    pub games: Vec<GameKind>,
    pub level_mode: LevelMode,
    pub size: usize,
    pub wall_density: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            games: vec![GameKind::Chase],
            level_mode: LevelMode::Infinite,
            size: DEFAULT_SIZE,
            wall_density: chase::DEFAULT_WALL_DENSITY,
        }
    }
}

impl EnvConfig {
    pub fn options(&self) -> GameOptions {
        GameOptions {
            size: self.size,
            wall_density: self.wall_density,
        }
    }

    pub fn obs_shape(&self) -> [usize; 3] {
        [self.size, self.size, 3]
    }

    pub fn validate(&self) -> Result<()> {
        if self.games.is_empty() {
            return Err(Error::Config("no game configured".into()));
        }
        self.options().validate()
    }

    pub fn build(&self, seed: u64) -> Result<Box<dyn Env>> {
        make_any_env(&self.games, self.level_mode, seed, &self.options())
    }

    /// Same games, levels from another distribution (e.g. held-out infinite levels).
    pub fn with_level_mode(&self, level_mode: LevelMode) -> Self {
        Self {
            level_mode,
            ..self.clone()
        }
    }
}

pub fn make_game(kind: GameKind, opts: &GameOptions) -> Result<Box<dyn Game>> {
    opts.validate()?;
    Ok(match kind {
        GameKind::Chase => Box::new(Chase::new(opts.size, opts.wall_density)),
        GameKind::Dodge => Box::new(Dodge::new(opts.size)),
    })
}

pub fn make_env(name: &str, mode: LevelMode, seed: u64) -> Result<EnvHandle> {
    make_env_with(name.parse()?, mode, seed, &GameOptions::default())
}

pub fn make_env_with(
    kind: GameKind,
    mode: LevelMode,
    seed: u64,
    opts: &GameOptions,
) -> Result<EnvHandle> {
    Ok(EnvHandle::new(make_game(kind, opts)?, mode, seed))
}

/// Builds a single-game env, or a mixer when several games are named.
pub fn make_any_env(
    games: &[GameKind],
    mode: LevelMode,
    seed: u64,
    opts: &GameOptions,
) -> Result<Box<dyn Env>> {
    match games {
        [] => Err(Error::Config("no game configured".into())),
        [one] => Ok(Box::new(make_env_with(*one, mode, seed, opts)?)),
        many => {
            let handles = many
                .iter()
                .enumerate()
                .map(|(i, &g)| make_env_with(g, mode, seed.wrapping_add(i as u64 + 1), opts))
                .collect::<Result<Vec<_>>>()?;
            Ok(Box::new(MultiGameEnv::new(handles, seed)?))
        }
    }
}

/// `r / R_max`.
pub fn normalize_step_reward(r: f64, spec: &GameSpec) -> Result<f64> {
    if !(spec.r_max > 0.0) {
        return Err(Error::Config(format!(
            "R_max must be positive, got {}",
            spec.r_max
        )));
    }
    Ok(r / spec.r_max)
}

/// `(R − R_min) / (R_max − R_min)`, unclipped.
pub fn normalized_score(r: f64, r_min: f64, r_max: f64) -> Result<f64> {
    if r_max == r_min {
        return Err(Error::Config("R_max equals R_min".into()));
    }
    Ok((r - r_min) / (r_max - r_min))
}

/// Writes an observation as a binary PPM, each cell scaled up `scale` times.
pub fn write_ppm(path: &Path, obs: &[f32], shape: [usize; 3], scale: usize) -> Result<()> {
    let [h, w, c] = shape;
    if obs.len() != h * w * c || c != 3 || scale == 0 {
        return Err(Error::Shape(format!(
            "cannot render {} values as {shape:?}",
            obs.len()
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", w * scale, h * scale).into_bytes();
    for y in 0..h * scale {
        for x in 0..w * scale {
            let px = ((y / scale) * w + x / scale) * 3;
            out.extend(
                obs[px..px + 3]
                    .iter()
                    .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
            );
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) const AGENT: [f32; 3] = [0.0, 1.0, 0.0];
pub(crate) const HAZARD: [f32; 3] = [1.0, 0.0, 0.0];
pub(crate) const WALL: [f32; 3] = [0.5, 0.5, 0.5];

pub(crate) fn paint(obs: &mut [f32], size: usize, (r, c): (usize, usize), color: [f32; 3]) {
    let i = (r * size + c) * 3;
    obs[i..i + 3].copy_from_slice(&color);
}

pub(crate) fn fnv(words: impl IntoIterator<Item = u64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    h
}
