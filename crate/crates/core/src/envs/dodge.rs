use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fnv, paint, Action, Game, GameKind, GameSpec, AGENT, HAZARD};

pub const SURVIVE_REWARD: f64 = 0.1;
/// The agent moves freely within this many bottom rows.
const ZONE_ROWS: usize = 4;
const SPAWN_RATE: std::ops::Range<f64> = 0.04..0.10;

/// Survive obstacles falling one row per step.
pub struct Dodge {
    spec: GameSpec,
    rng: ChaCha8Rng,
    spawn_rate: f64,
    level_hash: u64,
    agent: (usize, usize),
    obstacles: Vec<(usize, usize)>,
}

impl Dodge {
    pub fn new(size: usize) -> Self {
        Self {
            spec: GameSpec::new(GameKind::Dodge, size),
            rng: ChaCha8Rng::seed_from_u64(0),
            spawn_rate: SPAWN_RATE.start,
            level_hash: 0,
            agent: (size - 1, 0),
            obstacles: Vec::new(),
        }
    }

    pub fn agent(&self) -> (usize, usize) {
        self.agent
    }

    pub fn obstacles(&self) -> &[(usize, usize)] {
        &self.obstacles
    }

    /// Per-column spawn probability of the current level.
    pub fn spawn_rate(&self) -> f64 {
        self.spawn_rate
    }

    fn hit(&self) -> bool {
        self.obstacles.contains(&self.agent)
    }
}

impl Game for Dodge {
    fn spec(&self) -> &GameSpec {
        &self.spec
    }

    fn load_level(&mut self, level_seed: u64) {
        let n = self.spec.size;
        self.rng = ChaCha8Rng::seed_from_u64(level_seed);
        self.spawn_rate = self.rng.random_range(SPAWN_RATE);
        let start_col = self.rng.random_range(0..n);
        self.agent = (n - 1, start_col);
        self.obstacles.clear();
        for r in 0..n - ZONE_ROWS {
            for c in 0..n {
                if self.rng.random_bool(self.spawn_rate) {
                    self.obstacles.push((r, c));
                }
            }
        }
        let cells = self.obstacles.iter().map(|&(r, c)| (r * n + c) as u64);
        self.level_hash = fnv([self.spawn_rate.to_bits(), start_col as u64]
            .into_iter()
            .chain(cells));
    }

    fn advance(&mut self, action: Action) -> (f64, bool) {
        let n = self.spec.size;
        let (dr, dc) = action.delta();
        let r = self
            .agent
            .0
            .saturating_add_signed(dr)
            .clamp(n - ZONE_ROWS, n - 1);
        let c = self.agent.1.saturating_add_signed(dc).min(n - 1);
        self.agent = (r, c);
        if self.hit() {
            return (0.0, true);
        }
        self.obstacles.retain_mut(|o| {
            o.0 += 1;
            o.0 < n
        });
        for c in 0..n {
            if self.rng.random_bool(self.spawn_rate) {
                self.obstacles.push((0, c));
            }
        }
        if self.hit() {
            (0.0, true)
        } else {
            (SURVIVE_REWARD, false)
        }
    }

    fn render(&self, obs: &mut [f32]) {
        let n = self.spec.size;
        for &o in &self.obstacles {
            paint(obs, n, o, HAZARD);
        }
        paint(obs, n, self.agent, AGENT);
    }

    fn layout_hash(&self) -> u64 {
        self.level_hash
    }
}
