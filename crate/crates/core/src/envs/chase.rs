use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fnv, paint, Action, Game, GameKind, GameSpec, AGENT, HAZARD, WALL};

pub const GOAL_REWARD: f64 = 10.0;
pub const STEP_PENALTY: f64 = -0.1;
pub const DEFAULT_WALL_DENSITY: f64 = 0.1;
const GOAL_DISTANCE: std::ops::RangeInclusive<usize> = 4..=12;

/// Navigate to the red goal cell around gray walls.
pub struct Chase {
    spec: GameSpec,
    wall_density: f64,
    walls: Vec<bool>,
    agent: (usize, usize),
    start: (usize, usize),
    goal: (usize, usize),
}

impl Chase {
    pub fn new(size: usize, wall_density: f64) -> Self {
        Self {
            spec: GameSpec::new(GameKind::Chase, size),
            wall_density,
            walls: vec![false; size * size],
            agent: (0, 0),
            start: (0, 0),
            goal: (0, 0),
        }
    }

    pub fn agent(&self) -> (usize, usize) {
        self.agent
    }

    pub fn goal(&self) -> (usize, usize) {
        self.goal
    }

    pub fn is_wall(&self, (r, c): (usize, usize)) -> bool {
        self.walls[r * self.spec.size + c]
    }

    /// BFS distances from `from`; `usize::MAX` marks unreachable cells.
    pub fn distances(&self, from: (usize, usize)) -> Vec<usize> {
        let n = self.spec.size;
        let mut dist = vec![usize::MAX; n * n];
        let mut queue = VecDeque::from([from]);
        dist[from.0 * n + from.1] = 0;
        while let Some(p) = queue.pop_front() {
            let d = dist[p.0 * n + p.1];
            for a in [Action::Up, Action::Down, Action::Left, Action::Right] {
                if let Some(q) = self.neighbor(p, a) {
                    if dist[q.0 * n + q.1] == usize::MAX {
                        dist[q.0 * n + q.1] = d + 1;
                        queue.push_back(q);
                    }
                }
            }
        }
        dist
    }

    fn neighbor(&self, (r, c): (usize, usize), a: Action) -> Option<(usize, usize)> {
        let (dr, dc) = a.delta();
        let r = r.checked_add_signed(dr)?;
        let c = c.checked_add_signed(dc)?;
        (r < self.spec.size && c < self.spec.size && !self.is_wall((r, c))).then_some((r, c))
    }

    fn try_place(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let n = self.spec.size;
        for w in self.walls.iter_mut() {
            *w = rng.random_bool(self.wall_density);
        }
        let free: Vec<(usize, usize)> = (0..n * n)
            .filter(|&i| !self.walls[i])
            .map(|i| (i / n, i % n))
            .collect();
        if free.is_empty() {
            return false;
        }
        self.agent = free[rng.random_range(0..free.len())];
        let dist = self.distances(self.agent);
        let goals: Vec<(usize, usize)> = free
            .into_iter()
            .filter(|&(r, c)| {
                let manhattan = r.abs_diff(self.agent.0) + c.abs_diff(self.agent.1);
                GOAL_DISTANCE.contains(&manhattan) && dist[r * n + c] != usize::MAX
            })
            .collect();
        if goals.is_empty() {
            return false;
        }
        self.goal = goals[rng.random_range(0..goals.len())];
        self.start = self.agent;
        true
    }
}

impl Game for Chase {
    fn spec(&self) -> &GameSpec {
        &self.spec
    }

    fn load_level(&mut self, level_seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(level_seed);
        while !self.try_place(&mut rng) {}
    }

    fn advance(&mut self, action: Action) -> (f64, bool) {
        if let Some(p) = self.neighbor(self.agent, action) {
            self.agent = p;
        }
        if self.agent == self.goal {
            (GOAL_REWARD, true)
        } else {
            (STEP_PENALTY, false)
        }
    }

    fn render(&self, obs: &mut [f32]) {
        let n = self.spec.size;
        for (i, _) in self.walls.iter().enumerate().filter(|(_, &w)| w) {
            paint(obs, n, (i / n, i % n), WALL);
        }
        paint(obs, n, self.goal, HAZARD);
        paint(obs, n, self.agent, AGENT);
    }

    fn layout_hash(&self) -> u64 {
        let walls = self.walls.chunks(64).map(|ch| {
            ch.iter()
                .enumerate()
                .fold(0u64, |acc, (i, &w)| acc | (u64::from(w) << i))
        });
        fnv(walls.chain([
            self.start.0 as u64,
            self.start.1 as u64,
            self.goal.0 as u64,
            self.goal.1 as u64,
        ]))
    }
}
