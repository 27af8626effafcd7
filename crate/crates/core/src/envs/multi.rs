use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{normalize_step_reward, Env, EnvHandle, GameSpec, Step};
use crate::error::{Error, Result};

/// Draws a game uniformly at every reset; learner rewards are divided by the game's
/// `R_max`.
pub struct MultiGameEnv {
    games: Vec<EnvHandle>,
    rng: ChaCha8Rng,
    current: usize,
}

impl MultiGameEnv {
    pub fn new(games: Vec<EnvHandle>, seed: u64) -> Result<Self> {
        if games.len() < 2 {
            return Err(Error::Config(
                "a game mixer needs at least two games".into(),
            ));
        }
        let shape = games[0].obs_shape();
        if games.iter().any(|g| g.obs_shape() != shape) {
            return Err(Error::Config(
                "mixed games must share one observation shape".into(),
            ));
        }
        for g in &games {
            normalize_step_reward(0.0, g.spec())?;
        }
        Ok(Self {
            games,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current: 0,
        })
    }
}

impl Env for MultiGameEnv {
    fn obs_shape(&self) -> [usize; 3] {
        self.games[0].obs_shape()
    }

    fn reset(&mut self) -> Vec<f32> {
        self.current = self.rng.random_range(0..self.games.len());
        self.games[self.current].reset()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        let game = &mut self.games[self.current];
        let mut step = game.step(action)?;
        step.reward = normalize_step_reward(step.raw_reward, game.spec())?;
        Ok(step)
    }

    fn game_index(&self) -> usize {
        self.current
    }

    fn games(&self) -> Vec<GameSpec> {
        self.games.iter().map(|g| g.spec().clone()).collect()
    }

    fn layout_hash(&self) -> u64 {
        self.games[self.current].layout_hash()
    }
}
