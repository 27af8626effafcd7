use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub arch: bool,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Weights, α, training step and rng position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: u64,
    pub params: Vec<SavedParam>,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn capture(params: &ParamStore<f32>, step: u64, rng: Option<&ChaCha8Rng>) -> Self {
        Self {
            step,
            params: params
                .iter()
                .map(|(_, p)| SavedParam {
                    name: p.name.clone(),
                    arch: p.kind == ParamKind::Arch,
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
            rng: rng.map(RngState::capture),
        }
    }

    /// Writes every saved tensor into the same-named parameter of `params`.
    pub fn restore_into(&self, params: &mut ParamStore<f32>) -> Result<()> {
        for s in &self.params {
            let id = params.id(&s.name).ok_or_else(|| {
                Error::Config(format!("checkpoint parameter {} not in network", s.name))
            })?;
            let dst = params.value_mut(id);
            if dst.shape() != s.shape.as_slice() {
                return Err(Error::Shape(format!(
                    "checkpoint parameter {} has shape {:?}, network {:?}",
                    s.name,
                    s.shape,
                    dst.shape()
                )));
            }
            *dst = Tensor::from_vec(&s.shape, s.data.clone())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
