use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ProbeSource;
use super::record::TaskScores;
use crate::diffcore::Graph;
use crate::envs::{EnvConfig, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::rl::{derive_seed, VecEnv};
use crate::supernet::Network;
use crate::tensor::Tensor;

/// Pearson correlation; `None` with fewer than two points or a constant side.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Baseline-normalized (supernet, cell) pairs and their Pearson correlation.
#[derive(Clone, Debug, PartialEq)]
pub struct Correlation {
    pub normalized: Vec<(String, f64, f64)>,
    /// Tasks dropped because their baseline score is 0.
    pub excluded: Vec<String>,
    pub r: Option<f64>,
}

/// Divides supernet and cell scores by the baseline score per task and correlates them.
pub fn correlation_analysis(tasks: &[TaskScores]) -> Result<Correlation> {
    if tasks.len() < 3 {
        return Err(Error::Config(format!(
            "correlation analysis needs at least 3 games, got {}",
            tasks.len()
        )));
    }
    let mut normalized = Vec::new();
    let mut excluded = Vec::new();
    for t in tasks {
        if t.baseline == 0.0 {
            excluded.push(t.name.clone());
        } else {
            normalized.push((t.name.clone(), t.supernet / t.baseline, t.cell / t.baseline));
        }
    }
    let xs: Vec<f64> = normalized.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = normalized.iter().map(|p| p.2).collect();
    Ok(Correlation {
        r: pearson(&xs, &ys),
        normalized,
        excluded,
    })
}

/// `−Σ_i [ln(σ_i + ε) + 1/(σ_i + ε)]` over eigenvalues σ of the row correlation matrix.
pub fn jacobian_covariance_score(rows: &Tensor<f64>, epsilon: f64) -> Result<f64> {
    if rows.rank() != 2 || rows.dim(0) < 2 || rows.dim(1) < 2 {
        return Err(Error::Shape(format!(
            "jacobian rows must be [B ≥ 2, F ≥ 2], got {:?}",
            rows.shape()
        )));
    }
    let (b, f) = (rows.dim(0), rows.dim(1));
    let mut centered = DMatrix::<f64>::zeros(b, f);
    for i in 0..b {
        let row = &rows.data()[i * f..(i + 1) * f];
        let mean = row.iter().sum::<f64>() / f as f64;
        let norm = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Usage(format!("jacobian row {i} has zero variance")));
        }
        for (j, v) in row.iter().enumerate() {
            centered[(i, j)] = (v - mean) / norm;
        }
    }
    let corr = &centered * centered.transpose();
    let eig = SymmetricEigen::new(corr);
    Ok(-eig
        .eigenvalues
        .iter()
        .map(|&s| {
            // Round-off can leave tiny negative eigenvalues of a PSD matrix.
            let s = s.max(0.0) + epsilon;
            s.ln() + 1.0 / s
        })
        .sum::<f64>())
}

/// Observations for Jacobian probing.
pub fn probe_batch(
    env: &EnvConfig,
    count: usize,
    source: ProbeSource,
    seed: u64,
) -> Result<Tensor<f32>> {
    match source {
        ProbeSource::LevelStarts => Ok(VecEnv::new(env, count, seed, 1)?.batch()),
        ProbeSource::RandomPolicy => {
            let mut venv = VecEnv::new(env, 1, seed, 1)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
            let mut data = Vec::with_capacity(count * venv.obs_len());
            for _ in 0..count {
                data.extend_from_slice(venv.obs(0));
                // A few random moves between probes decorrelate them.
                for _ in 0..rng.random_range(1..=4) {
                    venv.step(&[rng.random_range(0..NUM_ACTIONS)])?;
                }
            }
            let [h, w, c] = env.obs_shape();
            Tensor::from_vec(&[count, h, w, c], data)
        }
    }
}

/// Per-observation gradients of the summed encoder features, one row per input.
pub fn jacobian_rows(net: &Network<f32>, batch: Tensor<f32>) -> Result<Tensor<f64>> {
    let n = batch.dim(0);
    let mut g = Graph::new(&net.params);
    let x = g.input_with_grad(batch);
    let f = net.encode(&mut g, x)?;
    let s = g.sum(f);
    let grads = g.backward(s)?;
    let gx = grads
        .node(x)
        .ok_or_else(|| Error::Usage("input gradient missing".into()))?;
    let per = gx.len() / n;
    Tensor::from_vec(&[n, per], gx.data().iter().map(|&v| f64::from(v)).collect())
}
