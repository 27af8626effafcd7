use rand::Rng;

use crate::diffcore::{Graph, NodeId, ParamId, ParamStore};
use crate::envs::NUM_ACTIONS;
use crate::error::Result;
use crate::supernet::Network;
use crate::tensor::{Scalar, Tensor};

/// Encoder with policy and value heads on ReLU'd features.
pub struct PolicyNet<T: Scalar> {
    pub net: Network<T>,
    pi: (ParamId, ParamId),
    v: (ParamId, ParamId),
}

impl<T: Scalar> PolicyNet<T> {
    pub fn new(mut net: Network<T>, seed: u64) -> Self {
        let pi = net.add_dense("policy", NUM_ACTIONS, 0.01, seed);
        let v = net.add_dense("value", 1, 1.0, seed.wrapping_add(1));
        Self { net, pi, v }
    }

    /// `(logits [N, |A|], values [N, 1])`.
    pub fn forward(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<(NodeId, NodeId)> {
        let f = self.net.encode(g, x)?;
        let h = g.relu(f);
        let (pw, pb) = (g.param(self.pi.0), g.param(self.pi.1));
        let logits = g.affine(h, pw, pb)?;
        let (vw, vb) = (g.param(self.v.0), g.param(self.v.1));
        let values = g.affine(h, vw, vb)?;
        Ok((logits, values))
    }

    /// Inference pass returning `(logits, values)` as flat vectors.
    pub fn evaluate(&self, obs: Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
        let mut g = Graph::new(&self.net.params);
        let x = g.input(obs);
        let (l, v) = self.forward(&mut g, x)?;
        Ok((g.value(l).data().to_vec(), g.value(v).data().to_vec()))
    }
}

/// Encoder with dueling value and advantage heads.
pub struct QNet<T: Scalar> {
    pub net: Network<T>,
    v: (ParamId, ParamId),
    a: (ParamId, ParamId),
}

impl<T: Scalar> QNet<T> {
    pub fn new(mut net: Network<T>, seed: u64) -> Self {
        let v = net.add_dense("q_value", 1, 1.0, seed);
        let a = net.add_dense("q_advantage", NUM_ACTIONS, 1.0, seed.wrapping_add(1));
        Self { net, v, a }
    }

    /// Q values [N, |A|] computed with `params`, which must share this net's layout
    /// (the online store or a target copy).
    pub fn forward(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let f = self.net.encode(g, x)?;
        let h = g.relu(f);
        let (vw, vb) = (g.param(self.v.0), g.param(self.v.1));
        let v = g.affine(h, vw, vb)?;
        let (aw, ab) = (g.param(self.a.0), g.param(self.a.1));
        let a = g.affine(h, aw, ab)?;
        g.dueling(v, a)
    }

    pub fn q_values(&self, params: &ParamStore<T>, obs: Tensor<T>) -> Result<Vec<T>> {
        let mut g = Graph::new(params);
        let x = g.input(obs);
        let q = self.forward(&mut g, x)?;
        Ok(g.value(q).data().to_vec())
    }
}

/// Draws an index from `softmax(logits)`; returns it with its log-probability.
pub fn sample_categorical<R: Rng + ?Sized>(logits: &[f32], rng: &mut R) -> (usize, f64) {
    let m = logits
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(f64::from(b)));
    let exps: Vec<f64> = logits.iter().map(|&l| (f64::from(l) - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut pick = exps.iter().rposition(|&e| e > 0.0).unwrap_or(0);
    for (i, &e) in exps.iter().enumerate() {
        acc += e;
        if u < acc {
            pick = i;
            break;
        }
    }
    (pick, (exps[pick] / total).ln())
}
