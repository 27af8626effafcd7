//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records primitive applications in insertion order, which is also a
//! topological order. Parameters live in a [`ParamStore`] that the graph borrows, so
//! building a graph never copies weights.

use std::collections::HashMap;

use super::kernels::{self, Geometry, PoolKind};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActKind {
    Relu,
    Tanh,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Network weights (θ or φ).
    Weight,
    /// Architecture logits (α).
    Arch,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
    /// Frozen parameters still receive gradients from `backward`, but optimizers skip them.
    pub frozen: bool,
}

/// Named leaf tensors shared by every graph built over them.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<Param<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(Param {
            name,
            value,
            kind,
            frozen: false,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total scalar count of parameters of `kind`.
    pub fn count(&self, kind: ParamKind) -> usize {
        self.entries
            .iter()
            .filter(|p| p.kind == kind)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn set_frozen(&mut self, kind: ParamKind, frozen: bool) {
        for p in self.entries.iter_mut().filter(|p| p.kind == kind) {
            p.frozen = frozen;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|p| p.value.is_finite())
    }
}

/// Per-sample data for the clipped PPO objective.
#[derive(Clone, Debug)]
pub struct PpoTargets<T> {
    pub actions: Vec<usize>,
    pub logp_old: Vec<T>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

/// Loss components recorded during the PPO forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoTerms {
    pub clip_objective: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d {
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        geom: Geometry,
    },
    Pool {
        x: NodeId,
        kind: PoolKind,
        geom: Geometry,
        argmax: Vec<u32>,
    },
    Subsample {
        x: NodeId,
        stride: usize,
    },
    Activation {
        x: NodeId,
        kind: ActKind,
    },
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Add(Vec<NodeId>),
    WeightedSum {
        terms: Vec<(NodeId, usize)>,
        weights: NodeId,
    },
    Softmax {
        logits: NodeId,
        temperature: f64,
    },
    Concat(Vec<NodeId>),
    Reshape(NodeId),
    Sum(NodeId),
    Dot {
        x: NodeId,
        coeffs: Tensor<T>,
    },
    Dueling {
        v: NodeId,
        a: NodeId,
    },
    Ppo {
        logits: NodeId,
        values: NodeId,
        targets: Box<PpoTargets<T>>,
        terms: PpoTerms,
    },
    Huber {
        q: NodeId,
        actions: Vec<usize>,
        targets: Vec<T>,
        delta: f64,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Option<Tensor<T>>,
    needs_grad: bool,
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a parameter; zero when the loss does not depend on it.
    pub fn param(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0]
    }

    pub fn node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].as_ref()
    }

    pub fn into_params(self) -> Vec<Tensor<T>> {
        self.params
    }
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(p), _) => self.params.value(*p),
            (_, Some(v)) => v,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    /// Loss components of a PPO loss node.
    pub fn ppo_terms(&self, id: NodeId) -> Option<PpoTerms> {
        match &self.nodes[id.0].op {
            Op::Ppo { terms, .. } => Some(*terms),
            _ => None,
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; gradients are not propagated into it.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Input,
            value: Some(value),
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Input whose gradient is reported by `backward` (e.g. for input Jacobians).
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> NodeId {
        let id = self.input(value);
        self.nodes[id.0].needs_grad = true;
        id
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// SAME-padded cross-correlation of an NHWC input with a [kh, kw, cin, cout] kernel.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        dilation: usize,
    ) -> Result<NodeId> {
        if !matches!(stride, 1 | 2) || !matches!(dilation, 1 | 2) {
            return Err(Error::Config(format!(
                "conv2d stride {stride} / dilation {dilation} outside {{1,2}}"
            )));
        }
        let xs = self.shape(x);
        let ks = self.shape(kernel);
        if xs.len() != 4 || ks.len() != 4 || xs[3] != ks[2] {
            return Err(shape_err(format!(
                "conv2d input {xs:?} incompatible with kernel {ks:?}"
            )));
        }
        let cout = ks[3];
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(shape_err(format!(
                    "conv2d bias {:?} for {cout} output channels",
                    self.shape(b)
                )));
            }
        }
        let geom = Geometry::new([xs[0], xs[1], xs[2], xs[3]], ks[0], ks[1], stride, dilation);
        let y = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(kernel).data(),
            cout,
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_vec(&[geom.n, geom.out_h, geom.out_w, cout], y)?;
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        Ok(self.push(
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
            },
            value,
            &inputs,
        ))
    }

    /// 3×3 pooling with SAME padding; averages divide by the in-bounds count.
    pub fn pool2d(&mut self, x: NodeId, kind: PoolKind, stride: usize) -> Result<NodeId> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(shape_err(format!("pool2d expects NHWC, got {xs:?}")));
        }
        let geom = Geometry::new([xs[0], xs[1], xs[2], xs[3]], 3, 3, stride, 1);
        let (y, argmax) = kernels::pool2d_forward(&geom, self.value(x).data(), kind);
        let value = Tensor::from_vec(&[geom.n, geom.out_h, geom.out_w, geom.c], y)?;
        Ok(self.push(
            Op::Pool {
                x,
                kind,
                geom,
                argmax,
            },
            value,
            &[x],
        ))
    }

    /// Keeps every `stride`-th pixel in both spatial axes.
    pub fn subsample(&mut self, x: NodeId, stride: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err(format!("subsample expects NHWC, got {xs:?}")));
        }
        if stride == 1 {
            return Ok(x);
        }
        let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
        let src = self.value(x).data();
        let mut y = Vec::with_capacity(n * oh * ow * c);
        for b in 0..n {
            for i in 0..oh {
                for j in 0..ow {
                    let s = ((b * h + i * stride) * w + j * stride) * c;
                    y.extend_from_slice(&src[s..s + c]);
                }
            }
        }
        let value = Tensor::from_vec(&[n, oh, ow, c], y)?;
        Ok(self.push(Op::Subsample { x, stride }, value, &[x]))
    }

    pub fn activation(&mut self, x: NodeId, kind: ActKind) -> NodeId {
        let v = self.value(x);
        let y = match kind {
            ActKind::Relu => v.map(|a| a.max(T::zero())),
            ActKind::Tanh => v.map(|a| a.tanh_act()),
            ActKind::Identity => v.clone(),
        };
        self.push(Op::Activation { x, kind }, y, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.activation(x, ActKind::Relu)
    }

    /// `x·w + b` for x [N,F], w [F,G], b [G].
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(shape_err(format!("affine x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (n, f, g) = (xs[0], xs[1], ws[1]);
        let mut y = Vec::with_capacity(n * g);
        for _ in 0..n {
            y.extend_from_slice(self.value(b).data());
        }
        T::gemm(
            n,
            f,
            g,
            self.value(x).data(),
            (f as isize, 1),
            self.value(w).data(),
            (g as isize, 1),
            &mut y,
            true,
        );
        let value = Tensor::from_vec(&[n, g], y)?;
        Ok(self.push(Op::Affine { x, w, b }, value, &[x, w, b]))
    }

    /// Elementwise sum of same-shaped tensors.
    pub fn add(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let Some((&first, rest)) = xs.split_first() else {
            return Err(Error::Usage("add of zero tensors".into()));
        };
        if rest.is_empty() {
            return Ok(first);
        }
        let mut acc = self.value(first).clone();
        for &x in rest {
            if self.shape(x) != acc.shape() {
                return Err(shape_err(format!(
                    "add {:?} + {:?}",
                    acc.shape(),
                    self.shape(x)
                )));
            }
            acc.add_assign(self.value(x));
        }
        Ok(self.push(Op::Add(xs.to_vec()), acc, xs))
    }

    /// `Σ weights[k]·x_k` over `(x_k, k)` pairs; `weights` is a probability vector node.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, usize)], weights: NodeId) -> Result<NodeId> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::Usage("weighted sum of zero terms".into()));
        };
        let shape = self.shape(first).to_vec();
        let wlen = self.value(weights).len();
        let mut acc = vec![T::zero(); self.value(first).len()];
        for &(x, k) in terms {
            if self.shape(x) != shape.as_slice() || k >= wlen {
                return Err(shape_err(format!(
                    "weighted sum term {:?} (weight {k} of {wlen}) vs {shape:?}",
                    self.shape(x)
                )));
            }
            let wk = self.value(weights).data()[k];
            for (a, &v) in acc.iter_mut().zip(self.value(x).data()) {
                *a = *a + wk * v;
            }
        }
        let value = Tensor::from_vec(&shape, acc)?;
        let mut inputs: Vec<NodeId> = terms.iter().map(|t| t.0).collect();
        inputs.push(weights);
        Ok(self.push(
            Op::WeightedSum {
                terms: terms.to_vec(),
                weights,
            },
            value,
            &inputs,
        ))
    }

    /// `softmax(logits / temperature)` over a flat vector, max-subtracted.
    pub fn softmax(&mut self, logits: NodeId, temperature: f64) -> Result<NodeId> {
        let p = softmax_vec(self.value(logits).data(), temperature)?;
        let shape = self.shape(logits).to_vec();
        let value = Tensor::from_vec(&shape, p)?;
        Ok(self.push(
            Op::Softmax {
                logits,
                temperature,
            },
            value,
            &[logits],
        ))
    }

    /// Concatenates NHWC (or any same-prefix) tensors along the last axis.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = self.shape(xs[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if &s[..s.len() - 1] != lead {
                return Err(shape_err(format!("concat {first:?} with {s:?}")));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut y = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                y.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::from_vec(&shape, y)?;
        Ok(self.push(Op::Concat(xs.to_vec()), value, xs))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape(x), value, &[x]))
    }

    /// Flattens everything but the leading batch axis.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        let n = s[0];
        let rest = s[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), v, &[x])
    }

    /// `Σ coeffs ⊙ x`, a scalar. Useful for random projections in gradient checks.
    pub fn dot_const(&mut self, x: NodeId, coeffs: Tensor<T>) -> Result<NodeId> {
        if coeffs.len() != self.value(x).len() {
            return Err(shape_err("dot coefficient length"));
        }
        let s: T = self
            .value(x)
            .data()
            .iter()
            .zip(coeffs.data())
            .map(|(&a, &b)| a * b)
            .sum();
        Ok(self.push(Op::Dot { x, coeffs }, Tensor::scalar(s), &[x]))
    }

    /// Dueling combination `Q = V + A − mean_a A` for V [N,1], A [N,|A|].
    pub fn dueling(&mut self, v: NodeId, a: NodeId) -> Result<NodeId> {
        let (vs, as_) = (self.shape(v), self.shape(a));
        if vs.len() != 2 || as_.len() != 2 || vs[1] != 1 || vs[0] != as_[0] {
            return Err(shape_err(format!("dueling V {vs:?}, A {as_:?}")));
        }
        let (n, k) = (as_[0], as_[1]);
        let kt = T::of(k as f64);
        let mut q = Vec::with_capacity(n * k);
        for i in 0..n {
            let row = &self.value(a).data()[i * k..(i + 1) * k];
            let mean = row.iter().copied().sum::<T>() / kt;
            let vi = self.value(v).data()[i];
            q.extend(row.iter().map(|&ai| vi + ai - mean));
        }
        let value = Tensor::from_vec(&[n, k], q)?;
        Ok(self.push(Op::Dueling { v, a }, value, &[v, a]))
    }

    /// Minimisation objective `−(L_clip − c_v·L_vf + c_H·H)` averaged over the batch.
    pub fn ppo_loss(
        &mut self,
        logits: NodeId,
        values: NodeId,
        targets: PpoTargets<T>,
    ) -> Result<NodeId> {
        let (ls, vs) = (self.shape(logits), self.shape(values));
        let n = targets.actions.len();
        if ls.len() != 2
            || ls[0] != n
            || vs != [n, 1]
            || targets.logp_old.len() != n
            || targets.advantages.len() != n
            || targets.returns.len() != n
        {
            return Err(shape_err(format!(
                "ppo loss logits {ls:?}, values {vs:?}, batch {n}"
            )));
        }
        let k = ls[1];
        if targets.actions.iter().any(|&a| a >= k) {
            return Err(Error::Usage("action index out of range".into()));
        }
        let lg = self.value(logits).data();
        let vv = self.value(values).data();
        let mut terms = PpoTerms::default();
        for i in 0..n {
            let row = &lg[i * k..(i + 1) * k];
            let logp = log_softmax_row(row);
            let a = targets.actions[i];
            let ratio = (logp[a] - targets.logp_old[i].as_f64()).exp();
            let adv = targets.advantages[i].as_f64();
            let clipped = ratio.clamp(1.0 - targets.clip, 1.0 + targets.clip);
            terms.clip_objective += (ratio * adv).min(clipped * adv);
            let d = vv[i].as_f64() - targets.returns[i].as_f64();
            terms.value_loss += d * d;
            terms.entropy -= logp.iter().map(|&lp| lp.exp() * lp).sum::<f64>();
        }
        let nf = n as f64;
        terms.clip_objective /= nf;
        terms.value_loss /= nf;
        terms.entropy /= nf;
        let loss = -(terms.clip_objective - targets.value_coef * terms.value_loss
            + targets.entropy_coef * terms.entropy);
        Ok(self.push(
            Op::Ppo {
                logits,
                values,
                targets: Box::new(targets),
                terms,
            },
            Tensor::scalar(T::of(loss)),
            &[logits, values],
        ))
    }

    /// Mean Huber loss between `Q(s_i, a_i)` and fixed targets.
    pub fn huber_td(
        &mut self,
        q: NodeId,
        actions: Vec<usize>,
        targets: Vec<T>,
        delta: f64,
    ) -> Result<NodeId> {
        let qs = self.shape(q);
        let n = actions.len();
        if qs.len() != 2 || qs[0] != n || targets.len() != n {
            return Err(shape_err(format!("huber q {qs:?}, batch {n}")));
        }
        let k = qs[1];
        if actions.iter().any(|&a| a >= k) {
            return Err(Error::Usage("action index out of range".into()));
        }
        let qd = self.value(q).data();
        let mut total = 0.0;
        for i in 0..n {
            let d = qd[i * k + actions[i]].as_f64() - targets[i].as_f64();
            total += huber(d, delta);
        }
        Ok(self.push(
            Op::Huber {
                q,
                actions,
                targets,
                delta,
            },
            Tensor::scalar(T::of(total / n as f64)),
            &[q],
        ))
    }

    /// Reverse-mode pass from a scalar `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward from non-scalar node of shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(dy) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &dy, &mut grads);
            grads[id] = Some(dy);
        }
        let mut params: Vec<Tensor<T>> = self
            .params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let (Op::Param(p), Some(g)) = (&node.op, g) {
                params[p.0].add_assign(g);
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, id: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |target: NodeId, g: Tensor<T>| {
            if !self.nodes[target.0].needs_grad {
                return;
            }
            match &mut grads[target.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        let d = dy.data();
        match &self.nodes[id].op {
            Op::Input | Op::Param(_) => {}
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
            } => {
                let k = self.value(*kernel);
                let cout = k.dim(3);
                let mut dk = self.wants(*kernel).then(|| vec![T::zero(); k.len()]);
                let mut db = bias
                    .filter(|b| self.wants(*b))
                    .map(|_| vec![T::zero(); cout]);
                let dx = kernels::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    k.data(),
                    cout,
                    d,
                    self.wants(*x),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    acc(*x, tensor_like(self.value(*x), dx));
                }
                if let Some(dk) = dk {
                    acc(*kernel, tensor_like(k, dk));
                }
                if let (Some(b), Some(db)) = (bias, db) {
                    acc(*b, tensor_like(self.value(*b), db));
                }
            }
            Op::Pool {
                x,
                kind,
                geom,
                argmax,
            } => {
                let dx = kernels::pool2d_backward(geom, d, *kind, argmax);
                acc(*x, tensor_like(self.value(*x), dx));
            }
            Op::Subsample { x, stride } => {
                let xv = self.value(*x);
                let (n, h, w, c) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
                let (oh, ow) = (h.div_ceil(*stride), w.div_ceil(*stride));
                let mut dx = vec![T::zero(); xv.len()];
                let mut o = 0;
                for b in 0..n {
                    for i in 0..oh {
                        for j in 0..ow {
                            let s = ((b * h + i * stride) * w + j * stride) * c;
                            dx[s..s + c].copy_from_slice(&d[o..o + c]);
                            o += c;
                        }
                    }
                }
                acc(*x, tensor_like(xv, dx));
            }
            Op::Activation { x, kind } => {
                let xv = self.value(*x);
                let dx: Vec<T> = match kind {
                    ActKind::Relu => xv
                        .data()
                        .iter()
                        .zip(d)
                        .map(|(&a, &g)| if a > T::zero() { g } else { T::zero() })
                        .collect(),
                    ActKind::Tanh => {
                        let y = self.nodes[id].value.as_ref().expect("tanh output");
                        y.data()
                            .iter()
                            .zip(d)
                            .map(|(&t, &g)| g * (T::one() - t * t))
                            .collect()
                    }
                    ActKind::Identity => d.to_vec(),
                };
                acc(*x, tensor_like(xv, dx));
            }
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, f, g) = (xv.dim(0), xv.dim(1), wv.dim(1));
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); n * f];
                    T::gemm(
                        n,
                        g,
                        f,
                        d,
                        (g as isize, 1),
                        wv.data(),
                        (1, g as isize),
                        &mut dx,
                        false,
                    );
                    acc(*x, tensor_like(xv, dx));
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); f * g];
                    T::gemm(
                        f,
                        n,
                        g,
                        xv.data(),
                        (1, f as isize),
                        d,
                        (g as isize, 1),
                        &mut dw,
                        false,
                    );
                    acc(*w, tensor_like(wv, dw));
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); g];
                    for row in d.chunks_exact(g) {
                        for (a, &v) in db.iter_mut().zip(row) {
                            *a = *a + v;
                        }
                    }
                    acc(*b, tensor_like(self.value(*b), db));
                }
            }
            Op::Add(xs) => {
                for &x in xs {
                    acc(x, dy.clone());
                }
            }
            Op::WeightedSum { terms, weights } => {
                let wv = self.value(*weights);
                let mut dw = vec![T::zero(); wv.len()];
                for &(x, k) in terms {
                    let xv = self.value(x);
                    dw[k] = dw[k] + xv.data().iter().zip(d).map(|(&a, &g)| a * g).sum::<T>();
                    if self.wants(x) {
                        let wk = wv.data()[k];
                        acc(x, dy.map(|g| g * wk));
                    }
                }
                acc(*weights, tensor_like(wv, dw));
            }
            Op::Softmax {
                logits,
                temperature,
            } => {
                let p = self.nodes[id].value.as_ref().expect("softmax output");
                let inner: T = p.data().iter().zip(d).map(|(&pi, &g)| pi * g).sum();
                let inv_t = T::of(1.0 / temperature);
                let dz: Vec<T> = p
                    .data()
                    .iter()
                    .zip(d)
                    .map(|(&pi, &g)| pi * (g - inner) * inv_t)
                    .collect();
                acc(*logits, tensor_like(self.value(*logits), dz));
            }
            Op::Concat(xs) => {
                let widths: Vec<usize> = xs
                    .iter()
                    .map(|&x| *self.shape(x).last().expect("rank ≥ 1"))
                    .collect();
                let total: usize = widths.iter().sum();
                let rows = d.len() / total;
                let mut off = 0;
                for (&x, &w) in xs.iter().zip(&widths) {
                    if self.wants(x) {
                        let mut dx = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dx.extend_from_slice(&d[r * total + off..r * total + off + w]);
                        }
                        acc(x, tensor_like(self.value(x), dx));
                    }
                    off += w;
                }
            }
            Op::Reshape(x) => {
                acc(*x, tensor_like(self.value(*x), d.to_vec()));
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                acc(*x, Tensor::full(xv.shape(), d[0]));
            }
            Op::Dot { x, coeffs } => {
                acc(*x, coeffs.map(|c| c * d[0]));
            }
            Op::Dueling { v, a } => {
                let av = self.value(*a);
                let (n, k) = (av.dim(0), av.dim(1));
                let kt = T::of(k as f64);
                let mut dv = vec![T::zero(); n];
                let mut da = vec![T::zero(); n * k];
                for i in 0..n {
                    let row = &d[i * k..(i + 1) * k];
                    let s: T = row.iter().copied().sum();
                    dv[i] = s;
                    for j in 0..k {
                        da[i * k + j] = row[j] - s / kt;
                    }
                }
                acc(*v, tensor_like(self.value(*v), dv));
                acc(*a, tensor_like(av, da));
            }
            Op::Ppo {
                logits,
                values,
                targets,
                ..
            } => {
                let scale = d[0].as_f64();
                let lv = self.value(*logits);
                let vv = self.value(*values);
                let (n, k) = (lv.dim(0), lv.dim(1));
                let nf = n as f64;
                let mut dl = vec![T::zero(); n * k];
                let mut dvv = vec![T::zero(); n];
                for i in 0..n {
                    let row = &lv.data()[i * k..(i + 1) * k];
                    let logp = log_softmax_row(row);
                    let a = targets.actions[i];
                    let ratio = (logp[a] - targets.logp_old[i].as_f64()).exp();
                    let adv = targets.advantages[i].as_f64();
                    let clipped = ratio.clamp(1.0 - targets.clip, 1.0 + targets.clip);
                    // d(-min(ρA, clip(ρ)A))/dlogp_a is -ρA when the unclipped branch is active
                    let g_logp_a = if ratio * adv <= clipped * adv {
                        -ratio * adv / nf
                    } else {
                        0.0
                    };
                    let ent: f64 = -logp.iter().map(|&lp| lp.exp() * lp).sum::<f64>();
                    for j in 0..k {
                        let pj = logp[j].exp();
                        let onehot = if j == a { 1.0 } else { 0.0 };
                        let g_clip = g_logp_a * (onehot - pj);
                        // dH/dz_j = -p_j (log p_j + H)
                        let g_ent = targets.entropy_coef / nf * pj * (logp[j] + ent);
                        dl[i * k + j] = T::of(scale * (g_clip + g_ent));
                    }
                    let diff = vv.data()[i].as_f64() - targets.returns[i].as_f64();
                    dvv[i] = T::of(scale * 2.0 * targets.value_coef * diff / nf);
                }
                acc(*logits, tensor_like(lv, dl));
                acc(*values, tensor_like(vv, dvv));
            }
            Op::Huber {
                q,
                actions,
                targets,
                delta,
            } => {
                let qv = self.value(*q);
                let (n, k) = (qv.dim(0), qv.dim(1));
                let scale = d[0].as_f64() / n as f64;
                let mut dq = vec![T::zero(); n * k];
                for i in 0..n {
                    let idx = i * k + actions[i];
                    let diff = qv.data()[idx].as_f64() - targets[i].as_f64();
                    dq[idx] = T::of(scale * diff.clamp(-delta, *delta));
                }
                acc(*q, tensor_like(qv, dq));
            }
        }
    }
}

fn tensor_like<T: Scalar>(like: &Tensor<T>, data: Vec<T>) -> Tensor<T> {
    Tensor::from_vec(like.shape(), data).expect("gradient matches value shape")
}

pub(crate) fn log_softmax_row<T: Scalar>(row: &[T]) -> Vec<f64> {
    let m = row
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v.as_f64() - lse).collect()
}

pub fn huber(d: f64, delta: f64) -> f64 {
    if d.abs() <= delta {
        0.5 * d * d
    } else {
        delta * (d.abs() - 0.5 * delta)
    }
}

/// `softmax(logits / temperature)` with max subtraction.
pub fn softmax_vec<T: Scalar>(logits: &[T], temperature: f64) -> Result<Vec<T>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let t = T::of(temperature);
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b / t));
    let e: Vec<T> = logits.iter().map(|&v| (v / t - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}
