use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ArchParams, CellRole, DiscreteCell, MergeMode, SupernetConfig};
use crate::diffcore::{ActKind, Graph, NodeId, ParamId, ParamKind, ParamStore, PoolKind};
use crate::error::{Error, Result};
use crate::searchspace::{CellTopology, Edge, OpKind, OpSet};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Supernet,
    Discrete,
    Baseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineVariant {
    Conv3x3,
    Conv5x5,
}

impl BaselineVariant {
    fn kernel(self) -> usize {
        match self {
            BaselineVariant::Conv3x3 => 3,
            BaselineVariant::Conv5x5 => 5,
        }
    }
}

pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Truncated normal (±2σ) with σ = 1/√fan_in.
    fn weight<T: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let std = 1.0 / (fan_in as f64).sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let z: f64 = normal.sample(&mut self.rng);
                if z.abs() <= 2.0 {
                    break T::of(z * std);
                }
            })
            .collect();
        Tensor::from_vec(shape, data).expect("init shape")
    }
}

#[derive(Clone, Debug)]
struct ConvUnit {
    w: ParamId,
    b: ParamId,
    stride: usize,
    dilation: usize,
    relu: bool,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar>(
        params: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        kernel: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        dilation: usize,
        relu: bool,
    ) -> Self {
        let w = params.add(
            format!("{name}.w"),
            init.weight(&[kernel, kernel, cin, cout], kernel * kernel * cin),
            ParamKind::Weight,
        );
        let b = params.add(
            format!("{name}.b"),
            Tensor::zeros(&[cout]),
            ParamKind::Weight,
        );
        Self {
            w,
            b,
            stride,
            dilation,
            relu,
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let y = g.conv2d(x, w, Some(b), self.stride, self.dilation)?;
        Ok(if self.relu { g.relu(y) } else { y })
    }
}

/// One candidate op on an edge, with its own weights when it has any.
#[derive(Clone, Debug)]
struct EdgeOp {
    index: usize,
    op: OpKind,
    conv: Option<ConvUnit>,
}

impl EdgeOp {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar>(
        params: &mut ParamStore<T>,
        init: &mut Init,
        prefix: &str,
        index: usize,
        op: OpKind,
        channels: usize,
        stride: usize,
    ) -> Self {
        let conv = op.conv_shape().map(|c| {
            ConvUnit::new(
                params,
                init,
                &format!("{prefix}.{op}"),
                c.kernel,
                channels,
                channels,
                stride,
                c.dilation,
                c.relu,
            )
        });
        Self { index, op, conv }
    }

    /// Output of this op, or `None` for Zero.
    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: NodeId,
        stride: usize,
    ) -> Result<Option<NodeId>> {
        Ok(Some(match self.op {
            OpKind::Zero => return Ok(None),
            OpKind::Skip => g.subsample(x, stride)?,
            OpKind::MaxPool3x3 => g.pool2d(x, PoolKind::Max, stride)?,
            OpKind::AvgPool3x3 => g.pool2d(x, PoolKind::Avg, stride)?,
            OpKind::ReLU => {
                let s = g.subsample(x, stride)?;
                g.activation(s, ActKind::Relu)
            }
            OpKind::Tanh => {
                let s = g.subsample(x, stride)?;
                g.activation(s, ActKind::Tanh)
            }
            _ => self
                .conv
                .as_ref()
                .expect("conv op owns weights")
                .forward(g, x)?,
        }))
    }
}

#[derive(Clone, Debug)]
struct MixedEdge {
    edge: Edge,
    ops: Vec<EdgeOp>,
}

#[derive(Clone, Debug)]
enum CellBody {
    /// Every edge carries every op of the set, mixed by shared α.
    Mixed {
        role: CellRole,
        edges: Vec<MixedEdge>,
    },
    /// `nodes[j-1]` holds the retained (predecessor, op) pairs of node j.
    Discrete { nodes: Vec<Vec<(usize, EdgeOp)>> },
}

/// A single cell instance inside a network.
#[derive(Clone, Debug)]
pub struct CellModule {
    stride: usize,
    nodes: usize,
    body: CellBody,
    merge_mode: MergeMode,
    merge: Option<ConvUnit>,
}

/// α probability nodes of one forward pass, shared by every cell of a role.
pub type EdgeProbNodes = BTreeMap<(CellRole, Edge), NodeId>;

impl CellModule {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn mixed<T: Scalar>(
        params: &mut ParamStore<T>,
        init: &mut Init,
        prefix: &str,
        role: CellRole,
        opset: &OpSet,
        topo: &CellTopology,
        channels: usize,
        merge_mode: MergeMode,
    ) -> Self {
        let edges = topo
            .edges()
            .into_iter()
            .map(|(i, j)| {
                let stride = if i == 0 { opset.stride } else { 1 };
                let ep = format!("{prefix}.e{i}-{j}");
                MixedEdge {
                    edge: (i, j),
                    ops: opset
                        .ops
                        .iter()
                        .enumerate()
                        .map(|(k, &op)| EdgeOp::new(params, init, &ep, k, op, channels, stride))
                        .collect(),
                }
            })
            .collect();
        let merge = Self::merge_unit(params, init, prefix, topo.nodes, channels, merge_mode);
        Self {
            stride: opset.stride,
            nodes: topo.nodes,
            body: CellBody::Mixed { role, edges },
            merge_mode,
            merge,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn discrete<T: Scalar>(
        params: &mut ParamStore<T>,
        init: &mut Init,
        prefix: &str,
        cell: &DiscreteCell,
        opset: &OpSet,
        channels: usize,
    ) -> Result<Self> {
        let nodes = cell
            .nodes
            .iter()
            .enumerate()
            .map(|(idx, edges)| {
                let j = idx + 1;
                edges
                    .iter()
                    .map(|e| {
                        let k = opset.index_of(e.op).ok_or_else(|| {
                            Error::InvalidCell(format!(
                                "op {} is not in op set {}",
                                e.op, opset.name
                            ))
                        })?;
                        let stride = if e.from == 0 { opset.stride } else { 1 };
                        let ep = format!("{prefix}.e{}-{j}", e.from);
                        Ok((
                            e.from,
                            EdgeOp::new(params, init, &ep, k, e.op, channels, stride),
                        ))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let merge = Self::merge_unit(params, init, prefix, cell.nodes.len(), channels, cell.merge);
        Ok(Self {
            stride: opset.stride,
            nodes: cell.nodes.len(),
            body: CellBody::Discrete { nodes },
            merge_mode: cell.merge,
            merge,
        })
    }

    fn merge_unit<T: Scalar>(
        params: &mut ParamStore<T>,
        init: &mut Init,
        prefix: &str,
        nodes: usize,
        channels: usize,
        mode: MergeMode,
    ) -> Option<ConvUnit> {
        (mode == MergeMode::ConcatConv1x1).then(|| {
            ConvUnit::new(
                params,
                init,
                &format!("{prefix}.merge"),
                1,
                nodes * channels,
                channels,
                1,
                1,
                false,
            )
        })
    }

    /// Probability-weighted sum of every op on one edge.
    pub fn mixed_edge_forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: NodeId,
        edge: Edge,
        probs: &EdgeProbNodes,
    ) -> Result<NodeId> {
        let CellBody::Mixed { role, edges } = &self.body else {
            return Err(Error::Usage("mixed edge on a discrete cell".into()));
        };
        let me = edges
            .iter()
            .find(|m| m.edge == edge)
            .ok_or_else(|| Error::Usage(format!("unknown edge {edge:?}")))?;
        let p = *probs
            .get(&(*role, edge))
            .ok_or_else(|| Error::Usage(format!("no α probabilities for {edge:?}")))?;
        let stride = if edge.0 == 0 { self.stride } else { 1 };
        let mut terms = Vec::with_capacity(me.ops.len());
        for op in &me.ops {
            if let Some(y) = op.forward(g, x, stride)? {
                terms.push((y, op.index));
            }
        }
        g.weighted_sum(&terms, p)
    }

    /// Node j sums its incoming edges; the cell output follows the merge mode.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        input: NodeId,
        probs: &EdgeProbNodes,
    ) -> Result<NodeId> {
        let mut states = vec![input];
        for j in 1..=self.nodes {
            let mut incoming = Vec::new();
            match &self.body {
                CellBody::Mixed { .. } => {
                    for i in 0..j {
                        incoming.push(self.mixed_edge_forward(g, states[i], (i, j), probs)?);
                    }
                }
                CellBody::Discrete { nodes } => {
                    for (from, op) in &nodes[j - 1] {
                        let stride = if *from == 0 { self.stride } else { 1 };
                        let y = op.forward(g, states[*from], stride)?.ok_or_else(|| {
                            Error::InvalidCell("Zero op in a discrete cell".into())
                        })?;
                        incoming.push(y);
                    }
                }
            }
            states.push(g.add(&incoming)?);
        }
        match (&self.merge_mode, &self.merge) {
            (MergeMode::ConcatConv1x1, Some(unit)) => {
                let cat = g.concat(&states[1..])?;
                unit.forward(g, cat)
            }
            _ => Ok(states[self.nodes]),
        }
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Conv(ConvUnit),
    MaxPool { stride: usize },
    Residual([ConvUnit; 2]),
    Cell(CellModule),
    Flatten,
    Relu,
    Dense { w: ParamId, b: ParamId },
}

/// An image encoder with its parameters. RL heads are appended to the same store so
/// one optimizer updates encoder, heads, and α together.
#[derive(Clone, Debug)]
pub struct Network<T: Scalar> {
    pub params: ParamStore<T>,
    kind: EncoderKind,
    layers: Vec<Layer>,
    alphas: BTreeMap<(CellRole, Edge), ParamId>,
    role_ops: BTreeMap<CellRole, Vec<OpKind>>,
    temperature: f64,
    input_shape: [usize; 3],
    feature_dim: usize,
}

impl<T: Scalar> Network<T> {
    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Number of weight scalars (α excluded).
    pub fn weight_count(&self) -> usize {
        self.params.count(ParamKind::Weight)
    }

    pub fn roles(&self) -> Vec<CellRole> {
        self.role_ops.keys().copied().collect()
    }

    pub fn cells(&self) -> impl Iterator<Item = &CellModule> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Cell(c) => Some(c),
            _ => None,
        })
    }

    pub fn alpha_param(&self, role: CellRole, edge: Edge) -> Option<ParamId> {
        self.alphas.get(&(role, edge)).copied()
    }

    /// Current α logits of a role.
    pub fn arch_params(&self, role: CellRole) -> Option<ArchParams> {
        let ops = self.role_ops.get(&role)?.clone();
        let logits = self
            .alphas
            .iter()
            .filter(|((r, _), _)| *r == role)
            .map(|((_, e), &id)| (*e, self.params.value(id).to_f64_vec()))
            .collect();
        Some(ArchParams {
            role,
            temperature: self.temperature,
            ops,
            logits,
        })
    }

    pub fn set_arch_params(&mut self, arch: &ArchParams) -> Result<()> {
        let ops = self
            .role_ops
            .get(&arch.role)
            .ok_or_else(|| Error::Usage(format!("network has no {} cells", arch.role.as_str())))?;
        if *ops != arch.ops {
            return Err(Error::Config(
                "α op order differs from the network's".into(),
            ));
        }
        for (edge, logits) in &arch.logits {
            let id = self
                .alpha_param(arch.role, *edge)
                .ok_or_else(|| Error::Usage(format!("unknown edge {edge:?}")))?;
            let v = self.params.value_mut(id);
            if v.len() != logits.len() {
                return Err(Error::Shape("α logit length".into()));
            }
            for (dst, &src) in v.data_mut().iter_mut().zip(logits) {
                *dst = T::of(src);
            }
        }
        Ok(())
    }

    /// Adds softmax nodes for every α edge.
    pub fn edge_prob_nodes(&self, g: &mut Graph<'_, T>) -> Result<EdgeProbNodes> {
        let mut out = BTreeMap::new();
        for (&key, &id) in &self.alphas {
            let logits = g.param(id);
            out.insert(key, g.softmax(logits, self.temperature)?);
        }
        Ok(out)
    }

    /// Encodes an NHWC batch into `[N, feature_dim]` features.
    pub fn encode(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let s = g.shape(x);
        if s.len() != 4 || s[1..] != self.input_shape {
            return Err(Error::Shape(format!(
                "encoder expects [N, {:?}], got {s:?}",
                self.input_shape
            )));
        }
        let probs = self.edge_prob_nodes(g)?;
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Layer::Conv(c) => c.forward(g, h)?,
                Layer::MaxPool { stride } => g.pool2d(h, PoolKind::Max, *stride)?,
                Layer::Residual([c1, c2]) => {
                    let a = g.relu(h);
                    let a = c1.forward(g, a)?;
                    let a = g.relu(a);
                    let a = c2.forward(g, a)?;
                    g.add(&[h, a])?
                }
                Layer::Cell(cell) => cell.forward(g, h, &probs)?,
                Layer::Flatten => g.flatten(h)?,
                Layer::Relu => g.relu(h),
                Layer::Dense { w, b } => {
                    let (w, b) = (g.param(*w), g.param(*b));
                    g.affine(h, w, b)?
                }
            };
        }
        Ok(h)
    }

    /// Adds a dense layer reading the encoder features, with weights drawn like the
    /// encoder's and scaled by `scale`.
    pub fn add_dense(
        &mut self,
        name: &str,
        outputs: usize,
        scale: f64,
        seed: u64,
    ) -> (ParamId, ParamId) {
        let fd = self.feature_dim;
        let w = Init::new(seed)
            .weight::<T>(&[fd, outputs], fd)
            .map(|v| v * T::of(scale));
        let w = self.params.add(format!("{name}.w"), w, ParamKind::Weight);
        let b = self.params.add(
            format!("{name}.b"),
            Tensor::zeros(&[outputs]),
            ParamKind::Weight,
        );
        (w, b)
    }

    /// Runs the encoder on a batch without keeping the graph.
    pub fn features(&self, batch: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params);
        let x = g.input(batch);
        let f = self.encode(&mut g, x)?;
        Ok(g.value(f).clone())
    }

    /// Spatial extent entering the flatten layer.
    pub fn final_spatial(&self) -> (usize, usize) {
        let mut h = self.input_shape[0];
        let mut w = self.input_shape[1];
        for layer in &self.layers {
            let s = match layer {
                Layer::Conv(c) => c.stride,
                Layer::MaxPool { stride } => *stride,
                Layer::Cell(c) => c.stride,
                _ => 1,
            };
            h = h.div_ceil(s);
            w = w.div_ceil(s);
        }
        (h, w)
    }
}

/// Copies every parameter whose name and shape match from `src` into `dst`.
/// Returns the number of tensors copied.
pub fn copy_matching_params<T: Scalar>(src: &ParamStore<T>, dst: &mut ParamStore<T>) -> usize {
    let mut n = 0;
    let ids: Vec<ParamId> = dst.ids().collect();
    for id in ids {
        let name = dst.get(id).name.clone();
        if let Some(sid) = src.id(&name) {
            if src.value(sid).shape() == dst.value(id).shape() {
                *dst.value_mut(id) = src.value(sid).clone();
                n += 1;
            }
        }
    }
    n
}

/// Tracks spatial size and channels while laying out blocks.
struct Builder<T: Scalar> {
    params: ParamStore<T>,
    init: Init,
    layers: Vec<Layer>,
    h: usize,
    w: usize,
    c: usize,
}

impl<T: Scalar> Builder<T> {
    fn new(input_shape: [usize; 3], seed: u64) -> Result<Self> {
        if input_shape.contains(&0) {
            return Err(Error::Config(format!("input shape {input_shape:?}")));
        }
        Ok(Self {
            params: ParamStore::new(),
            init: Init::new(seed),
            layers: Vec::new(),
            h: input_shape[0],
            w: input_shape[1],
            c: input_shape[2],
        })
    }

    fn reduce_spatial(&mut self, stride: usize) -> Result<()> {
        if stride == 2 {
            if self.h < 2 || self.w < 2 {
                return Err(Error::Config(format!(
                    "too many reductions: spatial dims exhausted at {}x{}",
                    self.h, self.w
                )));
            }
            self.h = self.h.div_ceil(2);
            self.w = self.w.div_ceil(2);
        }
        Ok(())
    }

    fn conv(&mut self, name: &str, kernel: usize, cout: usize, stride: usize) -> Result<()> {
        self.reduce_spatial(stride)?;
        let unit = ConvUnit::new(
            &mut self.params,
            &mut self.init,
            name,
            kernel,
            self.c,
            cout,
            stride,
            1,
            false,
        );
        self.layers.push(Layer::Conv(unit));
        self.c = cout;
        Ok(())
    }

    fn max_pool(&mut self, stride: usize) -> Result<()> {
        self.reduce_spatial(stride)?;
        self.layers.push(Layer::MaxPool { stride });
        Ok(())
    }

    fn head(&mut self, feature_dim: usize) {
        let flat = self.h * self.w * self.c;
        self.layers.push(Layer::Flatten);
        self.layers.push(Layer::Relu);
        let w = self.params.add(
            "head.w",
            self.init.weight(&[flat, feature_dim], flat),
            ParamKind::Weight,
        );
        let b = self
            .params
            .add("head.b", Tensor::zeros(&[feature_dim]), ParamKind::Weight);
        self.layers.push(Layer::Dense { w, b });
    }
}

/// Lays out the preprocessor, blocks and head; `cell_at` supplies each cell.
fn build_stack<T: Scalar>(
    cfg: &SupernetConfig,
    input_shape: [usize; 3],
    seed: u64,
    mut cell_at: impl FnMut(&mut Builder<T>, &str, CellRole, usize) -> Result<CellModule>,
) -> Result<Builder<T>> {
    cfg.validate()?;
    let mut b = Builder::new(input_shape, seed)?;
    let with_reduction = cfg.reduction_cells > 0;
    if with_reduction {
        b.conv("pre.conv", 3, cfg.depths[0], 1)?;
    }
    for (d, &depth) in cfg.depths.iter().enumerate() {
        if with_reduction {
            if b.c != depth {
                b.conv(&format!("b{d}.adjust"), 1, depth, 1)?;
            }
        } else {
            b.conv(&format!("b{d}.reduce"), 3, depth, 1)?;
            b.max_pool(2)?;
        }
        for n in 0..cfg.normal_cells {
            let cell = cell_at(&mut b, &format!("b{d}.n{n}"), CellRole::Normal, depth)?;
            b.layers.push(Layer::Cell(cell));
        }
        for r in 0..cfg.reduction_cells {
            b.reduce_spatial(2)?;
            let cell = cell_at(&mut b, &format!("b{d}.r{r}"), CellRole::Reduction, depth)?;
            b.layers.push(Layer::Cell(cell));
        }
    }
    b.head(cfg.feature_dim);
    Ok(b)
}

/// Supernet encoder: every cell edge mixes all ops with softmax(α/τ) weights. α logits
/// start at zero and are shared by all cells of a role.
pub fn build_supernet<T: Scalar>(
    cfg: &SupernetConfig,
    input_shape: [usize; 3],
    seed: u64,
) -> Result<Network<T>> {
    cfg.validate()?;
    let topo = cfg.topology()?;
    let mut alphas = BTreeMap::new();
    let mut role_ops = BTreeMap::new();
    let mut sets = BTreeMap::new();
    let mut alpha_store = Vec::new();
    for role in cfg.roles() {
        let set = cfg.opset(role)?;
        role_ops.insert(role, set.ops.clone());
        for e in topo.edges() {
            alpha_store.push((role, e, set.len()));
        }
        sets.insert(role, set);
    }
    let mut b = build_stack::<T>(cfg, input_shape, seed, |b, prefix, role, depth| {
        Ok(CellModule::mixed(
            &mut b.params,
            &mut b.init,
            prefix,
            role,
            &sets[&role],
            &topo,
            depth,
            cfg.merge,
        ))
    })?;
    for (role, (i, j), len) in alpha_store {
        let id = b.params.add(
            format!("alpha.{}.e{i}-{j}", role.as_str()),
            Tensor::zeros(&[len]),
            ParamKind::Arch,
        );
        alphas.insert((role, (i, j)), id);
    }
    Ok(Network {
        params: b.params,
        kind: EncoderKind::Supernet,
        layers: b.layers,
        alphas,
        role_ops,
        temperature: cfg.temperature,
        input_shape,
        feature_dim: cfg.feature_dim,
    })
}

/// Same stacking as [`build_supernet`] with each mixed edge replaced by the cell's
/// retained op; fresh weights.
pub fn build_discrete_network<T: Scalar>(
    cfg: &SupernetConfig,
    normal: &DiscreteCell,
    reduction: Option<&DiscreteCell>,
    input_shape: [usize; 3],
    seed: u64,
) -> Result<Network<T>> {
    cfg.validate()?;
    let topo = cfg.topology()?;
    normal.validate(Some(&topo))?;
    let reduction = match (cfg.reduction_cells > 0, reduction) {
        (true, Some(r)) => {
            r.validate(Some(&topo))?;
            Some(r)
        }
        (true, None) => {
            return Err(Error::InvalidCell(
                "configuration has reduction cells but no reduction cell was given".into(),
            ))
        }
        (false, _) => None,
    };
    let normal_set = cfg.normal_set()?;
    let reduction_set = cfg.reduction_set()?;
    let b = build_stack::<T>(cfg, input_shape, seed, |b, prefix, role, depth| {
        let (cell, set) = match role {
            CellRole::Normal => (normal, &normal_set),
            CellRole::Reduction => (reduction.expect("checked above"), &reduction_set),
        };
        CellModule::discrete(&mut b.params, &mut b.init, prefix, cell, set, depth)
    })?;
    Ok(Network {
        params: b.params,
        kind: EncoderKind::Discrete,
        layers: b.layers,
        alphas: BTreeMap::new(),
        role_ops: BTreeMap::new(),
        temperature: cfg.temperature,
        input_shape,
        feature_dim: cfg.feature_dim,
    })
}

/// Residual baseline: per block Conv → MaxPool3x3/2 → 2 × [ReLU, Conv, ReLU, Conv] + skip.
pub fn build_baseline_encoder<T: Scalar>(
    depths: &[usize],
    variant: BaselineVariant,
    feature_dim: usize,
    input_shape: [usize; 3],
    seed: u64,
) -> Result<Network<T>> {
    if depths.is_empty() || depths.contains(&0) || feature_dim == 0 {
        return Err(Error::Config(format!("invalid baseline depths {depths:?}")));
    }
    let k = variant.kernel();
    let mut b = Builder::<T>::new(input_shape, seed)?;
    for (d, &depth) in depths.iter().enumerate() {
        b.conv(&format!("b{d}.conv"), k, depth, 1)?;
        b.max_pool(2)?;
        for r in 0..2 {
            let mut unit = |i: usize| {
                ConvUnit::new(
                    &mut b.params,
                    &mut b.init,
                    &format!("b{d}.res{r}.conv{i}"),
                    k,
                    depth,
                    depth,
                    1,
                    1,
                    false,
                )
            };
            let pair = [unit(0), unit(1)];
            b.layers.push(Layer::Residual(pair));
        }
    }
    b.head(feature_dim);
    Ok(Network {
        params: b.params,
        kind: EncoderKind::Baseline,
        layers: b.layers,
        alphas: BTreeMap::new(),
        role_ops: BTreeMap::new(),
        temperature: 1.0,
        input_shape,
        feature_dim,
    })
}
