//! Operation vocabularies, cell topologies, and counting/sampling over discrete cells.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supernet::{CellEdge, DiscreteCell, MergeMode};

/// Enumeration refuses spaces larger than this.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Zero,
    Skip,
    Conv3x3ReLU,
    Conv5x5ReLU,
    DilConv3x3ReLU,
    DilConv5x5ReLU,
    Conv3x3,
    Conv5x5,
    DilConv3x3,
    DilConv5x5,
    MaxPool3x3,
    AvgPool3x3,
    ReLU,
    Tanh,
}

/// Kernel geometry of a convolutional op.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub kernel: usize,
    pub dilation: usize,
    pub relu: bool,
}

impl OpKind {
    pub const ALL: [OpKind; 14] = [
        OpKind::Zero,
        OpKind::Skip,
        OpKind::Conv3x3ReLU,
        OpKind::Conv5x5ReLU,
        OpKind::DilConv3x3ReLU,
        OpKind::DilConv5x5ReLU,
        OpKind::Conv3x3,
        OpKind::Conv5x5,
        OpKind::DilConv3x3,
        OpKind::DilConv5x5,
        OpKind::MaxPool3x3,
        OpKind::AvgPool3x3,
        OpKind::ReLU,
        OpKind::Tanh,
    ];

    pub fn conv_shape(self) -> Option<ConvShape> {
        use OpKind::*;
        let (kernel, dilation, relu) = match self {
            Conv3x3ReLU => (3, 1, true),
            Conv5x5ReLU => (5, 1, true),
            DilConv3x3ReLU => (3, 2, true),
            DilConv5x5ReLU => (5, 2, true),
            Conv3x3 => (3, 1, false),
            Conv5x5 => (5, 1, false),
            DilConv3x3 => (3, 2, false),
            DilConv5x5 => (5, 2, false),
            _ => return None,
        };
        Some(ConvShape {
            kernel,
            dilation,
            relu,
        })
    }

    pub fn has_weights(self) -> bool {
        self.conv_shape().is_some()
    }

    /// True for ops that are linear maps of their input.
    pub fn is_linear(self) -> bool {
        match self {
            OpKind::Zero | OpKind::Skip | OpKind::AvgPool3x3 => true,
            op => op.conv_shape().is_some_and(|c| !c.relu),
        }
    }

    pub fn name(self) -> &'static str {
        use OpKind::*;
        match self {
            Zero => "Zero",
            Skip => "Skip",
            Conv3x3ReLU => "Conv3x3ReLU",
            Conv5x5ReLU => "Conv5x5ReLU",
            DilConv3x3ReLU => "DilConv3x3ReLU",
            DilConv5x5ReLU => "DilConv5x5ReLU",
            Conv3x3 => "Conv3x3",
            Conv5x5 => "Conv5x5",
            DilConv3x3 => "DilConv3x3",
            DilConv5x5 => "DilConv5x5",
            MaxPool3x3 => "MaxPool3x3",
            AvgPool3x3 => "AvgPool3x3",
            ReLU => "ReLU",
            Tanh => "Tanh",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown op {s:?}")))
    }
}

/// Ordered op vocabulary; α logit `k` always refers to `ops[k]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpSet {
    pub name: String,
    pub ops: Vec<OpKind>,
    /// Stride applied on edges leaving the cell input (2 for reduction sets).
    pub stride: usize,
}

impl OpSet {
    pub fn new(name: impl Into<String>, ops: Vec<OpKind>, stride: usize) -> Result<Self> {
        let set = Self {
            name: name.into(),
            ops,
            stride,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        for required in [OpKind::Zero, OpKind::Skip] {
            let n = self.ops.iter().filter(|&&o| o == required).count();
            if n != 1 {
                return Err(Error::Config(format!(
                    "op set {} must contain {required} exactly once (found {n})",
                    self.name
                )));
            }
        }
        let mut seen = self.ops.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.ops.len() {
            return Err(Error::Config(format!(
                "op set {} has duplicates",
                self.name
            )));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::Config(format!("op set stride {}", self.stride)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (usize, OpKind)> + '_ {
        self.ops
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, o)| *o != OpKind::Zero)
    }

    pub fn nonzero_count(&self) -> usize {
        self.ops.len() - 1
    }

    pub fn index_of(&self, op: OpKind) -> Option<usize> {
        self.ops.iter().position(|&o| o == op)
    }
}

pub const OPSET_NAMES: [&str; 4] = [
    "classic_normal",
    "classic_reduction",
    "classic_normal_norelu",
    "micro",
];

pub fn builtin_opset(name: &str) -> Result<OpSet> {
    use OpKind::*;
    let (ops, stride) = match name {
        "classic_normal" => (
            vec![
                Zero,
                Skip,
                Conv3x3ReLU,
                Conv5x5ReLU,
                DilConv3x3ReLU,
                DilConv5x5ReLU,
            ],
            1,
        ),
        "classic_normal_norelu" => (
            vec![Zero, Skip, Conv3x3, Conv5x5, DilConv3x3, DilConv5x5],
            1,
        ),
        "classic_reduction" => (vec![Zero, Skip, Conv3x3, MaxPool3x3, AvgPool3x3], 2),
        "micro" => (vec![Zero, Skip, Conv3x3, ReLU, Tanh], 1),
        other => {
            return Err(Error::Config(format!(
                "unknown op set {other:?}; expected one of {OPSET_NAMES:?}"
            )))
        }
    };
    OpSet::new(name, ops, stride)
}

/// Edge `(from, to)` of a cell DAG; node 0 is the cell input.
pub type Edge = (usize, usize);

/// Serde adapter writing edge-keyed maps with `"i-j"` string keys.
pub mod edge_map {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Edge;

    pub fn serialize<S, V>(map: &BTreeMap<Edge, V>, s: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        V: Serialize,
    {
        s.collect_map(map.iter().map(|((i, j), v)| (format!("{i}-{j}"), v)))
    }

    pub fn deserialize<'de, D, V>(d: D) -> Result<BTreeMap<Edge, V>, D::Error>
    where
        D: Deserializer<'de>,
        V: Deserialize<'de>,
    {
        let raw = BTreeMap::<String, V>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                let (i, j) = k
                    .split_once('-')
                    .and_then(|(i, j)| Some((i.parse().ok()?, j.parse().ok()?)))
                    .ok_or_else(|| D::Error::custom(format!("bad edge key {k:?}")))?;
                Ok(((i, j), v))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellTopology {
    /// Intermediate nodes, indexed 1..=nodes.
    pub nodes: usize,
    /// Max retained in-edges per node after discretization.
    pub top_k: usize,
}

impl CellTopology {
    pub fn new(nodes: usize, top_k: usize) -> Result<Self> {
        if nodes == 0 || top_k == 0 {
            return Err(Error::Config(format!(
                "cell topology needs nodes ≥ 1 and top-k ≥ 1 (got {nodes}, {top_k})"
            )));
        }
        Ok(Self { nodes, top_k })
    }

    /// All edges in canonical order: by target node, then by source.
    pub fn edges(&self) -> Vec<Edge> {
        (1..=self.nodes)
            .flat_map(|j| (0..j).map(move |i| (i, j)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes * (self.nodes + 1) / 2
    }

    /// Retained in-degree of node `j`.
    pub fn in_degree(&self, j: usize) -> usize {
        self.top_k.min(j)
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Number of distinct discrete cells: `O_nz · Π_{i=2}^{I} O_nz^K · C(i, K)`, with
/// node `i` keeping `min(K, i)` edges.
pub fn search_space_size(nonzero_ops: usize, nodes: usize, top_k: usize) -> Result<u128> {
    if nonzero_ops == 0 || nodes == 0 || !(1..=2).contains(&top_k) {
        return Err(Error::Config(format!(
            "search space needs O_nz ≥ 1, I ≥ 1, 1 ≤ K ≤ 2 (got {nonzero_ops}, {nodes}, {top_k})"
        )));
    }
    let overflow = || Error::Config("search space size overflows u128".into());
    let o = nonzero_ops as u128;
    let mut total = 1u128;
    for j in 1..=nodes {
        let k = top_k.min(j) as u32;
        let choices = o
            .checked_pow(k)
            .and_then(|p| p.checked_mul(binomial(j as u128, k as u128)))
            .ok_or_else(overflow)?;
        total = total.checked_mul(choices).ok_or_else(overflow)?;
    }
    Ok(total)
}

/// Draws a cell uniformly: per node a uniform predecessor subset of size `min(K, j)`,
/// and a uniform non-Zero op on each retained edge.
pub fn sample_random_cell<R: Rng + ?Sized>(
    rng: &mut R,
    opset: &OpSet,
    topo: &CellTopology,
    merge: MergeMode,
) -> DiscreteCell {
    let ops: Vec<OpKind> = opset.nonzero().map(|(_, o)| o).collect();
    let nodes = (1..=topo.nodes)
        .map(|j| {
            let mut preds = index::sample(rng, j, topo.in_degree(j)).into_vec();
            preds.sort_unstable();
            preds
                .into_iter()
                .map(|from| CellEdge {
                    from,
                    op: ops[rng.random_range(0..ops.len())],
                })
                .collect()
        })
        .collect();
    DiscreteCell { nodes, merge }
}

/// Every discrete cell of the space, without duplicates.
pub fn enumerate_cells(
    opset: &OpSet,
    topo: &CellTopology,
    merge: MergeMode,
) -> Result<Vec<DiscreteCell>> {
    let size = search_space_size(opset.nonzero_count(), topo.nodes, topo.top_k)?;
    if size > ENUMERATION_LIMIT {
        return Err(Error::SpaceTooLarge {
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    let ops: Vec<OpKind> = opset.nonzero().map(|(_, o)| o).collect();
    let per_node: Vec<Vec<Vec<CellEdge>>> = (1..=topo.nodes)
        .map(|j| node_choices(j, topo.in_degree(j), &ops))
        .collect();
    let mut cells = Vec::with_capacity(size as usize);
    let mut cursor = vec![0usize; per_node.len()];
    loop {
        cells.push(DiscreteCell {
            nodes: cursor
                .iter()
                .zip(&per_node)
                .map(|(&c, choices)| choices[c].clone())
                .collect(),
            merge,
        });
        // odometer increment, last node fastest
        let mut pos = per_node.len();
        loop {
            if pos == 0 {
                return Ok(cells);
            }
            pos -= 1;
            cursor[pos] += 1;
            if cursor[pos] < per_node[pos].len() {
                break;
            }
            cursor[pos] = 0;
        }
    }
}

fn node_choices(j: usize, k: usize, ops: &[OpKind]) -> Vec<Vec<CellEdge>> {
    let mut out = Vec::new();
    for preds in subsets(j, k) {
        let mut assign = vec![0usize; k];
        loop {
            out.push(
                preds
                    .iter()
                    .zip(&assign)
                    .map(|(&from, &o)| CellEdge { from, op: ops[o] })
                    .collect(),
            );
            let mut p = k;
            let done = loop {
                if p == 0 {
                    break true;
                }
                p -= 1;
                assign[p] += 1;
                if assign[p] < ops.len() {
                    break false;
                }
                assign[p] = 0;
            };
            if done {
                break;
            }
        }
    }
    out
}

/// Increasing `k`-subsets of `0..n` in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}
