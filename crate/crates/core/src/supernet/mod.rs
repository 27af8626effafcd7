//! Continuously relaxed supernet encoders, their discretized counterparts, and the
//! residual baseline encoder.
//!
//! A network is a stack of `D` blocks. With reduction cells (`R > 0`) an initial
//! Conv3x3 preprocesses the input and each block holds `N` normal then `R` reduction
//! cells, with a Conv1x1 whenever the block depth changes. Without reduction cells
//! every block opens with a fixed Conv3x3 + MaxPool3x3/2 pair. All encoders end in
//! flatten → ReLU → dense(feature_dim).

mod cell;
mod network;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use cell::{CellEdge, DiscreteCell, MergeMode};
pub use network::{
    build_baseline_encoder, build_discrete_network, build_supernet, copy_matching_params,
    BaselineVariant, CellModule, EdgeProbNodes, EncoderKind, Network,
};

use crate::diffcore::softmax_vec;
use crate::error::{Error, Result};
use crate::searchspace::{builtin_opset, CellTopology, Edge, OpKind, OpSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellRole {
    Normal,
    Reduction,
}

impl CellRole {
    pub fn as_str(self) -> &'static str {
        match self {
            CellRole::Normal => "normal",
            CellRole::Reduction => "reduction",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupernetConfig {
    /// Normal cells per block (N).
    pub normal_cells: usize,
    /// Reduction cells per block (R).
    pub reduction_cells: usize,
    /// Intermediate nodes per cell (I).
    pub nodes: usize,
    /// Retained in-edges per node after discretization (K).
    pub top_k: usize,
    /// Channel depth per block; its length is the block count D.
    pub depths: Vec<usize>,
    pub merge: MergeMode,
    pub normal_opset: String,
    pub reduction_opset: String,
    /// Softmax temperature τ; edge weights are `softmax(α / τ)`.
    pub temperature: f64,
    pub feature_dim: usize,
}

impl Default for SupernetConfig {
    fn default() -> Self {
        Self {
            normal_cells: 2,
            reduction_cells: 0,
            nodes: 4,
            top_k: 2,
            depths: vec![8, 8],
            merge: MergeMode::ConcatConv1x1,
            normal_opset: "micro".into(),
            reduction_opset: "classic_reduction".into(),
            temperature: 0.2,
            feature_dim: 256,
        }
    }
}

impl SupernetConfig {
    /// Classic search space: (N, R, I) = (1, 1, 4).
    pub fn classic() -> Self {
        Self {
            normal_cells: 1,
            reduction_cells: 1,
            normal_opset: "classic_normal".into(),
            ..Self::default()
        }
    }

    pub fn blocks(&self) -> usize {
        self.depths.len()
    }

    pub fn topology(&self) -> Result<CellTopology> {
        CellTopology::new(self.nodes, self.top_k)
    }

    pub fn normal_set(&self) -> Result<OpSet> {
        builtin_opset(&self.normal_opset)
    }

    pub fn reduction_set(&self) -> Result<OpSet> {
        let mut set = builtin_opset(&self.reduction_opset)?;
        set.stride = 2;
        Ok(set)
    }

    pub fn opset(&self, role: CellRole) -> Result<OpSet> {
        match role {
            CellRole::Normal => self.normal_set(),
            CellRole::Reduction => self.reduction_set(),
        }
    }

    pub fn roles(&self) -> Vec<CellRole> {
        let mut roles = vec![CellRole::Normal];
        if self.reduction_cells > 0 {
            roles.push(CellRole::Reduction);
        }
        roles
    }

    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() || self.depths.contains(&0) {
            return Err(Error::Config(format!("invalid depths {:?}", self.depths)));
        }
        if self.normal_cells + self.reduction_cells == 0 {
            return Err(Error::Config("a block needs at least one cell".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        self.topology()?;
        self.normal_set()?;
        if self.reduction_cells > 0 {
            self.reduction_set()?;
        }
        Ok(())
    }
}

/// Architecture logits for one cell role, in op-set order per edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    pub role: CellRole,
    pub temperature: f64,
    pub ops: Vec<OpKind>,
    #[serde(with = "crate::searchspace::edge_map")]
    pub logits: BTreeMap<Edge, Vec<f64>>,
}

impl ArchParams {
    /// Zero logits, i.e. uniform edge weights.
    pub fn uniform(role: CellRole, opset: &OpSet, topo: &CellTopology, temperature: f64) -> Self {
        Self {
            role,
            temperature,
            ops: opset.ops.clone(),
            logits: topo
                .edges()
                .into_iter()
                .map(|e| (e, vec![0.0; opset.len()]))
                .collect(),
        }
    }

    /// Encodes a discrete cell: retained edges get `margin` on their op, every other
    /// edge gets `margin` on Zero.
    pub fn one_hot(
        role: CellRole,
        cell: &DiscreteCell,
        opset: &OpSet,
        topo: &CellTopology,
        temperature: f64,
        margin: f64,
    ) -> Result<Self> {
        cell.validate(Some(topo))?;
        let zero = opset.index_of(OpKind::Zero).expect("validated op set");
        let mut arch = Self::uniform(role, opset, topo, temperature);
        for v in arch.logits.values_mut() {
            v[zero] = margin;
        }
        for (idx, edges) in cell.nodes.iter().enumerate() {
            for e in edges {
                let k = opset.index_of(e.op).ok_or_else(|| {
                    Error::InvalidCell(format!("op {} not in op set {}", e.op, opset.name))
                })?;
                let v = arch
                    .logits
                    .get_mut(&(e.from, idx + 1))
                    .expect("edge exists");
                v.iter_mut().for_each(|x| *x = 0.0);
                v[k] = margin;
            }
        }
        Ok(arch)
    }

    pub fn edge_probs(&self, edge: Edge) -> Result<Vec<f64>> {
        let logits = self
            .logits
            .get(&edge)
            .ok_or_else(|| Error::Usage(format!("unknown edge {edge:?}")))?;
        softmax_vec(logits, self.temperature)
    }

    pub fn all_probs(&self) -> Result<BTreeMap<Edge, Vec<f64>>> {
        self.logits
            .keys()
            .map(|&e| Ok((e, self.edge_probs(e)?)))
            .collect()
    }
}

#[cfg(test)]
mod tests;
