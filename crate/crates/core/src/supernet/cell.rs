use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::searchspace::{CellTopology, OpKind};

/// How a cell combines its intermediate nodes into an output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Channel-concatenate all intermediate nodes, then a Conv1x1 back to cell depth.
    #[default]
    ConcatConv1x1,
    /// Output the last intermediate node.
    LastNode,
}

impl MergeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MergeMode::ConcatConv1x1 => "concat_conv1x1",
            MergeMode::LastNode => "last_node",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellEdge {
    pub from: usize,
    pub op: OpKind,
}

/// A sparse cell: `nodes[j-1]` lists the retained in-edges of intermediate node `j`,
/// sorted by predecessor.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "CellJson", try_from = "CellJson")]
pub struct DiscreteCell {
    pub nodes: Vec<Vec<CellEdge>>,
    pub merge: MergeMode,
}

#[derive(Clone, Serialize, Deserialize)]
struct CellJson {
    merge: MergeMode,
    nodes: Vec<NodeJson>,
}

#[derive(Clone, Serialize, Deserialize)]
struct NodeJson {
    node: usize,
    edges: Vec<CellEdge>,
}

/// Prefix marking structural errors raised while converting parsed JSON.
const INVALID: &str = "invalid cell: ";

impl CellJson {
    fn invalid(e: &serde_json::Error) -> Option<String> {
        let msg = e.to_string();
        msg.strip_prefix(INVALID)
            .map(|m| match m.rfind(" at line ") {
                Some(i) => m[..i].to_string(),
                None => m.to_string(),
            })
    }
}

impl From<DiscreteCell> for CellJson {
    fn from(cell: DiscreteCell) -> Self {
        CellJson {
            merge: cell.merge,
            nodes: cell
                .nodes
                .into_iter()
                .enumerate()
                .map(|(i, edges)| NodeJson { node: i + 1, edges })
                .collect(),
        }
    }
}

impl TryFrom<CellJson> for DiscreteCell {
    type Error = String;

    fn try_from(doc: CellJson) -> std::result::Result<Self, String> {
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for (i, n) in doc.nodes.into_iter().enumerate() {
            if n.node != i + 1 {
                return Err(format!(
                    "{INVALID}node entries must be listed as 1..I in order (entry {i} is node {})",
                    n.node
                ));
            }
            let mut edges = n.edges;
            edges.sort_by_key(|e| e.from);
            nodes.push(edges);
        }
        let cell = DiscreteCell {
            nodes,
            merge: doc.merge,
        };
        match cell.validate(None) {
            Ok(()) => Ok(cell),
            Err(Error::InvalidCell(m)) => Err(format!("{INVALID}{m}")),
            Err(e) => Err(format!("{INVALID}{e}")),
        }
    }
}

impl DiscreteCell {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Checks structural invariants, and the exact in-degree `min(K, j)` when a
    /// topology is given.
    pub fn validate(&self, topo: Option<&CellTopology>) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidCell("cell has no intermediate nodes".into()));
        }
        if let Some(t) = topo {
            if t.nodes != self.nodes.len() {
                return Err(Error::InvalidCell(format!(
                    "cell has {} nodes, topology expects {}",
                    self.nodes.len(),
                    t.nodes
                )));
            }
        }
        for (idx, edges) in self.nodes.iter().enumerate() {
            let j = idx + 1;
            if edges.is_empty() {
                return Err(Error::InvalidCell(format!("node {j} has no inputs")));
            }
            if let Some(t) = topo {
                if edges.len() != t.in_degree(j) {
                    return Err(Error::InvalidCell(format!(
                        "node {j} has {} inputs, expected {}",
                        edges.len(),
                        t.in_degree(j)
                    )));
                }
            }
            let mut seen = HashSet::new();
            for e in edges {
                if e.op == OpKind::Zero {
                    return Err(Error::InvalidCell(format!(
                        "edge ({}, {j}) uses the Zero op",
                        e.from
                    )));
                }
                if e.from >= j {
                    return Err(Error::InvalidCell(format!(
                        "edge ({}, {j}) does not point forward",
                        e.from
                    )));
                }
                if !seen.insert(e.from) {
                    return Err(Error::InvalidCell(format!(
                        "duplicate edge ({}, {j})",
                        e.from
                    )));
                }
            }
            if edges.windows(2).any(|w| w[0].from > w[1].from) {
                return Err(Error::InvalidCell(format!(
                    "node {j} edges not sorted by predecessor"
                )));
            }
        }
        Ok(())
    }

    /// Every op used by the cell.
    pub fn ops(&self) -> impl Iterator<Item = OpKind> + '_ {
        self.nodes.iter().flatten().map(|e| e.op)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("cell serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| match CellJson::invalid(&e) {
            Some(msg) => Error::InvalidCell(msg),
            None => Error::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            },
        })
    }

    /// Graphviz rendering: input node, intermediate nodes, merged output.
    pub fn to_dot(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "digraph \"{}\" {{", title.replace('"', "'"));
        s.push_str("  rankdir=LR;\n  node [shape=box, style=rounded];\n");
        s.push_str("  n0 [label=\"input\"];\n");
        for j in 1..=self.nodes.len() {
            let _ = writeln!(s, "  n{j} [label=\"{j}\", shape=circle];");
        }
        s.push_str("  out [label=\"output\"];\n");
        for (idx, edges) in self.nodes.iter().enumerate() {
            for e in edges {
                let _ = writeln!(s, "  n{} -> n{} [label=\"{}\"];", e.from, idx + 1, e.op);
            }
        }
        match self.merge {
            MergeMode::ConcatConv1x1 => {
                for j in 1..=self.nodes.len() {
                    let _ = writeln!(s, "  n{j} -> out [style=dashed];");
                }
                s.push_str("  out [label=\"concat + Conv1x1\"];\n");
            }
            MergeMode::LastNode => {
                let _ = writeln!(s, "  n{} -> out [style=dashed];", self.nodes.len());
            }
        }
        s.push_str("}\n");
        s
    }
}
