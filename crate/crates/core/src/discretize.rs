//! Argmax-and-prune discretization of architecture weights, α snapshot logs, and
//! distinct-cell sequences.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::searchspace::{edge_map, Edge, OpKind};
use crate::supernet::{ArchParams, CellEdge, CellRole, DiscreteCell, MergeMode};

/// Post-softmax op weights of one cell role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleProbs {
    pub ops: Vec<OpKind>,
    #[serde(with = "edge_map")]
    pub probs: BTreeMap<Edge, Vec<f64>>,
}

impl RoleProbs {
    pub fn from_arch(arch: &ArchParams) -> Result<Self> {
        Ok(Self {
            ops: arch.ops.clone(),
            probs: arch.all_probs()?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.is_empty() {
            return Err(Error::Config("snapshot has no edges".into()));
        }
        for (&(i, j), p) in &self.probs {
            if i >= j || p.len() != self.ops.len() {
                return Err(Error::Config(format!("malformed snapshot edge {i}-{j}")));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 || p.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::Config(format!(
                    "edge {i}-{j} probabilities sum to {s}"
                )));
            }
        }
        Ok(())
    }

    /// Largest |p − 1/|O|| over all edges and ops.
    pub fn max_dev_from_uniform(&self) -> f64 {
        let u = 1.0 / self.ops.len() as f64;
        self.probs
            .values()
            .flatten()
            .map(|p| (p - u).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSnapshot {
    /// Environment steps consumed when the snapshot was taken.
    pub step: u64,
    pub normal: RoleProbs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<RoleProbs>,
}

impl AlphaSnapshot {
    pub fn role(&self, role: CellRole) -> Option<&RoleProbs> {
        match role {
            CellRole::Normal => Some(&self.normal),
            CellRole::Reduction => self.reduction.as_ref(),
        }
    }

    pub fn max_dev_from_uniform(&self) -> f64 {
        let r = self
            .reduction
            .as_ref()
            .map_or(0.0, RoleProbs::max_dev_from_uniform);
        self.normal.max_dev_from_uniform().max(r)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let snap: Self = serde_json::from_str(line)?;
        snap.normal.validate()?;
        if let Some(r) = &snap.reduction {
            r.validate()?;
        }
        Ok(snap)
    }
}

/// Records post-softmax edge weights; α itself is untouched.
pub fn snapshot_alpha(
    normal: &ArchParams,
    reduction: Option<&ArchParams>,
    step: u64,
) -> Result<AlphaSnapshot> {
    Ok(AlphaSnapshot {
        step,
        normal: RoleProbs::from_arch(normal)?,
        reduction: reduction.map(RoleProbs::from_arch).transpose()?,
    })
}

pub fn write_alpha_log(path: &Path, snapshots: &[AlphaSnapshot]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in snapshots {
        writeln!(w, "{}", s.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSONL α log; a file holding a single JSON object is also accepted.
pub fn read_alpha_log(path: &Path) -> Result<Vec<AlphaSnapshot>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            AlphaSnapshot::from_json_line(&line).map_err(|e| Error::Parse {
                line: n + 1,
                column: 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Picks the best non-Zero op per edge, then keeps the `min(K, j)` strongest in-edges
/// of each node j. Op ties go to the lower op index, strength ties to the lower
/// predecessor.
pub fn discretize_probs(probs: &RoleProbs, top_k: usize, merge: MergeMode) -> Result<DiscreteCell> {
    probs.validate()?;
    if top_k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    let zero = probs.ops.iter().position(|&o| o == OpKind::Zero);
    let nodes = probs.probs.keys().map(|&(_, j)| j).max().unwrap_or(0);
    let mut cell = Vec::with_capacity(nodes);
    for j in 1..=nodes {
        let mut cands = Vec::with_capacity(j);
        for i in 0..j {
            let p = probs
                .probs
                .get(&(i, j))
                .ok_or_else(|| Error::Config(format!("snapshot is missing edge {i}-{j}")))?;
            let mut best: Option<(usize, f64)> = None;
            for (k, &pk) in p.iter().enumerate() {
                if Some(k) == zero {
                    continue;
                }
                if best.is_none_or(|(_, b)| pk > b) {
                    best = Some((k, pk));
                }
            }
            let (k, strength) =
                best.ok_or_else(|| Error::Config("op set has no non-Zero op".into()))?;
            cands.push((i, probs.ops[k], strength));
        }
        cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        cands.truncate(top_k.min(j));
        cands.sort_by_key(|c| c.0);
        cell.push(
            cands
                .into_iter()
                .map(|(from, op, _)| CellEdge { from, op })
                .collect(),
        );
    }
    let cell = DiscreteCell { nodes: cell, merge };
    cell.validate(None)?;
    Ok(cell)
}

pub fn discretize(arch: &ArchParams, top_k: usize, merge: MergeMode) -> Result<DiscreteCell> {
    discretize_probs(&RoleProbs::from_arch(arch)?, top_k, merge)
}

/// A discretized normal cell and, for spaces with reduction cells, its partner.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellPair {
    pub normal: DiscreteCell,
    pub reduction: Option<DiscreteCell>,
}

pub fn discretize_snapshot(
    snap: &AlphaSnapshot,
    top_k: usize,
    merge: MergeMode,
) -> Result<CellPair> {
    Ok(CellPair {
        normal: discretize_probs(&snap.normal, top_k, merge)?,
        reduction: snap
            .reduction
            .as_ref()
            .map(|r| discretize_probs(r, top_k, merge))
            .transpose()?,
    })
}

/// Discretizes each snapshot in order and keeps only changes.
pub fn distinct_cell_sequence(
    snapshots: &[AlphaSnapshot],
    top_k: usize,
    merge: MergeMode,
) -> Result<Vec<(u64, CellPair)>> {
    let mut out: Vec<(u64, CellPair)> = Vec::new();
    for snap in snapshots {
        let pair = discretize_snapshot(snap, top_k, merge)?;
        if out.last().is_none_or(|(_, prev)| *prev != pair) {
            out.push((snap.step, pair));
        }
    }
    Ok(out)
}

pub fn cell_roundtrip(cell: &DiscreteCell) -> Result<DiscreteCell> {
    DiscreteCell::from_json(&cell.to_json())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::searchspace::{builtin_opset, enumerate_cells, CellTopology};

    fn micro_arch(nodes: usize, temperature: f64) -> ArchParams {
        let set = builtin_opset("micro").unwrap();
        let topo = CellTopology::new(nodes, 2).unwrap();
        ArchParams::uniform(CellRole::Normal, &set, &topo, temperature)
    }

    #[test]
    fn keeps_strongest_in_edge() {
        let mut arch = micro_arch(2, 1.0);
        arch.logits.insert((0, 1), vec![0.0, 0.0, 2.0, 0.0, 0.0]);
        arch.logits.insert((0, 2), vec![0.0, 0.0, 3.0, 0.0, 0.0]);
        arch.logits.insert((1, 2), vec![0.0, 2.0, 0.0, 0.0, 0.0]);
        let p = arch.all_probs().unwrap();
        let e3 = 3f64.exp();
        let e2 = 2f64.exp();
        assert!((p[&(0, 2)][2] - e3 / (e3 + 4.0)).abs() < 1e-12);
        assert!((p[&(1, 2)][1] - e2 / (e2 + 4.0)).abs() < 1e-12);
        let cell = discretize(&arch, 1, MergeMode::LastNode).unwrap();
        assert_eq!(
            cell.nodes,
            vec![
                vec![CellEdge {
                    from: 0,
                    op: OpKind::Conv3x3
                }],
                vec![CellEdge {
                    from: 0,
                    op: OpKind::Conv3x3
                }],
            ]
        );
    }

    #[test]
    fn zero_is_never_selected() {
        let mut arch = micro_arch(1, 1.0);
        arch.logits.insert((0, 1), vec![10.0, 0.0, 0.0, 0.5, 0.0]);
        let cell = discretize(&arch, 2, MergeMode::LastNode).unwrap();
        assert_eq!(cell.nodes[0][0].op, OpKind::ReLU);
    }

    #[test]
    fn uniform_ties_follow_index_order() {
        let arch = micro_arch(4, 0.2);
        let cell = discretize(&arch, 2, MergeMode::ConcatConv1x1).unwrap();
        let topo = CellTopology::new(4, 2).unwrap();
        cell.validate(Some(&topo)).unwrap();
        for (idx, edges) in cell.nodes.iter().enumerate() {
            let froms: Vec<usize> = edges.iter().map(|e| e.from).collect();
            assert_eq!(froms, (0..(idx + 1).min(2)).collect::<Vec<_>>());
            assert!(edges.iter().all(|e| e.op == OpKind::Skip));
        }
    }

    #[test]
    fn one_hot_inverts_for_every_small_cell() {
        let set = builtin_opset("micro").unwrap();
        let topo = CellTopology::new(3, 2).unwrap();
        for cell in enumerate_cells(&set, &topo, MergeMode::LastNode).unwrap() {
            let arch =
                ArchParams::one_hot(CellRole::Normal, &cell, &set, &topo, 0.2, 20.0).unwrap();
            assert_eq!(discretize(&arch, 2, MergeMode::LastNode).unwrap(), cell);
        }
    }

    fn snap(step: u64, arch: &ArchParams) -> AlphaSnapshot {
        snapshot_alpha(arch, None, step).unwrap()
    }

    #[test]
    fn snapshot_is_uniform_and_pure() {
        let arch = micro_arch(3, 0.2);
        let before = arch.clone();
        let a = snap(7, &arch);
        let b = snap(7, &arch);
        assert_eq!(a, b);
        assert_eq!(arch, before);
        assert!(a
            .normal
            .probs
            .values()
            .flatten()
            .all(|&p| (p - 0.2).abs() < 1e-12));
        assert_eq!(a.max_dev_from_uniform(), 0.0);
    }

    #[test]
    fn distinct_sequence_collapses_repeats() {
        let arch = micro_arch(2, 1.0);
        let constant: Vec<_> = (0..10).map(|s| snap(s, &arch)).collect();
        assert_eq!(
            distinct_cell_sequence(&constant, 2, MergeMode::LastNode)
                .unwrap()
                .len(),
            1
        );

        let mut flipped = arch.clone();
        flipped.logits.insert((0, 1), vec![0.0, 0.0, 0.0, 0.0, 5.0]);
        let snaps: Vec<_> = (0..10)
            .map(|s| snap(s, if s < 5 { &arch } else { &flipped }))
            .collect();
        let seq = distinct_cell_sequence(&snaps, 2, MergeMode::LastNode).unwrap();
        assert_eq!(seq.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 5]);
        assert!(seq.windows(2).all(|w| w[0].1 != w[1].1));
        assert!(distinct_cell_sequence(&[], 2, MergeMode::LastNode)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn jsonl_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = builtin_opset("classic_normal").unwrap();
        let topo = CellTopology::new(4, 2).unwrap();
        let mut arch = ArchParams::uniform(CellRole::Normal, &set, &topo, 0.2);
        for v in arch.logits.values_mut() {
            for x in v.iter_mut() {
                *x = rand::Rng::random_range(&mut rng, -1.0..1.0);
            }
        }
        let red_set = builtin_opset("classic_reduction").unwrap();
        let red = ArchParams::uniform(CellRole::Reduction, &red_set, &topo, 0.2);
        let snaps = vec![
            snapshot_alpha(&arch, Some(&red), 0).unwrap(),
            snapshot_alpha(&arch, Some(&red), 100).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alpha_log.jsonl");
        write_alpha_log(&path, &snaps).unwrap();
        let back = read_alpha_log(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(&snaps) {
            assert_eq!(a.step, b.step);
            assert_eq!(
                discretize_snapshot(a, 2, MergeMode::ConcatConv1x1).unwrap(),
                discretize_snapshot(b, 2, MergeMode::ConcatConv1x1).unwrap()
            );
        }
        let arch_json = serde_json::to_string(&arch).unwrap();
        assert!(arch_json.contains("\"0-1\""));
        assert_eq!(
            serde_json::from_str::<ArchParams>(&arch_json).unwrap(),
            arch
        );
    }

    #[test]
    fn rejects_unnormalized_snapshot() {
        let line = r#"{"step":0,"normal":{"ops":["Zero","Skip"],"probs":{"0-1":[0.7,0.7]}}}"#;
        assert!(AlphaSnapshot::from_json_line(line).is_err());
    }

    #[test]
    fn cell_roundtrip_is_identity() {
        let set = builtin_opset("micro").unwrap();
        let topo = CellTopology::new(2, 1).unwrap();
        for cell in enumerate_cells(&set, &topo, MergeMode::ConcatConv1x1).unwrap() {
            assert_eq!(cell_roundtrip(&cell).unwrap(), cell);
        }
    }
}
