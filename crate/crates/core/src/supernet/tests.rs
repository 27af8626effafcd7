use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::network::Init;
use super::*;
use crate::diffcore::{Graph, NodeId, ParamId, ParamKind, ParamStore};
use crate::searchspace::sample_random_cell;
use crate::tensor::Tensor;

fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(-1.0, 1.0).unwrap();
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| u.sample(&mut rng)).collect()).unwrap()
}

fn max_rel(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = b.max_abs().max(1e-12);
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}

/// A lone mixed cell plus its α parameters.
struct Probe {
    params: ParamStore<f64>,
    cell: CellModule,
    alphas: BTreeMap<Edge, ParamId>,
    temperature: f64,
}

impl Probe {
    fn new(opset: &OpSet, nodes: usize, merge: MergeMode, channels: usize) -> Self {
        let topo = CellTopology::new(nodes, 2).unwrap();
        let mut params = ParamStore::new();
        let mut init = Init::new(7);
        let cell = CellModule::mixed(
            &mut params,
            &mut init,
            "c",
            CellRole::Normal,
            opset,
            &topo,
            channels,
            merge,
        );
        let alphas = topo
            .edges()
            .into_iter()
            .map(|(i, j)| {
                let id = params.add(
                    format!("alpha.e{i}-{j}"),
                    Tensor::zeros(&[opset.len()]),
                    ParamKind::Arch,
                );
                ((i, j), id)
            })
            .collect();
        Self {
            params,
            cell,
            alphas,
            temperature: 1.0,
        }
    }

    fn set_logits(&mut self, logits: &[f64]) {
        for &id in self.alphas.values() {
            *self.params.value_mut(id) = Tensor::from_f64(&[logits.len()], logits).unwrap();
        }
    }

    fn probs(&self, g: &mut Graph<'_, f64>) -> EdgeProbNodes {
        self.alphas
            .iter()
            .map(|(&e, &id)| {
                let l = g.param(id);
                (
                    (CellRole::Normal, e),
                    g.softmax(l, self.temperature).unwrap(),
                )
            })
            .collect()
    }

    fn edge(&self, x: &Tensor<f64>, edge: Edge) -> Tensor<f64> {
        let mut g = Graph::new(&self.params);
        let probs = self.probs(&mut g);
        let xi = g.input(x.clone());
        let y = self
            .cell
            .mixed_edge_forward(&mut g, xi, edge, &probs)
            .unwrap();
        g.value(y).clone()
    }

    fn cell(&self, x: &Tensor<f64>) -> Tensor<f64> {
        let mut g = Graph::new(&self.params);
        let probs = self.probs(&mut g);
        let xi = g.input(x.clone());
        let y = self.cell.forward(&mut g, xi, &probs).unwrap();
        g.value(y).clone()
    }

    /// Output of a single op applied directly through a one-op cell with the same seed.
    fn plain_op(&self, x: &Tensor<f64>, k: usize) -> Tensor<f64> {
        let mut logits = vec![-1e9; self.params.value(self.alphas[&(0, 1)]).len()];
        logits[k] = 0.0;
        let mut exact = Probe {
            params: self.params.clone(),
            cell: self.cell.clone(),
            alphas: self.alphas.clone(),
            temperature: 1.0,
        };
        exact.set_logits(&logits);
        exact.edge(x, (0, 1))
    }
}

fn zero_skip() -> OpSet {
    OpSet::new("zs", vec![OpKind::Zero, OpKind::Skip], 1).unwrap()
}

#[test]
fn edge_probs_uniform_sharp_and_shift_invariant() {
    let micro = builtin_opset("micro").unwrap();
    let topo = CellTopology::new(4, 2).unwrap();
    let mut arch = ArchParams::uniform(CellRole::Normal, &micro, &topo, 1.0);
    for p in arch.edge_probs((0, 1)).unwrap() {
        assert!((p - 0.2).abs() < 1e-12);
    }
    arch.logits.insert((0, 1), vec![0.0, 0.0, 10.0, 0.0, 0.0]);
    let p = arch.edge_probs((0, 1)).unwrap();
    assert_eq!(micro.ops[2], OpKind::Conv3x3);
    let e10 = 10f64.exp();
    assert!((p[2] - e10 / (e10 + 4.0)).abs() < 1e-12);
    assert!(p[2] > 0.9998);
    let mut sharp = arch.clone();
    sharp.temperature = 0.2;
    assert!(sharp.edge_probs((0, 1)).unwrap()[2] > 0.9999);
    arch.logits.insert((0, 1), vec![3.0, 3.0, 13.0, 3.0, 3.0]);
    let q = arch.edge_probs((0, 1)).unwrap();
    for (a, b) in p.iter().zip(&q) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(matches!(arch.edge_probs((3, 1)), Err(Error::Usage(_))));
    assert_eq!(arch.all_probs().unwrap().len(), topo.edge_count());
}

#[test]
fn mixed_edge_zero_and_skip() {
    let mut probe = Probe::new(&zero_skip(), 1, MergeMode::LastNode, 2);
    let x = random_input(&[1, 3, 3, 2], 1);
    let y = probe.edge(&x, (0, 1));
    assert!(max_rel(&y, &x.map(|v| 0.5 * v)) < 1e-12);
    probe.set_logits(&[-1e9, 0.0]);
    assert_eq!(probe.edge(&x, (0, 1)).data(), x.data());
}

#[test]
fn one_hot_margin_reproduces_every_op() {
    for name in ["micro", "classic_normal", "classic_normal_norelu"] {
        let set = builtin_opset(name).unwrap();
        let mut probe = Probe::new(&set, 1, MergeMode::LastNode, 3);
        let x = random_input(&[2, 5, 5, 3], 2);
        for (k, _) in set.nonzero() {
            let plain = probe.plain_op(&x, k);
            let mut logits = vec![0.0; set.len()];
            logits[k] = 20.0;
            probe.set_logits(&logits);
            let mixed = probe.edge(&x, (0, 1));
            assert!(max_rel(&mixed, &plain) < 1e-5, "{name} op {k}");
        }
    }
}

#[test]
fn cell_forward_single_edge_and_skip_chain() {
    let x = random_input(&[1, 4, 4, 2], 3);
    let mut one = Probe::new(&zero_skip(), 1, MergeMode::LastNode, 2);
    assert_eq!(one.cell(&x).data(), one.edge(&x, (0, 1)).data());
    one.set_logits(&[-1e9, 0.0]);
    assert_eq!(one.cell(&x).data(), x.data());

    let mut two = Probe::new(&zero_skip(), 2, MergeMode::LastNode, 2);
    two.set_logits(&[-1e9, 0.0]);
    assert!(max_rel(&two.cell(&x), &x.map(|v| 2.0 * v)) < 1e-12);
}

#[test]
fn cell_forward_all_zero() {
    let x = random_input(&[1, 4, 4, 2], 4);
    let mut last = Probe::new(&zero_skip(), 3, MergeMode::LastNode, 2);
    last.set_logits(&[0.0, -1e9]);
    assert!(last.cell(&x).data().iter().all(|&v| v == 0.0));

    let mut concat = Probe::new(&zero_skip(), 3, MergeMode::ConcatConv1x1, 2);
    concat.set_logits(&[0.0, -1e9]);
    let bias = concat.params.id("c.merge.b").unwrap();
    *concat.params.value_mut(bias) = Tensor::from_f64(&[2], &[0.25, -1.5]).unwrap();
    let y = concat.cell(&x);
    for px in y.data().chunks(2) {
        assert_eq!(px, [0.25, -1.5]);
    }
}

fn classic_cfg(depths: Vec<usize>) -> SupernetConfig {
    SupernetConfig {
        depths,
        feature_dim: 16,
        ..SupernetConfig::classic()
    }
}

#[test]
fn classic_stack_reduces_to_three_by_three() {
    let cfg = classic_cfg(vec![16, 16, 16]);
    let net = build_supernet::<f32>(&cfg, [24, 24, 3], 0).unwrap();
    assert_eq!(net.final_spatial(), (3, 3));
    assert!(net.params.id("pre.conv.w").is_some());
    let again = build_supernet::<f32>(&cfg, [24, 24, 3], 0).unwrap();
    assert_eq!(net.weight_count(), again.weight_count());
    assert_eq!(net.params.len(), again.params.len());
}

#[test]
fn micro_stack_uses_fixed_reductions() {
    let cfg = SupernetConfig {
        depths: vec![4, 4, 4],
        feature_dim: 8,
        ..SupernetConfig::default()
    };
    let net = build_supernet::<f64>(&cfg, [24, 24, 3], 0).unwrap();
    assert!(net.params.id("pre.conv.w").is_none());
    assert!(net.params.id("b0.reduce.w").is_some());
    assert_eq!(net.final_spatial(), (3, 3));
    assert_eq!(net.roles(), vec![CellRole::Normal]);
    let feats = net.features(random_input(&[2, 24, 24, 3], 5)).unwrap();
    assert_eq!(feats.shape(), [2, 8]);
}

#[test]
fn spatial_law_and_exhaustion() {
    for d in 1..=4 {
        let cfg = classic_cfg(vec![2; d]);
        let net = build_supernet::<f32>(&cfg, [20, 20, 3], 1).unwrap();
        let expected = 20usize.div_ceil(1 << d);
        assert_eq!(net.final_spatial(), (expected, expected));
    }
    let cfg = classic_cfg(vec![2; 6]);
    assert!(matches!(
        build_supernet::<f32>(&cfg, [8, 8, 3], 1),
        Err(Error::Config(_))
    ));
}

#[test]
fn alpha_is_shared_across_cells_of_a_role() {
    let cfg = SupernetConfig {
        depths: vec![2, 2],
        feature_dim: 4,
        ..SupernetConfig::classic()
    };
    let mut net = build_supernet::<f64>(&cfg, [8, 8, 3], 2).unwrap();
    let topo = cfg.topology().unwrap();
    assert_eq!(
        net.params.count(ParamKind::Arch),
        2 * topo.edge_count() * 6 - topo.edge_count()
    );
    let mut arch = net.arch_params(CellRole::Normal).unwrap();
    assert!(arch
        .all_probs()
        .unwrap()
        .values()
        .flatten()
        .all(|p| (p - 1.0 / 6.0).abs() < 1e-12));
    arch.logits.get_mut(&(0, 1)).unwrap()[3] = 1.0;
    net.set_arch_params(&arch).unwrap();
    let back = net.arch_params(CellRole::Normal).unwrap();
    assert_eq!(back, arch);
    let reduction = net.arch_params(CellRole::Reduction).unwrap();
    assert!(reduction.logits.values().flatten().all(|&l| l == 0.0));
}

#[test]
fn gradient_reaches_alpha() {
    let cfg = SupernetConfig {
        depths: vec![2],
        feature_dim: 4,
        ..SupernetConfig::default()
    };
    let net = build_supernet::<f64>(&cfg, [6, 6, 3], 3).unwrap();
    let mut g = Graph::new(&net.params);
    let x = g.input(random_input(&[2, 6, 6, 3], 6));
    let f = net.encode(&mut g, x).unwrap();
    let loss = g.sum(f);
    let grads = g.backward(loss).unwrap();
    let nonzero = net
        .params
        .iter()
        .filter(|(_, p)| p.kind == ParamKind::Arch)
        .any(|(id, _)| grads.param(id).max_abs() > 0.0);
    assert!(nonzero);
}

#[test]
fn rejects_wrong_input_shape() {
    let net = build_supernet::<f64>(&SupernetConfig::default(), [8, 8, 3], 0).unwrap();
    let mut g = Graph::new(&net.params);
    let x = g.input(Tensor::zeros(&[1, 8, 8, 4]));
    assert!(matches!(net.encode(&mut g, x), Err(Error::Shape(_))));
}

fn encode(net: &Network<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    net.features(x.clone()).unwrap()
}

#[test]
fn one_hot_supernet_matches_discrete_network() {
    let cfg = SupernetConfig {
        depths: vec![3, 4],
        feature_dim: 6,
        ..SupernetConfig::classic()
    };
    let topo = cfg.topology().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal_set = cfg.normal_set().unwrap();
    let reduction_set = cfg.reduction_set().unwrap();
    let normal = sample_random_cell(&mut rng, &normal_set, &topo, cfg.merge);
    let reduction = sample_random_cell(&mut rng, &reduction_set, &topo, cfg.merge);

    let mut sup = build_supernet::<f64>(&cfg, [8, 8, 3], 4).unwrap();
    for (role, cell, set) in [
        (CellRole::Normal, &normal, &normal_set),
        (CellRole::Reduction, &reduction, &reduction_set),
    ] {
        let arch = ArchParams::one_hot(role, cell, set, &topo, cfg.temperature, 20.0).unwrap();
        sup.set_arch_params(&arch).unwrap();
    }
    let mut disc =
        build_discrete_network::<f64>(&cfg, &normal, Some(&reduction), [8, 8, 3], 99).unwrap();
    let copied = copy_matching_params(&sup.params, &mut disc.params);
    assert_eq!(copied, disc.params.len());
    assert!(disc.weight_count() < sup.weight_count());

    let x = random_input(&[2, 8, 8, 3], 7);
    assert!(max_rel(&encode(&disc, &x), &encode(&sup, &x)) < 1e-5);
}

#[test]
fn discrete_network_checks_cells() {
    let cfg = SupernetConfig::classic();
    let topo = cfg.topology().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let normal = sample_random_cell(&mut rng, &cfg.normal_set().unwrap(), &topo, cfg.merge);
    assert!(matches!(
        build_discrete_network::<f32>(&cfg, &normal, None, [8, 8, 3], 0),
        Err(Error::InvalidCell(_))
    ));
    let wrong = CellTopology::new(3, 2).unwrap();
    let small = sample_random_cell(&mut rng, &cfg.normal_set().unwrap(), &wrong, cfg.merge);
    assert!(build_discrete_network::<f32>(&cfg, &small, Some(&normal), [8, 8, 3], 0).is_err());
}

#[test]
fn discrete_build_is_deterministic() {
    let cfg = SupernetConfig {
        depths: vec![2],
        feature_dim: 4,
        ..SupernetConfig::default()
    };
    let topo = cfg.topology().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cell = sample_random_cell(&mut rng, &cfg.normal_set().unwrap(), &topo, cfg.merge);
    let a = build_discrete_network::<f64>(&cfg, &cell, None, [6, 6, 3], 5).unwrap();
    let b = build_discrete_network::<f64>(&cfg, &cell, None, [6, 6, 3], 5).unwrap();
    let x = random_input(&[1, 6, 6, 3], 8);
    assert_eq!(encode(&a, &x).data(), encode(&b, &x).data());
}

#[test]
fn skip_chain_cell_keeps_only_fixed_layers() {
    let cfg = SupernetConfig {
        depths: vec![2],
        merge: MergeMode::LastNode,
        feature_dim: 4,
        ..SupernetConfig::default()
    };
    let cell = DiscreteCell {
        nodes: (1..=4)
            .map(|j: usize| {
                (j.saturating_sub(2)..j)
                    .map(|from| CellEdge {
                        from,
                        op: OpKind::Skip,
                    })
                    .collect()
            })
            .collect(),
        merge: MergeMode::LastNode,
    };
    let net = build_discrete_network::<f32>(&cfg, &cell, None, [6, 6, 3], 0).unwrap();
    let names: Vec<&str> = net.params.iter().map(|(_, p)| p.name.as_str()).collect();
    assert_eq!(names, ["b0.reduce.w", "b0.reduce.b", "head.w", "head.b"]);
}

#[test]
fn baseline_shapes_and_sizes() {
    let b3 =
        build_baseline_encoder::<f32>(&[16, 16, 16], BaselineVariant::Conv3x3, 256, [24, 24, 3], 0)
            .unwrap();
    let b5 =
        build_baseline_encoder::<f32>(&[16, 16, 16], BaselineVariant::Conv5x5, 256, [24, 24, 3], 0)
            .unwrap();
    assert_eq!(b3.final_spatial(), (3, 3));
    assert!(b5.weight_count() > b3.weight_count());
    assert_eq!(b3.kind(), EncoderKind::Baseline);
}

#[test]
fn zeroed_residuals_leave_conv_and_pool() {
    let mut net =
        build_baseline_encoder::<f64>(&[3], BaselineVariant::Conv3x3, 5, [6, 6, 2], 1).unwrap();
    let res: Vec<ParamId> = net
        .params
        .iter()
        .filter(|(_, p)| p.name.contains(".res"))
        .map(|(id, _)| id)
        .collect();
    for id in res {
        let shape = net.params.value(id).shape().to_vec();
        *net.params.value_mut(id) = Tensor::zeros(&shape);
    }
    let x = random_input(&[2, 6, 6, 2], 9);
    let mut g = Graph::new(&net.params);
    let xi = g.input(x.clone());
    let w = g.param(net.params.id("b0.conv.w").unwrap());
    let b = g.param(net.params.id("b0.conv.b").unwrap());
    let c = g.conv2d(xi, w, Some(b), 1, 1).unwrap();
    let p = g.pool2d(c, crate::diffcore::PoolKind::Max, 2).unwrap();
    let f = g.flatten(p).unwrap();
    let r = g.relu(f);
    let hw = g.param(net.params.id("head.w").unwrap());
    let hb = g.param(net.params.id("head.b").unwrap());
    let out: NodeId = g.affine(r, hw, hb).unwrap();
    let manual = g.value(out).clone();
    assert!(max_rel(&encode(&net, &x), &manual) < 1e-12);
}
