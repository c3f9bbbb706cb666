#![allow(dead_code)]

use planetoid::data::{make_split, Dataset, FeatureMatrix, Labeling, Section, SplitPolicy};
use planetoid::neural::{Matrix, SparseVec};
use planetoid::planetoid::{
    Architecture, Instance, LabeledInstance, ModelGrads, ModelParams, ModelShape, ModelVariant,
};
use planetoid::sampler::ContextTriple;
use planetoid::SparseGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn undirected(n: usize, pairs: &[(usize, usize)]) -> SparseGraph {
    let mut edges = Vec::new();
    for &(a, b) in pairs {
        edges.push((a, b, 1.0));
        edges.push((b, a, 1.0));
    }
    SparseGraph::from_edges(n, &edges).unwrap()
}

/// Two disjoint cliques of `size` nodes; nodes `0..size` are class 0.
pub fn two_cliques(size: usize) -> SparseGraph {
    let mut pairs = Vec::new();
    for base in [0, size] {
        for a in 0..size {
            for b in a + 1..size {
                pairs.push((base + a, base + b));
            }
        }
    }
    undirected(2 * size, &pairs)
}

/// Two-clique dataset with one train label per class and every other node in test.
pub fn two_clique_dataset(size: usize) -> Dataset {
    let n = 2 * size;
    let gold: Vec<_> = (0..n).map(|i| Some(usize::from(i >= size))).collect();
    let mut split = vec![Section::Test; n];
    split[0] = Section::Train;
    split[size] = Section::Train;
    Dataset::new(two_cliques(size), None, gold, split).unwrap()
}

/// Small dataset with noisy class-indicative features on a graph of two
/// loosely linked communities.
pub fn community_dataset(per_class: usize, num_features: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * per_class;
    let class = |i: usize| usize::from(i >= per_class);
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let p = if class(a) == class(b) { 0.3 } else { 0.02 };
            if rng.gen_bool(p) {
                pairs.push((a, b));
            }
        }
    }
    let graph = undirected(n, &pairs);
    let half = num_features / 2;
    let rows = (0..n)
        .map(|i| {
            let mut pairs = Vec::new();
            for j in 0..num_features {
                let indicative = (j < half) == (class(i) == 0);
                if rng.gen_bool(if indicative { 0.3 } else { 0.1 }) {
                    pairs.push((j, 1.0));
                }
            }
            SparseVec::from_pairs(pairs)
        })
        .collect();
    let gold: Vec<_> = (0..n).map(|i| Some(class(i))).collect();
    let split = (0..n)
        .map(|i| match i % per_class {
            0..=3 => Section::Train,
            4 | 5 => Section::Validation,
            _ => Section::Test,
        })
        .collect();
    Dataset::new(
        graph,
        Some(FeatureMatrix { num_features, rows }),
        gold,
        split,
    )
    .unwrap()
}

/// The 6-node, 2-class problem used for gradient checks.
pub struct Toy {
    pub features: Vec<SparseVec>,
    pub labels: Vec<usize>,
    pub triples: Vec<ContextTriple>,
}

pub const TOY_NODES: usize = 6;
pub const TOY_FEATURES: usize = 5;

pub fn toy() -> Toy {
    let features = vec![
        SparseVec::from_pairs(vec![(0, 1.0), (3, 0.5)]),
        SparseVec::from_pairs(vec![(1, 0.8), (2, -0.6)]),
        SparseVec::from_pairs(vec![(0, -0.7), (4, 1.2)]),
        SparseVec::from_pairs(vec![(2, 0.9), (3, -1.1), (4, 0.4)]),
        SparseVec::from_pairs(vec![(1, -0.5)]),
        SparseVec::from_pairs(vec![(0, 0.3), (1, 0.3), (2, 0.3), (3, 0.3), (4, 0.3)]),
    ];
    let labels = vec![0, 0, 0, 1, 1, 1];
    let t = |instance, context, gamma| ContextTriple {
        instance,
        context,
        gamma,
    };
    let triples = vec![
        t(0, 1, 1),
        t(1, 2, 1),
        t(3, 4, 1),
        t(5, 4, 1),
        t(0, 5, -1),
        t(2, 3, -1),
        t(4, 0, -1),
        t(1, 1, 1),
    ];
    Toy {
        features,
        labels,
        triples,
    }
}

pub fn toy_architecture() -> Architecture {
    Architecture {
        feature_hidden: vec![4],
        embedding_dim: 3,
        encoder_hidden: vec![4],
        embedding_hidden: vec![3],
    }
}

/// A toy model with every parameter (biases included) drawn away from zero.
pub fn toy_model(variant: ModelVariant, seed: u64) -> ModelParams {
    let shape = ModelShape {
        num_nodes: TOY_NODES,
        num_features: TOY_FEATURES,
        num_classes: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ModelParams::new(variant, shape, &toy_architecture(), &mut rng).unwrap();
    for k in 0..tensor_count(&model) {
        for v in tensor_mut(&mut model, k).1.iter_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    model
}

pub fn tensor_count(model: &ModelParams) -> usize {
    let layers = model.feature_path.len() + model.encoder.len() + model.embedding_path.len();
    2 * layers + usize::from(model.embedding_table.is_some()) + 2
}

/// Tensor `k` of the model as a flat mutable slice, with its name.
pub fn tensor_mut(model: &mut ModelParams, k: usize) -> (String, &mut [f64]) {
    let mut k = k;
    for (prefix, layers) in [
        ("feature_path", &mut model.feature_path),
        ("encoder", &mut model.encoder),
        ("embedding_path", &mut model.embedding_path),
    ] {
        if k < 2 * layers.len() {
            let layer = &mut layers[k / 2];
            return if k % 2 == 0 {
                (
                    format!("{prefix}.{}.weight", k / 2),
                    layer.weight.data_mut(),
                )
            } else {
                (
                    format!("{prefix}.{}.bias", k / 2),
                    layer.bias.as_mut_slice(),
                )
            };
        }
        k -= 2 * layers.len();
    }
    if let Some(table) = &mut model.embedding_table {
        if k == 0 {
            return ("embedding_table".into(), table.0.data_mut());
        }
        k -= 1;
    }
    match k {
        0 => ("context".into(), model.context.0.data_mut()),
        1 => ("label_weights".into(), model.label_weights.data_mut()),
        _ => panic!("tensor index out of range"),
    }
}

/// Gradient tensor `k`, densified to match [`tensor_mut`].
pub fn grad_tensor(model: &ModelParams, grads: &ModelGrads, k: usize) -> Vec<f64> {
    let mut k = k;
    for (layers, lgrads) in [
        (&model.feature_path, &grads.feature_path),
        (&model.encoder, &grads.encoder),
        (&model.embedding_path, &grads.embedding_path),
    ] {
        if k < 2 * layers.len() {
            let g = &lgrads[k / 2];
            return if k % 2 == 0 {
                g.weight.to_dense(layers[k / 2].in_dim()).data().to_vec()
            } else {
                g.bias.clone()
            };
        }
        k -= 2 * layers.len();
    }
    let dense = |g: &planetoid::neural::RowGrad, m: &Matrix| g.to_dense(m.rows()).data().to_vec();
    if let Some(table) = &model.embedding_table {
        if k == 0 {
            return dense(&grads.embedding_table, &table.0);
        }
        k -= 1;
    }
    match k {
        0 => dense(&grads.context, &model.context.0),
        1 => dense(&grads.label_weights, &model.label_weights),
        _ => panic!("tensor index out of range"),
    }
}

pub fn supervised_batch<'a>(toy: &'a Toy) -> Vec<LabeledInstance<'a>> {
    (0..TOY_NODES)
        .map(|i| LabeledInstance {
            instance: Instance::new(i, Some(&toy.features[i])),
            label: toy.labels[i],
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub loss: &'static str,
    pub tensor: String,
    pub entries: usize,
    pub max_rel_err: f64,
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences with step `h` for both losses on every tensor.
pub fn finite_difference_report(variant: ModelVariant, seed: u64, h: f64) -> Vec<TensorCheck> {
    let toy = toy();
    let model = toy_model(variant, seed);
    let batch = supervised_batch(&toy);
    let features = Some(toy.features.as_slice());
    let sup = |m: &ModelParams| m.supervised_loss_batch(&batch).unwrap();
    let unsup = |m: &ModelParams| m.unsupervised_loss_batch(&toy.triples, features).unwrap();
    let losses: [(&'static str, &dyn Fn(&ModelParams) -> (f64, ModelGrads)); 2] =
        [("supervised", &sup), ("context", &unsup)];

    let mut report = Vec::new();
    for (loss_name, loss) in losses {
        let (_, grads) = loss(&model);
        for k in 0..tensor_count(&model) {
            let analytic = grad_tensor(&model, &grads, k);
            let mut probe = model.clone();
            let (name, len) = {
                let (name, slice) = tensor_mut(&mut probe, k);
                (name, slice.len())
            };
            assert_eq!(analytic.len(), len, "{name}: gradient shape");
            let mut worst = 0.0f64;
            for j in 0..len {
                let original = tensor_mut(&mut probe, k).1[j];
                tensor_mut(&mut probe, k).1[j] = original + h;
                let plus = loss(&probe).0;
                tensor_mut(&mut probe, k).1[j] = original - h;
                let minus = loss(&probe).0;
                tensor_mut(&mut probe, k).1[j] = original;
                let fd = (plus - minus) / (2.0 * h);
                worst = worst.max(rel_err(fd, analytic[j]));
            }
            report.push(TensorCheck {
                loss: loss_name,
                tensor: name,
                entries: len,
                max_rel_err: worst,
            });
        }
    }
    report
}

/// Citation-like planted partition: 2708 nodes, 7 classes, ~5k edges (80%
/// drawn within a class) and 1433 sparse binary features, a quarter of each
/// document's words coming from its class's own block of 200.
pub fn planted_citation(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, f) = (2708, 7, 1433);
    let class: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
    let mut members = vec![Vec::new(); c];
    for (i, &k) in class.iter().enumerate() {
        members[k].push(i);
    }
    let mut pairs = Vec::new();
    for _ in 0..5278 {
        let a = rng.gen_range(0..n);
        let b = if rng.gen_bool(0.8) {
            let same = &members[class[a]];
            same[rng.gen_range(0..same.len())]
        } else {
            rng.gen_range(0..n)
        };
        if a != b {
            pairs.push((a, b));
        }
    }
    let rows = class
        .iter()
        .map(|&k| {
            let mut words: Vec<(usize, f64)> = (0..18)
                .map(|_| {
                    let w = if rng.gen_bool(0.25) {
                        k * 200 + rng.gen_range(0..200)
                    } else {
                        rng.gen_range(0..f)
                    };
                    (w, 1.0)
                })
                .collect();
            words.sort_by_key(|w| w.0);
            words.dedup_by_key(|w| w.0);
            SparseVec::from_pairs(words)
        })
        .collect();
    let gold: Vec<_> = class.iter().map(|&k| Some(k)).collect();
    let policy = SplitPolicy {
        labeling: Labeling::PerClass(20),
        test_size: 1000,
        seed,
    };
    let split = make_split(&gold, c, &policy).unwrap();
    let features = FeatureMatrix {
        num_features: f,
        rows,
    };
    Dataset::new(undirected(n, &pairs), Some(features), gold, split).unwrap()
}
