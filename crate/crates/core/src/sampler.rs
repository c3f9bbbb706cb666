//! Context distribution `p(i, c, gamma)`.
//!
//! A triple is drawn by first fixing its sign (`+1` with probability `r1`),
//! then picking the context source: with probability `r2` the pair comes
//! from a window of a fresh random walk, otherwise from the class labels.
//! Negative graph pairs corrupt the context uniformly over all nodes.
//! Negative label pairs are drawn from differently labeled instances.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::SparseGraph;

/// Walk and mixing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Probability of a positive pair.
    pub r1: f64,
    /// Probability of drawing graph context rather than label context.
    pub r2: f64,
    /// Walk length.
    pub q: usize,
    /// Window size: positions `j`, `k` pair up when `0 < |j - k| < d`.
    pub d: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            r1: 5.0 / 6.0,
            r2: 0.5,
            q: 10,
            d: 3,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r1) {
            return Err(Error::Config(format!("r1 = {} is not in [0, 1]", self.r1)));
        }
        if !(0.0..=1.0).contains(&self.r2) {
            return Err(Error::Config(format!("r2 = {} is not in [0, 1]", self.r2)));
        }
        if self.q < 2 {
            return Err(Error::Config(format!(
                "walk length q = {} must be >= 2",
                self.q
            )));
        }
        if self.d < 2 {
            // d = 1 leaves only j = k, which is excluded.
            return Err(Error::Config(format!(
                "window size d = {} admits no pair of distinct positions",
                self.d
            )));
        }
        Ok(())
    }

    /// All ordered position pairs `(j, k)` with `j != k` and `|j - k| < d`.
    pub fn window_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for j in 0..self.q {
            for k in 0..self.q {
                if j != k && j.abs_diff(k) < self.d {
                    pairs.push((j, k));
                }
            }
        }
        pairs
    }
}

/// One draw `(i, c, gamma)` from the context distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ContextTriple {
    pub instance: usize,
    pub context: usize,
    /// `+1` for a positive pair, `-1` for a negative one.
    pub gamma: i8,
}

impl ContextTriple {
    pub fn is_positive(&self) -> bool {
        self.gamma > 0
    }
}

/// Which branch of the sampler produced a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextSource {
    Graph,
    Label,
}

/// Labeled nodes grouped by class.
#[derive(Debug, Clone)]
pub struct LabelIndex {
    /// Labeled nodes ordered by class, then by insertion order.
    flat: Vec<usize>,
    /// `flat[class_start[k]..class_start[k + 1]]` holds the members of class `k`.
    class_start: Vec<usize>,
}

impl LabelIndex {
    /// Builds the index from `(node, class)` pairs. A node may appear once.
    pub fn new(labeled: &[(usize, usize)], num_classes: usize) -> Result<Self> {
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
        let mut seen = std::collections::HashSet::new();
        for &(node, class) in labeled {
            if class >= num_classes {
                return Err(Error::InvalidInput(format!(
                    "node {node} has class {class}, but only {num_classes} classes exist"
                )));
            }
            if !seen.insert(node) {
                return Err(Error::InvalidInput(format!("node {node} labeled twice")));
            }
            per_class[class].push(node);
        }
        let mut flat = Vec::with_capacity(labeled.len());
        let mut class_start = Vec::with_capacity(num_classes + 1);
        for members in per_class {
            class_start.push(flat.len());
            flat.extend(members);
        }
        class_start.push(flat.len());
        Ok(Self { flat, class_start })
    }

    pub fn num_classes(&self) -> usize {
        self.class_start.len() - 1
    }

    /// Total number of labeled nodes `L`.
    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn class_members(&self, class: usize) -> &[usize] {
        &self.flat[self.class_start[class]..self.class_start[class + 1]]
    }

    pub fn class_size(&self, class: usize) -> usize {
        self.class_start[class + 1] - self.class_start[class]
    }

    /// `(node, class)` for every labeled node.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_classes())
            .flat_map(move |k| self.class_members(k).iter().map(move |&n| (n, k)))
    }
}

/// Sampler for `p(i, c, gamma)` over a fixed graph and label set.
#[derive(Debug, Clone)]
pub struct ContextSampler<'g> {
    graph: &'g SparseGraph,
    labels: LabelIndex,
    config: SamplerConfig,
    window_pairs: Vec<(usize, usize)>,
    /// Class weights `n_k (n_k - 1)`: ordered same-label pairs per class.
    same_label: Option<WeightedIndex<u64>>,
    /// Class weights `n_k (L - n_k)`: ordered cross-label pairs anchored in class `k`.
    cross_label: Option<WeightedIndex<u64>>,
}

impl<'g> ContextSampler<'g> {
    /// Validates that every branch reachable under `config` can produce a pair.
    pub fn new(graph: &'g SparseGraph, labels: LabelIndex, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        if graph.num_nodes() == 0 {
            return Err(Error::Config(
                "context sampling needs a nonempty graph".into(),
            ));
        }
        let uses_graph = config.r2 > 0.0;
        let uses_labels = config.r2 < 1.0;
        let wants_pos = config.r1 > 0.0;
        let wants_neg = config.r1 < 1.0;

        if uses_graph && !graph.has_proper_edge() {
            return Err(Error::Config(
                "graph context requested (r2 > 0) but the graph has no edge between distinct nodes"
                    .into(),
            ));
        }
        if let Some(max) = labels.flat.iter().max() {
            if *max >= graph.num_nodes() {
                return Err(Error::InvalidInput(format!(
                    "labeled node {max} is outside the graph ({} nodes)",
                    graph.num_nodes()
                )));
            }
        }

        let total = labels.len() as u64;
        let sizes: Vec<u64> = (0..labels.num_classes())
            .map(|k| labels.class_size(k) as u64)
            .collect();
        let same: Vec<u64> = sizes.iter().map(|&n| n * n.saturating_sub(1)).collect();
        let cross: Vec<u64> = sizes.iter().map(|&n| n * (total - n)).collect();

        let same_label = WeightedIndex::new(&same).ok();
        let cross_label = WeightedIndex::new(&cross).ok();
        if uses_labels && wants_pos && same_label.is_none() {
            return Err(Error::Config(
                "label context requested (r2 < 1) but no class has two labeled instances".into(),
            ));
        }
        if uses_labels && wants_neg && cross_label.is_none() {
            return Err(Error::Config(
                "label context requested (r2 < 1) but fewer than two classes have labeled instances"
                    .into(),
            ));
        }

        Ok(Self {
            graph,
            labels,
            window_pairs: config.window_pairs(),
            config,
            same_label,
            cross_label,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn labels(&self) -> &LabelIndex {
        &self.labels
    }

    pub fn graph(&self) -> &SparseGraph {
        self.graph
    }

    /// Draws one triple.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ContextTriple {
        self.sample_tagged(rng).0
    }

    /// Draws one triple and reports which branch produced it.
    pub fn sample_tagged<R: Rng + ?Sized>(&self, rng: &mut R) -> (ContextTriple, ContextSource) {
        let positive = rng.gen::<f64>() < self.config.r1;
        if rng.gen::<f64>() < self.config.r2 {
            let (i, c) = self.graph_pair(rng);
            (self.finish_graph(i, c, positive, rng), ContextSource::Graph)
        } else {
            (self.label_triple(positive, rng), ContextSource::Label)
        }
    }

    /// `n` independent draws.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<ContextTriple> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Like [`sample_batch`](Self::sample_batch) but reuses each walk for up to
    /// `pairs_per_walk` graph-branch draws. Every emitted pair still comes from
    /// a uniformly chosen window position of a walk drawn from the same walk
    /// distribution.
    pub fn sample_batch_amortized<R: Rng + ?Sized>(
        &self,
        n: usize,
        pairs_per_walk: usize,
        rng: &mut R,
    ) -> Vec<ContextTriple> {
        let pairs_per_walk = pairs_per_walk.max(1);
        let mut walk: Vec<usize> = Vec::new();
        let mut uses_left = 0usize;
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let positive = rng.gen::<f64>() < self.config.r1;
            if rng.gen::<f64>() < self.config.r2 {
                let (i, c) = loop {
                    if uses_left == 0 {
                        walk = self.graph.random_walk(self.config.q, rng).0;
                        uses_left = pairs_per_walk;
                    }
                    uses_left -= 1;
                    let (j, k) = self.window_pairs[rng.gen_range(0..self.window_pairs.len())];
                    if walk[j] != walk[k] {
                        break (walk[j], walk[k]);
                    }
                    // A self-pair retires the walk.
                    uses_left = 0;
                };
                out.push(self.finish_graph(i, c, positive, rng));
            } else {
                out.push(self.label_triple(positive, rng));
            }
        }
        out
    }

    /// Positive graph pair: a uniform window pair of a fresh walk, redrawn
    /// until the two nodes differ.
    fn graph_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        loop {
            let walk = self.graph.random_walk(self.config.q, rng);
            let (j, k) = self.window_pairs[rng.gen_range(0..self.window_pairs.len())];
            let (i, c) = (walk.0[j], walk.0[k]);
            if i != c {
                return (i, c);
            }
        }
    }

    fn finish_graph<R: Rng + ?Sized>(
        &self,
        i: usize,
        c: usize,
        positive: bool,
        rng: &mut R,
    ) -> ContextTriple {
        if positive {
            ContextTriple {
                instance: i,
                context: c,
                gamma: 1,
            }
        } else {
            ContextTriple {
                instance: i,
                context: rng.gen_range(0..self.graph.num_nodes()),
                gamma: -1,
            }
        }
    }

    fn label_triple<R: Rng + ?Sized>(&self, positive: bool, rng: &mut R) -> ContextTriple {
        let labels = &self.labels;
        if positive {
            let dist = self.same_label.as_ref().expect("checked at construction");
            let class = dist.sample(rng);
            let members = labels.class_members(class);
            let a = rng.gen_range(0..members.len());
            let mut b = rng.gen_range(0..members.len() - 1);
            if b >= a {
                b += 1;
            }
            ContextTriple {
                instance: members[a],
                context: members[b],
                gamma: 1,
            }
        } else {
            let dist = self.cross_label.as_ref().expect("checked at construction");
            let class = dist.sample(rng);
            let members = labels.class_members(class);
            let instance = members[rng.gen_range(0..members.len())];
            let start = labels.class_start[class];
            let mut m = rng.gen_range(0..labels.len() - members.len());
            if m >= start {
                m += members.len();
            }
            ContextTriple {
                instance,
                context: labels.flat[m],
                gamma: -1,
            }
        }
    }
}

/// Exact distribution of positive graph-branch pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDistribution {
    pub probs: BTreeMap<(usize, usize), f64>,
    /// Probability mass of window pairs that landed on the same node twice.
    /// Those pairs are excluded and the remaining table renormalized.
    pub self_pair_mass: f64,
}

impl PairDistribution {
    /// True when no valid pair exists (for instance, an edgeless graph).
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.probs.get(&(i, c)).copied().unwrap_or(0.0)
    }

    /// Total variation distance to an empirical pair histogram.
    pub fn total_variation(&self, counts: &BTreeMap<(usize, usize), usize>) -> f64 {
        let n: usize = counts.values().sum();
        let mut keys: std::collections::BTreeSet<(usize, usize)> =
            self.probs.keys().copied().collect();
        keys.extend(counts.keys().copied());
        let tv: f64 = keys
            .into_iter()
            .map(|key| {
                let emp = *counts.get(&key).unwrap_or(&0) as f64 / n.max(1) as f64;
                (emp - self.get(key.0, key.1)).abs()
            })
            .sum();
        tv / 2.0
    }
}

/// Largest graph accepted by [`exact_pair_distribution`].
pub const EXACT_MAX_NODES: usize = 8;
/// Longest walk accepted by [`exact_pair_distribution`].
pub const EXACT_MAX_WALK: usize = 5;

/// Enumerates every length-`q` walk and every window pair to get the exact
/// marginal of positive graph-branch pairs. Only feasible for tiny inputs.
pub fn exact_pair_distribution(
    graph: &SparseGraph,
    config: &SamplerConfig,
) -> Result<PairDistribution> {
    config.validate()?;
    let n = graph.num_nodes();
    if n == 0 || n > EXACT_MAX_NODES || config.q > EXACT_MAX_WALK {
        return Err(Error::InvalidInput(format!(
            "exact enumeration limited to 1..={EXACT_MAX_NODES} nodes and q <= {EXACT_MAX_WALK} \
             (got {n} nodes, q = {})",
            config.q
        )));
    }
    let window = config.window_pairs();
    let per_pair = 1.0 / window.len() as f64;

    let mut raw: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut self_mass = 0.0;
    let mut stack: Vec<(Vec<usize>, f64)> = (0..n).map(|s| (vec![s], 1.0 / n as f64)).collect();
    while let Some((walk, p)) = stack.pop() {
        if walk.len() == config.q {
            for &(j, k) in &window {
                if walk[j] == walk[k] {
                    self_mass += p * per_pair;
                } else {
                    *raw.entry((walk[j], walk[k])).or_default() += p * per_pair;
                }
            }
            continue;
        }
        let last = *walk.last().expect("walks are nonempty");
        let total = graph.weighted_degree(last);
        if graph.out_degree(last) == 0 {
            let mut next = walk.clone();
            next.push(last);
            stack.push((next, p));
        } else {
            for (j, w) in graph.neighbors(last) {
                let mut next = walk.clone();
                next.push(j);
                stack.push((next, p * w / total));
            }
        }
    }

    let valid = 1.0 - self_mass;
    let probs = if raw.is_empty() || valid <= 0.0 {
        BTreeMap::new()
    } else {
        raw.into_iter().map(|(k, v)| (k, v / valid)).collect()
    };
    Ok(PairDistribution {
        probs,
        self_pair_mass: self_mass,
    })
}
