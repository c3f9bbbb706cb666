//! Datasets on disk, split generation, knowledge-base graphs and embedding export.
//!
//! A dataset directory holds plain TSV files:
//!
//! ```text
//! graph.tsv     src \t dst [\t weight]      (0-based ids, weight defaults to 1)
//! features.tsv  #nodes \t N \t #features \t F   then   node \t feature \t value
//! labels.tsv    node \t class_id            (gold labels)
//! split.tsv     node \t train|unlabeled|test|validation
//! ```
//!
//! Lines starting with `#` are comments. Citation edges are symmetrized on
//! load: each listed pair becomes an undirected edge.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::neural::SparseVec;
use crate::planetoid::{Instance, ModelParams};

pub const GRAPH_FILE: &str = "graph.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLIT_FILE: &str = "split.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Section {
    Train,
    Unlabeled,
    Test,
    Validation,
}

impl Section {
    pub fn name(&self) -> &'static str {
        match self {
            Section::Train => "train",
            Section::Unlabeled => "unlabeled",
            Section::Test => "test",
            Section::Validation => "validation",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Section {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Section::Train),
            "unlabeled" => Ok(Section::Unlabeled),
            "test" => Ok(Section::Test),
            "validation" => Ok(Section::Validation),
            other => Err(Error::Config(format!("unknown split section {other:?}"))),
        }
    }
}

/// Sparse feature rows, one per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub num_features: usize,
    pub rows: Vec<SparseVec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub features: Option<FeatureMatrix>,
    /// Gold label per node, when known.
    pub gold: Vec<Option<usize>>,
    pub graph: SparseGraph,
    pub split: Vec<Section>,
    /// Number of edge lines read from `graph.tsv` before symmetrization.
    pub raw_edge_count: usize,
}

impl Dataset {
    /// Assembles a dataset and checks its invariants.
    pub fn new(
        graph: SparseGraph,
        features: Option<FeatureMatrix>,
        gold: Vec<Option<usize>>,
        split: Vec<Section>,
    ) -> Result<Self> {
        let num_nodes = graph.num_nodes();
        if gold.len() != num_nodes || split.len() != num_nodes {
            return Err(Error::Data(format!(
                "graph has {num_nodes} nodes but {} labels and {} split entries",
                gold.len(),
                split.len()
            )));
        }
        if let Some(f) = &features {
            if f.rows.len() != num_nodes {
                return Err(Error::Data(format!(
                    "feature matrix has {} rows for {num_nodes} nodes",
                    f.rows.len()
                )));
            }
        }
        for (node, (&section, label)) in split.iter().zip(&gold).enumerate() {
            if section != Section::Unlabeled && label.is_none() {
                return Err(Error::Data(format!(
                    "node {node} is in the {section} section but has no label"
                )));
            }
        }
        let num_classes = gold.iter().flatten().max().map_or(0, |&m| m + 1);
        let raw_edge_count = graph.num_edges();
        Ok(Self {
            num_nodes,
            num_classes,
            features,
            gold,
            graph,
            split,
            raw_edge_count,
        })
    }

    pub fn feature_rows(&self) -> Option<&[SparseVec]> {
        self.features.as_ref().map(|f| f.rows.as_slice())
    }

    pub fn num_features(&self) -> usize {
        self.features.as_ref().map_or(0, |f| f.num_features)
    }

    pub fn section_nodes(&self, section: Section) -> Vec<usize> {
        (0..self.num_nodes)
            .filter(|&i| self.split[i] == section)
            .collect()
    }

    /// `(node, gold label)` for every node of `section`.
    pub fn labeled_section(&self, section: Section) -> Vec<(usize, usize)> {
        self.section_nodes(section)
            .into_iter()
            .filter_map(|i| self.gold[i].map(|y| (i, y)))
            .collect()
    }

    /// Labels visible to a trainer: the train section only.
    pub fn train_labels(&self) -> Vec<(usize, usize)> {
        self.labeled_section(Section::Train)
    }

    /// Prediction input for node `i`.
    pub fn instance(&self, i: usize) -> Instance<'_> {
        Instance::new(i, self.features.as_ref().map(|f| &f.rows[i]))
    }

    /// Number of distinct undirected pairs among the stored edges.
    pub fn undirected_edge_count(&self) -> usize {
        self.graph.edges().filter(|&(i, j, _)| i <= j).count()
    }

    pub fn with_split(mut self, split: Vec<Section>) -> Result<Self> {
        let raw = self.raw_edge_count;
        self = Dataset::new(self.graph, self.features, self.gold, split)?;
        self.raw_edge_count = raw;
        Ok(self)
    }
}

/// How many labeled instances each class gets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Labeling {
    /// A fixed count per class.
    PerClass(usize),
    /// Labeling rate `beta`: a class of size `N` gets `max(floor(beta N), 1)`.
    Rate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitPolicy {
    pub labeling: Labeling,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self {
            labeling: Labeling::PerClass(20),
            test_size: 1000,
            seed: 0,
        }
    }
}

/// Random train/test/unlabeled assignment.
///
/// Train nodes are drawn per class, test nodes from the remaining labeled
/// nodes, and everything else is unlabeled.
pub fn make_split(
    gold: &[Option<usize>],
    num_classes: usize,
    policy: &SplitPolicy,
) -> Result<Vec<Section>> {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (node, label) in gold.iter().enumerate() {
        if let Some(y) = *label {
            if y >= num_classes {
                return Err(Error::Data(format!(
                    "node {node} has class {y} >= {num_classes}"
                )));
            }
            by_class[y].push(node);
        }
    }

    let mut split = vec![Section::Unlabeled; gold.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        let count = match policy.labeling {
            Labeling::PerClass(n) => {
                if members.len() < n {
                    return Err(Error::Data(format!(
                        "class {class} has {} labeled nodes, fewer than the {n} requested",
                        members.len()
                    )));
                }
                n
            }
            Labeling::Rate(beta) => {
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(Error::Config(format!(
                        "labeling rate {beta} is not in (0, 1]"
                    )));
                }
                if members.is_empty() {
                    0
                } else {
                    ((beta * members.len() as f64).floor() as usize).clamp(1, members.len())
                }
            }
        };
        members.shuffle(&mut rng);
        for &node in &members[..count] {
            split[node] = Section::Train;
        }
    }

    let mut rest: Vec<usize> = (0..gold.len())
        .filter(|&i| gold[i].is_some() && split[i] != Section::Train)
        .collect();
    if rest.len() < policy.test_size {
        return Err(Error::Data(format!(
            "only {} labeled nodes remain for a test set of {}",
            rest.len(),
            policy.test_size
        )));
    }
    rest.shuffle(&mut rng);
    for &node in &rest[..policy.test_size] {
        split[node] = Section::Test;
    }
    Ok(split)
}

/// Options for [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoadOptions {
    /// Used only when the directory has no `split.tsv`.
    pub split: SplitPolicy,
}

struct TsvLine<'a> {
    path: &'a Path,
    number: usize,
    fields: Vec<&'a str>,
}

impl TsvLine<'_> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.number,
            message: message.into(),
        }
    }

    fn parse<T: FromStr>(&self, idx: usize, what: &str) -> Result<T> {
        let raw = self
            .fields
            .get(idx)
            .ok_or_else(|| self.error(format!("missing {what} column")))?;
        raw.trim()
            .parse()
            .map_err(|_| self.error(format!("cannot parse {what} from {raw:?}")))
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Data lines (non-empty, non-comment) with 1-based line numbers.
fn data_lines<'a>(path: &'a Path, text: &'a str) -> impl Iterator<Item = TsvLine<'a>> + 'a {
    text.lines().enumerate().filter_map(move |(k, line)| {
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            None
        } else {
            Some(TsvLine {
                path,
                number: k + 1,
                fields: trimmed.split('\t').collect(),
            })
        }
    })
}

/// Parses a `#nodes\tN...` header from the first line of a file.
fn node_header(path: &Path, text: &str) -> Result<Option<(usize, Option<usize>)>> {
    let Some(first) = text.lines().next() else {
        return Ok(None);
    };
    if !first.starts_with("#nodes") {
        return Ok(None);
    }
    let fields: Vec<&str> = first.trim_end_matches('\r').split('\t').collect();
    let err = |m: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: m.to_string(),
    };
    let nodes = fields
        .get(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err("malformed #nodes header"))?;
    let features = match fields.get(2) {
        Some(&"#features") => Some(
            fields
                .get(3)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err("malformed #features header"))?,
        ),
        _ => None,
    };
    Ok(Some((nodes, features)))
}

/// Loads a dataset directory.
pub fn load_dataset(dir: &Path, options: &LoadOptions) -> Result<Dataset> {
    let graph_path = dir.join(GRAPH_FILE);
    let labels_path = dir.join(LABELS_FILE);
    let features_path = dir.join(FEATURES_FILE);
    let split_path = dir.join(SPLIT_FILE);

    let graph_text = read_file(&graph_path)?;
    let labels_text = read_file(&labels_path)?;
    let features_text = if features_path.exists() {
        Some(read_file(&features_path)?)
    } else {
        None
    };
    let split_text = if split_path.exists() {
        Some(read_file(&split_path)?)
    } else {
        None
    };

    // Node count: features header, then graph header, then the largest id seen.
    let feature_header = match &features_text {
        Some(t) => Some(
            node_header(&features_path, t)?
                .and_then(|(n, f)| f.map(|f| (n, f)))
                .ok_or_else(|| Error::Parse {
                    path: features_path.clone(),
                    line: 1,
                    message: "expected header #nodes\\t<N>\\t#features\\t<F>".into(),
                })?,
        ),
        None => None,
    };
    let declared = match feature_header {
        Some((n, _)) => Some(n),
        None => node_header(&graph_path, &graph_text)?.map(|(n, _)| n),
    };

    let mut raw_edges = Vec::new();
    for line in data_lines(&graph_path, &graph_text) {
        let src: usize = line.parse(0, "source node")?;
        let dst: usize = line.parse(1, "target node")?;
        let weight: f64 = if line.fields.len() > 2 {
            line.parse(2, "weight")?
        } else {
            1.0
        };
        if !weight.is_finite() || weight < 0.0 {
            return Err(line.error(format!("invalid weight {weight}")));
        }
        raw_edges.push((src, dst, weight, line.number));
    }
    let mut labels = Vec::new();
    for line in data_lines(&labels_path, &labels_text) {
        labels.push((
            line.parse::<usize>(0, "node")?,
            line.parse::<usize>(1, "class")?,
            line.number,
        ));
    }

    let num_nodes = match declared {
        Some(n) => n,
        None => raw_edges
            .iter()
            .flat_map(|e| [e.0, e.1])
            .chain(labels.iter().map(|l| l.0))
            .max()
            .map_or(0, |m| m + 1),
    };
    let check_node = |node: usize, path: &Path, line: usize| -> Result<()> {
        if node >= num_nodes {
            Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("node id {node} out of range for {num_nodes} nodes"),
            })
        } else {
            Ok(())
        }
    };

    // Symmetrize: one undirected edge per listed pair, largest weight wins.
    let mut undirected: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(src, dst, w, line) in &raw_edges {
        check_node(src, &graph_path, line)?;
        check_node(dst, &graph_path, line)?;
        let key = (src.min(dst), src.max(dst));
        let slot = undirected.entry(key).or_insert(0.0);
        *slot = slot.max(w);
    }
    let mut edges = Vec::with_capacity(undirected.len() * 2);
    for (&(a, b), &w) in &undirected {
        edges.push((a, b, w));
        if a != b {
            edges.push((b, a, w));
        }
    }
    let graph = SparseGraph::from_edges(num_nodes, &edges)?;

    let mut gold = vec![None; num_nodes];
    for &(node, class, line) in &labels {
        check_node(node, &labels_path, line)?;
        if gold[node].replace(class).is_some() {
            return Err(Error::Parse {
                path: labels_path.clone(),
                line,
                message: format!("node {node} labeled twice"),
            });
        }
    }

    let features = match (&features_text, feature_header) {
        (Some(text), Some((_, num_features))) => {
            let mut pairs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_nodes];
            for line in data_lines(&features_path, text) {
                let node: usize = line.parse(0, "node")?;
                let feature: usize = line.parse(1, "feature index")?;
                let value: f64 = line.parse(2, "value")?;
                check_node(node, &features_path, line.number)?;
                if feature >= num_features {
                    return Err(line.error(format!(
                        "feature index {feature} out of range for {num_features} features"
                    )));
                }
                if !value.is_finite() {
                    return Err(line.error("non-finite feature value"));
                }
                pairs[node].push((feature, value));
            }
            Some(FeatureMatrix {
                num_features,
                rows: pairs.into_iter().map(SparseVec::from_pairs).collect(),
            })
        }
        _ => None,
    };

    let num_classes = gold.iter().flatten().max().map_or(0, |&m| m + 1);
    let split = match &split_text {
        Some(text) => {
            let mut split = vec![Section::Unlabeled; num_nodes];
            for line in data_lines(&split_path, text) {
                let node: usize = line.parse(0, "node")?;
                check_node(node, &split_path, line.number)?;
                let raw = line
                    .fields
                    .get(1)
                    .ok_or_else(|| line.error("missing section column"))?;
                split[node] = raw
                    .trim()
                    .parse()
                    .map_err(|_| line.error(format!("unknown section {raw:?}")))?;
            }
            split
        }
        None => make_split(&gold, num_classes, &options.split)?,
    };

    let mut ds = Dataset::new(graph, features, gold, split)?;
    ds.raw_edge_count = raw_edges.len();
    Ok(ds)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes a dataset in the directory format read by [`load_dataset`].
pub fn save_dataset(ds: &Dataset, dir: &Path, include_split: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let symmetric = ds.graph.is_symmetric();
    let mut graph = format!("#nodes\t{}\n", ds.num_nodes);
    for (i, j, w) in ds.graph.edges() {
        if !symmetric || i <= j {
            graph.push_str(&format!("{i}\t{j}\t{w}\n"));
        }
    }
    write_file(&dir.join(GRAPH_FILE), &graph)?;

    let mut labels = String::new();
    for (i, y) in ds.gold.iter().enumerate() {
        if let Some(y) = y {
            labels.push_str(&format!("{i}\t{y}\n"));
        }
    }
    write_file(&dir.join(LABELS_FILE), &labels)?;

    if let Some(f) = &ds.features {
        let mut text = format!("#nodes\t{}\t#features\t{}\n", ds.num_nodes, f.num_features);
        for (i, row) in f.rows.iter().enumerate() {
            for (j, v) in row.iter() {
                text.push_str(&format!("{i}\t{j}\t{v}\n"));
            }
        }
        write_file(&dir.join(FEATURES_FILE), &text)?;
    }

    if include_split {
        let mut text = String::new();
        for (i, s) in ds.split.iter().enumerate() {
            text.push_str(&format!("{i}\t{s}\n"));
        }
        write_file(&dir.join(SPLIT_FILE), &text)?;
    }
    Ok(())
}

/// Report from [`import_linqs`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinqsImport {
    pub dataset: Dataset,
    /// Original paper ids in node order.
    pub node_names: Vec<String>,
    /// Class names in class-id order (sorted alphabetically).
    pub class_names: Vec<String>,
    /// Citation lines that referenced a paper missing from the content file.
    pub skipped_citations: usize,
}

/// Converts a LINQS citation archive (`*.content` and `*.cites`) into a
/// dataset. Every node starts in the unlabeled section.
pub fn import_linqs(content: &Path, cites: &Path) -> Result<LinqsImport> {
    let content_text = read_file(content)?;
    let cites_text = read_file(cites)?;

    let mut names = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows = Vec::new();
    let mut class_of = Vec::new();
    let mut num_features = None;
    for (k, line) in content_text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |m: String| Error::Parse {
            path: content.to_path_buf(),
            line: k + 1,
            message: m,
        };
        if fields.len() < 3 {
            return Err(err("expected id, features and class".into()));
        }
        let width = fields.len() - 2;
        if *num_features.get_or_insert(width) != width {
            return Err(err(format!(
                "expected {} feature columns, got {width}",
                num_features.unwrap()
            )));
        }
        let mut pairs = Vec::new();
        for (j, raw) in fields[1..fields.len() - 1].iter().enumerate() {
            let v: f64 = raw
                .parse()
                .map_err(|_| err(format!("bad feature value {raw:?}")))?;
            if v != 0.0 {
                pairs.push((j, v));
            }
        }
        let name = fields[0].to_string();
        if index.insert(name.clone(), names.len()).is_some() {
            return Err(err(format!("duplicate paper id {name}")));
        }
        names.push(name);
        rows.push(SparseVec::from_pairs(pairs));
        class_of.push(fields[fields.len() - 1].to_string());
    }

    let mut class_names: Vec<String> = class_of.clone();
    class_names.sort();
    class_names.dedup();
    let gold: Vec<Option<usize>> = class_of
        .iter()
        .map(|c| Some(class_names.binary_search(c).expect("class collected above")))
        .collect();

    let mut undirected = std::collections::BTreeSet::new();
    let mut skipped = 0;
    for (k, line) in cites_text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: cites.to_path_buf(),
                line: k + 1,
                message: "expected two paper ids".into(),
            });
        }
        match (index.get(fields[0]), index.get(fields[1])) {
            (Some(&a), Some(&b)) => {
                undirected.insert((a.min(b), a.max(b)));
            }
            _ => skipped += 1,
        }
    }
    let mut edges = Vec::new();
    for (a, b) in undirected {
        edges.push((a, b, 1.0));
        if a != b {
            edges.push((b, a, 1.0));
        }
    }
    let n = names.len();
    let graph = SparseGraph::from_edges(n, &edges)?;
    let features = FeatureMatrix {
        num_features: num_features.unwrap_or(0),
        rows,
    };
    let dataset = Dataset::new(graph, Some(features), gold, vec![Section::Unlabeled; n])?;
    Ok(LinqsImport {
        dataset,
        node_names: names,
        class_names,
        skipped_citations: skipped,
    })
}

/// Knowledge-base triple over interned ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KbTriple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Interner {
    ids: HashMap<String, usize>,
    names: Vec<String>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.ids.insert(name.to_string(), id);
        self.names.push(name.to_string());
        id
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    pub entities: Interner,
    pub relations: Interner,
    pub triples: Vec<KbTriple>,
}

impl KnowledgeBase {
    pub fn add(&mut self, head: &str, relation: &str, tail: &str) {
        let triple = KbTriple {
            head: self.entities.intern(head),
            relation: self.relations.intern(relation),
            tail: self.entities.intern(tail),
        };
        self.triples.push(triple);
    }

    /// Reads `head \t relation \t tail` lines.
    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        let mut kb = Self::default();
        for line in data_lines(path, &text) {
            if line.fields.len() != 3 {
                return Err(line.error("expected head, relation and tail"));
            }
            kb.add(line.fields[0], line.fields[1], line.fields[2]);
        }
        Ok(kb)
    }
}

/// Relations dropped before graph construction by default.
pub const DEFAULT_RELATION_BLACKLIST: [&str; 3] = ["generalizations", "haswikipediaurl", "atdate"];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum KbNode {
    Entity(String),
    /// Node `r1`: linked to the head entities of relation `r`.
    RelationHead(String),
    /// Node `r2`: linked to the tail entities of relation `r`.
    RelationTail(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KbGraph {
    pub nodes: Vec<KbNode>,
    /// Symmetric unit-weight edges, both directions listed.
    pub edges: Vec<(usize, usize, f64)>,
}

impl KbGraph {
    pub fn to_sparse(&self) -> Result<SparseGraph> {
        SparseGraph::from_edges(self.nodes.len(), &self.edges)
    }

    pub fn node_id(&self, node: &KbNode) -> Option<usize> {
        self.nodes.iter().position(|n| n == node)
    }
}

/// Splits every relation `r` into nodes `r1`, `r2` and links each triple
/// `(e1, r, e2)` as `e1 - r1` and `e2 - r2`. Node ids follow first appearance;
/// repeated edges are kept once.
pub fn kb_to_graph(kb: &KnowledgeBase, blacklist: &[&str]) -> KbGraph {
    let mut node_ids: HashMap<KbNode, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut intern = |node: KbNode| -> usize {
        *node_ids.entry(node.clone()).or_insert_with(|| {
            nodes.push(node);
            nodes.len() - 1
        })
    };
    let mut pairs = std::collections::BTreeSet::new();
    for t in &kb.triples {
        let relation = kb.relations.name(t.relation);
        if blacklist.contains(&relation) {
            continue;
        }
        let head = intern(KbNode::Entity(kb.entities.name(t.head).to_string()));
        let tail = intern(KbNode::Entity(kb.entities.name(t.tail).to_string()));
        let r1 = intern(KbNode::RelationHead(relation.to_string()));
        let r2 = intern(KbNode::RelationTail(relation.to_string()));
        pairs.insert((head.min(r1), head.max(r1)));
        pairs.insert((tail.min(r2), tail.max(r2)));
    }
    let mut edges = Vec::with_capacity(pairs.len() * 2);
    for (a, b) in pairs {
        edges.push((a, b, 1.0));
        edges.push((b, a, 1.0));
    }
    KbGraph { nodes, edges }
}

/// One row of an embedding export.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub node: usize,
    /// Gold class, or `None` (written as `-1`).
    pub class: Option<usize>,
    pub vector: Vec<f64>,
}

/// Writes `node \t class_or_-1 \t v1 .. vD` for every node, 17 significant digits.
pub fn export_embeddings(model: &ModelParams, ds: &Dataset, path: &Path) -> Result<()> {
    let mut rows = Vec::with_capacity(ds.num_nodes);
    for i in 0..ds.num_nodes {
        rows.push(EmbeddingRow {
            node: i,
            class: ds.gold[i],
            vector: model.embedding_of(&ds.instance(i))?,
        });
    }
    write_embeddings(&rows, path)
}

pub fn write_embeddings(rows: &[EmbeddingRow], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for row in rows {
        match row.class {
            Some(c) => write!(w, "{}\t{c}", row.node).map_err(io)?,
            None => write!(w, "{}\t-1", row.node).map_err(io)?,
        }
        for v in &row.vector {
            write!(w, "\t{v:.16e}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let text = read_file(path)?;
    let path_buf: PathBuf = path.to_path_buf();
    let mut rows = Vec::new();
    for line in data_lines(&path_buf, &text) {
        let node = line.parse(0, "node")?;
        let class: i64 = line.parse(1, "class")?;
        let vector = (2..line.fields.len())
            .map(|k| line.parse::<f64>(k, "value"))
            .collect::<Result<Vec<_>>>()?;
        rows.push(EmbeddingRow {
            node,
            class: usize::try_from(class).ok(),
            vector,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planetoid::{Architecture, ModelShape, ModelVariant};
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    fn tiny_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), GRAPH_FILE, "# two papers\n0\t1\n");
        write(dir.path(), LABELS_FILE, "0\t0\n1\t1\n");
        write(
            dir.path(),
            FEATURES_FILE,
            "#nodes\t2\t#features\t3\n0\t0\t1\n1\t2\t0.5\n",
        );
        write(dir.path(), SPLIT_FILE, "0\ttrain\n1\ttest\n");
        dir
    }

    #[test]
    fn loads_and_symmetrizes() {
        let dir = tiny_dir();
        let ds = load_dataset(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.num_nodes, 2);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.graph.weight(0, 1), 1.0);
        assert_eq!(ds.graph.weight(1, 0), 1.0);
        assert_eq!(ds.raw_edge_count, 1);
        assert_eq!(ds.undirected_edge_count(), 1);
        assert_eq!(ds.split, vec![Section::Train, Section::Test]);
        assert_eq!(ds.features.as_ref().unwrap().rows[1].indices, vec![2]);
        assert_eq!(ds.train_labels(), vec![(0, 0)]);
    }

    #[test]
    fn mutual_citations_count_once() {
        let dir = tiny_dir();
        write(dir.path(), GRAPH_FILE, "0\t1\n1\t0\n");
        let ds = load_dataset(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.graph.weight(0, 1), 1.0);
        assert_eq!(ds.raw_edge_count, 2);
        assert_eq!(ds.undirected_edge_count(), 1);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tiny_dir();
        let first = load_dataset(dir.path(), &LoadOptions::default()).unwrap();
        let out = tempfile::tempdir().unwrap();
        save_dataset(&first, out.path(), true).unwrap();
        let mut second = load_dataset(out.path(), &LoadOptions::default()).unwrap();
        second.raw_edge_count = first.raw_edge_count;
        assert_eq!(first, second);
    }

    #[test]
    fn malformed_line_reports_location() {
        let dir = tiny_dir();
        write(dir.path(), GRAPH_FILE, "0\t1\n1\tx\n");
        let err = load_dataset(dir.path(), &LoadOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("graph.tsv:2"), "{msg}");
    }

    #[test]
    fn out_of_range_ids_rejected() {
        let dir = tiny_dir();
        write(dir.path(), GRAPH_FILE, "0\t5\n");
        let msg = load_dataset(dir.path(), &LoadOptions::default())
            .unwrap_err()
            .to_string();
        assert!(
            msg.contains("graph.tsv:1") && msg.contains("out of range"),
            "{msg}"
        );

        let dir = tiny_dir();
        write(dir.path(), LABELS_FILE, "0\t0\n2\t1\n");
        assert!(load_dataset(dir.path(), &LoadOptions::default()).is_err());
    }

    #[test]
    fn train_section_requires_labels() {
        let dir = tiny_dir();
        write(dir.path(), LABELS_FILE, "1\t1\n");
        assert!(load_dataset(dir.path(), &LoadOptions::default()).is_err());
    }

    #[test]
    fn missing_split_is_generated() {
        let dir = tempfile::tempdir().unwrap();
        let mut graph = String::new();
        let mut labels = String::new();
        for i in 0..30 {
            graph.push_str(&format!("{i}\t{}\n", (i + 1) % 30));
            labels.push_str(&format!("{i}\t{}\n", i % 3));
        }
        write(dir.path(), GRAPH_FILE, &graph);
        write(dir.path(), LABELS_FILE, &labels);
        let opts = LoadOptions {
            split: SplitPolicy {
                labeling: Labeling::PerClass(2),
                test_size: 10,
                seed: 4,
            },
        };
        let ds = load_dataset(dir.path(), &opts).unwrap();
        assert_eq!(ds.section_nodes(Section::Train).len(), 6);
        assert_eq!(ds.section_nodes(Section::Test).len(), 10);
        assert!(ds.features.is_none());
    }

    #[test]
    fn split_per_class_arithmetic() {
        let gold: Vec<Option<usize>> = (0..700).map(|i| Some(i % 7)).collect();
        let policy = SplitPolicy {
            labeling: Labeling::PerClass(20),
            test_size: 100,
            seed: 1,
        };
        let split = make_split(&gold, 7, &policy).unwrap();
        assert_eq!(split.iter().filter(|&&s| s == Section::Train).count(), 140);
        assert_eq!(split.iter().filter(|&&s| s == Section::Test).count(), 100);
        for k in 0..7 {
            let n = (0..700)
                .filter(|&i| split[i] == Section::Train && i % 7 == k)
                .count();
            assert_eq!(n, 20);
        }
        assert_eq!(make_split(&gold, 7, &policy).unwrap(), split);
        let other = make_split(&gold, 7, &SplitPolicy { seed: 2, ..policy }).unwrap();
        assert_ne!(other, split);
    }

    #[test]
    fn split_class_too_small_names_class() {
        let gold = vec![Some(0), Some(0), Some(1)];
        let policy = SplitPolicy {
            labeling: Labeling::PerClass(2),
            test_size: 0,
            seed: 0,
        };
        let msg = make_split(&gold, 2, &policy).unwrap_err().to_string();
        assert!(msg.contains("class 1"), "{msg}");
    }

    #[test]
    fn labeling_rate_keeps_one_per_class() {
        // Class sizes 50, 5, 1000.
        let mut gold = Vec::new();
        for (class, size) in [(0usize, 50usize), (1, 5), (2, 1000)] {
            gold.extend(std::iter::repeat_n(Some(class), size));
        }
        gold.push(None);
        let policy = SplitPolicy {
            labeling: Labeling::Rate(0.01),
            test_size: 10,
            seed: 3,
        };
        let split = make_split(&gold, 3, &policy).unwrap();
        let count =
            |range: std::ops::Range<usize>| range.filter(|&i| split[i] == Section::Train).count();
        assert_eq!(count(0..50), 1);
        assert_eq!(count(50..55), 1);
        assert_eq!(count(55..1055), 10);
        assert_eq!(split[1055], Section::Unlabeled);
    }

    proptest! {
        #[test]
        fn split_partitions_nodes(
            labels in proptest::collection::vec(proptest::option::of(0usize..3), 20..60),
            per_class in 0usize..3,
            seed in any::<u64>(),
        ) {
            let policy = SplitPolicy { labeling: Labeling::PerClass(per_class), test_size: 3, seed };
            if let Ok(split) = make_split(&labels, 3, &policy) {
                prop_assert_eq!(split.len(), labels.len());
                for k in 0..3 {
                    let n = (0..labels.len())
                        .filter(|&i| split[i] == Section::Train && labels[i] == Some(k))
                        .count();
                    prop_assert_eq!(n, per_class);
                }
                prop_assert_eq!(split.iter().filter(|&&s| s == Section::Test).count(), 3);
                for (s, y) in split.iter().zip(&labels) {
                    if *s != Section::Unlabeled {
                        prop_assert!(y.is_some());
                    }
                }
            }
        }
    }

    #[test]
    fn kb_single_triple() {
        let mut kb = KnowledgeBase::default();
        kb.add("a", "r", "b");
        let g = kb_to_graph(&kb, &DEFAULT_RELATION_BLACKLIST);
        assert_eq!(g.nodes.len(), 4);
        let a = g.node_id(&KbNode::Entity("a".into())).unwrap();
        let b = g.node_id(&KbNode::Entity("b".into())).unwrap();
        let r1 = g.node_id(&KbNode::RelationHead("r".into())).unwrap();
        let r2 = g.node_id(&KbNode::RelationTail("r".into())).unwrap();
        let sg = g.to_sparse().unwrap();
        assert_eq!(sg.num_edges(), 4);
        assert_eq!(sg.weight(a, r1), 1.0);
        assert_eq!(sg.weight(r1, a), 1.0);
        assert_eq!(sg.weight(b, r2), 1.0);
        assert_eq!(sg.weight(r2, b), 1.0);
        assert_eq!(sg.weight(a, r2), 0.0);
        assert!(sg.is_symmetric());
    }

    #[test]
    fn kb_relation_nodes_interned_once() {
        let mut kb = KnowledgeBase::default();
        kb.add("a", "r", "b");
        kb.add("c", "r", "d");
        let g = kb_to_graph(&kb, &[]);
        assert_eq!(g.nodes.len(), 6);
        let r1 = g.node_id(&KbNode::RelationHead("r".into())).unwrap();
        let sg = g.to_sparse().unwrap();
        assert_eq!(sg.out_degree(r1), 2);
    }

    #[test]
    fn kb_blacklist_filters() {
        let mut kb = KnowledgeBase::default();
        kb.add("a", "r", "b");
        kb.add("x", "generalizations", "y");
        let g = kb_to_graph(&kb, &DEFAULT_RELATION_BLACKLIST);
        assert_eq!(g.nodes.len(), 4);
        assert!(g.node_id(&KbNode::Entity("x".into())).is_none());
        assert_eq!(g.edges.len(), 4);
    }

    #[test]
    fn kb_reads_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.tsv");
        fs::write(&path, "# head rel tail\na\tr\tb\nb\ts\tc\n").unwrap();
        let kb = KnowledgeBase::read_tsv(&path).unwrap();
        assert_eq!(kb.triples.len(), 2);
        assert_eq!(kb.entities.len(), 3);
        fs::write(&path, "a\tr\n").unwrap();
        assert!(KnowledgeBase::read_tsv(&path).is_err());
    }

    #[test]
    fn export_round_trip() {
        let dir = tiny_dir();
        let ds = load_dataset(dir.path(), &LoadOptions::default()).unwrap();
        let shape = ModelShape {
            num_nodes: 2,
            num_features: 3,
            num_classes: 2,
        };
        let arch = Architecture {
            feature_hidden: vec![2],
            embedding_dim: 4,
            encoder_hidden: vec![],
            embedding_hidden: vec![2],
        };
        let model = ModelParams::new(
            ModelVariant::Transductive,
            shape,
            &arch,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let out = tempfile::tempdir().unwrap();
        let path = out.path().join("emb.tsv");
        export_embeddings(&model, &ds, &path).unwrap();
        let rows = read_embeddings(&path).unwrap();
        assert_eq!(rows.len(), ds.num_nodes);
        for row in &rows {
            let table = model.embedding_table.as_ref().unwrap();
            assert_eq!(row.vector.as_slice(), table.row(row.node));
            assert_eq!(row.class, ds.gold[row.node]);
        }
        let line = fs::read_to_string(&path).unwrap();
        let first_value = line.lines().next().unwrap().split('\t').nth(2).unwrap();
        let mantissa = first_value
            .split('e')
            .next()
            .unwrap()
            .trim_start_matches('-');
        assert_eq!(mantissa.replace('.', "").len(), 17);
    }

    #[test]
    fn linqs_import() {
        let dir = tempfile::tempdir().unwrap();
        let content = dir.path().join("toy.content");
        let cites = dir.path().join("toy.cites");
        fs::write(&content, "p1 1 0 0 Theory\np2 0 1 1 AI\np3 0 0 0 Theory\n").unwrap();
        fs::write(&cites, "p1 p2\np2 p1\np3 p1\np9 p1\n").unwrap();
        let imp = import_linqs(&content, &cites).unwrap();
        assert_eq!(
            imp.class_names,
            vec!["AI".to_string(), "Theory".to_string()]
        );
        assert_eq!(imp.dataset.gold, vec![Some(1), Some(0), Some(1)]);
        assert_eq!(imp.skipped_citations, 1);
        assert_eq!(imp.dataset.undirected_edge_count(), 2);
        assert_eq!(imp.dataset.num_features(), 3);
        assert_eq!(
            imp.dataset.features.as_ref().unwrap().rows[1].indices,
            vec![1, 2]
        );
    }
}
