//! Comparison methods: Feat (linear softmax on features) and label propagation.

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::argmax;
use crate::graph::SparseGraph;
use crate::neural::{sgd_dense, sgd_rows, softmax, softmax_xent, Matrix, RowGrad, SparseVec};

/// Single softmax layer on the feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmax {
    /// `features x classes`, input-major.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearSoftmax {
    pub const KIND: &'static str = "feat";

    /// All-zero parameters, which predict the uniform distribution.
    pub fn zeros(num_features: usize, num_classes: usize) -> Self {
        Self {
            weight: Matrix::zeros(num_features, num_classes),
            bias: vec![0.0; num_classes],
        }
    }

    pub fn num_features(&self) -> usize {
        self.weight.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, x: &SparseVec) -> Result<Vec<f64>> {
        let mut z = self.bias.clone();
        for (j, v) in x.iter() {
            if j >= self.num_features() {
                return Err(Error::InvalidInput(format!(
                    "feature index {j} out of range for {} features",
                    self.num_features()
                )));
            }
            for (zk, w) in z.iter_mut().zip(self.weight.row(j)) {
                *zk += w * v;
            }
        }
        Ok(z)
    }

    pub fn predict(&self, x: &SparseVec) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Mean cross-entropy over `batch` with gradients for weight rows and bias.
    pub fn loss_and_grad(&self, batch: &[(&SparseVec, usize)]) -> Result<(f64, RowGrad, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("feat: empty batch".into()));
        }
        let mut gw = RowGrad::new(self.num_classes());
        let mut gb = vec![0.0; self.num_classes()];
        let mut total = 0.0;
        for &(x, y) in batch {
            if y >= self.num_classes() {
                return Err(Error::InvalidInput(format!("label {y} out of range")));
            }
            let (loss, g) = softmax_xent(&self.logits(x)?, y);
            total += loss;
            for (b, d) in gb.iter_mut().zip(&g) {
                *b += d;
            }
            for (j, v) in x.iter() {
                for (w, d) in gw.row_mut(j).iter_mut().zip(&g) {
                    *w += v * d;
                }
            }
        }
        let n = batch.len() as f64;
        gw.scale(1.0 / n);
        gb.iter_mut().for_each(|v| *v /= n);
        Ok((total / n, gw, gb))
    }

    /// One gradient step on `batch`; returns the loss before the step.
    pub fn step(&mut self, batch: &[(&SparseVec, usize)], lr: f64) -> Result<f64> {
        let (loss, gw, gb) = self.loss_and_grad(batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("feat loss".into()));
        }
        // Check both before touching either tensor.
        if gb.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient of feat bias".into()));
        }
        sgd_rows("feat weight", &mut self.weight, &gw, lr)?;
        sgd_dense("feat bias", &mut self.bias, &gb, lr)?;
        Ok(loss)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(Self::KIND);
        ck.push("weight", self.weight.clone());
        ck.push_vector("bias", &self.bias);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != Self::KIND {
            return Err(Error::Config(format!(
                "checkpoint holds a {:?} model, not feat",
                ck.kind
            )));
        }
        let weight = ck.require("weight")?.clone();
        let bias = ck.require_vector("bias")?;
        if weight.cols() != bias.len() {
            return Err(Error::Data(
                "feat checkpoint: weight/bias shape mismatch".into(),
            ));
        }
        Ok(Self { weight, bias })
    }
}

/// Trains Feat by full-batch gradient descent on the labeled examples.
pub fn train_feat(
    examples: &[(&SparseVec, usize)],
    num_features: usize,
    num_classes: usize,
    lr: f64,
    steps: usize,
) -> Result<LinearSoftmax> {
    if examples.is_empty() {
        return Err(Error::Data("feat: no labeled instances".into()));
    }
    let mut model = LinearSoftmax::zeros(num_features, num_classes);
    for step in 0..steps {
        model.step(examples, lr).map_err(|e| Error::Diverged {
            phase: "feat",
            round: 0,
            step,
            message: e.to_string(),
        })?;
    }
    Ok(model)
}

/// Per-node class distributions produced by label propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistributionTable {
    pub rows: Matrix,
    /// Max row-wise L1 change of each sweep.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl LabelDistributionTable {
    pub const KIND: &'static str = "lp";

    pub fn num_nodes(&self) -> usize {
        self.rows.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    /// Hard prediction, lowest class id on ties.
    pub fn predict(&self, i: usize) -> usize {
        argmax(self.row(i))
    }

    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    /// Sweeps after the first whose residual grew.
    pub fn residual_increases(&self) -> Vec<usize> {
        (2..self.residuals.len())
            .filter(|&k| self.residuals[k] > self.residuals[k - 1])
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(Self::KIND);
        ck.push("rows", self.rows.clone());
        ck.push_vector("residuals", &self.residuals);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != Self::KIND {
            return Err(Error::Config(format!(
                "checkpoint holds a {:?} model, not lp",
                ck.kind
            )));
        }
        let residuals = ck.require_vector("residuals")?;
        Ok(Self {
            rows: ck.require("rows")?.clone(),
            converged: true,
            residuals,
        })
    }
}

/// Clamped iterative diffusion `f <- D^-1 A f`.
///
/// Unlabeled rows start uniform, labeled rows stay one-hot, and nodes without
/// edges keep their current row. Stops once the largest row-wise L1 change
/// drops below `tol` or after `max_iters` sweeps.
pub fn label_propagation(
    graph: &SparseGraph,
    labels: &[(usize, usize)],
    num_classes: usize,
    max_iters: usize,
    tol: f64,
) -> Result<LabelDistributionTable> {
    let n = graph.num_nodes();
    if num_classes == 0 {
        return Err(Error::InvalidInput(
            "label propagation needs at least one class".into(),
        ));
    }
    let mut clamp: Vec<Option<usize>> = vec![None; n];
    for &(node, y) in labels {
        if node >= n || y >= num_classes {
            return Err(Error::InvalidInput(format!(
                "labeled pair ({node}, {y}) out of range"
            )));
        }
        if clamp[node].is_some_and(|prev| prev != y) {
            return Err(Error::InvalidInput(format!("node {node} has two labels")));
        }
        clamp[node] = Some(y);
    }

    let uniform = 1.0 / num_classes as f64;
    let mut current = Matrix::zeros(n, num_classes);
    for i in 0..n {
        match clamp[i] {
            Some(y) => current.set(i, y, 1.0),
            None => current.row_mut(i).fill(uniform),
        }
    }
    let mut next = current.clone();
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters {
        let mut max_change = 0.0f64;
        for i in 0..n {
            if clamp[i].is_some() {
                continue;
            }
            let degree = graph.weighted_degree(i);
            let row = next.row_mut(i);
            if degree <= 0.0 {
                row.copy_from_slice(current.row(i));
                continue;
            }
            row.fill(0.0);
            for (j, w) in graph.neighbors(i) {
                for (r, v) in row.iter_mut().zip(current.row(j)) {
                    *r += w * v;
                }
            }
            row.iter_mut().for_each(|r| *r /= degree);
            let change: f64 = row
                .iter()
                .zip(current.row(i))
                .map(|(a, b)| (a - b).abs())
                .sum();
            max_change = max_change.max(change);
        }
        std::mem::swap(&mut current, &mut next);
        residuals.push(max_change);
        if max_change < tol {
            converged = true;
            break;
        }
    }
    Ok(LabelDistributionTable {
        rows: current,
        residuals,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_hot_rows(n: usize, dim: usize) -> Vec<SparseVec> {
        (0..n)
            .map(|i| SparseVec::from_pairs(vec![(i % dim, 1.0)]))
            .collect()
    }

    #[test]
    fn zero_steps_predict_uniform() {
        let xs = one_hot_rows(3, 3);
        let examples: Vec<_> = xs.iter().zip([0, 1, 2]).collect();
        let m = train_feat(&examples, 3, 3, 0.5, 0).unwrap();
        for x in &xs {
            for p in m.predict(x).unwrap() {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn memorizes_one_hot_features() {
        let xs = one_hot_rows(4, 4);
        let ys = [0, 1, 2, 3];
        let examples: Vec<_> = xs.iter().zip(ys).collect();
        let m = train_feat(&examples, 4, 4, 1.0, 200).unwrap();
        for (x, y) in xs.iter().zip(ys) {
            assert_eq!(argmax(&m.predict(x).unwrap()), y);
        }
    }

    #[test]
    fn empty_labeled_set_errors() {
        assert!(train_feat(&[], 3, 2, 0.1, 10).is_err());
    }

    #[test]
    fn feat_gradient_matches_finite_differences() {
        let xs = vec![
            SparseVec::from_pairs(vec![(0, 0.7), (2, -1.3)]),
            SparseVec::from_pairs(vec![(1, 2.0)]),
            SparseVec::from_pairs(vec![(0, -0.4), (1, 0.3), (2, 0.9)]),
        ];
        let ys = [1, 0, 2];
        let mut m = LinearSoftmax::zeros(3, 3);
        for (k, v) in m.weight.data_mut().iter_mut().enumerate() {
            *v = ((k * 37 % 11) as f64 - 5.0) * 0.13;
        }
        m.bias = vec![0.2, -0.1, 0.05];
        let batch: Vec<_> = xs.iter().zip(ys).collect();
        let (_, gw, gb) = m.loss_and_grad(&batch).unwrap();
        let gw = gw.to_dense(3);
        let h = 1e-5;
        let loss = |m: &LinearSoftmax| m.loss_and_grad(&batch).unwrap().0;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        for r in 0..3 {
            for c in 0..3 {
                let mut plus = m.clone();
                let mut minus = m.clone();
                plus.weight.set(r, c, m.weight.get(r, c) + h);
                minus.weight.set(r, c, m.weight.get(r, c) - h);
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!(
                    rel(fd, gw.get(r, c)) < 1e-4,
                    "w[{r},{c}] {fd} vs {}",
                    gw.get(r, c)
                );
            }
        }
        for c in 0..3 {
            let mut plus = m.clone();
            let mut minus = m.clone();
            plus.bias[c] += h;
            minus.bias[c] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!(rel(fd, gb[c]) < 1e-4);
        }
    }

    #[test]
    fn feat_checkpoint_round_trip() {
        let xs = one_hot_rows(2, 2);
        let examples: Vec<_> = xs.iter().zip([0, 1]).collect();
        let m = train_feat(&examples, 2, 2, 0.3, 5).unwrap();
        let back = LinearSoftmax::from_checkpoint(
            &Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, m);
        let mut other = m.to_checkpoint();
        other.kind = "lp".into();
        assert!(LinearSoftmax::from_checkpoint(&other).is_err());
    }

    fn undirected(n: usize, pairs: &[(usize, usize)]) -> SparseGraph {
        let mut edges = Vec::new();
        for &(a, b) in pairs {
            edges.push((a, b, 1.0));
            edges.push((b, a, 1.0));
        }
        SparseGraph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn lp_single_source() {
        let g = undirected(2, &[(0, 1)]);
        let t = label_propagation(&g, &[(0, 0)], 2, 1000, 1e-6).unwrap();
        assert!((t.row(1)[0] - 1.0).abs() < 1e-12);
        assert!(t.converged);
    }

    #[test]
    fn lp_path_middle_is_balanced() {
        // Balance equation for the middle node: f1 = (f0 + f2) / 2 = (1/2, 1/2).
        let g = undirected(3, &[(0, 1), (1, 2)]);
        let t = label_propagation(&g, &[(0, 0), (2, 1)], 2, 1000, 1e-6).unwrap();
        assert!((t.row(1)[0] - 0.5).abs() < 1e-6);
        assert!((t.row(1)[1] - 0.5).abs() < 1e-6);
        assert_eq!(t.predict(1), 0);
        assert_eq!(t.row(0), &[1.0, 0.0]);
        assert_eq!(t.row(2), &[0.0, 1.0]);
    }

    #[test]
    fn lp_isolated_node_stays_uniform() {
        let g = undirected(3, &[(0, 1)]);
        let t = label_propagation(&g, &[(0, 1)], 2, 1000, 1e-6).unwrap();
        assert_eq!(t.row(2), &[0.5, 0.5]);
    }

    #[test]
    fn lp_long_path_matches_harmonic_solution() {
        // Harmonic solution on a path with ends clamped is linear in position.
        let n = 6;
        let pairs: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let g = undirected(n, &pairs);
        let t = label_propagation(&g, &[(0, 0), (n - 1, 1)], 2, 100_000, 1e-12).unwrap();
        for i in 0..n {
            let expected = 1.0 - i as f64 / (n - 1) as f64;
            assert!((t.row(i)[0] - expected).abs() < 1e-9, "node {i}");
        }
    }

    #[test]
    fn lp_rejects_bad_labels() {
        let g = undirected(2, &[(0, 1)]);
        assert!(label_propagation(&g, &[(5, 0)], 2, 10, 1e-6).is_err());
        assert!(label_propagation(&g, &[(0, 3)], 2, 10, 1e-6).is_err());
    }

    #[test]
    fn lp_checkpoint_round_trip() {
        let g = undirected(3, &[(0, 1), (1, 2)]);
        let t = label_propagation(&g, &[(0, 0)], 2, 50, 1e-6).unwrap();
        let back = LabelDistributionTable::from_checkpoint(&t.to_checkpoint()).unwrap();
        assert_eq!(back.rows, t.rows);
        assert_eq!(back.residuals, t.residuals);
    }

    proptest! {
        #[test]
        fn lp_rows_are_distributions(
            n in 2usize..12,
            pairs in proptest::collection::vec((0usize..12, 0usize..12), 0..30),
            labeled in proptest::collection::vec((0usize..12, 0usize..3), 1..5),
            iters in 0usize..40,
        ) {
            let pairs: Vec<_> = pairs.into_iter().map(|(a, b)| (a % n, b % n)).collect();
            let g = undirected(n, &pairs);
            let mut seen = std::collections::HashSet::new();
            let labeled: Vec<_> = labeled
                .into_iter()
                .map(|(a, y)| (a % n, y))
                .filter(|(a, _)| seen.insert(*a))
                .collect();
            let t = label_propagation(&g, &labeled, 3, iters, 1e-9).unwrap();
            for i in 0..n {
                let row = t.row(i);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            for &(a, y) in &labeled {
                let mut expect = vec![0.0; 3];
                expect[y] = 1.0;
                prop_assert_eq!(t.row(a), expect.as_slice());
            }
        }

        #[test]
        fn feat_ignores_graph(seed in 0u64..1000) {
            // Feat never sees a graph: its output depends on features and labels only.
            let xs = vec![
                SparseVec::from_pairs(vec![(0, 1.0 + seed as f64 * 1e-3)]),
                SparseVec::from_pairs(vec![(1, 1.0)]),
            ];
            let ex: Vec<_> = xs.iter().zip([0, 1]).collect();
            let a = train_feat(&ex, 2, 2, 0.1, 10).unwrap();
            let b = train_feat(&ex, 2, 2, 0.1, 10).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
