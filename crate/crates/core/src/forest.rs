//! Random forests grown from scratch: a Gini classifier and a multi-output
//! variance-reduction regressor sharing one tree builder.
//!
//! Trees are stored as flat node arenas. Every node records its depth, the
//! number of (bootstrap) samples that reached it and either the class
//! histogram or the mean target vector of those samples, so trained forests
//! can be inspected after the fact.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceMatrix;
use crate::embeddings::LabelVectorSet;
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// `ceil(sqrt(p))` candidate features per node.
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, n_features: usize) -> usize {
        let m = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Count(m) => m,
        };
        m.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 2,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn with_trees(n_trees: usize) -> Self {
        ForestParams {
            n_trees,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeValue {
    /// Per-class sample counts.
    Histogram(Vec<f64>),
    /// Mean target vector.
    Mean(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Leaf,
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub depth: usize,
    pub n_samples: usize,
    pub kind: NodeKind,
    pub value: NodeValue,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf)
    }

    /// `(feature, threshold)` of an internal node. Samples with
    /// `x[feature] <= threshold` go left.
    pub fn split(&self) -> Option<(usize, f64)> {
        match self.kind {
            NodeKind::Split {
                feature, threshold, ..
            } => Some((feature, threshold)),
            NodeKind::Leaf => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Builds a tree from nodes in index order; node 0 is the root.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("tree nodes"));
        }
        for n in &nodes {
            if let NodeKind::Split { left, right, .. } = n.kind {
                if left >= nodes.len() || right >= nodes.len() {
                    return Err(Error::Shape(format!(
                        "child index out of range for {} nodes",
                        nodes.len()
                    )));
                }
            }
        }
        Ok(Tree { nodes })
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn leaf_for(&self, row: ArrayView1<'_, f64>) -> &Node {
        let mut id = 0;
        loop {
            match self.nodes[id].kind {
                NodeKind::Leaf => return &self.nodes[id],
                NodeKind::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if row[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Targets<'a> {
    Classes { y: &'a [usize], n_classes: usize },
    Vectors(ArrayView2<'a, f64>),
}

impl Targets<'_> {
    fn node_value(&self, samples: &[usize]) -> NodeValue {
        match *self {
            Targets::Classes { y, n_classes } => {
                let mut hist = vec![0.0; n_classes];
                for &s in samples {
                    hist[y[s]] += 1.0;
                }
                NodeValue::Histogram(hist)
            }
            Targets::Vectors(t) => {
                let mut mean = vec![0.0; t.ncols()];
                for &s in samples {
                    for (m, v) in mean.iter_mut().zip(t.row(s)) {
                        *m += v;
                    }
                }
                let n = samples.len() as f64;
                mean.iter_mut().for_each(|m| *m /= n);
                NodeValue::Mean(mean)
            }
        }
    }

    fn is_pure(&self, samples: &[usize]) -> bool {
        match *self {
            Targets::Classes { y, .. } => samples.iter().all(|&s| y[s] == y[samples[0]]),
            Targets::Vectors(t) => {
                let first = t.row(samples[0]);
                samples.iter().all(|&s| t.row(s) == first)
            }
        }
    }
}

struct SplitCandidate {
    feature: usize,
    threshold: f64,
    /// Larger is better: `sum(c^2)/n` over both children for Gini, and
    /// `sum_d(S_d^2)/n` over both children for variance.
    score: f64,
}

/// Best threshold on one feature. `order` is scratch space.
fn best_threshold(
    x: ArrayView2<'_, f64>,
    targets: Targets<'_>,
    samples: &[usize],
    feature: usize,
    order: &mut Vec<(f64, usize)>,
) -> Option<SplitCandidate> {
    order.clear();
    order.extend(samples.iter().map(|&s| (x[[s, feature]], s)));
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = order.len();
    if order[0].0 == order[n - 1].0 {
        return None;
    }

    let mut best: Option<SplitCandidate> = None;
    let mut consider = |i: usize, score: f64| {
        if best.as_ref().is_none_or(|b| score > b.score) {
            let (lo, hi) = (order[i].0, order[i + 1].0);
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold >= hi {
                threshold = lo;
            }
            best = Some(SplitCandidate {
                feature,
                threshold,
                score,
            });
        }
    };

    match targets {
        Targets::Classes { y, n_classes } => {
            let mut left = vec![0.0f64; n_classes];
            let mut right = vec![0.0f64; n_classes];
            for &(_, s) in order.iter() {
                right[y[s]] += 1.0;
            }
            let mut sq_left = 0.0;
            let mut sq_right: f64 = right.iter().map(|c| c * c).sum();
            for i in 0..n - 1 {
                let c = y[order[i].1];
                sq_left += 2.0 * left[c] + 1.0;
                sq_right -= 2.0 * right[c] - 1.0;
                left[c] += 1.0;
                right[c] -= 1.0;
                if order[i].0 < order[i + 1].0 {
                    let n_left = (i + 1) as f64;
                    let n_right = (n - i - 1) as f64;
                    consider(i, sq_left / n_left + sq_right / n_right);
                }
            }
        }
        Targets::Vectors(t) => {
            let dim = t.ncols();
            let mut left = vec![0.0f64; dim];
            let mut total = vec![0.0f64; dim];
            for &(_, s) in order.iter() {
                for (acc, v) in total.iter_mut().zip(t.row(s)) {
                    *acc += v;
                }
            }
            for i in 0..n - 1 {
                for (acc, v) in left.iter_mut().zip(t.row(order[i].1)) {
                    *acc += v;
                }
                if order[i].0 < order[i + 1].0 {
                    let n_left = (i + 1) as f64;
                    let n_right = (n - i - 1) as f64;
                    let mut score = 0.0;
                    for (l, tot) in left.iter().zip(&total) {
                        let r = tot - l;
                        score += l * l / n_left + r * r / n_right;
                    }
                    consider(i, score);
                }
            }
        }
    }
    best
}

fn grow_tree(
    x: ArrayView2<'_, f64>,
    targets: Targets<'_>,
    mut samples: Vec<usize>,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let n_features = x.ncols();
    let m = params.max_features.resolve(n_features);
    let mut features: Vec<usize> = (0..n_features).collect();
    let mut order = Vec::with_capacity(samples.len());
    let mut nodes: Vec<Node> = Vec::new();

    // (node id, sample range) work stack; samples are partitioned in place.
    let n = samples.len();
    nodes.push(Node {
        depth: 0,
        n_samples: n,
        kind: NodeKind::Leaf,
        value: targets.node_value(&samples),
    });
    let mut stack = vec![(0usize, 0usize, n)];

    while let Some((id, start, end)) = stack.pop() {
        let depth = nodes[id].depth;
        let here = &mut samples[start..end];
        let n_here = end - start;
        let depth_capped = params.max_depth.is_some_and(|d| depth >= d);
        if n_here < params.min_samples_split.max(2) || depth_capped || targets.is_pure(here) {
            continue;
        }

        features.shuffle(rng);
        let mut best: Option<SplitCandidate> = None;
        for (visited, &f) in features.iter().enumerate() {
            if visited >= m && best.is_some() {
                break;
            }
            if let Some(cand) = best_threshold(x, targets, here, f, &mut order) {
                if best.as_ref().is_none_or(|b| cand.score > b.score) {
                    best = Some(cand);
                }
            }
        }
        let Some(split) = best else { continue };

        let mut mid = 0;
        for i in 0..n_here {
            if x[[here[i], split.feature]] <= split.threshold {
                here.swap(i, mid);
                mid += 1;
            }
        }
        debug_assert!(mid > 0 && mid < n_here);

        let left_id = nodes.len();
        let right_id = left_id + 1;
        for (lo, hi) in [(start, start + mid), (start + mid, end)] {
            nodes.push(Node {
                depth: depth + 1,
                n_samples: hi - lo,
                kind: NodeKind::Leaf,
                value: targets.node_value(&samples[lo..hi]),
            });
        }
        nodes[id].kind = NodeKind::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: left_id,
            right: right_id,
        };
        stack.push((right_id, start + mid, end));
        stack.push((left_id, start, start + mid));
    }
    Tree { nodes }
}

fn sample_indices(n: usize, bootstrap: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestMode {
    Classifier { n_classes: usize },
    Regressor { output_dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    mode: ForestMode,
    n_features: usize,
}

impl Forest {
    pub fn from_trees(trees: Vec<Tree>, mode: ForestMode, n_features: usize) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Empty("forest trees"));
        }
        Ok(Forest {
            trees,
            mode,
            n_features,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn mode(&self) -> ForestMode {
        self.mode
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::max_depth).max().unwrap_or(0)
    }

    fn check_arity(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(Error::Shape(format!(
                "forest expects {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        Ok(())
    }
}

fn train(
    x: ArrayView2<'_, f64>,
    targets: Targets<'_>,
    mode: ForestMode,
    params: &ForestParams,
    seed: u64,
) -> Result<Forest> {
    if x.nrows() == 0 {
        return Err(Error::Empty("training set"));
    }
    if params.n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be at least 1".into()));
    }
    let n = x.nrows();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, t as u64);
            let samples = sample_indices(n, params.bootstrap, &mut rng);
            grow_tree(x, targets, samples, params, &mut rng)
        })
        .collect();
    Ok(Forest {
        trees,
        mode,
        n_features: x.ncols(),
    })
}

pub fn train_forest_classifier(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<Forest> {
    if y.len() != x.nrows() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::InvalidArgument(format!(
            "class id {bad} >= {n_classes}"
        )));
    }
    train(
        x,
        Targets::Classes { y, n_classes },
        ForestMode::Classifier { n_classes },
        params,
        seed,
    )
}

/// Grows one classification tree on all rows (no bootstrap), examining every
/// feature at every node.
pub fn train_tree_classifier(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<Tree> {
    let params = ForestParams {
        n_trees: 1,
        max_features: MaxFeatures::All,
        bootstrap: false,
        ..Default::default()
    };
    let mut forest = train_forest_classifier(x, y, n_classes, &params, seed)?;
    Ok(forest.trees.remove(0))
}

/// Mean over trees of the leaf class frequencies.
pub fn forest_classifier_confidence(
    f: &Forest,
    x: ArrayView2<'_, f64>,
) -> Result<ConfidenceMatrix> {
    let ForestMode::Classifier { n_classes } = f.mode else {
        return Err(Error::WrongMode {
            expected: "classifier",
        });
    };
    f.check_arity(x)?;
    let mut scores = Array2::zeros((x.nrows(), n_classes));
    let n_trees = f.trees.len() as f64;
    for (j, row) in x.rows().into_iter().enumerate() {
        for tree in &f.trees {
            let NodeValue::Histogram(hist) = &tree.leaf_for(row).value else {
                unreachable!("classifier leaves hold histograms")
            };
            let total: f64 = hist.iter().sum();
            for (k, c) in hist.iter().enumerate() {
                scores[[j, k]] += c / total;
            }
        }
        scores.row_mut(j).mapv_inplace(|v| v / n_trees);
    }
    ConfidenceMatrix::new(scores)
}

pub fn train_forest_regressor(
    x: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    params: &ForestParams,
    seed: u64,
) -> Result<Forest> {
    if targets.nrows() != x.nrows() {
        return Err(Error::Shape(format!(
            "{} rows but {} target rows",
            x.nrows(),
            targets.nrows()
        )));
    }
    if targets.ncols() == 0 {
        return Err(Error::Empty("target dimension"));
    }
    train(
        x,
        Targets::Vectors(targets),
        ForestMode::Regressor {
            output_dim: targets.ncols(),
        },
        params,
        seed,
    )
}

/// Mean over trees of the leaf mean targets.
pub fn forest_regressor_predict(f: &Forest, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let ForestMode::Regressor { output_dim } = f.mode else {
        return Err(Error::WrongMode {
            expected: "regressor",
        });
    };
    f.check_arity(x)?;
    let mut out = Array2::zeros((x.nrows(), output_dim));
    let n_trees = f.trees.len() as f64;
    for (j, row) in x.rows().into_iter().enumerate() {
        let mut acc = out.row_mut(j);
        for tree in &f.trees {
            let NodeValue::Mean(mean) = &tree.leaf_for(row).value else {
                unreachable!("regressor leaves hold means")
            };
            for (a, m) in acc.iter_mut().zip(mean) {
                *a += m;
            }
        }
        acc.mapv_inplace(|v| v / n_trees);
    }
    Ok(out)
}

/// Labels each instance with the class whose label vector is nearest to the
/// regressor output.
pub fn regressor_as_classifier(
    f: &Forest,
    vs: &LabelVectorSet,
    x: ArrayView2<'_, f64>,
) -> Result<Vec<usize>> {
    if let ForestMode::Regressor { output_dim } = f.mode {
        if output_dim != vs.dim() {
            return Err(Error::Shape(format!(
                "regressor outputs {output_dim} dims, label vectors have {}",
                vs.dim()
            )));
        }
    }
    let out = forest_regressor_predict(f, x)?;
    Ok(out.rows().into_iter().map(|r| vs.nearest(r)).collect())
}
