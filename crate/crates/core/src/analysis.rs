//! Leaf-depth statistics of forests, per assigned class.

use log::warn;
use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::argmax;
use crate::embeddings::LabelVectorSet;
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestMode, NodeValue, Tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthReport {
    pub fold: Option<usize>,
    pub n_trees: usize,
    /// Mean over trees of the per-tree mean leaf depth of each class; `None`
    /// when no leaf in any tree is assigned that class.
    pub per_class_avg_depth: Vec<Option<f64>>,
    /// Sample variance of the present per-class averages (0 with fewer than
    /// two present classes).
    pub overall_variance: f64,
}

impl DepthReport {
    pub fn with_fold(mut self, fold: usize) -> Self {
        self.fold = Some(fold);
        self
    }

    pub fn present_averages(&self) -> Vec<f64> {
        self.per_class_avg_depth.iter().flatten().copied().collect()
    }
}

/// Sample variance with the `n - 1` denominator; 0 for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Leaves are the decision nodes. A classifier leaf is assigned the argmax of
/// its class histogram; a regressor leaf the class whose label vector is
/// nearest to its mean output, so `vs` is required for regressor forests.
pub fn node_depth_stats(forest: &Forest, vs: Option<&LabelVectorSet>) -> Result<DepthReport> {
    let n_classes = match (forest.mode(), vs) {
        (ForestMode::Classifier { n_classes }, _) => n_classes,
        (ForestMode::Regressor { output_dim }, Some(vs)) => {
            if output_dim != vs.dim() {
                return Err(Error::Shape(format!(
                    "regressor outputs {output_dim} dims, label vectors have {}",
                    vs.dim()
                )));
            }
            vs.n_classes()
        }
        (ForestMode::Regressor { .. }, None) => {
            return Err(Error::InvalidArgument(
                "label vectors are needed to assign classes to regressor leaves".into(),
            ))
        }
    };

    let per_tree: Vec<Vec<Option<f64>>> = forest
        .trees()
        .par_iter()
        .map(|t| tree_class_depths(t, n_classes, vs))
        .collect();

    let per_class_avg_depth: Vec<Option<f64>> = (0..n_classes)
        .map(|k| {
            let depths: Vec<f64> = per_tree.iter().filter_map(|t| t[k]).collect();
            (!depths.is_empty()).then(|| depths.iter().sum::<f64>() / depths.len() as f64)
        })
        .collect();
    let absent: Vec<usize> = (0..n_classes)
        .filter(|&k| per_class_avg_depth[k].is_none())
        .collect();
    if !absent.is_empty() {
        warn!("classes {absent:?} are never assigned by a leaf; excluded from the variance");
    }
    let present: Vec<f64> = per_class_avg_depth.iter().flatten().copied().collect();
    Ok(DepthReport {
        fold: None,
        n_trees: forest.n_trees(),
        overall_variance: sample_variance(&present),
        per_class_avg_depth,
    })
}

fn tree_class_depths(
    tree: &Tree,
    n_classes: usize,
    vs: Option<&LabelVectorSet>,
) -> Vec<Option<f64>> {
    let mut sum = vec![0.0; n_classes];
    let mut count = vec![0usize; n_classes];
    for leaf in tree.leaves() {
        let class = match &leaf.value {
            NodeValue::Histogram(h) => argmax(ArrayView1::from(h.as_slice())),
            NodeValue::Mean(m) => vs
                .expect("checked by caller")
                .nearest(ArrayView1::from(m.as_slice())),
        };
        sum[class] += leaf.depth as f64;
        count[class] += 1;
    }
    sum.iter()
        .zip(&count)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthComparison {
    pub n_folds: usize,
    /// Mean of the per-fold variances.
    pub traditional_mean_variance: f64,
    pub secret_mean_variance: f64,
    /// Sample variance over all (class, fold) averages.
    pub traditional_pooled_variance: f64,
    pub secret_pooled_variance: f64,
    pub folds_secret_larger: usize,
    pub folds_traditional_larger: usize,
    pub folds_equal: usize,
}

impl DepthComparison {
    pub fn secret_larger(&self) -> bool {
        self.secret_mean_variance > self.traditional_mean_variance
    }
}

pub fn compare_depth_variance(
    traditional: &[DepthReport],
    secret: &[DepthReport],
) -> Result<DepthComparison> {
    if traditional.is_empty() {
        return Err(Error::Empty("depth reports"));
    }
    if traditional.len() != secret.len()
        || traditional
            .iter()
            .zip(secret)
            .any(|(a, b)| a.fold != b.fold)
    {
        return Err(Error::InvalidArgument(
            "depth reports do not cover the same folds".into(),
        ));
    }
    let mean_var =
        |rs: &[DepthReport]| rs.iter().map(|r| r.overall_variance).sum::<f64>() / rs.len() as f64;
    let pooled = |rs: &[DepthReport]| {
        let all: Vec<f64> = rs.iter().flat_map(|r| r.present_averages()).collect();
        sample_variance(&all)
    };
    let mut cmp = DepthComparison {
        n_folds: traditional.len(),
        traditional_mean_variance: mean_var(traditional),
        secret_mean_variance: mean_var(secret),
        traditional_pooled_variance: pooled(traditional),
        secret_pooled_variance: pooled(secret),
        folds_secret_larger: 0,
        folds_traditional_larger: 0,
        folds_equal: 0,
    };
    for (t, s) in traditional.iter().zip(secret) {
        match s.overall_variance.partial_cmp(&t.overall_variance) {
            Some(std::cmp::Ordering::Greater) => cmp.folds_secret_larger += 1,
            Some(std::cmp::Ordering::Less) => cmp.folds_traditional_larger += 1,
            _ => cmp.folds_equal += 1,
        }
    }
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{train_forest_classifier, ForestParams, Node, NodeKind};
    use ndarray::array;

    fn leaf(depth: usize, hist: Vec<f64>) -> Node {
        Node {
            depth,
            n_samples: hist.iter().sum::<f64>() as usize,
            kind: NodeKind::Leaf,
            value: NodeValue::Histogram(hist),
        }
    }

    fn stump() -> Tree {
        Tree::from_nodes(vec![
            Node {
                depth: 0,
                n_samples: 2,
                kind: NodeKind::Split {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                value: NodeValue::Histogram(vec![1.0, 1.0]),
            },
            leaf(1, vec![1.0, 0.0]),
            leaf(1, vec![0.0, 1.0]),
        ])
        .unwrap()
    }

    #[test]
    fn variance_hand_case() {
        assert!((sample_variance(&[11.6, 12.4, 12.4]) - 0.2133).abs() < 1e-3);
        assert_eq!(sample_variance(&[3.0]), 0.0);
    }

    #[test]
    fn root_leaf_single_class() {
        let t = Tree::from_nodes(vec![leaf(0, vec![4.0])]).unwrap();
        let f = Forest::from_trees(vec![t], ForestMode::Classifier { n_classes: 1 }, 1).unwrap();
        let r = node_depth_stats(&f, None).unwrap();
        assert_eq!(r.per_class_avg_depth, vec![Some(0.0)]);
        assert_eq!(r.overall_variance, 0.0);
    }

    #[test]
    fn stump_has_zero_variance() {
        let f =
            Forest::from_trees(vec![stump()], ForestMode::Classifier { n_classes: 2 }, 1).unwrap();
        let r = node_depth_stats(&f, None).unwrap();
        assert_eq!(r.per_class_avg_depth, vec![Some(1.0), Some(1.0)]);
        assert_eq!(r.overall_variance, 0.0);
    }

    #[test]
    fn absent_class_reported() {
        let f =
            Forest::from_trees(vec![stump()], ForestMode::Classifier { n_classes: 3 }, 1).unwrap();
        let r = node_depth_stats(&f, None).unwrap();
        assert_eq!(r.per_class_avg_depth[2], None);
    }

    #[test]
    fn regressor_needs_vectors() {
        let t = Tree::from_nodes(vec![Node {
            depth: 0,
            n_samples: 1,
            kind: NodeKind::Leaf,
            value: NodeValue::Mean(vec![0.9]),
        }])
        .unwrap();
        let f = Forest::from_trees(vec![t], ForestMode::Regressor { output_dim: 1 }, 1).unwrap();
        assert!(node_depth_stats(&f, None).is_err());
        let vs = LabelVectorSet::new(array![[0.0], [1.0]], vec!["a".into(), "b".into()]).unwrap();
        let r = node_depth_stats(&f, Some(&vs)).unwrap();
        assert_eq!(r.per_class_avg_depth, vec![None, Some(0.0)]);
    }

    #[test]
    fn identical_trees_match_single_tree() {
        let x = array![
            [0.0, 1.0],
            [1.0, 0.0],
            [2.0, 2.0],
            [3.0, 1.0],
            [0.5, 0.2],
            [2.5, 0.1]
        ];
        let y = [0, 1, 2, 0, 1, 2];
        let params = ForestParams {
            bootstrap: false,
            max_features: crate::forest::MaxFeatures::All,
            ..ForestParams::with_trees(1)
        };
        let one = train_forest_classifier(x.view(), &y, 3, &params, 7).unwrap();
        let tree = one.trees()[0].clone();
        let many = Forest::from_trees(vec![tree; 5], one.mode(), 2).unwrap();
        let a = node_depth_stats(&one, None).unwrap();
        let b = node_depth_stats(&many, None).unwrap();
        assert_eq!(a.per_class_avg_depth, b.per_class_avg_depth);
        let deepest = one.max_depth() as f64;
        assert!(b
            .present_averages()
            .iter()
            .all(|&d| d >= 0.0 && d <= deepest));
    }

    fn report(fold: usize, avgs: &[f64]) -> DepthReport {
        DepthReport {
            fold: Some(fold),
            n_trees: 1,
            per_class_avg_depth: avgs.iter().copied().map(Some).collect(),
            overall_variance: sample_variance(avgs),
        }
    }

    #[test]
    fn comparison_flags_larger_secret_variance() {
        let t = vec![report(0, &[1.0, 1.5])];
        let s = vec![report(0, &[1.0, 2.0])];
        let c = compare_depth_variance(&t, &s).unwrap();
        assert!(c.secret_larger());
        assert_eq!(c.folds_secret_larger, 1);
        let same = compare_depth_variance(&t, &t).unwrap();
        assert_eq!(
            same.secret_mean_variance - same.traditional_mean_variance,
            0.0
        );
        assert!(compare_depth_variance(&t, &[report(1, &[1.0])]).is_err());
    }
}
