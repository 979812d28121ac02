//! Exhaustive-split regression trees shared by every tree-based learner.
//!
//! Splits maximize the weighted squared-error reduction of the node targets.
//! For 0/1 targets this is proportional to the Gini decrease, so the same
//! builder serves the gradient trees, the AdaBoost stumps and the forest.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_fit_inputs, Classifier, Matrix};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Training-loss reduction achieved by this split.
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_features: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Features examined per split; `None` means all of them.
    pub max_features: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Reduction in weighted squared error from splitting `(sum, weight)` into
/// left and right parts.
#[inline]
pub(crate) fn split_gain(sl: f64, wl: f64, sr: f64, wr: f64, s: f64, w: f64) -> f64 {
    sl * sl / wl + sr * sr / wr - s * s / w
}

/// Best split over `features` for the rows in `rows` (duplicates allowed).
///
/// Candidate thresholds are midpoints between consecutive distinct values;
/// a row goes left iff `x <= threshold`. Ties in gain keep the lower feature
/// index, then the lower threshold. Returns `None` when every candidate
/// feature is constant on `rows`.
pub fn best_split(
    x: &Matrix,
    targets: &[f64],
    weights: Option<&[f64]>,
    rows: &[usize],
    features: &[usize],
) -> Option<SplitCandidate> {
    if rows.len() < 2 {
        return None;
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total_s: f64 = rows.iter().map(|&i| w(i) * targets[i]).sum();
    let total_w: f64 = rows.iter().map(|&i| w(i)).sum();
    let mut best: Option<SplitCandidate> = None;
    let mut sorted = rows.to_vec();
    for &f in features {
        sorted.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)));
        let mut sl = 0.0;
        let mut wl = 0.0;
        for k in 0..sorted.len() - 1 {
            let i = sorted[k];
            sl += w(i) * targets[i];
            wl += w(i);
            let lo = x.get(i, f);
            let hi = x.get(sorted[k + 1], f);
            if lo == hi {
                continue;
            }
            let sr = total_s - sl;
            let wr = total_w - wl;
            if wl <= 0.0 || wr <= 0.0 {
                continue;
            }
            let gain = split_gain(sl, wl, sr, wr, total_s, total_w);
            if best.is_none_or(|b| gain > b.gain) {
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                best = Some(SplitCandidate {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

struct Builder<'a> {
    x: &'a Matrix,
    targets: &'a [f64],
    weights: Option<&'a [f64]>,
    params: TreeParams,
    rng: Option<&'a mut ChaCha8Rng>,
    leaf_value: &'a dyn Fn(&[usize]) -> f64,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.x.n_cols();
        match (self.params.max_features, self.rng.as_deref_mut()) {
            (Some(m), Some(rng)) if m < d => {
                let mut picked = index::sample(rng, d, m.max(1)).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..d).collect(),
        }
    }

    fn build(&mut self, rows: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let first = self.targets[rows[0]];
        let pure = rows.iter().all(|&i| self.targets[i] == first);
        let split = if depth >= self.params.max_depth || rows.len() < 2 || pure {
            None
        } else {
            let features = self.candidate_features();
            best_split(self.x, self.targets, self.weights, rows, &features)
        };
        match split {
            None => {
                self.nodes[id] = Node::Leaf {
                    value: (self.leaf_value)(rows),
                };
            }
            Some(c) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| self.x.get(i, c.feature) <= c.threshold);
                let left = self.build(&l, depth + 1);
                let right = self.build(&r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                    gain: c.gain.max(0.0),
                };
            }
        }
        id
    }
}

/// Grows a tree on `rows` (non-empty) fitting `targets`. Leaf values come from
/// `leaf_value`, called with the rows that reach the leaf. `rng` is only used
/// when `params.max_features` restricts the candidate set.
pub fn fit_tree(
    x: &Matrix,
    targets: &[f64],
    weights: Option<&[f64]>,
    rows: &[usize],
    params: TreeParams,
    rng: Option<&mut ChaCha8Rng>,
    leaf_value: &dyn Fn(&[usize]) -> f64,
) -> DecisionTree {
    assert!(!rows.is_empty(), "cannot grow a tree on zero rows");
    let mut b = Builder {
        x,
        targets,
        weights,
        params,
        rng,
        leaf_value,
        nodes: Vec::new(),
    };
    b.build(rows, 0);
    DecisionTree {
        nodes: b.nodes,
        n_features: x.n_cols(),
    }
}

/// Weighted mean of `targets` over `rows`.
pub(crate) fn weighted_mean(targets: &[f64], weights: Option<&[f64]>, rows: &[usize]) -> f64 {
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let sw: f64 = rows.iter().map(|&i| w(i)).sum();
    if sw <= 0.0 {
        return 0.0;
    }
    rows.iter().map(|&i| w(i) * targets[i]).sum::<f64>() / sw
}

/// Classification tree on 0/1 labels; leaves hold the class-1 fraction.
pub fn fit_decision_tree(x: &Matrix, y: &[u8], params: TreeParams) -> Result<DecisionTree> {
    check_fit_inputs(x, y)?;
    let targets: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let rows: Vec<usize> = (0..y.len()).collect();
    Ok(fit_tree(x, &targets, None, &rows, params, None, &|r| {
        weighted_mean(&targets, None, r)
    }))
}

impl DecisionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Value of the leaf that `row` falls into.
    pub fn leaf_value(&self, row: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => id = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// `(feature, gain)` for every split node.
    pub fn split_gains(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, gain, .. } => Some((*feature, *gain)),
            Node::Leaf { .. } => None,
        })
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match &self.nodes[0] {
            Node::Split {
                feature, threshold, ..
            } => Some((*feature, *threshold)),
            Node::Leaf { .. } => None,
        }
    }
}

impl Classifier for DecisionTree {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score(&self, row: &[f64]) -> f64 {
        self.leaf_value(row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_threshold_split() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        let t = [0.0, 0.0, 1.0, 1.0];
        let s = best_split(&x, &t, None, &[0, 1, 2, 3], &[0]).unwrap();
        assert_eq!(s.threshold, 2.5);
        assert!((s.gain - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_features_give_no_split() {
        let x = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert!(best_split(&x, &[0.0, 1.0], None, &[0, 1], &[0]).is_none());
    }

    #[test]
    fn ties_prefer_lower_feature() {
        // Two identical columns.
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let s = best_split(&x, &[0.0, 1.0], None, &[0, 1], &[0, 1]).unwrap();
        assert_eq!(s.feature, 0);
    }

    #[test]
    fn depth_is_bounded() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64, (i * 7 % 13) as f64]).collect();
        let y: Vec<u8> = (0..64).map(|i| ((i * 5) % 3 == 0) as u8).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let tree = fit_decision_tree(&x, &y, TreeParams { max_depth: 3, max_features: None }).unwrap();
        assert!(tree.depth() <= 3);
    }

    proptest! {
        #[test]
        fn thresholds_and_leaves_are_finite(vals in prop::collection::vec((-1e3f64..1e3, 0u8..2), 4..40)) {
            let x = Matrix::from_rows(&vals.iter().map(|(v, _)| vec![*v]).collect::<Vec<_>>()).unwrap();
            let y: Vec<u8> = vals.iter().map(|(_, l)| *l).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            let tree = fit_decision_tree(&x, &y, TreeParams { max_depth: 4, max_features: None }).unwrap();
            for n in tree.nodes() {
                match n {
                    Node::Split { threshold, gain, .. } => {
                        prop_assert!(threshold.is_finite());
                        prop_assert!(*gain >= 0.0);
                    }
                    Node::Leaf { value } => prop_assert!(value.is_finite()),
                }
            }
        }
    }
}
