//! CART decision tree over the five-feature rows.
//!
//! Split selection maximizes the gini impurity decrease. Candidate scores
//! are compared exactly in integer arithmetic (cross-multiplied fractions of
//! squared class counts), so tie handling and the choice of split never
//! depend on float rounding: ties go to the lowest feature index, then the
//! lowest threshold. The left branch takes rows with feature <= threshold.

use crate::error::{Error, Result};
use crate::signal::DistanceClass;

/// One sample row: the five pipeline features in fixed order.
pub type FeatureRow = [f64; 5];

/// Feature indices of a [`FeatureRow`], by name.
pub const FEATURE_NAMES: [&str; 5] = [
    "ble_rssi",
    "wifi24_rssi",
    "wifi24_freq",
    "wifi5_rssi",
    "wifi5_freq",
];

/// Gini impurity of a class-count vector, in [0, 2/3] for three classes.
pub fn gini(class_counts: &[u64; 3]) -> Result<f64> {
    let total: u64 = class_counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidInput("gini of empty counts".into()));
    }
    let t = total as f64;
    let sq: f64 = class_counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum();
    Ok(1.0 - sq)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Tree hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    /// None means unlimited depth.
    pub max_depth: Option<u32>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
        }
    }
}

/// A fitted tree node. Leaves keep the training class counts so votes and
/// thresholds can be read off the structure.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        class_counts: [u64; 3],
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    /// The root split, when the tree is not a single leaf. Single-value
    /// thresholds for a signal type can be read from here.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature, threshold, ..
            } => Some((*feature, *threshold)),
        }
    }

    pub fn depth(&self) -> u32 {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }
}

/// Exact fractional score of a split: larger means lower weighted child
/// impurity. num/den with den = n_left * n_right.
#[derive(Debug, Clone, Copy)]
struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    fn better_than(&self, other: &SplitScore) -> bool {
        self.num * other.den > other.num * self.den
    }

    /// Positive gain test against the parent: num/den > parent_sq/n.
    fn improves(&self, parent_sq: u64, n: u64) -> bool {
        self.num * n as u128 > parent_sq as u128 * self.den
    }
}

fn sum_sq(counts: &[u64; 3]) -> u64 {
    counts.iter().map(|&c| c * c).sum()
}

fn tally(y: &[DistanceClass], idx: &[usize]) -> [u64; 3] {
    let mut counts = [0u64; 3];
    for &i in idx {
        counts[y[i].index()] += 1;
    }
    counts
}

/// Best split over the given candidate features, or `None` when no split
/// improves on the parent impurity under the leaf-size floor.
pub fn best_split(
    x: &[FeatureRow],
    y: &[DistanceClass],
    features: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitCandidate> {
    let idx: Vec<usize> = (0..x.len()).collect();
    best_split_on(x, y, &idx, features, min_samples_leaf)
}

fn best_split_on(
    x: &[FeatureRow],
    y: &[DistanceClass],
    idx: &[usize],
    features: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitCandidate> {
    let n = idx.len();
    if n < 2 {
        return None;
    }
    let parent = tally(y, idx);
    let parent_sq = sum_sq(&parent);
    let min_leaf = min_samples_leaf.max(1);

    // Ascending feature order implements the lowest-feature tie rule.
    let mut feats: Vec<usize> = features.to_vec();
    feats.sort_unstable();
    feats.dedup();

    let mut best: Option<(usize, f64, SplitScore)> = None;
    let mut sorted: Vec<usize> = Vec::with_capacity(n);

    for &f in &feats {
        sorted.clear();
        sorted.extend_from_slice(idx);
        sorted.sort_by(|&a, &b| {
            x[a][f]
                .partial_cmp(&x[b][f])
                .expect("feature values must not be NaN")
                .then(a.cmp(&b))
        });

        let mut left = [0u64; 3];
        for pos in 1..n {
            left[y[sorted[pos - 1]].index()] += 1;
            let (va, vb) = (x[sorted[pos - 1]][f], x[sorted[pos]][f]);
            if va == vb {
                continue;
            }
            let n_left = pos as u64;
            let n_right = (n - pos) as u64;
            if (pos) < min_leaf || (n - pos) < min_leaf {
                continue;
            }
            let right = [
                parent[0] - left[0],
                parent[1] - left[1],
                parent[2] - left[2],
            ];
            let score = SplitScore {
                num: sum_sq(&left) as u128 * n_right as u128
                    + sum_sq(&right) as u128 * n_left as u128,
                den: n_left as u128 * n_right as u128,
            };
            // Keep-first-on-tie: ascending scan order encodes the
            // lowest-threshold rule, feature loop the lowest-feature rule.
            let replace = match &best {
                None => true,
                Some((_, _, cur)) => score.better_than(cur),
            };
            if replace {
                best = Some((f, midpoint(va, vb), score));
            }
        }
    }

    let (feature, threshold, score) = best?;
    if !score.improves(parent_sq, n as u64) {
        return None;
    }

    // Float gain is reported for the winner only; selection was exact.
    let (mut left, mut n_left) = ([0u64; 3], 0u64);
    for &i in idx {
        if x[i][feature] <= threshold {
            left[y[i].index()] += 1;
            n_left += 1;
        }
    }
    let right = [
        parent[0] - left[0],
        parent[1] - left[1],
        parent[2] - left[2],
    ];
    let n_right = n as u64 - n_left;
    let gain = gini(&parent).expect("non-empty parent")
        - (n_left as f64 * gini(&left).expect("non-empty left")
            + n_right as f64 * gini(&right).expect("non-empty right"))
            / n as f64;
    Some(SplitCandidate {
        feature,
        threshold,
        gain,
    })
}

/// Midpoint of two adjacent distinct values, falling back to the lower value
/// when rounding would land on the upper one (keeps `<=` partitions exact).
fn midpoint(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) / 2.0;
    if mid >= b {
        a
    } else {
        mid
    }
}

/// Per-node feature sampler used by forests; `None` considers every
/// scope feature at every node.
pub(crate) enum FeaturePolicy<'a> {
    All,
    Sampled {
        k: usize,
        rng: &'a mut rand_chacha::ChaCha8Rng,
    },
}

/// Fit a tree on the scoped features with greedy recursive partitioning.
pub fn fit_decision_tree(
    x: &[FeatureRow],
    y: &[DistanceClass],
    scope: &[usize],
    params: &TreeParams,
) -> TreeNode {
    assert_eq!(x.len(), y.len(), "feature/label length mismatch");
    assert!(!x.is_empty(), "cannot fit a tree on an empty training set");
    let mut idx: Vec<usize> = (0..x.len()).collect();
    fit_node(x, y, &mut idx, 0, scope, params, &mut FeaturePolicy::All)
}

pub(crate) fn fit_tree_with_policy(
    x: &[FeatureRow],
    y: &[DistanceClass],
    idx: &mut Vec<usize>,
    scope: &[usize],
    params: &TreeParams,
    policy: &mut FeaturePolicy<'_>,
) -> TreeNode {
    fit_node(x, y, idx, 0, scope, params, policy)
}

fn fit_node(
    x: &[FeatureRow],
    y: &[DistanceClass],
    idx: &mut Vec<usize>,
    depth: u32,
    scope: &[usize],
    params: &TreeParams,
    policy: &mut FeaturePolicy<'_>,
) -> TreeNode {
    let counts = tally(y, idx);
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    let depth_reached = params.max_depth.is_some_and(|d| depth >= d);
    if pure || depth_reached || idx.len() < params.min_samples_split {
        return TreeNode::Leaf {
            class_counts: counts,
        };
    }

    let candidate_features: Vec<usize> = match policy {
        FeaturePolicy::All => scope.to_vec(),
        FeaturePolicy::Sampled { k, rng } => sample_features(scope, *k, rng),
    };

    let Some(split) = best_split_on(x, y, idx, &candidate_features, params.min_samples_leaf)
    else {
        return TreeNode::Leaf {
            class_counts: counts,
        };
    };

    let mut left_idx = Vec::with_capacity(idx.len());
    let mut right_idx = Vec::with_capacity(idx.len());
    for &i in idx.iter() {
        if x[i][split.feature] <= split.threshold {
            left_idx.push(i);
        } else {
            right_idx.push(i);
        }
    }
    debug_assert!(!left_idx.is_empty() && !right_idx.is_empty());

    let left = fit_node(x, y, &mut left_idx, depth + 1, scope, params, policy);
    let right = fit_node(x, y, &mut right_idx, depth + 1, scope, params, policy);
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

fn sample_features(scope: &[usize], k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    let k = k.clamp(1, scope.len());
    if k == scope.len() {
        return scope.to_vec();
    }
    // Partial Fisher-Yates, then sorted so tie rules stay index-ordered.
    let mut pool: Vec<usize> = scope.to_vec();
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    pool
}

/// Predict the class of one row: argmax of the reached leaf's counts,
/// ties resolved toward the closer class.
pub fn predict_tree(node: &TreeNode, row: &FeatureRow) -> DistanceClass {
    let mut cur = node;
    loop {
        match cur {
            TreeNode::Leaf { class_counts } => return argmax_class(class_counts),
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                cur = if row[*feature] <= *threshold {
                    left
                } else {
                    right
                };
            }
        }
    }
}

/// First strictly-greatest count wins, so ties resolve to the closer class.
pub(crate) fn argmax_class(counts: &[u64; 3]) -> DistanceClass {
    let mut best = 0usize;
    for i in 1..3 {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    DistanceClass::from_index(best).unwrap()
}
