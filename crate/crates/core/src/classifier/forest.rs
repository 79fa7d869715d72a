//! Random forest: bootstrap-resampled trees with per-node feature subsets.
//!
//! Training is seed-deterministic: each tree derives its own stream from the
//! forest seed, so trees can be fitted in parallel without changing results.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tree::{
    argmax_class, fit_tree_with_policy, predict_tree, FeaturePolicy, FeatureRow, TreeNode,
    TreeParams,
};
use crate::signal::DistanceClass;

/// How many features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSubset {
    All,
    /// Integer square root of the scope size, at least 1.
    Sqrt,
    Count(usize),
}

impl FeatureSubset {
    pub fn resolve(self, scope_len: usize) -> usize {
        match self {
            FeatureSubset::All => scope_len,
            FeatureSubset::Sqrt => (scope_len as f64).sqrt().floor().max(1.0) as usize,
            FeatureSubset::Count(k) => k.clamp(1, scope_len),
        }
    }

    pub fn name(self) -> String {
        match self {
            FeatureSubset::All => "all".into(),
            FeatureSubset::Sqrt => "sqrt".into(),
            FeatureSubset::Count(k) => k.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub features_per_split: FeatureSubset,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 50,
            tree: TreeParams::default(),
            features_per_split: FeatureSubset::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub params: ForestParams,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn tree_seed(forest_seed: u64, tree_index: usize) -> u64 {
    splitmix64(forest_seed ^ splitmix64(tree_index as u64 + 1))
}

/// Fit `n_trees` bootstrap trees over the scoped features.
pub fn fit_random_forest(
    x: &[FeatureRow],
    y: &[DistanceClass],
    scope: &[usize],
    params: &ForestParams,
) -> ForestModel {
    assert_eq!(x.len(), y.len(), "feature/label length mismatch");
    assert!(!x.is_empty(), "cannot fit a forest on an empty training set");
    assert!(params.n_trees >= 1, "forest needs at least one tree");

    let k = params.features_per_split.resolve(scope.len());
    let trees: Vec<TreeNode> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(params.seed, t));
            let mut idx: Vec<usize> = if params.bootstrap {
                (0..x.len()).map(|_| rng.random_range(0..x.len())).collect()
            } else {
                (0..x.len()).collect()
            };
            let mut policy = if k == scope.len() {
                FeaturePolicy::All
            } else {
                FeaturePolicy::Sampled { k, rng: &mut rng }
            };
            fit_tree_with_policy(x, y, &mut idx, scope, &params.tree, &mut policy)
        })
        .collect();

    ForestModel {
        trees,
        params: *params,
    }
}

/// Majority vote over the trees; ties resolve toward the closer class.
pub fn predict_forest(model: &ForestModel, row: &FeatureRow) -> DistanceClass {
    let mut votes = [0u64; 3];
    for tree in &model.trees {
        votes[predict_tree(tree, row).index()] += 1;
    }
    argmax_class(&votes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::tree::fit_decision_tree;

    fn noisy_rows(seed: u64, n: usize) -> (Vec<FeatureRow>, Vec<DistanceClass>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let d = rng.random_range(1..=6) as f64; // meters
            let label = if d < 1.5 {
                DistanceClass::VeryClose
            } else if d <= 3.0 {
                DistanceClass::Close
            } else {
                DistanceClass::Safe
            };
            let noise: f64 = rng.random_range(-60..60) as f64 / 10.0;
            let rssi = -40.0 - 20.0 * d.log10() * 2.0 + noise;
            x.push([rssi, rssi + 1.0, 2437.0, rssi - 4.0, 5180.0]);
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn degenerate_forest_equals_tree() {
        let (x, y) = noisy_rows(3, 300);
        let scope = [0usize, 1, 2, 3, 4];
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            features_per_split: FeatureSubset::All,
            ..ForestParams::default()
        };
        let forest = fit_random_forest(&x, &y, &scope, &params);
        let tree = fit_decision_tree(&x, &y, &scope, &params.tree);
        assert_eq!(forest.trees[0], tree);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let row = [
                rng.random_range(-100..0) as f64,
                rng.random_range(-100..0) as f64,
                2437.0,
                rng.random_range(-100..0) as f64,
                5180.0,
            ];
            assert_eq!(predict_forest(&forest, &row), predict_tree(&tree, &row));
        }
    }

    #[test]
    fn fixed_seed_reproduces() {
        let (x, y) = noisy_rows(5, 200);
        let scope = [0usize, 3];
        let params = ForestParams {
            n_trees: 7,
            seed: 99,
            ..ForestParams::default()
        };
        let a = fit_random_forest(&x, &y, &scope, &params);
        let b = fit_random_forest(&x, &y, &scope, &params);
        assert_eq!(a, b);
    }

    #[test]
    fn vote_is_brute_force_tally() {
        let (x, y) = noisy_rows(8, 150);
        let scope = [0usize, 1, 3];
        let params = ForestParams {
            n_trees: 9,
            seed: 4,
            ..ForestParams::default()
        };
        let forest = fit_random_forest(&x, &y, &scope, &params);
        for row in x.iter().take(50) {
            let mut votes = [0u64; 3];
            for tree in &forest.trees {
                votes[predict_tree(tree, row).index()] += 1;
            }
            assert_eq!(predict_forest(&forest, row), argmax_class(&votes));
        }
    }

    /// Statistical check: over ten seeds, forests do not lose to single
    /// trees on held-out noisy data.
    #[test]
    fn forest_holds_up_against_single_tree() {
        let scope = [0usize, 1, 2, 3, 4];
        let mut forest_total = 0.0;
        let mut tree_total = 0.0;
        for seed in 0..10u64 {
            let (x_train, y_train) = noisy_rows(100 + seed, 400);
            let (x_test, y_test) = noisy_rows(200 + seed, 200);
            let params = ForestParams {
                n_trees: 25,
                seed,
                tree: TreeParams {
                    max_depth: Some(8),
                    ..TreeParams::default()
                },
                ..ForestParams::default()
            };
            let forest = fit_random_forest(&x_train, &y_train, &scope, &params);
            let tree = fit_decision_tree(&x_train, &y_train, &scope, &params.tree);

            let acc = |predict: &dyn Fn(&FeatureRow) -> DistanceClass| {
                let hits = x_test
                    .iter()
                    .zip(&y_test)
                    .filter(|(row, label)| predict(row) == **label)
                    .count();
                hits as f64 / x_test.len() as f64
            };
            forest_total += acc(&|row| predict_forest(&forest, row));
            tree_total += acc(&|row| predict_tree(&tree, row));
        }
        assert!(
            forest_total >= tree_total - 0.05,
            "forest mean accuracy {forest_total:.3} fell behind tree {tree_total:.3}"
        );
    }
}
