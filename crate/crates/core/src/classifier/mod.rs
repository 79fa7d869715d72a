//! The 13-model roster: threshold baseline, single-signal trees and forests,
//! specialized-vote combiners, and full-feature models.

pub mod forest;
pub mod persist;
pub mod tree;

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::MatchedSample;
use crate::signal::{
    attenuation, classify_attenuation, AttenuationThresholds, DistanceClass,
};
pub use forest::{fit_random_forest, predict_forest, FeatureSubset, ForestModel, ForestParams};
pub use tree::{
    best_split, fit_decision_tree, gini, predict_tree, FeatureRow, SplitCandidate, TreeNode,
    TreeParams, FEATURE_NAMES,
};

/// Which features a model sees.
///
/// BLE models use the RSSI alone (the receiver cannot observe the advertising
/// channel); the 802.11 models add the exact frequency of their band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalScope {
    Ble,
    Wifi24,
    Wifi5,
    Full,
}

impl SignalScope {
    pub fn features(self) -> &'static [usize] {
        match self {
            SignalScope::Ble => &[0],
            SignalScope::Wifi24 => &[1, 2],
            SignalScope::Wifi5 => &[3, 4],
            SignalScope::Full => &[0, 1, 2, 3, 4],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SignalScope::Ble => "ble",
            SignalScope::Wifi24 => "wifi24",
            SignalScope::Wifi5 => "wifi5",
            SignalScope::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ble" => Ok(SignalScope::Ble),
            "wifi24" => Ok(SignalScope::Wifi24),
            "wifi5" => Ok(SignalScope::Wifi5),
            "full" => Ok(SignalScope::Full),
            other => Err(Error::InvalidInput(format!("unknown scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    Threshold,
    Tree,
    Forest,
    Vote,
}

/// Vote weights giving both bands equal total weight: the two 2.4 GHz
/// signals at a quarter each, the single 5 GHz signal at a half.
pub const BAND_BALANCED_WEIGHTS: [f64; 3] = [0.25, 0.25, 0.5];
/// Equal vote weights.
pub const UNWEIGHTED: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

/// One roster entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub roster_no: u8,
    pub name: &'static str,
    pub family: ModelFamily,
    pub scope: SignalScope,
    /// Vote weights (BLE, 2.4 GHz, 5 GHz) for the combiner entries.
    pub weights: Option<[f64; 3]>,
    /// Member roster numbers for the combiner entries.
    pub members: Option<[u8; 3]>,
}

/// The full model roster, in roster order.
pub fn roster() -> [ModelSpec; 13] {
    use ModelFamily::*;
    use SignalScope::*;
    let spec = |roster_no, name, family, scope| ModelSpec {
        roster_no,
        name,
        family,
        scope,
        weights: None,
        members: None,
    };
    let vote = |roster_no, name, weights, members| ModelSpec {
        roster_no,
        name,
        family: Vote,
        scope: Full,
        weights: Some(weights),
        members: Some(members),
    };
    [
        spec(1, "ble_threshold", Threshold, Ble),
        spec(2, "ble_dt", Tree, Ble),
        spec(3, "ble_rf", Forest, Ble),
        spec(4, "wifi24_dt", Tree, Wifi24),
        spec(5, "wifi24_rf", Forest, Wifi24),
        spec(6, "wifi5_dt", Tree, Wifi5),
        spec(7, "wifi5_rf", Forest, Wifi5),
        vote(8, "combined_special_dt_unweighted", UNWEIGHTED, [2, 4, 6]),
        vote(9, "combined_special_dt_weighted", BAND_BALANCED_WEIGHTS, [2, 4, 6]),
        vote(10, "combined_special_rf_unweighted", UNWEIGHTED, [3, 5, 7]),
        vote(11, "combined_special_rf_weighted", BAND_BALANCED_WEIGHTS, [3, 5, 7]),
        spec(12, "combined_general_dt", Tree, Full),
        spec(13, "combined_general_rf", Forest, Full),
    ]
}

/// Feature row of a matched sample, in the fixed feature order.
pub fn features_of(s: &MatchedSample) -> FeatureRow {
    [
        s.ble_rssi as f64,
        s.wifi24_rssi as f64,
        s.wifi24_freq as f64,
        s.wifi5_rssi as f64,
        s.wifi5_freq as f64,
    ]
}

/// Combine three specialized predictions (BLE, 2.4 GHz, 5 GHz) under vote
/// weights. Each prediction contributes its weight to its class; the
/// highest-scoring class wins, ties resolving toward the closer class.
pub fn combine_specialized(preds: [DistanceClass; 3], weights: [f64; 3]) -> DistanceClass {
    debug_assert!(
        (weights.iter().sum::<f64>() - 1.0).abs() < 1e-9 && weights.iter().all(|&w| w >= 0.0),
        "weights must be non-negative and sum to 1"
    );
    let mut score = [0.0f64; 3];
    for (pred, w) in preds.iter().zip(weights) {
        score[pred.index()] += w;
    }
    let mut best = 0usize;
    for i in 1..3 {
        if score[i] > score[best] {
            best = i;
        }
    }
    DistanceClass::from_index(best).unwrap()
}

/// The GAEN-style baseline: corrected BLE attenuation against thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdModel {
    pub thresholds: AttenuationThresholds,
    pub correction_db: f64,
    pub tx_power_dbm: f64,
}

impl ThresholdModel {
    pub fn predict(&self, row: &FeatureRow) -> DistanceClass {
        let att = attenuation(self.tx_power_dbm, row[0], self.correction_db);
        classify_attenuation(att, &self.thresholds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModelFit {
    pub scope: SignalScope,
    pub params: TreeParams,
    pub root: TreeNode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModelFit {
    pub scope: SignalScope,
    pub model: ForestModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteModel {
    pub weights: [f64; 3],
    pub members: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Threshold(ThresholdModel),
    Tree(TreeModelFit),
    Forest(ForestModelFit),
    Vote(VoteModel),
}

impl TrainedModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            TrainedModel::Threshold(_) => ModelFamily::Threshold,
            TrainedModel::Tree(_) => ModelFamily::Tree,
            TrainedModel::Forest(_) => ModelFamily::Forest,
            TrainedModel::Vote(_) => ModelFamily::Vote,
        }
    }
}

/// The trained roster for one sending device.
#[derive(Debug, Clone, Default)]
pub struct TrainedRoster {
    pub device: String,
    pub models: BTreeMap<u8, TrainedModel>,
}

impl TrainedRoster {
    /// Predict with model `no`; vote models resolve their members here.
    pub fn predict(&self, no: u8, row: &FeatureRow) -> Result<DistanceClass> {
        let model = self
            .models
            .get(&no)
            .ok_or_else(|| Error::InvalidInput(format!("model {no} not trained")))?;
        Ok(match model {
            TrainedModel::Threshold(m) => m.predict(row),
            TrainedModel::Tree(m) => predict_tree(&m.root, row),
            TrainedModel::Forest(m) => predict_forest(&m.model, row),
            TrainedModel::Vote(m) => {
                let mut preds = [DistanceClass::Safe; 3];
                for (slot, &member) in preds.iter_mut().zip(&m.members) {
                    *slot = self.predict(member, row)?;
                }
                combine_specialized(preds, m.weights)
            }
        })
    }
}

/// Fraction of rows predicted correctly.
pub fn accuracy<F>(predict: F, x: &[FeatureRow], y: &[DistanceClass]) -> f64
where
    F: Fn(&FeatureRow) -> DistanceClass,
{
    if x.is_empty() {
        return 0.0;
    }
    let hits = x
        .iter()
        .zip(y)
        .filter(|(row, label)| predict(row) == **label)
        .count();
    hits as f64 / x.len() as f64
}

/// Hyperparameter grid. Defaults cover the usual depth/leaf/tree ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub max_depths: Vec<Option<u32>>,
    pub min_samples_leaf: Vec<usize>,
    pub n_trees: Vec<usize>,
    pub features_per_split: Vec<FeatureSubset>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            max_depths: vec![Some(3), Some(5), Some(8), Some(12), None],
            min_samples_leaf: vec![1, 5, 20],
            n_trees: vec![10, 50, 100],
            features_per_split: vec![FeatureSubset::All, FeatureSubset::Sqrt],
        }
    }
}

/// Outcome of a grid search: the winner plus the full score table.
#[derive(Debug, Clone)]
pub struct GridResult<P> {
    pub best: P,
    pub table: Vec<(P, f64)>,
}

fn depth_rank(d: Option<u32>) -> u64 {
    d.map_or(u64::MAX, u64::from)
}

/// Exhaustive tree search scored by test accuracy. Ties prefer the smaller
/// model: lower max depth, then larger leaf floor.
pub fn grid_search_tree(
    x_train: &[FeatureRow],
    y_train: &[DistanceClass],
    x_test: &[FeatureRow],
    y_test: &[DistanceClass],
    scope: SignalScope,
    grid: &GridSpec,
) -> Result<GridResult<TreeParams>> {
    if grid.max_depths.is_empty() || grid.min_samples_leaf.is_empty() {
        return Err(Error::InvalidInput("empty hyperparameter grid".into()));
    }
    let mut points = Vec::new();
    for &max_depth in &grid.max_depths {
        for &min_leaf in &grid.min_samples_leaf {
            points.push(TreeParams {
                max_depth,
                min_samples_split: 2,
                min_samples_leaf: min_leaf,
            });
        }
    }
    let table: Vec<(TreeParams, f64)> = points
        .into_par_iter()
        .map(|params| {
            let tree = fit_decision_tree(x_train, y_train, scope.features(), &params);
            let acc = accuracy(|row| predict_tree(&tree, row), x_test, y_test);
            (params, acc)
        })
        .collect();
    let best = table
        .iter()
        .min_by(|(pa, aa), (pb, ab)| {
            ab.partial_cmp(aa)
                .unwrap()
                .then(depth_rank(pa.max_depth).cmp(&depth_rank(pb.max_depth)))
                .then(pb.min_samples_leaf.cmp(&pa.min_samples_leaf))
        })
        .expect("non-empty table")
        .0;
    Ok(GridResult { best, table })
}

/// Exhaustive forest search scored by test accuracy. Ties prefer the smaller
/// model: lower max depth, then fewer trees, then larger leaf floor.
pub fn grid_search_forest(
    x_train: &[FeatureRow],
    y_train: &[DistanceClass],
    x_test: &[FeatureRow],
    y_test: &[DistanceClass],
    scope: SignalScope,
    grid: &GridSpec,
    seed: u64,
) -> Result<GridResult<ForestParams>> {
    if grid.max_depths.is_empty()
        || grid.min_samples_leaf.is_empty()
        || grid.n_trees.is_empty()
        || grid.features_per_split.is_empty()
    {
        return Err(Error::InvalidInput("empty hyperparameter grid".into()));
    }
    let mut points = Vec::new();
    for &max_depth in &grid.max_depths {
        for &min_leaf in &grid.min_samples_leaf {
            for &n_trees in &grid.n_trees {
                for &feats in &grid.features_per_split {
                    points.push(ForestParams {
                        n_trees,
                        tree: TreeParams {
                            max_depth,
                            min_samples_split: 2,
                            min_samples_leaf: min_leaf,
                        },
                        features_per_split: feats,
                        bootstrap: true,
                        seed,
                    });
                }
            }
        }
    }
    let table: Vec<(ForestParams, f64)> = points
        .into_par_iter()
        .map(|params| {
            let forest = fit_random_forest(x_train, y_train, scope.features(), &params);
            let acc = accuracy(|row| predict_forest(&forest, row), x_test, y_test);
            (params, acc)
        })
        .collect();
    let best = table
        .iter()
        .min_by(|(pa, aa), (pb, ab)| {
            ab.partial_cmp(aa)
                .unwrap()
                .then(depth_rank(pa.tree.max_depth).cmp(&depth_rank(pb.tree.max_depth)))
                .then(pa.n_trees.cmp(&pb.n_trees))
                .then(pb.tree.min_samples_leaf.cmp(&pa.tree.min_samples_leaf))
                .then(
                    pa.features_per_split
                        .resolve(scope.features().len())
                        .cmp(&pb.features_per_split.resolve(scope.features().len())),
                )
        })
        .expect("non-empty table")
        .0;
    Ok(GridResult { best, table })
}

/// Everything `build_roster` needs besides the data.
#[derive(Debug, Clone)]
pub struct RosterConfig {
    pub thresholds: AttenuationThresholds,
    pub tx_power_dbm: f64,
    /// Per-device RSSI correction; the threshold model refuses to train
    /// without one.
    pub correction_db: Option<f64>,
    pub grid: GridSpec,
    pub seed: u64,
}

fn rows_of(samples: &[MatchedSample]) -> Result<(Vec<FeatureRow>, Vec<DistanceClass>)> {
    let mut x = Vec::with_capacity(samples.len());
    let mut y = Vec::with_capacity(samples.len());
    for s in samples {
        let label = s.label.ok_or_else(|| {
            Error::InvalidInput(format!("unlabeled sample in training pool (run {})", s.run_id))
        })?;
        x.push(features_of(s));
        y.push(label);
    }
    Ok((x, y))
}

/// Train the full roster for one sending device on its train/test splits.
pub fn build_roster(
    device: &str,
    train: &[MatchedSample],
    test: &[MatchedSample],
    cfg: &RosterConfig,
) -> Result<TrainedRoster> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidInput(format!(
            "device {device}: empty train or test split"
        )));
    }
    let correction_db = cfg.correction_db.ok_or_else(|| {
        Error::InvalidInput(format!(
            "device {device}: no correction available; run calibration before training the threshold model"
        ))
    })?;
    let (x_train, y_train) = rows_of(train)?;
    let (x_test, y_test) = rows_of(test)?;

    let mut models: BTreeMap<u8, TrainedModel> = BTreeMap::new();
    for spec in roster() {
        let model = match spec.family {
            ModelFamily::Threshold => TrainedModel::Threshold(ThresholdModel {
                thresholds: cfg.thresholds,
                correction_db,
                tx_power_dbm: cfg.tx_power_dbm,
            }),
            ModelFamily::Tree => {
                let search = grid_search_tree(
                    &x_train, &y_train, &x_test, &y_test, spec.scope, &cfg.grid,
                )?;
                let root = fit_decision_tree(&x_train, &y_train, spec.scope.features(), &search.best);
                TrainedModel::Tree(TreeModelFit {
                    scope: spec.scope,
                    params: search.best,
                    root,
                })
            }
            ModelFamily::Forest => {
                let seed = forest::tree_seed(cfg.seed, spec.roster_no as usize);
                let search = grid_search_forest(
                    &x_train, &y_train, &x_test, &y_test, spec.scope, &cfg.grid, seed,
                )?;
                let model = fit_random_forest(&x_train, &y_train, spec.scope.features(), &search.best);
                TrainedModel::Forest(ForestModelFit {
                    scope: spec.scope,
                    model,
                })
            }
            ModelFamily::Vote => TrainedModel::Vote(VoteModel {
                weights: spec.weights.expect("vote entry has weights"),
                members: spec.members.expect("vote entry has members"),
            }),
        };
        models.insert(spec.roster_no, model);
    }
    Ok(TrainedRoster {
        device: device.to_string(),
        models,
    })
}
