//! Environment generation by supervised clustering.
//!
//! For one covariate `x` and the target `y`, a decision tree with `x` as its
//! only feature is grown best-first until it has `k` leaves. Each leaf is an
//! interval of `x` and becomes one environment. Regression trees maximise the
//! drop in the sum of squared errors of `y`; classification trees (binary or
//! categorical targets) maximise the drop in `n · Gini`. Categorical covariates
//! are first re-coded as the rank of their level in the ordering by mean
//! target, which turns level-subset splits into threshold splits.
//!
//! Thresholds are midpoints between consecutive distinct feature values and a
//! value equal to a threshold goes to the left leaf.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sem::{Dataset, VariableKind};
use crate::stats::{self, PValue, TestReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeMode {
    Regression,
    Classification,
}

impl TreeMode {
    pub fn for_target(kind: VariableKind) -> Self {
        if kind.is_discrete() {
            TreeMode::Classification
        } else {
            TreeMode::Regression
        }
    }
}

/// One split, in the order the tree made it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStep {
    pub threshold: f64,
    pub gain: f64,
    pub left_size: usize,
    pub right_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub mode: TreeMode,
    pub requested_leaves: usize,
    pub leaf_count: usize,
    /// Strictly increasing. For categorical covariates these live in rank
    /// space, see `level_order`.
    pub thresholds: Vec<f64>,
    /// Categorical covariates only: levels sorted by mean target; a level's
    /// feature value is its index in this list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_order: Option<Vec<f64>>,
    pub history: Vec<SplitStep>,
}

impl TreeModel {
    /// Fewer leaves than requested (no admissible split with positive gain).
    pub fn is_short(&self) -> bool {
        self.leaf_count < self.requested_leaves
    }

    /// A single leaf: nothing to compare.
    pub fn is_degenerate(&self) -> bool {
        self.leaf_count < 2
    }

    fn feature_value(&self, x: f64) -> Result<f64> {
        match &self.level_order {
            None => Ok(x),
            Some(levels) => levels
                .iter()
                .position(|&l| l == x)
                .map(|r| r as f64)
                .ok_or(Error::UnknownLevel(x)),
        }
    }
}

/// `max(30, n / (10 k))`: keeps enough samples per environment for the
/// per-environment t and F tests.
pub fn default_min_leaf(n: usize, k: usize) -> usize {
    30.max(n / (10 * k.max(1)))
}

pub fn fit_environment_tree(
    x: &[f64],
    x_kind: VariableKind,
    y: &[f64],
    y_kind: VariableKind,
    k: usize,
    min_leaf: usize,
) -> Result<TreeModel> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::InvalidParameter(format!("covariate has {n} rows, target has {}", y.len())));
    }
    if k < 2 {
        return Err(Error::InvalidPartition { k, reason: "need at least 2 environments".into() });
    }
    if min_leaf < 1 {
        return Err(Error::InvalidParameter("min_leaf must be at least 1".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite value in tree input".into()));
    }
    if n < k * min_leaf {
        return Err(Error::InvalidPartition {
            k,
            reason: format!("{n} samples cannot fill {k} leaves of at least {min_leaf}"),
        });
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::NoSplitPoints);
    }

    let mode = TreeMode::for_target(y_kind);
    let level_order = (x_kind == VariableKind::Categorical).then(|| order_levels(x, y));
    let feature: Vec<f64> = match &level_order {
        None => x.to_vec(),
        Some(levels) => x
            .iter()
            .map(|v| levels.iter().position(|l| l == v).unwrap() as f64)
            .collect(),
    };

    let order: Vec<usize> = (0..n).sorted_by(|&a, &b| feature[a].total_cmp(&feature[b])).collect();
    let zs: Vec<f64> = order.iter().map(|&i| feature[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let scorer = match mode {
        TreeMode::Regression => Scorer::Variance,
        TreeMode::Classification => Scorer::Gini(class_codes(&ys)),
    };

    // Leaves are contiguous index ranges of the sorted sample.
    let mut leaves: Vec<(usize, usize)> = vec![(0, n)];
    let mut history = Vec::new();
    while leaves.len() < k {
        let mut best: Option<(usize, Candidate)> = None;
        for (li, &(lo, hi)) in leaves.iter().enumerate() {
            if let Some(c) = best_split(&zs, &ys, &scorer, lo, hi, min_leaf) {
                if best.as_ref().is_none_or(|(_, b)| c.gain > b.gain) {
                    best = Some((li, c));
                }
            }
        }
        let Some((li, cand)) = best else { break };
        let (lo, hi) = leaves[li];
        history.push(SplitStep {
            threshold: cand.threshold,
            gain: cand.gain,
            left_size: cand.pos - lo,
            right_size: hi - cand.pos,
        });
        leaves.splice(li..=li, [(lo, cand.pos), (cand.pos, hi)]);
    }

    let thresholds = history.iter().map(|s| s.threshold).sorted_by(f64::total_cmp).collect();
    Ok(TreeModel {
        mode,
        requested_leaves: k,
        leaf_count: leaves.len(),
        thresholds,
        level_order,
        history,
    })
}

/// Leaf index (1-based, left to right) of every value in `x`.
pub fn assign(tree: &TreeModel, x: &[f64]) -> Result<Vec<usize>> {
    x.iter()
        .map(|&v| {
            let z = tree.feature_value(v)?;
            Ok(1 + tree.thresholds.partition_point(|&t| t < z))
        })
        .collect()
}

fn order_levels(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    for (&xv, &yv) in x.iter().zip(y) {
        match sums.iter_mut().find(|(l, _, _)| *l == xv) {
            Some(entry) => {
                entry.1 += yv;
                entry.2 += 1;
            }
            None => sums.push((xv, yv, 1)),
        }
    }
    sums.into_iter()
        .map(|(level, sum, count)| (sum / count as f64, level))
        .sorted_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .map(|(_, level)| level)
        .collect()
}

fn class_codes(ys: &[f64]) -> (Vec<usize>, usize) {
    let classes: Vec<f64> = ys.iter().copied().sorted_by(f64::total_cmp).dedup().collect();
    let codes = ys
        .iter()
        .map(|v| classes.binary_search_by(|c| c.total_cmp(v)).unwrap())
        .collect();
    (codes, classes.len())
}

enum Scorer {
    Variance,
    Gini((Vec<usize>, usize)),
}

struct Candidate {
    pos: usize,
    threshold: f64,
    gain: f64,
}

/// Best admissible split of the sorted range `lo..hi`; leftmost on ties.
fn best_split(zs: &[f64], ys: &[f64], scorer: &Scorer, lo: usize, hi: usize, min_leaf: usize) -> Option<Candidate> {
    let n = hi - lo;
    if n < 2 * min_leaf {
        return None;
    }
    let ys_leaf = &ys[lo..hi];
    if ys_leaf.iter().all(|&v| v == ys_leaf[0]) {
        return None;
    }
    let mut best: Option<Candidate> = None;
    let mut consider = |s: usize, gain: f64| {
        let admissible = zs[s - 1] < zs[s] && s - lo >= min_leaf && hi - s >= min_leaf;
        if admissible && gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
            best = Some(Candidate {
                pos: s,
                threshold: 0.5 * (zs[s - 1] + zs[s]),
                gain,
            });
        }
    };
    match scorer {
        Scorer::Variance => {
            // gain = n_L n_R / n · (ȳ_L − ȳ_R)², on deviations from the leaf mean.
            let center = ys_leaf.iter().sum::<f64>() / n as f64;
            let total: f64 = ys_leaf.iter().map(|v| v - center).sum();
            let mut left = 0.0;
            for s in lo + 1..hi {
                left += ys[s - 1] - center;
                let (nl, nr) = ((s - lo) as f64, (hi - s) as f64);
                let diff = left / nl - (total - left) / nr;
                consider(s, nl * nr / n as f64 * diff * diff);
            }
        }
        Scorer::Gini((codes, n_classes)) => {
            let mut total = vec![0usize; *n_classes];
            for &c in &codes[lo..hi] {
                total[c] += 1;
            }
            let sq_sum = |counts: &[usize]| counts.iter().map(|&c| (c * c) as f64).sum::<f64>();
            let parent = sq_sum(&total) / n as f64;
            let mut left = vec![0usize; *n_classes];
            let mut right = total.clone();
            for s in lo + 1..hi {
                let c = codes[s - 1];
                left[c] += 1;
                right[c] -= 1;
                let (nl, nr) = ((s - lo) as f64, (hi - s) as f64);
                // n·G(P) − n_L·G(L) − n_R·G(R) with n·G = n − Σc²/n
                consider(s, sq_sum(&left) / nl + sq_sum(&right) / nr - parent);
            }
        }
    }
    best
}

/// KS comparison of one pair of environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairShift {
    pub envs: (usize, usize),
    pub covariate: TestReport,
    pub target: TestReport,
    /// The target distribution differs between the two environments.
    pub shifted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentPartition {
    pub covariate: String,
    pub target: String,
    /// 1-based environment of each sample.
    pub labels: Vec<usize>,
    pub leaf_sizes: Vec<usize>,
    pub tree: TreeModel,
    pub shift_report: Vec<PairShift>,
}

impl EnvironmentPartition {
    pub fn k(&self) -> usize {
        self.tree.leaf_count
    }

    /// Environment pairs without a detectable target shift.
    pub fn shift_warnings(&self) -> Vec<String> {
        self.shift_report
            .iter()
            .filter(|s| !s.shifted)
            .map(|s| {
                format!(
                    "{}: environments {} and {} show no shift in {} (KS p = {:.4})",
                    self.covariate,
                    s.envs.0,
                    s.envs.1,
                    self.target,
                    s.target.p.get()
                )
            })
            .collect()
    }
}

/// Tree fit for `(covariate, target)` plus the labels it assigns. The pairwise
/// shift check is attached; a degenerate tree is an error.
pub fn build_partition(
    dataset: &Dataset,
    covariate: &str,
    target: &str,
    k: usize,
    min_leaf: usize,
    alpha_shift: PValue,
) -> Result<EnvironmentPartition> {
    let xi = dataset.index_of(covariate)?;
    let yi = dataset.index_of(target)?;
    let x = dataset.column_at(xi);
    let tree = fit_environment_tree(x, dataset.kind_at(xi), dataset.column_at(yi), dataset.kind_at(yi), k, min_leaf)?;
    if tree.is_degenerate() {
        return Err(Error::InvalidPartition {
            k,
            reason: format!("no split of `{covariate}` changes `{target}`"),
        });
    }
    let labels = assign(&tree, x)?;
    let mut leaf_sizes = vec![0; tree.leaf_count];
    for &l in &labels {
        leaf_sizes[l - 1] += 1;
    }
    let shift_report = check_shift(dataset, covariate, target, &labels, tree.leaf_count, alpha_shift)?;
    Ok(EnvironmentPartition {
        covariate: covariate.to_owned(),
        target: target.to_owned(),
        labels,
        leaf_sizes,
        tree,
        shift_report,
    })
}

/// Pairwise two-sample KS tests on the covariate and on the target.
///
/// Leaves are intervals of the covariate, so its marginal always differs;
/// a pair counts as shifted when the target marginal differs as well.
pub fn check_shift(
    dataset: &Dataset,
    covariate: &str,
    target: &str,
    labels: &[usize],
    k: usize,
    alpha_shift: PValue,
) -> Result<Vec<PairShift>> {
    let x = dataset.column(covariate)?;
    let y = dataset.column(target)?;
    if labels.len() != x.len() {
        return Err(Error::InvalidParameter("labels do not cover the dataset".into()));
    }
    if k < 2 {
        return Err(Error::InvalidPartition { k, reason: "need at least 2 environments".into() });
    }
    let mut groups_x = vec![Vec::new(); k];
    let mut groups_y = vec![Vec::new(); k];
    for ((&l, &xv), &yv) in labels.iter().zip(x).zip(y) {
        if l == 0 || l > k {
            return Err(Error::InvalidPartition { k, reason: format!("label {l} out of range") });
        }
        groups_x[l - 1].push(xv);
        groups_y[l - 1].push(yv);
    }
    if let Some(empty) = groups_x.iter().position(Vec::is_empty) {
        return Err(Error::InvalidPartition {
            k,
            reason: format!("environment {} is empty", empty + 1),
        });
    }
    let mut report = Vec::with_capacity(k * (k - 1) / 2);
    for (a, b) in (0..k).tuple_combinations() {
        let covariate = stats::ks_two_sample(&groups_x[a], &groups_x[b])?;
        let target = stats::ks_two_sample(&groups_y[a], &groups_y[b])?;
        let shifted = target.p.get() < alpha_shift.get();
        report.push(PairShift {
            envs: (a + 1, b + 1),
            covariate,
            target,
            shifted,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::Column;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use VariableKind::{Binary, Categorical, Continuous};

    fn sse(ys: &[f64]) -> f64 {
        let m = ys.iter().sum::<f64>() / ys.len() as f64;
        ys.iter().map(|y| (y - m) * (y - m)).sum()
    }

    /// Exhaustive single-split search on the raw data.
    fn brute_force_split(x: &[f64], y: &[f64], min_leaf: usize) -> (f64, f64) {
        let mut distinct: Vec<f64> = x.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let parent = sse(y);
        let mut best = (f64::NAN, f64::NEG_INFINITY);
        for w in distinct.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let left: Vec<f64> = x.iter().zip(y).filter(|(xv, _)| **xv <= t).map(|(_, yv)| *yv).collect();
            let right: Vec<f64> = x.iter().zip(y).filter(|(xv, _)| **xv > t).map(|(_, yv)| *yv).collect();
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let gain = parent - sse(&left) - sse(&right);
            if gain > best.1 {
                best = (t, gain);
            }
        }
        best
    }

    #[test]
    fn two_clusters_split_between_them() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let x: Vec<f64> = (0..200)
            .map(|i| if i < 100 { 0.0 } else { 10.0 } + rng.random::<f64>())
            .collect();
        let y: Vec<f64> = x.iter().map(|v| v + noise.sample(&mut rng)).collect();
        let tree = fit_environment_tree(&x, Continuous, &y, Continuous, 2, 5).unwrap();
        assert_eq!(tree.leaf_count, 2);
        let t = tree.thresholds[0];
        let max1 = x[..100].iter().copied().fold(f64::MIN, f64::max);
        let min2 = x[100..].iter().copied().fold(f64::MAX, f64::min);
        assert!(t > max1 && t < min2);
        let (bt, bgain) = brute_force_split(&x, &y, 5);
        assert_eq!(t, bt);
        assert!((tree.history[0].gain - bgain).abs() <= 1e-9 * bgain);
    }

    #[test]
    fn binary_covariate_splits_at_half() {
        let x: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 3.0 * v + (i % 7) as f64 * 0.1).collect();
        let tree = fit_environment_tree(&x, Binary, &y, Continuous, 2, 10).unwrap();
        assert_eq!(tree.thresholds, vec![0.5]);
        let labels = assign(&tree, &x).unwrap();
        assert!(labels.iter().zip(&x).all(|(&l, &v)| l == v as usize + 1));
    }

    #[test]
    fn constant_target_gives_single_leaf() {
        let x: Vec<f64> = (0..100).map(f64::from).collect();
        let y = vec![0.1; 100];
        let tree = fit_environment_tree(&x, Continuous, &y, Continuous, 3, 10).unwrap();
        assert_eq!(tree.leaf_count, 1);
        assert!(tree.is_degenerate() && tree.is_short());
    }

    #[test]
    fn constant_covariate_is_an_error() {
        let x = vec![1.0; 50];
        let y: Vec<f64> = (0..50).map(f64::from).collect();
        assert!(matches!(
            fit_environment_tree(&x, Continuous, &y, Continuous, 2, 5),
            Err(Error::NoSplitPoints)
        ));
    }

    #[test]
    fn leaf_budget_capped_by_distinct_values() {
        let x: Vec<f64> = (0..90).map(|i| (i % 2) as f64).collect();
        let y: Vec<f64> = (0..90).map(|i| i as f64).collect();
        let tree = fit_environment_tree(&x, Binary, &y, Continuous, 4, 5).unwrap();
        assert_eq!(tree.leaf_count, 2);
        assert!(tree.is_short());
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        assert!(fit_environment_tree(&x, Continuous, &x, Continuous, 3, 10).is_err());
        assert!(fit_environment_tree(&x, Continuous, &x, Continuous, 1, 1).is_err());
    }

    #[test]
    fn assign_examples() {
        let tree = TreeModel {
            mode: TreeMode::Regression,
            requested_leaves: 2,
            leaf_count: 2,
            thresholds: vec![2.0],
            level_order: None,
            history: vec![],
        };
        assert_eq!(assign(&tree, &[1.0, 3.0]).unwrap(), vec![1, 2]);
        assert_eq!(assign(&tree, &[2.0]).unwrap(), vec![1]);
    }

    #[test]
    fn classification_uses_gini() {
        // Class flips at x = 30; Gini picks that boundary exactly.
        let x: Vec<f64> = (0..60).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 30.0 { 0.0 } else { 1.0 }).collect();
        let tree = fit_environment_tree(&x, Continuous, &y, Binary, 2, 5).unwrap();
        assert_eq!(tree.mode, TreeMode::Classification);
        assert_eq!(tree.thresholds, vec![29.5]);
        // Pure children: gain = n·G(parent) = 60 · 0.5
        assert!((tree.history[0].gain - 30.0).abs() < 1e-12);
    }

    #[test]
    fn categorical_levels_are_ordered_by_target_mean() {
        // Level 2 has the lowest mean, then 0, then 1.
        let x: Vec<f64> = (0..90).map(|i| (i % 3) as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| match v as i32 {
                0 => 5.0,
                1 => 9.0,
                _ => 1.0,
            })
            .collect();
        let tree = fit_environment_tree(&x, Categorical, &y, Continuous, 3, 5).unwrap();
        assert_eq!(tree.level_order.as_deref(), Some(&[2.0, 0.0, 1.0][..]));
        assert_eq!(tree.thresholds, vec![0.5, 1.5]);
        let labels = assign(&tree, &[2.0, 0.0, 1.0]).unwrap();
        assert_eq!(labels, vec![1, 2, 3]);
        assert!(matches!(assign(&tree, &[7.0]), Err(Error::UnknownLevel(_))));
    }

    fn dataset(x: Vec<f64>, y: Vec<f64>) -> Dataset {
        Dataset::new(
            vec![
                Column { name: "x".into(), kind: Continuous },
                Column { name: "y".into(), kind: Continuous },
            ],
            vec![x, y],
            None,
        )
        .unwrap()
    }

    #[test]
    fn adjacent_leaves_have_disjoint_covariate_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..600).map(|_| rng.random::<f64>() * 4.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v + rng.random::<f64>()).collect();
        let data = dataset(x, y);
        let part = build_partition(&data, "x", "y", 3, 30, PValue::new(0.05)).unwrap();
        assert_eq!(part.k(), 3);
        assert_eq!(part.leaf_sizes.iter().sum::<usize>(), 600);
        for pair in part.shift_report.iter().filter(|p| p.envs.1 == p.envs.0 + 1) {
            assert_eq!(pair.covariate.statistic, 1.0);
        }
        assert_eq!(assign(&part.tree, data.column("x").unwrap()).unwrap(), part.labels);
    }

    #[test]
    fn independent_target_raises_shift_warning() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let flagged = (0..1000)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x: Vec<f64> = (0..1000).map(|_| normal.sample(&mut rng)).collect();
                let y: Vec<f64> = (0..1000).map(|_| normal.sample(&mut rng)).collect();
                let data = dataset(x, y);
                let part = build_partition(&data, "x", "y", 3, 33, PValue::new(0.05)).unwrap();
                !part.shift_warnings().is_empty()
            })
            .count();
        assert!(flagged >= 900, "flagged in {flagged}/1000 seeds");
    }

    #[test]
    fn check_shift_rejects_empty_environment() {
        let data = dataset((0..10).map(f64::from).collect(), (0..10).map(f64::from).collect());
        let labels = vec![1; 10];
        assert!(check_shift(&data, "x", "y", &labels, 2, PValue::new(0.05)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fit_is_deterministic_and_reconstructs_labels(
            seed in 0u64..1000, n in 40usize..200, k in 2usize..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = x.iter().map(|v| (6.0 * v).sin() + rng.random::<f64>()).collect();
            let a = fit_environment_tree(&x, Continuous, &y, Continuous, k, 5).unwrap();
            let b = fit_environment_tree(&x, Continuous, &y, Continuous, k, 5).unwrap();
            prop_assert_eq!(&a, &b);
            // Leaf-count contract: continuous x, enough rows, positive gains.
            prop_assert_eq!(a.leaf_count, k);
            prop_assert!(a.thresholds.windows(2).all(|w| w[0] < w[1]));
            let labels = assign(&a, &x).unwrap();
            let mut sizes = vec![0usize; a.leaf_count];
            for &l in &labels { sizes[l - 1] += 1; }
            prop_assert!(sizes.iter().all(|&s| s >= 5));
        }
    }
}
