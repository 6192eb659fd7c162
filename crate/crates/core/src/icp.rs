//! Invariant causal prediction over tree-generated environments.
//!
//! For a target `Y` and each covariate `X_i`, the samples are split into the
//! environments of `X_i`'s tree. A covariate subset `S` is accepted under that
//! split when the residuals of `Y ~ S` have the same mean and variance in every
//! environment. Each environment is tested against the rest with Welch t and F
//! tests. Both families get a Bonferroni factor of `k`, and the subset's
//! p-value is twice the smaller of the two.
//!
//! * `v1` searches the whole power set. `X_i` is a parent when it lies in
//!   every subset accepted under its own environments.
//! * `v2` repeats the `v1` decision inside every combination of `cap`
//!   covariates. `X_i` is kept when it was selected in at least a
//!   `1 − alpha_vote` share of the combinations that contain it.
//!
//! A subset's residuals do not depend on which partition they are tested
//! under, and in `v2` the same subset shows up in many combinations, so each
//! subset is fitted once and tested under every partition that needs it.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envgen::{self, EnvironmentPartition, PairShift, TreeMode};
use crate::error::{Error, Result};
use crate::regress;
use crate::sem::Dataset;
use crate::stats::{self, Moments, PValue};

/// Power-set search is refused beyond this many covariates.
pub const MAX_V1_COVARIATES: usize = 16;

/// Residuals are treated as exactly zero when `RSS ≤ EXACT_FIT_TOL · TSS`.
/// Deterministic equations otherwise leave round-off noise that the t and F
/// tests would happily reject.
const EXACT_FIT_TOL: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    V1,
    V2,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::V1 => "v1",
            Method::V2 => "v2",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Method::V1),
            "v2" => Ok(Method::V2),
            other => Err(Error::InvalidParameter(format!("unknown method `{other}` (expected v1 or v2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub k_envs: usize,
    pub alpha: PValue,
    pub alpha_vote: PValue,
    pub alpha_shift: PValue,
    pub cap: usize,
    /// `None` uses [`envgen::default_min_leaf`].
    pub min_leaf: Option<usize>,
    /// Per-partition subset listings in the report are cut after this many.
    pub max_report_subsets: usize,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            k_envs: 3,
            alpha: PValue::new(0.05),
            alpha_vote: PValue::new(0.1),
            alpha_shift: PValue::new(0.05),
            cap: 5,
            min_leaf: None,
            max_report_subsets: 4096,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_envs < 2 {
            return Err(Error::InvalidParameter("k_envs must be at least 2".into()));
        }
        if self.cap < 1 {
            return Err(Error::InvalidParameter("cap must be at least 1".into()));
        }
        if self.min_leaf.is_some_and(|m| m < 2) {
            return Err(Error::InvalidParameter("min_leaf must be at least 2".into()));
        }
        Ok(())
    }

    pub fn min_leaf_for(&self, n: usize) -> usize {
        self.min_leaf
            .unwrap_or_else(|| envgen::default_min_leaf(n, self.k_envs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetTestResult {
    pub subset: Vec<String>,
    pub p_mean: PValue,
    pub p_var: PValue,
    pub p_combined: PValue,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub covariate: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<TreeMode>,
    pub thresholds: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level_order: Option<Vec<f64>>,
    pub leaf_sizes: Vec<usize>,
    pub shift: Vec<PairShift>,
    pub accepted_count: usize,
    /// v1: intersection of all accepted subsets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intersection: Option<Vec<String>>,
    pub subsets: Vec<SubsetTestResult>,
    pub subsets_truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub selected: usize,
    pub eligible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryResult {
    pub target: String,
    pub method: Method,
    pub params: IcpParams,
    pub min_leaf: usize,
    pub covariates: Vec<String>,
    pub parents: Vec<String>,
    pub per_partition: BTreeMap<String, PartitionReport>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub votes: BTreeMap<String, VoteTally>,
    /// Distinct covariate subsets fitted.
    pub subsets_evaluated: usize,
    /// v2 only: size-`cap` combinations searched.
    pub combinations_evaluated: usize,
    pub fallback_to_v1: bool,
    pub warnings: Vec<String>,
}

/// Mean and variance invariance of residuals across environments.
///
/// `labels` are 1-based environment indices in `1..=k`. Each environment is
/// compared to its complement; the `k` mean tests and the `k` variance tests
/// are Bonferroni-corrected separately.
pub fn invariance_p(residuals: &[f64], labels: &[usize], k: usize) -> Result<(PValue, PValue)> {
    let envs = EnvLabels::new(labels, k)?;
    if residuals.len() != labels.len() {
        return Err(Error::InvalidParameter("residuals and labels differ in length".into()));
    }
    Ok(envs.test(residuals))
}

/// Zero-based labels with validated sizes.
#[derive(Debug, Clone)]
struct EnvLabels {
    labels: Vec<usize>,
    k: usize,
}

impl EnvLabels {
    fn new(labels: &[usize], k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidPartition { k, reason: "need at least 2 environments".into() });
        }
        let mut sizes = vec![0usize; k];
        let mut zero_based = Vec::with_capacity(labels.len());
        for &l in labels {
            if l == 0 || l > k {
                return Err(Error::InvalidPartition { k, reason: format!("label {l} out of range") });
            }
            sizes[l - 1] += 1;
            zero_based.push(l - 1);
        }
        let n = labels.len();
        if let Some((e, &s)) = sizes.iter().enumerate().find(|(_, &s)| s < 2 || n - s < 2) {
            return Err(Error::InvalidPartition {
                k,
                reason: format!("environment {} has {s} of {n} samples; tests need 2 on each side", e + 1),
            });
        }
        Ok(EnvLabels { labels: zero_based, k })
    }

    fn test(&self, residuals: &[f64]) -> (PValue, PValue) {
        let k = self.k;
        let mut count = vec![0usize; k];
        let mut sum = vec![0.0; k];
        for (&l, &r) in self.labels.iter().zip(residuals) {
            count[l] += 1;
            sum[l] += r;
        }
        let means: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
        let mut m2 = vec![0.0; k];
        for (&l, &r) in self.labels.iter().zip(residuals) {
            let d = r - means[l];
            m2[l] += d * d;
        }
        let moments: Vec<Moments> = (0..k)
            .map(|e| Moments { n: count[e], mean: means[e], m2: m2[e] })
            .collect();

        let mut p_means = Vec::with_capacity(k);
        let mut p_vars = Vec::with_capacity(k);
        for e in 0..k {
            let rest = (0..k)
                .filter(|&o| o != e)
                .fold(Moments { n: 0, mean: 0.0, m2: 0.0 }, |acc, o| acc.merge(moments[o]));
            p_means.push(stats::welch_from_moments(moments[e], rest).p);
            p_vars.push(stats::f_from_moments(moments[e], rest).p);
        }
        (
            stats::bonferroni(&p_means).expect("k >= 2"),
            stats::bonferroni(&p_vars).expect("k >= 2"),
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Tested {
    p_mean: PValue,
    p_var: PValue,
    p_combined: PValue,
}

/// Per-subset outcome: one slot per covariate partition (`None` when not
/// needed or the partition failed), or the reason the fit was skipped.
type SubsetOutcome = std::result::Result<Vec<Option<Tested>>, String>;

struct Problem<'a> {
    dataset: &'a Dataset,
    target: String,
    target_col: usize,
    covariate_cols: Vec<usize>,
    names: Vec<String>,
    min_leaf: usize,
    partitions: Vec<std::result::Result<(EnvironmentPartition, EnvLabels), String>>,
    tss: f64,
}

impl<'a> Problem<'a> {
    fn new(dataset: &'a Dataset, target: &str, params: &IcpParams) -> Result<Self> {
        params.validate()?;
        let target_col = dataset.index_of(target)?;
        let covariate_cols: Vec<usize> = (0..dataset.n_cols()).filter(|&c| c != target_col).collect();
        let names: Vec<String> = covariate_cols
            .iter()
            .map(|&c| dataset.columns()[c].name.clone())
            .collect();
        let min_leaf = params.min_leaf_for(dataset.n_rows());
        let partitions = names
            .par_iter()
            .map(|name| {
                envgen::build_partition(dataset, name, target, params.k_envs, min_leaf, params.alpha_shift)
                    .and_then(|p| {
                        let labels = EnvLabels::new(&p.labels, p.k())?;
                        Ok((p, labels))
                    })
                    .map_err(|e| e.to_string())
            })
            .collect();
        let y = dataset.column_at(target_col);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let tss = y.iter().map(|v| (v - mean) * (v - mean)).sum();
        Ok(Problem {
            dataset,
            target: target.to_owned(),
            target_col,
            covariate_cols,
            names,
            min_leaf,
            partitions,
            tss,
        })
    }

    fn m(&self) -> usize {
        self.names.len()
    }

    fn subset_names(&self, mask: u64) -> Vec<String> {
        (0..self.m())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| self.names[i].clone())
            .collect()
    }

    fn residuals(&self, mask: u64) -> Result<Vec<f64>> {
        let cols: Vec<&[f64]> = (0..self.m())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| self.dataset.column_at(self.covariate_cols[i]))
            .collect();
        let fit = regress::ols(&cols, self.dataset.column_at(self.target_col))?;
        let mut residuals = fit.residuals;
        let rss: f64 = residuals.iter().map(|r| r * r).sum();
        if rss <= EXACT_FIT_TOL * self.tss {
            residuals.fill(0.0);
        }
        Ok(residuals)
    }

    /// Fits `mask` once and tests it under every partition `wanted` selects.
    fn evaluate(&self, mask: u64, wanted: impl Fn(usize) -> bool) -> SubsetOutcome {
        let residuals = self.residuals(mask).map_err(|e| e.to_string())?;
        Ok(self
            .partitions
            .iter()
            .enumerate()
            .map(|(i, part)| match part {
                Ok((_, labels)) if wanted(i) => {
                    let (p_mean, p_var) = labels.test(&residuals);
                    let p_combined = stats::combine_min_double(p_mean, p_var);
                    Some(Tested { p_mean, p_var, p_combined })
                }
                _ => None,
            })
            .collect())
    }

    fn partition_warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        for (name, part) in self.names.iter().zip(&self.partitions) {
            match part {
                Err(e) => warnings.push(format!("{name}: partition skipped, covariate excluded: {e}")),
                Ok((p, _)) => {
                    if p.tree.is_short() {
                        warnings.push(format!(
                            "{name}: tree stopped at {} of {} leaves",
                            p.tree.leaf_count, p.tree.requested_leaves
                        ));
                    }
                    warnings.extend(p.shift_warnings());
                }
            }
        }
        warnings
    }

    fn report_for(
        &self,
        i: usize,
        listed: impl Iterator<Item = (u64, Tested)>,
        accepted_count: usize,
        intersection: Option<u64>,
        alpha: PValue,
        limit: usize,
    ) -> PartitionReport {
        let mut subsets = Vec::new();
        let mut truncated = false;
        for (mask, t) in listed {
            if subsets.len() == limit {
                truncated = true;
                break;
            }
            subsets.push(SubsetTestResult {
                subset: self.subset_names(mask),
                p_mean: t.p_mean,
                p_var: t.p_var,
                p_combined: t.p_combined,
                accepted: t.p_combined.get() >= alpha.get(),
            });
        }
        let base = PartitionReport {
            covariate: self.names[i].clone(),
            error: None,
            mode: None,
            thresholds: Vec::new(),
            level_order: None,
            leaf_sizes: Vec::new(),
            shift: Vec::new(),
            accepted_count,
            intersection: intersection.map(|m| self.subset_names(m)),
            subsets,
            subsets_truncated: truncated,
        };
        match &self.partitions[i] {
            Err(e) => PartitionReport { error: Some(e.clone()), ..base },
            Ok((p, _)) => PartitionReport {
                mode: Some(p.tree.mode),
                thresholds: p.tree.thresholds.clone(),
                level_order: p.tree.level_order.clone(),
                leaf_sizes: p.leaf_sizes.clone(),
                shift: p.shift_report.clone(),
                ..base
            },
        }
    }
}

fn accepts(t: &Option<Tested>, alpha: PValue) -> bool {
    t.is_some_and(|t| t.p_combined.get() >= alpha.get())
}

/// Masks in report order: by size, then numerically.
fn report_order(masks: &mut [u64]) {
    masks.sort_by_key(|&m| (m.count_ones(), m));
}

pub fn discover(dataset: &Dataset, target: &str, method: Method, params: &IcpParams) -> Result<DiscoveryResult> {
    match method {
        Method::V1 => discover_v1(dataset, target, params),
        Method::V2 => discover_v2(dataset, target, params),
    }
}

/// Full power-set search with intersection of accepted subsets.
pub fn discover_v1(dataset: &Dataset, target: &str, params: &IcpParams) -> Result<DiscoveryResult> {
    let problem = Problem::new(dataset, target, params)?;
    let m = problem.m();
    if m > MAX_V1_COVARIATES {
        return Err(Error::InvalidParameter(format!(
            "{m} covariates means 2^{m} subsets; use v2 for more than {MAX_V1_COVARIATES}"
        )));
    }
    let alpha = params.alpha;
    let outcomes: Vec<SubsetOutcome> = (0..1u64 << m)
        .into_par_iter()
        .map(|mask| problem.evaluate(mask, |_| true))
        .collect();

    let mut warnings = problem.partition_warnings();
    for (mask, outcome) in outcomes.iter().enumerate() {
        if let Err(e) = outcome {
            warnings.push(format!("subset {:?} skipped: {e}", problem.subset_names(mask as u64)));
        }
    }

    let mut order: Vec<u64> = (0..1u64 << m).collect();
    report_order(&mut order);

    let mut parents = Vec::new();
    let mut per_partition = BTreeMap::new();
    for i in 0..m {
        let (accepted_count, intersection) = if problem.partitions[i].is_ok() {
            let accepted: Vec<u64> = (0..1u64 << m)
                .filter(|&mask| matches!(&outcomes[mask as usize], Ok(t) if accepts(&t[i], alpha)))
                .collect();
            // An empty accepted family selects nothing.
            let inter = if accepted.is_empty() {
                0
            } else {
                accepted.iter().fold(u64::MAX, |acc, &mask| acc & mask)
            };
            if inter >> i & 1 == 1 {
                parents.push(problem.names[i].clone());
            }
            (accepted.len(), Some(inter))
        } else {
            (0, None)
        };
        let listed = order.iter().filter_map(|&mask| match &outcomes[mask as usize] {
            Ok(t) => t[i].map(|t| (mask, t)),
            Err(_) => None,
        });
        let report = problem.report_for(i, listed, accepted_count, intersection, alpha, params.max_report_subsets);
        per_partition.insert(problem.names[i].clone(), report);
    }

    Ok(DiscoveryResult {
        target: problem.target.clone(),
        method: Method::V1,
        params: params.clone(),
        min_leaf: problem.min_leaf,
        covariates: problem.names.clone(),
        parents,
        per_partition,
        votes: BTreeMap::new(),
        subsets_evaluated: outcomes.len(),
        combinations_evaluated: 0,
        fallback_to_v1: false,
        warnings,
    })
}

/// Capped-combination search with voting.
pub fn discover_v2(dataset: &Dataset, target: &str, params: &IcpParams) -> Result<DiscoveryResult> {
    let problem = Problem::new(dataset, target, params)?;
    let m = problem.m();
    let cap = params.cap;
    if m > 63 {
        return Err(Error::InvalidParameter(format!("{m} covariates exceed the 63-covariate limit")));
    }
    if m <= cap {
        return fallback_v2(dataset, target, params);
    }
    let alpha = params.alpha;

    // Every subset that fits inside some combination.
    let masks: Vec<u64> = (0..=cap)
        .flat_map(|size| (0..m).combinations(size))
        .map(|idx| idx.iter().fold(0u64, |acc, &i| acc | 1 << i))
        .collect();
    let index: HashMap<u64, usize> = masks.iter().enumerate().map(|(pos, &mask)| (mask, pos)).collect();
    let outcomes: Vec<SubsetOutcome> = masks
        .par_iter()
        .map(|&mask| problem.evaluate(mask, |i| (mask | 1 << i).count_ones() as usize <= cap))
        .collect();

    let combos: Vec<u64> = (0..m)
        .combinations(cap)
        .map(|idx| idx.iter().fold(0u64, |acc, &i| acc | 1 << i))
        .collect();
    let decisions: Vec<Vec<(usize, bool)>> = combos
        .par_iter()
        .map(|&group| {
            (0..m)
                .filter(|&i| group >> i & 1 == 1 && problem.partitions[i].is_ok())
                .map(|i| {
                    let mut any = false;
                    let mut inter = u64::MAX;
                    let mut sub = group;
                    loop {
                        if matches!(&outcomes[index[&sub]], Ok(t) if accepts(&t[i], alpha)) {
                            any = true;
                            inter &= sub;
                        }
                        if sub == 0 {
                            break;
                        }
                        sub = (sub - 1) & group;
                    }
                    (i, any && inter >> i & 1 == 1)
                })
                .collect()
        })
        .collect();

    let mut tallies = vec![VoteTally { selected: 0, eligible: 0 }; m];
    for (i, selected) in decisions.into_iter().flatten() {
        tallies[i].eligible += 1;
        tallies[i].selected += usize::from(selected);
    }

    let mut warnings = problem.partition_warnings();
    for (mask, outcome) in masks.iter().zip(&outcomes) {
        if let Err(e) = outcome {
            warnings.push(format!("subset {:?} skipped: {e}", problem.subset_names(*mask)));
        }
    }

    let mut order = masks.clone();
    report_order(&mut order);
    let mut per_partition = BTreeMap::new();
    let mut votes = BTreeMap::new();
    let mut parents = Vec::new();
    for i in 0..m {
        let tally = tallies[i];
        if vote_passes(tally, params.alpha_vote) {
            parents.push(problem.names[i].clone());
        }
        let tested: Vec<(u64, Tested)> = order
            .iter()
            .filter_map(|&mask| match &outcomes[index[&mask]] {
                Ok(t) => t[i].map(|t| (mask, t)),
                Err(_) => None,
            })
            .collect();
        let accepted_count = tested.iter().filter(|(_, t)| t.p_combined.get() >= alpha.get()).count();
        let report = problem.report_for(i, tested.into_iter(), accepted_count, None, alpha, params.max_report_subsets);
        per_partition.insert(problem.names[i].clone(), report);
        votes.insert(problem.names[i].clone(), tally);
    }

    Ok(DiscoveryResult {
        target: problem.target.clone(),
        method: Method::V2,
        params: params.clone(),
        min_leaf: problem.min_leaf,
        covariates: problem.names.clone(),
        parents,
        per_partition,
        votes,
        subsets_evaluated: masks.len(),
        combinations_evaluated: combos.len(),
        fallback_to_v1: false,
        warnings,
    })
}

fn vote_passes(tally: VoteTally, alpha_vote: PValue) -> bool {
    let needed = (1.0 - alpha_vote.get()) * tally.eligible as f64;
    tally.eligible > 0 && tally.selected as f64 >= needed - 1e-9
}

/// Few enough covariates for a single combination: v1 with one-vote tallies.
fn fallback_v2(dataset: &Dataset, target: &str, params: &IcpParams) -> Result<DiscoveryResult> {
    let mut result = discover_v1(dataset, target, params)?;
    result.method = Method::V2;
    result.fallback_to_v1 = true;
    result.combinations_evaluated = 1;
    result.votes = result
        .per_partition
        .iter()
        .map(|(name, report)| {
            let eligible = usize::from(report.error.is_none());
            let selected = usize::from(result.parents.contains(name));
            (name.clone(), VoteTally { selected, eligible })
        })
        .collect();
    result.parents.retain(|p| vote_passes(result.votes[p], params.alpha_vote));
    result.warnings.insert(
        0,
        format!(
            "v2 fell back to v1: {} covariates do not exceed cap {}",
            result.covariates.len(),
            params.cap
        ),
    );
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::{self, Column, Equation, NoiseSpec, SemSpec, VariableKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_labels(seed: u64, n: usize, k: usize) -> (Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let r = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let labels = (0..n).map(|_| rng.random_range(1..=k)).collect();
        (r, labels)
    }

    #[test]
    fn invariance_null_calibration() {
        let kept = (0..200)
            .filter(|&seed| {
                let (r, labels) = gaussian_labels(seed, 900, 3);
                invariance_p(&r, &labels, 3).unwrap().0.get() >= 0.05
            })
            .count();
        assert!(kept >= 180, "{kept}/200");
    }

    #[test]
    fn invariance_detects_mean_shift() {
        let (mut r, labels) = gaussian_labels(1, 900, 3);
        r.iter_mut().zip(&labels).filter(|(_, &l)| l == 1).for_each(|(v, _)| *v += 5.0);
        let (p_mean, _) = invariance_p(&r, &labels, 3).unwrap();
        assert!(p_mean.get() < 1e-6);
    }

    #[test]
    fn invariance_is_label_permutation_symmetric() {
        let (r, labels) = gaussian_labels(2, 600, 3);
        let permuted: Vec<usize> = labels.iter().map(|&l| [0, 3, 1, 2][l]).collect();
        let a = invariance_p(&r, &labels, 3).unwrap();
        let b = invariance_p(&r, &permuted, 3).unwrap();
        assert!((a.0.get() - b.0.get()).abs() < 1e-12);
        assert!((a.1.get() - b.1.get()).abs() < 1e-12);
    }

    #[test]
    fn invariance_rejects_tiny_environments() {
        let r = vec![0.0; 10];
        let mut labels = vec![1; 10];
        labels[0] = 2;
        assert!(invariance_p(&r, &labels, 2).is_err());
    }

    fn spec_dataset(name: &str, n: usize, seed: u64) -> Dataset {
        sem::simulate(&sem::builtin_spec(name).unwrap(), n, seed).unwrap()
    }

    #[test]
    fn v1_counts_every_subset() {
        let data = spec_dataset("dataset3", 600, 4);
        let result = discover_v1(&data, "Y", &IcpParams::default()).unwrap();
        assert_eq!(result.subsets_evaluated, 1 << 5);
        for report in result.per_partition.values() {
            assert_eq!(report.subsets.len(), 32);
        }
    }

    #[test]
    fn v1_empty_set_accepted_means_no_parent() {
        let data = spec_dataset("dataset1", 1000, 3);
        let result = discover_v1(&data, "Y", &IcpParams::default()).unwrap();
        for (name, report) in &result.per_partition {
            let empty_accepted = report.subsets.iter().any(|s| s.subset.is_empty() && s.accepted);
            if empty_accepted {
                assert_eq!(report.intersection.as_deref(), Some(&[][..]));
                assert!(!result.parents.contains(name));
            }
        }
    }

    #[test]
    fn v1_recovers_dataset1_parents() {
        let data = spec_dataset("dataset1", 1000, 0);
        let result = discover_v1(&data, "Y", &IcpParams::default()).unwrap();
        assert!(result.parents.contains(&"X1".to_string()), "{:?}", result.parents);
        assert!(result.parents.contains(&"X2".to_string()), "{:?}", result.parents);
    }

    #[test]
    fn copy_of_target_is_selected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = (0..400).map(|_| normal.sample(&mut rng)).collect();
        let data = Dataset::new(
            vec![
                Column { name: "X1".into(), kind: VariableKind::Continuous },
                Column { name: "Y".into(), kind: VariableKind::Continuous },
            ],
            vec![y.clone(), y],
            None,
        )
        .unwrap();
        let result = discover_v1(&data, "Y", &IcpParams::default()).unwrap();
        assert_eq!(result.parents, vec!["X1".to_string()]);
    }

    #[test]
    fn constant_covariate_is_skipped_with_warning() {
        let mut data_cols = spec_dataset("dataset1", 300, 1);
        let names: Vec<Column> = data_cols.columns().to_vec();
        let mut values: Vec<Vec<f64>> = (0..data_cols.n_cols()).map(|c| data_cols.column_at(c).to_vec()).collect();
        values[0] = vec![1.0; 300];
        data_cols = Dataset::new(names, values, None).unwrap();
        let result = discover_v1(&data_cols, "Y", &IcpParams::default()).unwrap();
        assert!(!result.parents.contains(&"X1".to_string()));
        assert!(result.per_partition["X1"].error.is_some());
        assert!(result.warnings.iter().any(|w| w.starts_with("X1: partition skipped")));
    }

    #[test]
    fn raising_alpha_shrinks_accepted_family() {
        let data = spec_dataset("dataset3", 500, 2);
        let lo = discover_v1(&data, "X2", &IcpParams { alpha: PValue::new(0.01), ..IcpParams::default() }).unwrap();
        let hi = discover_v1(&data, "X2", &IcpParams { alpha: PValue::new(0.2), ..IcpParams::default() }).unwrap();
        for (name, report) in &hi.per_partition {
            let small: Vec<&Vec<String>> = report.subsets.iter().filter(|s| s.accepted).map(|s| &s.subset).collect();
            let big: Vec<&Vec<String>> = lo.per_partition[name].subsets.iter().filter(|s| s.accepted).map(|s| &s.subset).collect();
            assert!(small.iter().all(|s| big.contains(s)));
        }
    }

    #[test]
    fn v2_counts_combinations() {
        let data = spec_dataset("dataset4", 600, 3);
        let result = discover_v2(&data, "Y", &IcpParams::default()).unwrap();
        // 9 covariates, cap 5
        assert_eq!(result.combinations_evaluated, 126);
        for tally in result.votes.values() {
            assert_eq!(tally.eligible, 70);
        }
    }

    #[test]
    fn v2_falls_back_when_cap_covers_everything() {
        let data = spec_dataset("dataset3", 800, 5);
        let v1 = discover_v1(&data, "Y", &IcpParams::default()).unwrap();
        let v2 = discover_v2(&data, "Y", &IcpParams::default()).unwrap();
        assert!(v2.fallback_to_v1);
        assert_eq!(v2.combinations_evaluated, 1);
        assert_eq!(v1.parents, v2.parents);
        assert!(v2.warnings[0].contains("fell back"));
    }

    #[test]
    fn v2_zero_vote_alpha_needs_unanimity() {
        let data = spec_dataset("dataset4", 600, 8);
        let params = IcpParams { alpha_vote: PValue::ZERO, ..IcpParams::default() };
        let result = discover_v2(&data, "Y", &params).unwrap();
        for (name, tally) in &result.votes {
            assert_eq!(result.parents.contains(name), tally.eligible > 0 && tally.selected == tally.eligible);
        }
    }

    #[test]
    fn pure_noise_selections_always_reject_the_empty_set() {
        let spec = SemSpec::new(
            "null",
            vec![
                Equation::source("A", NoiseSpec::gaussian(0.0, 1.0)),
                Equation::source("B", NoiseSpec::gaussian(0.0, 1.0)),
                Equation::source("Y", NoiseSpec::gaussian(0.0, 1.0)),
            ],
            &[],
        )
        .unwrap();
        let mut empty = 0;
        for seed in 0..40 {
            let data = sem::simulate(&spec, 500, seed).unwrap();
            let result = discover_v1(&data, "Y", &IcpParams::default()).unwrap();
            if result.parents.is_empty() {
                empty += 1;
            }
            for parent in &result.parents {
                let report = &result.per_partition[parent];
                let null_fit = report.subsets.iter().find(|s| s.subset.is_empty()).unwrap();
                assert!(!null_fit.accepted);
            }
        }
        // Regression guard on the observed null behaviour (about 80% empty).
        assert!(empty >= 28, "{empty}/40");
    }

    #[test]
    fn method_parsing() {
        assert_eq!("V2".parse::<Method>().unwrap(), Method::V2);
        assert!("v3".parse::<Method>().is_err());
    }
}
