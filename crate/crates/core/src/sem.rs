//! Linear structural equation models and the datasets they generate.
//!
//! Every variable is drawn in equation order as `Σ coefficient · parent + noise`.
//! Randomness comes from ChaCha8 seeded with the run seed, with one stream per
//! variable selected by the FNV-1a hash of the variable name. Each column is
//! therefore a function of `(seed, name)` and its parents only. Unrelated
//! variables can be added or reordered without touching it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Continuous,
    Binary,
    Categorical,
}

impl VariableKind {
    /// Binary and categorical targets are split with a classification tree.
    pub fn is_discrete(self) -> bool {
        !matches!(self, VariableKind::Continuous)
    }
}

impl fmt::Display for VariableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariableKind::Continuous => "continuous",
            VariableKind::Binary => "binary",
            VariableKind::Categorical => "categorical",
        })
    }
}

impl FromStr for VariableKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "continuous" => Ok(VariableKind::Continuous),
            "binary" => Ok(VariableKind::Binary),
            "categorical" => Ok(VariableKind::Categorical),
            other => Err(Error::InvalidDataset(format!("unknown variable kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    /// `std` is a standard deviation, not a variance. `std = 0` makes the
    /// equation deterministic.
    Gaussian { mean: f64, std: f64 },
    Binomial { trials: u64, prob: f64 },
}

impl NoiseSpec {
    pub fn gaussian(mean: f64, std: f64) -> Self {
        NoiseSpec::Gaussian { mean, std }
    }

    pub fn binomial(trials: u64, prob: f64) -> Self {
        NoiseSpec::Binomial { trials, prob }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            NoiseSpec::Gaussian { mean, std } => {
                if !mean.is_finite() || !std.is_finite() || std < 0.0 {
                    return Err(format!("gaussian noise needs finite mean and std >= 0, got N({mean}, {std})"));
                }
            }
            NoiseSpec::Binomial { trials, prob } => {
                if trials < 1 || !(0.0..=1.0).contains(&prob) {
                    return Err(format!("binomial noise needs trials >= 1 and prob in [0,1], got Bin({trials}, {prob})"));
                }
            }
        }
        Ok(())
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match *self {
            NoiseSpec::Gaussian { mean, std: 0.0 } => out.fill(mean),
            NoiseSpec::Gaussian { mean, std } => {
                let normal = Normal::new(mean, std).expect("validated gaussian parameters");
                out.iter_mut().for_each(|v| *v = normal.sample(rng));
            }
            NoiseSpec::Binomial { trials, prob } => {
                let binomial = Binomial::new(trials, prob).expect("validated binomial parameters");
                out.iter_mut().for_each(|v| *v = binomial.sample(rng) as f64);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub parent: String,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equation {
    pub variable: String,
    #[serde(default)]
    pub parents: Vec<Term>,
    pub noise: NoiseSpec,
}

impl Equation {
    /// A pure noise source.
    pub fn source(variable: &str, noise: NoiseSpec) -> Self {
        Equation {
            variable: variable.to_owned(),
            parents: Vec::new(),
            noise,
        }
    }

    pub fn linear(variable: &str, parents: &[(&str, f64)], noise: NoiseSpec) -> Self {
        Equation {
            variable: variable.to_owned(),
            parents: parents
                .iter()
                .map(|&(parent, coef)| Term {
                    parent: parent.to_owned(),
                    coef,
                })
                .collect(),
            noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemSpec {
    pub name: String,
    pub equations: Vec<Equation>,
    pub kinds: BTreeMap<String, VariableKind>,
}

impl SemSpec {
    /// Builds a spec where every variable not listed in `kinds` is continuous.
    pub fn new(name: &str, equations: Vec<Equation>, kinds: &[(&str, VariableKind)]) -> Result<Self> {
        let mut map: BTreeMap<String, VariableKind> = equations
            .iter()
            .map(|eq| (eq.variable.clone(), VariableKind::Continuous))
            .collect();
        for &(var, kind) in kinds {
            map.insert(var.to_owned(), kind);
        }
        let spec = SemSpec {
            name: name.to_owned(),
            equations,
            kinds: map,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidSpec {
            model: self.name.clone(),
            reason,
        };
        if self.equations.is_empty() {
            return Err(fail("no equations".into()));
        }
        let mut defined = HashSet::new();
        for eq in &self.equations {
            eq.noise
                .validate()
                .map_err(|e| fail(format!("variable `{}`: {e}", eq.variable)))?;
            let mut seen = HashSet::new();
            for term in &eq.parents {
                if term.parent == eq.variable {
                    return Err(fail(format!("`{}` depends on itself", eq.variable)));
                }
                if !defined.contains(term.parent.as_str()) {
                    return Err(fail(format!(
                        "`{}` references `{}` before it is defined (unknown parent or cycle)",
                        eq.variable, term.parent
                    )));
                }
                if !term.coef.is_finite() {
                    return Err(fail(format!("non-finite coefficient in `{}`", eq.variable)));
                }
                if !seen.insert(term.parent.as_str()) {
                    return Err(fail(format!("`{}` lists parent `{}` twice", eq.variable, term.parent)));
                }
            }
            if !defined.insert(eq.variable.as_str()) {
                return Err(fail(format!("`{}` is defined twice", eq.variable)));
            }
        }
        for var in &defined {
            if !self.kinds.contains_key(*var) {
                return Err(fail(format!("no kind given for `{var}`")));
            }
        }
        if let Some(extra) = self.kinds.keys().find(|k| !defined.contains(k.as_str())) {
            return Err(fail(format!("kind given for undefined variable `{extra}`")));
        }
        Ok(())
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.equations.iter().map(|eq| eq.variable.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: VariableKind,
}

/// An `n × p` sample matrix, stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    values: Vec<Vec<f64>>,
    seed: Option<u64>,
}

impl Dataset {
    pub fn new(columns: Vec<Column>, values: Vec<Vec<f64>>, seed: Option<u64>) -> Result<Self> {
        if columns.len() < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 columns, got {}", columns.len())));
        }
        if columns.len() != values.len() {
            return Err(Error::InvalidDataset(format!(
                "{} column headers but {} value columns",
                columns.len(),
                values.len()
            )));
        }
        let n = values[0].len();
        if n == 0 {
            return Err(Error::InvalidDataset("no rows".into()));
        }
        let mut names = HashSet::new();
        for (col, vals) in columns.iter().zip(&values) {
            if !names.insert(col.name.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate column `{}`", col.name)));
            }
            if vals.len() != n {
                return Err(Error::InvalidDataset(format!(
                    "column `{}` has {} rows, expected {n}",
                    col.name,
                    vals.len()
                )));
            }
            check_domain(&col.name, col.kind, vals)?;
        }
        Ok(Dataset { columns, values, seed })
    }

    pub fn n_rows(&self) -> usize {
        self.values[0].len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_owned()))
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.values[self.index_of(name)?])
    }

    pub fn column_at(&self, idx: usize) -> &[f64] {
        &self.values[idx]
    }

    pub fn kind_at(&self, idx: usize) -> VariableKind {
        self.columns[idx].kind
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|col| col[i]).collect()
    }
}

pub(crate) fn check_domain(name: &str, kind: VariableKind, vals: &[f64]) -> Result<()> {
    for (row, &v) in vals.iter().enumerate() {
        let ok = match kind {
            VariableKind::Continuous => v.is_finite(),
            VariableKind::Binary => v == 0.0 || v == 1.0,
            VariableKind::Categorical => v.is_finite() && v.fract() == 0.0,
        };
        if !ok {
            return Err(Error::InvalidDataset(format!(
                "column `{name}` ({kind}) row {}: invalid value {v}",
                row + 1
            )));
        }
    }
    Ok(())
}

/// Directed acyclic graph over named variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalGraph {
    nodes: Vec<String>,
    edges: BTreeSet<(String, String)>,
}

impl CausalGraph {
    pub fn new(nodes: Vec<String>, edges: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let edges: BTreeSet<_> = edges.into_iter().collect();
        let known: HashSet<&str> = nodes.iter().map(String::as_str).collect();
        if known.len() != nodes.len() {
            return Err(Error::InvalidParameter("duplicate graph node".into()));
        }
        for (from, to) in &edges {
            if !known.contains(from.as_str()) || !known.contains(to.as_str()) {
                return Err(Error::InvalidParameter(format!("edge {from} -> {to} has an unknown endpoint")));
            }
        }
        let graph = CausalGraph { nodes, edges };
        if !graph.is_acyclic() {
            return Err(Error::InvalidParameter("graph has a directed cycle".into()));
        }
        Ok(graph)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn parents(&self, child: &str) -> BTreeSet<&str> {
        self.edges
            .iter()
            .filter(|(_, to)| to == child)
            .map(|(from, _)| from.as_str())
            .collect()
    }

    fn is_acyclic(&self) -> bool {
        // Kahn's algorithm.
        let mut indegree: HashMap<&str, usize> = self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        for (_, to) in &self.edges {
            *indegree.get_mut(to.as_str()).unwrap() += 1;
        }
        let mut ready: Vec<&str> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
        let mut visited = 0;
        while let Some(node) = ready.pop() {
            visited += 1;
            for (_, to) in self.edges.iter().filter(|(from, _)| from == node) {
                let d = indegree.get_mut(to.as_str()).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(to.as_str());
                }
            }
        }
        visited == self.nodes.len()
    }
}

fn stream_id(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Samples `n` rows from `spec`. Identical `(spec, n, seed)` give bit-identical data.
pub fn simulate(spec: &SemSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(spec.equations.len());
    for eq in &spec.equations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id(&eq.variable));
        let mut col = vec![0.0; n];
        eq.noise.sample_into(&mut rng, &mut col);
        for term in &eq.parents {
            let parent = &values[index[term.parent.as_str()]];
            col.iter_mut().zip(parent).for_each(|(v, &p)| *v += term.coef * p);
        }
        index.insert(&eq.variable, values.len());
        values.push(col);
    }
    let columns = spec
        .equations
        .iter()
        .map(|eq| Column {
            name: eq.variable.clone(),
            kind: spec.kinds[&eq.variable],
        })
        .collect();
    Dataset::new(columns, values, Some(seed))
}

/// One edge per (parent, child) term in the equations.
pub fn ground_truth(spec: &SemSpec) -> Result<CausalGraph> {
    spec.validate()?;
    let nodes = spec.variables().map(str::to_owned).collect();
    let edges = spec
        .equations
        .iter()
        .flat_map(|eq| eq.parents.iter().map(|t| (t.parent.clone(), eq.variable.clone())));
    CausalGraph::new(nodes, edges)
}

/// The five benchmark models, `dataset1` through `dataset5`.
pub fn builtin_specs() -> Vec<SemSpec> {
    use NoiseSpec as N;
    use VariableKind::*;
    let g = N::gaussian;

    let dataset1 = SemSpec::new(
        "dataset1",
        vec![
            Equation::source("X1", g(0.8, 1.0)),
            Equation::source("X2", g(0.5, 1.0)),
            Equation::linear("Y", &[("X1", 0.7), ("X2", 0.4)], g(0.0, 1.0)),
            Equation::linear("X3", &[("Y", 0.5)], g(0.0, 1.0)),
        ],
        &[],
    );

    // X2 is a single Bernoulli(0.5) trial.
    let dataset2 = SemSpec::new(
        "dataset2",
        vec![
            Equation::source("X1", N::binomial(6, 0.5)),
            Equation::source("X2", N::binomial(1, 0.5)),
            Equation::linear("Y", &[("X1", 0.7), ("X2", 0.4)], g(0.0, 1.0)),
            Equation::linear("X3", &[("Y", 0.5)], g(0.0, 1.0)),
        ],
        &[("X1", Categorical), ("X2", Binary)],
    );

    let dataset3 = SemSpec::new(
        "dataset3",
        vec![
            Equation::source("X1", g(0.2, 0.5)),
            Equation::source("W", g(0.5, 1.0)),
            Equation::linear("X2", &[("W", 0.6), ("X1", 0.4)], g(0.0, 1.0)),
            Equation::linear("Y", &[("X2", 0.5), ("W", 0.5)], g(0.0, 1.0)),
            Equation::linear("Y2", &[("X2", 0.7)], g(0.2, 1.0)),
            Equation::linear("X3", &[("Y", 0.3)], g(0.0, 1.0)),
        ],
        &[],
    );

    let dataset4 = SemSpec::new(
        "dataset4",
        vec![
            Equation::source("X", g(0.2, 0.8)),
            Equation::source("X1", g(0.0, 1.1)),
            Equation::linear("X0", &[("X", 0.5)], g(0.0, 0.5)),
            Equation::linear("W", &[("X", 1.0)], g(0.0, 1.0)),
            // No noise term: X2 is an exact linear combination of its parents.
            Equation::linear("X2", &[("X1", 0.5), ("W", 0.5), ("X0", 0.5)], g(0.0, 0.0)),
            Equation::linear("Y", &[("X2", 0.5), ("W", 0.5)], g(0.0, 1.0)),
            Equation::linear("Y2", &[("X2", 0.7)], g(0.2, 1.0)),
            Equation::linear("X3", &[("Y", 0.5)], g(0.0, 1.0)),
            Equation::linear("X4", &[("W", 1.0)], g(0.0, 1.0)),
            Equation::linear("X5", &[("X4", 0.8)], g(0.0, 1.0)),
        ],
        &[],
    );

    let dataset5 = SemSpec::new(
        "dataset5",
        vec![
            Equation::source("X", g(0.2, 0.8)),
            Equation::source("X1", g(0.0, 1.1)),
            Equation::source("X9", g(0.4, 0.75)),
            Equation::linear("X0", &[("X", 0.5)], g(0.0, 0.5)),
            Equation::linear("W", &[("X", 1.0)], g(0.0, 1.0)),
            Equation::linear("X2", &[("X1", 0.5), ("W", 0.5), ("X0", 0.5)], g(0.0, 0.0)),
            Equation::linear("Y", &[("X2", 0.5), ("W", 0.5), ("X9", 0.5)], g(0.0, 1.0)),
            Equation::linear("Y2", &[("X2", 0.7)], g(0.2, 1.0)),
            Equation::linear("X3", &[("Y", 0.5)], g(0.0, 1.0)),
            Equation::linear("X4", &[("W", 1.0)], g(0.0, 1.0)),
            Equation::linear("X5", &[("X4", 0.8)], g(0.0, 1.0)),
            Equation::linear("X6", &[("X3", 1.0)], g(0.0, 1.0)),
            Equation::linear("X7", &[("X6", 0.1)], g(0.2, 0.5)),
        ],
        &[],
    );

    [dataset1, dataset2, dataset3, dataset4, dataset5]
        .into_iter()
        .map(|s| s.expect("builtin specs are valid"))
        .collect()
}

pub fn builtin_names() -> Vec<String> {
    builtin_specs().into_iter().map(|s| s.name).collect()
}

pub fn builtin_spec(name: &str) -> Option<SemSpec> {
    builtin_specs().into_iter().find(|s| s.name == name)
}
