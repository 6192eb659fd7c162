//! Whole-graph reconstruction and TPR/FDR scoring.
//!
//! Every variable takes a turn as the target; the discovered parent sets are
//! merged into one undirected graph and compared with the generating model's
//! graph as unordered pairs. Orientation is not recovered, so a child found
//! as a "parent" of its own parent counts as a hit.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::icp::{self, IcpParams};
pub use crate::icp::Method;
use crate::io::GraphDocument;
use crate::sem::{self, CausalGraph, SemSpec};

/// Node set plus unordered adjacencies.
pub trait Adjacency {
    fn node_set(&self) -> BTreeSet<&str>;
    fn adjacencies(&self) -> BTreeSet<(&str, &str)>;
}

fn unordered<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Adjacency for CausalGraph {
    fn node_set(&self) -> BTreeSet<&str> {
        self.nodes().iter().map(String::as_str).collect()
    }

    fn adjacencies(&self) -> BTreeSet<(&str, &str)> {
        self.edges().iter().map(|(a, b)| unordered(a, b)).collect()
    }
}

impl Adjacency for GraphDocument {
    fn node_set(&self) -> BTreeSet<&str> {
        self.nodes.iter().map(String::as_str).collect()
    }

    fn adjacencies(&self) -> BTreeSet<(&str, &str)> {
        self.edges.iter().map(|e| unordered(&e.from, &e.to)).collect()
    }
}

/// `(TPR, FDR)` over unordered adjacencies. An empty prediction has FDR 0,
/// an empty truth has TPR 1.
pub fn score(predicted: &impl Adjacency, truth: &impl Adjacency) -> Result<(f64, f64)> {
    if predicted.node_set() != truth.node_set() {
        return Err(Error::NodeMismatch);
    }
    let found = predicted.adjacencies();
    let real = truth.adjacencies();
    let hits = found.intersection(&real).count() as f64;
    let tpr = if real.is_empty() { 1.0 } else { hits / real.len() as f64 };
    let fdr = if found.is_empty() {
        0.0
    } else {
        (found.len() as f64 - hits) / found.len() as f64
    };
    Ok((tpr, fdr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub seed: u64,
    pub predicted: GraphDocument,
    pub parents: BTreeMap<String, Vec<String>>,
    pub tpr: f64,
    pub fdr: f64,
    /// Targets whose discovery failed; they contribute no edges.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub spec_name: String,
    pub method: Method,
    pub n: usize,
    pub n_sims: usize,
    pub seeds: Vec<u64>,
    pub params: IcpParams,
    pub per_sim: Vec<SimOutcome>,
    pub mean_tpr: f64,
    pub mean_fdr: f64,
}

/// `base_seed, base_seed + 1, …`
pub fn default_seeds(base_seed: u64, n_sims: usize) -> Vec<u64> {
    (0..n_sims as u64).map(|i| base_seed + i).collect()
}

pub fn run_experiment(
    spec: &SemSpec,
    method: Method,
    n: usize,
    seeds: &[u64],
    params: &IcpParams,
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("need at least one simulation".into()));
    }
    params.validate()?;
    let truth = sem::ground_truth(spec)?;
    let per_sim = seeds
        .iter()
        .map(|&seed| run_one(spec, &truth, method, n, seed, params))
        .collect::<Result<Vec<_>>>()?;
    let count = per_sim.len() as f64;
    let mean_tpr = per_sim.iter().map(|s| s.tpr).sum::<f64>() / count;
    let mean_fdr = per_sim.iter().map(|s| s.fdr).sum::<f64>() / count;
    Ok(EvalReport {
        spec_name: spec.name.clone(),
        method,
        n,
        n_sims: seeds.len(),
        seeds: seeds.to_vec(),
        params: params.clone(),
        per_sim,
        mean_tpr,
        mean_fdr,
    })
}

fn run_one(
    spec: &SemSpec,
    truth: &CausalGraph,
    method: Method,
    n: usize,
    seed: u64,
    params: &IcpParams,
) -> Result<SimOutcome> {
    let data = sem::simulate(spec, n, seed)?;
    let targets: Vec<&str> = data.names().collect();
    let results: Vec<(String, std::result::Result<Vec<String>, String>)> = targets
        .par_iter()
        .map(|&target| {
            let found = icp::discover(&data, target, method, params)
                .map(|r| r.parents)
                .map_err(|e| e.to_string());
            (target.to_owned(), found)
        })
        .collect();

    let mut parents = BTreeMap::new();
    let mut failures = Vec::new();
    for (target, found) in results {
        match found {
            Ok(ps) => {
                parents.insert(target, ps);
            }
            Err(e) => failures.push(format!("{target}: {e}")),
        }
    }
    let metadata = BTreeMap::from([
        ("method".to_string(), method.to_string()),
        ("alpha".to_string(), params.alpha.get().to_string()),
        ("seed".to_string(), seed.to_string()),
    ]);
    let predicted = GraphDocument::from_discoveries(
        &spec.name,
        data.names().map(str::to_owned),
        parents.iter().map(|(t, ps)| (t.as_str(), ps.as_slice())),
        metadata,
    )?;
    let (tpr, fdr) = score(&predicted, truth)?;
    Ok(SimOutcome {
        seed,
        predicted,
        parents,
        tpr,
        fdr,
        failures,
    })
}

/// Two tables (TPR, then FDR): one row per model, one column per method.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut rows: Vec<&str> = Vec::new();
    for r in reports {
        if !rows.contains(&r.spec_name.as_str()) {
            rows.push(&r.spec_name);
        }
    }
    let methods: BTreeSet<Method> = reports.iter().map(|r| r.method).collect();
    let lookup = |row: &str, m: Method| reports.iter().find(|r| r.spec_name == row && r.method == m);
    let width = rows.iter().map(|r| r.len()).max().unwrap_or(0).max(8);

    let mut out = String::new();
    for (title, pick) in [("TPR", 0), ("FDR", 1)] {
        out.push_str(&format!("{title:<width$}"));
        for m in &methods {
            out.push_str(&format!("  {:>6}", m.to_string()));
        }
        out.push('\n');
        for row in &rows {
            out.push_str(&format!("{row:<width$}"));
            for &m in &methods {
                let cell = match lookup(row, m) {
                    Some(r) if pick == 0 => format!("{:.3}", r.mean_tpr),
                    Some(r) => format!("{:.3}", r.mean_fdr),
                    None => "-".into(),
                };
                out.push_str(&format!("  {cell:>6}"));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::GraphEdge;

    fn doc(nodes: &[&str], edges: &[(&str, &str)]) -> GraphDocument {
        GraphDocument::new(
            "g",
            nodes.iter().map(|s| s.to_string()),
            edges.iter().map(|(a, b)| GraphEdge { from: a.to_string(), to: b.to_string(), directed: true }),
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let truth = sem::ground_truth(&sem::builtin_spec("dataset1").unwrap()).unwrap();
        assert_eq!(score(&truth, &truth).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn empty_prediction() {
        let nodes = ["A", "B", "C", "Y"];
        let truth = doc(&nodes, &[("A", "Y")]);
        assert_eq!(score(&doc(&nodes, &[]), &truth).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn half_right() {
        let nodes = ["A", "B", "C", "Y"];
        let truth = doc(&nodes, &[("A", "Y"), ("B", "Y")]);
        let predicted = doc(&nodes, &[("A", "Y"), ("C", "Y")]);
        assert_eq!(score(&predicted, &truth).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn direction_is_ignored() {
        let nodes = ["A", "B", "Y"];
        let truth = doc(&nodes, &[("A", "Y"), ("B", "Y")]);
        let flipped = doc(&nodes, &[("Y", "A"), ("B", "Y")]);
        assert_eq!(score(&flipped, &truth).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn node_mismatch_is_an_error() {
        let a = doc(&["A", "B"], &[]);
        let b = doc(&["A", "C"], &[]);
        assert!(matches!(score(&a, &b), Err(Error::NodeMismatch)));
    }

    #[test]
    fn single_simulation_means_equal_the_run() {
        let spec = sem::builtin_spec("dataset1").unwrap();
        let report = run_experiment(&spec, Method::V1, 400, &[7], &IcpParams::default()).unwrap();
        assert_eq!(report.per_sim.len(), 1);
        assert_eq!(report.mean_tpr, report.per_sim[0].tpr);
        assert_eq!(report.mean_fdr, report.per_sim[0].fdr);
    }

    #[test]
    fn reports_are_reproducible() {
        let spec = sem::builtin_spec("dataset2").unwrap();
        let a = run_experiment(&spec, Method::V1, 300, &[1, 2], &IcpParams::default()).unwrap();
        let b = run_experiment(&spec, Method::V1, 300, &[1, 2], &IcpParams::default()).unwrap();
        assert_eq!(crate::io::to_json(&a).unwrap(), crate::io::to_json(&b).unwrap());
        let mean = a.per_sim.iter().map(|s| s.tpr).sum::<f64>() / 2.0;
        assert!((a.mean_tpr - mean).abs() < 1e-12);
    }

    #[test]
    fn table_layout() {
        let spec = sem::builtin_spec("dataset1").unwrap();
        let report = run_experiment(&spec, Method::V1, 300, &[3], &IcpParams::default()).unwrap();
        let table = render_table(&[report]);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("TPR") && lines[0].ends_with("v1"));
        assert!(lines[1].starts_with("dataset1"));
        assert!(lines[3].starts_with("FDR"));
    }
}
