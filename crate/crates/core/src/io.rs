//! CSV for datasets and JSON for models and reports. Graphs export to DOT.
//!
//! Dataset CSVs carry a `name:kind` header per column. The simulation seed
//! lives next to the CSV in `<file>.meta.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sem::{CausalGraph, Column, Dataset, SemSpec, VariableKind};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: String,
    pub to: String,
    pub directed: bool,
}

/// A graph for export. Discovered edges are undirected: the method finds
/// adjacencies, not orientations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub name: String,
    pub nodes: Vec<String>,
    pub edges: Vec<GraphEdge>,
    pub metadata: BTreeMap<String, String>,
}

impl GraphDocument {
    pub fn new(
        name: &str,
        nodes: impl IntoIterator<Item = String>,
        edges: impl IntoIterator<Item = GraphEdge>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let nodes: BTreeSet<String> = nodes.into_iter().collect();
        let mut edges: Vec<GraphEdge> = edges
            .into_iter()
            .map(|e| {
                // Undirected edges are stored with sorted endpoints.
                if !e.directed && e.from > e.to {
                    GraphEdge { from: e.to, to: e.from, directed: false }
                } else {
                    e
                }
            })
            .collect();
        edges.sort();
        edges.dedup();
        for e in &edges {
            if !nodes.contains(&e.from) || !nodes.contains(&e.to) {
                return Err(Error::InvalidParameter(format!(
                    "edge {} - {} has an endpoint outside the node list",
                    e.from, e.to
                )));
            }
        }
        Ok(GraphDocument {
            name: name.to_owned(),
            nodes: nodes.into_iter().collect(),
            edges,
            metadata,
        })
    }

    pub fn from_causal_graph(name: &str, graph: &CausalGraph) -> Self {
        let edges = graph.edges().iter().map(|(from, to)| GraphEdge {
            from: from.clone(),
            to: to.clone(),
            directed: true,
        });
        GraphDocument::new(name, graph.nodes().iter().cloned(), edges, BTreeMap::new())
            .expect("causal graph endpoints are nodes")
    }

    /// Undirected edges between each target and its discovered parents.
    pub fn from_discoveries<'a>(
        name: &str,
        nodes: impl IntoIterator<Item = String>,
        parents: impl IntoIterator<Item = (&'a str, &'a [String])>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let edges: Vec<GraphEdge> = parents
            .into_iter()
            .flat_map(|(target, ps)| {
                ps.iter().map(move |p| GraphEdge {
                    from: p.clone(),
                    to: target.to_owned(),
                    directed: false,
                })
            })
            .collect();
        GraphDocument::new(name, nodes, edges, metadata)
    }
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz digraph text. Nodes and edges come out sorted.
pub fn to_dot(graph: &GraphDocument) -> String {
    let mut out = format!("digraph {} {{\n", dot_id(&graph.name));
    for (key, value) in &graph.metadata {
        out.push_str(&format!("  // {key}: {value}\n"));
    }
    for node in &graph.nodes {
        out.push_str(&format!("  {};\n", dot_id(node)));
    }
    for e in &graph.edges {
        let attr = if e.directed { "" } else { " [dir=none]" };
        out.push_str(&format!("  {} -> {}{attr};\n", dot_id(&e.from), dot_id(&e.to)));
    }
    out.push_str("}\n");
    out
}

pub fn export_dot(graph: &GraphDocument, path: &Path) -> Result<()> {
    std::fs::write(path, to_dot(graph))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    pub seed: Option<u64>,
    pub rows: usize,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes the CSV and its metadata sidecar.
pub fn write_dataset(dataset: &Dataset, path: &Path, spec: Option<&str>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header: Vec<String> = dataset.columns().iter().map(|c| format!("{}:{}", c.name, c.kind)).collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..dataset.n_rows() {
        // `Display` for f64 is the shortest string that parses back exactly.
        let row: Vec<String> = dataset.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    let meta = DatasetMeta {
        spec: spec.map(str::to_owned),
        seed: dataset.seed(),
        rows: dataset.n_rows(),
    };
    write_json(&meta, &meta_path(path))
}

/// Reads a dataset CSV. Returns warnings (such as headers without a kind).
pub fn read_dataset(path: &Path) -> Result<(Dataset, Vec<String>)> {
    let parse_err = |line: u64, reason: String| Error::Parse {
        path: path.to_owned(),
        line,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut warnings = Vec::new();
    let mut columns = Vec::new();
    for field in reader.headers()?.iter() {
        let (name, kind) = match field.rsplit_once(':') {
            Some((name, kind)) => {
                let kind: VariableKind = kind.parse().map_err(|_| parse_err(1, format!("unknown kind in header `{field}`")))?;
                (name.trim(), kind)
            }
            None => {
                warnings.push(format!("column `{}` has no kind; assuming continuous", field.trim()));
                (field.trim(), VariableKind::Continuous)
            }
        };
        if name.is_empty() {
            return Err(parse_err(1, "empty column name".into()));
        }
        columns.push(Column { name: name.to_owned(), kind });
    }

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("column `{}`: `{cell}` is not a number", columns[c].name)))?;
            values[c].push(v);
        }
    }
    let meta_file = meta_path(path);
    let seed = if meta_file.exists() {
        let meta: DatasetMeta = serde_json::from_reader(File::open(&meta_file)?)?;
        meta.seed
    } else {
        None
    };
    Ok((Dataset::new(columns, values, seed)?, warnings))
}

pub fn read_spec(path: &Path) -> Result<SemSpec> {
    let spec: SemSpec = serde_json::from_reader(File::open(path)?)?;
    spec.validate()?;
    Ok(spec)
}

pub fn write_spec(spec: &SemSpec, path: &Path) -> Result<()> {
    write_json(spec, path)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::{builtin_spec, ground_truth, simulate};

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d2.csv");
        let data = simulate(&builtin_spec("dataset2").unwrap(), 64, 17).unwrap();
        write_dataset(&data, &path, Some("dataset2")).unwrap();
        let (back, warnings) = read_dataset(&path).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(back, data);
        assert_eq!(back.seed(), Some(17));
    }

    #[test]
    fn binary_domain_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x1:continuous,y:binary\n0.5,1\n0.25,2\n").unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::InvalidDataset(_)), "{err}");
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn missing_kind_defaults_to_continuous() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.csv");
        std::fs::write(&path, "a,b:binary\n0.5,1\n1.5,0\n").unwrap();
        let (data, warnings) = read_dataset(&path).unwrap();
        assert_eq!(data.kind_at(0), VariableKind::Continuous);
        assert_eq!(warnings.len(), 1);
        assert_eq!(data.seed(), None);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1,2\n3,x\n").unwrap();
        match read_dataset(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
        std::fs::write(&path, "a,b\n1,2\n3\n").unwrap();
        match read_dataset(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn spec_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.json");
        let spec = builtin_spec("dataset2").unwrap();
        write_spec(&spec, &path).unwrap();
        assert_eq!(read_spec(&path).unwrap(), spec);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"trials\": 1"));
    }

    #[test]
    fn empty_graph_dot() {
        let g = GraphDocument::new("empty", ["B".to_string(), "A".to_string()], [], BTreeMap::new()).unwrap();
        assert_eq!(to_dot(&g), "digraph \"empty\" {\n  \"A\";\n  \"B\";\n}\n");
    }

    #[test]
    fn ground_truth_dot() {
        let truth = ground_truth(&builtin_spec("dataset1").unwrap()).unwrap();
        let doc = GraphDocument::from_causal_graph("dataset1", &truth);
        let dot = to_dot(&doc);
        assert_eq!(dot.matches("->").count(), 3);
        assert!(dot.contains("\"X1\" -> \"Y\";"));
        assert!(!dot.contains("dir=none"));
    }

    #[test]
    fn discovered_edges_are_undirected_and_sorted() {
        let ys = vec!["X2".to_string(), "X1".to_string()];
        let xs = vec!["Y".to_string()];
        let doc = GraphDocument::from_discoveries(
            "found",
            ["X1", "X2", "Y"].map(String::from),
            [("Y", ys.as_slice()), ("X1", xs.as_slice())],
            BTreeMap::from([("method".to_string(), "v1".to_string())]),
        )
        .unwrap();
        // Y-X1 found from both sides collapses to one edge.
        assert_eq!(doc.edges.len(), 2);
        let dot = to_dot(&doc);
        assert!(dot.contains("  // method: v1\n"));
        assert!(dot.contains("\"X1\" -> \"Y\" [dir=none];\n  \"X2\" -> \"Y\" [dir=none];"));
    }
}
