//! Node-classification datasets: the portable on-disk format, a planted
//! partition generator, and transductive splits.
//!
//! A dataset directory holds five UTF-8 files:
//!
//! | file            | content                                              |
//! |-----------------|------------------------------------------------------|
//! | `meta.json`     | `{"num_nodes": N, "num_features": F, "num_classes": C}` |
//! | `edges.tsv`     | `u<TAB>v` per line                                   |
//! | `features.tsv`  | sparse triplets `node<TAB>dim<TAB>value`             |
//! | `labels.tsv`    | `node<TAB>class`                                     |
//! | `splits.json`   | `{"train": [...], "val": [...], "test": [...]}`      |

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, LinkStats, SparseGraph};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing dataset file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", file.display())]
    Malformed {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}:{line}: {what} {value} out of range (limit {limit})", file.display())]
    OutOfRange {
        file: PathBuf,
        line: usize,
        what: &'static str,
        value: usize,
        limit: usize,
    },
    #[error("{}: node {node} appears in both the {first} and {second} splits", file.display())]
    SplitOverlap {
        file: PathBuf,
        node: usize,
        first: &'static str,
        second: &'static str,
    },
    #[error("{}: {message}", file.display())]
    Json { file: PathBuf, message: String },
    #[error("{}: node {node} has no label", file.display())]
    MissingLabel { file: PathBuf, node: usize },
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Transductive train/validation/test partition of node ids.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDataset<T> {
    pub graph: SparseGraph,
    /// `num_nodes × num_features`.
    pub features: Array2<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: Splits,
}

impl<T: Scalar> NodeDataset<T> {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    /// Writes the dataset in the portable directory format. Feature values
    /// are written with shortest round-trip formatting and zeros omitted.
    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let meta = Meta {
            num_nodes: self.num_nodes(),
            num_features: self.num_features(),
            num_classes: self.num_classes,
        };
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| DatasetError::Io { path, source })
        };
        write("meta.json", json_line(&meta))?;
        write("splits.json", json_line(&self.splits))?;

        let mut edges = String::new();
        for (u, v) in self.graph.edges() {
            let _ = writeln!(edges, "{u}\t{v}");
        }
        write("edges.tsv", edges)?;

        let mut feats = String::new();
        for (i, row) in self.features.outer_iter().enumerate() {
            for (d, &x) in row.iter().enumerate() {
                if x != T::zero() {
                    let _ = writeln!(feats, "{i}\t{d}\t{x}");
                }
            }
        }
        write("features.tsv", feats)?;

        let mut labels = String::new();
        for (i, c) in self.labels.iter().enumerate() {
            let _ = writeln!(labels, "{i}\t{c}");
        }
        write("labels.tsv", labels)
    }
}

fn json_line<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string(value).expect("plain structs serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Meta {
    num_nodes: usize,
    num_features: usize,
    num_classes: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Divide each feature row by its L1 norm when the row is nonzero.
    pub normalize_features: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            normalize_features: true,
        }
    }
}

/// Side information from a load that is not part of the dataset itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadReport {
    pub links: LinkStats,
}

pub fn load_dataset<T: Scalar>(dir: &Path, options: LoadOptions) -> Result<(NodeDataset<T>, LoadReport), DatasetError> {
    if !dir.is_dir() {
        return Err(DatasetError::MissingFile(dir.to_path_buf()));
    }
    let meta: Meta = read_json(&dir.join("meta.json"))?;
    let n = meta.num_nodes;

    let edges_path = dir.join("edges.tsv");
    let mut links = Vec::new();
    for_each_record(&edges_path, 2, |line, fields| {
        let u = parse_index(&edges_path, line, fields[0], "node", n)?;
        let v = parse_index(&edges_path, line, fields[1], "node", n)?;
        links.push((u, v));
        Ok(())
    })?;
    let (graph, link_stats) = SparseGraph::from_links(n, links)?;

    let feat_path = dir.join("features.tsv");
    let mut features = Array2::<T>::zeros((n, meta.num_features));
    for_each_record(&feat_path, 3, |line, fields| {
        let node = parse_index(&feat_path, line, fields[0], "node", n)?;
        let dim = parse_index(&feat_path, line, fields[1], "feature", meta.num_features)?;
        let value: T = fields[2].parse().map_err(|_| DatasetError::Malformed {
            file: feat_path.clone(),
            line,
            message: format!("bad feature value {:?}", fields[2]),
        })?;
        if !value.is_finite() {
            return Err(DatasetError::Malformed {
                file: feat_path.clone(),
                line,
                message: format!("non-finite feature value {:?}", fields[2]),
            });
        }
        features[[node, dim]] = value;
        Ok(())
    })?;
    if options.normalize_features {
        l1_normalize_rows(&mut features);
    }

    let label_path = dir.join("labels.tsv");
    let mut labels = vec![None; n];
    for_each_record(&label_path, 2, |line, fields| {
        let node = parse_index(&label_path, line, fields[0], "node", n)?;
        let class = parse_index(&label_path, line, fields[1], "class", meta.num_classes)?;
        labels[node] = Some(class);
        Ok(())
    })?;
    let labels = labels
        .into_iter()
        .enumerate()
        .map(|(node, l)| {
            l.ok_or_else(|| DatasetError::MissingLabel {
                file: label_path.clone(),
                node,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let split_path = dir.join("splits.json");
    let splits: Splits = read_json(&split_path)?;
    validate_splits(&split_path, &splits, n)?;

    Ok((
        NodeDataset {
            graph,
            features,
            labels,
            num_classes: meta.num_classes,
            splits,
        },
        LoadReport { links: link_stats },
    ))
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DatasetError::MissingFile(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D, DatasetError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Json {
        file: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Calls `f(line_number, fields)` for every non-blank line of a TSV file.
fn for_each_record<F>(path: &Path, arity: usize, mut f: F) -> Result<(), DatasetError>
where
    F: FnMut(usize, &[&str]) -> Result<(), DatasetError>,
{
    let text = read_text(path)?;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != arity {
            return Err(DatasetError::Malformed {
                file: path.to_path_buf(),
                line,
                message: format!("expected {arity} tab-separated fields, found {}", fields.len()),
            });
        }
        f(line, &fields)?;
    }
    Ok(())
}

fn parse_index(path: &Path, line: usize, field: &str, what: &'static str, limit: usize) -> Result<usize, DatasetError> {
    let value: usize = field.trim().parse().map_err(|_| DatasetError::Malformed {
        file: path.to_path_buf(),
        line,
        message: format!("bad {what} id {field:?}"),
    })?;
    if value >= limit {
        return Err(DatasetError::OutOfRange {
            file: path.to_path_buf(),
            line,
            what,
            value,
            limit,
        });
    }
    Ok(value)
}

fn validate_splits(path: &Path, splits: &Splits, n: usize) -> Result<(), DatasetError> {
    let mut owner: HashMap<usize, &'static str> = HashMap::new();
    for (name, members) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        for &node in members {
            if node >= n {
                return Err(DatasetError::OutOfRange {
                    file: path.to_path_buf(),
                    line: 1,
                    what: "split node",
                    value: node,
                    limit: n,
                });
            }
            if let Some(first) = owner.insert(node, name) {
                return Err(DatasetError::SplitOverlap {
                    file: path.to_path_buf(),
                    node,
                    first,
                    second: name,
                });
            }
        }
    }
    Ok(())
}

/// Divides each row by its L1 norm; all-zero rows are left alone. For
/// nonnegative features this is division by the row sum.
pub fn l1_normalize_rows<T: Scalar>(features: &mut Array2<T>) {
    for mut row in features.outer_iter_mut() {
        let norm: T = row.iter().map(|x| x.abs()).sum();
        if norm != T::zero() {
            row.mapv_inplace(|x| x / norm);
        }
    }
}

/// Planted-partition generator for desk-scale experiments.
///
/// Node `i` belongs to class `i % num_classes`. Each unordered pair is
/// joined with probability `intra_edge_prob` when the classes agree and
/// `inter_edge_prob` otherwise. Feature dimension `d` carries
/// `feature_signal` when `d % num_classes` equals the node's class, and
/// every entry receives standard normal noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub num_features: usize,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    pub feature_signal: f64,
    pub seed: u64,
    /// Per-class fraction of nodes placed in the training split.
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_nodes: 60,
            num_classes: 3,
            num_features: 10,
            intra_edge_prob: 0.2,
            inter_edge_prob: 0.01,
            feature_signal: 1.0,
            seed: 7,
            train_fraction: 0.2,
            val_fraction: 0.2,
        }
    }
}

impl SyntheticConfig {
    /// 150 nodes with no inter-class edges. Each node's own features are
    /// weak (shift 0.75 against unit noise), so correct predictions lean on
    /// same-class neighbors; a 2-layer GCN still classifies every node.
    pub fn separable(seed: u64) -> Self {
        Self {
            num_nodes: 150,
            intra_edge_prob: 0.2,
            inter_edge_prob: 0.0,
            feature_signal: 0.75,
            seed,
            ..Self::default()
        }
    }

    /// Labels independent of both features and topology.
    pub fn zero_signal(seed: u64) -> Self {
        Self {
            num_nodes: 150,
            intra_edge_prob: 0.2,
            inter_edge_prob: 0.2,
            feature_signal: 0.0,
            seed,
            ..Self::default()
        }
    }
}

pub fn generate_synthetic<T: Scalar>(config: &SyntheticConfig) -> Result<NodeDataset<T>, DatasetError> {
    let bad = |msg: String| Err(DatasetError::InvalidConfig(msg));
    if config.num_classes == 0 {
        return bad("num_classes must be positive".into());
    }
    if config.num_nodes < config.num_classes {
        return bad(format!(
            "num_nodes ({}) must be at least num_classes ({})",
            config.num_nodes, config.num_classes
        ));
    }
    if config.num_features == 0 {
        return bad("num_features must be positive".into());
    }
    for (name, p) in [
        ("intra_edge_prob", config.intra_edge_prob),
        ("inter_edge_prob", config.inter_edge_prob),
        ("train_fraction", config.train_fraction),
        ("val_fraction", config.val_fraction),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return bad(format!("{name} = {p} is not a probability"));
        }
    }
    if config.train_fraction + config.val_fraction > 1.0 {
        return bad("train_fraction + val_fraction exceeds 1".into());
    }
    if !config.feature_signal.is_finite() {
        return bad("feature_signal must be finite".into());
    }

    let n = config.num_nodes;
    let c = config.num_classes;
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();

    // Separate streams keep the topology fixed when only feature settings change.
    let mut edge_rng = rng::seeded(config.seed, 0);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] {
                config.intra_edge_prob
            } else {
                config.inter_edge_prob
            };
            if edge_rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = SparseGraph::new(n, edges)?;

    let mut feat_rng = rng::seeded(config.seed, 1);
    let features = Array2::from_shape_fn((n, config.num_features), |(i, d)| {
        let noise: f64 = StandardNormal.sample(&mut feat_rng);
        let signal = if d % c == labels[i] { config.feature_signal } else { 0.0 };
        T::of(signal + noise)
    });

    let mut split_rng = rng::seeded(config.seed, 2);
    let mut splits = Splits::default();
    for class in 0..c {
        let mut members: Vec<usize> = (class..n).step_by(c).collect();
        members.shuffle(&mut split_rng);
        let m = members.len();
        let n_train = ((m as f64) * config.train_fraction).floor() as usize;
        let n_val = ((m as f64) * config.val_fraction).floor() as usize;
        splits.train.extend_from_slice(&members[..n_train]);
        splits.val.extend_from_slice(&members[n_train..n_train + n_val]);
        splits.test.extend_from_slice(&members[n_train + n_val..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();

    Ok(NodeDataset {
        graph,
        features,
        labels,
        num_classes: c,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_fixture(dir: &Path, files: &[(&str, &str)]) {
        for (name, body) in files {
            fs::write(dir.join(name), body).unwrap();
        }
    }

    const META: &str = r#"{"num_nodes": 3, "num_features": 2, "num_classes": 2}"#;
    const EDGES: &str = "0\t1\n1\t0\n1\t2\n";
    const FEATS: &str = "0\t0\t1\n0\t1\t3\n2\t1\t0.5\n";
    const LABELS: &str = "0\t0\n1\t1\n2\t1\n";
    const SPLITS: &str = r#"{"train": [0], "val": [1], "test": [2]}"#;

    fn minimal(dir: &Path) {
        write_fixture(
            dir,
            &[
                ("meta.json", META),
                ("edges.tsv", EDGES),
                ("features.tsv", FEATS),
                ("labels.tsv", LABELS),
                ("splits.json", SPLITS),
            ],
        );
    }

    #[test]
    fn loads_minimal_fixture() {
        let tmp = tempdir().unwrap();
        minimal(tmp.path());
        let (ds, report) = load_dataset::<f64>(tmp.path(), LoadOptions::default()).unwrap();
        assert_eq!(ds.num_nodes(), 3);
        assert_eq!(ds.graph.num_edges(), 2);
        assert_eq!(report.links.raw_links, 3);
        assert_eq!(ds.features.row(0).to_vec(), vec![0.25, 0.75]);
        assert_eq!(ds.features.row(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(ds.features.row(2).to_vec(), vec![0.0, 1.0]);
        assert_eq!(ds.labels, vec![0, 1, 1]);
        assert_eq!(ds.splits.test, vec![2]);
    }

    #[test]
    fn round_trips_through_save() {
        let tmp = tempdir().unwrap();
        minimal(tmp.path());
        let raw = LoadOptions {
            normalize_features: false,
        };
        let (ds, _) = load_dataset::<f64>(tmp.path(), raw).unwrap();
        let out = tempdir().unwrap();
        ds.save(out.path()).unwrap();
        let (again, _) = load_dataset::<f64>(out.path(), raw).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn missing_file_is_named() {
        let tmp = tempdir().unwrap();
        minimal(tmp.path());
        fs::remove_file(tmp.path().join("labels.tsv")).unwrap();
        let err = load_dataset::<f64>(tmp.path(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, DatasetError::MissingFile(ref p) if p.ends_with("labels.tsv")), "{err}");
    }

    #[test]
    fn malformed_line_reports_position() {
        let tmp = tempdir().unwrap();
        minimal(tmp.path());
        write_fixture(tmp.path(), &[("edges.tsv", "0\t1\n1 2\n")]);
        let err = load_dataset::<f64>(tmp.path(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, DatasetError::Malformed { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("edges.tsv:2"));
    }

    #[test]
    fn index_out_of_range() {
        let tmp = tempdir().unwrap();
        minimal(tmp.path());
        write_fixture(tmp.path(), &[("labels.tsv", "0\t0\n1\t2\n2\t1\n")]);
        let err = load_dataset::<f64>(tmp.path(), LoadOptions::default()).unwrap_err();
        assert!(
            matches!(err, DatasetError::OutOfRange { line: 2, what: "class", value: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn split_overlap_rejected() {
        let tmp = tempdir().unwrap();
        minimal(tmp.path());
        write_fixture(tmp.path(), &[("splits.json", r#"{"train": [0], "val": [0], "test": [2]}"#)]);
        let err = load_dataset::<f64>(tmp.path(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, DatasetError::SplitOverlap { node: 0, .. }), "{err}");
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticConfig::default();
        let a = generate_synthetic::<f64>(&cfg).unwrap();
        let b = generate_synthetic::<f64>(&cfg).unwrap();
        assert_eq!(a, b);
        let (da, db) = (tempdir().unwrap(), tempdir().unwrap());
        a.save(da.path()).unwrap();
        b.save(db.path()).unwrap();
        for f in ["meta.json", "edges.tsv", "features.tsv", "labels.tsv", "splits.json"] {
            assert_eq!(fs::read(da.path().join(f)).unwrap(), fs::read(db.path().join(f)).unwrap());
        }
    }

    #[test]
    fn synthetic_splits_are_stratified_and_disjoint() {
        let ds = generate_synthetic::<f64>(&SyntheticConfig::default()).unwrap();
        assert_eq!(ds.splits.train.len(), 12);
        assert_eq!(ds.splits.val.len(), 12);
        assert_eq!(ds.splits.test.len(), 36);
        for class in 0..3 {
            let n = ds.splits.train.iter().filter(|&&i| ds.labels[i] == class).count();
            assert_eq!(n, 4);
        }
        let path = PathBuf::from("synthetic");
        validate_splits(&path, &ds.splits, ds.num_nodes()).unwrap();
    }

    #[test]
    fn no_inter_edges_when_prob_zero() {
        let cfg = SyntheticConfig {
            inter_edge_prob: 0.0,
            ..SyntheticConfig::default()
        };
        let ds = generate_synthetic::<f64>(&cfg).unwrap();
        assert!(ds.graph.edges().all(|(u, v)| ds.labels[u] == ds.labels[v]));
        assert!(ds.graph.num_edges() > 0);
    }

    #[test]
    fn synthetic_rejects_bad_config() {
        let zero = SyntheticConfig {
            num_classes: 0,
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic::<f64>(&zero).is_err());
        let prob = SyntheticConfig {
            intra_edge_prob: 1.5,
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic::<f64>(&prob).is_err());
    }
}
