//! Dataset file formats, synthetic generators, and run configuration.
//!
//! All formats are line-oriented text: edge lists are `src<TAB>dst` with `#`
//! comments, features carry an `N d` header followed by one whitespace
//! separated row per node, labels and splits are `node<TAB>value` lines, and
//! configs are `key = value` lines. Floats are written with the shortest
//! representation that round-trips exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, FeatureMatrix, LabelVector, SplitAssignment};
use crate::error::{Error, Result};
use crate::gnn::{CommuteBackend, TrainConfig};
use crate::graph::build_digraph;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn content_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    token: &str,
    what: &str,
) -> Result<T> {
    token
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid {what} '{token}'")))
}

/// Reads a `src<TAB>dst` edge list (any whitespace accepted as separator).
pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (line_no, line) in content_lines(path)? {
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, line_no, "expected 'src<TAB>dst'"));
        };
        let src = parse_field(path, line_no, a, "source id")?;
        let dst = parse_field(path, line_no, b, "destination id")?;
        edges.push((src, dst));
    }
    Ok(edges)
}

pub fn write_edge_list(path: &Path, edges: &[(usize, usize)]) -> Result<()> {
    let mut out = String::new();
    for &(src, dst) in edges {
        writeln!(out, "{src}\t{dst}").unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a feature matrix: header line `N d`, then `N` rows of `d` decimals.
pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let lines = content_lines(path)?;
    let Some(((header_no, header), rows)) = lines.split_first() else {
        return Err(parse_err(path, 1, "missing 'N d' header"));
    };
    let mut parts = header.split_whitespace();
    let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(parse_err(path, *header_no, "header must be 'N d'"));
    };
    let n: usize = parse_field(path, *header_no, a, "node count")?;
    let d: usize = parse_field(path, *header_no, b, "feature dimension")?;
    if rows.len() != n {
        let line = rows.last().map_or(*header_no, |(no, _)| *no);
        return Err(parse_err(
            path,
            line,
            format!("header declares {n} rows, found {}", rows.len()),
        ));
    }
    let mut x = DMatrix::zeros(n, d);
    for (i, (line_no, line)) in rows.iter().enumerate() {
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != d {
            return Err(parse_err(
                path,
                *line_no,
                format!("expected {d} values, found {}", values.len()),
            ));
        }
        for (j, v) in values.iter().enumerate() {
            x[(i, j)] = parse_field(path, *line_no, v, "feature value")?;
        }
    }
    Ok(x)
}

pub fn write_features(path: &Path, x: &FeatureMatrix) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{} {}", x.nrows(), x.ncols()).unwrap();
    for i in 0..x.nrows() {
        let row: Vec<String> = (0..x.ncols()).map(|j| format!("{}", x[(i, j)])).collect();
        writeln!(out, "{}", row.join(" ")).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads `node<TAB>label` lines; every node in `[0, n)` must appear exactly
/// once.
pub fn read_labels(path: &Path, n: usize) -> Result<LabelVector> {
    let mut labels = vec![None; n];
    for (line_no, line) in content_lines(path)? {
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, line_no, "expected 'node<TAB>label'"));
        };
        let node: usize = parse_field(path, line_no, a, "node id")?;
        let label: usize = parse_field(path, line_no, b, "label")?;
        if node >= n {
            return Err(parse_err(path, line_no, format!("node {node} out of range")));
        }
        if labels[node].is_some() {
            return Err(parse_err(path, line_no, format!("duplicate label for node {node}")));
        }
        labels[node] = Some(label);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(node, l)| l.ok_or(Error::MissingLabel { node }))
        .collect()
}

pub fn write_labels(path: &Path, labels: &LabelVector) -> Result<()> {
    let mut out = String::new();
    for (node, label) in labels.iter().enumerate() {
        writeln!(out, "{node}\t{label}").unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads `node<TAB>{train|val|test}` lines; unlisted nodes stay unassigned.
pub fn read_splits(path: &Path, n: usize) -> Result<SplitAssignment> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (line_no, line) in content_lines(path)? {
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, line_no, "expected 'node<TAB>split'"));
        };
        let node: usize = parse_field(path, line_no, a, "node id")?;
        match b {
            "train" => train.push(node),
            "val" => val.push(node),
            "test" => test.push(node),
            other => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("unknown split '{other}' (expected train, val, or test)"),
                ))
            }
        }
    }
    SplitAssignment::new(train, val, test, n)
}

pub fn write_splits(path: &Path, splits: &SplitAssignment) -> Result<()> {
    let mut out = String::new();
    for (name, nodes) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        for node in nodes {
            writeln!(out, "{node}\t{name}").unwrap();
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// File locations of one dataset.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub graph: PathBuf,
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
    pub splits: Option<PathBuf>,
}

/// Loads and cross-validates a dataset. The feature header fixes the node
/// count; labels default to zero and splits to empty when their files are
/// not provided.
pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let features = read_features(&paths.features)?;
    let n = features.nrows();
    let edges = read_edge_list(&paths.graph)?;
    for &(src, dst) in &edges {
        let node = if src >= n { src } else { dst };
        if node >= n {
            return Err(Error::NodeOutOfRange { node, num_nodes: n });
        }
    }
    let graph = build_digraph(n, &edges)?;
    let labels = match &paths.labels {
        Some(p) => read_labels(p, n)?,
        None => vec![0; n],
    };
    let splits = match &paths.splits {
        Some(p) => read_splits(p, n)?,
        None => SplitAssignment::default(),
    };
    let dataset = Dataset {
        graph,
        features,
        labels,
        splits,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Standard in-directory file names used by `write_dataset` and the CLI.
pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.txt";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLITS_FILE: &str = "splits.tsv";

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<DatasetPaths> {
    std::fs::create_dir_all(dir)?;
    let paths = DatasetPaths {
        graph: dir.join(EDGES_FILE),
        features: dir.join(FEATURES_FILE),
        labels: Some(dir.join(LABELS_FILE)),
        splits: Some(dir.join(SPLITS_FILE)),
    };
    write_edge_list(&paths.graph, dataset.graph.edges())?;
    write_features(&paths.features, &dataset.features)?;
    write_labels(paths.labels.as_ref().unwrap(), &dataset.labels)?;
    write_splits(paths.splits.as_ref().unwrap(), &dataset.splits)?;
    Ok(paths)
}

/// Desk-scale synthetic dataset families.
#[derive(Debug, Clone, PartialEq)]
pub enum SynthKind {
    DirectedCycle,
    TwoBlock { p_in: f64, p_out: f64 },
    RandomDigraph { p: f64 },
}

const TWO_BLOCK_NOISE: f64 = 0.3;

/// Deterministic synthetic dataset for a given kind, size, and seed.
pub fn generate_synthetic(kind: &SynthKind, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidParam("synthetic datasets need n >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SynthKind::DirectedCycle => {
            let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
            let graph = build_digraph(n, &edges)?;
            let features = DMatrix::from_fn(n, 2, |i, j| {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                if j == 0 {
                    angle.cos()
                } else {
                    angle.sin()
                }
            });
            let labels: LabelVector = (0..n).map(|i| i % 2).collect();
            let splits = residue_splits(n)?;
            Ok(Dataset {
                graph,
                features,
                labels,
                splits,
            })
        }
        SynthKind::TwoBlock { p_in, p_out } => {
            for p in [*p_in, *p_out] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidParam(format!("probability {p} outside [0, 1]")));
                }
            }
            let block = |i: usize| (i >= n / 2) as usize;
            let mut edges = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let p = if block(i) == block(j) { *p_in } else { *p_out };
                    if rng.random::<f64>() < p {
                        edges.push((i, j));
                    }
                }
            }
            let graph = build_digraph(n, &edges)?;
            // Signed block indicator in the first two dimensions (zero-mean,
            // so plain gradient descent separates it quickly), noise-only in
            // the rest.
            let features = DMatrix::from_fn(n, 4, |i, j| {
                let indicator = match j {
                    0 | 1 => {
                        if j == block(i) {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    _ => 0.0,
                };
                let noise: f64 = StandardNormal.sample(&mut rng);
                indicator + TWO_BLOCK_NOISE * noise
            });
            let labels: LabelVector = (0..n).map(block).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let train_end = (n * 6) / 10;
            let val_end = (n * 8) / 10;
            let splits = SplitAssignment::new(
                order[..train_end].to_vec(),
                order[train_end..val_end].to_vec(),
                order[val_end..].to_vec(),
                n,
            )?;
            Ok(Dataset {
                graph,
                features,
                labels,
                splits,
            })
        }
        SynthKind::RandomDigraph { p } => {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::InvalidParam(format!("probability {p} outside [0, 1]")));
            }
            let mut edges = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.random::<f64>() < *p {
                        edges.push((i, j));
                    }
                }
            }
            let graph = build_digraph(n, &edges)?;
            let features = DMatrix::from_fn(n, 4, |_, _| StandardNormal.sample(&mut rng));
            let labels: LabelVector = (0..n).map(|_| rng.random_range(0..2)).collect();
            let splits = residue_splits(n)?;
            Ok(Dataset {
                graph,
                features,
                labels,
                splits,
            })
        }
    }
}

/// Round-robin 60/20/20 assignment by node residue mod 5.
fn residue_splits(n: usize) -> Result<SplitAssignment> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for i in 0..n {
        match i % 5 {
            0 | 1 | 2 => train.push(i),
            3 => val.push(i),
            _ => test.push(i),
        }
    }
    SplitAssignment::new(train, val, test, n)
}

/// Fully resolved run configuration: dataset paths plus training and
/// commute-backend settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub paths: DatasetPaths,
    pub train: TrainConfig,
    pub dense_cap: usize,
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Canonical `key = value` rendering; hashed into the provenance record.
    pub fn render(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert("graph", self.paths.graph.display().to_string());
        map.insert("features", self.paths.features.display().to_string());
        if let Some(p) = &self.paths.labels {
            map.insert("labels", p.display().to_string());
        }
        if let Some(p) = &self.paths.splits {
            map.insert("splits", p.display().to_string());
        }
        map.insert("layers", self.train.layers.to_string());
        map.insert("hidden", self.train.hidden.to_string());
        map.insert("lr", self.train.lr.to_string());
        map.insert("weight_decay", self.train.weight_decay.to_string());
        map.insert("epochs", self.train.epochs.to_string());
        map.insert("seed", self.train.seed.to_string());
        map.insert("rank_q", self.train.rank_q.to_string());
        map.insert("backend", self.train.backend.tag().to_string());
        map.insert("dense_cap", self.dense_cap.to_string());
        map.insert("out_dir", self.out_dir.display().to_string());
        let mut out = String::new();
        for (k, v) in map {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    /// FNV-1a hash of the canonical rendering.
    pub fn config_hash(&self) -> String {
        let mut hash: u64 = 0xcbf29ce484222325;
        for byte in self.render().as_bytes() {
            hash ^= *byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }

    pub fn validate(&self) -> Result<()> {
        let mut paths = vec![&self.paths.graph, &self.paths.features];
        paths.extend(self.paths.labels.iter());
        paths.extend(self.paths.splits.iter());
        for p in paths {
            if !p.exists() {
                return Err(Error::InvalidParam(format!(
                    "path does not exist: {}",
                    p.display()
                )));
            }
        }
        self.train.validate()
    }
}

/// `key = value` configuration lines, merged with CLI overrides by the
/// binary. Unknown keys are rejected with their line number.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    const KNOWN: &[&str] = &[
        "graph",
        "features",
        "labels",
        "splits",
        "layers",
        "hidden",
        "lr",
        "weight_decay",
        "epochs",
        "seed",
        "rank_q",
        "backend",
        "dense_cap",
        "out_dir",
    ];
    let mut map = BTreeMap::new();
    for (line_no, line) in content_lines(path)? {
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(path, line_no, "expected 'key = value'"));
        };
        let key = key.trim().to_string();
        if !KNOWN.contains(&key.as_str()) {
            return Err(parse_err(path, line_no, format!("unknown key '{key}'")));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

/// Builds a [`RunConfig`] from config-file values overlaid with CLI
/// overrides (overrides win).
pub fn resolve_config(
    file_values: BTreeMap<String, String>,
    overrides: BTreeMap<String, String>,
) -> Result<RunConfig> {
    let mut map = file_values;
    map.extend(overrides);
    let get = |key: &str| map.get(key).cloned();
    let require = |key: &str| {
        get(key).ok_or_else(|| Error::InvalidParam(format!("missing required setting '{key}'")))
    };
    let parse_num = |key: &str, value: &str| -> Result<f64> {
        value
            .parse()
            .map_err(|_| Error::InvalidParam(format!("invalid value '{value}' for '{key}'")))
    };
    let parse_int = |key: &str, value: &str| -> Result<usize> {
        value
            .parse()
            .map_err(|_| Error::InvalidParam(format!("invalid value '{value}' for '{key}'")))
    };

    let mut train = TrainConfig::default();
    if let Some(v) = get("layers") {
        train.layers = parse_int("layers", &v)?;
    }
    if let Some(v) = get("hidden") {
        train.hidden = parse_int("hidden", &v)?;
    }
    if let Some(v) = get("lr") {
        train.lr = parse_num("lr", &v)?;
    }
    if let Some(v) = get("weight_decay") {
        train.weight_decay = parse_num("weight_decay", &v)?;
    }
    if let Some(v) = get("epochs") {
        train.epochs = parse_int("epochs", &v)?;
    }
    if let Some(v) = get("seed") {
        train.seed = v
            .parse()
            .map_err(|_| Error::InvalidParam(format!("invalid value '{v}' for 'seed'")))?;
    }
    if let Some(v) = get("rank_q") {
        train.rank_q = parse_int("rank_q", &v)?;
    }
    if let Some(v) = get("backend") {
        train.backend = v.parse::<CommuteBackend>()?;
    }
    let dense_cap = match get("dense_cap") {
        Some(v) => parse_int("dense_cap", &v)?,
        None => crate::commute::DENSE_PATH_CAP,
    };
    Ok(RunConfig {
        paths: DatasetPaths {
            graph: PathBuf::from(require("graph")?),
            features: PathBuf::from(require("features")?),
            labels: get("labels").map(PathBuf::from),
            splits: get("splits").map(PathBuf::from),
        },
        train,
        dense_cap,
        out_dir: PathBuf::from(require("out_dir")?),
    })
}
