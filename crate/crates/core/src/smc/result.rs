use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::Mode;
use crate::prior::ClusterId;
use crate::survival::{read_edge_list, write_edge_list, Adjacency, SurvivalError};

#[derive(Debug, thiserror::Error)]
pub enum ResultError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Edges { path: PathBuf, source: SurvivalError },
}

/// Per-event diagnostics of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostic {
    pub event_index: usize,
    /// Cluster count of the highest-weight particle.
    pub n_clusters: usize,
    pub ess: f64,
    /// Wall clock since the engine started.
    pub elapsed_ns: u64,
}

/// Output of the highest-weight particle after the final refit.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceResult {
    pub mode: Mode,
    pub n_nodes: usize,
    /// Cluster of each event, in stream order.
    pub assignments: Vec<ClusterId>,
    pub adjacencies: BTreeMap<ClusterId, Adjacency>,
    pub diagnostics: Vec<Diagnostic>,
}

impl InferenceResult {
    pub fn n_clusters(&self) -> usize {
        self.adjacencies.len()
    }
}

/// `<prefix>.<suffix>` for a path prefix such as `out/result`.
pub fn sidecar(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>, ResultError> {
    File::create(path).map(BufWriter::new).map_err(|source| ResultError::Io { path: path.to_owned(), source })
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> ResultError + '_ {
    move |source| ResultError::Io { path: path.to_owned(), source }
}

/// Writes `<prefix>.assign`, `<prefix>.net.<k>`, `<prefix>.diag.csv` and
/// `<prefix>.meta`.
pub fn write_result(result: &InferenceResult, prefix: &Path) -> Result<(), ResultError> {
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    let path = sidecar(prefix, "assign");
    let mut out = create(&path)?;
    for (i, k) in result.assignments.iter().enumerate() {
        writeln!(out, "{i} {k}").map_err(io_at(&path))?;
    }
    out.flush().map_err(io_at(&path))?;

    for (k, adj) in &result.adjacencies {
        let path = sidecar(prefix, &format!("net.{k}"));
        let out = create(&path)?;
        write_edge_list(adj, out).map_err(io_at(&path))?;
    }

    let path = sidecar(prefix, "diag.csv");
    let mut out = create(&path)?;
    writeln!(out, "event_index,K,ESS,elapsed_ns").map_err(io_at(&path))?;
    for d in &result.diagnostics {
        writeln!(out, "{},{},{},{}", d.event_index, d.n_clusters, d.ess, d.elapsed_ns)
            .map_err(io_at(&path))?;
    }
    out.flush().map_err(io_at(&path))?;

    let path = sidecar(prefix, "meta");
    let mut out = create(&path)?;
    writeln!(out, "mode={}", result.mode).map_err(io_at(&path))?;
    writeln!(out, "n_nodes={}", result.n_nodes).map_err(io_at(&path))?;
    writeln!(out, "clusters={}", result.n_clusters()).map_err(io_at(&path))?;
    out.flush().map_err(io_at(&path))
}

/// Reads `<prefix>.<suffix>` lines of `<index> <cluster>`, requiring the
/// indices to run 0, 1, 2, ...
pub fn read_label_file(path: &Path) -> Result<Vec<u32>, ResultError> {
    let file = File::open(path).map_err(io_at(path))?;
    let mut labels = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_at(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| ResultError::Format { path: path.to_owned(), msg };
        let mut parts = line.split_whitespace();
        let (Some(i), Some(k), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(format!("line {}: expected `<index> <cluster>`", n + 1)));
        };
        let i: usize = i.parse().map_err(|_| bad(format!("line {}: bad index", n + 1)))?;
        let k: u32 = k.parse().map_err(|_| bad(format!("line {}: bad cluster", n + 1)))?;
        if i != labels.len() {
            return Err(bad(format!("line {}: expected index {}, got {i}", n + 1, labels.len())));
        }
        labels.push(k);
    }
    Ok(labels)
}

pub(crate) fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>, ResultError> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

/// Reads a result written by [`write_result`]; diagnostics are not restored.
pub fn read_result(prefix: &Path) -> Result<InferenceResult, ResultError> {
    let meta_path = sidecar(prefix, "meta");
    let meta = read_key_values(&meta_path)?;
    let field = |key: &str| {
        meta.get(key)
            .cloned()
            .ok_or_else(|| ResultError::Format { path: meta_path.clone(), msg: format!("missing {key}") })
    };
    let bad = |msg: String| ResultError::Format { path: meta_path.clone(), msg };
    let mode: Mode = field("mode")?.parse().map_err(bad)?;
    let n_nodes: usize = field("n_nodes")?.parse().map_err(|_| bad("bad n_nodes".into()))?;
    let clusters: u32 = field("clusters")?.parse().map_err(|_| bad("bad clusters".into()))?;

    let assignments = read_label_file(&sidecar(prefix, "assign"))?;
    let mut adjacencies = BTreeMap::new();
    for k in 1..=clusters {
        let path = sidecar(prefix, &format!("net.{k}"));
        let file = File::open(&path).map_err(io_at(&path))?;
        let adj = read_edge_list(BufReader::new(file), n_nodes)
            .map_err(|source| ResultError::Edges { path: path.clone(), source })?;
        adjacencies.insert(k, adj);
    }
    Ok(InferenceResult { mode, n_nodes, assignments, adjacencies, diagnostics: Vec::new() })
}
