//! Cluster and edge recovery metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::event_stream::NodeId;
use crate::prior::ClusterId;
use crate::smc::{InferenceResult, Mode};
use crate::survival::Adjacency;
use crate::synth::TruthFiles;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("label vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("labelings must be non-empty")]
    Empty,
    #[error("AUC is undefined without both positive and negative candidates")]
    AucUndefined,
}

/// Contingency table of two labelings with its row and column sums.
struct Contingency {
    rows: Vec<u32>,
    cols: Vec<u32>,
    cells: Vec<Vec<u64>>,
    n: u64,
}

impl Contingency {
    fn new(truth: &[u32], pred: &[u32]) -> Result<Self, EvalError> {
        if truth.len() != pred.len() {
            return Err(EvalError::LengthMismatch(truth.len(), pred.len()));
        }
        if truth.is_empty() {
            return Err(EvalError::Empty);
        }
        let rows: Vec<u32> = truth.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let cols: Vec<u32> = pred.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let mut cells = vec![vec![0u64; cols.len()]; rows.len()];
        for (t, p) in truth.iter().zip(pred) {
            let i = rows.binary_search(t).expect("row label");
            let j = cols.binary_search(p).expect("col label");
            cells[i][j] += 1;
        }
        Ok(Self { rows, cols, cells, n: truth.len() as u64 })
    }

    fn row_sums(&self) -> Vec<u64> {
        self.cells.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<u64> {
        (0..self.cols.len()).map(|j| self.cells.iter().map(|r| r[j]).sum()).collect()
    }
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization. Two
/// single-cluster labelings score 1.
pub fn nmi(truth: &[u32], pred: &[u32]) -> Result<f64, EvalError> {
    let table = Contingency::new(truth, pred)?;
    let n = table.n as f64;
    let (rs, cs) = (table.row_sums(), table.col_sums());
    let (hu, hv) = (entropy(&rs, n), entropy(&cs, n));
    if hu == 0.0 && hv == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.cells.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (rs[i] as f64 * cs[j] as f64)).ln();
            }
        }
    }
    Ok((mi / ((hu + hv) / 2.0)).clamp(0.0, 1.0))
}

fn pairs(c: u64) -> f64 {
    let c = c as f64;
    c * (c - 1.0) / 2.0
}

/// Adjusted Rand index. Degenerate cases where the index equals its
/// expectation and its maximum score 1.
pub fn ari(truth: &[u32], pred: &[u32]) -> Result<f64, EvalError> {
    let table = Contingency::new(truth, pred)?;
    let index: f64 = table.cells.iter().flatten().map(|&c| pairs(c)).sum();
    let a: f64 = table.row_sums().into_iter().map(pairs).sum();
    let b: f64 = table.col_sums().into_iter().map(pairs).sum();
    let total = pairs(table.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = a * b / total;
    let max = (a + b) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// One-to-one maximum-overlap matching of predicted to true clusters.
/// Predicted clusters left over when there are more of them map to `None`.
pub fn match_clusters(truth: &[u32], pred: &[u32]) -> Result<BTreeMap<u32, Option<u32>>, EvalError> {
    let table = Contingency::new(truth, pred)?;
    let (nr, nc) = (table.rows.len(), table.cols.len());
    let mut matching: BTreeMap<u32, Option<u32>> = table.cols.iter().map(|&p| (p, None)).collect();
    // kuhn_munkres wants no more rows than columns
    if nc <= nr {
        let w = Matrix::from_fn(nc, nr, |(j, i)| table.cells[i][j] as i64);
        let (_, assign) = kuhn_munkres(&w);
        for (j, i) in assign.into_iter().enumerate() {
            matching.insert(table.cols[j], Some(table.rows[i]));
        }
    } else {
        let w = Matrix::from_fn(nr, nc, |(i, j)| table.cells[i][j] as i64);
        let (_, assign) = kuhn_munkres(&w);
        for (i, j) in assign.into_iter().enumerate() {
            matching.insert(table.cols[j], Some(table.rows[i]));
        }
    }
    Ok(matching)
}

/// Area under the ROC curve via the Mann-Whitney statistic, tied scores
/// sharing their average rank.
pub fn auc_roc(scores: &[f64], positive: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != positive.len() {
        return Err(EvalError::LengthMismatch(scores.len(), positive.len()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::AucUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..end (0-based) average to (start + end + 1) / 2 in 1-based terms
        let rank = (start + end + 1) as f64 / 2.0;
        rank_sum += rank * order[start..end].iter().filter(|&&i| positive[i]).count() as f64;
        start = end;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Edge-recovery scores of one predicted network against one true network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeScores {
    pub auc_roc: Option<f64>,
    pub f1: f64,
    pub mae: f64,
}

/// F1 over the candidate pairs. A pair is predicted when `alpha_pred >
/// threshold`; it is a true edge when `alpha_true > threshold`, so edges too
/// weak to ever be predicted are not held against a perfect estimate. F1 is
/// 0 when nothing is predicted.
fn edge_f1(pred: &Adjacency, truth: &Adjacency, candidates: &[(NodeId, NodeId)], threshold: f64) -> f64 {
    let (mut tp, mut n_pred, mut n_true) = (0usize, 0usize, 0usize);
    for &(s, d) in candidates {
        let p = pred.get(s, d) > threshold;
        let t = truth.get(s, d) > threshold;
        tp += usize::from(p && t);
        n_pred += usize::from(p);
        n_true += usize::from(t);
    }
    if n_pred == 0 || n_true == 0 || tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / n_pred as f64;
    let recall = tp as f64 / n_true as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Mean absolute error over candidate pairs that are true edges or
/// predicted edges; 0 when that union is empty.
fn edge_mae(pred: &Adjacency, truth: &Adjacency, candidates: &[(NodeId, NodeId)], threshold: f64) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for &(s, d) in candidates {
        let (p, t) = (pred.get(s, d), truth.get(s, d));
        if t > 0.0 || p > threshold {
            sum += (p - t).abs();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// AUC-ROC, F1 and MAE of `pred` against `truth` over `candidates`.
pub fn edge_metrics(
    pred: &Adjacency,
    truth: &Adjacency,
    candidates: &[(NodeId, NodeId)],
    threshold: f64,
) -> Result<(f64, f64, f64), EvalError> {
    let scores: Vec<f64> = candidates.iter().map(|&(s, d)| pred.get(s, d)).collect();
    let positive: Vec<bool> = candidates.iter().map(|&(s, d)| truth.get(s, d) > 0.0).collect();
    let auc = auc_roc(&scores, &positive)?;
    Ok((auc, edge_f1(pred, truth, candidates, threshold), edge_mae(pred, truth, candidates, threshold)))
}

fn edge_scores(
    pred: &Adjacency,
    truth: &Adjacency,
    candidates: &[(NodeId, NodeId)],
    threshold: f64,
) -> EdgeScores {
    let scores: Vec<f64> = candidates.iter().map(|&(s, d)| pred.get(s, d)).collect();
    let positive: Vec<bool> = candidates.iter().map(|&(s, d)| truth.get(s, d) > 0.0).collect();
    EdgeScores {
        auc_roc: auc_roc(&scores, &positive).ok(),
        f1: edge_f1(pred, truth, candidates, threshold),
        mae: edge_mae(pred, truth, candidates, threshold),
    }
}

/// All ordered pairs of distinct nodes.
pub fn ordered_pairs(nodes: &BTreeSet<NodeId>) -> Vec<(NodeId, NodeId)> {
    let mut out = Vec::with_capacity(nodes.len() * nodes.len().saturating_sub(1));
    for &a in nodes {
        for &b in nodes {
            if a != b {
                out.push((a, b));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    /// Predicted rates at or below this count as absent edges.
    pub threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { threshold: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// `None` for runs without clustering.
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    /// `None` when no true subnet has both edges and non-edges among its candidates.
    pub auc_roc: Option<f64>,
    pub f1: f64,
    pub mae: f64,
    pub matching: BTreeMap<ClusterId, Option<u32>>,
    /// Scores of each true subnet that has observed events.
    pub per_subnet: BTreeMap<u32, EdgeScores>,
}

/// Scores an inference result against ground truth.
///
/// Clusters are matched by maximum event overlap. Each true subnet with
/// events is scored over the ordered pairs of nodes that appear in its
/// events, then the scores are macro-averaged. A true subnet without a
/// matched cluster scores F1 0 and is compared with an empty network for
/// MAE; it is left out of the AUC average.
pub fn evaluate(
    result: &InferenceResult,
    truth: &TruthFiles,
    event_nodes: &[NodeId],
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let labels = &truth.labels;
    if labels.len() != result.assignments.len() {
        return Err(EvalError::LengthMismatch(labels.len(), result.assignments.len()));
    }
    if labels.len() != event_nodes.len() {
        return Err(EvalError::LengthMismatch(labels.len(), event_nodes.len()));
    }
    let clustered = result.mode != Mode::NetRateOnly;
    let (nmi_v, ari_v) = if clustered {
        (Some(nmi(labels, &result.assignments)?), Some(ari(labels, &result.assignments)?))
    } else {
        (None, None)
    };
    let matching = match_clusters(labels, &result.assignments)?;
    let inverse: BTreeMap<u32, ClusterId> =
        matching.iter().filter_map(|(&p, &t)| t.map(|t| (t, p))).collect();

    let mut active: BTreeMap<u32, BTreeSet<NodeId>> = BTreeMap::new();
    for (&k, &v) in labels.iter().zip(event_nodes) {
        active.entry(k).or_default().insert(v);
    }

    let empty = Adjacency::new(result.n_nodes);
    let mut per_subnet = BTreeMap::new();
    for (&k, nodes) in &active {
        let Some(true_net) = truth.nets.get(&k) else { continue };
        let candidates = ordered_pairs(nodes);
        let pred = inverse.get(&k).and_then(|p| result.adjacencies.get(p)).unwrap_or(&empty);
        let mut s = edge_scores(pred, true_net, &candidates, options.threshold);
        if !inverse.contains_key(&k) {
            s.auc_roc = None;
            s.f1 = 0.0;
        }
        per_subnet.insert(k, s);
    }

    let n = per_subnet.len().max(1) as f64;
    let aucs: Vec<f64> = per_subnet.values().filter_map(|s| s.auc_roc).collect();
    Ok(EvalReport {
        nmi: nmi_v,
        ari: ari_v,
        auc_roc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
        f1: per_subnet.values().map(|s| s.f1).sum::<f64>() / n,
        mae: per_subnet.values().map(|s| s.mae).sum::<f64>() / n,
        matching,
        per_subnet,
    })
}

/// Ground truth dressed as an inference result, true cluster `k` becoming `k + 1`.
pub fn truth_as_result(truth: &TruthFiles, n_nodes: usize) -> InferenceResult {
    InferenceResult {
        mode: Mode::Houston,
        n_nodes,
        assignments: truth.labels.iter().map(|&k| k + 1).collect(),
        adjacencies: truth.nets.iter().map(|(&k, a)| (k + 1, a.clone())).collect(),
        diagnostics: Vec::new(),
    }
}

/// One `report.csv` row.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    /// Inference mode, or another label such as `truth`.
    pub mode: String,
    pub seed: u64,
    pub report: EvalReport,
}

pub const REPORT_HEADER: &str = "dataset,mode,seed,NMI,ARI,AUC-ROC,F1,MAE";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

pub fn write_report<W: Write>(rows: &[ReportRow], mut sink: W) -> io::Result<()> {
    writeln!(sink, "{REPORT_HEADER}")?;
    for r in rows {
        writeln!(
            sink,
            "{},{},{},{},{},{},{:.6},{:.6}",
            r.dataset,
            r.mode,
            r.seed,
            cell(r.report.nmi),
            cell(r.report.ari),
            cell(r.report.auc_roc),
            r.report.f1,
            r.report.mae
        )?;
    }
    sink.flush()
}
