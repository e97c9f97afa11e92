//! Constant-hazard transmission model and the per-cluster NetRate fit.
//!
//! A cascade contributes, for every infected node `i` other than the seed,
//!
//! ```text
//! sum_j alpha_ji * (t_i - t_j) - ln(sum_j alpha_ji)
//! ```
//!
//! over the earlier infected nodes `j` within the `t_old` window, and for every
//! node `m` left uninfected at the horizon `T`,
//!
//! ```text
//! sum_j alpha_jm * (T - t_j)
//! ```
//!
//! The objective separates over target nodes, which is what [`fit_adjacency`]
//! exploits: each target's incoming rates form an independent convex problem.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use crate::event_stream::NodeId;

#[derive(Debug, thiserror::Error)]
pub enum SurvivalError {
    #[error("t_old must be positive, got {0}")]
    InvalidCutoff(f64),
    #[error("evaluation time {t} precedes the parent time {t_j}")]
    NegativeElapsed { t: f64, t_j: f64 },
    #[error("invalid rate {alpha} for edge {src}->{dst}")]
    InvalidRate { src: NodeId, dst: NodeId, alpha: f64 },
    #[error("invalid cascade view: {0}")]
    InvalidView(String),
    #[error("node {0} has no incoming hazard; the likelihood is singular")]
    Singular(NodeId),
    #[error("nothing to fit")]
    NothingToFit,
    #[error("edge list line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HazardKind {
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HazardSpec {
    pub kind: HazardKind,
    /// History cutoff; `f64::INFINITY` disables it.
    pub t_old: f64,
}

impl HazardSpec {
    pub fn constant(t_old: f64) -> Result<Self, SurvivalError> {
        if t_old.is_nan() || t_old <= 0.0 {
            return Err(SurvivalError::InvalidCutoff(t_old));
        }
        Ok(Self { kind: HazardKind::Constant, t_old })
    }

    pub fn unbounded() -> Self {
        Self { kind: HazardKind::Constant, t_old: f64::INFINITY }
    }

    /// Whether a parent at `elapsed` time units in the past still counts.
    #[inline]
    pub fn within(&self, elapsed: f64) -> bool {
        elapsed <= self.t_old
    }
}

fn elapsed(t: f64, t_j: f64) -> Result<f64, SurvivalError> {
    if t < t_j {
        return Err(SurvivalError::NegativeElapsed { t, t_j });
    }
    Ok(t - t_j)
}

/// Instantaneous infection rate at `t` from a parent infected at `t_j`.
pub fn hazard(spec: &HazardSpec, t: f64, t_j: f64, alpha: f64) -> Result<f64, SurvivalError> {
    let dt = elapsed(t, t_j)?;
    match spec.kind {
        HazardKind::Constant => Ok(if spec.within(dt) { alpha.max(0.0) } else { 0.0 }),
    }
}

/// Log-probability that a parent infected at `t_j` has not transmitted by `t`.
pub fn log_survival(spec: &HazardSpec, t: f64, t_j: f64, alpha: f64) -> Result<f64, SurvivalError> {
    let dt = elapsed(t, t_j)?;
    if alpha <= 0.0 {
        return Ok(0.0);
    }
    match spec.kind {
        HazardKind::Constant => Ok(-alpha * dt.min(spec.t_old)),
    }
}

/// Sparse nonnegative transmission-rate matrix of one subnetwork.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adjacency {
    n_nodes: usize,
    edges: BTreeMap<(NodeId, NodeId), f64>,
}

impl Adjacency {
    pub fn new(n_nodes: usize) -> Self {
        Self { n_nodes, edges: BTreeMap::new() }
    }

    pub fn from_edges(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (NodeId, NodeId, f64)>,
    ) -> Result<Self, SurvivalError> {
        let mut adj = Self::new(n_nodes);
        for (s, d, a) in edges {
            adj.set(s, d, a)?;
        }
        Ok(adj)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    #[inline]
    pub fn get(&self, src: NodeId, dst: NodeId) -> f64 {
        self.edges.get(&(src, dst)).copied().unwrap_or(0.0)
    }

    /// Sets one rate. A zero rate removes the entry.
    pub fn set(&mut self, src: NodeId, dst: NodeId, alpha: f64) -> Result<(), SurvivalError> {
        let out_of_range = src as usize >= self.n_nodes || dst as usize >= self.n_nodes;
        if src == dst || out_of_range || !alpha.is_finite() || alpha < 0.0 {
            return Err(SurvivalError::InvalidRate { src, dst, alpha });
        }
        if alpha == 0.0 {
            self.edges.remove(&(src, dst));
        } else {
            self.edges.insert((src, dst), alpha);
        }
        Ok(())
    }

    /// Stored entries in `(src, dst)` order.
    pub fn iter(&self) -> impl Iterator<Item = ((NodeId, NodeId), f64)> + '_ {
        self.edges.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Multiplies every rate by `factor` (which must be nonnegative).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = Self::new(self.n_nodes);
        for (&k, &v) in &self.edges {
            let a = v * factor;
            if a > 0.0 {
                out.edges.insert(k, a);
            }
        }
        out
    }
}

/// The events one cluster holds within one cascade, observed up to `horizon`.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeView {
    events: Vec<(NodeId, f64)>,
    horizon: f64,
}

impl CascadeView {
    pub fn new(events: Vec<(NodeId, f64)>, horizon: f64) -> Result<Self, SurvivalError> {
        let bad = |m: String| Err(SurvivalError::InvalidView(m));
        if horizon.is_nan() {
            return bad("horizon is NaN".into());
        }
        let mut seen = BTreeSet::new();
        for (i, &(node, t)) in events.iter().enumerate() {
            if !t.is_finite() || t > horizon {
                return bad(format!("event time {t} is not within the horizon {horizon}"));
            }
            if i > 0 && t < events[i - 1].1 {
                return bad("events are not sorted by time".into());
            }
            if !seen.insert(node) {
                return bad(format!("node {node} appears twice"));
            }
        }
        Ok(Self { events, horizon })
    }

    pub fn events(&self) -> &[(NodeId, f64)] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.events.iter().any(|&(n, _)| n == node)
    }
}

/// A cascade view together with the nodes known to be uninfected in it.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedCascade {
    pub view: CascadeView,
    pub uninfected: Vec<NodeId>,
}

impl ObservedCascade {
    pub fn new(view: CascadeView, uninfected: Vec<NodeId>) -> Result<Self, SurvivalError> {
        if let Some(&m) = uninfected.iter().find(|&&m| view.contains(m)) {
            return Err(SurvivalError::InvalidView(format!(
                "node {m} is listed both infected and uninfected"
            )));
        }
        Ok(Self { view, uninfected })
    }
}

/// Parents of the event at `pos`: earlier infections with `t_j < t_i` within the window.
fn eligible_parents<'a>(
    events: &'a [(NodeId, f64)],
    pos: usize,
    spec: &'a HazardSpec,
) -> impl Iterator<Item = (NodeId, f64)> + 'a {
    let t_i = events[pos].1;
    events[..pos]
        .iter()
        .filter(move |&&(_, t_j)| t_j < t_i && spec.within(t_i - t_j))
        .map(move |&(j, t_j)| (j, t_i - t_j))
}

fn check_disjoint(view: &CascadeView, uninfected: &[NodeId]) -> Result<(), SurvivalError> {
    match uninfected.iter().find(|&&m| view.contains(m)) {
        Some(m) => {
            Err(SurvivalError::InvalidView(format!("node {m} is listed both infected and uninfected")))
        }
        None => Ok(()),
    }
}

/// Negative log-likelihood of one cascade under `adj`. Returns `+inf` when an
/// infected non-seed node receives no incoming hazard.
pub fn cascade_nll(
    adj: &Adjacency,
    view: &CascadeView,
    uninfected: &[NodeId],
    spec: &HazardSpec,
) -> Result<f64, SurvivalError> {
    check_disjoint(view, uninfected)?;
    let events = view.events();
    let mut nll = 0.0;
    for pos in 1..events.len() {
        let i = events[pos].0;
        let mut rate = 0.0;
        for (j, dt) in eligible_parents(events, pos, spec) {
            let a = adj.get(j, i);
            nll += a * dt;
            rate += a;
        }
        if rate <= 0.0 {
            return Ok(f64::INFINITY);
        }
        nll -= rate.ln();
    }
    let horizon = view.horizon();
    for &m in uninfected {
        for &(j, t_j) in events {
            let dt = horizon - t_j;
            if spec.within(dt) {
                nll += adj.get(j, m) * dt;
            }
        }
    }
    Ok(nll)
}

/// Sum of [`cascade_nll`] over a set of cascades.
pub fn total_nll(
    adj: &Adjacency,
    cascades: &[ObservedCascade],
    spec: &HazardSpec,
) -> Result<f64, SurvivalError> {
    cascades.iter().map(|c| cascade_nll(adj, &c.view, &c.uninfected, spec)).sum()
}

/// Analytic gradient of [`cascade_nll`] with respect to every rate the cascade
/// touches. Pairs outside the window are absent (their partial is zero).
pub fn cascade_nll_gradient(
    adj: &Adjacency,
    view: &CascadeView,
    uninfected: &[NodeId],
    spec: &HazardSpec,
) -> Result<BTreeMap<(NodeId, NodeId), f64>, SurvivalError> {
    check_disjoint(view, uninfected)?;
    let events = view.events();
    let mut grad: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    for pos in 1..events.len() {
        let i = events[pos].0;
        let parents: Vec<_> = eligible_parents(events, pos, spec).collect();
        let rate: f64 = parents.iter().map(|&(j, _)| adj.get(j, i)).sum();
        if rate <= 0.0 {
            return Err(SurvivalError::Singular(i));
        }
        for (j, dt) in parents {
            *grad.entry((j, i)).or_insert(0.0) += dt - 1.0 / rate;
        }
    }
    let horizon = view.horizon();
    for &m in uninfected {
        for &(j, t_j) in events {
            let dt = horizon - t_j;
            if spec.within(dt) {
                *grad.entry((j, m)).or_insert(0.0) += dt;
            }
        }
    }
    Ok(grad)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerOptions {
    /// Starting rate for pairs without a warm-start value.
    pub alpha_init: f64,
    /// Step multiplier on the diagonally scaled gradient; halved on increase.
    pub step: f64,
    /// Relative improvement below which a target is considered converged.
    pub tol: f64,
    pub max_iters: usize,
    /// Lower bound kept on every candidate rate during iteration.
    pub floor: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { alpha_init: 0.1, step: 1.0, tol: 1e-6, max_iters: 200, floor: 1e-10 }
    }
}

/// Result of [`fit_adjacency`].
#[derive(Clone, Debug)]
pub struct Fit {
    pub adjacency: Adjacency,
    /// Objective after each iteration; entry 0 is the starting point. Terms of
    /// parentless non-seed events are constant and left out.
    pub nll_trace: Vec<f64>,
    pub iterations: usize,
}

/// Incoming-rate subproblem of one target node:
/// `min sum_j linear[j] x_j - sum_e ln(sum_{j in term e} x_j)` over `x >= floor`.
struct TargetProblem {
    target: NodeId,
    parents: Vec<NodeId>,
    linear: Vec<f64>,
    term_start: Vec<usize>,
    term_members: Vec<u32>,
    x: Vec<f64>,
    value: f64,
    step: f64,
    converged: bool,
}

impl TargetProblem {
    fn terms(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.term_start.windows(2).map(|w| &self.term_members[w[0]..w[1]])
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(x).map(|(c, v)| c * v).sum();
        let logs: f64 = self.terms().map(|t| t.iter().map(|&k| x[k as usize]).sum::<f64>().ln()).sum();
        lin - logs
    }

    /// One scaled projected-gradient step; returns false once converged.
    fn iterate(&mut self, opts: &OptimizerOptions) -> bool {
        if self.converged {
            return false;
        }
        // attraction[j] = sum over terms containing j of 1 / (term rate)
        let mut attraction = vec![0.0; self.x.len()];
        for t in self.terms() {
            let rate: f64 = t.iter().map(|&k| self.x[k as usize]).sum();
            for &k in t {
                attraction[k as usize] += 1.0 / rate;
            }
        }
        let mut candidate = vec![0.0; self.x.len()];
        loop {
            for (k, c) in candidate.iter_mut().enumerate() {
                let x = self.x[k];
                let gradient = self.linear[k] - attraction[k];
                let scaled = x / self.linear[k] * gradient;
                *c = (x - self.step * scaled).max(opts.floor);
            }
            let value = self.objective(&candidate);
            if value <= self.value {
                let improvement = self.value - value;
                std::mem::swap(&mut self.x, &mut candidate);
                self.value = value;
                if improvement <= opts.tol * self.value.abs().max(f64::MIN_POSITIVE) {
                    self.converged = true;
                }
                return true;
            }
            self.step *= 0.5;
            if self.step < 1e-12 {
                self.converged = true;
                return false;
            }
        }
    }
}

fn build_problems(
    cascades: &[ObservedCascade],
    spec: &HazardSpec,
    opts: &OptimizerOptions,
    warm: Option<&Adjacency>,
) -> Vec<TargetProblem> {
    // node -> (parents with index, terms)
    struct Builder {
        parent_index: BTreeMap<NodeId, u32>,
        terms: Vec<Vec<u32>>,
    }
    let mut builders: BTreeMap<NodeId, Builder> = BTreeMap::new();
    for c in cascades {
        let events = c.view.events();
        for pos in 1..events.len() {
            let i = events[pos].0;
            let b = builders
                .entry(i)
                .or_insert_with(|| Builder { parent_index: BTreeMap::new(), terms: Vec::new() });
            let mut term = Vec::new();
            for (j, _) in eligible_parents(events, pos, spec) {
                let next = b.parent_index.len() as u32;
                term.push(*b.parent_index.entry(j).or_insert(next));
            }
            // parentless events contribute a constant (infinite) term
            if !term.is_empty() {
                b.terms.push(term);
            }
        }
    }

    let mut problems: BTreeMap<NodeId, TargetProblem> = BTreeMap::new();
    for (target, b) in builders {
        if b.terms.is_empty() {
            continue;
        }
        let mut parents = vec![0; b.parent_index.len()];
        for (&j, &k) in &b.parent_index {
            parents[k as usize] = j;
        }
        let mut term_start = vec![0];
        let mut term_members = Vec::new();
        for t in &b.terms {
            term_members.extend_from_slice(t);
            term_start.push(term_members.len());
        }
        let warm_floor = opts.floor.max(1e-6);
        let x = parents
            .iter()
            .map(|&j| match warm.map(|w| w.get(j, target)) {
                Some(a) if a > 0.0 => a.max(warm_floor),
                _ => opts.alpha_init,
            })
            .collect();
        let n = parents.len();
        problems.insert(
            target,
            TargetProblem {
                target,
                parents,
                linear: vec![0.0; n],
                term_start,
                term_members,
                x,
                value: 0.0,
                step: opts.step,
                converged: false,
            },
        );
    }

    // Linear (survival) coefficients, restricted to pairs that carry a log term;
    // every other pair only has a positive linear cost and is optimal at zero.
    let index: BTreeMap<NodeId, BTreeMap<NodeId, usize>> = problems
        .iter()
        .map(|(&t, p)| (t, p.parents.iter().enumerate().map(|(k, &j)| (j, k)).collect()))
        .collect();
    for c in cascades {
        let events = c.view.events();
        for pos in 1..events.len() {
            let i = events[pos].0;
            if let (Some(p), Some(ix)) = (problems.get_mut(&i), index.get(&i)) {
                for (j, dt) in eligible_parents(events, pos, spec) {
                    p.linear[ix[&j]] += dt;
                }
            }
        }
        let horizon = c.view.horizon();
        for &m in &c.uninfected {
            if let (Some(p), Some(ix)) = (problems.get_mut(&m), index.get(&m)) {
                for &(j, t_j) in events {
                    let dt = horizon - t_j;
                    if spec.within(dt) {
                        if let Some(&k) = ix.get(&j) {
                            p.linear[k] += dt;
                        }
                    }
                }
            }
        }
    }

    let mut out: Vec<TargetProblem> = problems.into_values().collect();
    for p in &mut out {
        for c in &mut p.linear {
            // a pair always carries t_i - t_j > 0 from its own term
            *c = c.max(f64::MIN_POSITIVE);
        }
        p.value = p.objective(&p.x);
    }
    out
}

/// Fits the rates of one subnetwork to a set of cascades by projected descent
/// on the convex NetRate objective, restricted to the candidate pairs that
/// co-occur inside the window. `warm` supplies starting values.
///
/// Each step moves every rate along its gradient scaled by `x_j / c_j` (its
/// current value over its linear coefficient) and projects onto `x >= floor`;
/// a step that increases the objective is halved and retried.
pub fn fit_adjacency(
    n_nodes: usize,
    cascades: &[ObservedCascade],
    spec: &HazardSpec,
    opts: &OptimizerOptions,
    warm: Option<&Adjacency>,
) -> Result<Fit, SurvivalError> {
    let informative =
        cascades.iter().any(|c| c.view.len() >= 2 || (!c.view.is_empty() && !c.uninfected.is_empty()));
    if !informative {
        return Err(SurvivalError::NothingToFit);
    }
    let mut problems = build_problems(cascades, spec, opts, warm);
    let mut trace = vec![problems.iter().map(|p| p.value).sum::<f64>()];
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let mut moved = false;
        for p in &mut problems {
            moved |= p.iterate(opts);
        }
        if !moved {
            break;
        }
        iterations += 1;
        trace.push(problems.iter().map(|p| p.value).sum());
        if problems.iter().all(|p| p.converged) {
            break;
        }
    }

    let mut adjacency = Adjacency::new(n_nodes);
    for p in &problems {
        for (&j, &a) in p.parents.iter().zip(&p.x) {
            adjacency.set(j, p.target, a)?;
        }
    }
    Ok(Fit { adjacency, nll_trace: trace, iterations })
}

/// Writes `<src> <dst> <alpha>` lines in `(src, dst)` order.
pub fn write_edge_list<W: Write>(adj: &Adjacency, sink: W) -> io::Result<()> {
    let mut out = io::BufWriter::new(sink);
    for ((s, d), a) in adj.iter() {
        writeln!(out, "{s} {d} {a}")?;
    }
    out.flush()
}

pub fn read_edge_list<R: BufRead>(source: R, n_nodes: usize) -> Result<Adjacency, SurvivalError> {
    let mut adj = Adjacency::new(n_nodes);
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bad = |msg: String| SurvivalError::Parse { line: line_no, msg };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let [s, d, a] = fields[..] else {
            return Err(bad("expected `<src> <dst> <alpha>`".into()));
        };
        let s: NodeId = s.parse().map_err(|_| bad(format!("bad node {s:?}")))?;
        let d: NodeId = d.parse().map_err(|_| bad(format!("bad node {d:?}")))?;
        let a: f64 = a.parse().map_err(|_| bad(format!("bad rate {a:?}")))?;
        adj.set(s, d, a).map_err(|e| bad(e.to_string()))?;
    }
    Ok(adj)
}
