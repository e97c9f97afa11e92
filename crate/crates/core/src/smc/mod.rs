//! Online Sequential Monte Carlo inference.
//!
//! Every event is scored against each particle's clusters by combining the
//! Dirichlet-Multinomial predictive of its words with an assignment prior,
//! sampled into a cluster, and folded into that cluster's word counts and
//! cascade history. Cluster networks are refit on a schedule, and the
//! particle system is resampled whenever its effective sample size drops.

mod particle;
mod result;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::event_stream::{Event, NodeId, StreamError, StreamHeader};
use crate::language::{ClusterWordCounts, LanguageError};
use crate::prior::{dp_weights, survival_weights, ClusterId};
use crate::survival::{
    fit_adjacency, Adjacency, CascadeView, HazardSpec, ObservedCascade, OptimizerOptions, SurvivalError,
};

pub use particle::{ClusterState, HistoryEntry, Particle};
pub use result::{
    read_label_file, read_result, sidecar, write_result, Diagnostic, InferenceResult, ResultError,
};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error("event {index}: {msg}")]
    BadEvent { index: usize, msg: String },
    #[error("degenerate particle system: every weight is -inf or NaN")]
    Degenerate,
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Language(#[from] LanguageError),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Text and Dirichlet-Survival prior jointly.
    Houston,
    /// Text with a Dirichlet-process prior; networks fit afterwards.
    NrxDm,
    /// One cluster; a single network fit on every cascade.
    NetRateOnly,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Houston => "houston",
            Mode::NrxDm => "nrxdm",
            Mode::NetRateOnly => "netrate",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "houston" => Ok(Mode::Houston),
            "nrxdm" => Ok(Mode::NrxDm),
            "netrate" => Ok(Mode::NetRateOnly),
            other => Err(format!("unknown mode {other:?} (expected houston, nrxdm or netrate)")),
        }
    }
}

/// Per-event factor folded into a particle's log weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightRule {
    /// Marginal likelihood of the document over every outcome, prior included.
    Marginal,
    /// Language-model likelihood of the document under the sampled cluster.
    Sampled,
}

impl fmt::Display for WeightRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightRule::Marginal => "marginal",
            WeightRule::Sampled => "sampled",
        })
    }
}

impl FromStr for WeightRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "marginal" => Ok(WeightRule::Marginal),
            "sampled" => Ok(WeightRule::Sampled),
            other => Err(format!("unknown weight rule `{other}` (expected marginal or sampled)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    pub n_runs: usize,
    pub theta0: f64,
    pub lambda0: f64,
    /// Concentration of the Dirichlet-process prior used by [`Mode::NrxDm`].
    pub alpha0: f64,
    pub t_old: f64,
    /// Minimum number of new events in a cluster between two network refits.
    pub refit_period: usize,
    /// Refits also wait until the cluster grew by this fraction of its size.
    pub refit_growth: f64,
    pub ess_threshold: f64,
    pub rng_seed: u64,
    pub mode: Mode,
    pub weight: WeightRule,
    /// Worker threads for the per-particle update; 1 runs serially.
    pub threads: usize,
    pub optimizer: OptimizerOptions,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            n_runs: 4,
            theta0: 0.1,
            lambda0: 0.001,
            alpha0: 1.0,
            t_old: f64::INFINITY,
            refit_period: 10,
            refit_growth: 0.1,
            ess_threshold: 0.5,
            rng_seed: 0,
            mode: Mode::Houston,
            weight: WeightRule::Marginal,
            threads: 1,
            optimizer: OptimizerOptions::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Config(m.to_string()));
        let positive = |x: f64| x > 0.0 && !x.is_nan();
        if self.n_runs == 0 {
            return bad("n_runs must be at least 1");
        }
        if !(positive(self.theta0) && self.theta0.is_finite()) {
            return bad("theta0 must be positive");
        }
        if !(positive(self.lambda0) && self.lambda0.is_finite()) {
            return bad("lambda0 must be positive");
        }
        if !(positive(self.alpha0) && self.alpha0.is_finite()) {
            return bad("alpha0 must be positive");
        }
        if !positive(self.t_old) {
            return bad("t_old must be positive");
        }
        if self.refit_period == 0 {
            return bad("refit_period must be at least 1");
        }
        if !(self.refit_growth >= 0.0 && self.refit_growth.is_finite()) {
            return bad("refit_growth must be nonnegative");
        }
        if !(self.ess_threshold > 0.0 && self.ess_threshold <= 1.0) {
            return bad("ess_threshold must lie in (0, 1]");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }

    pub fn hazard_spec(&self) -> HazardSpec {
        HazardSpec::constant(self.t_old).unwrap_or_else(|_| HazardSpec::unbounded())
    }
}

/// Stream facts shared by every particle: they depend only on the prefix of
/// events seen so far.
#[derive(Clone, Debug, Default)]
pub struct StreamState {
    cascade_index: HashMap<String, u32>,
    cascade_start: Vec<f64>,
    /// Nodes infected in each cascade so far, in arrival order.
    cascade_nodes: Vec<Vec<NodeId>>,
    active: Vec<bool>,
    active_nodes: Vec<NodeId>,
    now: f64,
    n_events: usize,
}

impl StreamState {
    fn new(n_nodes: usize) -> Self {
        Self { active: vec![false; n_nodes], now: f64::NEG_INFINITY, ..Default::default() }
    }

    /// Registers an event and returns its cascade number.
    fn observe(&mut self, event: &Event) -> u32 {
        let next = self.cascade_index.len() as u32;
        let c = *self.cascade_index.entry(event.cascade_id.clone()).or_insert(next);
        if c == next {
            self.cascade_start.push(event.timestamp);
            self.cascade_nodes.push(Vec::new());
        }
        self.cascade_nodes[c as usize].push(event.node);
        if !self.active[event.node as usize] {
            self.active[event.node as usize] = true;
            self.active_nodes.push(event.node);
            self.active_nodes.sort_unstable();
        }
        self.now = event.timestamp;
        self.n_events += 1;
        c
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn n_cascades(&self) -> usize {
        self.cascade_start.len()
    }

    /// Observation horizon of a cascade: the current time, capped at
    /// `t_old` after the cascade's first event.
    pub fn horizon(&self, cascade: u32, t_old: f64) -> f64 {
        self.now.min(self.cascade_start[cascade as usize] + t_old)
    }

    /// Active nodes that have not appeared in the cascade.
    pub fn uninfected(&self, cascade: u32) -> Vec<NodeId> {
        let infected = &self.cascade_nodes[cascade as usize];
        self.active_nodes.iter().copied().filter(|n| !infected.contains(n)).collect()
    }
}

/// Scores of one event against the clusters of one particle.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    /// Word predictive per outcome (existing clusters, then the new slot).
    pub log_predictive: Vec<f64>,
    pub prior: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// `ln sum_k predictive_k * prior_k`.
    pub log_marginal: f64,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Assignment posterior of `event` (from cascade number `cascade`) for a particle.
pub fn posterior(
    particle: &Particle,
    event: &Event,
    cascade: u32,
    vocab_size: usize,
    config: &EngineConfig,
) -> Result<Posterior, EngineError> {
    let k = particle.clusters.len();
    let mut log_predictive = Vec::with_capacity(k + 1);
    for c in &particle.clusters {
        log_predictive.push(c.words.log_predictive(&event.words)?);
    }
    let fresh = ClusterWordCounts::new(vocab_size, config.theta0)?;
    log_predictive.push(fresh.log_predictive(&event.words)?);

    let prior = match config.mode {
        Mode::Houston => {
            let spec = config.hazard_spec();
            let mut sums = vec![0.0; k];
            for h in particle.history(cascade) {
                let alpha = particle.clusters[h.cluster as usize - 1].adjacency.get(h.node, event.node);
                if alpha > 0.0 {
                    sums[h.cluster as usize - 1] +=
                        crate::survival::hazard(&spec, event.timestamp, h.time, alpha)?;
                }
            }
            survival_weights(std::iter::repeat(config.lambda0), &sums, config.lambda0)
        }
        Mode::NrxDm => dp_weights(particle.clusters.iter().map(|c| c.n_events), config.alpha0),
        Mode::NetRateOnly => {
            let mut p = vec![0.0; k + 1];
            p[0] = 1.0;
            p
        }
    };

    let log_joint: Vec<f64> = log_predictive
        .iter()
        .zip(&prior)
        .map(|(lp, &p)| if p > 0.0 { lp + p.ln() } else { f64::NEG_INFINITY })
        .collect();
    let log_marginal = log_sum_exp(&log_joint);
    let probabilities = log_joint.iter().map(|lj| (lj - log_marginal).exp()).collect();
    Ok(Posterior { log_predictive, prior, probabilities, log_marginal })
}

fn sample_index<R: Rng>(probabilities: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum; take the last nonzero outcome
    probabilities.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Builds the NetRate input of one cluster from a particle's histories.
pub fn cluster_cascades(
    particle: &Particle,
    cluster: ClusterId,
    stream: &StreamState,
    t_old: f64,
) -> Result<Vec<ObservedCascade>, SurvivalError> {
    let Some(state) = particle.cluster(cluster) else { return Ok(Vec::new()) };
    let mut out = Vec::with_capacity(state.cascades.len());
    for &c in &state.cascades {
        let horizon = stream.horizon(c, t_old);
        let history = particle.history(c);
        let events: Vec<(NodeId, f64)> = history
            .iter()
            .filter(|h| h.cluster == cluster && h.time <= horizon)
            .map(|h| (h.node, h.time))
            .collect();
        // nodes infected after the cutoff survived the observed window
        let mut uninfected = stream.uninfected(c);
        uninfected.extend(history.iter().filter(|h| h.time > horizon).map(|h| h.node));
        if events.is_empty() || (events.len() < 2 && uninfected.is_empty()) {
            continue;
        }
        let view = CascadeView::new(events, horizon)?;
        out.push(ObservedCascade { view, uninfected });
    }
    Ok(out)
}

fn refit(
    particle: &mut Particle,
    cluster: ClusterId,
    stream: &StreamState,
    n_nodes: usize,
    config: &EngineConfig,
) -> Result<(), EngineError> {
    let cascades = cluster_cascades(particle, cluster, stream, config.t_old)?;
    let state = &mut particle.clusters[cluster as usize - 1];
    state.events_at_refit = state.n_events;
    match fit_adjacency(n_nodes, &cascades, &config.hazard_spec(), &config.optimizer, Some(&state.adjacency))
    {
        Ok(fit) => {
            state.adjacency = fit.adjacency;
            Ok(())
        }
        Err(SurvivalError::NothingToFit) => Ok(()),
        Err(e) => Err(e.into()),
    }
}

fn refit_due(state: &ClusterState, config: &EngineConfig) -> bool {
    let since = state.n_events - state.events_at_refit;
    let growth = (config.refit_growth * state.n_events as f64).ceil() as u64;
    since >= (config.refit_period as u64).max(growth)
}

/// Processes one event in one particle: samples its cluster, updates the
/// cluster and the particle weight, and refits the touched network when due.
#[allow(clippy::too_many_arguments)]
pub fn step<R: Rng>(
    particle: &mut Particle,
    event: &Event,
    cascade: u32,
    stream: &StreamState,
    header: &StreamHeader,
    config: &EngineConfig,
    rng: &mut R,
) -> Result<ClusterId, EngineError> {
    let post = posterior(particle, event, cascade, header.vocab_size, config)?;
    let choice = sample_index(&post.probabilities, rng);
    if choice == particle.clusters.len() {
        particle.clusters.push(ClusterState::new(header.vocab_size, config.theta0, header.n_nodes));
    }
    let id = choice as ClusterId + 1;
    let event_index = particle.assignments.len() as u32;
    let state = &mut particle.clusters[choice];
    state.words.absorb(&event.words)?;
    state.n_events += 1;
    state.note_cascade(cascade);
    if particle.cascades.len() <= cascade as usize {
        particle.cascades.resize_with(cascade as usize + 1, Vec::new);
    }
    particle.cascades[cascade as usize].push(HistoryEntry {
        event: event_index,
        cluster: id,
        node: event.node,
        time: event.timestamp,
    });
    particle.assignments.push(id);
    particle.log_weight += match config.weight {
        WeightRule::Marginal => post.log_marginal,
        WeightRule::Sampled => post.log_predictive[choice],
    };

    // only the joint model reads the networks while streaming
    if config.mode == Mode::Houston && refit_due(&particle.clusters[choice], config) {
        refit(particle, id, stream, header.n_nodes, config)?;
    }
    Ok(id)
}

/// Outcome of one [`resample`] call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResampleOutcome {
    pub ess: f64,
    pub resampled: bool,
}

/// Normalized weights of a particle system.
pub fn normalized_weights(particles: &[Particle]) -> Result<Vec<f64>, EngineError> {
    let logs: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
    let total = log_sum_exp(&logs);
    if !total.is_finite() {
        return Err(EngineError::Degenerate);
    }
    Ok(logs.iter().map(|l| (l - total).exp()).collect())
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic resampling, triggered when the effective sample size falls
/// below `ess_threshold * n`. Resampled particles restart with equal weights.
pub fn resample<R: Rng>(
    particles: &mut Vec<Particle>,
    ess_threshold: f64,
    rng: &mut R,
) -> Result<ResampleOutcome, EngineError> {
    let n = particles.len();
    if n == 0 {
        return Err(EngineError::Config("no particles".into()));
    }
    let weights = normalized_weights(particles)?;
    let ess = effective_sample_size(&weights);
    if n == 1 || ess >= ess_threshold * n as f64 {
        return Ok(ResampleOutcome { ess, resampled: false });
    }
    let offset: f64 = rng.random::<f64>() / n as f64;
    let mut picks = Vec::with_capacity(n);
    let mut acc = weights[0];
    let mut i = 0;
    for slot in 0..n {
        let u = offset + slot as f64 / n as f64;
        while u >= acc && i + 1 < n {
            i += 1;
            acc += weights[i];
        }
        picks.push(i);
    }
    let mut next: Vec<Particle> = picks.iter().map(|&i| particles[i].clone()).collect();
    for p in &mut next {
        p.log_weight = 0.0;
    }
    *particles = next;
    Ok(ResampleOutcome { ess, resampled: true })
}

/// Index of the highest-weight particle; ties go to the lowest index.
pub fn best_particle(particles: &[Particle]) -> usize {
    let mut best = 0;
    for (i, p) in particles.iter().enumerate() {
        if p.log_weight > particles[best].log_weight {
            best = i;
        }
    }
    best
}

fn particle_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Streaming inference driver.
pub struct Engine {
    config: EngineConfig,
    header: StreamHeader,
    stream: StreamState,
    particles: Vec<Particle>,
    rngs: Vec<ChaCha8Rng>,
    resample_rng: ChaCha8Rng,
    pool: Option<rayon::ThreadPool>,
    diagnostics: Vec<Diagnostic>,
    started: Instant,
}

impl Engine {
    pub fn new(header: StreamHeader, config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let pool = if config.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads)
                    .build()
                    .map_err(|e| EngineError::Config(e.to_string()))?,
            )
        } else {
            None
        };
        // each particle slot owns a stream; the slot keeps it across resampling
        let rngs = (0..config.n_runs).map(|i| particle_rng(config.rng_seed, i as u64 + 1)).collect();
        Ok(Self {
            stream: StreamState::new(header.n_nodes),
            particles: vec![Particle::new(); config.n_runs],
            rngs,
            resample_rng: particle_rng(config.rng_seed, 0),
            pool,
            diagnostics: Vec::new(),
            started: Instant::now(),
            config,
            header,
        })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn stream_state(&self) -> &StreamState {
        &self.stream
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    fn check(&self, event: &Event) -> Result<(), EngineError> {
        let index = self.stream.n_events;
        let bad = |msg: String| Err(EngineError::BadEvent { index, msg });
        if event.node as usize >= self.header.n_nodes {
            return bad(format!("node {} outside the network", event.node));
        }
        if !(event.timestamp.is_finite() && event.timestamp >= 0.0) {
            return bad(format!("invalid timestamp {}", event.timestamp));
        }
        if event.timestamp < self.stream.now {
            return bad("event precedes an already processed event".into());
        }
        if event.words.distinct() == 0 {
            return bad("empty document".into());
        }
        if let Some(&c) = self.stream.cascade_index.get(&event.cascade_id) {
            if self.stream.cascade_nodes[c as usize].contains(&event.node) {
                return bad(format!("node {} already appeared in cascade {}", event.node, event.cascade_id));
            }
        }
        Ok(())
    }

    pub fn push(&mut self, event: &Event) -> Result<(), EngineError> {
        self.check(event)?;
        let cascade = self.stream.observe(event);
        let (stream, header, config) = (&self.stream, &self.header, &self.config);
        let work = |(p, rng): (&mut Particle, &mut ChaCha8Rng)| {
            step(p, event, cascade, stream, header, config, rng).map(|_| ())
        };
        match &self.pool {
            Some(pool) => pool
                .install(|| self.particles.par_iter_mut().zip(self.rngs.par_iter_mut()).try_for_each(work))?,
            None => self.particles.iter_mut().zip(self.rngs.iter_mut()).try_for_each(work)?,
        }
        let outcome = resample(&mut self.particles, self.config.ess_threshold, &mut self.resample_rng)?;
        let best = best_particle(&self.particles);
        self.diagnostics.push(Diagnostic {
            event_index: self.stream.n_events - 1,
            n_clusters: self.particles[best].n_clusters(),
            ess: outcome.ess,
            elapsed_ns: self.started.elapsed().as_nanos() as u64,
        });
        Ok(())
    }

    /// Refits every cluster of the best particle from scratch on its full
    /// history and returns its assignments and networks. The final networks
    /// depend on the assignments only, not on the online refit schedule.
    pub fn finish(mut self) -> Result<InferenceResult, EngineError> {
        let best = best_particle(&self.particles);
        let mut particle = std::mem::take(&mut self.particles[best]);
        if self.stream.n_events > 0 {
            for id in 1..=particle.n_clusters() as ClusterId {
                particle.clusters[id as usize - 1].adjacency = Adjacency::new(self.header.n_nodes);
                refit(&mut particle, id, &self.stream, self.header.n_nodes, &self.config)?;
            }
        }
        Ok(InferenceResult {
            mode: self.config.mode,
            n_nodes: self.header.n_nodes,
            assignments: particle.assignments.clone(),
            adjacencies: particle.clusters().map(|(id, c)| (id, c.adjacency.clone())).collect(),
            diagnostics: self.diagnostics,
        })
    }
}

/// Runs inference over a whole stream.
pub fn run<I>(header: StreamHeader, events: I, config: &EngineConfig) -> Result<InferenceResult, EngineError>
where
    I: IntoIterator<Item = Result<Event, StreamError>>,
{
    let mut engine = Engine::new(header, config.clone())?;
    for event in events {
        engine.push(&event?)?;
    }
    engine.finish()
}
