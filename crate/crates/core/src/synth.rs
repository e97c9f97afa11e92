//! Synthetic benchmark: base networks, weighted subnetworks, exponential
//! cascades and per-cluster word emission.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};

use crate::event_stream::{write_stream, Event, NodeId, StreamError, StreamHeader, WordCounts};
use crate::smc::{read_label_file, sidecar, ResultError};
use crate::survival::{read_edge_list, write_edge_list, Adjacency, SurvivalError};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error(transparent)]
    Result(#[from] ResultError),
}

#[derive(Clone, Debug, PartialEq)]
pub enum BaseNetwork {
    /// Preferential attachment, `m` edges per new node.
    PowerLaw { m: usize },
    /// Independent edges with probability `p`.
    ErdosRenyi { p: f64 },
    /// Arcs read from a `<src> <dst> [<alpha>]` file.
    EdgeListFile(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub base: BaseNetwork,
    pub n_nodes: usize,
    pub n_subnets: usize,
    pub subnet_size: usize,
    pub vocab_size: usize,
    pub words_per_doc: usize,
    pub n_events_target: usize,
    /// Per-cascade observation window; `None` means `10 / mean(alpha)`.
    pub window: Option<f64>,
    /// Symmetric Dirichlet concentration of the cluster word distributions.
    pub topic_concentration: f64,
    /// Average number of cascades running at once.
    pub concurrency: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            base: BaseNetwork::PowerLaw { m: 2 },
            n_nodes: 500,
            n_subnets: 5,
            subnet_size: 250,
            vocab_size: 100,
            words_per_doc: 5,
            n_events_target: 55_000,
            window: None,
            topic_concentration: 0.1,
            concurrency: 10.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Erdos-Renyi edge probability matching the expected degree `2m` of a
    /// preferential-attachment graph.
    pub fn matched_er_probability(n_nodes: usize, m: usize) -> f64 {
        (2.0 * m as f64 / (n_nodes as f64 - 1.0)).min(1.0)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_nodes == 0 {
            return bad("n_nodes must be at least 1".into());
        }
        if self.subnet_size == 0 || self.subnet_size > self.n_nodes {
            return bad(format!("subnet size {} must lie in 1..={}", self.subnet_size, self.n_nodes));
        }
        if self.n_subnets == 0 {
            return bad("at least one subnetwork is required".into());
        }
        if self.vocab_size == 0 || self.words_per_doc == 0 {
            return bad("vocab and words per document must be at least 1".into());
        }
        match &self.base {
            BaseNetwork::PowerLaw { m } if *m == 0 || *m >= self.n_nodes => {
                return bad(format!("attachment count {m} must lie in 1..{}", self.n_nodes))
            }
            BaseNetwork::ErdosRenyi { p } if !(0.0..=1.0).contains(p) => {
                return bad(format!("edge probability {p} outside [0, 1]"))
            }
            _ => {}
        }
        if let Some(w) = self.window {
            if w.is_nan() || w <= 0.0 {
                return bad(format!("window {w} must be positive"));
            }
        }
        if !(self.topic_concentration > 0.0 && self.concurrency > 0.0) {
            return bad("topic concentration and concurrency must be positive".into());
        }
        Ok(())
    }

    /// `key=value` lines describing the configuration.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        match &self.base {
            BaseNetwork::PowerLaw { m } => {
                let _ = writeln!(s, "base=pl\nm={m}");
            }
            BaseNetwork::ErdosRenyi { p } => {
                let _ = writeln!(s, "base=er\np={p}");
            }
            BaseNetwork::EdgeListFile(path) => {
                let _ = writeln!(s, "base=file\nedge_file={}", path.display());
            }
        }
        let window = self.window.map_or("auto".to_string(), |w| w.to_string());
        let _ = write!(
            s,
            "n_nodes={}\nn_subnets={}\nsubnet_size={}\nvocab={}\nwords_per_doc={}\n\
             n_events={}\nwindow={window}\ntopic_concentration={}\nconcurrency={}\nseed={}\n",
            self.n_nodes,
            self.n_subnets,
            self.subnet_size,
            self.vocab_size,
            self.words_per_doc,
            self.n_events_target,
            self.topic_concentration,
            self.concurrency,
            self.seed
        );
        s
    }
}

/// Base network as a sorted list of distinct arcs.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseGraph {
    pub n_nodes: usize,
    pub arcs: Vec<(NodeId, NodeId)>,
}

impl BaseGraph {
    fn from_undirected(n_nodes: usize, edges: &[(NodeId, NodeId)]) -> Self {
        let mut arcs: Vec<_> = edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        arcs.sort_unstable();
        arcs.dedup();
        Self { n_nodes, arcs }
    }

    /// Number of weakly connected components, isolated nodes included.
    pub fn components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n_nodes).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut count = self.n_nodes;
        for &(a, b) in &self.arcs {
            let (ra, rb) = (find(&mut parent, a as usize), find(&mut parent, b as usize));
            if ra != rb {
                parent[ra] = rb;
                count -= 1;
            }
        }
        count
    }
}

/// Preferential attachment grown from a star on `m + 1` nodes; every later
/// node links to `m` distinct existing nodes chosen proportionally to degree.
fn power_law_edges<R: Rng>(n: usize, m: usize, rng: &mut R) -> Vec<(NodeId, NodeId)> {
    let mut edges = Vec::with_capacity(m * n.saturating_sub(m));
    // one entry per edge endpoint: a uniform pick is a degree-proportional pick
    let mut endpoints: Vec<NodeId> = Vec::new();
    for leaf in 1..=m as NodeId {
        edges.push((0, leaf));
        endpoints.extend([0, leaf]);
    }
    for v in (m + 1)..n {
        let mut targets: Vec<NodeId> = Vec::with_capacity(m);
        while targets.len() < m {
            let t = endpoints[rng.random_range(0..endpoints.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for t in targets {
            edges.push((t, v as NodeId));
            endpoints.extend([t, v as NodeId]);
        }
    }
    edges
}

fn erdos_renyi_edges<R: Rng>(n: usize, p: f64, rng: &mut R) -> Vec<(NodeId, NodeId)> {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((a as NodeId, b as NodeId));
            }
        }
    }
    edges
}

fn read_arcs(path: &Path, n_nodes: usize) -> Result<Vec<(NodeId, NodeId)>, SynthError> {
    let file = File::open(path).map_err(|source| SynthError::Io { path: path.into(), source })?;
    let mut arcs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| SynthError::Io { path: path.into(), source })?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| SynthError::Format { path: path.into(), msg: format!("line {}: {msg}", i + 1) };
        let mut parts = t.split_whitespace();
        let s: NodeId = parts.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("bad src"))?;
        let d: NodeId = parts.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("bad dst"))?;
        if s as usize >= n_nodes || d as usize >= n_nodes {
            return Err(bad("node outside the declared network"));
        }
        if s != d {
            arcs.push((s, d));
        }
    }
    Ok(arcs)
}

/// Builds the base network. Undirected models emit both arcs of every edge.
pub fn gen_base_network<R: Rng>(config: &GenConfig, rng: &mut R) -> Result<BaseGraph, SynthError> {
    config.validate()?;
    let n = config.n_nodes;
    Ok(match &config.base {
        BaseNetwork::PowerLaw { m } => BaseGraph::from_undirected(n, &power_law_edges(n, *m, rng)),
        BaseNetwork::ErdosRenyi { p } => BaseGraph::from_undirected(n, &erdos_renyi_edges(n, *p, rng)),
        BaseNetwork::EdgeListFile(path) => {
            let mut arcs = read_arcs(path, n)?;
            arcs.sort_unstable();
            arcs.dedup();
            BaseGraph { n_nodes: n, arcs }
        }
    })
}

/// One ground-truth subnetwork.
#[derive(Clone, Debug, PartialEq)]
pub struct Subnet {
    /// Sampled nodes, ascending.
    pub nodes: Vec<NodeId>,
    pub adjacency: Adjacency,
}

fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Induced subgraphs on uniform node samples, with `Uniform(0, 1)` rates.
pub fn sample_subnets<R: Rng>(
    base: &BaseGraph,
    config: &GenConfig,
    rng: &mut R,
) -> Result<Vec<Subnet>, SynthError> {
    config.validate()?;
    let mut subnets = Vec::with_capacity(config.n_subnets);
    for _ in 0..config.n_subnets {
        let mut nodes: Vec<NodeId> =
            index::sample(rng, base.n_nodes, config.subnet_size).into_iter().map(|i| i as NodeId).collect();
        nodes.sort_unstable();
        let mut inside = vec![false; base.n_nodes];
        for &v in &nodes {
            inside[v as usize] = true;
        }
        let mut adjacency = Adjacency::new(base.n_nodes);
        for &(a, b) in &base.arcs {
            if inside[a as usize] && inside[b as usize] {
                adjacency.set(a, b, open_unit(rng))?;
            }
        }
        subnets.push(Subnet { nodes, adjacency });
    }
    Ok(subnets)
}

/// Out-neighbour lists of an adjacency, indexed by node.
pub fn out_lists(adj: &Adjacency) -> Vec<Vec<(NodeId, f64)>> {
    let mut lists = vec![Vec::new(); adj.n_nodes()];
    for ((s, d), a) in adj.iter() {
        lists[s as usize].push((d, a));
    }
    lists
}

#[derive(PartialEq)]
struct Arrival(f64, NodeId);

impl Eq for Arrival {}

impl PartialOrd for Arrival {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Arrival {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Simulates one exponential cascade from `seed` at time 0. Each newly
/// infected node draws an `Exp(alpha)` delay toward every uninfected
/// out-neighbour; a node's infection time is its earliest arrival. Events
/// after `window` are censored.
pub fn simulate_cascade<R: Rng>(
    out: &[Vec<(NodeId, f64)>],
    seed: NodeId,
    window: f64,
    rng: &mut R,
) -> Vec<(NodeId, f64)> {
    let mut infected = vec![false; out.len()];
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Arrival(0.0, seed)));
    let mut events = Vec::new();
    while let Some(Reverse(Arrival(t, v))) = heap.pop() {
        if t > window {
            break;
        }
        if infected[v as usize] {
            continue;
        }
        infected[v as usize] = true;
        events.push((v, t));
        for &(w, alpha) in &out[v as usize] {
            if !infected[w as usize] && alpha > 0.0 {
                let delay = Exp::new(alpha).expect("positive rate").sample(rng);
                heap.push(Reverse(Arrival(t + delay, w)));
            }
        }
    }
    events
}

/// Cascade events before words are attached.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeEvent {
    pub cascade: u32,
    pub node: NodeId,
    pub time: f64,
    pub subnet: u32,
}

/// Default observation window: `10 / mean(alpha)` over every subnetwork arc.
pub fn default_window(subnets: &[Subnet]) -> f64 {
    let (sum, n) =
        subnets.iter().flat_map(|s| s.adjacency.iter()).fold((0.0, 0usize), |(s, n), (_, a)| (s + a, n + 1));
    if n == 0 {
        1.0
    } else {
        10.0 / (sum / n as f64)
    }
}

/// Simulates cascades until `n_events_target` events exist (the last cascade
/// is cut short at the target), then interleaves them in absolute time.
pub fn simulate_cascades<R: Rng>(
    subnets: &[Subnet],
    config: &GenConfig,
    window: f64,
    rng: &mut R,
) -> Vec<CascadeEvent> {
    let outs: Vec<_> = subnets.iter().map(|s| out_lists(&s.adjacency)).collect();
    let mut cascades: Vec<(u32, Vec<(NodeId, f64)>)> = Vec::new();
    let mut total = 0;
    while total < config.n_events_target {
        let k = rng.random_range(0..subnets.len());
        let nodes = &subnets[k].nodes;
        let seed = nodes[rng.random_range(0..nodes.len())];
        let mut events = simulate_cascade(&outs[k], seed, window, rng);
        events.truncate(config.n_events_target - total);
        total += events.len();
        cascades.push((k as u32, events));
    }

    let durations: Vec<f64> = cascades.iter().map(|(_, e)| e.last().map_or(0.0, |l| l.1) - e[0].1).collect();
    let mean_duration = match durations.iter().sum::<f64>() / durations.len().max(1) as f64 {
        d if d > 0.0 => d,
        _ => window,
    };
    let span = cascades.len() as f64 * mean_duration / config.concurrency;

    let mut all = Vec::with_capacity(total);
    for (c, (k, events)) in cascades.into_iter().enumerate() {
        let start = rng.random::<f64>() * span;
        for (node, t) in events {
            all.push(CascadeEvent { cascade: c as u32, node, time: start + t, subnet: k });
        }
    }
    // stable: same-time events keep cascade order and within-cascade order
    all.sort_by(|a, b| a.time.total_cmp(&b.time));
    all
}

/// Draws one word distribution per cluster from a symmetric Dirichlet.
pub fn sample_topics<R: Rng>(config: &GenConfig, rng: &mut R) -> Vec<Vec<f64>> {
    let gamma = Gamma::new(config.topic_concentration, 1.0).expect("validated concentration");
    (0..config.n_subnets)
        .map(|_| loop {
            let draws: Vec<f64> = (0..config.vocab_size).map(|_| gamma.sample(rng)).collect();
            let sum: f64 = draws.iter().sum();
            if sum > 0.0 && sum.is_finite() {
                break draws.into_iter().map(|d| d / sum).collect();
            }
        })
        .collect()
}

/// Draws `words_per_doc` i.i.d. words per event from its cluster's distribution.
pub fn emit_words<R: Rng>(
    labels: &[u32],
    topics: &[Vec<f64>],
    words_per_doc: usize,
    rng: &mut R,
) -> Vec<WordCounts> {
    let samplers: Vec<_> = topics.iter().map(|t| WeightedIndex::new(t).expect("normalized topic")).collect();
    labels
        .iter()
        .map(|&k| {
            let tokens: Vec<u32> =
                (0..words_per_doc).map(|_| samplers[k as usize].sample(rng) as u32).collect();
            WordCounts::from_tokens(&tokens).expect("at least one word")
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub subnets: Vec<Subnet>,
    pub topics: Vec<Vec<f64>>,
    /// True cluster of each event, in stream order.
    pub labels: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: GenConfig,
    pub header: StreamHeader,
    pub events: Vec<Event>,
    pub truth: GroundTruth,
    pub window: f64,
    pub base_arcs: usize,
    pub base_components: usize,
    pub n_cascades: usize,
}

fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs the whole generation protocol from `config.seed`.
pub fn generate(config: &GenConfig) -> Result<Dataset, SynthError> {
    config.validate()?;
    let base = gen_base_network(config, &mut component_rng(config.seed, 1))?;
    let subnets = sample_subnets(&base, config, &mut component_rng(config.seed, 2))?;
    let topics = sample_topics(config, &mut component_rng(config.seed, 3));
    let window = config.window.unwrap_or_else(|| default_window(&subnets));
    let raw = simulate_cascades(&subnets, config, window, &mut component_rng(config.seed, 4));
    let labels: Vec<u32> = raw.iter().map(|e| e.subnet).collect();
    let words = emit_words(&labels, &topics, config.words_per_doc, &mut component_rng(config.seed, 5));
    let n_cascades = raw.iter().map(|e| e.cascade + 1).max().unwrap_or(0) as usize;
    let events = raw
        .iter()
        .zip(words)
        .map(|(e, w)| Event::new(e.cascade.to_string(), e.node, e.time, w))
        .collect::<Vec<_>>();
    Ok(Dataset {
        config: config.clone(),
        header: StreamHeader::new(config.n_nodes, config.vocab_size, events.len()),
        events,
        truth: GroundTruth { subnets, topics, labels },
        window,
        base_arcs: base.arcs.len(),
        base_components: base.components(),
        n_cascades,
    })
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.to_owned(), source }
}

/// Writes the stream plus `.labels`, `.net.<k>` and `.meta` sidecars.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<(), SynthError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    write_stream(&dataset.header, &dataset.events, file)?;

    let labels_path = sidecar(path, "labels");
    let mut out = BufWriter::new(File::create(&labels_path).map_err(io_err(&labels_path))?);
    for (i, k) in dataset.truth.labels.iter().enumerate() {
        writeln!(out, "{i} {k}").map_err(io_err(&labels_path))?;
    }
    out.flush().map_err(io_err(&labels_path))?;

    for (k, s) in dataset.truth.subnets.iter().enumerate() {
        let p = sidecar(path, &format!("net.{k}"));
        let f = File::create(&p).map_err(io_err(&p))?;
        write_edge_list(&s.adjacency, f).map_err(io_err(&p))?;
    }

    let meta_path = sidecar(path, "meta");
    let mut meta = dataset.config.to_key_values();
    let _ = write!(
        meta,
        "window_T={}\nn_cascades={}\nbase_arcs={}\nbase_components={}\n",
        dataset.window, dataset.n_cascades, dataset.base_arcs, dataset.base_components
    );
    fs::write(&meta_path, meta).map_err(io_err(&meta_path))?;
    Ok(())
}

/// Ground-truth sidecars of a stream file.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthFiles {
    pub labels: Vec<u32>,
    pub nets: BTreeMap<u32, Adjacency>,
    pub meta: BTreeMap<String, String>,
}

/// Reads `<stream>.labels` and every `<stream>.net.<k>` for consecutive `k`
/// from 0. `<stream>.meta` is optional.
pub fn read_truth(stream_path: &Path, n_nodes: usize) -> Result<TruthFiles, SynthError> {
    let labels = read_label_file(&sidecar(stream_path, "labels"))?;
    let mut nets = BTreeMap::new();
    for k in 0.. {
        let p = sidecar(stream_path, &format!("net.{k}"));
        if !p.exists() {
            break;
        }
        let f = File::open(&p).map_err(io_err(&p))?;
        nets.insert(k, read_edge_list(BufReader::new(f), n_nodes)?);
    }
    if nets.is_empty() {
        return Err(SynthError::Format {
            path: sidecar(stream_path, "net.0"),
            msg: "no ground-truth networks found".into(),
        });
    }
    let meta_path = sidecar(stream_path, "meta");
    let meta = match fs::read_to_string(&meta_path) {
        Ok(text) => text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        Err(_) => BTreeMap::new(),
    };
    Ok(TruthFiles { labels, nets, meta })
}
