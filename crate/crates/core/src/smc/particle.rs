use crate::event_stream::NodeId;
use crate::language::ClusterWordCounts;
use crate::prior::ClusterId;
use crate::survival::Adjacency;

/// One event as remembered by a particle, inside its cascade's history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryEntry {
    pub event: u32,
    pub cluster: ClusterId,
    pub node: NodeId,
    pub time: f64,
}

#[derive(Clone, Debug)]
pub struct ClusterState {
    pub words: ClusterWordCounts,
    pub adjacency: Adjacency,
    /// Cascades holding at least one event of this cluster, ascending.
    pub cascades: Vec<u32>,
    pub n_events: u64,
    pub(crate) events_at_refit: u64,
}

impl ClusterState {
    pub fn new(vocab_size: usize, theta0: f64, n_nodes: usize) -> Self {
        Self {
            words: ClusterWordCounts::new(vocab_size, theta0).expect("theta0 validated by config"),
            adjacency: Adjacency::new(n_nodes),
            cascades: Vec::new(),
            n_events: 0,
            events_at_refit: 0,
        }
    }

    pub(crate) fn note_cascade(&mut self, cascade: u32) {
        if let Err(pos) = self.cascades.binary_search(&cascade) {
            self.cascades.insert(pos, cascade);
        }
    }
}

/// One SMC run: a full clustering hypothesis with its subnetworks.
#[derive(Clone, Debug, Default)]
pub struct Particle {
    /// Cluster `k` lives at index `k - 1`.
    pub(crate) clusters: Vec<ClusterState>,
    /// Per-cascade histories, indexed by cascade number.
    pub(crate) cascades: Vec<Vec<HistoryEntry>>,
    pub(crate) assignments: Vec<ClusterId>,
    pub(crate) log_weight: f64,
}

impl Particle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster(&self, id: ClusterId) -> Option<&ClusterState> {
        (id as usize).checked_sub(1).and_then(|i| self.clusters.get(i))
    }

    pub fn clusters(&self) -> impl Iterator<Item = (ClusterId, &ClusterState)> {
        self.clusters.iter().enumerate().map(|(i, c)| (i as ClusterId + 1, c))
    }

    pub fn assignments(&self) -> &[ClusterId] {
        &self.assignments
    }

    pub fn history(&self, cascade: u32) -> &[HistoryEntry] {
        self.cascades.get(cascade as usize).map_or(&[], Vec::as_slice)
    }

    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    pub fn set_log_weight(&mut self, w: f64) {
        self.log_weight = w;
    }

    /// Checks that the per-cascade histories hold exactly the assigned events,
    /// each under the cluster it was assigned to.
    pub fn histories_consistent(&self) -> bool {
        let mut seen = vec![false; self.assignments.len()];
        let mut per_cluster = vec![0u64; self.clusters.len()];
        for (c, history) in self.cascades.iter().enumerate() {
            for h in history {
                let Some(slot) = seen.get_mut(h.event as usize) else { return false };
                if *slot || self.assignments[h.event as usize] != h.cluster {
                    return false;
                }
                *slot = true;
                let Some(cluster) = self.cluster(h.cluster) else { return false };
                if cluster.cascades.binary_search(&(c as u32)).is_err() {
                    return false;
                }
                per_cluster[h.cluster as usize - 1] += 1;
            }
        }
        seen.iter().all(|&s| s) && self.clusters.iter().zip(&per_cluster).all(|(c, &n)| c.n_events == n)
    }
}
