//! Cluster-assignment priors: the Dirichlet process and the Dirichlet-Survival
//! process, where cluster populations are replaced by the summed hazard of the
//! same-cascade, same-cluster history.
//!
//! Both priors return a vector over `K + 1` outcomes: the existing clusters in
//! ascending id order, then the slot for opening a new cluster.

use std::collections::BTreeMap;

use crate::event_stream::NodeId;
use crate::survival::{hazard, Adjacency, HazardSpec, SurvivalError};

pub type ClusterId = u32;

#[derive(Debug, thiserror::Error)]
pub enum PriorError {
    #[error("concentration must be positive, got {0}")]
    InvalidConcentration(f64),
    #[error("exogenous rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("cluster {0} has history but no adjacency or rate")]
    MissingCluster(ClusterId),
    #[error("cluster {0} has an empty population")]
    EmptyCluster(ClusterId),
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpState {
    counts: BTreeMap<ClusterId, u64>,
    alpha0: f64,
}

impl DpState {
    pub fn new(counts: BTreeMap<ClusterId, u64>, alpha0: f64) -> Result<Self, PriorError> {
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(PriorError::InvalidConcentration(alpha0));
        }
        if let Some((&k, _)) = counts.iter().find(|(_, &n)| n == 0) {
            return Err(PriorError::EmptyCluster(k));
        }
        Ok(Self { counts, alpha0 })
    }

    pub fn counts(&self) -> &BTreeMap<ClusterId, u64> {
        &self.counts
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }
}

/// Chinese-restaurant probabilities `N_k / (alpha0 + N)` and `alpha0 / (alpha0 + N)`.
pub fn dp_prior(state: &DpState) -> Vec<f64> {
    dp_weights(state.counts.values().copied(), state.alpha0)
}

pub(crate) fn dp_weights(counts: impl Iterator<Item = u64>, alpha0: f64) -> Vec<f64> {
    let mut out: Vec<f64> = counts.map(|n| n as f64).collect();
    let total: f64 = out.iter().sum::<f64>() + alpha0;
    for p in &mut out {
        *p /= total;
    }
    out.push(alpha0 / total);
    out
}

/// Exogenous rates: one per existing cluster plus one for the new-cluster slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ExogenousRates {
    per_cluster: BTreeMap<ClusterId, f64>,
    new_cluster: f64,
}

impl ExogenousRates {
    pub fn new(per_cluster: BTreeMap<ClusterId, f64>, new_cluster: f64) -> Result<Self, PriorError> {
        for &r in per_cluster.values().chain(std::iter::once(&new_cluster)) {
            if !(r > 0.0 && r.is_finite()) {
                return Err(PriorError::InvalidRate(r));
            }
        }
        Ok(Self { per_cluster, new_cluster })
    }

    /// The same rate for every listed cluster and for the new-cluster slot.
    pub fn uniform(lambda0: f64, clusters: impl IntoIterator<Item = ClusterId>) -> Result<Self, PriorError> {
        Self::new(clusters.into_iter().map(|k| (k, lambda0)).collect(), lambda0)
    }

    pub fn clusters(&self) -> impl Iterator<Item = ClusterId> + '_ {
        self.per_cluster.keys().copied()
    }

    pub fn rate(&self, k: ClusterId) -> Option<f64> {
        self.per_cluster.get(&k).copied()
    }

    pub fn new_cluster(&self) -> f64 {
        self.new_cluster
    }
}

/// Normalizes `lambda0_k + hazard_k` over existing clusters against the
/// new-cluster slot `lambda0_new`.
pub(crate) fn survival_weights(
    exogenous: impl Iterator<Item = f64>,
    hazard_sums: &[f64],
    new_cluster: f64,
) -> Vec<f64> {
    let mut out: Vec<f64> = exogenous.zip(hazard_sums).map(|(l, h)| l + h).collect();
    out.push(new_cluster);
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Dirichlet-Survival prior of an event on `target` at time `t`.
///
/// `histories` holds, per cluster, the `(node, time)` events of the current
/// cascade already attributed to that cluster. Parents at the same timestamp
/// as `t` count with the full rate.
pub fn survival_prior(
    histories: &BTreeMap<ClusterId, Vec<(NodeId, f64)>>,
    target: NodeId,
    t: f64,
    adjacencies: &BTreeMap<ClusterId, Adjacency>,
    rates: &ExogenousRates,
    spec: &HazardSpec,
) -> Result<Vec<f64>, PriorError> {
    for &k in histories.keys() {
        if !adjacencies.contains_key(&k) || rates.rate(k).is_none() {
            return Err(PriorError::MissingCluster(k));
        }
    }
    let mut sums = Vec::with_capacity(rates.per_cluster.len());
    for k in rates.clusters() {
        let mut sum = 0.0;
        if let (Some(history), Some(adj)) = (histories.get(&k), adjacencies.get(&k)) {
            for &(node, t_j) in history {
                sum += hazard(spec, t, t_j, adj.get(node, target))?;
            }
        }
        sums.push(sum);
    }
    Ok(survival_weights(rates.per_cluster.values().copied(), &sums, rates.new_cluster))
}

/// Shannon entropy in nats of an assignment distribution.
pub fn assignment_entropy(prior: &[f64]) -> Result<f64, PriorError> {
    let sum: f64 = prior.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || prior.iter().any(|&p| p < 0.0) {
        return Err(PriorError::NotNormalized(sum));
    }
    Ok(prior.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum())
}
