use std::collections::{BTreeMap, BTreeSet};

use houston::event_stream::Event;
use houston::smc::{run, Engine, EngineConfig, Mode, WeightRule};
use houston::survival::{fit_adjacency, CascadeView, HazardSpec, ObservedCascade, OptimizerOptions};
use houston::synth::{generate, BaseNetwork, Dataset, GenConfig};
use proptest::prelude::*;

fn dataset(seed: u64, events: usize) -> Dataset {
    generate(&GenConfig {
        base: BaseNetwork::PowerLaw { m: 2 },
        n_nodes: 30,
        n_subnets: 2,
        subnet_size: 15,
        vocab_size: 20,
        words_per_doc: 4,
        n_events_target: events,
        seed,
        ..GenConfig::default()
    })
    .unwrap()
}

fn infer(ds: &Dataset, config: &EngineConfig) -> houston::InferenceResult {
    run(ds.header, ds.events.iter().cloned().map(Ok), config).unwrap()
}

#[test]
fn netrate_mode_equals_a_direct_fit() {
    let ds = dataset(3, 400);
    let config = EngineConfig { mode: Mode::NetRateOnly, ..EngineConfig::default() };
    let result = infer(&ds, &config);
    assert!(result.assignments.iter().all(|&k| k == 1));
    assert_eq!(result.adjacencies.len(), 1);

    // every cascade, all nodes seen in the stream as the uninfected pool,
    // observed up to the last timestamp
    let now = ds.events.last().unwrap().timestamp;
    let active: BTreeSet<u32> = ds.events.iter().map(|e| e.node).collect();
    let mut order: Vec<&str> = Vec::new();
    let mut by_cascade: BTreeMap<&str, Vec<(u32, f64)>> = BTreeMap::new();
    for e in &ds.events {
        let list = by_cascade.entry(&e.cascade_id).or_default();
        if list.is_empty() {
            order.push(&e.cascade_id);
        }
        list.push((e.node, e.timestamp));
    }
    let cascades: Vec<ObservedCascade> = order
        .iter()
        .filter_map(|c| {
            let events = by_cascade[c].clone();
            let uninfected: Vec<u32> =
                active.iter().copied().filter(|n| !events.iter().any(|&(v, _)| v == *n)).collect();
            (events.len() >= 2 || !uninfected.is_empty())
                .then(|| ObservedCascade::new(CascadeView::new(events, now).unwrap(), uninfected).unwrap())
        })
        .collect();
    let fit =
        fit_adjacency(30, &cascades, &HazardSpec::unbounded(), &OptimizerOptions::default(), None).unwrap();
    let got: Vec<_> = result.adjacencies[&1].iter().collect();
    let want: Vec<_> = fit.adjacency.iter().collect();
    assert_eq!(got.len(), want.len());
    for ((ka, a), (kb, b)) in got.iter().zip(&want) {
        assert_eq!(ka, kb);
        assert!((a - b).abs() <= 1e-12 * b.max(1.0), "{ka:?}: {a} vs {b}");
    }
}

/// Same documents in the same order with relabelled nodes and rescaled time.
fn disguise(events: &[Event], n_nodes: u32) -> Vec<Event> {
    events
        .iter()
        .map(|e| {
            let node = (e.node * 7 + 3) % n_nodes;
            Event::new(format!("x{}", e.cascade_id), node, 3.0 * e.timestamp + 1.0, e.words.clone())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn nrxdm_ignores_times_and_nodes(seed in 0u64..1000, runs in 1usize..4) {
        let ds = dataset(seed, 250);
        let config = EngineConfig { mode: Mode::NrxDm, n_runs: runs, rng_seed: seed, ..EngineConfig::default() };
        let a = infer(&ds, &config);
        let moved = disguise(&ds.events, 30);
        let b = run(ds.header, moved.into_iter().map(Ok), &config).unwrap();
        prop_assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn histories_stay_consistent(seed in 0u64..1000) {
        let ds = dataset(seed, 200);
        let config = EngineConfig { n_runs: 3, rng_seed: seed, t_old: ds.window, ..EngineConfig::default() };
        let mut engine = Engine::new(ds.header, config).unwrap();
        for e in &ds.events {
            engine.push(e).unwrap();
            prop_assert!(engine.particles().iter().all(|p| p.histories_consistent()));
        }
    }

    #[test]
    fn labels_are_contiguous_and_cover_all_clusters(seed in 0u64..1000, mode in prop_oneof![Just(Mode::Houston), Just(Mode::NrxDm)]) {
        let ds = dataset(seed, 200);
        let r = infer(&ds, &EngineConfig { mode, rng_seed: seed, ..EngineConfig::default() });
        let used: BTreeSet<u32> = r.assignments.iter().copied().collect();
        let keys: BTreeSet<u32> = r.adjacencies.keys().copied().collect();
        prop_assert_eq!(&used, &keys);
        prop_assert_eq!(used, (1..=keys.len() as u32).collect::<BTreeSet<_>>());
    }
}

#[test]
fn serial_and_parallel_runs_agree() {
    let ds = dataset(11, 500);
    for weight in [WeightRule::Marginal, WeightRule::Sampled] {
        let serial =
            EngineConfig { n_runs: 6, rng_seed: 2, weight, t_old: ds.window, ..EngineConfig::default() };
        let parallel = EngineConfig { threads: 4, ..serial.clone() };
        let (a, b) = (infer(&ds, &serial), infer(&ds, &parallel));
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.adjacencies, b.adjacencies);
    }
}

#[test]
fn same_seed_same_result() {
    let ds = dataset(12, 300);
    let config = EngineConfig { rng_seed: 9, ..EngineConfig::default() };
    let (a, b) = (infer(&ds, &config), infer(&ds, &config));
    // diagnostics carry wall-clock times; everything else must match
    assert_eq!(a.assignments, b.assignments);
    assert_eq!(a.adjacencies, b.adjacencies);
}

#[test]
fn diagnostics_follow_the_stream() {
    let ds = dataset(13, 150);
    let r = infer(&ds, &EngineConfig::default());
    assert_eq!(r.diagnostics.len(), 150);
    for (i, d) in r.diagnostics.iter().enumerate() {
        assert_eq!(d.event_index, i);
        assert!(d.ess >= 1.0 - 1e-9 && d.ess <= 4.0 + 1e-9);
        assert!(d.n_clusters >= 1);
    }
    assert!(r.diagnostics.windows(2).all(|w| w[0].elapsed_ns <= w[1].elapsed_ns));
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = dataset(1, 10);
    for bad in [
        EngineConfig { n_runs: 0, ..EngineConfig::default() },
        EngineConfig { alpha0: 0.0, ..EngineConfig::default() },
        EngineConfig { threads: 0, ..EngineConfig::default() },
    ] {
        assert!(Engine::new(ds.header, bad).is_err());
    }
}
