use std::collections::BTreeMap;

use houston::prior::{assignment_entropy, dp_prior, survival_prior, DpState, ExogenousRates};
use houston::survival::{Adjacency, HazardSpec};
use proptest::prelude::*;

const N: usize = 6;

#[derive(Clone, Debug)]
struct Case {
    histories: BTreeMap<u32, Vec<(u32, f64)>>,
    adjacencies: BTreeMap<u32, Adjacency>,
    rates: ExogenousRates,
    target: u32,
    t: f64,
}

fn arb_case() -> impl Strategy<Value = Case> {
    (0usize..6)
        .prop_flat_map(|k| {
            let cluster = (
                prop::collection::vec((0..N as u32, 0.0f64..5.0), 0..4),
                prop::collection::vec((0..N as u32, 0..N as u32, 0.0f64..3.0), 0..8),
                1e-4f64..2.0,
            );
            (prop::collection::vec(cluster, k), 1e-4f64..2.0, 0..N as u32, 5.0f64..8.0)
        })
        .prop_map(|(clusters, new_rate, target, t)| {
            let mut histories = BTreeMap::new();
            let mut adjacencies = BTreeMap::new();
            let mut per_cluster = BTreeMap::new();
            for (i, (hist, edges, rate)) in clusters.into_iter().enumerate() {
                let id = i as u32 + 1;
                if !hist.is_empty() {
                    histories.insert(id, hist);
                }
                let edges = edges.into_iter().filter(|(s, d, _)| s != d);
                adjacencies.insert(id, Adjacency::from_edges(N, edges).unwrap());
                per_cluster.insert(id, rate);
            }
            Case {
                histories,
                adjacencies,
                rates: ExogenousRates::new(per_cluster, new_rate).unwrap(),
                target,
                t,
            }
        })
}

fn eval(c: &Case, spec: &HazardSpec) -> Vec<f64> {
    survival_prior(&c.histories, c.target, c.t, &c.adjacencies, &c.rates, spec).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn survival_prior_is_a_positive_distribution(c in arb_case(), cutoff in prop_oneof![Just(f64::INFINITY), 0.5f64..6.0]) {
        let p = eval(&c, &HazardSpec::constant(cutoff).unwrap());
        prop_assert_eq!(p.len(), c.adjacencies.len() + 1);
        prop_assert!(p.iter().all(|&x| x > 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(assignment_entropy(&p).unwrap() <= (p.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn survival_prior_matches_direct_formula(c in arb_case()) {
        // (lambda0_k + sum of in-window rates) over the total with the new slot
        let p = eval(&c, &HazardSpec::unbounded());
        let mut mass: Vec<f64> = c.adjacencies.iter().map(|(k, adj)| {
            let h: f64 = c.histories.get(k).map_or(0.0, |hist| {
                hist.iter().map(|&(j, _)| adj.get(j, c.target)).sum()
            });
            c.rates.rate(*k).unwrap() + h
        }).collect();
        mass.push(c.rates.new_cluster());
        let total: f64 = mass.iter().sum();
        for (got, m) in p.iter().zip(&mass) {
            prop_assert!((got - m / total).abs() < 1e-12);
        }
    }

    #[test]
    fn stronger_edges_raise_their_cluster(mut c in arb_case(), boost in 0.1f64..5.0) {
        let Some((&k, hist)) = c.histories.iter().next() else { return Ok(()) };
        let parent = hist[0].0;
        c.target = (parent + 1) % N as u32;
        let before = eval(&c, &HazardSpec::unbounded());
        let mut stronger = c.clone();
        let adj = stronger.adjacencies.get_mut(&k).unwrap();
        let a = adj.get(parent, c.target);
        adj.set(parent, c.target, a + boost).unwrap();
        let after = eval(&stronger, &HazardSpec::unbounded());
        let pos = (k - 1) as usize;
        prop_assert!(after[pos] > before[pos]);
        for i in (0..after.len()).filter(|&i| i != pos) {
            prop_assert!(after[i] < before[i]);
        }
    }

    #[test]
    fn dp_prior_is_the_chinese_restaurant(counts in prop::collection::vec(1u64..50, 0..8), alpha in 0.01f64..10.0) {
        let map: BTreeMap<u32, u64> = counts.iter().enumerate().map(|(i, &n)| (i as u32 + 1, n)).collect();
        let p = dp_prior(&DpState::new(map, alpha).unwrap());
        let total = counts.iter().sum::<u64>() as f64 + alpha;
        for (got, &n) in p.iter().zip(&counts) {
            prop_assert!((got - n as f64 / total).abs() < 1e-15);
        }
        prop_assert!((p[counts.len()] - alpha / total).abs() < 1e-15);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn empty_history_with_equal_rates_is_uniform() {
    for k in 0..8u32 {
        let adjacencies: BTreeMap<u32, Adjacency> = (1..=k).map(|id| (id, Adjacency::new(N))).collect();
        let rates = ExogenousRates::uniform(0.001, 1..=k).unwrap();
        let p =
            survival_prior(&BTreeMap::new(), 0, 1.0, &adjacencies, &rates, &HazardSpec::unbounded()).unwrap();
        let u = 1.0 / f64::from(k + 1);
        assert!(p.iter().all(|&x| (x - u).abs() < 1e-15), "{p:?}");
    }
}

#[test]
fn history_of_unknown_cluster_is_an_error() {
    let histories = BTreeMap::from([(3, vec![(0, 0.0)])]);
    let rates = ExogenousRates::uniform(0.1, [1]).unwrap();
    let adjacencies = BTreeMap::from([(1, Adjacency::new(N))]);
    assert!(survival_prior(&histories, 1, 1.0, &adjacencies, &rates, &HazardSpec::unbounded()).is_err());
    assert!(DpState::new(BTreeMap::from([(1, 0)]), 1.0).is_err());
    assert!(ExogenousRates::uniform(0.0, [1]).is_err());
}
