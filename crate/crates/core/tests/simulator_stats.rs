use std::collections::{BTreeMap, BTreeSet};

use houston::survival::Adjacency;
use houston::synth::{generate, out_lists, simulate_cascade, BaseNetwork, GenConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Kolmogorov-Smirnov p-value of a sample against a continuous CDF, using
/// the asymptotic distribution with Stephens' small-sample correction.
fn ks_p_value(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = f64::from(k);
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

#[test]
fn single_arc_delay_has_mean_one_over_alpha() {
    let alpha = 2.0;
    let out = out_lists(&Adjacency::from_edges(2, [(0, 1, alpha)]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let delays: Vec<f64> = (0..10_000)
        .map(|_| {
            let c = simulate_cascade(&out, 0, f64::INFINITY, &mut rng);
            assert_eq!(c.len(), 2);
            c[1].1
        })
        .collect();
    let mean = delays.iter().sum::<f64>() / delays.len() as f64;
    assert!((mean * alpha - 1.0).abs() < 0.025, "mean {mean}");
    assert!(ks_p_value(delays, |x| 1.0 - (-alpha * x).exp()) > 0.01);
}

#[test]
fn two_parents_race_at_the_summed_rate() {
    // 0 infects 1 quickly; both then race to 2. By memorylessness, when 2
    // arrives after 1 the gap t2 - t1 is Exp(a1 + a2).
    let (a1, a2) = (1.0, 2.0);
    let adj = Adjacency::from_edges(3, [(0, 1, 50.0), (0, 2, a1), (1, 2, a2)]).unwrap();
    let out = out_lists(&adj);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut gaps = Vec::new();
    while gaps.len() < 10_000 {
        let c = simulate_cascade(&out, 0, f64::INFINITY, &mut rng);
        let t: BTreeMap<u32, f64> = c.into_iter().collect();
        if t[&2] > t[&1] {
            gaps.push(t[&2] - t[&1]);
        }
    }
    let rate = a1 + a2;
    assert!(ks_p_value(gaps, |x| 1.0 - (-rate * x).exp()) > 0.01);
}

#[test]
fn window_censors_late_infections() {
    let out = out_lists(&Adjacency::from_edges(3, [(0, 1, 0.5), (1, 2, 0.5)]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let c = simulate_cascade(&out, 0, 1.5, &mut rng);
        assert!(c.iter().all(|&(_, t)| t <= 1.5));
        assert!(c.windows(2).all(|w| w[0].1 <= w[1].1));
    }
}

#[test]
fn generated_streams_are_causal_and_exact() {
    for base in [BaseNetwork::PowerLaw { m: 2 }, BaseNetwork::ErdosRenyi { p: 0.05 }] {
        let config = GenConfig {
            base,
            n_nodes: 60,
            n_subnets: 3,
            subnet_size: 30,
            n_events_target: 1500,
            seed: 4,
            ..GenConfig::default()
        };
        let ds = generate(&config).unwrap();
        assert_eq!(ds.events.len(), 1500);
        assert_eq!(ds.truth.labels.len(), 1500);
        assert!(ds.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));

        // every non-seed event has an earlier same-cascade parent on an arc
        // of the cascade's subnet, within the window
        let mut seen: BTreeMap<&str, Vec<(u32, f64)>> = BTreeMap::new();
        for (e, &k) in ds.events.iter().zip(&ds.truth.labels) {
            let adj = &ds.truth.subnets[k as usize].adjacency;
            let prior = seen.entry(&e.cascade_id).or_default();
            if let Some(&(_, start)) = prior.first() {
                assert!(prior.iter().any(|&(j, _)| adj.get(j, e.node) > 0.0));
                assert!(e.timestamp - start <= ds.window + 1e-9);
            }
            assert!(!prior.iter().any(|&(j, _)| j == e.node));
            prior.push((e.node, e.timestamp));
        }

        let members: Vec<BTreeSet<u32>> =
            ds.truth.subnets.iter().map(|s| s.nodes.iter().copied().collect()).collect();
        for (e, &k) in ds.events.iter().zip(&ds.truth.labels) {
            assert!(members[k as usize].contains(&e.node));
        }
        for s in &ds.truth.subnets {
            assert!(s.adjacency.iter().all(|(_, a)| a > 0.0 && a < 1.0));
        }
    }
}

#[test]
fn the_seed_drives_everything() {
    let config = GenConfig {
        n_nodes: 40,
        n_subnets: 2,
        subnet_size: 20,
        n_events_target: 300,
        seed: 5,
        ..GenConfig::default()
    };
    let (a, b) = (generate(&config).unwrap(), generate(&config).unwrap());
    assert_eq!(a.events, b.events);
    assert_eq!(a.truth.labels, b.truth.labels);
    let c = generate(&GenConfig { seed: 6, ..config }).unwrap();
    assert_ne!(a.events, c.events);
}
