use std::collections::BTreeMap;

use explore_lab::behavior::{affinity, calibrate_persistence, generate_users, EventKind, Phase, SessionLog, Simulator};
use explore_lab::catalog::generate_catalog;
use explore_lab::config::{RunConfig, StrategyKind};
use explore_lab::placement::compute_row_stats;
use explore_lab::stats::spearman;
use explore_lab::strategies::RandomPagePolicy;
use explore_lab::world::World;

fn jsonl(log: &SessionLog) -> Vec<u8> {
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf).unwrap();
    buf
}

#[test]
fn reach_follows_geometric_continuation() {
    let p = calibrate_persistence(10, 0.10).unwrap();
    let catalog = generate_catalog(3, 400, 8).unwrap();
    let mut cfg = RunConfig::default();
    cfg.behavior.base_continuation = p;
    let users = generate_users(3, 10_000, 8, cfg.population.taste, p).unwrap();
    let page = RandomPagePolicy::new(catalog.len(), 10, 20).unwrap();
    let log = Simulator::new(&catalog, cfg.behavior)
        .unwrap()
        .simulate_population(&users, &page, 1, 3, Phase::Main, 0)
        .unwrap();
    let stats = compute_row_stats(&log).unwrap().padded(10);
    let n = log.n_sessions as f64;
    for (k, row) in stats.rows.iter().enumerate() {
        let expected = p.powi(k as i32);
        let sigma = (expected * (1.0 - expected) / n).sqrt().max(1e-9);
        assert!(
            (row.reach - expected).abs() < 4.0 * sigma + 1e-12,
            "row {k}: reach {} vs {expected}",
            row.reach
        );
    }
    for w in stats.rows.windows(2) {
        assert!(w[1].reach <= w[0].reach);
    }
    assert!((stats.rows[9].reach - 0.10).abs() < 0.02);
}

#[test]
fn logs_do_not_depend_on_worker_count() {
    let mut cfg = RunConfig::default();
    cfg.population.n_users = 600;
    cfg.population.pilot_users = 300;
    cfg.population.warmup_users = 200;
    cfg.strategy.kind = StrategyKind::Dedicated;
    let run = |workers| {
        let mut c = cfg.clone();
        c.workers = workers;
        let world = World::build(&c).unwrap();
        jsonl(&world.simulate(world.configured_policy().unwrap().as_ref()).unwrap())
    };
    let one = run(1);
    assert!(!one.is_empty());
    assert_eq!(one, run(8));
    assert_eq!(one, run(3));
}

#[test]
fn zero_sessions_give_an_empty_log() {
    let catalog = generate_catalog(1, 100, 4).unwrap();
    let users = generate_users(1, 10, 4, RunConfig::default().population.taste, 0.7).unwrap();
    let page = RandomPagePolicy::new(100, 3, 10).unwrap();
    let log = Simulator::new(&catalog, Default::default())
        .unwrap()
        .simulate_population(&users, &page, 0, 1, Phase::Main, 0)
        .unwrap();
    assert!(log.is_empty());
}

#[test]
fn funnel_is_consistent_per_slot() {
    let mut cfg = RunConfig::default();
    cfg.population.n_users = 2_000;
    cfg.population.pilot_users = 500;
    let world = World::build(&cfg).unwrap();
    let log = world.simulate(world.configured_policy().unwrap().as_ref()).unwrap();
    let mut counts: BTreeMap<(u64, u32, u32, u32), [u32; 3]> = BTreeMap::new();
    for e in &log.events {
        let c = counts
            .entry((e.session_id, e.row_index, e.position, e.title_id))
            .or_default();
        let i = match e.kind {
            EventKind::Impression => 0,
            EventKind::Click => 1,
            EventKind::Watch => 2,
        };
        // a click or watch needs the earlier stage already recorded
        if i > 0 {
            assert!(c[i - 1] > c[i], "{e:?} without a preceding stage");
        }
        c[i] += 1;
        assert_eq!(e.engagement > 0.0, e.kind == EventKind::Watch, "{e:?}");
    }
    assert!(counts.values().any(|c| c[2] > 0));
    for c in counts.values() {
        assert!(c[2] <= c[1] && c[1] <= c[0]);
    }
    // deepest rows agree with the events
    for (s, d) in &log.deepest_rows {
        assert!(log.events.iter().any(|e| e.session_id == *s && e.row_index == *d));
    }
}

/// Engagement per impression under uniformly random pages tracks the
/// population-mean click affinity of each title.
#[test]
fn engagement_tracks_ground_truth_affinity() {
    let cfg = RunConfig::default();
    let catalog = generate_catalog(11, 2_000, cfg.catalog.factor_dim).unwrap();
    let users = generate_users(
        11,
        20_000,
        cfg.catalog.factor_dim,
        cfg.population.taste,
        cfg.behavior.base_continuation,
    )
    .unwrap();
    let page = RandomPagePolicy::new(catalog.len(), cfg.page.n_rows, cfg.page.row_len).unwrap();
    let log = Simulator::new(&catalog, cfg.behavior)
        .unwrap()
        .simulate_population(&users, &page, 5, 11, Phase::Main, 0)
        .unwrap();
    let mut impressions = vec![0u64; catalog.len()];
    let mut engagement = vec![0.0f64; catalog.len()];
    for e in &log.events {
        match e.kind {
            EventKind::Impression => impressions[e.title_id as usize] += 1,
            EventKind::Watch => engagement[e.title_id as usize] += e.engagement,
            EventKind::Click => {}
        }
    }
    let observed: Vec<f64> = engagement
        .iter()
        .zip(&impressions)
        .map(|(g, &n)| g / n as f64)
        .collect();
    let truth: Vec<f64> = catalog
        .titles()
        .iter()
        .map(|t| {
            let s: f64 = users
                .iter()
                .map(|u| 1.0 / (1.0 + (-affinity(u, t.latent())).exp()))
                .sum();
            s / users.len() as f64
        })
        .collect();
    let rho = spearman(&truth, &observed);
    assert!(rho > 0.9, "rank correlation {rho}");
}
