mod common;

use std::collections::BTreeMap;

use common::{event, oracle_histories, oracle_table, params, random_log, tsv, CAP};
use explore_lab::behavior::{EventKind, SessionLog, Source};
use explore_lab::recaller::{
    build_cooccurrence, build_histories, retrieve, Association, BuildParams, CoOccurrenceTable, Normalization,
    UserHistory,
};
use proptest::prelude::*;

#[test]
fn histories_match_oracle() {
    let log = random_log(1);
    let got: BTreeMap<u32, Vec<u32>> = build_histories(&log, CAP)
        .into_iter()
        .map(|(u, h)| (u, h.watched))
        .collect();
    assert_eq!(got, oracle_histories(&log));
}

#[test]
fn table_matches_brute_force_oracle() {
    for seed in [1, 2, 3] {
        let log = random_log(seed);
        let histories = build_histories(&log, CAP);
        for threshold in [1, 2, 5] {
            for normalization in [Normalization::None, Normalization::PerAntecedent] {
                for source in [Source::ExplorationContainer, Source::Home] {
                    let p = params(threshold, normalization, source);
                    let got = build_cooccurrence(&log, &histories, p).unwrap();
                    let want = CoOccurrenceTable {
                        entries: oracle_table(&log, p),
                        params: Some(p),
                    };
                    assert!(!want.is_empty(), "fixture too sparse at {p:?}");
                    assert_eq!(got.entries, want.entries, "seed {seed} {p:?}");
                    assert_eq!(tsv(&got), tsv(&want));
                }
            }
        }
    }
}

#[test]
fn raising_the_threshold_only_removes_pairs() {
    let log = random_log(4);
    let histories = build_histories(&log, CAP);
    let tables: Vec<CoOccurrenceTable> = (1..=6)
        .map(|t| {
            build_cooccurrence(
                &log,
                &histories,
                params(t, Normalization::PerAntecedent, Source::ExplorationContainer),
            )
            .unwrap()
        })
        .collect();
    for w in tables.windows(2) {
        assert!(w[1].n_pairs() <= w[0].n_pairs());
        for (a, list) in &w[1].entries {
            for x in list {
                assert!(
                    w[0].get(*a).contains(x),
                    "{a}->{} appeared at a higher threshold",
                    x.consequent
                );
            }
        }
    }
    assert!(tables[0].n_pairs() > tables[5].n_pairs());
}

#[test]
fn pairs_are_directional() {
    // Holders of 1 discover 2 through exploration; nobody holding 2 ever
    // sees 1 there.
    let mut events = Vec::new();
    for u in 0..5u32 {
        let s = u as u64;
        events.push(event(u, s, 0, 1, Source::Home, EventKind::Impression, 0.0));
        events.push(event(u, s, 1, 1, Source::Home, EventKind::Watch, 1.0));
        events.push(event(
            u,
            s,
            2,
            2,
            Source::ExplorationContainer,
            EventKind::Impression,
            0.0,
        ));
        events.push(event(u, s, 3, 2, Source::ExplorationContainer, EventKind::Watch, 2.0));
    }
    let log = SessionLog::from_events(events);
    let histories = build_histories(&log, CAP);
    let table = build_cooccurrence(
        &log,
        &histories,
        params(2, Normalization::None, Source::ExplorationContainer),
    )
    .unwrap();
    assert_eq!(
        table.get(1),
        &[Association {
            consequent: 2,
            score: 10.0,
            support: 5
        }]
    );
    assert!(table.get(2).is_empty());
}

#[test]
fn output_does_not_depend_on_worker_count() {
    let log = random_log(5);
    let histories = build_histories(&log, CAP);
    let p = BuildParams::default();
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let one = pool(1).install(|| build_cooccurrence(&log, &histories, p).unwrap());
    let many = pool(6).install(|| build_cooccurrence(&log, &histories, p).unwrap());
    assert_eq!(tsv(&one), tsv(&many));
}

/// Top-k per antecedent, summed, history titles dropped.
fn oracle_retrieve(history: &[u32], table: &CoOccurrenceTable, k: usize) -> Vec<(u32, f64)> {
    let mut out: Vec<(u32, f64)> = Vec::new();
    for &a in history {
        for x in table.get(a).iter().take(k) {
            if history.contains(&x.consequent) {
                continue;
            }
            match out.iter_mut().find(|c| c.0 == x.consequent) {
                Some(c) => c.1 += x.score,
                None => out.push((x.consequent, x.score)),
            }
        }
    }
    out.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    out
}

#[test]
fn retrieval_matches_oracle_and_is_stable() {
    let log = random_log(6);
    let histories = build_histories(&log, CAP);
    let table = build_cooccurrence(
        &log,
        &histories,
        params(1, Normalization::PerAntecedent, Source::ExplorationContainer),
    )
    .unwrap();
    for k in [1, 3, 10] {
        for h in histories.values() {
            let got = retrieve(h, &table, k).unwrap();
            assert_eq!(got.items, oracle_retrieve(&h.watched, &table, k));
            let again = retrieve(h, &table, k).unwrap();
            assert_eq!(format!("{got:?}"), format!("{again:?}"));
            for (c, sources) in &got.provenance {
                assert!(!h.contains(*c));
                assert!(sources.iter().all(|a| h.contains(*a)));
            }
        }
    }
}

proptest! {
    #[test]
    fn history_invariants(watches in prop::collection::vec(0u32..20, 0..60), cap in 1usize..15) {
        let h = UserHistory::new(0, watches.iter().copied(), cap);
        prop_assert!(h.watched.len() <= cap);
        let mut sorted = h.watched.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), h.watched.len());
        if let Some(&first) = watches.first() {
            prop_assert_eq!(h.watched[0], first);
        }
    }
}
