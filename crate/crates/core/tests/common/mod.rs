//! Independent reference implementations shared by the oracle tests and
//! the acceptance target.
#![allow(dead_code)]

use std::collections::BTreeMap;

use explore_lab::behavior::{EventKind, InteractionEvent, SessionLog, Source};
use explore_lab::recaller::{Association, BuildParams, CoOccurrenceTable, Normalization};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean absolute difference over all ordered pairs, halved and divided by
/// the mean.
pub fn gini_pairwise(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let total: f64 = x.iter().sum();
    let mut diff = 0.0;
    for a in x {
        for b in x {
            diff += (a - b).abs();
        }
    }
    diff / (2.0 * n * total)
}

pub fn random_vectors(count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n = rng.random_range(1..=300);
            match i % 3 {
                0 => (0..n).map(|_| rng.random::<f64>()).collect(),
                // heavy tail
                1 => (0..n).map(|_| (-rng.random::<f64>().ln()).powi(3)).collect(),
                // sparse, with zeros
                _ => (0..n)
                    .map(|_| {
                        if rng.random_bool(0.8) {
                            0.0
                        } else {
                            rng.random_range(1..100) as f64
                        }
                    })
                    .chain(std::iter::once(1.0))
                    .collect(),
            }
        })
        .collect()
}
/// Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta, modified Lentz.
pub fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Textbook Welch: t, Welch-Satterthwaite df, and the two-sided p-value
/// I_{df/(df+t^2)}(df/2, 1/2).
pub fn welch_reference(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let (sa, sb) = (va / na, vb / nb);
    let t = (mb - ma) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    (t, df, inc_beta(df / 2.0, 0.5, df / (df + t * t)))
}

pub const USERS: u32 = 200;
pub const TITLES: u32 = 50;
pub const CAP: usize = 8;

pub fn event(
    user: u32,
    session: u64,
    ts: u32,
    title: u32,
    source: Source,
    kind: EventKind,
    engagement: f64,
) -> InteractionEvent {
    InteractionEvent {
        session_id: session,
        user_id: user,
        title_id: title,
        row_index: if source == Source::ExplorationContainer { 3 } else { 0 },
        position: 0,
        source,
        kind,
        engagement,
        timestamp: ts,
    }
}

/// Sessions of impressions, some followed by a click and a watch. Titles
/// are drawn from a skewed distribution so pairs repeat across users.
pub fn random_log(seed: u64) -> SessionLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    for u in 0..USERS {
        let explorer = rng.random_bool(0.7);
        for s in 0..rng.random_range(1..=3u64) {
            let session = u as u64 * 10 + s;
            let mut ts = 0;
            for _ in 0..rng.random_range(3..12) {
                let source = if explorer && rng.random_bool(0.3) {
                    Source::ExplorationContainer
                } else {
                    Source::Home
                };
                let r: f64 = rng.random();
                let title = ((r * r) * TITLES as f64) as u32;
                events.push(event(u, session, ts, title, source, EventKind::Impression, 0.0));
                ts += 1;
                if rng.random_bool(0.4) {
                    events.push(event(u, session, ts, title, source, EventKind::Click, 0.0));
                    events.push(event(
                        u,
                        session,
                        ts + 1,
                        title,
                        source,
                        EventKind::Watch,
                        rng.random_range(0.0..5.0),
                    ));
                    ts += 2;
                }
            }
        }
    }
    SessionLog::from_events(events)
}

/// Most recent first, unique, capped.
pub fn oracle_histories(log: &SessionLog) -> BTreeMap<u32, Vec<u32>> {
    let mut out = BTreeMap::new();
    for u in 0..USERS {
        let mut h: Vec<u32> = Vec::new();
        for e in log.events.iter().rev() {
            if e.user_id == u && e.kind == EventKind::Watch && !h.contains(&e.title_id) && h.len() < CAP {
                h.push(e.title_id);
            }
        }
        if !h.is_empty() {
            out.insert(u, h);
        }
    }
    out
}

/// Nested loops over every (A, B) pair and every user. Per-user engagement
/// is summed in log order and users are visited in ascending id, which is
/// the summation order the table promises.
pub fn oracle_table(log: &SessionLog, params: BuildParams) -> BTreeMap<u32, Vec<Association>> {
    let histories = oracle_histories(log);
    let exposed = |u: u32| {
        log.events
            .iter()
            .any(|e| e.user_id == u && e.kind == EventKind::Impression && e.source == params.consequent_source)
    };
    let mut out = BTreeMap::new();
    for a in 0..TITLES {
        let holders: Vec<u32> = (0..USERS)
            .filter(|u| exposed(*u) && histories.get(u).is_some_and(|h| h.contains(&a)))
            .collect();
        let mut list = Vec::new();
        for b in 0..TITLES {
            if a == b {
                continue;
            }
            let (mut support, mut raw) = (0u32, 0.0f64);
            for &u in &holders {
                let mut watched = false;
                let mut subtotal = 0.0;
                for e in &log.events {
                    if e.user_id == u
                        && e.kind == EventKind::Watch
                        && e.source == params.consequent_source
                        && e.title_id == b
                    {
                        watched = true;
                        subtotal += e.engagement;
                    }
                }
                if watched {
                    support += 1;
                    raw += subtotal;
                }
            }
            if support >= params.threshold {
                let score = match params.normalization {
                    Normalization::None => raw,
                    Normalization::PerAntecedent => raw / holders.len() as f64,
                };
                list.push(Association {
                    consequent: b,
                    score,
                    support,
                });
            }
        }
        list.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.consequent.cmp(&y.consequent)));
        if !list.is_empty() {
            out.insert(a, list);
        }
    }
    out
}

pub fn tsv(table: &CoOccurrenceTable) -> Vec<u8> {
    let mut buf = Vec::new();
    table.write_tsv(&mut buf).unwrap();
    buf
}

pub fn params(threshold: u32, normalization: Normalization, consequent_source: Source) -> BuildParams {
    BuildParams {
        threshold,
        normalization,
        consequent_source,
    }
}
