use explore_lab::catalog::QualifiedPool;
use explore_lab::rng;
use explore_lab::stats::chi_square_gof;
use explore_lab::strategies::{inject_dedicated_row, insert_into_row, Homepage, Row};

fn pool(n: u32) -> QualifiedPool {
    QualifiedPool::from_ids(0..n, n as usize).unwrap()
}

/// Frequency of each pool title over `draws` dedicated rows of m = 10
/// drawn from a pool of 200.
fn dedicated_title_counts(draws: u64) -> Vec<u64> {
    let pool = pool(200);
    let page = Homepage {
        rows: vec![Row::personalized(vec![1000, 1001])],
    };
    let mut counts = vec![0u64; 200];
    for i in 0..draws {
        let mut r = rng::stream(11, 0, i, 0);
        let out = inject_dedicated_row(&page, &pool, 1, 10, &mut r).unwrap();
        for &t in &out.rows[1].title_ids {
            counts[t as usize] += 1;
        }
    }
    counts
}

#[test]
fn dedicated_row_titles_are_uniform() {
    let draws = 100_000;
    let counts = dedicated_title_counts(draws);
    let expected = draws as f64 * 10.0 / 200.0;
    let sigma = (draws as f64 * 0.05 * 0.95).sqrt();
    for (t, &c) in counts.iter().enumerate() {
        assert!(
            (c as f64 - expected).abs() < 4.0 * sigma,
            "title {t}: {c} vs {expected}"
        );
    }
    let (_, p) = chi_square_gof(&counts, &vec![1.0 / 200.0; 200]).unwrap();
    assert!(p > 0.001, "chi-square p = {p}");
}

#[test]
fn dedicated_row_is_a_permutation_when_m_is_the_pool() {
    let pool = pool(30);
    let page = Homepage { rows: vec![] };
    let mut r = rng::stream(2, 0, 0, 0);
    let out = inject_dedicated_row(&page, &pool, 0, 30, &mut r).unwrap();
    let mut ids = out.rows[0].title_ids.clone();
    ids.sort_unstable();
    assert_eq!(ids, (0..30).collect::<Vec<_>>());
}

#[test]
fn single_insertion_position_is_uniform() {
    let pool = pool(500);
    let row = Row::personalized(vec![1000, 1001, 1002, 1003]);
    let trials = 50_000u64;
    let mut counts = vec![0u64; 5];
    for i in 0..trials {
        let mut r = rng::stream(12, 0, i, 0);
        let out = insert_into_row(&row, &pool, 1, &mut r).unwrap();
        assert_eq!(out.len(), 5);
        let originals: Vec<u32> = out.title_ids.iter().copied().filter(|&t| t >= 1000).collect();
        assert_eq!(originals, row.title_ids);
        counts[out.exploration_positions[0] as usize] += 1;
    }
    let sigma = (trials as f64 * 0.2 * 0.8).sqrt();
    for &c in &counts {
        assert!((c as f64 - trials as f64 * 0.2).abs() < 4.0 * sigma, "{counts:?}");
    }
    let (_, p) = chi_square_gof(&counts, &[0.2; 5]).unwrap();
    assert!(p > 0.001, "chi-square p = {p}");
}

#[test]
fn inserted_titles_are_uniform_over_the_pool_minus_the_row() {
    let pool = pool(50);
    let row = Row::personalized(vec![0, 1, 2, 3, 4]);
    let trials = 60_000u64;
    let mut counts = vec![0u64; 50];
    for i in 0..trials {
        let mut r = rng::stream(13, 0, i, 0);
        let out = insert_into_row(&row, &pool, 2, &mut r).unwrap();
        for &p in &out.exploration_positions {
            counts[out.title_ids[p as usize] as usize] += 1;
        }
    }
    assert!(counts[..5].iter().all(|&c| c == 0));
    let (_, p) = chi_square_gof(&counts[5..], &[1.0 / 45.0; 45]).unwrap();
    assert!(p > 0.001, "chi-square p = {p}");
}
