//! Homepage composition policies: pure exploit control, a dedicated
//! uniformly sampled exploration row, and insertion of exploratory titles
//! into a personalized row.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{EventKind, SessionLog, Source};
use crate::catalog::{Catalog, QualifiedPool};
use crate::error::{invalid, Error, Result};
use crate::rng::StreamRng;

pub const DEFAULT_RESAMPLE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Personalized,
    Exploration,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub kind: RowKind,
    pub title_ids: Vec<u32>,
    /// Sorted in-row indices holding exploratory titles; empty unless mixed.
    pub exploration_positions: Vec<u32>,
}

impl Row {
    pub fn personalized(title_ids: Vec<u32>) -> Self {
        Self {
            kind: RowKind::Personalized,
            title_ids,
            exploration_positions: Vec::new(),
        }
    }

    pub fn exploration(title_ids: Vec<u32>) -> Self {
        Self {
            kind: RowKind::Exploration,
            title_ids,
            exploration_positions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.title_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.title_ids.is_empty()
    }

    pub fn source_at(&self, position: usize) -> Source {
        match self.kind {
            RowKind::Exploration => Source::ExplorationContainer,
            RowKind::Mixed if self.exploration_positions.binary_search(&(position as u32)).is_ok() => {
                Source::ExplorationContainer
            }
            _ => Source::Home,
        }
    }

    /// Titles placed by an exploration strategy.
    pub fn exploration_titles(&self) -> Vec<u32> {
        match self.kind {
            RowKind::Exploration => self.title_ids.clone(),
            RowKind::Mixed => self
                .exploration_positions
                .iter()
                .map(|&p| self.title_ids[p as usize])
                .collect(),
            RowKind::Personalized => Vec::new(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.title_ids.len());
        if !self.title_ids.iter().all(|t| seen.insert(*t)) {
            return Err(invalid("duplicate title within a row"));
        }
        if self.kind != RowKind::Mixed && !self.exploration_positions.is_empty() {
            return Err(invalid("exploration_positions set on a non-mixed row"));
        }
        if self
            .exploration_positions
            .iter()
            .any(|&p| p as usize >= self.title_ids.len())
        {
            return Err(invalid("exploration position out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Homepage {
    pub rows: Vec<Row>,
}

impl Homepage {
    pub fn check(&self) -> Result<()> {
        self.rows.iter().try_for_each(Row::check)
    }
}

/// Builds the homepage a user sees in one session.
pub trait HomepagePolicy: Send + Sync {
    fn compose(&self, user_id: u32, session_index: u32, rng: &mut StreamRng) -> Result<Homepage>;
}

/// A biased preference scorer used by the exploit policy. It sees user ids
/// and logged behavior only.
pub trait PreferenceEstimator: Send + Sync {
    fn score(&self, user_id: u32, title_id: u32) -> f64;

    /// True when scores do not depend on the user, so one ranking serves all.
    fn is_global(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UniformEstimator;

impl PreferenceEstimator for UniformEstimator {
    fn score(&self, _user_id: u32, _title_id: u32) -> f64 {
        0.0
    }

    fn is_global(&self) -> bool {
        true
    }
}

/// Engagement-weighted popularity fit from homepage-sourced watches.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityEstimator {
    scores: Vec<f64>,
}

impl PopularityEstimator {
    pub fn fit(log: &SessionLog, n_titles: usize) -> Self {
        let mut scores = vec![0.0; n_titles];
        for e in log.watches().filter(|e| e.source == Source::Home) {
            if let Some(s) = scores.get_mut(e.title_id as usize) {
                *s += e.engagement;
            }
        }
        Self { scores }
    }

    pub fn from_scores(scores: Vec<f64>) -> Self {
        Self { scores }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

impl PreferenceEstimator for PopularityEstimator {
    fn score(&self, _user_id: u32, title_id: u32) -> f64 {
        self.scores.get(title_id as usize).copied().unwrap_or(0.0)
    }

    fn is_global(&self) -> bool {
        true
    }
}

/// Titles of the catalog ranked by estimator score, descending, ties by id.
pub fn rank_titles(user_id: u32, catalog: &Catalog, estimator: &dyn PreferenceEstimator) -> Vec<u32> {
    let mut scored: Vec<(f64, u32)> = catalog
        .titles()
        .iter()
        .map(|t| (estimator.score(user_id, t.id), t.id))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, id)| id).collect()
}

pub fn compose_control(
    user_id: u32,
    catalog: &Catalog,
    estimator: &dyn PreferenceEstimator,
    rows: usize,
    row_len: usize,
) -> Result<Homepage> {
    if rows == 0 || row_len == 0 {
        return Err(invalid("rows and row_len must be >= 1"));
    }
    if catalog.len() < rows * row_len {
        return Err(invalid(format!(
            "catalog of {} titles cannot fill {rows} rows of {row_len}",
            catalog.len()
        )));
    }
    let ranked = rank_titles(user_id, catalog, estimator);
    Ok(chunk_rows(&ranked, rows, row_len))
}

pub(crate) fn chunk_rows(ranked: &[u32], rows: usize, row_len: usize) -> Homepage {
    Homepage {
        rows: ranked
            .chunks(row_len)
            .take(rows)
            .map(|c| Row::personalized(c.to_vec()))
            .collect(),
    }
}

/// The exploit baseline. Rankings from a global estimator are computed once.
pub struct ControlPolicy {
    catalog: Arc<Catalog>,
    estimator: Arc<dyn PreferenceEstimator>,
    rows: usize,
    row_len: usize,
    cached: Option<Homepage>,
}

impl ControlPolicy {
    pub fn new(
        catalog: Arc<Catalog>,
        estimator: Arc<dyn PreferenceEstimator>,
        rows: usize,
        row_len: usize,
    ) -> Result<Self> {
        let cached = if estimator.is_global() {
            Some(compose_control(0, &catalog, estimator.as_ref(), rows, row_len)?)
        } else {
            // surface size errors at construction
            compose_control(0, &catalog, estimator.as_ref(), rows, row_len)?;
            None
        };
        Ok(Self {
            catalog,
            estimator,
            rows,
            row_len,
            cached,
        })
    }

    pub fn page_for(&self, user_id: u32) -> Result<Homepage> {
        match &self.cached {
            Some(p) => Ok(p.clone()),
            None => compose_control(user_id, &self.catalog, self.estimator.as_ref(), self.rows, self.row_len),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }
}

impl HomepagePolicy for ControlPolicy {
    fn compose(&self, user_id: u32, _session_index: u32, _rng: &mut StreamRng) -> Result<Homepage> {
        self.page_for(user_id)
    }
}

/// Every session gets fresh uniformly random personalized-kind rows drawn
/// from the whole catalog. Used for cold-start logging.
pub struct RandomPagePolicy {
    n_titles: usize,
    rows: usize,
    row_len: usize,
}

impl RandomPagePolicy {
    pub fn new(n_titles: usize, rows: usize, row_len: usize) -> Result<Self> {
        if n_titles < rows * row_len {
            return Err(invalid("catalog too small for the page"));
        }
        Ok(Self {
            n_titles,
            rows,
            row_len,
        })
    }
}

impl HomepagePolicy for RandomPagePolicy {
    fn compose(&self, _user_id: u32, _session_index: u32, rng: &mut StreamRng) -> Result<Homepage> {
        let picked: Vec<u32> = index::sample(rng, self.n_titles, self.rows * self.row_len)
            .into_iter()
            .map(|i| i as u32)
            .collect();
        Ok(chunk_rows(&picked, self.rows, self.row_len))
    }
}

/// Samples `m` pool titles uniformly without replacement, in random order.
pub fn sample_pool(pool: &QualifiedPool, m: usize, rng: &mut StreamRng) -> Result<Vec<u32>> {
    if m > pool.len() {
        return Err(invalid(format!(
            "cannot sample {m} titles from a pool of {}",
            pool.len()
        )));
    }
    let ids = pool.title_ids();
    Ok(index::sample(rng, ids.len(), m).into_iter().map(|i| ids[i]).collect())
}

pub fn inject_dedicated_row(
    page: &Homepage,
    pool: &QualifiedPool,
    slot: usize,
    m: usize,
    rng: &mut StreamRng,
) -> Result<Homepage> {
    if slot > page.rows.len() {
        return Err(invalid(format!(
            "slot {slot} out of range for a page of {} rows",
            page.rows.len()
        )));
    }
    let titles = sample_pool(pool, m, rng)?;
    let mut out = page.clone();
    out.rows.insert(slot, Row::exploration(titles));
    Ok(out)
}

/// Number of exploratory positions so that `n / row_length * row_share`
/// approximates `target_impact`. Rounds half up with a floor of 1.
pub fn compute_insertion_count(row_share: f64, target_impact: f64, row_length: usize) -> Result<usize> {
    if row_length == 0 {
        return Err(invalid("row_length must be >= 1"));
    }
    if !(target_impact > 0.0 && row_share <= 1.0) {
        return Err(invalid("need 0 < target_impact and row_share <= 1"));
    }
    if target_impact > row_share {
        return Err(invalid(format!(
            "target_impact {target_impact} exceeds the row's share {row_share}"
        )));
    }
    let fraction = target_impact / row_share;
    // tolerance absorbs representation error such as 0.01 / 0.2 = 0.0499..
    let n = (fraction * row_length as f64 + 0.5 + 1e-9).floor() as usize;
    Ok(n.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionPlan {
    pub n_insert: usize,
    /// Sorted target indices in the grown row.
    pub positions: Vec<u32>,
    pub source_row_share: f64,
    pub target_impact: f64,
}

impl InsertionPlan {
    pub fn draw(row_share: f64, target_impact: f64, row_length: usize, rng: &mut StreamRng) -> Result<Self> {
        let n_insert = compute_insertion_count(row_share, target_impact, row_length)?;
        Ok(Self {
            n_insert,
            positions: draw_positions(row_length, n_insert, rng),
            source_row_share: row_share,
            target_impact,
        })
    }
}

/// `n` distinct indices drawn uniformly from `[0, original_len + n)`, sorted.
pub fn draw_positions(original_len: usize, n: usize, rng: &mut StreamRng) -> Vec<u32> {
    let mut positions: Vec<u32> = index::sample(rng, original_len + n, n)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    positions.sort_unstable();
    positions
}

/// Draws `n` pool titles absent from `exclude`, resampling on collision.
fn sample_absent(pool: &QualifiedPool, n: usize, exclude: &HashSet<u32>, rng: &mut StreamRng) -> Result<Vec<u32>> {
    if n > pool.len() {
        return Err(invalid(format!(
            "cannot insert {n} titles from a pool of {}",
            pool.len()
        )));
    }
    let ids = pool.title_ids();
    let mut taken: HashSet<u32> = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut attempts = 0;
        loop {
            if attempts == DEFAULT_RESAMPLE_ATTEMPTS {
                return Err(Error::PoolExhausted { wanted: n, attempts });
            }
            attempts += 1;
            let t = ids[rng.random_range(0..ids.len())];
            if !exclude.contains(&t) && taken.insert(t) {
                out.push(t);
                break;
            }
        }
    }
    Ok(out)
}

/// Places `titles` at the sorted `positions` of the grown row, keeping the
/// original titles in their relative order.
pub fn insert_at(row: &Row, titles: &[u32], positions: &[u32]) -> Result<Row> {
    if titles.len() != positions.len() {
        return Err(invalid("titles and positions differ in length"));
    }
    let final_len = row.len() + titles.len();
    if positions.iter().any(|&p| p as usize >= final_len) || positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("positions must be sorted, distinct and within the grown row"));
    }
    let old_exploration: HashSet<u32> = row.exploration_positions.iter().copied().collect();
    let mut title_ids = Vec::with_capacity(final_len);
    let mut exploration_positions = Vec::new();
    let (mut next_new, mut next_old) = (0, 0);
    for i in 0..final_len {
        if next_new < positions.len() && positions[next_new] as usize == i {
            title_ids.push(titles[next_new]);
            exploration_positions.push(i as u32);
            next_new += 1;
        } else {
            title_ids.push(row.title_ids[next_old]);
            if old_exploration.contains(&(next_old as u32)) {
                exploration_positions.push(i as u32);
            }
            next_old += 1;
        }
    }
    Ok(Row {
        kind: if exploration_positions.is_empty() {
            row.kind
        } else {
            RowKind::Mixed
        },
        title_ids,
        exploration_positions,
    })
}

pub fn insert_into_row(row: &Row, pool: &QualifiedPool, n: usize, rng: &mut StreamRng) -> Result<Row> {
    if n == 0 {
        return Ok(row.clone());
    }
    let exclude: HashSet<u32> = row.title_ids.iter().copied().collect();
    let titles = sample_absent(pool, n, &exclude, rng)?;
    let positions = draw_positions(row.len(), n, rng);
    insert_at(row, &titles, &positions)
}

/// Control page plus a uniformly sampled exploration row at `slot`.
pub struct DedicatedRowPolicy {
    base: Arc<ControlPolicy>,
    pool: Arc<QualifiedPool>,
    slot: usize,
    m: usize,
}

impl DedicatedRowPolicy {
    pub fn new(base: Arc<ControlPolicy>, pool: Arc<QualifiedPool>, slot: usize, m: usize) -> Result<Self> {
        if m == 0 || m > pool.len() {
            return Err(invalid(format!("row length {m} invalid for a pool of {}", pool.len())));
        }
        if slot > base.rows() {
            return Err(invalid(format!("slot {slot} beyond page of {} rows", base.rows())));
        }
        Ok(Self { base, pool, slot, m })
    }
}

impl HomepagePolicy for DedicatedRowPolicy {
    fn compose(&self, user_id: u32, _session_index: u32, rng: &mut StreamRng) -> Result<Homepage> {
        let page = self.base.page_for(user_id)?;
        inject_dedicated_row(&page, &self.pool, self.slot, self.m, rng)
    }
}

/// Control page with `n_insert` exploratory titles inserted into one row.
pub struct InsertionPolicy {
    base: Arc<ControlPolicy>,
    pool: Arc<QualifiedPool>,
    row_index: usize,
    n_insert: usize,
}

impl InsertionPolicy {
    pub fn new(base: Arc<ControlPolicy>, pool: Arc<QualifiedPool>, row_index: usize, n_insert: usize) -> Result<Self> {
        if row_index >= base.rows() {
            return Err(invalid(format!("insertion row {row_index} beyond page")));
        }
        Ok(Self {
            base,
            pool,
            row_index,
            n_insert,
        })
    }

    pub fn n_insert(&self) -> usize {
        self.n_insert
    }
}

impl HomepagePolicy for InsertionPolicy {
    fn compose(&self, user_id: u32, _session_index: u32, rng: &mut StreamRng) -> Result<Homepage> {
        let mut page = self.base.page_for(user_id)?;
        let row = insert_into_row(&page.rows[self.row_index], &self.pool, self.n_insert, rng)?;
        page.rows[self.row_index] = row;
        Ok(page)
    }
}

/// Count of exploration-tagged impressions in a log; handy for sanity checks.
pub fn exploration_impressions(log: &SessionLog) -> usize {
    log.events
        .iter()
        .filter(|e| e.kind == EventKind::Impression && e.source == Source::ExplorationContainer)
        .count()
}
