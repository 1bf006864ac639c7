//! Synthetic user oracle.
//!
//! A session walks the homepage top-down. Row 0 is always seen; after each
//! viewed row the user continues with probability `scroll_persistence`.
//! Inside viewed row `k`, position `p` is attended with probability
//! `(position_bias_decay * depth_skim^k)^p`. Attended titles are clicked with probability
//! `click_scale * sigmoid(u . t)`, scaled by the novelty and mixed-row
//! knobs below, and every click turns into a watch whose engagement is
//! `watch_scale * softplus(u . t)` times mean-one log-normal noise.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{invalid, Error, Result};
use crate::rng::{self, domain, StreamRng};
use crate::strategies::{Homepage, HomepagePolicy, RowKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: u32,
    latent: Vec<f64>,
    pub scroll_persistence: f64,
}

impl UserProfile {
    pub fn new(id: u32, latent: Vec<f64>, scroll_persistence: f64) -> Result<Self> {
        if !(scroll_persistence > 0.0 && scroll_persistence < 1.0) {
            return Err(invalid(format!(
                "scroll_persistence {scroll_persistence} outside (0,1)"
            )));
        }
        Ok(Self {
            id,
            latent,
            scroll_persistence,
        })
    }

    /// Ground-truth taste vector. Simulation only.
    pub fn latent(&self) -> &[f64] {
        &self.latent
    }
}

/// How user tastes are spread around a shared population taste.
///
/// Affinity logits decompose into a shared part with standard deviation
/// `shared` (the same for every user, varies by title) and an individual
/// part with standard deviation `individual`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasteParams {
    pub shared: f64,
    pub individual: f64,
}

impl Default for TasteParams {
    fn default() -> Self {
        Self {
            shared: 1.0,
            individual: 1.0,
        }
    }
}

pub fn generate_users(
    seed: u64,
    n_users: usize,
    factor_dim: usize,
    taste: TasteParams,
    scroll_persistence: f64,
) -> Result<Vec<UserProfile>> {
    if factor_dim == 0 {
        return Err(invalid("factor_dim must be >= 1"));
    }
    if taste.shared < 0.0 || taste.individual < 0.0 {
        return Err(invalid("taste scales must be non-negative"));
    }
    let mut taste_rng = rng::stream(seed, domain::TASTE, 0, 0);
    let shared: Vec<f64> = (0..factor_dim)
        .map(|_| taste_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let norm = (factor_dim as f64).sqrt();
    (0..n_users as u32)
        .map(|id| {
            let mut r = rng::stream(seed, domain::USERS, id as u64, 0);
            let latent = shared
                .iter()
                .map(|s| {
                    let z: f64 = r.sample(StandardNormal);
                    (taste.shared * s + taste.individual * z) / norm
                })
                .collect();
            UserProfile::new(id, latent, scroll_persistence)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BehaviorParams {
    pub base_continuation: f64,
    pub position_bias_decay: f64,
    /// Per-row multiplier on the in-row attention decay; deeper rows are
    /// skimmed faster. 1 gives the same decay on every row.
    pub depth_skim: f64,
    pub click_scale: f64,
    pub watch_scale: f64,
    /// Log-normal sigma of the multiplicative engagement noise.
    pub engagement_noise: f64,
    /// Click propensity multiplier per earlier-session impression of the same
    /// title. 1 disables the novelty response.
    pub novelty_decay: f64,
    /// Click propensity multiplier for every title inside a mixed row.
    pub mixed_row_disruption: f64,
    /// Fraction of the depth skim that an exploration row escapes: 0 skims
    /// it like any row at its depth, 1 attends it like the top row.
    pub novelty_receptivity: f64,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        Self {
            base_continuation: 0.774_263_682_681_127, // 0.1^(1/9)
            position_bias_decay: 0.8,
            depth_skim: 0.92,
            click_scale: 0.2,
            watch_scale: 1.0,
            engagement_noise: 0.3,
            novelty_decay: 0.7,
            mixed_row_disruption: 0.9,
            novelty_receptivity: 1.0,
        }
    }
}

impl BehaviorParams {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.base_continuation) {
            return Err(invalid("base_continuation must be in (0,1)"));
        }
        if !(self.position_bias_decay > 0.0 && self.position_bias_decay <= 1.0) {
            return Err(invalid("position_bias_decay must be in (0,1]"));
        }
        if !(self.depth_skim > 0.0 && self.depth_skim <= 1.0) {
            return Err(invalid("depth_skim must be in (0,1]"));
        }
        if !(self.click_scale > 0.0 && self.watch_scale > 0.0) {
            return Err(invalid("click_scale and watch_scale must be > 0"));
        }
        if self.engagement_noise.is_nan() || self.engagement_noise < 0.0 {
            return Err(invalid("engagement_noise must be >= 0"));
        }
        if !(self.novelty_decay > 0.0 && self.novelty_decay <= 1.0) {
            return Err(invalid("novelty_decay must be in (0,1]"));
        }
        if !(self.mixed_row_disruption > 0.0 && self.mixed_row_disruption <= 1.0) {
            return Err(invalid("mixed_row_disruption must be in (0,1]"));
        }
        if !(0.0..=1.0).contains(&self.novelty_receptivity) {
            return Err(invalid("novelty_receptivity must be in [0,1]"));
        }
        Ok(())
    }
}

/// Persistence `p` with `p^(target_row - 1) = target_reach` (rows 1-indexed).
pub fn calibrate_persistence(target_row: u32, target_reach: f64) -> Result<f64> {
    if target_row < 2 {
        return Err(invalid("target_row must be >= 2"));
    }
    if !(target_reach > 0.0 && target_reach < 1.0) {
        return Err(invalid(format!("target_reach {target_reach} outside (0,1)")));
    }
    Ok(target_reach.powf(1.0 / (target_row - 1) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Home,
    ExplorationContainer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Impression,
    Click,
    Watch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionEvent {
    pub session_id: u64,
    pub user_id: u32,
    pub title_id: u32,
    pub row_index: u32,
    pub position: u32,
    pub source: Source,
    pub kind: EventKind,
    pub engagement: f64,
    pub timestamp: u32,
}

/// Per-user count of impressions received in earlier sessions.
#[derive(Debug, Default, Clone)]
pub struct ExposureMemory {
    seen: HashMap<u32, u32>,
}

impl ExposureMemory {
    pub fn prior_impressions(&self, title: u32) -> u32 {
        self.seen.get(&title).copied().unwrap_or(0)
    }

    /// Memory holding every impression in `events`.
    pub fn from_events(events: &[InteractionEvent]) -> Self {
        let mut m = Self::default();
        m.absorb(events);
        m
    }

    fn absorb(&mut self, events: &[InteractionEvent]) {
        for e in events.iter().filter(|e| e.kind == EventKind::Impression) {
            *self.seen.entry(e.title_id).or_insert(0) += 1;
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn affinity(user: &UserProfile, title_latent: &[f64]) -> f64 {
    user.latent.iter().zip(title_latent).map(|(a, b)| a * b).sum()
}

/// Which rng streams a simulation phase draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Main,
    Warmup,
    Pilot,
    Evaluation,
}

impl Phase {
    fn behavior_domain(self) -> u64 {
        match self {
            Phase::Main => domain::BEHAVIOR,
            Phase::Warmup => domain::WARMUP_BEHAVIOR,
            Phase::Pilot => domain::PILOT_BEHAVIOR,
            Phase::Evaluation => domain::EVAL_BEHAVIOR,
        }
    }

    fn page_domain(self) -> u64 {
        match self {
            Phase::Main | Phase::Pilot => domain::PAGE,
            Phase::Warmup => domain::WARMUP_PAGE,
            Phase::Evaluation => domain::EVAL_PAGE,
        }
    }
}

/// Events and (session id, deepest row) pairs of one simulated user.
type UserRun = (Vec<InteractionEvent>, Vec<(u64, u32)>);

pub struct Simulator<'a> {
    catalog: &'a Catalog,
    params: BehaviorParams,
}

impl<'a> Simulator<'a> {
    pub fn new(catalog: &'a Catalog, params: BehaviorParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { catalog, params })
    }

    pub fn params(&self) -> &BehaviorParams {
        &self.params
    }

    pub fn catalog(&self) -> &Catalog {
        self.catalog
    }

    /// Simulates one session. `memory` holds impressions from earlier
    /// sessions and is not updated here.
    pub fn simulate_session(
        &self,
        user: &UserProfile,
        page: &Homepage,
        memory: &ExposureMemory,
        session_id: u64,
        rng: &mut StreamRng,
    ) -> Vec<InteractionEvent> {
        let p = &self.params;
        let mut events = Vec::new();
        let mut tick = 0u32;
        for (row_index, row) in page.rows.iter().enumerate() {
            if row_index > 0 && !rng.random_bool(user.scroll_persistence) {
                break;
            }
            let disruption = if row.kind == RowKind::Mixed {
                p.mixed_row_disruption
            } else {
                1.0
            };
            let depth = if row.kind == RowKind::Exploration {
                row_index as f64 * (1.0 - p.novelty_receptivity)
            } else {
                row_index as f64
            };
            let decay = p.position_bias_decay * p.depth_skim.powf(depth);
            let mut attention = 1.0;
            for (position, &title_id) in row.title_ids.iter().enumerate() {
                if position > 0 {
                    attention *= decay;
                }
                if attention < 1.0 && !rng.random_bool(attention) {
                    continue;
                }
                let source = row.source_at(position);
                let base = InteractionEvent {
                    session_id,
                    user_id: user.id,
                    title_id,
                    row_index: row_index as u32,
                    position: position as u32,
                    source,
                    kind: EventKind::Impression,
                    engagement: 0.0,
                    timestamp: tick,
                };
                events.push(base);
                tick += 1;

                let a = affinity(user, self.catalog.title(title_id).latent());
                let novelty = p.novelty_decay.powi(memory.prior_impressions(title_id) as i32);
                let click_p = (p.click_scale * sigmoid(a) * novelty * disruption).min(1.0);
                if !rng.random_bool(click_p) {
                    continue;
                }
                events.push(InteractionEvent {
                    kind: EventKind::Click,
                    timestamp: tick,
                    ..base
                });
                tick += 1;

                let z: f64 = rng.sample(StandardNormal);
                let sigma = p.engagement_noise;
                let noise = (sigma * z - 0.5 * sigma * sigma).exp();
                events.push(InteractionEvent {
                    kind: EventKind::Watch,
                    engagement: p.watch_scale * softplus(a) * noise,
                    timestamp: tick,
                    ..base
                });
                tick += 1;
            }
        }
        events
    }

    /// Runs all sessions of one user in order, starting from `memory`, and
    /// hands each session's events to `on_session`.
    #[allow(clippy::too_many_arguments)]
    pub fn simulate_user<F>(
        &self,
        user: &UserProfile,
        policy: &dyn HomepagePolicy,
        n_sessions: u32,
        seed: u64,
        phase: Phase,
        mut memory: ExposureMemory,
        mut on_session: F,
    ) -> Result<()>
    where
        F: FnMut(u64, &[InteractionEvent]),
    {
        for s in 0..n_sessions {
            let session_id = user.id as u64 * n_sessions as u64 + s as u64;
            let mut page_rng = rng::stream(seed, phase.page_domain(), user.id as u64, s as u64);
            let page = policy.compose(user.id, s, &mut page_rng)?;
            let mut rng = rng::stream(seed, phase.behavior_domain(), user.id as u64, s as u64);
            let events = self.simulate_session(user, &page, &memory, session_id, &mut rng);
            memory.absorb(&events);
            on_session(session_id, &events);
        }
        Ok(())
    }

    pub fn simulate_population(
        &self,
        users: &[UserProfile],
        policy: &dyn HomepagePolicy,
        n_sessions: u32,
        seed: u64,
        phase: Phase,
        workers: usize,
    ) -> Result<SessionLog> {
        let per_user: Vec<UserRun> = with_workers(workers, || {
            users
                .par_iter()
                .map(|u| {
                    let mut events = Vec::new();
                    let mut deepest = Vec::with_capacity(n_sessions as usize);
                    self.simulate_user(
                        u,
                        policy,
                        n_sessions,
                        seed,
                        phase,
                        ExposureMemory::default(),
                        |sid, ev| {
                            deepest.push((sid, deepest_row(ev)));
                            events.extend_from_slice(ev);
                        },
                    )?;
                    Ok((events, deepest))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let total: usize = per_user.iter().map(|(e, _)| e.len()).sum();
        let mut events = Vec::with_capacity(total);
        let mut deepest_rows = BTreeMap::new();
        for (ev, deep) in per_user {
            events.extend(ev);
            deepest_rows.extend(deep);
        }
        let mut log = SessionLog {
            events,
            n_sessions: deepest_rows.len() as u64,
            deepest_rows,
        };
        log.canonicalize();
        Ok(log)
    }
}

fn deepest_row(events: &[InteractionEvent]) -> u32 {
    events.iter().map(|e| e.row_index).max().unwrap_or(0)
}

/// Runs `f` on a pool with `workers` threads; 0 means the global pool.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionLog {
    pub events: Vec<InteractionEvent>,
    pub n_sessions: u64,
    /// Session id -> deepest row index with an impression.
    pub deepest_rows: BTreeMap<u64, u32>,
}

impl SessionLog {
    pub fn from_events(mut events: Vec<InteractionEvent>) -> Self {
        events.sort_by_key(|e| (e.session_id, e.timestamp));
        let mut deepest_rows = BTreeMap::new();
        for e in &events {
            let d = deepest_rows.entry(e.session_id).or_insert(0);
            *d = (*d).max(e.row_index);
        }
        Self {
            events,
            n_sessions: deepest_rows.len() as u64,
            deepest_rows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn canonicalize(&mut self) {
        self.events.sort_by_key(|e| (e.session_id, e.timestamp));
    }

    /// Events of one user. Requires user ids to be non-decreasing in log
    /// order, which holds for canonical logs.
    pub fn user_events(&self, user_id: u32) -> &[InteractionEvent] {
        let lo = self.events.partition_point(|e| e.user_id < user_id);
        let hi = self.events.partition_point(|e| e.user_id <= user_id);
        &self.events[lo..hi]
    }

    pub fn is_user_grouped(&self) -> bool {
        self.events.windows(2).all(|w| w[0].user_id <= w[1].user_id)
    }

    pub fn watches(&self) -> impl Iterator<Item = &InteractionEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::Watch)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: "events".into(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self::from_events(events))
    }
}
