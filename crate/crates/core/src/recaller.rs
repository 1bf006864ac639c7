//! Unbiased co-occurrence recaller.
//!
//! Offline: for every title pair (A, B), aggregate the engagement that users
//! holding A in their watch history spent on B when B reached them through
//! the exploration container. Antecedents come from the whole page,
//! consequents only from randomized exposure. Online: look up the top-K
//! consequents of each recent history title and merge them by summed score.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{EventKind, Phase, SessionLog, Source};
use crate::error::{invalid, Error, Result};
use crate::experiment::{default_salt, run_arms, Arm, ExperimentReport};
use crate::placement::RowStatsTable;
use crate::rng::StreamRng;
use crate::strategies::{chunk_rows, ControlPolicy, Homepage, HomepagePolicy};
use crate::world::World;

pub const DEFAULT_THRESHOLD: u32 = 3;
pub const DEFAULT_K: usize = 10;
pub const DEFAULT_HISTORY_CAP: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: u32,
    /// Most recent first, unique.
    pub watched: Vec<u32>,
    pub cap: usize,
}

impl UserHistory {
    pub fn new(user_id: u32, recent_first: impl IntoIterator<Item = u32>, cap: usize) -> Self {
        let mut seen = HashSet::new();
        let watched = recent_first.into_iter().filter(|t| seen.insert(*t)).take(cap).collect();
        Self { user_id, watched, cap }
    }

    pub fn contains(&self, title: u32) -> bool {
        self.watched.contains(&title)
    }
}

/// Recent-watch histories from every source, one per user with a watch.
pub fn build_histories(log: &SessionLog, cap: usize) -> BTreeMap<u32, UserHistory> {
    let mut per_user: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for e in log.watches() {
        per_user.entry(e.user_id).or_default().push(e.title_id);
    }
    per_user
        .into_iter()
        .map(|(u, w)| (u, UserHistory::new(u, w.into_iter().rev(), cap)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Divide by the number of exposed users whose history holds the antecedent.
    #[default]
    PerAntecedent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildParams {
    pub threshold: u32,
    pub normalization: Normalization,
    /// Exposure source a consequent watch must come from. The unbiased table
    /// uses the exploration container; `Home` builds the biased baseline.
    pub consequent_source: Source,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            normalization: Normalization::PerAntecedent,
            consequent_source: Source::ExplorationContainer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub consequent: u32,
    pub score: f64,
    pub support: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoOccurrenceTable {
    /// Antecedent -> associations, score descending, ties by consequent id.
    pub entries: BTreeMap<u32, Vec<Association>>,
    pub params: Option<BuildParams>,
}

impl CoOccurrenceTable {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_pairs(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn get(&self, antecedent: u32) -> &[Association] {
        self.entries.get(&antecedent).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `antecedent \t consequent \t score \t support`, score to six decimals.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for (a, list) in &self.entries {
            for x in list {
                writeln!(w, "{}\t{}\t{:.6}\t{}", a, x.consequent, x.score, x.support)?;
            }
        }
        Ok(())
    }

    /// Reads rows written by [`write_tsv`](Self::write_tsv); `#` lines are skipped.
    pub fn read_tsv<R: BufRead>(r: R, params: Option<BuildParams>) -> Result<Self> {
        let mut entries: BTreeMap<u32, Vec<Association>> = BTreeMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                path: "co-occurrence table".into(),
                line: i + 1,
                message,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", f.len())));
            }
            let a: u32 = f[0].parse().map_err(|e| bad(format!("antecedent: {e}")))?;
            let consequent = f[1].parse().map_err(|e| bad(format!("consequent: {e}")))?;
            let score = f[2].parse().map_err(|e| bad(format!("score: {e}")))?;
            let support = f[3].parse().map_err(|e| bad(format!("support: {e}")))?;
            entries.entry(a).or_default().push(Association {
                consequent,
                score,
                support,
            });
        }
        for list in entries.values_mut() {
            sort_associations(list);
        }
        Ok(Self { entries, params })
    }
}

fn sort_associations(list: &mut [Association]) {
    list.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.consequent.cmp(&b.consequent)));
}

/// Per-user engagement on each consequent title from `source` watches,
/// summed in log order.
fn consequent_watches(log: &SessionLog, source: Source) -> BTreeMap<u32, BTreeMap<u32, f64>> {
    let mut out: BTreeMap<u32, BTreeMap<u32, f64>> = BTreeMap::new();
    for e in log.watches().filter(|e| e.source == source) {
        *out.entry(e.user_id).or_default().entry(e.title_id).or_insert(0.0) += e.engagement;
    }
    out
}

fn exposed_users(log: &SessionLog, source: Source) -> BTreeSet<u32> {
    log.events
        .iter()
        .filter(|e| e.kind == EventKind::Impression && e.source == source)
        .map(|e| e.user_id)
        .collect()
}

pub fn build_cooccurrence(
    log: &SessionLog,
    histories: &BTreeMap<u32, UserHistory>,
    params: BuildParams,
) -> Result<CoOccurrenceTable> {
    if params.threshold < 1 {
        return Err(invalid("threshold must be >= 1"));
    }
    let watches = consequent_watches(log, params.consequent_source);
    let exposed = exposed_users(log, params.consequent_source);

    // antecedent -> exposed users holding it, ascending
    let mut holders: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (user, h) in histories {
        if !exposed.contains(user) {
            continue;
        }
        for &a in &h.watched {
            holders.entry(a).or_default().push(*user);
        }
    }

    let holders: Vec<(u32, Vec<u32>)> = holders.into_iter().collect();
    let entries: Vec<(u32, Vec<Association>)> = holders
        .par_iter()
        .filter_map(|(a, users)| {
            let mut acc: BTreeMap<u32, (u32, f64)> = BTreeMap::new();
            for u in users {
                let Some(w) = watches.get(u) else { continue };
                for (&b, &engagement) in w {
                    if b == *a {
                        continue;
                    }
                    let slot = acc.entry(b).or_insert((0, 0.0));
                    slot.0 += 1;
                    slot.1 += engagement;
                }
            }
            let denom = users.len() as f64;
            let mut list: Vec<Association> = acc
                .into_iter()
                .filter(|(_, (support, _))| *support >= params.threshold)
                .map(|(b, (support, raw))| Association {
                    consequent: b,
                    score: match params.normalization {
                        Normalization::None => raw,
                        Normalization::PerAntecedent => raw / denom,
                    },
                    support,
                })
                .collect();
            if list.is_empty() {
                return None;
            }
            sort_associations(&mut list);
            Some((*a, list))
        })
        .collect();

    Ok(CoOccurrenceTable {
        entries: entries.into_iter().collect(),
        params: Some(params),
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateSet {
    /// (title_id, aggregated score), score descending, ties by id.
    pub items: Vec<(u32, f64)>,
    /// Candidate -> antecedents that contributed, in history order.
    pub provenance: BTreeMap<u32, Vec<u32>>,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.items.iter().map(|c| c.0).collect()
    }
}

pub fn retrieve(history: &UserHistory, table: &CoOccurrenceTable, k: usize) -> Result<CandidateSet> {
    if k < 1 {
        return Err(invalid("k must be >= 1"));
    }
    let held: HashSet<u32> = history.watched.iter().copied().collect();
    let mut merged: BTreeMap<u32, (f64, Vec<u32>)> = BTreeMap::new();
    for &a in &history.watched {
        for x in table.get(a).iter().take(k) {
            if held.contains(&x.consequent) {
                continue;
            }
            let slot = merged.entry(x.consequent).or_insert((0.0, Vec::new()));
            slot.0 += x.score;
            slot.1.push(a);
        }
    }
    let mut items: Vec<(u32, f64)> = merged.iter().map(|(b, (s, _))| (*b, *s)).collect();
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let provenance = merged.into_iter().map(|(b, (_, src))| (b, src)).collect();
    Ok(CandidateSet { items, provenance })
}

/// Control ranking with recalled candidates interleaved at the head:
/// candidate, base, candidate, base, ... until `budget` candidates are used.
pub fn augment_ranking(base: &[u32], candidates: &[u32], budget: usize, len: usize) -> Vec<u32> {
    let extra = &candidates[..candidates.len().min(budget)];
    let mut seen = HashSet::with_capacity(len);
    let mut out = Vec::with_capacity(len);
    let mut bi = base.iter();
    let mut ci = extra.iter();
    while out.len() < len {
        let mut progressed = false;
        if let Some(&c) = ci.next() {
            progressed = true;
            if seen.insert(c) {
                out.push(c);
            }
        }
        if out.len() == len {
            break;
        }
        if let Some(&b) = bi.next() {
            progressed = true;
            if seen.insert(b) {
                out.push(b);
            }
        }
        if !progressed {
            break;
        }
    }
    out
}

/// Homepage policy whose candidate generation is augmented by the recaller.
pub struct RecallerPolicy {
    base: Arc<ControlPolicy>,
    table: Arc<CoOccurrenceTable>,
    histories: Arc<BTreeMap<u32, UserHistory>>,
    k: usize,
    budget: usize,
}

impl RecallerPolicy {
    pub fn new(
        base: Arc<ControlPolicy>,
        table: Arc<CoOccurrenceTable>,
        histories: Arc<BTreeMap<u32, UserHistory>>,
        k: usize,
        budget: usize,
    ) -> Result<Self> {
        if k < 1 {
            return Err(invalid("k must be >= 1"));
        }
        Ok(Self {
            base,
            table,
            histories,
            k,
            budget,
        })
    }
}

impl HomepagePolicy for RecallerPolicy {
    fn compose(&self, user_id: u32, _session_index: u32, _rng: &mut StreamRng) -> Result<Homepage> {
        let page = self.base.page_for(user_id)?;
        let Some(history) = self.histories.get(&user_id) else {
            return Ok(page);
        };
        let candidates = retrieve(history, &self.table, self.k)?;
        if candidates.is_empty() || self.budget == 0 {
            return Ok(page);
        }
        let (rows, row_len) = (self.base.rows(), self.base.row_len());
        let flat: Vec<u32> = page.rows.iter().flat_map(|r| r.title_ids.iter().copied()).collect();
        let ranked = augment_ranking(&flat, &candidates.ids(), self.budget, rows * row_len);
        Ok(chunk_rows(&ranked, rows, row_len))
    }
}

/// Output of the collect phase: the exploration-enabled log and what was
/// built from it.
pub struct RecallerArtifacts {
    pub log: SessionLog,
    pub histories: Arc<BTreeMap<u32, UserHistory>>,
    pub table: Arc<CoOccurrenceTable>,
}

impl RecallerArtifacts {
    pub fn from_log(world: &World, log: SessionLog, consequent_source: Source) -> Result<Self> {
        let rc = &world.config.recaller;
        let histories = build_histories(&log, rc.history_cap);
        let params = BuildParams {
            threshold: rc.threshold,
            normalization: rc.normalization,
            consequent_source,
        };
        let table = build_cooccurrence(&log, &histories, params)?;
        Ok(Self {
            log,
            histories: Arc::new(histories),
            table: Arc::new(table),
        })
    }

    pub fn policy(&self, world: &World) -> Result<RecallerPolicy> {
        RecallerPolicy::new(
            world.control.clone(),
            self.table.clone(),
            self.histories.clone(),
            world.config.recaller.k,
            world.config.recaller.budget,
        )
    }
}

/// Collect phase: the whole population browses with the dedicated
/// exploration row, then histories and the unbiased table are built.
pub fn collect_and_build(world: &World, pilot: Option<&RowStatsTable>) -> Result<RecallerArtifacts> {
    let slot = world.resolve_slot(pilot)?;
    let log = world.simulate(&world.dedicated_policy(slot)?)?;
    RecallerArtifacts::from_log(world, log, Source::ExplorationContainer)
}

/// Evaluate phase: control against the recaller-augmented control, with
/// every user continuing from their exposure in `collected`, the log the
/// table was built from.
pub fn evaluate_recaller(
    world: &World,
    table: Arc<CoOccurrenceTable>,
    collected: &SessionLog,
) -> Result<ExperimentReport> {
    let rc = &world.config.recaller;
    let histories = Arc::new(build_histories(collected, rc.history_cap));
    let treatment = RecallerPolicy::new(world.control.clone(), table, histories, rc.k, rc.budget)?;
    let arms = [
        Arm {
            name: "control".into(),
            policy: world.control.clone(),
        },
        Arm {
            name: "recaller".into(),
            policy: Arc::new(treatment),
        },
    ];
    run_arms(
        world,
        &arms,
        &[0.5, 0.5],
        &default_salt(&world.config, "recaller"),
        Phase::Evaluation,
        Some(collected),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::InteractionEvent;

    fn event(user: u32, title: u32, source: Source, kind: EventKind, engagement: f64, ts: u32) -> InteractionEvent {
        InteractionEvent {
            session_id: user as u64,
            user_id: user,
            title_id: title,
            row_index: 0,
            position: 0,
            source,
            kind,
            engagement,
            timestamp: ts,
        }
    }

    fn table(entries: &[(u32, &[(u32, f64)])]) -> CoOccurrenceTable {
        CoOccurrenceTable {
            entries: entries
                .iter()
                .map(|(a, l)| {
                    (
                        *a,
                        l.iter()
                            .map(|&(b, s)| Association {
                                consequent: b,
                                score: s,
                                support: 1,
                            })
                            .collect(),
                    )
                })
                .collect(),
            params: None,
        }
    }

    #[test]
    fn history_is_recent_first_unique_capped() {
        use EventKind::*;
        let log = SessionLog::from_events(vec![
            event(1, 5, Source::Home, Watch, 1.0, 0),
            event(1, 6, Source::Home, Watch, 1.0, 1),
            event(1, 5, Source::Home, Watch, 1.0, 2),
            event(1, 7, Source::ExplorationContainer, Watch, 1.0, 3),
        ]);
        let h = build_histories(&log, 2);
        assert_eq!(h[&1].watched, vec![7, 5]);
    }

    #[test]
    fn no_exploration_watches_gives_empty_table() {
        use EventKind::*;
        let log = SessionLog::from_events(vec![
            event(1, 5, Source::Home, Impression, 0.0, 0),
            event(1, 5, Source::Home, Watch, 1.0, 1),
        ]);
        let h = build_histories(&log, 50);
        let t = build_cooccurrence(&log, &h, BuildParams::default()).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn two_user_fixture() {
        use EventKind::*;
        const A: u32 = 1;
        const B: u32 = 2;
        let log = SessionLog::from_events(vec![
            event(10, A, Source::Home, Impression, 0.0, 0),
            event(10, A, Source::Home, Watch, 4.0, 1),
            event(10, B, Source::ExplorationContainer, Impression, 0.0, 2),
            event(10, B, Source::ExplorationContainer, Watch, 3.0, 3),
            event(11, A, Source::Home, Impression, 0.0, 0),
            event(11, A, Source::Home, Watch, 1.0, 1),
            event(11, B, Source::ExplorationContainer, Impression, 0.0, 2),
            event(11, B, Source::ExplorationContainer, Watch, 5.0, 3),
        ]);
        let h = build_histories(&log, 50);
        let params = BuildParams {
            threshold: 2,
            normalization: Normalization::None,
            ..Default::default()
        };
        let t = build_cooccurrence(&log, &h, params).unwrap();
        assert_eq!(
            t.get(A),
            &[Association {
                consequent: B,
                score: 8.0,
                support: 2
            }]
        );
        // B's holders never watched A from exploration: no reverse pair
        assert!(t.get(B).is_empty());
        let t3 = build_cooccurrence(&log, &h, BuildParams { threshold: 3, ..params }).unwrap();
        assert!(t3.is_empty());
        assert!(build_cooccurrence(&log, &h, BuildParams { threshold: 0, ..params }).is_err());
    }

    #[test]
    fn retrieval_examples() {
        let t = table(&[(1, &[(2, 2.0)])]);
        let h = UserHistory::new(0, [1], 50);
        assert_eq!(retrieve(&h, &t, 1).unwrap().items, vec![(2, 2.0)]);

        let t = table(&[(1, &[(2, 2.0)]), (3, &[(2, 1.0), (4, 0.5)])]);
        let h = UserHistory::new(0, [1, 3], 50);
        let c = retrieve(&h, &t, 2).unwrap();
        assert_eq!(c.items, vec![(2, 3.0), (4, 0.5)]);
        assert_eq!(c.provenance[&2], vec![1, 3]);

        let t = table(&[(1, &[(5, 2.0)])]);
        let h = UserHistory::new(0, [1, 5], 50);
        assert!(retrieve(&h, &t, 3).unwrap().is_empty());
        assert!(retrieve(&h, &CoOccurrenceTable::default(), 3).unwrap().is_empty());
        assert!(retrieve(&h, &t, 0).is_err());
    }

    #[test]
    fn top_k_truncates_per_antecedent() {
        let t = table(&[(1, &[(2, 3.0), (3, 2.0), (4, 1.0)])]);
        let h = UserHistory::new(0, [1], 50);
        assert_eq!(retrieve(&h, &t, 2).unwrap().ids(), vec![2, 3]);
    }

    #[test]
    fn tsv_layout_and_round_trip() {
        let t = table(&[(1, &[(2, 2.5), (3, 1.0 / 3.0)]), (4, &[(1, 1.0)])]);
        let mut buf = Vec::new();
        t.write_tsv(&mut buf).unwrap();
        assert_eq!(
            std::str::from_utf8(&buf).unwrap(),
            "1\t2\t2.500000\t1\n1\t3\t0.333333\t1\n4\t1\t1.000000\t1\n"
        );
        let back = CoOccurrenceTable::read_tsv(&buf[..], None).unwrap();
        assert_eq!(back.n_pairs(), 3);
        assert_eq!(back.get(1)[1].score, 0.333333);
    }

    #[test]
    fn augmentation_interleaves_and_dedups() {
        let base = [10, 11, 12, 13, 14];
        assert_eq!(augment_ranking(&base, &[1, 2], 10, 5), vec![1, 10, 2, 11, 12]);
        assert_eq!(augment_ranking(&base, &[11, 2, 3], 2, 5), vec![11, 10, 2, 12, 13]);
        assert_eq!(augment_ranking(&base, &[], 2, 5), base.to_vec());
    }
}
