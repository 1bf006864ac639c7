//! Row-level cost model: how many sessions see a row (reach) and how much of
//! the log's engagement the row carries (engagement share), plus the rule
//! that picks the exploration slot from those two numbers.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::behavior::{EventKind, SessionLog};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowStats {
    pub row_index: u32,
    pub reach: f64,
    pub engagement_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowStatsTable {
    pub rows: Vec<RowStats>,
    /// Set when the log carries no engagement; shares are then all zero.
    pub degenerate: bool,
}

impl RowStatsTable {
    /// Extends the table with zero-reach rows up to `n_rows` entries.
    pub fn padded(mut self, n_rows: usize) -> Self {
        while self.rows.len() < n_rows {
            let row_index = self.rows.len() as u32;
            self.rows.push(RowStats {
                row_index,
                reach: 0.0,
                engagement_share: 0.0,
            });
        }
        self
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row_index,reach,engagement_share")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.row_index, r.reach, r.engagement_share)?;
        }
        Ok(())
    }
}

pub fn compute_row_stats(log: &SessionLog) -> Result<RowStatsTable> {
    if log.is_empty() {
        return Err(invalid("cannot compute row stats from an empty log"));
    }
    let n_rows = log.events.iter().map(|e| e.row_index).max().unwrap_or(0) as usize + 1;
    let mut seen: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); n_rows];
    let mut engagement = vec![0.0f64; n_rows];
    let mut sessions = BTreeSet::new();
    for e in &log.events {
        sessions.insert(e.session_id);
        match e.kind {
            EventKind::Impression => {
                seen[e.row_index as usize].insert(e.session_id);
            }
            EventKind::Watch => engagement[e.row_index as usize] += e.engagement,
            EventKind::Click => {}
        }
    }
    let n_sessions = sessions.len() as f64;
    let total: f64 = engagement.iter().sum();
    let degenerate = total <= 0.0;
    let rows = (0..n_rows)
        .map(|k| RowStats {
            row_index: k as u32,
            reach: seen[k].len() as f64 / n_sessions,
            engagement_share: if degenerate { 0.0 } else { engagement[k] / total },
        })
        .collect();
    Ok(RowStatsTable { rows, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlacementConstraints {
    pub min_reach: f64,
    pub max_engagement_share: f64,
    pub target_engagement_share: f64,
    /// Special containers never eligible for exploration.
    pub excluded_rows: Vec<u32>,
}

impl Default for PlacementConstraints {
    fn default() -> Self {
        Self {
            min_reach: 0.10,
            max_engagement_share: 0.015,
            target_engagement_share: 0.01,
            excluded_rows: Vec::new(),
        }
    }
}

impl PlacementConstraints {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_reach > 0.0 && self.min_reach < 1.0) {
            return Err(invalid("min_reach must be in (0,1)"));
        }
        let (t, m) = (self.target_engagement_share, self.max_engagement_share);
        if !(t > 0.0 && t <= m && m < 1.0) {
            return Err(invalid("need 0 < target_engagement_share <= max_engagement_share < 1"));
        }
        Ok(())
    }

    pub fn is_feasible(&self, s: &RowStats) -> bool {
        s.reach >= self.min_reach
            && s.engagement_share <= self.max_engagement_share
            && !self.excluded_rows.contains(&s.row_index)
    }
}

/// Among feasible rows, the one whose share is closest to the target; ties
/// go to the deepest row.
pub fn select_placement(stats: &[RowStats], c: &PlacementConstraints) -> Result<u32> {
    if stats.is_empty() {
        return Err(invalid("no row stats"));
    }
    c.validate()?;
    stats
        .iter()
        .filter(|s| c.is_feasible(s))
        .min_by(|a, b| {
            let da = (a.engagement_share - c.target_engagement_share).abs();
            let db = (b.engagement_share - c.target_engagement_share).abs();
            da.total_cmp(&db).then(b.row_index.cmp(&a.row_index))
        })
        .map(|s| s.row_index)
        .ok_or_else(|| Error::NoSafePlacement {
            min_reach: c.min_reach,
            max_share: c.max_engagement_share,
            dump: feasibility_dump(stats, c),
        })
}

pub fn feasibility_dump(stats: &[RowStats], c: &PlacementConstraints) -> String {
    let mut out = String::from("row  reach     share     reach_ok share_ok\n");
    for s in stats {
        out.push_str(&format!(
            "{:<4} {:<9.5} {:<9.5} {:<8} {}\n",
            s.row_index,
            s.reach,
            s.engagement_share,
            s.reach >= c.min_reach,
            s.engagement_share <= c.max_engagement_share
        ));
    }
    out
}
