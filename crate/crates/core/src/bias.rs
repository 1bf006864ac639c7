//! Popularity concentration diagnostics by exposure source.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::behavior::{SessionLog, Source};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFilter {
    Exploration,
    Overall,
}

impl SourceFilter {
    fn accepts(self, s: Source) -> bool {
        match self {
            SourceFilter::Exploration => s == Source::ExplorationContainer,
            SourceFilter::Overall => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopularityMode {
    /// Sum of watch engagement.
    #[default]
    Engagement,
    /// Number of watches.
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityDistribution {
    /// (title_id, share), share descending, ties by id.
    pub entries: Vec<(u32, f64)>,
    pub source: SourceFilter,
    pub top_n: usize,
}

impl PopularityDistribution {
    pub fn shares(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn gini(&self) -> Result<f64> {
        gini(&self.shares())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rank,title_id,share")?;
        for (i, (t, s)) in self.entries.iter().enumerate() {
            writeln!(w, "{},{},{}", i + 1, t, s)?;
        }
        Ok(())
    }
}

pub fn popularity_distribution(
    log: &SessionLog,
    filter: SourceFilter,
    top_n: usize,
    mode: PopularityMode,
) -> Result<PopularityDistribution> {
    if top_n == 0 {
        return Err(invalid("top_n must be >= 1"));
    }
    let mut pop: BTreeMap<u32, f64> = BTreeMap::new();
    for e in log.watches().filter(|e| filter.accepts(e.source)) {
        *pop.entry(e.title_id).or_insert(0.0) += match mode {
            PopularityMode::Engagement => e.engagement,
            PopularityMode::Count => 1.0,
        };
    }
    if pop.is_empty() {
        return Err(Error::NoMatchingEvents);
    }
    let mut ranked: Vec<(u32, f64)> = pop.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(top_n);
    let mass: f64 = ranked.iter().map(|e| e.1).sum();
    let entries = ranked.into_iter().map(|(t, v)| (t, v / mass)).collect();
    Ok(PopularityDistribution {
        entries,
        source: filter,
        top_n,
    })
}

/// Gini coefficient, sort-based.
///
/// Uses `sum_i (2i - n - 1) x_(i) / (n sum x)` over ascending order, folded
/// into differences `x_(n+1-i) - x_(i)` so every term is non-negative and a
/// perfectly even input yields exactly zero.
pub fn gini(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("gini of an empty input"));
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("gini inputs must be finite and non-negative"));
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(invalid("gini inputs sum to zero"));
    }
    let mut xs = values.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let mut acc = 0.0;
    for i in 0..n / 2 {
        let weight = (n - 1 - 2 * i) as f64;
        acc += weight * (xs[n - 1 - i] - xs[i]);
    }
    Ok(acc / (n as f64 * total))
}
