//! Synthetic catalog and the qualified exploration pool.
//!
//! Each title carries a latent factor vector that only the behavior
//! simulator reads. Recommendation-side code works from ids, quality flags
//! and logged behavior.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, domain};

pub const DEFAULT_POLICY_OK_PROB: f64 = 0.98;
pub const DEFAULT_MIN_QUALITY: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Title {
    pub id: u32,
    pub quality_score: f64,
    pub policy_ok: bool,
    latent: Vec<f64>,
}

impl Title {
    pub fn new(id: u32, quality_score: f64, policy_ok: bool, latent: Vec<f64>) -> Self {
        Self {
            id,
            quality_score,
            policy_ok,
            latent,
        }
    }

    /// Ground-truth factor. Simulation only: policies must never read it.
    pub fn latent(&self) -> &[f64] {
        &self.latent
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    titles: Vec<Title>,
    factor_dim: usize,
}

impl Catalog {
    /// Builds a catalog from titles whose ids are dense in `[0, len)` and in order.
    pub fn from_titles(titles: Vec<Title>) -> Result<Self> {
        let factor_dim = titles
            .first()
            .map(|t| t.latent.len())
            .ok_or_else(|| invalid("catalog must not be empty"))?;
        if factor_dim == 0 {
            return Err(invalid("factor_dim must be >= 1"));
        }
        for (i, t) in titles.iter().enumerate() {
            if t.id as usize != i {
                return Err(invalid(format!("title at index {i} has id {}", t.id)));
            }
            if t.latent.len() != factor_dim {
                return Err(invalid(format!(
                    "title {} has latent dim {}, expected {factor_dim}",
                    t.id,
                    t.latent.len()
                )));
            }
            if !(0.0..=1.0).contains(&t.quality_score) {
                return Err(invalid(format!("title {} quality_score out of [0,1]", t.id)));
            }
        }
        Ok(Self { titles, factor_dim })
    }

    pub fn titles(&self) -> &[Title] {
        &self.titles
    }

    pub fn len(&self) -> usize {
        self.titles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.titles.is_empty()
    }

    pub fn factor_dim(&self) -> usize {
        self.factor_dim
    }

    pub fn title(&self, id: u32) -> &Title {
        &self.titles[id as usize]
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.titles {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut titles = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Title = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: "catalog".into(),
                line: i + 1,
                message: e.to_string(),
            })?;
            titles.push(t);
        }
        Self::from_titles(titles)
    }
}

pub fn generate_catalog(seed: u64, n_titles: usize, factor_dim: usize) -> Result<Catalog> {
    generate_catalog_with(seed, n_titles, factor_dim, DEFAULT_POLICY_OK_PROB)
}

pub fn generate_catalog_with(seed: u64, n_titles: usize, factor_dim: usize, policy_ok_prob: f64) -> Result<Catalog> {
    if n_titles == 0 || factor_dim == 0 {
        return Err(invalid("n_titles and factor_dim must be >= 1"));
    }
    if n_titles > u32::MAX as usize {
        return Err(invalid("n_titles too large"));
    }
    if !(0.0..=1.0).contains(&policy_ok_prob) {
        return Err(invalid("policy_ok_prob must be in [0,1]"));
    }
    let mut rng = rng::stream(seed, domain::CATALOG, 0, 0);
    let titles = (0..n_titles as u32)
        .map(|id| {
            let quality_score = rng.random::<f64>();
            let policy_ok = rng.random_bool(policy_ok_prob);
            let latent = (0..factor_dim).map(|_| rng.sample(StandardNormal)).collect();
            Title::new(id, quality_score, policy_ok, latent)
        })
        .collect();
    Ok(Catalog { titles, factor_dim })
}

/// Titles eligible for randomized exposure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QualifiedPool {
    title_ids: Vec<u32>,
    source_catalog_size: usize,
}

impl QualifiedPool {
    /// Sorted ascending, unique.
    pub fn title_ids(&self) -> &[u32] {
        &self.title_ids
    }

    pub fn len(&self) -> usize {
        self.title_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.title_ids.is_empty()
    }

    pub fn source_catalog_size(&self) -> usize {
        self.source_catalog_size
    }

    pub fn contains(&self, id: u32) -> bool {
        self.title_ids.binary_search(&id).is_ok()
    }

    pub fn from_ids(ids: impl IntoIterator<Item = u32>, source_catalog_size: usize) -> Result<Self> {
        let set: BTreeSet<u32> = ids.into_iter().collect();
        if set.is_empty() {
            return Err(Error::EmptyPool { min_quality: f64::NAN });
        }
        Ok(Self {
            title_ids: set.into_iter().collect(),
            source_catalog_size,
        })
    }
}

pub fn is_qualified(title: &Title, min_quality: f64) -> bool {
    title.quality_score >= min_quality && title.policy_ok
}

pub fn qualify_pool(catalog: &Catalog, min_quality: f64) -> Result<QualifiedPool> {
    if !(0.0..=1.0).contains(&min_quality) {
        return Err(invalid(format!("min_quality {min_quality} outside [0,1]")));
    }
    let title_ids: Vec<u32> = catalog
        .titles()
        .iter()
        .filter(|t| is_qualified(t, min_quality))
        .map(|t| t.id)
        .collect();
    if title_ids.is_empty() {
        return Err(Error::EmptyPool { min_quality });
    }
    Ok(QualifiedPool {
        title_ids,
        source_catalog_size: catalog.len(),
    })
}
