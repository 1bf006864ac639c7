//! Run configuration, loaded from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::{BehaviorParams, TasteParams};
use crate::error::{Error, Result};
use crate::placement::PlacementConstraints;
use crate::recaller::Normalization;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads, 0 = all cores. Never changes outputs.
    pub workers: usize,
    pub catalog: CatalogConfig,
    pub population: PopulationConfig,
    pub page: PageConfig,
    pub behavior: BehaviorParams,
    pub placement: PlacementConstraints,
    pub strategy: StrategyConfig,
    pub experiment: ExperimentConfig,
    pub recaller: RecallerConfig,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogConfig {
    pub n_titles: usize,
    pub factor_dim: usize,
    pub min_quality: f64,
    pub policy_ok_prob: f64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self {
            n_titles: 2000,
            factor_dim: 16,
            min_quality: crate::catalog::DEFAULT_MIN_QUALITY,
            policy_ok_prob: crate::catalog::DEFAULT_POLICY_OK_PROB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub n_users: usize,
    pub sessions_per_user: u32,
    pub taste: TasteParams,
    /// Users whose cold-start sessions on random pages fit the popularity estimator.
    pub warmup_users: usize,
    pub warmup_sessions: u32,
    /// Users simulated under the control page to measure row stats.
    pub pilot_users: usize,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n_users: 20_000,
            sessions_per_user: 5,
            taste: TasteParams::default(),
            warmup_users: 2_000,
            warmup_sessions: 2,
            pilot_users: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PageConfig {
    pub n_rows: usize,
    pub row_len: usize,
}

impl Default for PageConfig {
    fn default() -> Self {
        Self {
            n_rows: 30,
            row_len: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Control,
    Dedicated,
    Insertion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Dedicated row slot; chosen by the placement rule when absent.
    pub slot: Option<u32>,
    /// Dedicated row length.
    pub m: usize,
    pub target_impact: f64,
    /// Personalized row receiving inserted titles.
    pub insertion_row: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Dedicated,
            slot: None,
            m: 20,
            target_impact: 0.01,
            insertion_row: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmKind {
    Control,
    Dedicated,
    Insertion,
    Recaller,
}

impl ArmKind {
    pub fn name(self) -> &'static str {
        match self {
            ArmKind::Control => "control",
            ArmKind::Dedicated => "dedicated",
            ArmKind::Insertion => "insertion",
            ArmKind::Recaller => "recaller",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// First arm is the control every other arm is compared against.
    pub arms: Vec<ArmKind>,
    /// Traffic split; equal when absent.
    pub weights: Option<Vec<f64>>,
    pub alpha: f64,
    /// Minimum acceptable lift in percent.
    pub min_lift: f64,
    pub salt: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            arms: vec![ArmKind::Control, ArmKind::Insertion, ArmKind::Dedicated],
            weights: None,
            alpha: 0.05,
            min_lift: 0.0,
            salt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecallerConfig {
    pub threshold: u32,
    pub k: usize,
    pub normalization: Normalization,
    pub history_cap: usize,
    /// Recalled candidates merged into each page.
    pub budget: usize,
}

impl Default for RecallerConfig {
    fn default() -> Self {
        Self {
            threshold: crate::recaller::DEFAULT_THRESHOLD,
            k: crate::recaller::DEFAULT_K,
            normalization: Normalization::PerAntecedent,
            history_cap: crate::recaller::DEFAULT_HISTORY_CAP,
            budget: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub workdir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            workdir: PathBuf::from("run"),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            workers: 0,
            catalog: CatalogConfig::default(),
            population: PopulationConfig::default(),
            page: PageConfig::default(),
            behavior: BehaviorParams::default(),
            placement: PlacementConstraints::default(),
            strategy: StrategyConfig::default(),
            experiment: ExperimentConfig::default(),
            recaller: RecallerConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn check(ok: bool, key: &str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("`{key}`: {msg}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.catalog;
        check(c.n_titles >= 1, "catalog.n_titles", "must be >= 1")?;
        check(c.factor_dim >= 1, "catalog.factor_dim", "must be >= 1")?;
        check(
            (0.0..=1.0).contains(&c.min_quality),
            "catalog.min_quality",
            "must be in [0,1]",
        )?;
        check(
            (0.0..=1.0).contains(&c.policy_ok_prob),
            "catalog.policy_ok_prob",
            "must be in [0,1]",
        )?;
        let p = &self.population;
        check(
            p.taste.shared >= 0.0 && p.taste.individual >= 0.0,
            "population.taste",
            "scales must be >= 0",
        )?;
        let pg = &self.page;
        check(
            pg.n_rows >= 1 && pg.row_len >= 1,
            "page",
            "n_rows and row_len must be >= 1",
        )?;
        check(
            pg.n_rows * pg.row_len <= c.n_titles,
            "page",
            "page holds more titles than the catalog",
        )?;
        self.behavior
            .validate()
            .map_err(|e| Error::Config(format!("`behavior`: {e}")))?;
        self.placement
            .validate()
            .map_err(|e| Error::Config(format!("`placement`: {e}")))?;
        let s = &self.strategy;
        check(s.m >= 1, "strategy.m", "must be >= 1")?;
        check(
            s.target_impact > 0.0 && s.target_impact <= 1.0,
            "strategy.target_impact",
            "must be in (0,1]",
        )?;
        check(
            s.insertion_row < pg.n_rows,
            "strategy.insertion_row",
            "must index a page row",
        )?;
        if let Some(slot) = s.slot {
            check(slot as usize <= pg.n_rows, "strategy.slot", "must be <= page.n_rows")?;
        }
        let e = &self.experiment;
        check(!e.arms.is_empty(), "experiment.arms", "needs at least one arm")?;
        check(e.alpha > 0.0 && e.alpha < 1.0, "experiment.alpha", "must be in (0,1)")?;
        if let Some(w) = &e.weights {
            check(w.len() == e.arms.len(), "experiment.weights", "one weight per arm")?;
            check(w.iter().all(|x| *x > 0.0), "experiment.weights", "must be positive")?;
            check(
                (w.iter().sum::<f64>() - 1.0).abs() < 1e-9,
                "experiment.weights",
                "must sum to 1",
            )?;
        }
        let r = &self.recaller;
        check(r.threshold >= 1, "recaller.threshold", "must be >= 1")?;
        check(r.k >= 1, "recaller.k", "must be >= 1")?;
        check(r.history_cap >= 1, "recaller.history_cap", "must be >= 1")?;
        Ok(())
    }

    pub fn arm_weights(&self) -> Vec<f64> {
        match &self.experiment.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.experiment.arms.len() as f64; self.experiment.arms.len()],
        }
    }

    /// Hash over everything that shapes outputs (not workers, not paths).
    pub fn manifest_hash(&self) -> String {
        let mut canon = self.clone();
        canon.workers = 0;
        canon.paths = PathsConfig::default();
        let json = serde_json::to_vec(&canon).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }
}
