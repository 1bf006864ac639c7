//! Assembles a simulated world from a run configuration: catalog, pool,
//! users, the popularity estimator behind the control page, and the
//! homepage policies built on top of it.

use std::sync::Arc;

use crate::behavior::{generate_users, Phase, SessionLog, Simulator, UserProfile};
use crate::catalog::{generate_catalog_with, qualify_pool, Catalog, QualifiedPool};
use crate::config::{RunConfig, StrategyKind};
use crate::error::Result;
use crate::placement::{compute_row_stats, select_placement, RowStatsTable};
use crate::strategies::{
    compute_insertion_count, ControlPolicy, DedicatedRowPolicy, HomepagePolicy, InsertionPolicy, PopularityEstimator,
    RandomPagePolicy,
};

pub struct World {
    pub config: RunConfig,
    pub catalog: Arc<Catalog>,
    pub pool: Arc<QualifiedPool>,
    pub users: Vec<UserProfile>,
    pub estimator: Arc<PopularityEstimator>,
    pub control: Arc<ControlPolicy>,
}

impl World {
    pub fn build(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let c = &config.catalog;
        let catalog = Arc::new(generate_catalog_with(seed, c.n_titles, c.factor_dim, c.policy_ok_prob)?);
        let pool = Arc::new(qualify_pool(&catalog, c.min_quality)?);
        let users = generate_users(
            seed,
            config.population.n_users,
            c.factor_dim,
            config.population.taste,
            config.behavior.base_continuation,
        )?;

        let estimator = Arc::new(fit_warmup_estimator(config, &catalog, &users)?);
        let control = Arc::new(ControlPolicy::new(
            catalog.clone(),
            estimator.clone(),
            config.page.n_rows,
            config.page.row_len,
        )?);
        Ok(Self {
            config: config.clone(),
            catalog,
            pool,
            users,
            estimator,
            control,
        })
    }

    pub fn simulator(&self) -> Result<Simulator<'_>> {
        Simulator::new(&self.catalog, self.config.behavior)
    }

    /// Main-phase log of the whole population under `policy`.
    pub fn simulate(&self, policy: &dyn HomepagePolicy) -> Result<SessionLog> {
        self.simulator()?.simulate_population(
            &self.users,
            policy,
            self.config.population.sessions_per_user,
            self.config.seed,
            Phase::Main,
            self.config.workers,
        )
    }

    /// Row stats of the control page measured on the pilot users.
    pub fn pilot_stats(&self) -> Result<RowStatsTable> {
        let n = self.config.population.pilot_users.min(self.users.len()).max(1);
        let log = self.simulator()?.simulate_population(
            &self.users[..n.min(self.users.len())],
            self.control.as_ref(),
            self.config.population.sessions_per_user.max(1),
            self.config.seed,
            Phase::Pilot,
            self.config.workers,
        )?;
        Ok(compute_row_stats(&log)?.padded(self.config.page.n_rows))
    }

    /// Configured slot, or the placement rule applied to pilot stats.
    pub fn resolve_slot(&self, pilot: Option<&RowStatsTable>) -> Result<u32> {
        if let Some(slot) = self.config.strategy.slot {
            return Ok(slot);
        }
        let owned;
        let stats = match pilot {
            Some(p) => p,
            None => {
                owned = self.pilot_stats()?;
                &owned
            }
        };
        select_placement(&stats.rows, &self.config.placement)
    }

    pub fn insertion_count(&self, pilot: &RowStatsTable) -> Result<usize> {
        let row = self.config.strategy.insertion_row;
        let share = pilot.rows.get(row).map(|r| r.engagement_share).unwrap_or(0.0);
        compute_insertion_count(share, self.config.strategy.target_impact, self.config.page.row_len)
    }

    pub fn dedicated_policy(&self, slot: u32) -> Result<DedicatedRowPolicy> {
        DedicatedRowPolicy::new(
            self.control.clone(),
            self.pool.clone(),
            slot as usize,
            self.config.strategy.m,
        )
    }

    pub fn insertion_policy(&self, n_insert: usize) -> Result<InsertionPolicy> {
        InsertionPolicy::new(
            self.control.clone(),
            self.pool.clone(),
            self.config.strategy.insertion_row,
            n_insert,
        )
    }

    /// The policy named by `strategy.kind`.
    pub fn configured_policy(&self) -> Result<Arc<dyn HomepagePolicy>> {
        Ok(match self.config.strategy.kind {
            StrategyKind::Control => self.control.clone(),
            StrategyKind::Dedicated => Arc::new(self.dedicated_policy(self.resolve_slot(None)?)?),
            StrategyKind::Insertion => {
                let pilot = self.pilot_stats()?;
                Arc::new(self.insertion_policy(self.insertion_count(&pilot)?)?)
            }
        })
    }
}

/// Cold start: the first `warmup_users` browse uniformly random pages and
/// the popularity estimator is fit on their homepage watches.
fn fit_warmup_estimator(config: &RunConfig, catalog: &Catalog, users: &[UserProfile]) -> Result<PopularityEstimator> {
    let n = config.population.warmup_users.min(users.len());
    let policy = RandomPagePolicy::new(catalog.len(), config.page.n_rows, config.page.row_len)?;
    let log = Simulator::new(catalog, config.behavior)?.simulate_population(
        &users[..n],
        &policy,
        config.population.warmup_sessions,
        config.seed,
        Phase::Warmup,
        config.workers,
    )?;
    Ok(PopularityEstimator::fit(&log, catalog.len()))
}
