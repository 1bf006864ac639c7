//! A/B harness: deterministic bucketing, per-user engagement aggregation,
//! Welch lift tests and guardrail verdicts.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::{with_workers, EventKind, ExposureMemory, Phase, SessionLog};
use crate::config::{ArmKind, RunConfig};
use crate::error::{invalid, Error, Result};
use crate::recaller::{self, RecallerPolicy};
use crate::stats::{mean, variance, welch_t_test};
use crate::strategies::HomepagePolicy;
use crate::world::World;

/// Stable bucket for `user_id` under `salt`, by cumulative `weights`.
pub fn assign_arm(user_id: u32, salt: &str, weights: &[f64]) -> usize {
    debug_assert!(!weights.is_empty() && weights.iter().all(|w| *w > 0.0));
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update([0u8]);
    h.update(user_id.to_le_bytes());
    let digest = h.finalize();
    let word = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let u = (word >> 11) as f64 / (1u64 << 53) as f64;
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lift {
    pub lift_percent: f64,
    pub p_value: f64,
    pub degenerate: bool,
}

/// Relative lift of treatment over control in percent, with a two-sided
/// Welch p-value.
pub fn lift_and_pvalue(control: &[f64], treatment: &[f64]) -> Result<Lift> {
    let test = welch_t_test(control, treatment)?;
    let mc = mean(control);
    if mc == 0.0 {
        return Err(Error::UndefinedLift);
    }
    Ok(Lift {
        lift_percent: 100.0 * (mean(treatment) - mc) / mc,
        p_value: test.p_value,
        degenerate: test.degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guardrail {
    Pass,
    Fail,
    Inconclusive,
}

/// Fails only on a significant regression below `min_lift`.
pub fn guardrail_check(lift_percent: f64, p_value: f64, min_lift: f64, alpha: f64) -> Guardrail {
    if lift_percent >= min_lift {
        Guardrail::Pass
    } else if p_value < alpha {
        Guardrail::Fail
    } else {
        Guardrail::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub name: String,
    pub n_users: usize,
    pub mean_engagement: f64,
    pub std_engagement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmComparison {
    pub arm: String,
    pub lift_percent: f64,
    pub p_value: f64,
    pub degenerate: bool,
    pub guardrail: Guardrail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub alpha: f64,
    pub min_lift: f64,
    /// First arm is the control.
    pub arms: Vec<ArmSummary>,
    pub comparisons: Vec<ArmComparison>,
}

impl ExperimentReport {
    pub fn comparison(&self, arm: &str) -> Option<&ArmComparison> {
        self.comparisons.iter().find(|c| c.arm == arm)
    }

    /// Worst verdict across treatment arms.
    pub fn guardrail(&self) -> Guardrail {
        let v: Vec<Guardrail> = self.comparisons.iter().map(|c| c.guardrail).collect();
        if v.contains(&Guardrail::Fail) {
            Guardrail::Fail
        } else if v.contains(&Guardrail::Inconclusive) {
            Guardrail::Inconclusive
        } else {
            Guardrail::Pass
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Aligned text table: Treatment | User Engagement Lift | p-value.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<[String; 3]> = vec![["Treatment".into(), "User Engagement Lift".into(), "p-value".into()]];
        if let Some(c) = self.arms.first() {
            rows.push([c.name.clone(), "–".into(), "–".into()]);
        }
        for c in &self.comparisons {
            let p = if c.p_value < 0.001 {
                "< 0.001".to_string()
            } else {
                format!("{:.3}", c.p_value)
            };
            rows.push([c.arm.clone(), format!("{:+.2}%", c.lift_percent), p]);
        }
        let width = |i: usize| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0);
        let (w0, w1) = (width(0), width(1));
        let mut out = String::new();
        for r in &rows {
            let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w - s.chars().count()));
            let _ = writeln!(out, "{}  {}  {}", pad(&r[0], w0), pad(&r[1], w1), r[2]);
        }
        out
    }
}

pub struct Arm {
    pub name: String,
    pub policy: Arc<dyn HomepagePolicy>,
}

/// Buckets the world's users into `arms`, simulates each under its arm's
/// policy, and compares per-user engagement totals against the first arm.
/// Runs every user under its assigned arm. With `prior`, each user starts
/// with the impressions they accumulated in that earlier log.
pub fn run_arms(
    world: &World,
    arms: &[Arm],
    weights: &[f64],
    salt: &str,
    phase: Phase,
    prior: Option<&SessionLog>,
) -> Result<ExperimentReport> {
    if arms.is_empty() || arms.len() != weights.len() {
        return Err(invalid("need one weight per arm"));
    }
    if prior.is_some_and(|l| !l.is_user_grouped()) {
        return Err(invalid("prior log must be grouped by user"));
    }
    let sim = world.simulator()?;
    let cfg = &world.config;
    let totals: Vec<(usize, f64)> = with_workers(cfg.workers, || {
        world
            .users
            .par_iter()
            .map(|u| {
                let arm = assign_arm(u.id, salt, weights);
                let mut total = 0.0;
                let memory = prior.map_or_else(ExposureMemory::default, |l| {
                    ExposureMemory::from_events(l.user_events(u.id))
                });
                sim.simulate_user(
                    u,
                    arms[arm].policy.as_ref(),
                    cfg.population.sessions_per_user,
                    cfg.seed,
                    phase,
                    memory,
                    |_, events| {
                        total += events
                            .iter()
                            .filter(|e| e.kind == EventKind::Watch)
                            .map(|e| e.engagement)
                            .sum::<f64>();
                    },
                )?;
                Ok((arm, total))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut per_arm: Vec<Vec<f64>> = vec![Vec::new(); arms.len()];
    for (arm, total) in totals {
        per_arm[arm].push(total);
    }
    summarize(cfg, arms, &per_arm)
}

fn summarize(cfg: &RunConfig, arms: &[Arm], per_arm: &[Vec<f64>]) -> Result<ExperimentReport> {
    let (alpha, min_lift) = (cfg.experiment.alpha, cfg.experiment.min_lift);
    let arms_out = arms
        .iter()
        .zip(per_arm)
        .map(|(a, xs)| ArmSummary {
            name: a.name.clone(),
            n_users: xs.len(),
            mean_engagement: if xs.is_empty() { 0.0 } else { mean(xs) },
            std_engagement: if xs.len() < 2 { 0.0 } else { variance(xs).sqrt() },
        })
        .collect();
    let comparisons = arms
        .iter()
        .zip(per_arm)
        .skip(1)
        .map(|(a, xs)| {
            let l = lift_and_pvalue(&per_arm[0], xs)?;
            Ok(ArmComparison {
                arm: a.name.clone(),
                lift_percent: l.lift_percent,
                p_value: l.p_value,
                degenerate: l.degenerate,
                guardrail: guardrail_check(l.lift_percent, l.p_value, min_lift, alpha),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        seed: cfg.seed,
        alpha,
        min_lift,
        arms: arms_out,
        comparisons,
    })
}

pub fn default_salt(cfg: &RunConfig, purpose: &str) -> String {
    cfg.experiment
        .salt
        .clone()
        .unwrap_or_else(|| format!("{purpose}-{}", cfg.seed))
}

/// Runs the configured arms end to end. A recaller arm triggers the
/// collect-and-build phase first.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentReport> {
    let world = World::build(cfg)?;
    run_experiment_in(&world)
}

pub fn run_experiment_in(world: &World) -> Result<ExperimentReport> {
    let cfg = &world.config;
    let kinds = &cfg.experiment.arms;
    let needs_pilot = kinds
        .iter()
        .any(|k| *k == ArmKind::Insertion || (*k == ArmKind::Dedicated && cfg.strategy.slot.is_none()));
    let pilot = if needs_pilot { Some(world.pilot_stats()?) } else { None };

    let mut recalled: Option<(Arc<RecallerPolicy>, SessionLog)> = None;
    let mut arms = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let policy: Arc<dyn HomepagePolicy> = match kind {
            ArmKind::Control => world.control.clone(),
            ArmKind::Dedicated => Arc::new(world.dedicated_policy(world.resolve_slot(pilot.as_ref())?)?),
            ArmKind::Insertion => {
                let pilot = pilot.as_ref().expect("pilot computed for insertion");
                Arc::new(world.insertion_policy(world.insertion_count(pilot)?)?)
            }
            ArmKind::Recaller => {
                if let Some((p, _)) = &recalled {
                    p.clone()
                } else {
                    let artifacts = recaller::collect_and_build(world, pilot.as_ref())?;
                    let p = Arc::new(artifacts.policy(world)?);
                    recalled = Some((p.clone(), artifacts.log));
                    p
                }
            }
        };
        arms.push(Arm {
            name: kind.name().to_string(),
            policy,
        });
    }
    // With a recaller arm the experiment continues from the collect phase.
    let (phase, prior) = match &recalled {
        Some((_, log)) => (Phase::Evaluation, Some(log)),
        None => (Phase::Main, None),
    };
    run_arms(
        world,
        &arms,
        &cfg.arm_weights(),
        &default_salt(cfg, "experiment"),
        phase,
        prior,
    )
}
