use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use explore_lab::artifact::{open_artifact, write_artifact};
use explore_lab::behavior::{EventKind, SessionLog, Source};
use explore_lab::bias::{popularity_distribution, PopularityMode, SourceFilter};
use explore_lab::config::{RunConfig, StrategyKind};
use explore_lab::experiment::{run_experiment_in, ExperimentReport, Guardrail};
use explore_lab::placement::{compute_row_stats, select_placement};
use explore_lab::recaller::{evaluate_recaller, CoOccurrenceTable, RecallerArtifacts};
use explore_lab::world::World;
use explore_lab::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_GUARDRAIL: u8 = 3;

#[derive(Parser)]
#[command(name = "explore-lab", version, about = "Cost-aware exploration delivery lab")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for artifacts (overrides `paths.workdir`).
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Worker threads; 0 uses all cores. Never changes outputs.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured strategy and write catalog, events and manifest.
    Simulate,
    /// Per-row reach and engagement share from the events file, and the chosen slot.
    AnalyzePlacement,
    /// Run the configured A/B experiment.
    RunExperiment,
    /// Build the co-occurrence table from the events file.
    BuildRecaller {
        /// Use homepage watches as consequents (the popularity-biased table).
        #[arg(long)]
        biased: bool,
    },
    /// Evaluate a recaller table against control, continuing from the events file.
    EvaluateRecaller {
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Popularity distributions and Gini by exposure source.
    BiasReport {
        #[arg(long, default_value_t = 500)]
        top_n: usize,
        /// Rank titles by watch count instead of engagement.
        #[arg(long)]
        by_count: bool,
    },
}

#[derive(Debug, Serialize)]
struct Manifest {
    config_hash: String,
    seed: u64,
    version: String,
    strategy: StrategyKind,
    slot: Option<u32>,
}

struct Run {
    cfg: RunConfig,
    hash: String,
    dir: PathBuf,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn read_log(&self) -> Result<SessionLog> {
        let path = self.path("events.jsonl");
        let r = open_artifact(&path, &self.hash).with_context(|| format!("reading {}", path.display()))?;
        Ok(SessionLog::read_jsonl(r)?)
    }

    fn write_manifest(&self, slot: Option<u32>) -> Result<()> {
        let m = Manifest {
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            strategy: self.cfg.strategy.kind,
            slot,
        };
        fs::write(self.path("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(())
    }

    fn write_report(&self, stem: &str, report: &ExperimentReport) -> Result<()> {
        #[derive(Serialize)]
        struct Envelope<'a> {
            manifest: &'a str,
            report: &'a ExperimentReport,
        }
        let json = serde_json::to_string_pretty(&Envelope {
            manifest: &self.hash,
            report,
        })?;
        fs::write(self.path(&format!("{stem}.json")), json + "\n")?;
        write_artifact(&self.path(&format!("{stem}.txt")), &self.hash, |w| {
            Ok(w.write_all(report.to_table().as_bytes())?)
        })?;
        Ok(())
    }
}

fn load_run(g: &Global) -> Result<Run> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(d) = &g.workdir {
        cfg.paths.workdir = d.clone();
    }
    cfg.validate()?;
    let dir = cfg.paths.workdir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating workdir {}", dir.display()))?;
    Ok(Run {
        hash: cfg.manifest_hash(),
        cfg,
        dir,
    })
}

fn simulate(run: &Run) -> Result<()> {
    let world = World::build(&run.cfg)?;
    let slot = match run.cfg.strategy.kind {
        StrategyKind::Dedicated => Some(world.resolve_slot(None)?),
        _ => None,
    };
    let policy = match slot {
        Some(s) => Arc::new(world.dedicated_policy(s)?),
        None => world.configured_policy()?,
    };
    let log = world.simulate(policy.as_ref())?;
    write_artifact(&run.path("catalog.jsonl"), &run.hash, |w| world.catalog.write_jsonl(w))?;
    write_artifact(&run.path("events.jsonl"), &run.hash, |w| log.write_jsonl(w))?;
    fs::write(run.path("config.toml"), run.cfg.to_toml_string())?;
    run.write_manifest(slot)?;
    println!(
        "simulated {} users x {} sessions: {} events -> {}",
        world.users.len(),
        run.cfg.population.sessions_per_user,
        log.events.len(),
        run.dir.display()
    );
    Ok(())
}

fn analyze_placement(run: &Run) -> Result<()> {
    let log = run.read_log()?;
    if let Some(row) = dedicated_row(&log) {
        anyhow::bail!(
            "the events contain a dedicated exploration row at row {row}; placement is measured on a control run (strategy.kind = \"control\")"
        );
    }
    let stats = compute_row_stats(&log)?.padded(run.cfg.page.n_rows);
    write_artifact(&run.path("row_stats.csv"), &run.hash, |w| stats.write_csv(w))?;
    let slot = select_placement(&stats.rows, &run.cfg.placement)?;
    let row = &stats.rows[slot as usize];
    println!(
        "slot {slot} (reach {:.4}, engagement share {:.4})",
        row.reach, row.engagement_share
    );
    run.write_manifest(Some(slot))?;
    Ok(())
}

/// A row whose impressions all come from the exploration container.
fn dedicated_row(log: &SessionLog) -> Option<u32> {
    let mut rows: std::collections::BTreeMap<u32, bool> = std::collections::BTreeMap::new();
    for e in log.events.iter().filter(|e| e.kind == EventKind::Impression) {
        *rows.entry(e.row_index).or_insert(true) &= e.source == Source::ExplorationContainer;
    }
    rows.into_iter().find(|&(_, all)| all).map(|(r, _)| r)
}

fn run_experiment(run: &Run) -> Result<Guardrail> {
    let world = World::build(&run.cfg)?;
    let report = run_experiment_in(&world)?;
    run.write_report("report", &report)?;
    print!("{}", report.to_table());
    Ok(report.guardrail())
}

fn build_recaller(run: &Run, biased: bool) -> Result<()> {
    let log = run.read_log()?;
    let source = if biased {
        Source::Home
    } else {
        Source::ExplorationContainer
    };
    if !biased && !log.events.iter().any(|e| e.source == Source::ExplorationContainer) {
        eprintln!("warning: the events file has no exploration-container events; the table is empty");
    }
    let world = World::build(&run.cfg)?;
    let built = RecallerArtifacts::from_log(&world, log, source)?;
    let name = table_name(biased);
    write_artifact(&run.path(name), &run.hash, |w| built.table.write_tsv(w))?;
    println!(
        "{} pairs over {} antecedents -> {}",
        built.table.n_pairs(),
        built.table.entries.len(),
        run.path(name).display()
    );
    Ok(())
}

fn table_name(biased: bool) -> &'static str {
    if biased {
        "cooccurrence_home.tsv"
    } else {
        "cooccurrence.tsv"
    }
}

fn evaluate(run: &Run, table: Option<&Path>) -> Result<Guardrail> {
    let path = table
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run.path(table_name(false)));
    let r = open_artifact(&path, &run.hash).with_context(|| format!("reading {}", path.display()))?;
    let table = CoOccurrenceTable::read_tsv(r, None)?;
    let log = run.read_log()?;
    let world = World::build(&run.cfg)?;
    let report = evaluate_recaller(&world, Arc::new(table), &log)?;
    run.write_report("recaller_report", &report)?;
    print!("{}", report.to_table());
    Ok(report.guardrail())
}

fn bias_report(run: &Run, top_n: usize, by_count: bool) -> Result<()> {
    #[derive(Serialize)]
    struct Summary {
        manifest: String,
        top_n: usize,
        mode: PopularityMode,
        gini_overall: Option<f64>,
        gini_exploration: Option<f64>,
    }
    let log = run.read_log()?;
    let mode = if by_count {
        PopularityMode::Count
    } else {
        PopularityMode::Engagement
    };
    let mut ginis = [None, None];
    for (i, (filter, name)) in [
        (SourceFilter::Overall, "popularity_overall.csv"),
        (SourceFilter::Exploration, "popularity_exploration.csv"),
    ]
    .into_iter()
    .enumerate()
    {
        match popularity_distribution(&log, filter, top_n, mode) {
            Ok(dist) => {
                write_artifact(&run.path(name), &run.hash, |w| dist.write_csv(w))?;
                ginis[i] = Some(dist.gini()?);
            }
            Err(Error::NoMatchingEvents) => {
                eprintln!("warning: no watches for {filter:?}; {name} not written");
            }
            Err(e) => return Err(e.into()),
        }
    }
    let summary = Summary {
        manifest: run.hash.clone(),
        top_n,
        mode,
        gini_overall: ginis[0],
        gini_exploration: ginis[1],
    };
    fs::write(run.path("bias.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let show = |g: Option<f64>| g.map_or("n/a".to_string(), |g| format!("{g:.3}"));
    println!(
        "gini top-{top_n}: overall {} exploration {}",
        show(ginis[0]),
        show(ginis[1])
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<Guardrail> {
    let run = load_run(&cli.global)?;
    match &cli.command {
        Command::Simulate => simulate(&run)?,
        Command::AnalyzePlacement => analyze_placement(&run)?,
        Command::RunExperiment => return run_experiment(&run),
        Command::BuildRecaller { biased } => build_recaller(&run, *biased)?,
        Command::EvaluateRecaller { table } => return evaluate(&run, table.as_deref()),
        Command::BiasReport { top_n, by_count } => bias_report(&run, *top_n, *by_count)?,
    }
    Ok(Guardrail::Pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(Guardrail::Fail) => {
            eprintln!("guardrail: fail (significant regression)");
            ExitCode::from(EXIT_GUARDRAIL)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
