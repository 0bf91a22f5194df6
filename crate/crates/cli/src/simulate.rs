//! Deterministic workload replay with simulated dispatch latency.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use autocompose::decision::Locality;
use autocompose::engine::{EngineConfig, DEFAULT_MINE_EVERY};
use autocompose::{Engine, ManualClock, MiningConfig, Repository, RepositoryPaths, ServiceOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::report::Report;
use crate::scenario::{self, Step};

/// Support threshold for a log started from scratch.
pub const FRESH_SUPPORT_PERCENT: f64 = 40.0;

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub scenario: PathBuf,
    pub seed: u64,
    pub transactions: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub mine_every: usize,
}

impl SimulateOptions {
    pub fn new(scenario: impl Into<PathBuf>, seed: u64) -> Self {
        SimulateOptions {
            scenario: scenario.into(),
            seed,
            transactions: None,
            config: None,
            catalog: None,
            rules: None,
            mine_every: DEFAULT_MINE_EVERY,
        }
    }
}

/// Per-hook latency model in microseconds.
struct Latency(ChaCha8Rng);

impl Latency {
    fn sample(&mut self, outcome: &ServiceOutcome) -> u64 {
        let mut us = 200;
        for _ in 0..outcome.sub_dispatch_count {
            us += self.0.gen_range(500..2000);
            if outcome.locality == Some(Locality::Remote) {
                us += self.0.gen_range(4000..6000);
            }
        }
        us
    }
}

#[derive(Default)]
struct Tally {
    requests: usize,
    sub_dispatch: usize,
}

impl Tally {
    fn add(&mut self, outcome: &ServiceOutcome) {
        self.requests += 1;
        self.sub_dispatch += outcome.sub_dispatch_count;
    }
}

fn prepare(opts: &SimulateOptions, dir: &Path, universe: u32) -> Result<RepositoryPaths> {
    let paths = RepositoryPaths::in_dir(dir);
    match (&opts.transactions, &opts.config) {
        (Some(tx), Some(cfg)) => {
            std::fs::copy(tx, &paths.transactions)
                .with_context(|| format!("copying {}", tx.display()))?;
            std::fs::copy(cfg, &paths.config)
                .with_context(|| format!("copying {}", cfg.display()))?;
        }
        (None, None) => {
            Repository::create(
                paths.clone(),
                MiningConfig::new(universe, 0, FRESH_SUPPORT_PERCENT),
            )?;
        }
        _ => bail!("--transactions and --config must be given together"),
    }
    Ok(paths)
}

/// Replays the scenario against a scratch copy of the log. The report has
/// no wall-clock content, so equal inputs give byte-identical reports.
pub fn cmd_simulate(opts: &SimulateOptions) -> Result<Report> {
    let steps = scenario::load(&opts.scenario)?;
    let catalog = crate::load_catalog(opts.catalog.as_deref())?;
    let universe = catalog.items().map(|i| i.index()).max().unwrap_or(0);

    let dir = tempfile::tempdir()?;
    let paths = prepare(opts, dir.path(), universe)?;
    let mut config = EngineConfig::new(paths, catalog);
    config.rules = crate::load_rules(opts.rules.as_deref())?;
    config.mine_every = opts.mine_every;
    let clock = ManualClock::new(0);
    let mut engine = Engine::open(config, Arc::new(clock.clone()))?;

    let mut latency = Latency(ChaCha8Rng::seed_from_u64(opts.seed));
    let mut phases = vec![Tally::default()];
    let (mut before, mut after) = (Tally::default(), Tally::default());
    let mut served = 0;
    let mut total_latency_us = 0u64;
    let mut total_cost = 0u64;
    let mut per_request = Vec::new();

    for step in &steps {
        match step {
            Step::Checkpoint { .. } => {
                engine.checkpoint()?;
                phases.push(Tally::default());
            }
            Step::Request { line, items } => {
                let composites_live = !engine.view().composites.is_empty();
                let outcome = engine
                    .request(items.clone(), true)
                    .with_context(|| format!("scenario line {line}"))?;
                clock.advance(1);
                let us = latency.sample(&outcome);
                phases.last_mut().expect("at least one phase").add(&outcome);
                if composites_live {
                    &mut after
                } else {
                    &mut before
                }
                .add(&outcome);
                if outcome.is_served() {
                    served += 1;
                    total_latency_us += us;
                    total_cost += outcome.total_cost.0;
                }
                per_request.push(format!(
                    "items={} plan={} sub_dispatch_count={} status={} cost={} latency_us={} phase={} composites={}",
                    outcome.requested_items.to_csv(),
                    outcome.plan_kind.map_or("none", |k| k.as_str()),
                    outcome.sub_dispatch_count,
                    if outcome.is_served() { "served" } else { "failed" },
                    outcome.total_cost,
                    us,
                    phases.len(),
                    if composites_live { "after" } else { "before" },
                ));
            }
        }
    }

    let requests = per_request.len();
    let installed: Vec<String> = engine
        .cycles()
        .iter()
        .flat_map(|c| c.installed.iter().map(|s| s.to_string()))
        .collect();

    let mut report = Report::new();
    report.push("seed", opts.seed);
    report.push("requests", requests);
    report.push("requests_served", served);
    report.push("requests_failed", requests - served);
    report.push("checkpoints", phases.len() - 1);
    report.push("mining_cycles", engine.cycles().len());
    report.push("composites_installed", installed.len());
    report.push("composite_services", installed.join(" "));
    report.push(
        "sub_dispatch_total",
        phases.iter().map(|p| p.sub_dispatch).sum::<usize>(),
    );
    report.push("before_composites.requests", before.requests);
    report.push("before_composites.sub_dispatch_total", before.sub_dispatch);
    report.push("after_composites.requests", after.requests);
    report.push("after_composites.sub_dispatch_total", after.sub_dispatch);
    report.push("phases", phases.len());
    for (i, p) in phases.iter().enumerate() {
        report.push(format!("phase.{}.requests", i + 1), p.requests);
        report.push(
            format!("phase.{}.sub_dispatch_total", i + 1),
            p.sub_dispatch,
        );
    }
    let mean_ms = if served == 0 {
        0.0
    } else {
        total_latency_us as f64 / served as f64 / 1000.0
    };
    report.push("mean_dispatch_latency_ms", format!("{mean_ms:.3}"));
    report.push("total_cost", total_cost);
    for (i, line) in per_request.into_iter().enumerate() {
        report.push(format!("request.{}", i + 1), line);
    }
    engine.shutdown()?;
    Ok(report)
}
