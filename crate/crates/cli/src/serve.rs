//! Long-running engine: optional scripted scenario, then an AC1 endpoint
//! until asked to stop.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use autocompose::engine::{EngineConfig, EngineDirectory, DEFAULT_MINE_EVERY};
use autocompose::transport::{serve_peer, Endpoint, PeerServer};
use autocompose::{Engine, RepositoryPaths, SystemClock};
use log::info;

use crate::scenario::{self, Step};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub transactions: PathBuf,
    pub config: PathBuf,
    pub catalog: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    /// Trigger log and rule store; default next to the transaction file.
    pub state_dir: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub peer: Option<String>,
    pub scenario: Option<PathBuf>,
    pub mine_every: usize,
}

impl ServeOptions {
    pub fn new(transactions: impl Into<PathBuf>, config: impl Into<PathBuf>) -> Self {
        ServeOptions {
            transactions: transactions.into(),
            config: config.into(),
            catalog: None,
            rules: None,
            state_dir: None,
            endpoint: None,
            peer: None,
            scenario: None,
            mine_every: DEFAULT_MINE_EVERY,
        }
    }
}

pub struct Server {
    engine: Arc<Mutex<Engine>>,
    peer: Option<PeerServer>,
}

impl Server {
    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.peer.as_ref().and_then(PeerServer::local_addr)
    }

    pub fn engine(&self) -> &Arc<Mutex<Engine>> {
        &self.engine
    }

    /// Blocks until `stop` is raised, then shuts down.
    pub fn wait(self, stop: &AtomicBool) -> Result<()> {
        while !stop.load(Ordering::SeqCst) {
            std::thread::sleep(Duration::from_millis(50));
        }
        self.stop()
    }

    pub fn stop(mut self) -> Result<()> {
        if let Some(peer) = self.peer.take() {
            peer.shutdown();
        }
        let mut engine = self
            .engine
            .lock()
            .map_err(|_| anyhow!("engine lock poisoned"))?;
        engine.shutdown()?;
        info!("engine stopped");
        Ok(())
    }
}

/// Opens the engine, runs the scenario (writing one line per step to
/// `out`) and starts the endpoint if one was requested.
pub fn start(opts: &ServeOptions, out: &mut dyn Write) -> Result<Server> {
    let state_dir = match &opts.state_dir {
        Some(d) => d.clone(),
        None => opts
            .transactions
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_default(),
    };
    let mut paths = RepositoryPaths::in_dir(&state_dir);
    paths.transactions = opts.transactions.clone();
    paths.config = opts.config.clone();

    let mut config = EngineConfig::new(paths, crate::load_catalog(opts.catalog.as_deref())?);
    config.rules = crate::load_rules(opts.rules.as_deref())?;
    config.mine_every = opts.mine_every;
    config.peer = opts.peer.as_deref().map(Endpoint::tcp).transpose()?;
    let mut engine = Engine::open(config, Arc::new(SystemClock)).context("opening engine")?;

    if let Some(path) = &opts.scenario {
        for step in scenario::load(path)? {
            match step {
                Step::Checkpoint { .. } => {
                    let cycle = engine.checkpoint()?;
                    let ids: Vec<String> = cycle.installed.iter().map(|s| s.to_string()).collect();
                    writeln!(out, "checkpoint\t{}", ids.join(" "))?;
                }
                Step::Request { line, items } => {
                    let o = engine
                        .request(items, true)
                        .with_context(|| format!("scenario line {line}"))?;
                    writeln!(
                        out,
                        "{}\titems={} plan={} sub_dispatch_count={} cost={} status={:?}",
                        o.event_id,
                        o.requested_items.to_csv(),
                        o.plan_kind.map_or("none", |k| k.as_str()),
                        o.sub_dispatch_count,
                        o.total_cost,
                        o.status
                    )?;
                }
            }
        }
    }

    engine.spawn_loop();
    let engine = Arc::new(Mutex::new(engine));
    let peer = match &opts.endpoint {
        Some(bind) => {
            let server = serve_peer(bind, Arc::new(EngineDirectory(engine.clone())))
                .with_context(|| format!("starting endpoint {bind}"))?;
            if let Some(addr) = server.local_addr() {
                writeln!(out, "listening\t{addr}")?;
            }
            Some(server)
        }
        None => None,
    };
    out.flush()?;
    Ok(Server { engine, peer })
}
