//! The autonomic loop: serve requests, log purchases, mine the log,
//! compose new services and register them while the reactor keeps running.

use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use log::info;
use thiserror::Error;

use crate::composer::{
    composite_registration, standard_registrations, Composer, ComposerError, CompositeService,
    PriceCatalog,
};
use crate::decision::{default_rules, DecisionError, FixedRule, RegistryView, Trigger};
use crate::dispatcher::{DispatchError, Reactor, ReactorHandle, ServiceOutcome};
use crate::itemset::Itemset;
use crate::mining::{frequent_itemsets, generate_rules, MiningError};
use crate::repository::{Repository, RepositoryError, RepositoryPaths};
use crate::service::{Clock, ServiceId};
use crate::transport::{
    CatalogDirectory, Endpoint, PeerClient, RemoteRequest, RemoteResponse, ServiceDirectory,
};

/// Mining cadence used when none is configured.
pub const DEFAULT_MINE_EVERY: usize = 25;

/// Service id that routes an AC1 request through the full pipeline.
pub const AUTO_SERVICE: &str = "auto";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Repository(#[from] RepositoryError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error(transparent)]
    Composer(#[from] ComposerError),
    #[error("dispatch loop stopped before answering")]
    LoopGone,
}

pub struct EngineConfig {
    pub paths: RepositoryPaths,
    pub catalog: PriceCatalog,
    pub rules: Vec<FixedRule>,
    /// Mine after this many completed purchases; 0 disables the cadence.
    pub mine_every: usize,
    pub peer: Option<Endpoint>,
    pub peer_timeout: Duration,
}

impl EngineConfig {
    pub fn new(paths: RepositoryPaths, catalog: PriceCatalog) -> Self {
        EngineConfig {
            paths,
            catalog,
            rules: default_rules(),
            mine_every: DEFAULT_MINE_EVERY,
            peer: None,
            peer_timeout: Duration::from_secs(2),
        }
    }
}

/// Summary of one mine → compose → install pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleReport {
    pub transactions: usize,
    pub frequent_itemsets: usize,
    pub rules: usize,
    pub installed: Vec<ServiceId>,
    pub skipped: Vec<ServiceId>,
}

enum Loop {
    Inline(Box<Reactor>),
    Threaded(Option<JoinHandle<Reactor>>),
}

pub struct Engine {
    repo: Repository,
    trigger: Trigger,
    dispatch: Loop,
    handle: ReactorHandle,
    composer: Composer,
    clock: Arc<dyn Clock>,
    mine_every: usize,
    since_mining: usize,
    cycles: Vec<CycleReport>,
}

impl Engine {
    /// Opens the repository, registers per-item and bundle services and
    /// restores composites recorded in the rule store.
    pub fn open(config: EngineConfig, clock: Arc<dyn Clock>) -> Result<Self, EngineError> {
        let repo = Repository::open(config.paths)?;
        config.catalog.check_universe(repo.universe_size())?;
        let catalog = Arc::new(config.catalog);

        let mut reactor = Reactor::new(config.rules);
        if let Some(peer) = config.peer {
            reactor = reactor.with_remote(PeerClient::new(peer, config.peer_timeout));
        }
        for reg in standard_registrations(&catalog) {
            reactor.register_handler(reg)?;
        }
        let handle = reactor.handle();
        let mut composer = Composer::new(catalog.clone(), handle.clone());

        let mut restored = 0;
        for entry in repo.load_rules()? {
            let Some(service_id) = entry.composite_service.clone() else {
                continue;
            };
            let composite = CompositeService {
                service_id,
                itemset: entry.rule.itemset(),
                source_rules: vec![entry.rule],
            };
            if reactor.contains(&composite.service_id) {
                continue;
            }
            reactor.register_handler(composite_registration(&composite, catalog.clone()))?;
            composer.mark_installed(composite.itemset);
            restored += 1;
        }
        if restored > 0 {
            info!("restored {restored} composite service(s) from the rule store");
        }

        Ok(Engine {
            trigger: Trigger::new(&repo, clock.clone()),
            repo,
            dispatch: Loop::Inline(Box::new(reactor)),
            handle,
            composer,
            clock,
            mine_every: config.mine_every,
            since_mining: 0,
            cycles: Vec::new(),
        })
    }

    /// Moves the dispatch loop onto its own thread.
    pub fn spawn_loop(&mut self) {
        if let Loop::Inline(reactor) = std::mem::replace(&mut self.dispatch, Loop::Threaded(None)) {
            self.dispatch = Loop::Threaded(Some(reactor.spawn()));
        }
    }

    pub fn handle(&self) -> &ReactorHandle {
        &self.handle
    }

    pub fn repository(&self) -> &Repository {
        &self.repo
    }

    pub fn catalog(&self) -> &Arc<PriceCatalog> {
        self.composer.catalog()
    }

    pub fn cycles(&self) -> &[CycleReport] {
        &self.cycles
    }

    /// Registry as the next event will see it.
    pub fn view(&mut self) -> Arc<RegistryView> {
        if let Loop::Inline(reactor) = &mut self.dispatch {
            reactor.apply_pending();
        }
        self.handle.view()
    }

    /// Serves one request. Successful purchases are appended to the
    /// transaction log and may trigger a mining cycle; quotes are only
    /// audited.
    pub fn request(
        &mut self,
        items: Itemset,
        purchase: bool,
    ) -> Result<ServiceOutcome, EngineError> {
        let cause = if purchase { "purchase" } else { "quote" };
        let event = self.trigger.fire(items, cause, &mut self.repo)?;
        let outcome = match &mut self.dispatch {
            Loop::Inline(reactor) => {
                self.handle.submit(event)?;
                reactor.try_dispatch_next()?.ok_or(EngineError::LoopGone)?
            }
            Loop::Threaded(_) => self
                .handle
                .submit_with_reply(event)?
                .recv()
                .map_err(|_| EngineError::LoopGone)?,
        };
        if purchase && outcome.is_served() {
            self.repo.append_transaction(&outcome.requested_items)?;
            self.since_mining += 1;
            if self.mine_every > 0 && self.since_mining >= self.mine_every {
                self.checkpoint()?;
            }
        }
        Ok(outcome)
    }

    /// Mines the current log and installs any new composites.
    pub fn checkpoint(&mut self) -> Result<CycleReport, EngineError> {
        self.since_mining = 0;
        let config = self.repo.config().clone();
        let table = frequent_itemsets(self.repo.transactions(), &config)?;
        let rules = generate_rules(&table, &config);
        let composites = self.composer.synthesize(&rules, &table);
        let install = self
            .composer
            .install(&composites, &self.repo, self.clock.now_secs())?;
        match (&mut self.dispatch, self.composer.take_pending()) {
            (Loop::Inline(reactor), _) => reactor.apply_pending(),
            (Loop::Threaded(_), Some(ticket)) => {
                ticket.wait()?;
            }
            (Loop::Threaded(_), None) => {}
        }
        let report = CycleReport {
            transactions: table.transaction_count(),
            frequent_itemsets: table.len(),
            rules: rules.len(),
            installed: install.installed,
            skipped: install.skipped,
        };
        info!(
            "mining cycle over {} transactions: {} frequent itemsets, {} rules, {} new composites",
            report.transactions,
            report.frequent_itemsets,
            report.rules,
            report.installed.len()
        );
        self.cycles.push(report.clone());
        Ok(report)
    }

    /// Stops the loop after queued events drain.
    pub fn shutdown(&mut self) -> Result<(), EngineError> {
        self.handle.shutdown();
        if let Loop::Threaded(Some(thread)) =
            std::mem::replace(&mut self.dispatch, Loop::Threaded(None))
        {
            thread.join().map_err(|_| EngineError::LoopGone)?;
        }
        Ok(())
    }
}

/// AC1 front end for a shared engine: `auto` runs a purchase through the
/// pipeline, any other id is quoted directly by that service.
pub struct EngineDirectory(pub Arc<Mutex<Engine>>);

impl ServiceDirectory for EngineDirectory {
    fn serve(&self, request: &RemoteRequest) -> RemoteResponse {
        let mut engine = match self.0.lock() {
            Ok(e) => e,
            Err(_) => return RemoteResponse::error("engine unavailable"),
        };
        if request.service_id().as_str() == AUTO_SERVICE {
            return match engine.request(request.items().clone(), true) {
                Ok(outcome) if outcome.is_served() => RemoteResponse::ok(outcome.total_cost),
                Ok(outcome) => RemoteResponse::error(format!("{:?}", outcome.status)),
                Err(e) => RemoteResponse::error(e.to_string()),
            };
        }
        let view = engine.view();
        CatalogDirectory::from_view(&view, engine.catalog().clone()).serve(request)
    }
}
