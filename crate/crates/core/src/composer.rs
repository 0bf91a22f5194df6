//! Turns mined rules into composite services, installs them on a running
//! reactor and quotes request costs from the price catalog.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use log::info;
use thiserror::Error;

use crate::dispatcher::{
    ApplyTicket, DispatchError, EventHandler, HandlerError, HandlerRegistration, HookContext,
    Interceptor, ReactorHandle, RegistryChange, ServiceKind,
};
use crate::itemset::{ItemId, Itemset};
use crate::mining::{AssociationRule, FrequentItemsetTable};
use crate::repository::{Repository, RepositoryError, RuleStoreEntry};
use crate::service::{Money, ServiceId};

#[derive(Debug, Error)]
pub enum ComposerError {
    #[error("item {0} has no price in the catalog")]
    Unpriced(ItemId),
    #[error("catalog line {line}: {msg}")]
    CatalogParse { line: usize, msg: String },
    #[error("catalog does not price item {missing} of a {universe}-item universe")]
    CatalogIncomplete { missing: u32, universe: u32 },
    #[error("cannot read catalog {path}: {source}")]
    CatalogIo {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Repository(#[from] RepositoryError),
}

/// Unit prices (minor currency units) and display names per item.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PriceCatalog {
    prices: BTreeMap<ItemId, Money>,
    names: BTreeMap<ItemId, String>,
}

impl PriceCatalog {
    pub fn new() -> Self {
        PriceCatalog::default()
    }

    pub fn with_item(mut self, index: u32, name: &str, price: u64) -> Self {
        let id = ItemId::new(index).expect("1-based item index");
        self.prices.insert(id, Money(price));
        self.names.insert(id, name.to_string());
        self
    }

    /// One `index name price` line per item; the name may contain spaces.
    pub fn parse(text: &str) -> Result<Self, ComposerError> {
        let mut catalog = PriceCatalog::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| ComposerError::CatalogParse { line: i + 1, msg };
            let (index, rest) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| err("expected `index name price`".into()))?;
            let (name, price) = rest
                .trim()
                .rsplit_once(char::is_whitespace)
                .ok_or_else(|| err("expected `index name price`".into()))?;
            let index: u32 = index
                .parse()
                .map_err(|_| err(format!("bad index {index:?}")))?;
            let id = ItemId::new(index).ok_or_else(|| err("index 0 is not valid".into()))?;
            let price: u64 = price
                .parse()
                .map_err(|_| err(format!("bad price {price:?}")))?;
            if catalog.prices.insert(id, Money(price)).is_some() {
                return Err(err(format!("item {index} listed twice")));
            }
            catalog.names.insert(id, name.trim().to_string());
        }
        Ok(catalog)
    }

    pub fn load(path: &Path) -> Result<Self, ComposerError> {
        let text = std::fs::read_to_string(path).map_err(|source| ComposerError::CatalogIo {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Every item of a `universe`-item catalog must be priced.
    pub fn check_universe(&self, universe: u32) -> Result<(), ComposerError> {
        match (1..=universe).find(|&i| !self.prices.contains_key(&ItemId::new(i).unwrap())) {
            Some(missing) => Err(ComposerError::CatalogIncomplete { missing, universe }),
            None => Ok(()),
        }
    }

    pub fn price(&self, item: ItemId) -> Option<Money> {
        self.prices.get(&item).copied()
    }

    pub fn name(&self, item: ItemId) -> Option<&str> {
        self.names.get(&item).map(String::as_str)
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.prices.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

/// Sum of unit prices of the requested items.
pub fn quote_cost(items: &Itemset, catalog: &PriceCatalog) -> Result<Money, ComposerError> {
    items
        .iter()
        .map(|i| catalog.price(i).ok_or(ComposerError::Unpriced(i)))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeService {
    pub service_id: ServiceId,
    pub itemset: Itemset,
    pub source_rules: Vec<AssociationRule>,
}

impl CompositeService {
    /// Highest-confidence source rule, earliest on ties.
    pub fn primary_rule(&self) -> &AssociationRule {
        self.source_rules
            .iter()
            .reduce(|best, r| {
                if r.confidence > best.confidence {
                    r
                } else {
                    best
                }
            })
            .expect("composites carry at least one source rule")
    }
}

/// One composite per maximal frequent itemset (size two or more) backed by
/// at least one qualifying rule and not already covered by a registered
/// composite.
pub fn synthesize_composites(
    rules: &[AssociationRule],
    table: &FrequentItemsetTable,
    registered: &BTreeSet<Itemset>,
) -> Vec<CompositeService> {
    table
        .maximal()
        .into_iter()
        .filter(|f| f.itemset.len() >= 2)
        .filter(|f| !registered.iter().any(|r| f.itemset.is_subset_of(r)))
        .filter_map(|f| {
            let source_rules: Vec<AssociationRule> = rules
                .iter()
                .filter(|r| r.itemset() == f.itemset)
                .cloned()
                .collect();
            (!source_rules.is_empty()).then(|| CompositeService {
                service_id: ServiceId::composite(&f.itemset),
                itemset: f.itemset.clone(),
                source_rules,
            })
        })
        .collect()
}

struct QuoteHandler {
    catalog: Arc<PriceCatalog>,
    covers: Option<Itemset>,
}

impl EventHandler for QuoteHandler {
    fn handle_event(&mut self, ctx: &HookContext<'_>) -> Result<Money, HandlerError> {
        if let Some(covers) = &self.covers {
            if !ctx.items.is_subset_of(covers) {
                return Err(HandlerError(format!(
                    "{} does not cover {}",
                    ctx.service_id, ctx.items
                )));
            }
        }
        quote_cost(ctx.items, &self.catalog).map_err(|e| HandlerError(e.to_string()))
    }
}

/// Logs before/after each hook call of the service it wraps.
#[derive(Debug, Default, Clone, Copy)]
pub struct LoggingAdvice;

impl Interceptor for LoggingAdvice {
    fn before(&mut self, ctx: &HookContext<'_>) {
        info!(
            "before {} for {} {}",
            ctx.service_id, ctx.event.event_id, ctx.items
        );
    }

    fn after(&mut self, ctx: &HookContext<'_>, result: &Result<Money, HandlerError>) {
        match result {
            Ok(cost) => info!(
                "after {} for {}: cost {cost}",
                ctx.service_id, ctx.event.event_id
            ),
            Err(e) => info!(
                "after {} for {}: failed: {e}",
                ctx.service_id, ctx.event.event_id
            ),
        }
    }
}

pub fn item_registration(item: ItemId, catalog: Arc<PriceCatalog>) -> HandlerRegistration {
    let handled = Itemset::single(item);
    HandlerRegistration::new(
        ServiceId::for_item(item),
        ServiceKind::Item,
        handled.clone(),
        QuoteHandler {
            catalog,
            covers: Some(handled),
        },
    )
}

pub fn bundle_registration(catalog: Arc<PriceCatalog>) -> HandlerRegistration {
    let everything = Itemset::from_sorted(catalog.items().collect());
    HandlerRegistration::new(
        ServiceId::bundle(),
        ServiceKind::Bundle,
        everything,
        QuoteHandler {
            catalog,
            covers: None,
        },
    )
}

/// A handler that charges only the requested items, even when the
/// composite covers more.
pub fn composite_registration(
    composite: &CompositeService,
    catalog: Arc<PriceCatalog>,
) -> HandlerRegistration {
    HandlerRegistration::new(
        composite.service_id.clone(),
        ServiceKind::Composite,
        composite.itemset.clone(),
        QuoteHandler {
            catalog,
            covers: Some(composite.itemset.clone()),
        },
    )
    .with_interceptor(LoggingAdvice)
}

/// Per-item services for every catalog item plus the bundle quote service.
pub fn standard_registrations(catalog: &Arc<PriceCatalog>) -> Vec<HandlerRegistration> {
    let mut regs: Vec<_> = catalog
        .items()
        .map(|i| item_registration(i, catalog.clone()))
        .collect();
    regs.push(bundle_registration(catalog.clone()));
    regs
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstallReport {
    pub installed: Vec<ServiceId>,
    /// Already present; not an error.
    pub skipped: Vec<ServiceId>,
}

impl InstallReport {
    pub fn count(&self) -> usize {
        self.installed.len()
    }
}

/// Installs composites on a reactor it reaches only through a handle.
pub struct Composer {
    catalog: Arc<PriceCatalog>,
    handle: ReactorHandle,
    installed: BTreeSet<Itemset>,
    pending: Option<ApplyTicket>,
}

impl Composer {
    pub fn new(catalog: Arc<PriceCatalog>, handle: ReactorHandle) -> Self {
        Composer {
            catalog,
            handle,
            installed: BTreeSet::new(),
            pending: None,
        }
    }

    /// Records a composite registered outside [`Composer::install`].
    pub fn mark_installed(&mut self, itemset: Itemset) {
        self.installed.insert(itemset);
    }

    /// Receipt for the last batch sent by [`Composer::install`].
    pub fn take_pending(&mut self) -> Option<ApplyTicket> {
        self.pending.take()
    }

    pub fn catalog(&self) -> &Arc<PriceCatalog> {
        &self.catalog
    }

    /// Registered composites plus those sent but not yet applied.
    pub fn registry_view(&self) -> BTreeSet<Itemset> {
        let mut view = self.handle.view().composites.clone();
        view.extend(self.installed.iter().cloned());
        view
    }

    pub fn synthesize(
        &self,
        rules: &[AssociationRule],
        table: &FrequentItemsetTable,
    ) -> Vec<CompositeService> {
        synthesize_composites(rules, table, &self.registry_view())
    }

    /// Sends one registration batch for the new composites and records the
    /// rule behind each one in the rule store.
    pub fn install(
        &mut self,
        composites: &[CompositeService],
        repo: &Repository,
        now: u64,
    ) -> Result<InstallReport, ComposerError> {
        let mut report = InstallReport::default();
        let view = self.registry_view();
        let mut batch = Vec::new();
        let mut entries = Vec::new();
        for composite in composites {
            if view.contains(&composite.itemset) || batch_contains(&batch, &composite.service_id) {
                report.skipped.push(composite.service_id.clone());
                continue;
            }
            batch.push(RegistryChange::Register(composite_registration(
                composite,
                self.catalog.clone(),
            )));
            entries.push(RuleStoreEntry {
                rule: composite.primary_rule().clone(),
                discovered_at: now,
                composite_service: Some(composite.service_id.clone()),
            });
            report.installed.push(composite.service_id.clone());
        }
        if batch.is_empty() {
            return Ok(report);
        }
        self.pending = Some(self.handle.apply(batch)?);
        for composite in composites {
            if report.installed.contains(&composite.service_id) {
                self.installed.insert(composite.itemset.clone());
            }
        }
        repo.append_rules(&entries)?;
        info!("installed {} composite service(s)", report.count());
        Ok(report)
    }
}

fn batch_contains(batch: &[RegistryChange], id: &ServiceId) -> bool {
    batch.iter().any(|c| match c {
        RegistryChange::Register(r) => &r.service_id == id,
        RegistryChange::Remove(_) => false,
    })
}
