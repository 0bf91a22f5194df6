//! Self-adaptive service composition.
//!
//! Client requests are dispatched by a single-threaded reactor through a
//! set of fixed rules. Purchases are logged, the log is mined for frequent
//! itemsets and association rules, and every frequently co-purchased set
//! becomes a composite service registered into the running reactor.
//!
//! The [`engine::Engine`] ties the pieces together; the modules can also be
//! used on their own.

pub mod composer;
pub mod decision;
pub mod dispatcher;
pub mod engine;
pub mod itemset;
pub mod mining;
pub mod repository;
pub mod service;
pub mod transport;

pub use composer::{Composer, CompositeService, PriceCatalog};
pub use decision::{FixedRule, Plan, PlanKind, ServiceEvent};
pub use dispatcher::{Reactor, ReactorHandle, ServiceOutcome};
pub use engine::{Engine, EngineConfig};
pub use itemset::{ItemId, Itemset};
pub use mining::{AssociationRule, FrequentItemsetTable, MiningConfig, TransactionSet};
pub use repository::{Repository, RepositoryPaths};
pub use service::{Clock, ManualClock, Money, ServiceId, SystemClock};
