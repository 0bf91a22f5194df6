//! Service identifiers, money and clocks shared by every layer.

use std::fmt;
use std::iter::Sum;
use std::ops::Add;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::itemset::{ItemId, Itemset};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid service id {0:?}: must be non-empty printable ASCII without whitespace")]
pub struct InvalidServiceId(pub String);

/// Name of a registered service. Printable ASCII without whitespace so it
/// can travel inside tab-separated files and the line protocol unchanged.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ServiceId(String);

impl ServiceId {
    pub fn new(id: impl Into<String>) -> Result<Self, InvalidServiceId> {
        let id = id.into();
        if !id.is_empty() && id.bytes().all(|b| b.is_ascii_graphic()) {
            Ok(ServiceId(id))
        } else {
            Err(InvalidServiceId(id))
        }
    }

    /// The single-item service for `item`, e.g. `item-3`.
    pub fn for_item(item: ItemId) -> Self {
        ServiceId(format!("item-{item}"))
    }

    /// The built-in bundle quoting service.
    pub fn bundle() -> Self {
        ServiceId("bundle".to_string())
    }

    /// Stable id of the composite over `itemset`, e.g. `c-2-3-6`.
    pub fn composite(itemset: &Itemset) -> Self {
        let parts: Vec<String> = itemset.iter().map(|i| i.to_string()).collect();
        ServiceId(format!("c-{}", parts.join("-")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for ServiceId {
    type Err = InvalidServiceId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ServiceId::new(s)
    }
}

/// Amount in integer minor currency units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(pub u64);

impl Add for Money {
    type Output = Money;

    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money(0), Add::add)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Source of wall-clock seconds (UTC, since the Unix epoch).
pub trait Clock: Send + Sync {
    fn now_secs(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_secs(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// Settable clock for deterministic runs.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new(start: u64) -> Self {
        ManualClock(Arc::new(AtomicU64::new(start)))
    }

    pub fn set(&self, secs: u64) {
        self.0.store(secs, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_secs(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}
