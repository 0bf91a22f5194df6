//! Request triggering, fixed-rule matching and plan selection.
//!
//! A request becomes a [`ServiceEvent`] (audited in the trigger log), is
//! matched against the [`FixedRule`] store, and the winning rule is turned
//! into a [`Plan`] naming the services that will serve it.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::itemset::Itemset;
use crate::repository::{Repository, RepositoryError, TriggerRecord};
use crate::service::{Clock, ServiceId};

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error("request is empty")]
    EmptyRequest,
    #[error("unknown item: {0}")]
    UnknownItem(String),
    #[error("no fixed rule matches event {0}")]
    NoRule(String),
    #[error("composite rule selected for {0} but no registered composite covers it")]
    NoCoveringComposite(Itemset),
    #[error("rules file line {line}: {msg}")]
    RulesFile { line: usize, msg: String },
    #[error(transparent)]
    Repository(#[from] RepositoryError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceEvent {
    pub event_id: String,
    pub requested_items: Itemset,
    /// UTC seconds.
    pub received_at: u64,
}

/// Turns client requests into events and audits each one.
pub struct Trigger {
    universe_size: u32,
    next_seq: u64,
    clock: Arc<dyn Clock>,
}

impl Trigger {
    /// Continues numbering after the highest `e<n>` id already in the log.
    pub fn new(repo: &Repository, clock: Arc<dyn Clock>) -> Self {
        let last = repo
            .triggers()
            .iter()
            .filter_map(|r| r.event_id.strip_prefix('e')?.parse::<u64>().ok())
            .max()
            .unwrap_or(0);
        Trigger {
            universe_size: repo.universe_size(),
            next_seq: last + 1,
            clock,
        }
    }

    pub fn fire(
        &mut self,
        requested_items: Itemset,
        cause: &str,
        repo: &mut Repository,
    ) -> Result<ServiceEvent, DecisionError> {
        if requested_items.is_empty() {
            return Err(DecisionError::EmptyRequest);
        }
        requested_items
            .check_universe(self.universe_size)
            .map_err(|e| DecisionError::UnknownItem(e.to_string()))?;
        let floor = repo.triggers().last().map_or(0, |r| r.timestamp);
        let event = ServiceEvent {
            event_id: format!("e{}", self.next_seq),
            requested_items,
            received_at: self.clock.now_secs().max(floor),
        };
        repo.record_trigger(TriggerRecord {
            event_id: event.event_id.clone(),
            requested_items: event.requested_items.clone(),
            timestamp: event.received_at,
            cause: cause.to_string(),
        })?;
        self.next_seq += 1;
        Ok(event)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PlanKind {
    PerItem,
    Bundle,
    Composite,
}

impl PlanKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanKind::PerItem => "per-item",
            PlanKind::Bundle => "bundle",
            PlanKind::Composite => "composite",
        }
    }
}

impl fmt::Display for PlanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PlanKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-item" | "peritem" => Ok(PlanKind::PerItem),
            "bundle" => Ok(PlanKind::Bundle),
            "composite" => Ok(PlanKind::Composite),
            other => Err(format!("unknown plan kind {other:?}")),
        }
    }
}

/// Condition → plan-kind mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedRule {
    pub rule_id: String,
    pub min_items: usize,
    pub max_items: usize,
    pub required: Option<Itemset>,
    pub plan_kind: PlanKind,
    pub priority: i64,
}

impl FixedRule {
    pub fn new(
        rule_id: impl Into<String>,
        min_items: usize,
        max_items: usize,
        plan_kind: PlanKind,
        priority: i64,
    ) -> Self {
        FixedRule {
            rule_id: rule_id.into(),
            min_items,
            max_items,
            required: None,
            plan_kind,
            priority,
        }
    }

    pub fn requiring(mut self, required: Itemset) -> Self {
        self.required = Some(required);
        self
    }
}

/// The compiled-in rule set: composites win whenever one covers the
/// request, exactly two or four items get a bundle quote, anything else
/// is served item by item.
pub fn default_rules() -> Vec<FixedRule> {
    vec![
        FixedRule::new("composite", 2, usize::MAX, PlanKind::Composite, 30),
        FixedRule::new("plan1", 4, 4, PlanKind::Bundle, 20),
        FixedRule::new("plan2", 2, 2, PlanKind::Bundle, 20),
        FixedRule::new("per-item", 1, usize::MAX, PlanKind::PerItem, 0),
    ]
}

/// Parses a rules file: `id min max kind priority [required-items]` per
/// line, `*` for an unbounded max, `#` comments.
pub fn parse_rules(text: &str) -> Result<Vec<FixedRule>, DecisionError> {
    let mut rules = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| DecisionError::RulesFile { line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(5..=6).contains(&fields.len()) {
            return Err(err(format!(
                "expected 5 or 6 fields, found {}",
                fields.len()
            )));
        }
        let min_items: usize = fields[1]
            .parse()
            .map_err(|_| err(format!("bad min {:?}", fields[1])))?;
        let max_items: usize = match fields[2] {
            "*" => usize::MAX,
            s => s.parse().map_err(|_| err(format!("bad max {s:?}")))?,
        };
        if min_items > max_items {
            return Err(err(format!("min {min_items} exceeds max {max_items}")));
        }
        let plan_kind: PlanKind = fields[3].parse().map_err(err)?;
        let priority: i64 = fields[4]
            .parse()
            .map_err(|_| err(format!("bad priority {:?}", fields[4])))?;
        let required = fields
            .get(5)
            .map(|s| Itemset::parse_csv(s).map_err(|e| err(e.to_string())))
            .transpose()?;
        rules.push(FixedRule {
            rule_id: fields[0].to_string(),
            min_items,
            max_items,
            required,
            plan_kind,
            priority,
        });
    }
    Ok(rules)
}

pub fn load_rules_file(path: &Path) -> Result<Vec<FixedRule>, DecisionError> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        DecisionError::Repository(RepositoryError::Io {
            path: path.to_path_buf(),
            source,
        })
    })?;
    parse_rules(&text)
}

/// What the decision logic may know about the live registry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegistryView {
    pub composites: BTreeSet<Itemset>,
    pub local_services: BTreeSet<ServiceId>,
}

impl RegistryView {
    /// The smallest registered composite covering `items`, ties broken by
    /// lexicographic itemset order.
    pub fn covering_composite(&self, items: &Itemset) -> Option<&Itemset> {
        self.composites
            .iter()
            .filter(|c| items.is_subset_of(c))
            .min_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)))
    }
}

fn score(rule: &FixedRule, items: &Itemset, view: &RegistryView) -> Option<usize> {
    let n = items.len();
    if n < rule.min_items || n > rule.max_items {
        return None;
    }
    let overlap = match &rule.required {
        Some(req) if !req.is_subset_of(items) => return None,
        Some(req) => req.len(),
        None => 0,
    };
    let composite_bonus = if rule.plan_kind == PlanKind::Composite {
        // a composite rule is only satisfiable when something covers the request
        view.covering_composite(items)?;
        1000
    } else {
        0
    };
    Some(composite_bonus + overlap)
}

/// The satisfied rule with the highest specificity score; ties go to the
/// higher priority, then the smaller rule id.
pub fn match_rule<'r>(
    event: &ServiceEvent,
    rules: &'r [FixedRule],
    view: &RegistryView,
) -> Result<&'r FixedRule, DecisionError> {
    rules
        .iter()
        .filter_map(|r| score(r, &event.requested_items, view).map(|s| (s, r)))
        .max_by(|(sa, a), (sb, b)| {
            sa.cmp(sb)
                .then(a.priority.cmp(&b.priority))
                .then_with(|| b.rule_id.cmp(&a.rule_id))
        })
        .map(|(_, r)| r)
        .ok_or_else(|| DecisionError::NoRule(event.event_id.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Locality {
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub plan_id: String,
    pub kind: PlanKind,
    pub target_services: Vec<ServiceId>,
    /// Items covered by the composite target (composite plans only).
    pub composite_itemset: Option<Itemset>,
    pub locality: Locality,
}

pub fn select_plan(
    rule: &FixedRule,
    event: &ServiceEvent,
    view: &RegistryView,
) -> Result<Plan, DecisionError> {
    let items = &event.requested_items;
    let (target_services, composite_itemset) = match rule.plan_kind {
        PlanKind::Composite => {
            let cover = view
                .covering_composite(items)
                .ok_or_else(|| DecisionError::NoCoveringComposite(items.clone()))?;
            (vec![ServiceId::composite(cover)], Some(cover.clone()))
        }
        PlanKind::Bundle => (vec![ServiceId::bundle()], None),
        PlanKind::PerItem => (items.iter().map(ServiceId::for_item).collect(), None),
    };
    let locality = if target_services
        .iter()
        .all(|s| view.local_services.contains(s))
    {
        Locality::Local
    } else {
        Locality::Remote
    };
    Ok(Plan {
        plan_id: format!("{}:{}", rule.rule_id, event.event_id),
        kind: rule.plan_kind,
        target_services,
        composite_itemset,
        locality,
    })
}
