//! Randomized churn harness: a submitter thread interleaves events with
//! registry batches while the reactor runs on its own thread. Every
//! outcome is checked against a model of the registry, and every hook
//! invocation against the interceptor bracketing order.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use autocompose::decision::{default_rules, match_rule, select_plan, RegistryView, ServiceEvent};
use autocompose::dispatcher::{
    HandlerError, HandlerRegistration, HookContext, Interceptor, OutcomeStatus, RegistryChange,
    ServiceKind,
};
use autocompose::{ItemId, Itemset, Money, Reactor, ServiceId, ServiceOutcome};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const UNIVERSE: u32 = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Mark {
    Before(&'static str),
    Hook(bool),
    After(&'static str, bool),
}

#[derive(Debug, Clone)]
struct Record {
    event_id: String,
    service_id: ServiceId,
    mark: Mark,
}

type Log = Arc<Mutex<Vec<Record>>>;

struct Recorder {
    name: &'static str,
    log: Log,
}

impl Interceptor for Recorder {
    fn before(&mut self, ctx: &HookContext<'_>) {
        self.push(ctx, Mark::Before(self.name));
    }

    fn after(&mut self, ctx: &HookContext<'_>, result: &Result<Money, HandlerError>) {
        self.push(ctx, Mark::After(self.name, result.is_ok()));
    }
}

impl Recorder {
    fn push(&self, ctx: &HookContext<'_>, mark: Mark) {
        self.log.lock().unwrap().push(Record {
            event_id: ctx.event.event_id.clone(),
            service_id: ctx.service_id.clone(),
            mark,
        });
    }
}

fn registration(
    id: ServiceId,
    kind: ServiceKind,
    items: Itemset,
    salt: u64,
    log: &Log,
) -> HandlerRegistration {
    let hook_log = log.clone();
    let handler = move |ctx: &HookContext<'_>| {
        let seq: u64 = ctx.event.event_id[1..].parse().unwrap();
        // roughly one hook in eleven fails
        let ok = !(seq * 31 + salt + ctx.items.max_index() as u64).is_multiple_of(11);
        hook_log.lock().unwrap().push(Record {
            event_id: ctx.event.event_id.clone(),
            service_id: ctx.service_id.clone(),
            mark: Mark::Hook(ok),
        });
        if ok {
            Ok(Money(ctx.items.len() as u64))
        } else {
            Err(HandlerError(format!("{} refused", ctx.service_id)))
        }
    };
    HandlerRegistration::new(id, kind, items, handler)
        .with_interceptor(Recorder {
            name: "outer",
            log: log.clone(),
        })
        .with_interceptor(Recorder {
            name: "inner",
            log: log.clone(),
        })
}

fn composite_reg(set: &Itemset, log: &Log) -> HandlerRegistration {
    registration(
        ServiceId::composite(set),
        ServiceKind::Composite,
        set.clone(),
        7,
        log,
    )
}

fn random_set(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Itemset {
    let mut all: Vec<u32> = (1..=UNIVERSE).collect();
    all.shuffle(rng);
    let n = rng.gen_range(lo..=hi);
    Itemset::from_indices(all[..n].iter().copied()).unwrap()
}

enum Step {
    Event(ServiceEvent),
    Batch(Vec<(bool, Itemset)>),
}

#[derive(Debug, Default)]
pub struct ChurnReport {
    pub outcomes: usize,
    pub expected_outcomes: usize,
    pub registry_ops: usize,
    pub fifo_violations: usize,
    pub atomicity_violations: usize,
    pub hooks: usize,
    pub failed_hooks: usize,
    pub bracket_violations: usize,
}

impl ChurnReport {
    pub fn clean(&self) -> bool {
        self.outcomes == self.expected_outcomes
            && self.fifo_violations == 0
            && self.atomicity_violations == 0
            && self.bracket_violations == 0
    }
}

fn view_of(composites: &BTreeSet<Itemset>) -> RegistryView {
    let mut local: BTreeSet<ServiceId> = (1..=UNIVERSE)
        .map(|i| ServiceId::for_item(ItemId::new(i).unwrap()))
        .collect();
    local.insert(ServiceId::bundle());
    local.extend(composites.iter().map(ServiceId::composite));
    RegistryView {
        composites: composites.clone(),
        local_services: local,
    }
}

pub fn run_churn(seed: u64, events: usize, registry_ops: usize) -> ChurnReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log: Log = Arc::default();

    let mut reactor = Reactor::new(default_rules());
    for i in 1..=UNIVERSE {
        let id = ItemId::new(i).unwrap();
        reactor
            .register_handler(registration(
                ServiceId::for_item(id),
                ServiceKind::Item,
                Itemset::single(id),
                i as u64,
                &log,
            ))
            .unwrap();
    }
    let everything = Itemset::from_indices(1..=UNIVERSE).unwrap();
    reactor
        .register_handler(registration(
            ServiceId::bundle(),
            ServiceKind::Bundle,
            everything,
            3,
            &log,
        ))
        .unwrap();
    let g0 = reactor.generation();

    // plan the batches against a model; one or two changes each
    let mut model: BTreeSet<Itemset> = BTreeSet::new();
    let mut states = vec![model.clone()];
    let mut batches = Vec::new();
    let mut ops_left = registry_ops;
    while ops_left > 0 {
        let size = rng.gen_range(1..=2.min(ops_left));
        let mut batch = Vec::new();
        for _ in 0..size {
            let remove = !model.is_empty() && rng.gen_bool(0.4);
            if remove {
                let victim = model
                    .iter()
                    .nth(rng.gen_range(0..model.len()))
                    .unwrap()
                    .clone();
                model.remove(&victim);
                batch.push((false, victim));
            } else {
                let set = loop {
                    let s = random_set(&mut rng, 2, UNIVERSE as usize);
                    if !model.contains(&s) {
                        break s;
                    }
                };
                model.insert(set.clone());
                batch.push((true, set));
            }
        }
        ops_left -= size;
        states.push(model.clone());
        batches.push(Step::Batch(batch));
    }
    let mut steps: Vec<Step> = (1..=events)
        .map(|n| {
            Step::Event(ServiceEvent {
                event_id: format!("e{n}"),
                requested_items: random_set(&mut rng, 1, 4),
                received_at: n as u64,
            })
        })
        .collect();
    // batches land at random points, keeping their relative order
    let mut positions: Vec<usize> = (0..batches.len())
        .map(|_| rng.gen_range(0..=steps.len()))
        .collect();
    positions.sort_unstable();
    for (offset, (pos, batch)) in positions.into_iter().zip(batches).enumerate() {
        steps.insert(pos + offset, batch);
    }

    let handle = reactor.handle();
    let runner = std::thread::spawn(move || {
        let mut outcomes = Vec::new();
        reactor.run(|o| outcomes.push(o));
        outcomes
    });

    let mut expected: Vec<(ServiceEvent, u64)> = Vec::new();
    let mut applied = 0u64;
    for step in steps {
        match step {
            Step::Event(event) => {
                expected.push((event.clone(), applied));
                handle.submit(event).unwrap();
                if rng.gen_bool(0.05) {
                    std::thread::yield_now();
                }
            }
            Step::Batch(changes) => {
                let changes = changes
                    .into_iter()
                    .map(|(register, set)| {
                        if register {
                            RegistryChange::Register(composite_reg(&set, &log))
                        } else {
                            RegistryChange::Remove(ServiceId::composite(&set))
                        }
                    })
                    .collect();
                handle.apply(changes).unwrap();
                applied += 1;
            }
        }
    }
    handle.shutdown();
    let outcomes: Vec<ServiceOutcome> = runner.join().unwrap();

    let mut report = ChurnReport {
        outcomes: outcomes.len(),
        expected_outcomes: events,
        registry_ops,
        ..Default::default()
    };
    let rules = default_rules();
    for (outcome, (event, batches_before)) in outcomes.iter().zip(&expected) {
        if outcome.event_id != event.event_id {
            report.fifo_violations += 1;
            continue;
        }
        let generation_ok = outcome.registry_generation == g0 + batches_before;
        let view = view_of(&states[*batches_before as usize]);
        let plan = match_rule(event, &rules, &view)
            .and_then(|r| select_plan(r, event, &view))
            .unwrap();
        let composite_ok = match &plan.composite_itemset {
            Some(c) => outcome.served_by == vec![ServiceId::composite(c)],
            None => outcome
                .served_by
                .iter()
                .all(|s| !s.as_str().starts_with("c-")),
        };
        if !generation_ok || !composite_ok || outcome.plan_kind != Some(plan.kind) {
            report.atomicity_violations += 1;
        }
    }

    let log = log.lock().unwrap();
    report.hooks = log
        .iter()
        .filter(|r| matches!(r.mark, Mark::Hook(_)))
        .count();
    let dispatched: usize = outcomes.iter().map(|o| o.sub_dispatch_count).sum();
    if log.len() != report.hooks * 5 || dispatched != report.hooks {
        report.bracket_violations += 1;
    }
    for chunk in log.chunks(5) {
        let [a, b, h, c, d] = chunk else {
            report.bracket_violations += 1;
            continue;
        };
        let Mark::Hook(ok) = h.mark else {
            report.bracket_violations += 1;
            continue;
        };
        if !ok {
            report.failed_hooks += 1;
        }
        let same = chunk
            .iter()
            .all(|r| r.event_id == h.event_id && r.service_id == h.service_id);
        let order = a.mark == Mark::Before("outer")
            && b.mark == Mark::Before("inner")
            && c.mark == Mark::After("inner", ok)
            && d.mark == Mark::After("outer", ok);
        if !same || !order {
            report.bracket_violations += 1;
        }
    }
    for outcome in &outcomes {
        let hook_failed = log
            .iter()
            .any(|r| r.event_id == outcome.event_id && r.mark == Mark::Hook(false));
        if hook_failed != matches!(outcome.status, OutcomeStatus::Failed(_)) {
            report.bracket_violations += 1;
        }
    }
    report
}
