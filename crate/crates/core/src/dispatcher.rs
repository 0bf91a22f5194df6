//! Reactor: a blocking FIFO demultiplexer feeding a single dispatch loop
//! that owns the handler registry.
//!
//! Other threads talk to the loop only through a [`ReactorHandle`]:
//! events and registry changes travel down the same channel, so a change
//! is applied between two events and never while one is being served.
//! Each registration carries an interceptor chain; for every hook call the
//! `before` advice runs in chain order and the `after` advice in reverse,
//! whether or not the hook succeeds.

use std::collections::{BTreeMap, VecDeque};
use std::panic::{self, AssertUnwindSafe};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex, RwLock};

use log::{debug, warn};
use thiserror::Error;

use crate::decision::{
    default_rules, match_rule, select_plan, FixedRule, Locality, Plan, PlanKind, RegistryView,
    ServiceEvent,
};
use crate::itemset::Itemset;
use crate::service::{Money, ServiceId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DispatchError {
    #[error("service {0} is already registered")]
    DuplicateService(ServiceId),
    #[error("service {0} is not registered")]
    UnknownService(ServiceId),
    #[error("registration of {0} has an empty itemset")]
    EmptyItemset(ServiceId),
    #[error("dispatcher queue is closed")]
    QueueClosed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct HandlerError(pub String);

/// What a hook sees for one invocation.
#[derive(Debug)]
pub struct HookContext<'a> {
    pub event: &'a ServiceEvent,
    pub plan: &'a Plan,
    pub service_id: &'a ServiceId,
    /// Items this invocation is responsible for.
    pub items: &'a Itemset,
    pub registry_generation: u64,
}

/// Service-specific hook called back by the dispatch loop.
pub trait EventHandler: Send {
    fn handle_event(&mut self, ctx: &HookContext<'_>) -> Result<Money, HandlerError>;
}

impl<F> EventHandler for F
where
    F: FnMut(&HookContext<'_>) -> Result<Money, HandlerError> + Send,
{
    fn handle_event(&mut self, ctx: &HookContext<'_>) -> Result<Money, HandlerError> {
        self(ctx)
    }
}

/// Before/after advice wrapped around every hook call of a registration.
pub trait Interceptor: Send {
    fn before(&mut self, ctx: &HookContext<'_>);
    fn after(&mut self, ctx: &HookContext<'_>, result: &Result<Money, HandlerError>);
}

/// Serves requests for peers when a plan names a service that is not
/// registered locally.
pub trait RemoteInvoker: Send {
    fn invoke(&mut self, service: &ServiceId, items: &Itemset) -> Result<Money, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceKind {
    Item,
    Bundle,
    Composite,
}

pub struct HandlerRegistration {
    pub service_id: ServiceId,
    pub kind: ServiceKind,
    pub handled_itemset: Itemset,
    pub handler: Box<dyn EventHandler>,
    pub interceptors: Vec<Box<dyn Interceptor>>,
}

impl HandlerRegistration {
    pub fn new(
        service_id: ServiceId,
        kind: ServiceKind,
        handled_itemset: Itemset,
        handler: impl EventHandler + 'static,
    ) -> Self {
        HandlerRegistration {
            service_id,
            kind,
            handled_itemset,
            handler: Box::new(handler),
            interceptors: Vec::new(),
        }
    }

    pub fn with_interceptor(mut self, interceptor: impl Interceptor + 'static) -> Self {
        self.interceptors.push(Box::new(interceptor));
        self
    }
}

impl std::fmt::Debug for HandlerRegistration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HandlerRegistration")
            .field("service_id", &self.service_id)
            .field("kind", &self.kind)
            .field("handled_itemset", &self.handled_itemset)
            .field("interceptors", &self.interceptors.len())
            .finish()
    }
}

pub enum RegistryChange {
    Register(HandlerRegistration),
    Remove(ServiceId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutcomeStatus {
    Served,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceOutcome {
    pub event_id: String,
    pub requested_items: Itemset,
    pub status: OutcomeStatus,
    pub total_cost: Money,
    /// Distinct services invoked, in first-use order.
    pub served_by: Vec<ServiceId>,
    /// Number of hook invocations used to serve the event.
    pub sub_dispatch_count: usize,
    pub plan_kind: Option<PlanKind>,
    pub locality: Option<Locality>,
    /// Registry generation the event was served against.
    pub registry_generation: u64,
}

impl ServiceOutcome {
    pub fn is_served(&self) -> bool {
        self.status == OutcomeStatus::Served
    }
}

type ApplyReply = Sender<Vec<Result<(), DispatchError>>>;

enum Command {
    Submit(ServiceEvent, Option<Sender<ServiceOutcome>>),
    Apply(Vec<RegistryChange>, Option<ApplyReply>),
    Shutdown,
}

/// Receipt for a registry change sent through a handle; resolves once the
/// loop has applied it.
pub struct ApplyTicket(Receiver<Vec<Result<(), DispatchError>>>);

impl ApplyTicket {
    /// Blocks until the loop applies the change. Only call this while the
    /// loop runs on another thread.
    pub fn wait(self) -> Result<Vec<Result<(), DispatchError>>, DispatchError> {
        self.0.recv().map_err(|_| DispatchError::QueueClosed)
    }

    pub fn try_result(&self) -> Option<Vec<Result<(), DispatchError>>> {
        self.0.try_recv().ok()
    }
}

/// Cloneable, thread-safe front door to a [`Reactor`].
#[derive(Clone)]
pub struct ReactorHandle {
    tx: Arc<Mutex<Option<Sender<Command>>>>,
    view: Arc<RwLock<Arc<RegistryView>>>,
}

impl ReactorHandle {
    fn send(&self, cmd: Command) -> Result<(), DispatchError> {
        let guard = self.tx.lock().expect("handle lock");
        match guard.as_ref() {
            Some(tx) => tx.send(cmd).map_err(|_| DispatchError::QueueClosed),
            None => Err(DispatchError::QueueClosed),
        }
    }

    /// Enqueues an event (FIFO).
    pub fn submit(&self, event: ServiceEvent) -> Result<(), DispatchError> {
        self.send(Command::Submit(event, None))
    }

    /// Enqueues an event and returns a receiver for its outcome.
    pub fn submit_with_reply(
        &self,
        event: ServiceEvent,
    ) -> Result<Receiver<ServiceOutcome>, DispatchError> {
        let (tx, rx) = mpsc::channel();
        self.send(Command::Submit(event, Some(tx)))?;
        Ok(rx)
    }

    /// Stages a batch of changes; the loop applies the whole batch between
    /// two events.
    pub fn apply(&self, changes: Vec<RegistryChange>) -> Result<ApplyTicket, DispatchError> {
        let (tx, rx) = mpsc::channel();
        self.send(Command::Apply(changes, Some(tx)))?;
        Ok(ApplyTicket(rx))
    }

    pub fn register(&self, reg: HandlerRegistration) -> Result<ApplyTicket, DispatchError> {
        self.apply(vec![RegistryChange::Register(reg)])
    }

    pub fn remove(&self, service_id: ServiceId) -> Result<ApplyTicket, DispatchError> {
        self.apply(vec![RegistryChange::Remove(service_id)])
    }

    /// Closes the queue. Events already queued are still dispatched.
    pub fn shutdown(&self) {
        let mut guard = self.tx.lock().expect("handle lock");
        if let Some(tx) = guard.take() {
            let _ = tx.send(Command::Shutdown);
        }
    }

    pub fn is_closed(&self) -> bool {
        self.tx.lock().expect("handle lock").is_none()
    }

    /// Snapshot of the registry as of the last applied change.
    pub fn view(&self) -> Arc<RegistryView> {
        self.view.read().expect("view lock").clone()
    }
}

struct Entry {
    kind: ServiceKind,
    handled_itemset: Itemset,
    handler: Box<dyn EventHandler>,
    interceptors: Vec<Box<dyn Interceptor>>,
}

/// Initiation dispatcher plus registry. Owned by exactly one loop.
pub struct Reactor {
    registry: BTreeMap<ServiceId, Entry>,
    rules: Vec<FixedRule>,
    remote: Option<Box<dyn RemoteInvoker>>,
    rx: Receiver<Command>,
    backlog: VecDeque<Command>,
    handle: ReactorHandle,
    generation: u64,
    stopped: bool,
}

impl Default for Reactor {
    fn default() -> Self {
        Reactor::new(default_rules())
    }
}

impl Reactor {
    pub fn new(rules: Vec<FixedRule>) -> Self {
        let (tx, rx) = mpsc::channel();
        Reactor {
            registry: BTreeMap::new(),
            rules,
            remote: None,
            rx,
            backlog: VecDeque::new(),
            handle: ReactorHandle {
                tx: Arc::new(Mutex::new(Some(tx))),
                view: Arc::new(RwLock::new(Arc::new(RegistryView::default()))),
            },
            generation: 0,
            stopped: false,
        }
    }

    pub fn with_remote(mut self, remote: impl RemoteInvoker + 'static) -> Self {
        self.remote = Some(Box::new(remote));
        self
    }

    pub fn handle(&self) -> ReactorHandle {
        self.handle.clone()
    }

    pub fn rules(&self) -> &[FixedRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.registry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registry.is_empty()
    }

    pub fn contains(&self, service_id: &ServiceId) -> bool {
        self.registry.contains_key(service_id)
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn view(&self) -> RegistryView {
        RegistryView {
            composites: self
                .registry
                .values()
                .filter(|e| e.kind == ServiceKind::Composite)
                .map(|e| e.handled_itemset.clone())
                .collect(),
            local_services: self.registry.keys().cloned().collect(),
        }
    }

    fn publish(&mut self) {
        self.generation += 1;
        let view = Arc::new(self.view());
        *self.handle.view.write().expect("view lock") = view;
    }

    fn insert(&mut self, reg: HandlerRegistration) -> Result<(), DispatchError> {
        if reg.handled_itemset.is_empty() {
            return Err(DispatchError::EmptyItemset(reg.service_id));
        }
        if self.registry.contains_key(&reg.service_id) {
            return Err(DispatchError::DuplicateService(reg.service_id));
        }
        debug!("registering {}", reg.service_id);
        self.registry.insert(
            reg.service_id,
            Entry {
                kind: reg.kind,
                handled_itemset: reg.handled_itemset,
                handler: reg.handler,
                interceptors: reg.interceptors,
            },
        );
        Ok(())
    }

    fn delete(&mut self, service_id: &ServiceId) -> Result<(), DispatchError> {
        debug!("removing {service_id}");
        self.registry
            .remove(service_id)
            .map(|_| ())
            .ok_or_else(|| DispatchError::UnknownService(service_id.clone()))
    }

    /// Registers directly. Holding `&mut self` means no event is in flight.
    pub fn register_handler(&mut self, reg: HandlerRegistration) -> Result<(), DispatchError> {
        self.insert(reg)?;
        self.publish();
        Ok(())
    }

    pub fn remove_handler(&mut self, service_id: &ServiceId) -> Result<(), DispatchError> {
        self.delete(service_id)?;
        self.publish();
        Ok(())
    }

    fn apply_batch(&mut self, changes: Vec<RegistryChange>) -> Vec<Result<(), DispatchError>> {
        let results: Vec<_> = changes
            .into_iter()
            .map(|change| match change {
                RegistryChange::Register(reg) => self.insert(reg),
                RegistryChange::Remove(id) => self.delete(&id),
            })
            .collect();
        for err in results.iter().filter_map(|r| r.as_ref().err()) {
            warn!("registry change rejected: {err}");
        }
        self.publish();
        results
    }

    /// Processes control commands until an event is available, then serves
    /// it. `Ok(None)` means the queue is empty (non-blocking mode only).
    fn step(&mut self, block: bool) -> Result<Option<ServiceOutcome>, DispatchError> {
        loop {
            if self.stopped {
                return Err(DispatchError::QueueClosed);
            }
            let cmd = if let Some(cmd) = self.backlog.pop_front() {
                cmd
            } else if block {
                self.rx.recv().map_err(|_| DispatchError::QueueClosed)?
            } else {
                match self.rx.try_recv() {
                    Ok(cmd) => cmd,
                    Err(TryRecvError::Empty) => return Ok(None),
                    Err(TryRecvError::Disconnected) => return Err(DispatchError::QueueClosed),
                }
            };
            match cmd {
                Command::Apply(changes, reply) => {
                    let results = self.apply_batch(changes);
                    if let Some(reply) = reply {
                        let _ = reply.send(results);
                    }
                }
                Command::Shutdown => {
                    self.stopped = true;
                    return Err(DispatchError::QueueClosed);
                }
                Command::Submit(event, reply) => {
                    let outcome = self.serve(&event);
                    if let Some(reply) = reply {
                        let _ = reply.send(outcome.clone());
                    }
                    return Ok(Some(outcome));
                }
            }
        }
    }

    /// Blocks for the next event and serves it.
    pub fn dispatch_next(&mut self) -> Result<ServiceOutcome, DispatchError> {
        self.step(true)
            .map(|o| o.expect("blocking step always yields an outcome"))
    }

    /// Serves the next queued event, if any, applying staged changes first.
    pub fn try_dispatch_next(&mut self) -> Result<Option<ServiceOutcome>, DispatchError> {
        self.step(false)
    }

    /// Applies registry changes staged ahead of the next event without
    /// serving anything.
    pub fn apply_pending(&mut self) {
        while self.backlog.is_empty() {
            match self.rx.try_recv() {
                Ok(Command::Apply(changes, reply)) => {
                    let results = self.apply_batch(changes);
                    if let Some(reply) = reply {
                        let _ = reply.send(results);
                    }
                }
                Ok(other) => self.backlog.push_back(other),
                Err(_) => break,
            }
        }
    }

    /// Runs the loop until shutdown, passing every outcome to `sink`.
    pub fn run(&mut self, mut sink: impl FnMut(ServiceOutcome)) {
        while let Ok(outcome) = self.dispatch_next() {
            sink(outcome);
        }
    }

    /// Spawns the loop on its own thread.
    pub fn spawn(mut self) -> std::thread::JoinHandle<Reactor> {
        std::thread::spawn(move || {
            self.run(|_| {});
            self
        })
    }

    fn serve(&mut self, event: &ServiceEvent) -> ServiceOutcome {
        let view = self.view();
        let mut outcome = ServiceOutcome {
            event_id: event.event_id.clone(),
            requested_items: event.requested_items.clone(),
            status: OutcomeStatus::Served,
            total_cost: Money(0),
            served_by: Vec::new(),
            sub_dispatch_count: 0,
            plan_kind: None,
            locality: None,
            registry_generation: self.generation,
        };
        let plan = match match_rule(event, &self.rules, &view)
            .and_then(|rule| select_plan(rule, event, &view))
        {
            Ok(plan) => plan,
            Err(e) => {
                outcome.status = OutcomeStatus::Failed(e.to_string());
                return outcome;
            }
        };
        outcome.plan_kind = Some(plan.kind);
        outcome.locality = Some(plan.locality);

        for (service_id, items) in invocations(&plan, event) {
            outcome.sub_dispatch_count += 1;
            if !outcome.served_by.contains(&service_id) {
                outcome.served_by.push(service_id.clone());
            }
            let ctx = HookContext {
                event,
                plan: &plan,
                service_id: &service_id,
                items: &items,
                registry_generation: self.generation,
            };
            let result = match self.registry.get_mut(&service_id) {
                Some(entry) => invoke_local(entry, &ctx),
                None => match self.remote.as_mut() {
                    Some(remote) => remote.invoke(&service_id, &items).map_err(HandlerError),
                    None => Err(HandlerError(format!(
                        "service {service_id} is not local and no peer is configured"
                    ))),
                },
            };
            match result {
                Ok(cost) => outcome.total_cost = outcome.total_cost + cost,
                Err(e) => {
                    warn!("event {} failed in {service_id}: {e}", event.event_id);
                    outcome.status = OutcomeStatus::Failed(e.0);
                    break;
                }
            }
        }
        outcome
    }
}

/// (service, items) pairs, one per hook invocation.
fn invocations(plan: &Plan, event: &ServiceEvent) -> Vec<(ServiceId, Itemset)> {
    let items = &event.requested_items;
    match plan.kind {
        PlanKind::PerItem => plan
            .target_services
            .iter()
            .cloned()
            .zip(items.iter().map(Itemset::single))
            .collect(),
        // the bundle quote walks the request one line item at a time
        PlanKind::Bundle => items
            .iter()
            .map(|i| (plan.target_services[0].clone(), Itemset::single(i)))
            .collect(),
        PlanKind::Composite => vec![(plan.target_services[0].clone(), items.clone())],
    }
}

fn invoke_local(entry: &mut Entry, ctx: &HookContext<'_>) -> Result<Money, HandlerError> {
    for i in entry.interceptors.iter_mut() {
        i.before(ctx);
    }
    let result = panic::catch_unwind(AssertUnwindSafe(|| entry.handler.handle_event(ctx)))
        .unwrap_or_else(|_| Err(HandlerError(format!("handler {} panicked", ctx.service_id))));
    for i in entry.interceptors.iter_mut().rev() {
        i.after(ctx, &result);
    }
    result
}
