//! Task dependency graphs, endpoint allocation and synchronized scheduling.
//!
//! A subtask may start only once every predecessor has completed. When a
//! subtask fails, every descendant is marked skipped. Completion of a subtask
//! on one endpoint reaches its successors on other endpoints through an
//! ordered message bus, and each message carries the completed subtask's
//! payload so data can flow between devices.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlannerError {
    #[error("dependency cycle: {}", .witness.join(" -> "))]
    CycleDetected { witness: Vec<String> },
    #[error("edge ({from}, {to}) references an unknown subtask")]
    DanglingEdge { from: String, to: String },
    #[error("subtask {0} declared twice")]
    DuplicateSubtask(String),
    #[error("no endpoint allocated for: {}", .missing.join(", "))]
    PartialAllocation { missing: Vec<String> },
    #[error("plan mixes device and app endpoints")]
    MixedEndpointKinds,
    #[error("subtask {subtask} is allocated to unknown endpoint {endpoint}")]
    UnknownEndpoint { subtask: String, endpoint: String },
    #[error("unknown subtask {0}")]
    UnknownSubtask(String),
    #[error("illegal transition for {subtask}: {event} while {state}")]
    IllegalTransition {
        subtask: String,
        event: TaskEvent,
        state: SubtaskState,
    },
    #[error("feature combination {0:?} matches no cross-app class")]
    UnclassifiableFeatureCombination((bool, bool, bool)),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub id: String,
    #[serde(default)]
    pub description: String,
}

impl Subtask {
    pub fn new(id: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            description: description.into(),
        }
    }
}

/// Validated acyclic dependency graph. An edge `(a, b)` means `a` must
/// complete before `b` may start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskGraph {
    subtasks: Vec<Subtask>,
    edges: BTreeSet<(String, String)>,
    preds: BTreeMap<String, BTreeSet<String>>,
    succs: BTreeMap<String, BTreeSet<String>>,
}

impl TaskGraph {
    pub fn build(
        subtasks: Vec<Subtask>,
        edges: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, PlannerError> {
        let mut preds: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut succs: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for s in &subtasks {
            if preds.insert(s.id.clone(), BTreeSet::new()).is_some() {
                return Err(PlannerError::DuplicateSubtask(s.id.clone()));
            }
            succs.insert(s.id.clone(), BTreeSet::new());
        }
        let edges: BTreeSet<(String, String)> = edges.into_iter().collect();
        for (a, b) in &edges {
            if !preds.contains_key(a) || !preds.contains_key(b) {
                return Err(PlannerError::DanglingEdge {
                    from: a.clone(),
                    to: b.clone(),
                });
            }
            preds.get_mut(b).unwrap().insert(a.clone());
            succs.get_mut(a).unwrap().insert(b.clone());
        }
        let graph = Self {
            subtasks,
            edges,
            preds,
            succs,
        };
        if let Some(witness) = graph.find_cycle() {
            return Err(PlannerError::CycleDetected { witness });
        }
        Ok(graph)
    }

    /// Convenience for string-literal fixtures.
    pub fn from_ids(ids: &[&str], edges: &[(&str, &str)]) -> Result<Self, PlannerError> {
        Self::build(
            ids.iter().map(|id| Subtask::new(*id, "")).collect(),
            edges.iter().map(|(a, b)| (a.to_string(), b.to_string())),
        )
    }

    // Three-colour DFS; returns the cycle as a closed walk a -> .. -> a.
    fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Colour {
            White,
            Grey,
            Black,
        }
        let mut colour: BTreeMap<&str, Colour> =
            self.subtasks.iter().map(|s| (s.id.as_str(), Colour::White)).collect();
        for root in &self.subtasks {
            if colour[root.id.as_str()] != Colour::White {
                continue;
            }
            let mut path: Vec<&str> = vec![root.id.as_str()];
            let mut iters = vec![self.succs[&root.id].iter()];
            colour.insert(root.id.as_str(), Colour::Grey);
            while let Some(it) = iters.last_mut() {
                match it.next() {
                    Some(next) => match colour[next.as_str()] {
                        Colour::White => {
                            colour.insert(next.as_str(), Colour::Grey);
                            path.push(next.as_str());
                            iters.push(self.succs[next].iter());
                        }
                        Colour::Grey => {
                            let start = path.iter().position(|p| *p == next).unwrap();
                            let mut cycle: Vec<String> =
                                path[start..].iter().map(|s| s.to_string()).collect();
                            cycle.push(next.clone());
                            return Some(cycle);
                        }
                        Colour::Black => {}
                    },
                    None => {
                        iters.pop();
                        let done = path.pop().unwrap();
                        colour.insert(done, Colour::Black);
                    }
                }
            }
        }
        None
    }

    pub fn subtasks(&self) -> &[Subtask] {
        &self.subtasks
    }

    pub fn subtask(&self, id: &str) -> Option<&Subtask> {
        self.subtasks.iter().find(|s| s.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.subtasks.iter().map(|s| s.id.as_str())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.preds.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.subtasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtasks.is_empty()
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn predecessors(&self, id: &str) -> &BTreeSet<String> {
        &self.preds[id]
    }

    pub fn successors(&self, id: &str) -> &BTreeSet<String> {
        &self.succs[id]
    }

    /// Every subtask reachable from `id`, excluding `id` itself.
    pub fn descendants(&self, id: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = vec![id];
        while let Some(cur) = stack.pop() {
            for next in &self.succs[cur] {
                if seen.insert(next.clone()) {
                    stack.push(next);
                }
            }
        }
        seen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Device,
    App,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub id: String,
    pub kind: EndpointKind,
    /// Hosting device for app endpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
}

impl Endpoint {
    pub fn device(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: EndpointKind::Device,
            device: None,
        }
    }

    pub fn app(id: impl Into<String>, device: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: EndpointKind::App,
            device: Some(device.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocatedPlan {
    pub graph: TaskGraph,
    allocation: BTreeMap<String, String>,
    endpoints: BTreeMap<String, Endpoint>,
}

impl AllocatedPlan {
    pub fn allocate(
        graph: TaskGraph,
        mapping: BTreeMap<String, String>,
        endpoints: Vec<Endpoint>,
    ) -> Result<Self, PlannerError> {
        let endpoints: BTreeMap<String, Endpoint> =
            endpoints.into_iter().map(|e| (e.id.clone(), e)).collect();
        let kinds: BTreeSet<EndpointKind> = endpoints.values().map(|e| e.kind).collect();
        if kinds.len() > 1 {
            return Err(PlannerError::MixedEndpointKinds);
        }
        if let Some(stray) = mapping.keys().find(|k| !graph.contains(k)) {
            return Err(PlannerError::UnknownSubtask(stray.clone()));
        }
        let missing: Vec<String> = graph
            .ids()
            .filter(|id| !mapping.contains_key(*id))
            .map(str::to_string)
            .collect();
        if !missing.is_empty() {
            return Err(PlannerError::PartialAllocation { missing });
        }
        for (subtask, endpoint) in &mapping {
            if !endpoints.contains_key(endpoint) {
                return Err(PlannerError::UnknownEndpoint {
                    subtask: subtask.clone(),
                    endpoint: endpoint.clone(),
                });
            }
        }
        Ok(Self {
            graph,
            allocation: mapping,
            endpoints,
        })
    }

    pub fn endpoint_of(&self, subtask: &str) -> &Endpoint {
        &self.endpoints[&self.allocation[subtask]]
    }

    pub fn endpoints(&self) -> impl Iterator<Item = &Endpoint> {
        self.endpoints.values()
    }

    pub fn allocation(&self) -> &BTreeMap<String, String> {
        &self.allocation
    }

    /// True when all endpoints are apps on a single device.
    pub fn is_cross_app(&self) -> bool {
        let devices: BTreeSet<Option<&String>> =
            self.endpoints.values().map(|e| e.device.as_ref()).collect();
        self.endpoints.values().all(|e| e.kind == EndpointKind::App) && devices.len() <= 1
    }
}

/// On-disk plan description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanFile {
    pub subtasks: Vec<Subtask>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    pub allocation: BTreeMap<String, String>,
    pub endpoints: Vec<Endpoint>,
}

impl PlanFile {
    pub fn into_plan(self) -> Result<AllocatedPlan, PlannerError> {
        let graph = TaskGraph::build(self.subtasks, self.edges)?;
        AllocatedPlan::allocate(graph, self.allocation, self.endpoints)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskState {
    Pending,
    Running,
    Completed,
    Failed,
    Skipped,
}

impl fmt::Display for SubtaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pending => "pending",
            Self::Running => "running",
            Self::Completed => "completed",
            Self::Failed => "failed",
            Self::Skipped => "skipped",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskEvent {
    Started,
    Completed,
    Failed,
}

impl fmt::Display for TaskEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Started => "started",
            Self::Completed => "completed",
            Self::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Started,
    Completed,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEvent {
    pub tick: u64,
    pub subtask: String,
    pub transition: Transition,
}

/// Per-subtask states, the transition log and the logical clock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanStatus {
    states: BTreeMap<String, SubtaskState>,
    log: Vec<PlanEvent>,
    clock: u64,
}

impl PlanStatus {
    pub fn new(graph: &TaskGraph) -> Self {
        Self {
            states: graph
                .ids()
                .map(|id| (id.to_string(), SubtaskState::Pending))
                .collect(),
            log: Vec::new(),
            clock: 0,
        }
    }

    /// Arbitrary assignment, for exploring the ready predicate.
    pub fn from_states(states: BTreeMap<String, SubtaskState>) -> Self {
        Self {
            states,
            log: Vec::new(),
            clock: 0,
        }
    }

    pub fn state(&self, id: &str) -> Option<SubtaskState> {
        self.states.get(id).copied()
    }

    pub fn states(&self) -> &BTreeMap<String, SubtaskState> {
        &self.states
    }

    pub fn log(&self) -> &[PlanEvent] {
        &self.log
    }

    /// Returns the current tick and advances the clock.
    pub fn tick(&mut self) -> u64 {
        let t = self.clock;
        self.clock += 1;
        t
    }

    fn record(&mut self, subtask: &str, transition: Transition) {
        let tick = self.tick();
        self.log.push(PlanEvent {
            tick,
            subtask: subtask.to_string(),
            transition,
        });
    }

    pub fn all_completed(&self) -> bool {
        self.states.values().all(|s| *s == SubtaskState::Completed)
    }

    pub fn advance(
        &mut self,
        graph: &TaskGraph,
        event: TaskEvent,
        subtask: &str,
    ) -> Result<(), PlannerError> {
        let state = self
            .state(subtask)
            .ok_or_else(|| PlannerError::UnknownSubtask(subtask.to_string()))?;
        let illegal = || PlannerError::IllegalTransition {
            subtask: subtask.to_string(),
            event,
            state,
        };
        match event {
            TaskEvent::Started => {
                let preds_done = graph
                    .predecessors(subtask)
                    .iter()
                    .all(|p| self.state(p) == Some(SubtaskState::Completed));
                if state != SubtaskState::Pending || !preds_done {
                    return Err(illegal());
                }
                self.states.insert(subtask.to_string(), SubtaskState::Running);
                self.record(subtask, Transition::Started);
            }
            TaskEvent::Completed => {
                if state != SubtaskState::Running {
                    return Err(illegal());
                }
                self.states.insert(subtask.to_string(), SubtaskState::Completed);
                self.record(subtask, Transition::Completed);
            }
            TaskEvent::Failed => {
                if state != SubtaskState::Running {
                    return Err(illegal());
                }
                self.states.insert(subtask.to_string(), SubtaskState::Failed);
                self.record(subtask, Transition::Failed);
                let order: Vec<String> = graph
                    .ids()
                    .filter(|id| graph.descendants(subtask).contains(*id))
                    .map(str::to_string)
                    .collect();
                for d in order {
                    if self.state(&d) == Some(SubtaskState::Pending) {
                        self.states.insert(d.clone(), SubtaskState::Skipped);
                        self.record(&d, Transition::Skipped);
                    }
                }
            }
        }
        Ok(())
    }
}

/// `{st : S(st) = Pending and every predecessor Completed}`.
pub fn ready_set(graph: &TaskGraph, status: &PlanStatus) -> BTreeSet<String> {
    graph
        .ids()
        .filter(|id| status.state(id) == Some(SubtaskState::Pending))
        .filter(|id| {
            graph
                .predecessors(id)
                .iter()
                .all(|p| status.state(p) == Some(SubtaskState::Completed))
        })
        .map(str::to_string)
        .collect()
}

pub type Payload = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("endpoint fault: {0}")]
pub struct ExecutorError(pub String);

/// Runs one subtask on its endpoint. `inbox` holds the merged payloads of
/// all completed ancestors.
pub trait Executor {
    fn execute(
        &mut self,
        endpoint: &Endpoint,
        subtask: &Subtask,
        inbox: &Payload,
    ) -> Result<Payload, ExecutorError>;
}

impl<F> Executor for F
where
    F: FnMut(&Endpoint, &Subtask, &Payload) -> Result<Payload, ExecutorError>,
{
    fn execute(
        &mut self,
        endpoint: &Endpoint,
        subtask: &Subtask,
        inbox: &Payload,
    ) -> Result<Payload, ExecutorError> {
        self(endpoint, subtask, inbox)
    }
}

/// A completion notice carried between endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusMessage {
    pub tick: u64,
    pub from_subtask: String,
    pub from_endpoint: String,
    pub to_subtask: String,
    pub to_endpoint: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanOutcome {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanResult {
    pub outcome: PlanOutcome,
    pub status: PlanStatus,
    pub bus: Vec<BusMessage>,
    /// Accumulated payload per completed subtask.
    pub payloads: BTreeMap<String, Payload>,
    pub failures: BTreeMap<String, String>,
}

impl PlanResult {
    pub fn log(&self) -> &[PlanEvent] {
        self.status.log()
    }

    /// Event log as JSON lines.
    pub fn log_jsonl(&self) -> String {
        self.log()
            .iter()
            .map(|e| serde_json::to_string(e).expect("plan events serialize") + "\n")
            .collect()
    }
}

/// Drives the plan to quiescence.
///
/// Each round starts ready subtasks (at most one active per endpoint, in
/// declaration order), executes the active ones, applies their reports from
/// an ordered queue and delivers cross-endpoint completions over the bus.
pub fn run_plan<E: Executor>(plan: &AllocatedPlan, executor: &mut E) -> PlanResult {
    let graph = &plan.graph;
    let mut status = PlanStatus::new(graph);
    let mut bus = Vec::new();
    let mut payloads: BTreeMap<String, Payload> = BTreeMap::new();
    let mut failures = BTreeMap::new();
    let mut inboxes: BTreeMap<String, Payload> =
        graph.ids().map(|id| (id.to_string(), Payload::new())).collect();

    loop {
        let ready = ready_set(graph, &status);
        let mut busy: BTreeSet<&str> = BTreeSet::new();
        let mut started = Vec::new();
        for id in graph.ids().filter(|id| ready.contains(*id)) {
            let endpoint = plan.allocation[id].as_str();
            if busy.insert(endpoint) {
                status
                    .advance(graph, TaskEvent::Started, id)
                    .expect("ready subtasks may start");
                started.push(id.to_string());
            }
        }
        if started.is_empty() {
            break;
        }

        let mut reports: VecDeque<(String, Result<Payload, ExecutorError>)> = VecDeque::new();
        for id in &started {
            let subtask = graph.subtask(id).expect("started subtask exists");
            let out = executor.execute(plan.endpoint_of(id), subtask, &inboxes[id]);
            reports.push_back((id.clone(), out));
        }

        while let Some((id, report)) = reports.pop_front() {
            match report {
                Ok(produced) => {
                    status
                        .advance(graph, TaskEvent::Completed, &id)
                        .expect("running subtask may complete");
                    let mut merged = inboxes[&id].clone();
                    merged.extend(produced);
                    let from_endpoint = plan.allocation[&id].clone();
                    for succ in graph.successors(&id) {
                        let to_endpoint = plan.allocation[succ].clone();
                        if to_endpoint != from_endpoint {
                            bus.push(BusMessage {
                                tick: status.tick(),
                                from_subtask: id.clone(),
                                from_endpoint: from_endpoint.clone(),
                                to_subtask: succ.clone(),
                                to_endpoint,
                                payload: merged.clone(),
                            });
                        }
                        inboxes
                            .get_mut(succ)
                            .unwrap()
                            .extend(merged.iter().map(|(k, v)| (k.clone(), v.clone())));
                    }
                    payloads.insert(id, merged);
                }
                Err(e) => {
                    status
                        .advance(graph, TaskEvent::Failed, &id)
                        .expect("running subtask may fail");
                    failures.insert(id, e.0);
                }
            }
        }
    }

    let outcome = if status.all_completed() {
        PlanOutcome::Completed
    } else {
        PlanOutcome::Failed
    };
    PlanResult {
        outcome,
        status,
        bus,
        payloads,
        failures,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SafetyViolation {
    #[error("{subtask} started at tick {tick} before predecessor {predecessor} completed")]
    StartedEarly {
        subtask: String,
        predecessor: String,
        tick: u64,
    },
    #[error("{subtask} skipped at tick {tick} with no failed ancestor")]
    SkippedWithoutFailure { subtask: String, tick: u64 },
    #[error("log mentions unknown subtask {0}")]
    Unknown(String),
}

/// Replays an event log and checks that every start was preceded by the
/// completion of all predecessors, and every skip by an ancestor failure.
pub fn check_log(graph: &TaskGraph, log: &[PlanEvent]) -> Result<(), SafetyViolation> {
    let mut completed = BTreeSet::new();
    let mut failed = BTreeSet::new();
    for e in log {
        if !graph.contains(&e.subtask) {
            return Err(SafetyViolation::Unknown(e.subtask.clone()));
        }
        match e.transition {
            Transition::Started => {
                if let Some(p) = graph
                    .predecessors(&e.subtask)
                    .iter()
                    .find(|p| !completed.contains(*p))
                {
                    return Err(SafetyViolation::StartedEarly {
                        subtask: e.subtask.clone(),
                        predecessor: p.clone(),
                        tick: e.tick,
                    });
                }
            }
            Transition::Completed => {
                completed.insert(e.subtask.clone());
            }
            Transition::Failed => {
                failed.insert(e.subtask.clone());
            }
            Transition::Skipped => {
                let has_failed_ancestor = failed
                    .iter()
                    .any(|f: &String| graph.descendants(f).contains(&e.subtask));
                if !has_failed_ancestor {
                    return Err(SafetyViolation::SkippedWithoutFailure {
                        subtask: e.subtask.clone(),
                        tick: e.tick,
                    });
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppClass {
    PassiveLinkage,
    DataPassing,
    CollaborativeMulti,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    Realtime,
    Async,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleRelation {
    MasterSlave,
    Peer,
}

/// Cross-device quadrants: I task delivery, II realtime master-slave,
/// III information sharing, IV realtime peer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrant {
    I,
    II,
    III,
    IV,
}

impl Quadrant {
    pub fn of(sync: SyncMode, roles: RoleRelation) -> Self {
        match (roles, sync) {
            (RoleRelation::MasterSlave, SyncMode::Async) => Self::I,
            (RoleRelation::MasterSlave, SyncMode::Realtime) => Self::II,
            (RoleRelation::Peer, SyncMode::Async) => Self::III,
            (RoleRelation::Peer, SyncMode::Realtime) => Self::IV,
        }
    }

    pub fn is_executable(self) -> bool {
        matches!(self, Self::I | Self::III)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossTaskFeatures {
    pub needs_memory: bool,
    pub proactive_switch: bool,
    pub linear_flow: bool,
    #[serde(default)]
    pub sync: Option<SyncMode>,
    #[serde(default)]
    pub roles: Option<RoleRelation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossTaskClass {
    pub app_class: Option<AppClass>,
    pub device_class: Option<Quadrant>,
    pub executable: bool,
}

pub fn classify_cross_task(f: &CrossTaskFeatures) -> Result<CrossTaskClass, PlannerError> {
    let triple = (f.needs_memory, f.proactive_switch, f.linear_flow);
    let app_class = match triple {
        (false, false, true) => AppClass::PassiveLinkage,
        (true, true, true) => AppClass::DataPassing,
        (true, true, false) => AppClass::CollaborativeMulti,
        _ => return Err(PlannerError::UnclassifiableFeatureCombination(triple)),
    };
    let device_class = match (f.sync, f.roles) {
        (Some(s), Some(r)) => Some(Quadrant::of(s, r)),
        _ => None,
    };
    let executable = app_class != AppClass::CollaborativeMulti
        && f.sync != Some(SyncMode::Realtime)
        && device_class.map_or(true, Quadrant::is_executable);
    Ok(CrossTaskClass {
        app_class: Some(app_class),
        device_class,
        executable,
    })
}
