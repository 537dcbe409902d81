//! Deterministic simulated devices and the end-to-end pipeline.
//!
//! Apps are graphs of screens. A device shows one screen of one app at a
//! time, keeps a back stack, tracks the focused input field and stores typed
//! text as overlays on input widgets, so typing changes the screen digest.
//!
//! Each pipeline run resets the device to its launcher, injects memory
//! context, and then takes one of three routes: a user-selected function
//! call, replay of a matching archived experience, or the standard loop of
//! ensemble proposal, calibration and execution.
//!
//! Time is a world-wide logical clock. Every step of the standard loop costs
//! `policy_ticks` (agents run concurrently) plus `action_ticks`; replayed
//! steps cost `action_ticks`; function calls cost `call_ticks`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::action::{Action, ActionKind, Key, Status};
use crate::calibration::{correct_point, CorrectionOutcome, FailureMemory, Verdict};
use crate::dispatch::{
    execute as execute_call, plan_path, CallRecord, DispatchError, FunctionDescriptor, Registry,
    Route, SimTools, TaskDescriptor,
};
use crate::ensemble::{decide, EnsembleDecision, EnsembleError, Proposal};
use crate::experience::{
    normalize_query, replay, DefaultMatcher, ExperienceEntry, ExperiencePool, ReplayEnv,
    ReplayMode, ReplayResult, Step, TaskStatus, TaskTiming,
};
use crate::memory::{MemoryStore, PersonalTriple, Slot, SlotLexicon};
use crate::planner::{run_plan, ExecutorError, Payload, PlanFile, PlanResult, PlannerError};
use crate::policy::{
    spawn_ensemble, Policy, PolicyError, Rule, ScriptedPolicy, StepContext, StochasticPolicy,
    NEED_FEEDBACK_PREFIX,
};
use crate::screen::{ingest_widgets, FixtureWidget, Screen, ScreenDigest, WidgetRecord};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario schema: {0}")]
    Schema(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("no such device {0}")]
    NoSuchDevice(String),
    #[error("no task for instruction `{0}`")]
    UnknownTask(String),
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("scenario has no plan")]
    NoPlan,
    #[error("plan: {0}")]
    Plan(#[from] PlannerError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("ensemble: {0}")]
    Ensemble(#[from] EnsembleError),
    #[error("dispatch: {0}")]
    Dispatch(#[from] DispatchError),
    #[error("trace record {index}: {reason}")]
    TraceMismatch { index: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Scenario file

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Click(u32),
    Type(u32),
    Press(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub screen: String,
    pub on: Trigger,
    pub to: String,
    /// Target app when switching apps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenSpec {
    pub widgets: Vec<FixtureWidget>,
    /// Elements present on the device but missing from the parsed screen.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hidden: Vec<FixtureWidget>,
    /// Input field focused on arrival.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppSpec {
    pub id: String,
    pub initial: String,
    pub screens: BTreeMap<String, ScreenSpec>,
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: String,
    pub apps: Vec<String>,
    pub launcher: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSelection {
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

/// Value captured from the final screens of a run into the bus payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Export {
    pub key: String,
    pub prefix: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    pub script: Vec<Rule>,
    /// Extra memory slots beyond those found in the instruction.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slots: Vec<Slot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<FunctionSelection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exports: Vec<Export>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub key: String,
    pub replies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub devices: Vec<DeviceSpec>,
    pub apps: Vec<AppSpec>,
    #[serde(default)]
    pub tools: SimTools,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functions: Option<Vec<FunctionDescriptor>>,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub feedback: Vec<FeedbackEntry>,
    #[serde(default)]
    pub memory: Vec<PersonalTriple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanFile>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Schema(e.to_string()))
    }
}

pub const BUNDLED: [(&str, &str); 6] = [
    ("youtube-search", include_str!("../scenarios/youtube-search.json")),
    ("payment-pause", include_str!("../scenarios/payment-pause.json")),
    ("gift-purchase", include_str!("../scenarios/gift-purchase.json")),
    ("email", include_str!("../scenarios/email.json")),
    ("calibration-trap", include_str!("../scenarios/calibration-trap.json")),
    ("call-mom", include_str!("../scenarios/call-mom.json")),
];

pub fn bundled_scenario(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

// ---------------------------------------------------------------------------
// Runtime world

#[derive(Debug, Clone)]
struct SimScreen {
    visible: Screen,
    hidden: Vec<WidgetRecord>,
    focus: Option<u32>,
}

#[derive(Debug, Clone)]
struct SimApp {
    initial: String,
    screens: BTreeMap<String, SimScreen>,
    transitions: BTreeMap<(String, Trigger), (String, String)>,
}

type Location = (String, String);

#[derive(Debug, Clone)]
struct SimDevice {
    apps: Vec<String>,
    launcher: String,
    foreground: Location,
    back: Vec<Location>,
    focus: Option<u32>,
    fields: BTreeMap<(String, String, u32), String>,
}

pub const BACK_STACK_LIMIT: usize = 32;

/// Command applied to a device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceCommand {
    Action(Action),
    /// Empties the focused input field.
    Clear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepEffect {
    pub pre: ScreenDigest,
    pub post: ScreenDigest,
    pub state_changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub ensemble: usize,
    pub seed: u64,
    pub step_cap: usize,
    pub policy_ticks: u64,
    pub action_ticks: u64,
    pub call_ticks: u64,
    pub use_experience: bool,
    pub replay_mode: ReplayModeConfig,
    pub jitter: i32,
    /// Take the function route when the task offers one.
    pub select_function: bool,
    pub archive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayModeConfig {
    #[default]
    Validated,
    Raw,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ensemble: 3,
            seed: 0,
            step_cap: 30,
            policy_ticks: 5,
            action_ticks: 1,
            call_ticks: 1,
            use_experience: true,
            replay_mode: ReplayModeConfig::Validated,
            jitter: StochasticPolicy::DEFAULT_JITTER,
            select_function: true,
            archive: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Gui,
    FunctionCall,
    Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Executed {
    Action(Action),
    Call(CallRecord),
    Clear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub key: String,
    pub reply: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub run: u64,
    pub step: usize,
    pub device: String,
    pub task: String,
    pub kind: StepKind,
    #[serde(default)]
    pub replayed: bool,
    pub start_tick: u64,
    pub end_tick: u64,
    pub digest: ScreenDigest,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub proposals: Vec<Proposal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<EnsembleDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CorrectionOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executed: Option<Executed>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Map<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackEvent>,
    pub post_digest: ScreenDigest,
    pub state_changed: bool,
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn trace_to_string(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_trace(records, &mut buf).expect("writing to a vec");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>, HarnessError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Checks that within each run every record starts where the previous
/// record on the same device ended, and that `state_changed` agrees with
/// the digests.
pub fn check_chain(records: &[TraceRecord]) -> Result<(), HarnessError> {
    let mut last: BTreeMap<(u64, &str), ScreenDigest> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.state_changed != (r.digest != r.post_digest) {
            return Err(HarnessError::TraceMismatch {
                index: i,
                reason: "state_changed disagrees with digests".into(),
            });
        }
        if let Some(prev) = last.get(&(r.run, r.device.as_str())) {
            if *prev != r.digest {
                return Err(HarnessError::TraceMismatch {
                    index: i,
                    reason: format!("digest {} does not follow {}", r.digest, prev),
                });
            }
        }
        last.insert((r.run, r.device.as_str()), r.post_digest);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunRoute {
    Standard,
    Replay,
    /// Replay diverged at `step`; the standard loop took over.
    ReplayFallback { step: usize },
    Function,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run: u64,
    pub device: String,
    pub instruction: String,
    pub status: Status,
    pub route: RunRoute,
    pub cap_exceeded: bool,
    pub policy_invocations: usize,
    pub start_tick: u64,
    pub end_tick: u64,
    pub final_digest: ScreenDigest,
    pub payload: Payload,
    pub unresolved: Vec<String>,
    pub trace: Vec<TraceRecord>,
}

impl RunOutcome {
    pub fn duration(&self) -> u64 {
        self.end_tick - self.start_tick
    }

    /// Executed GUI actions and function calls.
    pub fn steps(&self) -> usize {
        self.trace
            .iter()
            .filter(|r| r.kind != StepKind::Feedback)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeedbackReply {
    Reply(String),
    Decline,
}

/// Scripted human responder: replies queued per request key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeedbackScript {
    queues: BTreeMap<String, VecDeque<String>>,
}

impl FeedbackScript {
    pub fn new(entries: &[FeedbackEntry]) -> Self {
        let mut queues: BTreeMap<String, VecDeque<String>> = BTreeMap::new();
        for e in entries {
            queues
                .entry(e.key.clone())
                .or_default()
                .extend(e.replies.iter().cloned());
        }
        Self { queues }
    }

    fn next(&mut self, key: &str) -> Option<String> {
        self.queues.get_mut(key).and_then(VecDeque::pop_front)
    }
}

/// Answers a feedback request. Keys of the form `relation.field` naming a
/// registered field are validated and stored in memory; an invalid reply is
/// followed by one re-prompt before declining.
pub fn respond_feedback(
    script: &mut FeedbackScript,
    key: &str,
    memory: &mut MemoryStore,
) -> FeedbackReply {
    let slot = key
        .split_once('.')
        .filter(|(_, f)| memory.registry().get(f).is_some());
    let attempts = if slot.is_some() { 2 } else { 1 };
    for _ in 0..attempts {
        let Some(reply) = script.next(key) else {
            return FeedbackReply::Decline;
        };
        match slot {
            None => return FeedbackReply::Reply(reply),
            Some((r, f)) => {
                if memory.update(&PersonalTriple::new(r, f, &reply)).is_ok() {
                    return FeedbackReply::Reply(reply);
                }
            }
        }
    }
    FeedbackReply::Decline
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossDeviceOutcome {
    pub plan: PlanResult,
    pub runs: Vec<RunOutcome>,
}

impl CrossDeviceOutcome {
    pub fn trace(&self) -> Vec<TraceRecord> {
        self.runs.iter().flat_map(|r| r.trace.iter().cloned()).collect()
    }

    pub fn device_trace(&self, device: &str) -> Vec<TraceRecord> {
        self.runs
            .iter()
            .filter(|r| r.device == device)
            .flat_map(|r| r.trace.iter().cloned())
            .collect()
    }
}

/// Simulated devices, tools and stores for one scenario.
#[derive(Debug, Clone)]
pub struct World {
    pub name: String,
    pub seed: u64,
    apps: BTreeMap<String, SimApp>,
    devices: BTreeMap<String, SimDevice>,
    device_order: Vec<String>,
    tasks: Vec<TaskSpec>,
    pub tools: SimTools,
    pub registry: Registry,
    pub feedback: FeedbackScript,
    pub memory: MemoryStore,
    pub experience: ExperiencePool,
    pub failures: FailureMemory,
    pub lexicon: SlotLexicon,
    plan: Option<PlanFile>,
    /// Subtasks whose executor reports a fault instead of running.
    pub injected_faults: BTreeSet<String>,
    clock: u64,
    next_run: u64,
}

fn to_records(list: &[FixtureWidget], ctx: &str) -> Result<Vec<WidgetRecord>, HarnessError> {
    Ok(ingest_widgets(ctx, list)
        .map_err(|e| HarnessError::Schema(format!("{ctx}: {e}")))?
        .widgets)
}

impl World {
    pub fn load(text: &str) -> Result<Self, HarnessError> {
        Self::from_scenario(ScenarioFile::from_json(text)?)
    }

    /// A bundled scenario by name, or a scenario file path.
    pub fn open(name_or_path: &str) -> Result<Self, HarnessError> {
        match bundled_scenario(name_or_path) {
            Some(text) => Self::load(text),
            None => Self::load(&std::fs::read_to_string(name_or_path)?),
        }
    }

    pub fn from_scenario(s: ScenarioFile) -> Result<Self, HarnessError> {
        let dangling = |m: String| Err(HarnessError::DanglingReference(m));
        let mut apps = BTreeMap::new();
        for a in &s.apps {
            let mut screens = BTreeMap::new();
            for (id, spec) in &a.screens {
                let ctx = format!("{}/{}", a.id, id);
                let visible = ingest_widgets(ctx.clone(), &spec.widgets)
                    .map_err(|e| HarnessError::Schema(format!("{ctx}: {e}")))?;
                let hidden = to_records(&spec.hidden, &ctx)?;
                if let Some(f) = spec.focus {
                    if visible.widget(f).is_none() {
                        return dangling(format!("{ctx}: focus widget {f}"));
                    }
                }
                screens.insert(
                    id.clone(),
                    SimScreen {
                        visible,
                        hidden,
                        focus: spec.focus,
                    },
                );
            }
            if !screens.contains_key(&a.initial) {
                return dangling(format!("app {} initial screen {}", a.id, a.initial));
            }
            if apps.contains_key(&a.id) {
                return Err(HarnessError::Schema(format!("app {} declared twice", a.id)));
            }
            apps.insert(
                a.id.clone(),
                SimApp {
                    initial: a.initial.clone(),
                    screens,
                    transitions: BTreeMap::new(),
                },
            );
        }
        for a in &s.apps {
            for t in &a.transitions {
                let src = &apps[&a.id].screens;
                let Some(screen) = src.get(&t.screen) else {
                    return dangling(format!("{}: transition from unknown screen {}", a.id, t.screen));
                };
                match &t.on {
                    Trigger::Click(i) | Trigger::Type(i) => {
                        let known = screen.visible.widget(*i).is_some()
                            || screen.hidden.iter().any(|w| w.index == *i);
                        if !known {
                            return dangling(format!("{}/{}: widget {i}", a.id, t.screen));
                        }
                    }
                    Trigger::Press(k) => {
                        k.parse::<Key>()
                            .map_err(|e| HarnessError::Schema(e.to_string()))?;
                    }
                }
                let target_app = t.app.clone().unwrap_or_else(|| a.id.clone());
                let Some(target) = apps.get(&target_app) else {
                    return dangling(format!("{}: target app {target_app}", a.id));
                };
                if !target.screens.contains_key(&t.to) {
                    return dangling(format!("{}: target screen {target_app}/{}", a.id, t.to));
                }
                let on = match &t.on {
                    Trigger::Press(k) => Trigger::Press(k.to_ascii_uppercase()),
                    other => other.clone(),
                };
                apps.get_mut(&a.id)
                    .unwrap()
                    .transitions
                    .insert((t.screen.clone(), on), (target_app, t.to.clone()));
            }
        }

        let mut devices = BTreeMap::new();
        let mut device_order = Vec::new();
        for d in &s.devices {
            for app in &d.apps {
                if !apps.contains_key(app) {
                    return dangling(format!("device {} installs unknown app {app}", d.id));
                }
            }
            if !d.apps.contains(&d.launcher) {
                return dangling(format!("device {} launcher {} not installed", d.id, d.launcher));
            }
            let home = (d.launcher.clone(), apps[&d.launcher].initial.clone());
            devices.insert(
                d.id.clone(),
                SimDevice {
                    apps: d.apps.clone(),
                    launcher: d.launcher.clone(),
                    foreground: home,
                    back: Vec::new(),
                    focus: None,
                    fields: BTreeMap::new(),
                },
            );
            device_order.push(d.id.clone());
        }
        if devices.is_empty() {
            return Err(HarnessError::Schema("scenario has no devices".into()));
        }
        for t in &s.tasks {
            if let Some(d) = &t.device {
                if !devices.contains_key(d) {
                    return dangling(format!("task {} device {d}", t.id));
                }
            }
        }

        let registry = match &s.functions {
            Some(fs) => {
                let mut r = Registry::new();
                for f in fs {
                    r.register(f.clone())?;
                }
                r
            }
            None => Registry::with_default_toolkits(),
        };
        let mut memory = MemoryStore::default();
        for t in &s.memory {
            memory
                .update(t)
                .map_err(|e| HarnessError::Schema(format!("memory seed: {e}")))?;
        }
        let mut world = Self {
            name: s.name,
            seed: s.seed,
            apps,
            devices,
            device_order,
            tasks: s.tasks,
            tools: s.tools,
            registry,
            feedback: FeedbackScript::new(&s.feedback),
            memory,
            experience: ExperiencePool::new(),
            failures: FailureMemory::new(),
            lexicon: SlotLexicon::default(),
            plan: None,
            injected_faults: BTreeSet::new(),
            clock: 0,
            next_run: 0,
        };
        if let Some(p) = s.plan {
            world.set_plan(p)?;
        }
        Ok(world)
    }

    /// Installs a plan after checking that every subtask names a task and
    /// every endpoint a device.
    pub fn set_plan(&mut self, plan: PlanFile) -> Result<(), HarnessError> {
        for st in &plan.subtasks {
            if self.find_task(&st.description).is_err() {
                return Err(HarnessError::DanglingReference(format!(
                    "plan subtask {} has no task",
                    st.id
                )));
            }
        }
        for e in &plan.endpoints {
            let dev = e.device.as_ref().unwrap_or(&e.id);
            if !self.devices.contains_key(dev) {
                return Err(HarnessError::DanglingReference(format!(
                    "plan endpoint {} device {dev}",
                    e.id
                )));
            }
        }
        plan.clone().into_plan()?;
        self.plan = Some(plan);
        Ok(())
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn device_ids(&self) -> &[String] {
        &self.device_order
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn plan(&self) -> Option<&PlanFile> {
        self.plan.as_ref()
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            ..PipelineConfig::default()
        }
    }

    fn device(&self, id: &str) -> Result<&SimDevice, HarnessError> {
        self.devices
            .get(id)
            .ok_or_else(|| HarnessError::NoSuchDevice(id.to_string()))
    }

    fn sim_screen(&self, loc: &Location) -> &SimScreen {
        &self.apps[&loc.0].screens[&loc.1]
    }

    /// Current `(app, screen)` of a device.
    pub fn location(&self, device: &str) -> Result<(String, String), HarnessError> {
        Ok(self.device(device)?.foreground.clone())
    }

    /// The parsed screen as the agent sees it, with typed text applied.
    pub fn render(&self, device: &str) -> Result<Screen, HarnessError> {
        let d = self.device(device)?;
        let (app, sid) = &d.foreground;
        let mut screen = self.sim_screen(&d.foreground).visible.clone();
        screen.screen_id = format!("{app}/{sid}");
        for w in &mut screen.widgets {
            if let Some(text) = d.fields.get(&(app.clone(), sid.clone(), w.index)) {
                w.content = text.clone();
            }
        }
        Ok(screen)
    }

    pub fn digest(&self, device: &str) -> Result<ScreenDigest, HarnessError> {
        Ok(self.render(device)?.digest())
    }

    /// Back to the launcher with no history, focus or typed text.
    pub fn reset_device(&mut self, device: &str) -> Result<(), HarnessError> {
        let launcher = self.device(device)?.launcher.clone();
        let home = (launcher.clone(), self.apps[&launcher].initial.clone());
        let d = self.devices.get_mut(device).unwrap();
        d.foreground = home;
        d.back.clear();
        d.focus = None;
        d.fields.clear();
        Ok(())
    }

    /// Replaces the content of one widget in an app's screen definition.
    pub fn mutate_widget(
        &mut self,
        app: &str,
        screen: &str,
        index: u32,
        content: &str,
    ) -> Result<(), HarnessError> {
        let w = self
            .apps
            .get_mut(app)
            .and_then(|a| a.screens.get_mut(screen))
            .and_then(|s| s.visible.widget_mut(index))
            .ok_or_else(|| {
                HarnessError::DanglingReference(format!("{app}/{screen} widget {index}"))
            })?;
        w.content = content.to_string();
        Ok(())
    }

    fn navigate(&mut self, device: &str, target: Location) {
        let focus = self.sim_screen(&target).focus;
        let d = self.devices.get_mut(device).unwrap();
        if !d.apps.contains(&target.0) {
            return;
        }
        let prev = std::mem::replace(&mut d.foreground, target);
        d.back.push(prev);
        if d.back.len() > BACK_STACK_LIMIT {
            d.back.remove(0);
        }
        d.focus = focus;
    }

    fn transition(&self, device: &str, trigger: &Trigger) -> Option<Location> {
        let d = &self.devices[device];
        let (app, sid) = &d.foreground;
        self.apps[app]
            .transitions
            .get(&(sid.clone(), trigger.clone()))
            .cloned()
    }

    fn apply(&mut self, device: &str, cmd: &DeviceCommand) -> Result<StepEffect, HarnessError> {
        let pre = self.digest(device)?;
        match cmd {
            DeviceCommand::Clear => {
                let d = self.devices.get_mut(device).unwrap();
                if let Some(f) = d.focus {
                    let (app, sid) = d.foreground.clone();
                    d.fields.insert((app, sid, f), String::new());
                }
            }
            DeviceCommand::Action(a) => match a.kind() {
                ActionKind::Click | ActionKind::LongPress => {
                    let p = a.point.expect("click carries a point");
                    let d = &self.devices[device];
                    let screen = self.sim_screen(&d.foreground);
                    let mut hits: Vec<&WidgetRecord> = screen
                        .visible
                        .widgets
                        .iter()
                        .chain(&screen.hidden)
                        .filter(|w| w.bbox.contains(p))
                        .collect();
                    hits.sort_by_key(|w| (w.bbox.area(), w.index));
                    let target = hits.iter().find_map(|w| {
                        let t = self.transition(device, &Trigger::Click(w.index));
                        if t.is_some() || w.is_input() {
                            Some((w.index, w.is_input(), t))
                        } else {
                            None
                        }
                    });
                    match target {
                        Some((_, _, Some(loc))) => self.navigate(device, loc),
                        Some((idx, true, None)) => {
                            self.devices.get_mut(device).unwrap().focus = Some(idx);
                        }
                        _ => {}
                    }
                }
                ActionKind::Type => {
                    let d = self.devices.get_mut(device).unwrap();
                    if let Some(f) = d.focus {
                        let (app, sid) = d.foreground.clone();
                        let text = a.type_text.clone().unwrap_or_default();
                        d.fields.insert((app, sid, f), text);
                        if let Some(loc) = self.transition(device, &Trigger::Type(f)) {
                            self.navigate(device, loc);
                        }
                    }
                }
                ActionKind::Press => match a.press.expect("press carries a key") {
                    Key::Home => {
                        let launcher = self.devices[device].launcher.clone();
                        let home = (launcher.clone(), self.apps[&launcher].initial.clone());
                        let d = self.devices.get_mut(device).unwrap();
                        if d.foreground != home {
                            d.foreground = home;
                            d.back.clear();
                            d.focus = None;
                        }
                    }
                    Key::Back => {
                        let popped = self.devices.get_mut(device).unwrap().back.pop();
                        if let Some(loc) = popped {
                            let focus = self.sim_screen(&loc).focus;
                            let d = self.devices.get_mut(device).unwrap();
                            d.foreground = loc;
                            d.focus = focus;
                        }
                    }
                    Key::Enter => {
                        if let Some(loc) = self.transition(device, &Trigger::Press("ENTER".into())) {
                            self.navigate(device, loc);
                        }
                    }
                },
                ActionKind::Swipe | ActionKind::Wait | ActionKind::Status => {}
            },
        }
        let post = self.digest(device)?;
        Ok(StepEffect {
            pre,
            post,
            state_changed: pre != post,
        })
    }

    /// Applies one command and advances the clock by one tick.
    pub fn step_device(
        &mut self,
        device: &str,
        cmd: &DeviceCommand,
    ) -> Result<StepEffect, HarnessError> {
        let effect = self.apply(device, cmd)?;
        self.clock += 1;
        Ok(effect)
    }

    fn find_task(&self, instruction: &str) -> Result<&TaskSpec, HarnessError> {
        let norm = normalize_query(instruction);
        self.tasks
            .iter()
            .find(|t| normalize_query(&t.instruction) == norm)
            .ok_or_else(|| HarnessError::UnknownTask(instruction.to_string()))
    }

    /// Default device for a task: its declared device or the first device.
    pub fn task_device(&self, instruction: &str) -> Result<String, HarnessError> {
        let t = self.find_task(instruction)?;
        Ok(t.device.clone().unwrap_or_else(|| self.device_order[0].clone()))
    }

    pub fn run_pipeline(
        &mut self,
        device: &str,
        instruction: &str,
        cfg: &PipelineConfig,
    ) -> Result<RunOutcome, HarnessError> {
        self.run_pipeline_with(device, instruction, cfg, &Payload::new())
    }

    /// Runs one task with extra context values (e.g. a bus payload).
    pub fn run_pipeline_with(
        &mut self,
        device: &str,
        instruction: &str,
        cfg: &PipelineConfig,
        inbox: &Payload,
    ) -> Result<RunOutcome, HarnessError> {
        if instruction.trim().is_empty() {
            return Err(HarnessError::EmptyInstruction);
        }
        self.device(device)?;
        let task = self.find_task(instruction)?.clone();
        let run = self.next_run;
        self.next_run += 1;
        self.reset_device(device)?;

        let mut st = RunState {
            run,
            device: device.to_string(),
            task: task.instruction.clone(),
            trace: Vec::new(),
            context: inbox.clone(),
            history: Vec::new(),
            seen: Vec::new(),
            policy_invocations: 0,
            start_tick: self.clock,
        };

        let mut slots = self.lexicon.parse(instruction);
        for s in &task.slots {
            if !slots.contains(s) {
                slots.push(s.clone());
            }
        }
        let home = self.render(device)?;
        self.memory.sync_clock(self.clock);
        let injected = self.memory.inject_context(instruction, &slots, Some(&home));
        st.context.extend(injected.resolved.clone());
        let unresolved = injected.unresolved;

        if cfg.select_function {
            if let Some(sel) = &task.function {
                let desc = TaskDescriptor {
                    instruction: instruction.to_string(),
                    selected_function: Some(sel.name.clone()),
                    params: sel.params.clone(),
                };
                if let Route::Function(call) = plan_path(&desc, &self.registry)? {
                    let digest = self.digest(device)?;
                    let start = self.clock;
                    let result = execute_call(&call, &mut self.tools);
                    self.clock += cfg.call_ticks;
                    let ok = result.is_ok();
                    st.trace.push(TraceRecord {
                        run,
                        step: 0,
                        device: device.to_string(),
                        task: st.task.clone(),
                        kind: StepKind::FunctionCall,
                        replayed: false,
                        start_tick: start,
                        end_tick: self.clock,
                        digest,
                        proposals: Vec::new(),
                        decision: None,
                        calibration: None,
                        executed: Some(Executed::Call(call.record())),
                        result: Some(match result {
                            Ok(m) => m,
                            Err(e) => {
                                let mut m = Map::new();
                                m.insert("error".into(), Value::String(e.to_string()));
                                m
                            }
                        }),
                        feedback: None,
                        post_digest: digest,
                        state_changed: false,
                    });
                    let status = if ok { Status::Finish } else { Status::Impossible };
                    return self.finish_run(st, status, RunRoute::Function, false, cfg, &task, unresolved);
                }
            }
        }

        let mut route = RunRoute::Standard;
        if cfg.use_experience {
            let matched = self
                .experience
                .find_match(instruction, &DefaultMatcher)
                .cloned();
            if let Some(entry) = matched {
                let mode = match cfg.replay_mode {
                    ReplayModeConfig::Validated => ReplayMode::Validated,
                    ReplayModeConfig::Raw => ReplayMode::Raw,
                };
                let result = {
                    let mut env = ReplayAdapter {
                        world: self,
                        st: &mut st,
                        cfg,
                    };
                    replay(&entry, &mut env, mode).map_err(|e| HarnessError::Schema(e.to_string()))?
                };
                match result {
                    ReplayResult::Completed { .. } => {
                        return self.finish_run(st, Status::Finish, RunRoute::Replay, false, cfg, &task, unresolved);
                    }
                    ReplayResult::Diverged { step, .. } => {
                        route = RunRoute::ReplayFallback { step };
                    }
                }
            }
        }

        let seeds: Vec<u64> = (0..cfg.ensemble.max(1) as u64)
            .map(|i| cfg.seed.wrapping_mul(1_000_003).wrapping_add(i))
            .collect();
        let script = task.script.clone();
        let jitter = cfg.jitter;
        let mut agents = spawn_ensemble(
            |s| StochasticPolicy::with_jitter(ScriptedPolicy::new(script.clone()), s, jitter),
            &seeds,
        );

        loop {
            if st.trace.len() >= cfg.step_cap {
                return self.finish_run(st, Status::Impossible, route, true, cfg, &task, unresolved);
            }
            let screen = self.render(device)?;
            let digest = screen.digest();
            st.seen.push(screen.clone());
            let ctx = StepContext {
                instruction: instruction.to_string(),
                context: st.context.clone(),
                history: st.history.clone(),
                screen: screen.clone(),
            };
            let start = self.clock;
            let mut proposals = Vec::with_capacity(agents.len());
            for (i, agent) in agents.iter_mut().enumerate() {
                let mut p = agent.propose(&ctx)?;
                p.agent_index = i;
                proposals.push(p);
            }
            st.policy_invocations += agents.len();
            self.clock += cfg.policy_ticks;
            let decision = decide(&proposals)?;
            let action = decision.action.clone();
            let step = st.trace.len();
            let mut record = TraceRecord {
                run,
                step,
                device: device.to_string(),
                task: st.task.clone(),
                kind: StepKind::Gui,
                replayed: false,
                start_tick: start,
                end_tick: start,
                digest,
                proposals,
                decision: Some(decision),
                calibration: None,
                executed: None,
                result: None,
                feedback: None,
                post_digest: digest,
                state_changed: false,
            };

            if action.point.is_none() && action.kind() == ActionKind::Status {
                let status = action.status.expect("status kind");
                if status == Status::NeedFeedback {
                    let thought = &record.decision.as_ref().unwrap().thought;
                    let key = thought
                        .strip_prefix(NEED_FEEDBACK_PREFIX)
                        .unwrap_or("input")
                        .to_string();
                    let reply = respond_feedback(&mut self.feedback, &key, &mut self.memory);
                    record.kind = StepKind::Feedback;
                    record.end_tick = self.clock;
                    let reply = match reply {
                        FeedbackReply::Reply(v) => Some(v),
                        FeedbackReply::Decline => None,
                    };
                    record.feedback = Some(FeedbackEvent {
                        key: key.clone(),
                        reply: reply.clone(),
                    });
                    st.trace.push(record);
                    match reply {
                        Some(v) => {
                            st.context.insert(key, v);
                            continue;
                        }
                        None => {
                            return self.finish_run(st, Status::Impossible, route, false, cfg, &task, unresolved)
                        }
                    }
                }
                self.clock += cfg.action_ticks;
                record.end_tick = self.clock;
                record.executed = Some(Executed::Action(action.clone()));
                st.history.push((digest, action.clone()));
                st.trace.push(record);
                if status.is_terminal() {
                    return self.finish_run(st, status, route, false, cfg, &task, unresolved);
                }
                continue;
            }

            let mut executed = action.clone();
            if matches!(action.kind(), ActionKind::Click | ActionKind::LongPress) {
                let outcome = correct_point(action.point.unwrap(), &screen, &self.failures);
                executed.point = Some(outcome.final_point);
                record.calibration = Some(outcome);
            }
            let effect = self.apply(device, &DeviceCommand::Action(executed.clone()))?;
            self.clock += cfg.action_ticks;
            if let Some(c) = &record.calibration {
                if c.verdict == Verdict::Corrected && !effect.state_changed {
                    self.failures.record_failure(digest, c.final_point);
                }
            }
            record.end_tick = self.clock;
            record.post_digest = effect.post;
            record.state_changed = effect.state_changed;
            record.executed = Some(Executed::Action(executed.clone()));
            st.history.push((digest, executed.clone()));
            st.trace.push(record);
            if let Some(s) = executed.terminal_status() {
                return self.finish_run(st, s, route, false, cfg, &task, unresolved);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_run(
        &mut self,
        mut st: RunState,
        status: Status,
        route: RunRoute,
        cap_exceeded: bool,
        cfg: &PipelineConfig,
        task: &TaskSpec,
        unresolved: Vec<String>,
    ) -> Result<RunOutcome, HarnessError> {
        let final_screen = self.render(&st.device)?;
        let final_digest = final_screen.digest();
        st.seen.push(final_screen);
        let end_tick = self.clock;

        if status == Status::Finish && route != RunRoute::Replay && route != RunRoute::Function && cfg.archive {
            let steps: Vec<Step> = st
                .trace
                .iter()
                .filter(|r| r.kind == StepKind::Gui)
                .filter_map(|r| match &r.executed {
                    Some(Executed::Action(a)) => Some(Step {
                        digest: r.digest,
                        action: a.clone(),
                    }),
                    _ => None,
                })
                .collect();
            self.experience.archive(ExperienceEntry {
                query: st.task.clone(),
                status: TaskStatus::Success,
                steps,
                timing: TaskTiming {
                    start: st.start_tick,
                    end: end_tick,
                    duration: end_tick - st.start_tick,
                    final_digest: Some(final_digest),
                },
            });
        }

        let mut payload = Payload::new();
        if status == Status::Finish {
            for e in &task.exports {
                let found = st.seen.iter().rev().find_map(|s| {
                    s.widgets
                        .iter()
                        .find_map(|w| w.content.strip_prefix(e.prefix.as_str()))
                        .map(|v| v.trim().to_string())
                });
                if let Some(v) = found {
                    payload.insert(e.key.clone(), v);
                }
            }
        }

        Ok(RunOutcome {
            run: st.run,
            device: st.device,
            instruction: st.task,
            status,
            route,
            cap_exceeded,
            policy_invocations: st.policy_invocations,
            start_tick: st.start_tick,
            end_tick,
            final_digest,
            payload,
            unresolved,
            trace: st.trace,
        })
    }

    /// Replays an archived entry on a device reset to its launcher.
    pub fn replay_entry(
        &mut self,
        device: &str,
        entry: &ExperienceEntry,
        mode: ReplayMode,
        cfg: &PipelineConfig,
    ) -> Result<(ReplayResult, Vec<TraceRecord>), HarnessError> {
        self.reset_device(device)?;
        let run = self.next_run;
        self.next_run += 1;
        let mut st = RunState {
            run,
            device: device.to_string(),
            task: entry.query.clone(),
            trace: Vec::new(),
            context: BTreeMap::new(),
            history: Vec::new(),
            seen: Vec::new(),
            policy_invocations: 0,
            start_tick: self.clock,
        };
        let result = {
            let mut env = ReplayAdapter {
                world: self,
                st: &mut st,
                cfg,
            };
            replay(entry, &mut env, mode).map_err(|e| HarnessError::Schema(e.to_string()))?
        };
        Ok((result, st.trace))
    }

    /// Drives the scenario plan, one pipeline run per subtask.
    pub fn run_cross_device(&mut self, cfg: &PipelineConfig) -> Result<CrossDeviceOutcome, HarnessError> {
        let plan = self.plan.clone().ok_or(HarnessError::NoPlan)?.into_plan()?;
        let mut runs = Vec::new();
        let mut executor = |endpoint: &crate::planner::Endpoint,
                            subtask: &crate::planner::Subtask,
                            inbox: &Payload|
         -> Result<Payload, ExecutorError> {
            if self.injected_faults.contains(&subtask.id) {
                return Err(ExecutorError(format!("injected fault on {}", endpoint.id)));
            }
            let device = endpoint.device.clone().unwrap_or_else(|| endpoint.id.clone());
            let out = self
                .run_pipeline_with(&device, &subtask.description, cfg, inbox)
                .map_err(|e| ExecutorError(e.to_string()))?;
            let status = out.status;
            let payload = out.payload.clone();
            runs.push(out);
            if status == Status::Finish {
                Ok(payload)
            } else {
                Err(ExecutorError(format!("{} ended with {}", subtask.id, status.as_str())))
            }
        };
        let result = run_plan(&plan, &mut executor);
        Ok(CrossDeviceOutcome { plan: result, runs })
    }

    /// Runs the scenario's plan if it has one, otherwise its first task.
    pub fn run_default(&mut self, cfg: &PipelineConfig) -> Result<Vec<TraceRecord>, HarnessError> {
        if self.plan.is_some() {
            return Ok(self.run_cross_device(cfg)?.trace());
        }
        let instruction = self
            .tasks
            .first()
            .ok_or_else(|| HarnessError::Schema("scenario has no tasks".into()))?
            .instruction
            .clone();
        let device = self.task_device(&instruction)?;
        Ok(self.run_pipeline(&device, &instruction, cfg)?.trace)
    }
}

struct RunState {
    run: u64,
    device: String,
    task: String,
    trace: Vec<TraceRecord>,
    context: BTreeMap<String, String>,
    history: Vec<(ScreenDigest, Action)>,
    seen: Vec<Screen>,
    policy_invocations: usize,
    start_tick: u64,
}

struct ReplayAdapter<'a> {
    world: &'a mut World,
    st: &'a mut RunState,
    cfg: &'a PipelineConfig,
}

impl ReplayEnv for ReplayAdapter<'_> {
    fn current_digest(&mut self) -> ScreenDigest {
        self.world
            .digest(&self.st.device)
            .expect("device checked at run start")
    }

    fn execute(&mut self, action: &Action) -> Result<(), String> {
        let start = self.world.clock;
        let effect = self
            .world
            .apply(&self.st.device, &DeviceCommand::Action(action.clone()))
            .map_err(|e| e.to_string())?;
        self.world.clock += self.cfg.action_ticks;
        self.st.history.push((effect.pre, action.clone()));
        let step = self.st.trace.len();
        self.st.trace.push(TraceRecord {
            run: self.st.run,
            step,
            device: self.st.device.clone(),
            task: self.st.task.clone(),
            kind: StepKind::Gui,
            replayed: true,
            start_tick: start,
            end_tick: self.world.clock,
            digest: effect.pre,
            proposals: Vec::new(),
            decision: None,
            calibration: None,
            executed: Some(Executed::Action(action.clone())),
            result: None,
            feedback: None,
            post_digest: effect.post,
            state_changed: effect.state_changed,
        });
        Ok(())
    }
}

/// Re-simulates a trace on a fresh world and checks every digest.
pub fn verify_trace(scenario: &ScenarioFile, records: &[TraceRecord]) -> Result<(), HarnessError> {
    check_chain(records)?;
    let mut world = World::from_scenario(scenario.clone())?;
    for (i, r) in records.iter().enumerate() {
        if r.step == 0 {
            world.reset_device(&r.device)?;
        }
        let now = world.digest(&r.device)?;
        if now != r.digest {
            return Err(HarnessError::TraceMismatch {
                index: i,
                reason: format!("expected pre-state {}, simulated {}", r.digest, now),
            });
        }
        match &r.executed {
            Some(Executed::Action(a)) => {
                world.apply(&r.device, &DeviceCommand::Action(a.clone()))?;
            }
            Some(Executed::Clear) => {
                world.apply(&r.device, &DeviceCommand::Clear)?;
            }
            Some(Executed::Call(c)) => {
                let call = crate::dispatch::resolve(
                    &world.registry,
                    &c.call,
                    &c.args.clone().into_iter().collect(),
                )?;
                let _ = execute_call(&call, &mut world.tools);
            }
            None => {}
        }
        let post = world.digest(&r.device)?;
        if post != r.post_digest {
            return Err(HarnessError::TraceMismatch {
                index: i,
                reason: format!("expected post-state {}, simulated {}", r.post_digest, post),
            });
        }
    }
    Ok(())
}

/// Per-run summary derived from a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: u64,
    pub device: String,
    pub task: String,
    pub route: String,
    pub steps: usize,
    pub policy_calls: usize,
    pub ticks: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMetrics {
    pub runs: Vec<RunMetrics>,
    /// Replay-route runs over all runs.
    pub hit_rate: Option<f64>,
    /// Mean `1 - T_replay / T_std` over replayed runs with a standard
    /// baseline for the same task.
    pub efficiency_gain: Option<f64>,
}

pub fn trace_metrics(records: &[TraceRecord]) -> TraceMetrics {
    let mut grouped: BTreeMap<u64, Vec<&TraceRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.run).or_default().push(r);
    }
    let runs: Vec<RunMetrics> = grouped
        .into_iter()
        .map(|(run, rs)| {
            let executed: Vec<_> = rs.iter().filter(|r| r.kind != StepKind::Feedback).collect();
            let route = if rs.iter().any(|r| r.kind == StepKind::FunctionCall) {
                "function"
            } else if rs.iter().all(|r| r.replayed) {
                "replay"
            } else if rs.iter().any(|r| r.replayed) {
                "replay_fallback"
            } else {
                "standard"
            };
            RunMetrics {
                run,
                device: rs[0].device.clone(),
                task: rs[0].task.clone(),
                route: route.to_string(),
                steps: executed.len(),
                policy_calls: rs.iter().map(|r| r.proposals.len()).sum(),
                ticks: rs.last().unwrap().end_tick - rs[0].start_tick,
            }
        })
        .collect();
    let hit_rate = (!runs.is_empty()).then(|| {
        runs.iter().filter(|r| r.route == "replay").count() as f64 / runs.len() as f64
    });
    let gains: Vec<f64> = runs
        .iter()
        .filter(|r| r.route == "replay")
        .filter_map(|r| {
            runs.iter()
                .find(|s| s.route == "standard" && s.task == r.task && s.ticks > 0)
                .map(|s| 1.0 - r.ticks as f64 / s.ticks as f64)
        })
        .collect();
    let efficiency_gain =
        (!gains.is_empty()).then(|| gains.iter().sum::<f64>() / gains.len() as f64);
    TraceMetrics {
        runs,
        hit_rate,
        efficiency_gain,
    }
}

impl TraceMetrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,device,task,route,steps,policy_calls,ticks\n");
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},\"{}\",{},{},{},{}\n",
                r.run,
                r.device,
                r.task.replace('"', "\"\""),
                r.route,
                r.steps,
                r.policy_calls,
                r.ticks
            ));
        }
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        out.push_str(&format!("# H,{}\n# eta,{}\n", fmt(self.hit_rate), fmt(self.efficiency_gain)));
        out
    }
}
