//! Decision sources that map a step context to a proposal.
//!
//! [`ScriptedPolicy`] follows a JSON script of `{match, emit}` rules:
//!
//! ```json
//! [
//!   {"match": {"has_widget": "YouTube"}, "emit": {"tap": "YouTube"}, "thought": "open the app"},
//!   {"match": {"contains": "Search"}, "emit": {"type": "{query}"}},
//!   {"match": "any", "emit": {"action": {"STATUS": "finish"}}}
//! ]
//! ```
//!
//! Predicates: `"any"`, `{"has_widget": s}` (some widget's content equals
//! `s`), `{"contains": s}` (some widget's content contains `s`),
//! `{"all_of": [..]}` and `{"not": p}`. Emits: `{"tap": s}` clicks the center
//! of the first widget whose content equals `s`, `{"type": template}` types
//! the template with `{key}` placeholders filled from the context, and
//! `{"action": record}` emits a literal compact action.
//!
//! Rules are searched starting at a cursor and wrapping around once; the
//! cursor moves past each rule that fires. A template key missing from the
//! context yields `STATUS need_feedback` with thought `need_feedback:<key>`
//! and leaves the cursor in place. When nothing matches the policy reports
//! `STATUS impossible`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::action::{Action, Point, Status, COORD_MAX};
use crate::ensemble::Proposal;
use crate::screen::{Screen, ScreenDigest};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("policy fault: {0}")]
    Fault(String),
}

pub const NEED_FEEDBACK_PREFIX: &str = "need_feedback:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepContext {
    pub instruction: String,
    /// Resolved context values, e.g. `mother.phone_number`.
    pub context: BTreeMap<String, String>,
    pub history: Vec<(ScreenDigest, Action)>,
    pub screen: Screen,
}

impl StepContext {
    pub fn new(instruction: impl Into<String>, screen: Screen) -> Self {
        Self {
            instruction: instruction.into(),
            context: BTreeMap::new(),
            history: Vec::new(),
            screen,
        }
    }

    pub fn block(&self) -> String {
        self.context
            .iter()
            .map(|(k, v)| format!("{k}: {v}\n"))
            .collect()
    }
}

pub trait Policy {
    fn propose(&mut self, ctx: &StepContext) -> Result<Proposal, PolicyError>;

    /// Returns the policy to its freshly constructed state.
    fn reset(&mut self) {}
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn propose(&mut self, ctx: &StepContext) -> Result<Proposal, PolicyError> {
        (**self).propose(ctx)
    }

    fn reset(&mut self) {
        (**self).reset()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Any,
    HasWidget(String),
    Contains(String),
    AllOf(Vec<Predicate>),
    Not(Box<Predicate>),
}

impl Default for Predicate {
    fn default() -> Self {
        Self::Any
    }
}

impl Predicate {
    pub fn matches(&self, screen: &Screen) -> bool {
        match self {
            Self::Any => true,
            Self::HasWidget(s) => screen.widgets.iter().any(|w| &w.content == s),
            Self::Contains(s) => screen.widgets.iter().any(|w| w.content.contains(s.as_str())),
            Self::AllOf(ps) => ps.iter().all(|p| p.matches(screen)),
            Self::Not(p) => !p.matches(screen),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Tap(String),
    Type(String),
    Action(Action),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(rename = "match", default)]
    pub predicate: Predicate,
    pub emit: Emit,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub thought: String,
}

/// Fills `{key}` placeholders. Returns the first missing key on failure.
pub fn fill_template(template: &str, values: &BTreeMap<String, String>) -> Result<String, String> {
    let mut out = String::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            break;
        };
        out.push_str(&rest[..open]);
        let key = &rest[open + 1..open + close];
        match values.get(key) {
            Some(v) => out.push_str(v),
            None => return Err(key.to_string()),
        }
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedPolicy {
    rules: Vec<Rule>,
    cursor: usize,
}

impl ScriptedPolicy {
    pub fn new(rules: Vec<Rule>) -> Self {
        Self { rules, cursor: 0 }
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let rules: Vec<Rule> =
            serde_json::from_str(text).map_err(|e| PolicyError::Fault(e.to_string()))?;
        for r in &rules {
            if let Emit::Action(a) = &r.emit {
                a.validate().map_err(|e| PolicyError::Fault(e.to_string()))?;
            }
        }
        Ok(Self::new(rules))
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    fn status(status: Status, thought: impl Into<String>) -> Proposal {
        Proposal::new(0, Action::status(status), thought)
    }
}

impl Policy for ScriptedPolicy {
    fn propose(&mut self, ctx: &StepContext) -> Result<Proposal, PolicyError> {
        let n = self.rules.len();
        let Some(i) = (0..n)
            .map(|k| (self.cursor + k) % n)
            .find(|&i| self.rules[i].predicate.matches(&ctx.screen))
        else {
            return Ok(Self::status(Status::Impossible, "no rule matches this screen"));
        };
        let rule = &self.rules[i];
        let action = match &rule.emit {
            Emit::Tap(content) => match ctx.screen.find_by_content(content) {
                Some(w) => Action::click(w.bbox.center()),
                None => {
                    return Ok(Self::status(
                        Status::Impossible,
                        format!("no widget `{content}` to tap"),
                    ))
                }
            },
            Emit::Type(template) => match fill_template(template, &ctx.context) {
                Ok(text) => Action::type_text(text),
                Err(key) => {
                    return Ok(Self::status(
                        Status::NeedFeedback,
                        format!("{NEED_FEEDBACK_PREFIX}{key}"),
                    ))
                }
            },
            Emit::Action(a) => a.clone(),
        };
        let thought = rule.thought.clone();
        self.cursor = i + 1;
        Ok(Proposal::new(0, action, thought))
    }

    fn reset(&mut self) {
        self.cursor = 0;
    }
}

/// Scripted policy plus seeded uniform jitter on coordinates.
#[derive(Debug, Clone)]
pub struct StochasticPolicy {
    inner: ScriptedPolicy,
    seed: u64,
    rng: ChaCha8Rng,
    jitter: i32,
}

impl StochasticPolicy {
    pub const DEFAULT_JITTER: i32 = 15;

    pub fn new(inner: ScriptedPolicy, seed: u64) -> Self {
        Self::with_jitter(inner, seed, Self::DEFAULT_JITTER)
    }

    pub fn with_jitter(inner: ScriptedPolicy, seed: u64, jitter: i32) -> Self {
        Self {
            inner,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            jitter: jitter.abs(),
        }
    }
}

impl Policy for StochasticPolicy {
    fn propose(&mut self, ctx: &StepContext) -> Result<Proposal, PolicyError> {
        let mut p = self.inner.propose(ctx)?;
        if let Some(pt) = p.action.point {
            let j = self.jitter;
            let dx = self.rng.gen_range(-j..=j);
            let dy = self.rng.gen_range(-j..=j);
            p.action.point = Some(Point::new(
                (pt.x + dx).clamp(0, COORD_MAX),
                (pt.y + dy).clamp(0, COORD_MAX),
            ));
        }
        Ok(p)
    }

    fn reset(&mut self) {
        self.inner.reset();
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }
}

/// One policy per seed.
pub fn spawn_ensemble<P, F: FnMut(u64) -> P>(mut factory: F, seeds: &[u64]) -> Vec<P> {
    seeds.iter().map(|&s| factory(s)).collect()
}

/// Request/response channel to an external model.
pub trait Transport {
    fn request(&mut self, body: &str) -> Result<String, String>;
}

/// Sends the context as JSON and expects `{"action": {..}, "thought": ".."}`.
#[derive(Debug)]
pub struct RemotePolicy<T> {
    transport: T,
}

impl<T: Transport> RemotePolicy<T> {
    pub fn new(transport: T) -> Self {
        Self { transport }
    }
}

#[derive(Deserialize)]
struct RemoteReply {
    action: Action,
    #[serde(default)]
    thought: String,
}

impl<T: Transport> Policy for RemotePolicy<T> {
    fn propose(&mut self, ctx: &StepContext) -> Result<Proposal, PolicyError> {
        let history: Vec<_> = ctx
            .history
            .iter()
            .map(|(d, a)| json!({"digest": d, "action": a}))
            .collect();
        let body = json!({
            "instruction": ctx.instruction,
            "context": ctx.context,
            "history": history,
            "screen": ctx.screen,
        })
        .to_string();
        let reply = self.transport.request(&body).map_err(PolicyError::Fault)?;
        let reply: RemoteReply =
            serde_json::from_str(&reply).map_err(|e| PolicyError::Fault(e.to_string()))?;
        Ok(Proposal::new(0, reply.action, reply.thought))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::screen::ingest_json;

    fn home() -> Screen {
        ingest_json("home", include_str!("../fixtures/home_widgets.json")).unwrap()
    }

    fn script() -> ScriptedPolicy {
        ScriptedPolicy::from_json(
            r#"[
                {"match": {"has_widget": "YouTube"}, "emit": {"tap": "YouTube"}, "thought": "open YouTube"},
                {"match": {"contains": "Aug"}, "emit": {"type": "call {mother.phone_number}"}},
                {"match": "any", "emit": {"action": {"STATUS": "finish"}}}
            ]"#,
        )
        .unwrap()
    }

    #[test]
    fn tap_lands_inside_widget() {
        let s = home();
        let mut p = script();
        let out = p.propose(&StepContext::new("open youtube", s.clone())).unwrap();
        let yt = s.find_by_content("YouTube").unwrap();
        assert!(yt.bbox.contains(out.action.point.unwrap()));
        assert_eq!(out.thought, "open YouTube");
    }

    #[test]
    fn missing_key_requests_feedback_without_advancing() {
        let mut p = script();
        let mut ctx = StepContext::new("call mom", home());
        p.propose(&ctx).unwrap();
        let out = p.propose(&ctx).unwrap();
        assert_eq!(out.action, Action::status(Status::NeedFeedback));
        assert_eq!(out.thought, "need_feedback:mother.phone_number");
        ctx.context.insert("mother.phone_number".into(), "13951696300".into());
        let out = p.propose(&ctx).unwrap();
        assert_eq!(out.action, Action::type_text("call 13951696300"));
        let out = p.propose(&ctx).unwrap();
        assert_eq!(out.action, Action::status(Status::Finish));
    }

    #[test]
    fn exhausted_or_unmatched_is_impossible() {
        let mut empty = ScriptedPolicy::new(vec![]);
        let ctx = StepContext::new("x", home());
        assert_eq!(empty.propose(&ctx).unwrap().action, Action::status(Status::Impossible));
        let mut p = ScriptedPolicy::from_json(r#"[{"match": {"has_widget": "Nope"}, "emit": {"tap": "Nope"}}]"#).unwrap();
        assert_eq!(p.propose(&ctx).unwrap().action, Action::status(Status::Impossible));
    }

    #[test]
    fn wraps_around_for_retries() {
        let mut p = script();
        let ctx = StepContext::new("open youtube", home());
        let a = p.propose(&ctx).unwrap();
        // The second rule needs context; the third matches anything.
        let mut with_ctx = ctx.clone();
        with_ctx.context.insert("mother.phone_number".into(), "1".into());
        p.propose(&with_ctx).unwrap();
        p.propose(&with_ctx).unwrap();
        assert_eq!(p.propose(&ctx).unwrap(), a);
    }

    #[test]
    fn template_filling() {
        let vals: BTreeMap<String, String> = [("a".to_string(), "x".to_string())].into();
        assert_eq!(fill_template("{a}-{a}!", &vals), Ok("x-x!".into()));
        assert_eq!(fill_template("no keys", &vals), Ok("no keys".into()));
        assert_eq!(fill_template("{b}", &vals), Err("b".into()));
        assert_eq!(fill_template("open { brace", &vals), Ok("open { brace".into()));
    }

    #[test]
    fn stochastic_is_seeded_and_bounded() {
        let ctx = StepContext::new("open youtube", home());
        let mut agents = spawn_ensemble(|s| StochasticPolicy::new(script(), s), &[1, 2, 3]);
        let mut twins = spawn_ensemble(|s| StochasticPolicy::new(script(), s), &[1, 2, 3]);
        let base = script().propose(&ctx).unwrap().action.point.unwrap();
        for (a, b) in agents.iter_mut().zip(twins.iter_mut()) {
            let pa = a.propose(&ctx).unwrap();
            assert_eq!(pa, b.propose(&ctx).unwrap());
            let q = pa.action.point.unwrap();
            assert!((q.x - base.x).abs() <= 15 && (q.y - base.y).abs() <= 15);
        }
        agents[0].reset();
        twins[0].reset();
        assert_eq!(agents[0].propose(&ctx).unwrap(), twins[0].propose(&ctx).unwrap());
    }

    struct Echo(String);

    impl Transport for Echo {
        fn request(&mut self, body: &str) -> Result<String, String> {
            assert!(body.contains("\"instruction\":\"go\""));
            Ok(self.0.clone())
        }
    }

    #[test]
    fn remote_adapter() {
        let ctx = StepContext::new("go", home());
        let mut p = RemotePolicy::new(Echo(r#"{"action": {"PRESS": "BACK"}, "thought": "t"}"#.into()));
        let out = p.propose(&ctx).unwrap();
        assert_eq!(out.action.to_string(), r#"{"PRESS":"BACK"}"#);
        let mut bad = RemotePolicy::new(Echo(r#"{"action": {"PRESS": "MENU"}}"#.into()));
        assert!(bad.propose(&ctx).is_err());
    }
}
