//! Function-call actions alongside GUI actions.
//!
//! A [`Registry`] holds tool descriptors. [`resolve`] binds user-supplied
//! arguments and fills optional parameters from their defaults; a
//! [`BoundCall`] therefore never lacks a required parameter. The function
//! route is only taken when the user explicitly selects a function.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DispatchError {
    #[error("function {0} is already registered")]
    DuplicateName(String),
    #[error("unknown function {0}")]
    UnknownFunction(String),
    #[error("{function}: missing required parameter {param}")]
    MissingRequiredParam { function: String, param: String },
    #[error("{function}: unknown parameter {param}")]
    UnknownParam { function: String, param: String },
    #[error("{function}: parameter {param} expects {expected}")]
    TypeMismatch {
        function: String,
        param: String,
        expected: ParamType,
    },
    #[error("invalid descriptor {function}: {reason}")]
    InvalidDescriptor { function: String, reason: String },
    #[error("tool fault: {0}")]
    ToolFault(String),
    #[error("registry json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
    Boolean,
    StringList,
}

impl ParamType {
    pub fn accepts(self, v: &Value) -> bool {
        match self {
            Self::String => v.is_string(),
            Self::Integer => v.is_i64() || v.is_u64(),
            Self::Boolean => v.is_boolean(),
            Self::StringList => v
                .as_array()
                .is_some_and(|a| a.iter().all(Value::is_string)),
        }
    }
}

impl std::fmt::Display for ParamType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::String => "string",
            Self::Integer => "integer",
            Self::Boolean => "boolean",
            Self::StringList => "string_list",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub param_type: ParamType,
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
}

impl ParamSpec {
    pub fn required(name: &str, t: ParamType) -> Self {
        Self {
            name: name.into(),
            param_type: t,
            required: true,
            default: None,
        }
    }

    pub fn optional(name: &str, t: ParamType, default: Value) -> Self {
        Self {
            name: name.into(),
            param_type: t,
            required: false,
            default: Some(default),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionDescriptor {
    pub name: String,
    pub params: Vec<ParamSpec>,
    #[serde(default)]
    pub description: String,
}

impl FunctionDescriptor {
    fn check(&self) -> Result<(), DispatchError> {
        let invalid = |reason: String| DispatchError::InvalidDescriptor {
            function: self.name.clone(),
            reason,
        };
        for (i, p) in self.params.iter().enumerate() {
            if self.params[..i].iter().any(|q| q.name == p.name) {
                return Err(invalid(format!("parameter {} declared twice", p.name)));
            }
            match (&p.default, p.required) {
                (Some(_), true) => {
                    return Err(invalid(format!("required parameter {} has a default", p.name)))
                }
                (Some(d), false) if !p.param_type.accepts(d) => {
                    return Err(invalid(format!("default of {} is not {}", p.name, p.param_type)))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    functions: Vec<FunctionDescriptor>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The email and social toolkits.
    pub fn with_default_toolkits() -> Self {
        use ParamType::*;
        let mut r = Self::new();
        let d = |name: &str, description: &str, params| FunctionDescriptor {
            name: name.into(),
            params,
            description: description.into(),
        };
        for f in [
            d(
                "send_email",
                "Send an email",
                vec![
                    ParamSpec::required("to", String),
                    ParamSpec::optional("subject", String, json!("")),
                    ParamSpec::optional("body", String, json!("")),
                    ParamSpec::optional("attachments", StringList, json!([])),
                ],
            ),
            d("like", "Like a video", vec![ParamSpec::required("video_id", String)]),
            d(
                "coin",
                "Tip coins to a video",
                vec![
                    ParamSpec::required("video_id", String),
                    ParamSpec::optional("count", Integer, json!(1)),
                ],
            ),
            d("search", "Keyword search", vec![ParamSpec::required("keyword", String)]),
        ] {
            r.register(f).expect("default toolkits are well formed");
        }
        r
    }

    pub fn register(&mut self, f: FunctionDescriptor) -> Result<(), DispatchError> {
        if self.get(&f.name).is_some() {
            return Err(DispatchError::DuplicateName(f.name));
        }
        f.check()?;
        self.functions.push(f);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&FunctionDescriptor> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn functions(&self) -> &[FunctionDescriptor] {
        &self.functions
    }

    pub fn from_json(text: &str) -> Result<Self, DispatchError> {
        let fs: Vec<FunctionDescriptor> =
            serde_json::from_str(text).map_err(|e| DispatchError::Json(e.to_string()))?;
        let mut r = Self::new();
        for f in fs {
            r.register(f)?;
        }
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.functions).expect("descriptors serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    UserSupplied,
    Defaulted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCall {
    pub function: String,
    pub args: BTreeMap<String, Value>,
    pub provenance: BTreeMap<String, Provenance>,
}

impl BoundCall {
    /// Trace form: `{"CALL": name, "ARGS": {...}}`.
    pub fn record(&self) -> CallRecord {
        CallRecord {
            call: self.function.clone(),
            args: self.args.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    #[serde(rename = "CALL")]
    pub call: String,
    #[serde(rename = "ARGS")]
    pub args: BTreeMap<String, Value>,
}

pub fn resolve(
    registry: &Registry,
    name: &str,
    user: &Map<String, Value>,
) -> Result<BoundCall, DispatchError> {
    let f = registry
        .get(name)
        .ok_or_else(|| DispatchError::UnknownFunction(name.to_string()))?;
    if let Some(k) = user.keys().find(|k| !f.params.iter().any(|p| &p.name == *k)) {
        return Err(DispatchError::UnknownParam {
            function: name.into(),
            param: k.clone(),
        });
    }
    let mut args = BTreeMap::new();
    let mut provenance = BTreeMap::new();
    for p in &f.params {
        match user.get(&p.name) {
            Some(v) => {
                if !p.param_type.accepts(v) {
                    return Err(DispatchError::TypeMismatch {
                        function: name.into(),
                        param: p.name.clone(),
                        expected: p.param_type,
                    });
                }
                args.insert(p.name.clone(), v.clone());
                provenance.insert(p.name.clone(), Provenance::UserSupplied);
            }
            None if p.required => {
                return Err(DispatchError::MissingRequiredParam {
                    function: name.into(),
                    param: p.name.clone(),
                })
            }
            None => {
                if let Some(d) = &p.default {
                    args.insert(p.name.clone(), d.clone());
                    provenance.insert(p.name.clone(), Provenance::Defaulted);
                }
            }
        }
    }
    Ok(BoundCall {
        function: name.into(),
        args,
        provenance,
    })
}

/// Backend that runs bound calls.
pub trait ToolEnv {
    fn invoke(&mut self, call: &BoundCall) -> Result<Map<String, Value>, DispatchError>;
}

pub fn execute<E: ToolEnv + ?Sized>(
    call: &BoundCall,
    env: &mut E,
) -> Result<Map<String, Value>, DispatchError> {
    env.invoke(call)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Email {
    pub message_id: String,
    pub to: String,
    pub subject: String,
    pub body: String,
    pub attachments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Video {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub likes: u64,
    #[serde(default)]
    pub coins: u64,
}

/// In-memory mailbox and video catalog behind the default toolkits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimTools {
    #[serde(default)]
    pub mailbox: Vec<Email>,
    #[serde(default)]
    pub catalog: Vec<Video>,
    /// When set, the next call fails with this message and changes nothing.
    #[serde(skip)]
    pub fail_next: Option<String>,
}

fn arg_str<'a>(call: &'a BoundCall, k: &str) -> Result<&'a str, DispatchError> {
    call.args
        .get(k)
        .and_then(Value::as_str)
        .ok_or_else(|| DispatchError::ToolFault(format!("{}: missing {k}", call.function)))
}

impl SimTools {
    pub fn with_catalog(catalog: Vec<Video>) -> Self {
        Self {
            catalog,
            ..Self::default()
        }
    }

    fn video_mut(&mut self, id: &str) -> Result<&mut Video, DispatchError> {
        self.catalog
            .iter_mut()
            .find(|v| v.id == id)
            .ok_or_else(|| DispatchError::ToolFault(format!("no video {id}")))
    }

    /// Catalog ids ranked by the number of keyword tokens in the title, then
    /// by id.
    pub fn search(&self, keyword: &str) -> Vec<String> {
        let tokens: Vec<String> = keyword
            .split_whitespace()
            .map(str::to_lowercase)
            .collect();
        let mut scored: Vec<(usize, &str)> = self
            .catalog
            .iter()
            .map(|v| {
                let title = v.title.to_lowercase();
                (tokens.iter().filter(|t| title.contains(t.as_str())).count(), v.id.as_str())
            })
            .filter(|(s, _)| *s > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
        scored.into_iter().map(|(_, id)| id.to_string()).collect()
    }
}

impl ToolEnv for SimTools {
    fn invoke(&mut self, call: &BoundCall) -> Result<Map<String, Value>, DispatchError> {
        if let Some(msg) = self.fail_next.take() {
            return Err(DispatchError::ToolFault(msg));
        }
        let out = match call.function.as_str() {
            "send_email" => {
                let to = arg_str(call, "to")?.to_string();
                if !to.contains('@') {
                    return Err(DispatchError::ToolFault(format!("bad recipient {to}")));
                }
                let message_id = format!("msg-{}", self.mailbox.len() + 1);
                let attachments = call
                    .args
                    .get("attachments")
                    .and_then(Value::as_array)
                    .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
                    .unwrap_or_default();
                self.mailbox.push(Email {
                    message_id: message_id.clone(),
                    to,
                    subject: arg_str(call, "subject").unwrap_or_default().to_string(),
                    body: arg_str(call, "body").unwrap_or_default().to_string(),
                    attachments,
                });
                json!({"delivered": true, "message_id": message_id})
            }
            "like" => {
                let v = self.video_mut(arg_str(call, "video_id")?)?;
                v.likes += 1;
                json!({"video_id": v.id, "likes": v.likes})
            }
            "coin" => {
                let count = call.args.get("count").and_then(Value::as_u64).unwrap_or(1);
                if count == 0 {
                    return Err(DispatchError::ToolFault("coin count must be positive".into()));
                }
                let v = self.video_mut(arg_str(call, "video_id")?)?;
                v.coins += count;
                json!({"video_id": v.id, "coins": v.coins})
            }
            "search" => json!({"results": self.search(arg_str(call, "keyword")?)}),
            other => return Err(DispatchError::UnknownFunction(other.to_string())),
        };
        match out {
            Value::Object(m) => Ok(m),
            _ => unreachable!("tool results are objects"),
        }
    }
}

/// What the user asked for, with an optional explicit function choice.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub instruction: String,
    #[serde(default)]
    pub selected_function: Option<String>,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Route {
    Function(BoundCall),
    Gui,
}

pub fn plan_path(task: &TaskDescriptor, registry: &Registry) -> Result<Route, DispatchError> {
    match &task.selected_function {
        Some(name) => resolve(registry, name, &task.params).map(Route::Function),
        None => Ok(Route::Gui),
    }
}
