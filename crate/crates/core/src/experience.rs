//! Experience pool: archive successful trajectories and replay them.
//!
//! A replay executes the recorded actions in order without consulting any
//! policy. In validated mode the screen digest is checked before every step
//! and replay stops at the first mismatch so the caller can fall back to the
//! standard pipeline.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::action::{Action, Status};
use crate::screen::ScreenDigest;

#[derive(Debug, Error)]
pub enum ExperienceError {
    #[error("hit rate is undefined before any query")]
    NoQueriesYet,
    #[error("baseline time must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("replay time must be non-negative, got {0}")]
    NegativeReplayTime(f64),
    #[error("environment fault at step {step}: {message}")]
    EnvFault { step: usize, message: String },
    #[error("experience log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("experience log io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Success,
    Failure,
    InProgress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    /// Digest of the screen the action was taken on.
    pub digest: ScreenDigest,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTiming {
    pub start: u64,
    pub end: u64,
    pub duration: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_digest: Option<ScreenDigest>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperienceEntry {
    pub query: String,
    pub status: TaskStatus,
    pub steps: Vec<Step>,
    pub timing: TaskTiming,
}

impl ExperienceEntry {
    /// Archivable: success, at least one step, last action finishes the task.
    pub fn is_archivable(&self) -> bool {
        self.status == TaskStatus::Success
            && self
                .steps
                .last()
                .is_some_and(|s| s.action.status == Some(Status::Finish))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchiveOutcome {
    Archived,
    Rejected,
}

/// Decides whether a stored query answers the current one.
pub trait Matcher {
    fn accepts(&self, stored: &str, current: &str) -> bool;
}

impl<F: Fn(&str, &str) -> bool> Matcher for F {
    fn accepts(&self, stored: &str, current: &str) -> bool {
        self(stored, current)
    }
}

/// NFC, lowercase, punctuation to spaces, whitespace-collapsed.
pub fn normalize_query(q: &str) -> String {
    let cleaned: String = q
        .nfc()
        .flat_map(char::to_lowercase)
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn query_tokens(q: &str) -> BTreeSet<String> {
    normalize_query(q)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Accepts exact normalized equality or token Jaccard of at least 0.9.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultMatcher;

impl Matcher for DefaultMatcher {
    fn accepts(&self, stored: &str, current: &str) -> bool {
        if normalize_query(stored) == normalize_query(current) {
            return true;
        }
        let a = query_tokens(stored);
        let b = query_tokens(current);
        let union = a.union(&b).count();
        let inter = a.intersection(&b).count();
        union > 0 && inter * 10 >= union * 9
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperiencePool {
    entries: Vec<ExperienceEntry>,
    total: u64,
    hits: u64,
}

impl ExperiencePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn archive(&mut self, entry: ExperienceEntry) -> ArchiveOutcome {
        if entry.is_archivable() {
            self.entries.push(entry);
            ArchiveOutcome::Archived
        } else {
            ArchiveOutcome::Rejected
        }
    }

    /// Newest-first scan; counts every query and every hit.
    pub fn find_match<M: Matcher + ?Sized>(
        &mut self,
        current: &str,
        matcher: &M,
    ) -> Option<&ExperienceEntry> {
        self.total += 1;
        let found = self
            .entries
            .iter()
            .rposition(|e| matcher.accepts(&e.query, current));
        if found.is_some() {
            self.hits += 1;
        }
        found.map(|i| &self.entries[i])
    }

    pub fn entries(&self) -> &[ExperienceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counters(&self) -> (u64, u64) {
        (self.hits, self.total)
    }

    pub fn hit_rate(&self) -> Result<f64, ExperienceError> {
        hit_rate(self.hits, self.total)
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> io::Result<()> {
        write_log(&self.entries, out)
    }

    /// Loads archived entries; non-archivable records are dropped.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, ExperienceError> {
        let mut pool = Self::new();
        for e in read_log(input)? {
            pool.archive(e);
        }
        Ok(pool)
    }
}

pub fn hit_rate(hits: u64, total: u64) -> Result<f64, ExperienceError> {
    if total == 0 {
        return Err(ExperienceError::NoQueriesYet);
    }
    Ok(hits as f64 / total as f64)
}

/// `1 - t_replay / t_std`.
pub fn efficiency_gain(t_std: f64, t_replay: f64) -> Result<f64, ExperienceError> {
    if !(t_std > 0.0) {
        return Err(ExperienceError::NonPositiveBaseline(t_std));
    }
    if !(t_replay >= 0.0) {
        return Err(ExperienceError::NegativeReplayTime(t_replay));
    }
    Ok(1.0 - t_replay / t_std)
}

/// Device handle used by replay.
pub trait ReplayEnv {
    fn current_digest(&mut self) -> ScreenDigest;
    fn execute(&mut self, action: &Action) -> Result<(), String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplayMode {
    #[default]
    Validated,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayResult {
    Completed { final_digest: ScreenDigest },
    Diverged {
        step: usize,
        expected: ScreenDigest,
        actual: ScreenDigest,
    },
}

pub fn replay<E: ReplayEnv + ?Sized>(
    entry: &ExperienceEntry,
    env: &mut E,
    mode: ReplayMode,
) -> Result<ReplayResult, ExperienceError> {
    for (i, step) in entry.steps.iter().enumerate() {
        if mode == ReplayMode::Validated {
            let actual = env.current_digest();
            if actual != step.digest {
                return Ok(ReplayResult::Diverged {
                    step: i,
                    expected: step.digest,
                    actual,
                });
            }
        }
        env.execute(&step.action)
            .map_err(|message| ExperienceError::EnvFault { step: i, message })?;
    }
    Ok(ReplayResult::Completed {
        final_digest: env.current_digest(),
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    q: String,
    #[serde(rename = "S")]
    status: TaskStatus,
    #[serde(rename = "T")]
    timing: TaskTiming,
}

/// Writes a header line `{q, S, T}` per entry, followed by one
/// `{digest, action}` line per step.
pub fn write_log<W: Write>(entries: &[ExperienceEntry], mut out: W) -> io::Result<()> {
    for e in entries {
        let header = Header {
            q: e.query.clone(),
            status: e.status,
            timing: e.timing.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for s in &e.steps {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_log<R: BufRead>(input: R) -> Result<Vec<ExperienceEntry>, ExperienceError> {
    let mut entries: Vec<ExperienceEntry> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| ExperienceError::Log {
            line: i + 1,
            message,
        };
        let v: Value = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if v.get("q").is_some() {
            let h: Header = serde_json::from_value(v).map_err(|e| err(e.to_string()))?;
            entries.push(ExperienceEntry {
                query: h.q,
                status: h.status,
                steps: Vec::new(),
                timing: h.timing,
            });
        } else {
            let step: Step = serde_json::from_value(v).map_err(|e| err(e.to_string()))?;
            entries
                .last_mut()
                .ok_or_else(|| err("step record before any header".into()))?
                .steps
                .push(step);
        }
    }
    Ok(entries)
}
