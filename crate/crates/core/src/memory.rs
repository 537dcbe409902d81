//! Personal information store of `(relation, field, value)` triples.
//!
//! Values are validated against a per-field pattern before they are stored.
//! Every insertion and every change appends a [`ChangeRecord`] to the audit
//! log; writing an identical value is a no-op. Keys are compared after
//! trimming and lowercasing.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::screen::Screen;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("value `{value}` is not a valid {field}")]
    ValidationFailed { field: String, value: String },
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("no widget text matches {0}")]
    NothingMatched(Slot),
    #[error("pattern for {field} does not compile: {source}")]
    BadPattern { field: String, source: regex::Error },
    #[error("memory io: {0}")]
    Io(#[from] io::Error),
    #[error("memory json: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn normalize_key(s: &str) -> String {
    s.trim().to_lowercase()
}

/// `(relation, field)` pair naming one stored value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub relation: String,
    pub field: String,
}

impl Slot {
    pub fn new(relation: &str, field: &str) -> Self {
        Self {
            relation: normalize_key(relation),
            field: normalize_key(field),
        }
    }

    fn store_key(&self) -> String {
        format!("{}|{}", self.relation, self.field)
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.relation, self.field)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonalTriple {
    pub relation: String,
    pub field: String,
    pub value: String,
}

impl PersonalTriple {
    pub fn new(relation: &str, field: &str, value: &str) -> Self {
        Self {
            relation: relation.to_string(),
            field: field.to_string(),
            value: value.to_string(),
        }
    }

    pub fn slot(&self) -> Slot {
        Slot::new(&self.relation, &self.field)
    }
}

/// Registry entry as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub field: String,
    pub pattern: String,
    #[serde(default)]
    pub label: String,
}

/// Compiled field validator.
#[derive(Debug, Clone)]
pub struct FieldSpec {
    pub def: FieldDef,
    full: Regex,
    search: Regex,
}

impl FieldSpec {
    /// Compiles `pattern` as a full-string match. A leading `^` and trailing
    /// `$` are implied when absent.
    pub fn new(field: &str, pattern: &str, label: &str) -> Result<Self, MemoryError> {
        let core = pattern.strip_prefix('^').unwrap_or(pattern);
        let core = core.strip_suffix('$').unwrap_or(core);
        let compile = |p: String| {
            Regex::new(&p).map_err(|source| MemoryError::BadPattern {
                field: field.to_string(),
                source,
            })
        };
        Ok(Self {
            def: FieldDef {
                field: normalize_key(field),
                pattern: pattern.to_string(),
                label: label.to_string(),
            },
            full: compile(format!("^(?:{core})$"))?,
            search: compile(core.to_string())?,
        })
    }

    pub fn is_valid(&self, value: &str) -> bool {
        self.full.is_match(value)
    }

    /// Leftmost substring of `text` that is a valid value.
    pub fn find_in<'t>(&self, text: &'t str) -> Option<&'t str> {
        self.search
            .find_iter(text)
            .map(|m| m.as_str())
            .find(|s| self.is_valid(s))
    }
}

#[derive(Debug, Clone)]
pub struct FieldRegistry {
    specs: BTreeMap<String, FieldSpec>,
}

impl Default for FieldRegistry {
    fn default() -> Self {
        let mut r = Self {
            specs: BTreeMap::new(),
        };
        for (f, p, l) in [
            ("phone_number", r"^1\d{10}$", "Phone number"),
            ("address", r"^[^\n]{1,200}$", "Address"),
            ("id_number", r"^\d{17}[\dXx]$", "ID number"),
        ] {
            r.register(FieldSpec::new(f, p, l).expect("built-in patterns compile"));
        }
        r
    }
}

impl FieldRegistry {
    pub fn empty() -> Self {
        Self {
            specs: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, spec: FieldSpec) {
        self.specs.insert(spec.def.field.clone(), spec);
    }

    pub fn get(&self, field: &str) -> Option<&FieldSpec> {
        self.specs.get(&normalize_key(field))
    }

    pub fn from_json(text: &str) -> Result<Self, MemoryError> {
        let defs: Vec<FieldDef> = serde_json::from_str(text)?;
        let mut r = Self::empty();
        for d in defs {
            r.register(FieldSpec::new(&d.field, &d.pattern, &d.label)?);
        }
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        let defs: Vec<&FieldDef> = self.specs.values().map(|s| &s.def).collect();
        serde_json::to_string_pretty(&defs).expect("field defs serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub tick: u64,
    #[serde(rename = "r")]
    pub relation: String,
    #[serde(rename = "f")]
    pub field: String,
    pub old: Option<String>,
    pub new: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOutcome {
    Inserted,
    Changed,
    Unchanged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    /// Counter advanced once per log record.
    Logical(u64),
    /// Milliseconds since the Unix epoch.
    Wall,
}

#[derive(Debug, Clone)]
pub struct MemoryStore {
    registry: FieldRegistry,
    values: BTreeMap<Slot, String>,
    log: Vec<ChangeRecord>,
    clock: Clock,
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new(FieldRegistry::default())
    }
}

impl MemoryStore {
    pub fn new(registry: FieldRegistry) -> Self {
        Self {
            registry,
            values: BTreeMap::new(),
            log: Vec::new(),
            clock: Clock::Logical(0),
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Moves a logical clock forward to at least `tick`.
    pub fn sync_clock(&mut self, tick: u64) {
        if let Clock::Logical(t) = &mut self.clock {
            *t = (*t).max(tick);
        }
    }

    fn now(&mut self) -> u64 {
        match &mut self.clock {
            Clock::Logical(t) => {
                let now = *t;
                *t += 1;
                now
            }
            Clock::Wall => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
        }
    }

    pub fn registry(&self) -> &FieldRegistry {
        &self.registry
    }

    pub fn retrieve(&self, relation: &str, field: &str) -> Option<&str> {
        self.values.get(&Slot::new(relation, field)).map(String::as_str)
    }

    pub fn update(&mut self, triple: &PersonalTriple) -> Result<UpdateOutcome, MemoryError> {
        let slot = triple.slot();
        let spec = self
            .registry
            .get(&slot.field)
            .ok_or_else(|| MemoryError::UnknownField(slot.field.clone()))?;
        if !spec.is_valid(&triple.value) {
            return Err(MemoryError::ValidationFailed {
                field: slot.field,
                value: triple.value.clone(),
            });
        }
        let old = self.values.get(&slot).cloned();
        if old.as_deref() == Some(triple.value.as_str()) {
            return Ok(UpdateOutcome::Unchanged);
        }
        let outcome = if old.is_some() {
            UpdateOutcome::Changed
        } else {
            UpdateOutcome::Inserted
        };
        let tick = self.now();
        self.log.push(ChangeRecord {
            tick,
            relation: slot.relation.clone(),
            field: slot.field.clone(),
            old,
            new: triple.value.clone(),
        });
        self.values.insert(slot, triple.value.clone());
        Ok(outcome)
    }

    /// Scans widget text in index order and stores the leftmost valid match
    /// of the first widget that has one.
    pub fn capture_from_screen(
        &mut self,
        slot: &Slot,
        screen: &Screen,
    ) -> Result<String, MemoryError> {
        let spec = self
            .registry
            .get(&slot.field)
            .ok_or_else(|| MemoryError::UnknownField(slot.field.clone()))?;
        let mut widgets: Vec<_> = screen.widgets.iter().collect();
        widgets.sort_by_key(|w| w.index);
        let found = widgets
            .iter()
            .find_map(|w| spec.find_in(&w.content))
            .map(str::to_string)
            .ok_or_else(|| MemoryError::NothingMatched(slot.clone()))?;
        self.update(&PersonalTriple::new(&slot.relation, &slot.field, &found))?;
        Ok(found)
    }

    pub fn log(&self) -> &[ChangeRecord] {
        &self.log
    }

    pub fn history(&self, relation: &str, field: &str) -> Vec<&ChangeRecord> {
        let slot = Slot::new(relation, field);
        self.log
            .iter()
            .filter(|r| r.relation == slot.relation && r.field == slot.field)
            .collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Slot, &str)> {
        self.values.iter().map(|(k, v)| (k, v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Resolves each slot from the store, then from `screen` if given.
    pub fn inject_context(
        &mut self,
        instruction: &str,
        slots: &[Slot],
        screen: Option<&Screen>,
    ) -> InjectedContext {
        let mut resolved = BTreeMap::new();
        let mut unresolved = Vec::new();
        for slot in slots {
            let value = match self.retrieve(&slot.relation, &slot.field) {
                Some(v) => Some(v.to_string()),
                None => screen.and_then(|s| self.capture_from_screen(slot, s).ok()),
            };
            match value {
                Some(v) => {
                    resolved.insert(slot.to_string(), v);
                }
                None => unresolved.push(slot.to_string()),
            }
        }
        InjectedContext {
            instruction: instruction.to_string(),
            resolved,
            unresolved,
        }
    }

    /// Store file contents: `{"relation|field": value}`.
    pub fn store_json(&self) -> String {
        let map: BTreeMap<String, &String> =
            self.values.iter().map(|(k, v)| (k.store_key(), v)).collect();
        serde_json::to_string_pretty(&map).expect("store serializes")
    }

    pub fn write_log_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.log {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Rebuilds a store from its two files. Stored values are revalidated.
    pub fn load<R: BufRead>(
        registry: FieldRegistry,
        store_json: &str,
        log: R,
    ) -> Result<Self, MemoryError> {
        let mut store = Self::new(registry);
        let map: BTreeMap<String, String> = serde_json::from_str(store_json)?;
        for (key, value) in map {
            let (r, f) = key.split_once('|').unwrap_or(("self", key.as_str()));
            let slot = Slot::new(r, f);
            let spec = store
                .registry
                .get(&slot.field)
                .ok_or_else(|| MemoryError::UnknownField(slot.field.clone()))?;
            if !spec.is_valid(&value) {
                return Err(MemoryError::ValidationFailed {
                    field: slot.field,
                    value,
                });
            }
            store.values.insert(slot, value);
        }
        for line in log.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ChangeRecord = serde_json::from_str(&line)?;
            store.sync_clock(rec.tick + 1);
            store.log.push(rec);
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedContext {
    pub instruction: String,
    /// `relation.field` to value.
    pub resolved: BTreeMap<String, String>,
    pub unresolved: Vec<String>,
}

impl InjectedContext {
    pub fn block(&self) -> String {
        self.resolved
            .iter()
            .map(|(k, v)| format!("{k}: {v}\n"))
            .collect()
    }

    pub fn render(&self) -> String {
        if self.resolved.is_empty() {
            self.instruction.clone()
        } else {
            format!("{}\n[context]\n{}", self.instruction, self.block())
        }
    }

    pub fn is_complete(&self) -> bool {
        self.unresolved.is_empty()
    }
}

/// Keyword lookup from instruction text to slots.
#[derive(Debug, Clone)]
pub struct SlotLexicon {
    relations: Vec<(String, String)>,
    fields: Vec<(String, String)>,
}

impl Default for SlotLexicon {
    fn default() -> Self {
        let pairs = |v: &[(&str, &str)]| {
            v.iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect()
        };
        Self {
            relations: pairs(&[
                ("mom", "mother"),
                ("mother", "mother"),
                ("mum", "mother"),
                ("妈妈", "mother"),
                ("dad", "father"),
                ("father", "father"),
                ("爸爸", "father"),
                ("grandson", "grandson"),
                ("孙子", "grandson"),
                ("wife", "wife"),
                ("husband", "husband"),
                ("my", "self"),
                ("我的", "self"),
            ]),
            fields: pairs(&[
                ("call", "phone_number"),
                ("phone", "phone_number"),
                ("number", "phone_number"),
                ("电话", "phone_number"),
                ("address", "address"),
                ("地址", "address"),
                ("id", "id_number"),
                ("身份证", "id_number"),
            ]),
        }
    }
}

impl SlotLexicon {
    pub fn add_relation(&mut self, alias: &str, canonical: &str) {
        self.relations
            .push((normalize_key(alias), normalize_key(canonical)));
    }

    pub fn add_field(&mut self, keyword: &str, field: &str) {
        self.fields.push((normalize_key(keyword), normalize_key(field)));
    }

    fn hits(table: &[(String, String)], text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric() || !c.is_ascii())
            .filter(|w| !w.is_empty())
            .collect();
        let mut out: Vec<(usize, String)> = Vec::new();
        for (alias, canonical) in table {
            let pos = if alias.is_ascii() {
                words.iter().position(|w| w == alias)
            } else {
                lower.find(alias.as_str())
            };
            if let Some(p) = pos {
                if !out.iter().any(|(_, c)| c == canonical) {
                    out.push((p, canonical.clone()));
                }
            }
        }
        out.sort();
        out.into_iter().map(|(_, c)| c).collect()
    }

    /// Every recognized relation paired with every recognized field. With
    /// no relation keyword the relation is `self`.
    pub fn parse(&self, instruction: &str) -> Vec<Slot> {
        let mut relations = Self::hits(&self.relations, instruction);
        let fields = Self::hits(&self.fields, instruction);
        if relations.len() > 1 {
            relations.retain(|r| r != "self");
        }
        if relations.is_empty() {
            relations.push("self".to_string());
        }
        let mut slots = Vec::new();
        for r in &relations {
            for f in &fields {
                let s = Slot::new(r, f);
                if !slots.contains(&s) {
                    slots.push(s);
                }
            }
        }
        slots
    }
}
