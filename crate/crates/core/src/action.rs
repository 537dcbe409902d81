//! Standardized atomic action space and its compact wire record.
//!
//! Every other module exchanges actions through [`Action`]. On the wire an
//! action is a single flat JSON object whose keys are drawn from `POINT`,
//! `to`, `TYPE`, `PRESS`, `STATUS` and `duration`:
//!
//! ```text
//! {"POINT":[87,445],"STATUS":"start"}
//! {"POINT":[123,456],"to":"left"}
//! {"PRESS":"BACK"}
//! ```
//!
//! Serialization is byte-exact: fixed key order, no whitespace. Parsing
//! accepts arbitrary whitespace between tokens. Coordinates are integers in
//! per-mille of the screen extent, `[0, 1000]` on both axes.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

/// Upper bound of the per-mille coordinate space (inclusive).
pub const COORD_MAX: i32 = 1000;

/// Errors raised while parsing or validating actions.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("malformed action record: {0}")]
    MalformedRecord(String),
    #[error("unknown action key `{0}`")]
    UnknownKey(String),
    #[error("invalid key combination: {0}")]
    InvalidCombination(KeySet),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("pixel ({px}, {py}) outside a {width}x{height} screen")]
    OutOfBounds {
        px: u32,
        py: u32,
        width: u32,
        height: u32,
    },
}

/// A coordinate pair in per-mille screen space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

impl Point {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    /// Builds a point, rejecting coordinates outside `[0, 1000]`.
    pub fn checked(x: i32, y: i32) -> Result<Self, ActionError> {
        let p = Self { x, y };
        if p.in_range() {
            Ok(p)
        } else {
            Err(ActionError::OutOfRange(format!("point ({x}, {y})")))
        }
    }

    pub fn in_range(&self) -> bool {
        (0..=COORD_MAX).contains(&self.x) && (0..=COORD_MAX).contains(&self.y)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x, y] = <[i32; 2]>::deserialize(deserializer)?;
        Ok(Self { x, y })
    }
}

/// Preset swipe direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Self::Up, Self::Down, Self::Left, Self::Right];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Up => "up",
            Self::Down => "down",
            Self::Left => "left",
            Self::Right => "right",
        }
    }
}

impl FromStr for Direction {
    type Err = ActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "up" => Ok(Self::Up),
            "down" => Ok(Self::Down),
            "left" => Ok(Self::Left),
            "right" => Ok(Self::Right),
            other => Err(ActionError::MalformedRecord(format!(
                "unknown swipe direction `{other}`"
            ))),
        }
    }
}

/// Where a swipe goes: a preset direction or an explicit end point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SwipeTarget {
    Direction(Direction),
    Point(Point),
}

/// System key accepted by `PRESS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Key {
    Home,
    Back,
    Enter,
}

impl Key {
    pub const ALL: [Key; 3] = [Self::Home, Self::Back, Self::Enter];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Home => "HOME",
            Self::Back => "BACK",
            Self::Enter => "ENTER",
        }
    }
}

impl FromStr for Key {
    type Err = ActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HOME" => Ok(Self::Home),
            "BACK" => Ok(Self::Back),
            "ENTER" => Ok(Self::Enter),
            other => Err(ActionError::MalformedRecord(format!(
                "unknown system key `{other}`"
            ))),
        }
    }
}

/// Task execution status tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Status {
    Start,
    Finish,
    Impossible,
    /// The agent halts and waits for information only the user can supply.
    NeedFeedback,
}

impl Status {
    pub const ALL: [Status; 4] = [
        Self::Start,
        Self::Finish,
        Self::Impossible,
        Self::NeedFeedback,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Start => "start",
            Self::Finish => "finish",
            Self::Impossible => "impossible",
            Self::NeedFeedback => "need_feedback",
        }
    }

    /// `start` only annotates; the other tags end or pause a task.
    pub fn is_terminal(&self) -> bool {
        !matches!(self, Self::Start)
    }
}

impl FromStr for Status {
    type Err = ActionError;

    /// Accepts `need_feedback`, `NEED FEEDBACK` and similar spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .map(|c| match c {
                ' ' | '-' => '_',
                c => c.to_ascii_lowercase(),
            })
            .collect();
        match norm.as_str() {
            "start" => Ok(Self::Start),
            "finish" => Ok(Self::Finish),
            "impossible" => Ok(Self::Impossible),
            "need_feedback" => Ok(Self::NeedFeedback),
            _ => Err(ActionError::MalformedRecord(format!(
                "unknown status `{}`",
                s.trim()
            ))),
        }
    }
}

/// Bit set over the six record keys, in wire order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct KeySet(u8);

impl KeySet {
    pub const POINT: KeySet = KeySet(1 << 0);
    pub const TO: KeySet = KeySet(1 << 1);
    pub const TYPE: KeySet = KeySet(1 << 2);
    pub const PRESS: KeySet = KeySet(1 << 3);
    pub const STATUS: KeySet = KeySet(1 << 4);
    pub const DURATION: KeySet = KeySet(1 << 5);

    /// Wire names in serialization order.
    pub const NAMES: [&'static str; 6] = ["POINT", "to", "TYPE", "PRESS", "STATUS", "duration"];

    pub const fn empty() -> Self {
        KeySet(0)
    }

    pub const fn from_bits(bits: u8) -> Self {
        KeySet(bits & 0b11_1111)
    }

    pub const fn bits(&self) -> u8 {
        self.0
    }

    pub const fn union(self, other: KeySet) -> Self {
        KeySet(self.0 | other.0)
    }

    pub const fn contains(&self, other: KeySet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: KeySet) {
        self.0 |= other.0;
    }

    fn from_name(name: &str) -> Option<KeySet> {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| KeySet(1 << i))
    }
}

impl fmt::Display for KeySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = Self::NAMES
            .iter()
            .enumerate()
            .filter(|(i, _)| self.0 & (1 << i) != 0)
            .map(|(_, n)| *n)
            .collect();
        write!(f, "{{{}}}", names.join(", "))
    }
}

/// Whether a set of present keys forms exactly one legal intent.
///
/// Legal sets: `POINT` (click), `POINT+to` (swipe), `POINT+duration` (long
/// press), `POINT+STATUS` (click annotated with a status), `TYPE`, `PRESS`,
/// `STATUS`, `duration` (timed wait) and `STATUS+duration`.
pub fn combination_allowed(keys: KeySet) -> bool {
    const P: u8 = KeySet::POINT.0;
    const T: u8 = KeySet::TO.0;
    const TY: u8 = KeySet::TYPE.0;
    const PR: u8 = KeySet::PRESS.0;
    const S: u8 = KeySet::STATUS.0;
    const D: u8 = KeySet::DURATION.0;
    matches!(
        keys.0,
        x if x == P
            || x == P | T
            || x == P | D
            || x == P | S
            || x == TY
            || x == PR
            || x == S
            || x == D
            || x == S | D
    )
}

/// Primary intent of an action, used as the stage-one vote category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    Swipe,
    LongPress,
    Type,
    Press,
    Status,
    Wait,
}

impl ActionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Click => "click",
            Self::Swipe => "swipe",
            Self::LongPress => "long_press",
            Self::Type => "type",
            Self::Press => "press",
            Self::Status => "status",
            Self::Wait => "wait",
        }
    }

    /// Kinds whose parameters are aggregated by coordinate centroid.
    pub fn is_coordinate(&self) -> bool {
        matches!(self, Self::Click | Self::Swipe | Self::LongPress)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One atomic agent operation.
///
/// Fields mirror the wire keys. Use the constructors or [`parse_action`] to
/// obtain a value that satisfies the combination and range rules;
/// [`Action::validate`] re-checks a hand-built value.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Action {
    pub point: Option<Point>,
    pub to: Option<SwipeTarget>,
    pub type_text: Option<String>,
    pub press: Option<Key>,
    pub status: Option<Status>,
    /// Milliseconds, strictly positive.
    pub duration: Option<u64>,
}

impl Action {
    pub fn click(point: Point) -> Self {
        Self {
            point: Some(point),
            ..Self::default()
        }
    }

    pub fn swipe(point: Point, to: SwipeTarget) -> Self {
        Self {
            point: Some(point),
            to: Some(to),
            ..Self::default()
        }
    }

    pub fn long_press(point: Point, duration_ms: u64) -> Self {
        Self {
            point: Some(point),
            duration: Some(duration_ms),
            ..Self::default()
        }
    }

    pub fn type_text(text: impl Into<String>) -> Self {
        Self {
            type_text: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn press(key: Key) -> Self {
        Self {
            press: Some(key),
            ..Self::default()
        }
    }

    pub fn status(status: Status) -> Self {
        Self {
            status: Some(status),
            ..Self::default()
        }
    }

    pub fn wait(duration_ms: u64) -> Self {
        Self {
            duration: Some(duration_ms),
            ..Self::default()
        }
    }

    pub fn with_status(mut self, status: Status) -> Self {
        self.status = Some(status);
        self
    }

    pub fn key_set(&self) -> KeySet {
        let mut keys = KeySet::empty();
        if self.point.is_some() {
            keys.insert(KeySet::POINT);
        }
        if self.to.is_some() {
            keys.insert(KeySet::TO);
        }
        if self.type_text.is_some() {
            keys.insert(KeySet::TYPE);
        }
        if self.press.is_some() {
            keys.insert(KeySet::PRESS);
        }
        if self.status.is_some() {
            keys.insert(KeySet::STATUS);
        }
        if self.duration.is_some() {
            keys.insert(KeySet::DURATION);
        }
        keys
    }

    /// Checks ranges and the one-intent combination rule.
    pub fn validate(&self) -> Result<(), ActionError> {
        if let Some(p) = self.point {
            if !p.in_range() {
                return Err(ActionError::OutOfRange(format!("POINT {p}")));
            }
        }
        if let Some(SwipeTarget::Point(p)) = self.to {
            if !p.in_range() {
                return Err(ActionError::OutOfRange(format!("to {p}")));
            }
        }
        if self.duration == Some(0) {
            return Err(ActionError::OutOfRange("duration must be positive".into()));
        }
        let keys = self.key_set();
        if !combination_allowed(keys) {
            return Err(ActionError::InvalidCombination(keys));
        }
        Ok(())
    }

    /// Primary intent. Only meaningful for a valid action.
    pub fn kind(&self) -> ActionKind {
        if self.point.is_some() {
            if self.to.is_some() {
                ActionKind::Swipe
            } else if self.duration.is_some() {
                ActionKind::LongPress
            } else {
                ActionKind::Click
            }
        } else if self.type_text.is_some() {
            ActionKind::Type
        } else if self.press.is_some() {
            ActionKind::Press
        } else if self.duration.is_some() {
            ActionKind::Wait
        } else {
            ActionKind::Status
        }
    }

    /// Status carried by the action, if it ends or pauses the task.
    pub fn terminal_status(&self) -> Option<Status> {
        self.status.filter(Status::is_terminal)
    }

    /// Builds an action from an already-decoded JSON object.
    pub fn from_record(record: &Map<String, Value>) -> Result<Self, ActionError> {
        for key in record.keys() {
            if KeySet::from_name(key).is_none() {
                return Err(ActionError::UnknownKey(key.clone()));
            }
        }
        let mut action = Action::default();
        if let Some(v) = record.get("POINT") {
            action.point = Some(parse_coordinate(v, "POINT")?);
        }
        if let Some(v) = record.get("to") {
            action.to = Some(match v {
                Value::String(s) => SwipeTarget::Direction(s.parse()?),
                other => SwipeTarget::Point(parse_coordinate(other, "to")?),
            });
        }
        if let Some(v) = record.get("TYPE") {
            let text = v
                .as_str()
                .ok_or_else(|| ActionError::MalformedRecord("TYPE must be a string".into()))?;
            action.type_text = Some(text.to_owned());
        }
        if let Some(v) = record.get("PRESS") {
            let key = v
                .as_str()
                .ok_or_else(|| ActionError::MalformedRecord("PRESS must be a string".into()))?;
            action.press = Some(key.parse()?);
        }
        if let Some(v) = record.get("STATUS") {
            let status = v
                .as_str()
                .ok_or_else(|| ActionError::MalformedRecord("STATUS must be a string".into()))?;
            action.status = Some(status.parse()?);
        }
        if let Some(v) = record.get("duration") {
            action.duration = Some(parse_duration(v)?);
        }
        let keys = action.key_set();
        if !combination_allowed(keys) {
            return Err(ActionError::InvalidCombination(keys));
        }
        Ok(action)
    }

    /// Builds an action from any JSON value; only objects are accepted.
    pub fn from_value(value: &Value) -> Result<Self, ActionError> {
        match value {
            Value::Object(map) => Self::from_record(map),
            _ => Err(ActionError::MalformedRecord(
                "action record must be a JSON object".into(),
            )),
        }
    }
}

fn parse_coordinate(v: &Value, key: &str) -> Result<Point, ActionError> {
    let arr = v.as_array().ok_or_else(|| {
        ActionError::MalformedRecord(format!("{key} must be a coordinate array"))
    })?;
    if arr.len() != 2 {
        return Err(ActionError::MalformedRecord(format!(
            "{key} must have exactly 2 coordinates, got {}",
            arr.len()
        )));
    }
    let mut xy = [0i32; 2];
    for (slot, c) in xy.iter_mut().zip(arr) {
        if c.is_f64() || !c.is_number() {
            return Err(ActionError::MalformedRecord(format!(
                "{key} coordinate {c} is not an integer"
            )));
        }
        let n = c
            .as_i64()
            .ok_or_else(|| ActionError::OutOfRange(format!("{key} coordinate {c}")))?;
        if !(0..=COORD_MAX as i64).contains(&n) {
            return Err(ActionError::OutOfRange(format!("{key} coordinate {n}")));
        }
        *slot = n as i32;
    }
    Ok(Point::new(xy[0], xy[1]))
}

fn parse_duration(v: &Value) -> Result<u64, ActionError> {
    if v.is_f64() {
        return Err(ActionError::MalformedRecord(
            "duration must be an integer".into(),
        ));
    }
    if let Some(n) = v.as_u64() {
        if n == 0 {
            return Err(ActionError::OutOfRange("duration must be positive".into()));
        }
        return Ok(n);
    }
    if v.is_i64() {
        return Err(ActionError::OutOfRange(format!("duration {v}")));
    }
    Err(ActionError::MalformedRecord(
        "duration must be an integer".into(),
    ))
}

/// Parses one compact record, e.g. `{"PRESS": "BACK"}`.
pub fn parse_action(text: &str) -> Result<Action, ActionError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ActionError::MalformedRecord(e.to_string()))?;
    Action::from_value(&value)
}

/// Emits the minimal record: fixed key order, no whitespace.
pub fn serialize_action(action: &Action) -> String {
    serde_json::to_string(action).expect("action serialization is infallible")
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(None)?;
        if let Some(p) = &self.point {
            map.serialize_entry("POINT", p)?;
        }
        match &self.to {
            Some(SwipeTarget::Direction(d)) => map.serialize_entry("to", d.as_str())?,
            Some(SwipeTarget::Point(p)) => map.serialize_entry("to", p)?,
            None => {}
        }
        if let Some(t) = &self.type_text {
            map.serialize_entry("TYPE", t)?;
        }
        if let Some(k) = &self.press {
            map.serialize_entry("PRESS", k.as_str())?;
        }
        if let Some(s) = &self.status {
            map.serialize_entry("STATUS", s.as_str())?;
        }
        if let Some(d) = &self.duration {
            map.serialize_entry("duration", d)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        Action::from_value(&value).map_err(D::Error::custom)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_action(self))
    }
}

impl FromStr for Action {
    type Err = ActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_action(s)
    }
}

/// Physical screen size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenDims {
    pub width: u32,
    pub height: u32,
}

impl ScreenDims {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }
}

// round(v * 1000 / extent), half away from zero, exact in integers.
fn to_per_mille(v: u32, extent: u32) -> i32 {
    let num = 2 * u64::from(v) * 1000 + u64::from(extent);
    let den = 2 * u64::from(extent);
    (num / den).min(COORD_MAX as u64) as i32
}

fn to_pixel(v: i32, extent: u32) -> u32 {
    let num = 2 * v as u64 * u64::from(extent) + 1000;
    let px = num / 2000;
    px.min(u64::from(extent.saturating_sub(1))) as u32
}

/// Maps a pixel position to per-mille coordinates.
pub fn normalize_point(px: u32, py: u32, dims: ScreenDims) -> Result<Point, ActionError> {
    if dims.width == 0 || dims.height == 0 || px >= dims.width || py >= dims.height {
        return Err(ActionError::OutOfBounds {
            px,
            py,
            width: dims.width,
            height: dims.height,
        });
    }
    Ok(Point::new(
        to_per_mille(px, dims.width),
        to_per_mille(py, dims.height),
    ))
}

/// Inverse of [`normalize_point`], rounding to the nearest pixel and
/// clamping to the last pixel row/column.
pub fn denormalize_point(p: Point, dims: ScreenDims) -> Result<(u32, u32), ActionError> {
    if !p.in_range() {
        return Err(ActionError::OutOfRange(format!("point {p}")));
    }
    if dims.width == 0 || dims.height == 0 {
        return Err(ActionError::OutOfRange(format!(
            "screen {}x{}",
            dims.width, dims.height
        )));
    }
    Ok((to_pixel(p.x, dims.width), to_pixel(p.y, dims.height)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_compact_examples() {
        assert_eq!(
            parse_action(r#"{"POINT": [87, 445], "STATUS": "start"}"#).unwrap(),
            Action::click(Point::new(87, 445)).with_status(Status::Start)
        );
        assert_eq!(
            parse_action(r#"{"PRESS": "BACK"}"#).unwrap(),
            Action::press(Key::Back)
        );
        assert_eq!(
            parse_action(r#"{"POINT": [123, 456], "to": "left"}"#).unwrap(),
            Action::swipe(Point::new(123, 456), SwipeTarget::Direction(Direction::Left))
        );
    }

    #[test]
    fn rejects_out_of_range_point() {
        assert!(matches!(
            parse_action(r#"{"POINT": [1001, 5]}"#),
            Err(ActionError::OutOfRange(_))
        ));
        assert!(matches!(
            parse_action(r#"{"POINT": [-1, 5]}"#),
            Err(ActionError::OutOfRange(_))
        ));
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(
            parse_action("{\"POINT\": [1, 2"),
            Err(ActionError::MalformedRecord(_))
        ));
        assert!(matches!(
            parse_action("[1, 2]"),
            Err(ActionError::MalformedRecord(_))
        ));
        assert!(matches!(
            parse_action(r#"{"CLICK": [1, 2]}"#),
            Err(ActionError::UnknownKey(k)) if k == "CLICK"
        ));
        assert!(matches!(
            parse_action(r#"{"POINT": [1, 2, 3]}"#),
            Err(ActionError::MalformedRecord(_))
        ));
        assert!(matches!(
            parse_action(r#"{"POINT": [1.5, 2]}"#),
            Err(ActionError::MalformedRecord(_))
        ));
        assert!(matches!(
            parse_action(r#"{"PRESS": "BACK", "TYPE": "x"}"#),
            Err(ActionError::InvalidCombination(_))
        ));
        assert!(matches!(
            parse_action(r#"{"PRESS": "MENU"}"#),
            Err(ActionError::MalformedRecord(_))
        ));
        assert!(matches!(
            parse_action(r#"{"duration": 0}"#),
            Err(ActionError::OutOfRange(_))
        ));
        assert!(matches!(
            parse_action(r#"{}"#),
            Err(ActionError::InvalidCombination(_))
        ));
    }

    #[test]
    fn serializes_minimal_records() {
        assert_eq!(
            serialize_action(&Action::status(Status::Finish)),
            r#"{"STATUS":"finish"}"#
        );
        assert_eq!(
            serialize_action(&Action::type_text("交费")),
            r#"{"TYPE":"交费"}"#
        );
        assert_eq!(
            serialize_action(&Action::click(Point::new(87, 445)).with_status(Status::Start)),
            r#"{"POINT":[87,445],"STATUS":"start"}"#
        );
        assert_eq!(
            serialize_action(&Action::status(Status::NeedFeedback)),
            r#"{"STATUS":"need_feedback"}"#
        );
    }

    #[test]
    fn need_feedback_spellings() {
        for s in ["need_feedback", "NEED FEEDBACK", "Need-Feedback"] {
            assert_eq!(s.parse::<Status>().unwrap(), Status::NeedFeedback);
        }
    }

    #[test]
    fn swipe_to_point_roundtrip() {
        let a = Action::swipe(Point::new(500, 800), SwipeTarget::Point(Point::new(500, 200)));
        let text = serialize_action(&a);
        assert_eq!(text, r#"{"POINT":[500,800],"to":[500,200]}"#);
        assert_eq!(parse_action(&text).unwrap(), a);
    }

    // Independent listing of the legal key sets, by name.
    fn legal_by_name(names: &[&str]) -> bool {
        let mut sorted: Vec<&str> = names.to_vec();
        sorted.sort_unstable();
        let legal: [&[&str]; 9] = [
            &["POINT"],
            &["POINT", "to"],
            &["POINT", "duration"],
            &["POINT", "STATUS"],
            &["TYPE"],
            &["PRESS"],
            &["STATUS"],
            &["duration"],
            &["STATUS", "duration"],
        ];
        legal.iter().any(|set| {
            let mut s: Vec<&str> = set.to_vec();
            s.sort_unstable();
            s == sorted
        })
    }

    fn sample_value(name: &str) -> Value {
        match name {
            "POINT" => serde_json::json!([10, 20]),
            "to" => serde_json::json!("up"),
            "TYPE" => serde_json::json!("hi"),
            "PRESS" => serde_json::json!("HOME"),
            "STATUS" => serde_json::json!("finish"),
            "duration" => serde_json::json!(500),
            _ => unreachable!(),
        }
    }

    #[test]
    fn all_64_key_subsets_follow_rule_table() {
        let mut accepted = 0;
        for bits in 0u8..64 {
            let names: Vec<&str> = (0..6)
                .filter(|i| bits & (1 << i) != 0)
                .map(|i| KeySet::NAMES[i])
                .collect();
            let mut map = Map::new();
            for n in &names {
                map.insert((*n).to_owned(), sample_value(n));
            }
            let parsed = Action::from_record(&map);
            let expected = legal_by_name(&names);
            assert_eq!(parsed.is_ok(), expected, "subset {names:?}");
            assert_eq!(combination_allowed(KeySet::from_bits(bits)), expected);
            if let Err(e) = parsed {
                assert!(matches!(e, ActionError::InvalidCombination(_)));
            } else {
                accepted += 1;
            }
        }
        assert_eq!(accepted, 9);
    }

    #[test]
    fn kinds() {
        assert_eq!(Action::click(Point::new(1, 1)).kind(), ActionKind::Click);
        assert_eq!(
            Action::click(Point::new(1, 1)).with_status(Status::Start).kind(),
            ActionKind::Click
        );
        assert_eq!(Action::long_press(Point::new(1, 1), 800).kind(), ActionKind::LongPress);
        assert_eq!(Action::wait(800).kind(), ActionKind::Wait);
        assert_eq!(Action::wait(800).with_status(Status::Start).kind(), ActionKind::Wait);
        assert_eq!(Action::status(Status::Finish).kind(), ActionKind::Status);
    }

    #[test]
    fn normalize_examples() {
        let dims = ScreenDims::new(1080, 2340);
        assert_eq!(normalize_point(540, 1170, dims).unwrap(), Point::new(500, 500));
        assert_eq!(normalize_point(0, 0, dims).unwrap(), Point::new(0, 0));
        assert_eq!(
            normalize_point(0, 0, ScreenDims::new(7, 3)).unwrap(),
            Point::new(0, 0)
        );
        // 1079*1000/1080 = 999.07..., 2339*1000/2340 = 999.57...
        let x = (1079.0f64 * 1000.0 / 1080.0).round() as i32;
        let y = (2339.0f64 * 1000.0 / 2340.0).round() as i32;
        assert_eq!((x, y), (999, 1000));
        assert_eq!(normalize_point(1079, 2339, dims).unwrap(), Point::new(x, y));
        assert!(matches!(
            normalize_point(1080, 0, dims),
            Err(ActionError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn denormalize_examples() {
        let dims = ScreenDims::new(1080, 2340);
        assert_eq!(denormalize_point(Point::new(500, 500), dims).unwrap(), (540, 1170));
        assert_eq!(denormalize_point(Point::new(0, 0), dims).unwrap(), (0, 0));
        let (px, py) = denormalize_point(Point::new(999, 1000), dims).unwrap();
        assert!(px.abs_diff(1079) <= 1 && py.abs_diff(2339) <= 1);
        assert!(denormalize_point(Point::new(0, 1001), dims).is_err());
    }

    #[test]
    fn denormalize_inverts_within_one_pixel() {
        for (w, h) in [(1080, 2340), (720, 1280), (3, 5), (1000, 1000), (2560, 1600)] {
            let dims = ScreenDims::new(w, h);
            for px in 0..w {
                let py = (px * 7 + 3) % h;
                let p = normalize_point(px, py, dims).unwrap();
                let (bx, by) = denormalize_point(p, dims).unwrap();
                assert!(bx.abs_diff(px) <= 1, "{px} -> {p} -> {bx} on {w}");
                assert!(by.abs_diff(py) <= 1, "{py} -> {p} -> {by} on {h}");
            }
        }
    }
}
