//! Structured interface state: widget records, hit testing and the
//! canonical screen digest.
//!
//! Upstream detection emits widgets with unit-interval float boxes. They are
//! scaled to per-mille integers on ingestion so that all geometry shares the
//! action coordinate space.
//!
//! # Digest algorithm
//!
//! [`hash_screen`] is 64-bit FNV-1a over the canonical byte string:
//!
//! ```text
//! for each widget, sorted by index:
//!     widget_type bytes, 0x1F, content bytes, 0x1F,
//!     q(x1), q(y1), q(x2), q(y2),        one byte each
//!     0x1E
//! q(c) = min(c / 50, 19)                 20 cells per axis
//! ```
//!
//! Index, interactivity and screen id are not part of the canonical form.
//! The empty screen hashes to the FNV offset basis, [`EMPTY_SCREEN_DIGEST`].

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::action::{Point, COORD_MAX};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Grid cells per axis used to quantize box corners.
pub const DIGEST_GRID: i32 = 20;

/// Digest of a screen with no widgets.
pub const EMPTY_SCREEN_DIGEST: ScreenDigest = ScreenDigest(FNV_OFFSET);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScreenError {
    #[error("widget {index}: bad bounding box {bbox:?}: {reason}")]
    BadBbox {
        index: u32,
        bbox: [f64; 4],
        reason: &'static str,
    },
    #[error("duplicate widget index {0}")]
    DuplicateIndex(u32),
    #[error("widget fixture: {0}")]
    Fixture(String),
}

/// Axis-aligned rectangle in per-mille coordinates, corners inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BBox {
    pub x1: i32,
    pub y1: i32,
    pub x2: i32,
    pub y2: i32,
}

impl BBox {
    pub const fn new(x1: i32, y1: i32, x2: i32, y2: i32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Corners ordered strictly and inside `[0, 1000]`.
    pub fn is_valid(&self) -> bool {
        let r = 0..=COORD_MAX;
        self.x1 < self.x2
            && self.y1 < self.y2
            && r.contains(&self.x1)
            && r.contains(&self.x2)
            && r.contains(&self.y1)
            && r.contains(&self.y2)
    }

    /// Closed-interval containment.
    pub fn contains(&self, p: Point) -> bool {
        self.x1 <= p.x && p.x <= self.x2 && self.y1 <= p.y && p.y <= self.y2
    }

    pub fn area(&self) -> i64 {
        i64::from(self.x2 - self.x1) * i64::from(self.y2 - self.y1)
    }

    /// Mean of the corners, rounded half away from zero on each axis.
    pub fn center(&self) -> Point {
        fn mid(a: i32, b: i32) -> i32 {
            let s = a + b;
            if s >= 0 {
                (s + 1) / 2
            } else {
                (s - 1) / 2
            }
        }
        Point::new(mid(self.x1, self.x2), mid(self.y1, self.y2))
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.x1, self.y1, self.x2, self.y2].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x1, y1, x2, y2] = <[i32; 4]>::deserialize(deserializer)?;
        Ok(Self { x1, y1, x2, y2 })
    }
}

/// One detected widget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidgetRecord {
    pub index: u32,
    #[serde(rename = "type")]
    pub widget_type: String,
    pub content: String,
    pub interactive: bool,
    pub bbox: BBox,
}

impl WidgetRecord {
    pub fn is_input(&self) -> bool {
        self.widget_type.eq_ignore_ascii_case("input_field")
    }
}

/// Structured state of one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Screen {
    pub screen_id: String,
    pub widgets: Vec<WidgetRecord>,
}

impl Screen {
    /// Validates box geometry and index uniqueness.
    pub fn new(
        screen_id: impl Into<String>,
        widgets: Vec<WidgetRecord>,
    ) -> Result<Self, ScreenError> {
        let mut seen = HashSet::new();
        for w in &widgets {
            if !seen.insert(w.index) {
                return Err(ScreenError::DuplicateIndex(w.index));
            }
            if !w.bbox.is_valid() {
                let b = w.bbox;
                return Err(ScreenError::BadBbox {
                    index: w.index,
                    bbox: [b.x1, b.y1, b.x2, b.y2].map(|c| f64::from(c) / 1000.0),
                    reason: "corners must be ordered and within [0, 1000]",
                });
            }
        }
        Ok(Self {
            screen_id: screen_id.into(),
            widgets,
        })
    }

    pub fn empty(screen_id: impl Into<String>) -> Self {
        Self {
            screen_id: screen_id.into(),
            widgets: Vec::new(),
        }
    }

    pub fn widget(&self, index: u32) -> Option<&WidgetRecord> {
        self.widgets.iter().find(|w| w.index == index)
    }

    pub fn widget_mut(&mut self, index: u32) -> Option<&mut WidgetRecord> {
        self.widgets.iter_mut().find(|w| w.index == index)
    }

    /// First widget whose content equals `content` exactly.
    pub fn find_by_content(&self, content: &str) -> Option<&WidgetRecord> {
        self.widgets.iter().find(|w| w.content == content)
    }

    pub fn interactive(&self) -> impl Iterator<Item = &WidgetRecord> {
        self.widgets.iter().filter(|w| w.interactive)
    }

    pub fn digest(&self) -> ScreenDigest {
        hash_screen(self)
    }
}

/// Interactivity as printed by upstream parsers: a boolean or `"Yes"`/`"No"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interactivity(pub bool);

impl<'de> Deserialize<'de> for Interactivity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Bool(bool),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Bool(b) => Ok(Self(b)),
            Raw::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "yes" | "true" => Ok(Self(true)),
                "no" | "false" => Ok(Self(false)),
                other => Err(serde::de::Error::custom(format!(
                    "bad interactivity `{other}`"
                ))),
            },
        }
    }
}

impl Serialize for Interactivity {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_bool(self.0)
    }
}

/// One entry of a widget-fixture document; `bbox` holds unit-interval floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureWidget {
    pub index: u32,
    #[serde(rename = "type")]
    pub widget_type: String,
    pub content: String,
    pub interactive: Interactivity,
    pub bbox: [f64; 4],
}

fn scale(c: f64) -> i32 {
    (c * 1000.0).round() as i32
}

/// Converts a fixture document into a [`Screen`], preserving order.
pub fn ingest_widgets(
    screen_id: impl Into<String>,
    fixture: &[FixtureWidget],
) -> Result<Screen, ScreenError> {
    let mut widgets = Vec::with_capacity(fixture.len());
    for fw in fixture {
        let [x1, y1, x2, y2] = fw.bbox;
        if !fw.bbox.iter().all(|c| c.is_finite() && (0.0..=1.0).contains(c)) {
            return Err(ScreenError::BadBbox {
                index: fw.index,
                bbox: fw.bbox,
                reason: "corners must lie in [0, 1]",
            });
        }
        let bbox = BBox::new(scale(x1), scale(y1), scale(x2), scale(y2));
        if bbox.x1 >= bbox.x2 || bbox.y1 >= bbox.y2 {
            return Err(ScreenError::BadBbox {
                index: fw.index,
                bbox: fw.bbox,
                reason: "corners reversed or degenerate",
            });
        }
        widgets.push(WidgetRecord {
            index: fw.index,
            widget_type: fw.widget_type.clone(),
            content: fw.content.clone(),
            interactive: fw.interactive.0,
            bbox,
        });
    }
    Screen::new(screen_id, widgets)
}

/// Parses a JSON widget-fixture document and ingests it.
pub fn ingest_json(screen_id: impl Into<String>, text: &str) -> Result<Screen, ScreenError> {
    let fixture: Vec<FixtureWidget> =
        serde_json::from_str(text).map_err(|e| ScreenError::Fixture(e.to_string()))?;
    ingest_widgets(screen_id, &fixture)
}

/// All widgets whose closed box contains `p`, in screen order.
pub fn hit_test(screen: &Screen, p: Point) -> Vec<&WidgetRecord> {
    screen.widgets.iter().filter(|w| w.bbox.contains(p)).collect()
}

/// 64-bit screen digest; see the module docs for the exact algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ScreenDigest(pub u64);

impl fmt::Display for ScreenDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for ScreenDigest {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s.trim_start_matches("0x"), 16).map(ScreenDigest)
    }
}

impl Serialize for ScreenDigest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScreenDigest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn quantize(c: i32) -> u8 {
    (c.clamp(0, COORD_MAX) / (COORD_MAX / DIGEST_GRID)).min(DIGEST_GRID - 1) as u8
}

/// Canonical byte string hashed by [`hash_screen`].
pub fn canonical_bytes(screen: &Screen) -> Vec<u8> {
    let mut sorted: Vec<&WidgetRecord> = screen.widgets.iter().collect();
    sorted.sort_by_key(|w| w.index);
    let mut out = Vec::new();
    for w in sorted {
        out.extend_from_slice(w.widget_type.as_bytes());
        out.push(0x1f);
        out.extend_from_slice(w.content.as_bytes());
        out.push(0x1f);
        let b = w.bbox;
        out.extend([quantize(b.x1), quantize(b.y1), quantize(b.x2), quantize(b.y2)]);
        out.push(0x1e);
    }
    out
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn hash_screen(screen: &Screen) -> ScreenDigest {
    ScreenDigest(fnv1a64(&canonical_bytes(screen)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HOME: &str = include_str!("../fixtures/home_widgets.json");

    fn home() -> Screen {
        ingest_json("home", HOME).unwrap()
    }

    #[test]
    fn ingests_printed_rows() {
        let s = home();
        let yt = s.widget(11).unwrap();
        assert_eq!(yt.content, "YouTube");
        assert!(yt.interactive);
        assert_eq!(yt.bbox, BBox::new(740, 630, 900, 730));
        let date = s.widget(13).unwrap();
        assert!(!date.interactive);
        assert_eq!(date.bbox, BBox::new(120, 140, 180, 170));
    }

    #[test]
    fn rejects_degenerate_and_reversed_boxes() {
        let bad = r#"[{"index":1,"type":"Text","content":"x","interactive":false,"bbox":[0.5,0.5,0.5,0.6]}]"#;
        assert!(matches!(ingest_json("s", bad), Err(ScreenError::BadBbox { .. })));
        let rev = r#"[{"index":1,"type":"Text","content":"x","interactive":false,"bbox":[0.6,0.5,0.5,0.6]}]"#;
        assert!(matches!(ingest_json("s", rev), Err(ScreenError::BadBbox { .. })));
        let out = r#"[{"index":1,"type":"Text","content":"x","interactive":false,"bbox":[0.1,0.1,1.2,0.6]}]"#;
        assert!(matches!(ingest_json("s", out), Err(ScreenError::BadBbox { .. })));
    }

    #[test]
    fn rejects_duplicate_index() {
        let dup = r#"[
            {"index":1,"type":"Text","content":"a","interactive":"No","bbox":[0.1,0.1,0.2,0.2]},
            {"index":1,"type":"Text","content":"b","interactive":"Yes","bbox":[0.3,0.3,0.4,0.4]}
        ]"#;
        assert_eq!(ingest_json("s", dup), Err(ScreenError::DuplicateIndex(1)));
    }

    #[test]
    fn hit_test_examples() {
        let s = home();
        let naive: Vec<u32> = s
            .widgets
            .iter()
            .filter(|w| {
                let b = w.bbox;
                b.x1 <= 800 && 800 <= b.x2 && b.y1 <= 700 && 700 <= b.y2
            })
            .map(|w| w.index)
            .collect();
        let hits: Vec<u32> = hit_test(&s, Point::new(800, 700)).iter().map(|w| w.index).collect();
        assert_eq!(hits, naive);
        assert_eq!(hits, vec![11]);
        assert!(hit_test(&s, Point::new(0, 0)).is_empty());
    }

    #[test]
    fn shared_boundary_hits_both() {
        let w = |i, b| WidgetRecord {
            index: i,
            widget_type: "button".into(),
            content: format!("w{i}"),
            interactive: true,
            bbox: b,
        };
        let s = Screen::new(
            "s",
            vec![w(0, BBox::new(100, 100, 200, 200)), w(1, BBox::new(200, 100, 300, 200))],
        )
        .unwrap();
        assert_eq!(hit_test(&s, Point::new(200, 150)).len(), 2);
    }

    #[test]
    fn center_rounds_half_away_from_zero() {
        assert_eq!(BBox::new(20, 20, 40, 40).center(), Point::new(30, 30));
        assert_eq!(BBox::new(0, 0, 1, 3).center(), Point::new(1, 2));
    }

    #[test]
    fn digest_properties() {
        let s = home();
        let mut reversed = s.clone();
        reversed.widgets.reverse();
        assert_eq!(hash_screen(&s), hash_screen(&reversed));

        let mut changed = s.clone();
        changed.widget_mut(11).unwrap().content = "YouTube Kids".into();
        assert_ne!(hash_screen(&s), hash_screen(&changed));

        assert_eq!(hash_screen(&Screen::empty("x")), EMPTY_SCREEN_DIGEST);
        assert_eq!(EMPTY_SCREEN_DIGEST.0, 0xcbf29ce484222325);
        // Screen id is not part of the canonical form.
        let mut renamed = s.clone();
        renamed.screen_id = "other".into();
        assert_eq!(hash_screen(&s), hash_screen(&renamed));
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn digest_text_roundtrip() {
        let d = hash_screen(&home());
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(text.len(), 18);
        assert_eq!(serde_json::from_str::<ScreenDigest>(&text).unwrap(), d);
    }
}
