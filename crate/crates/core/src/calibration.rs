//! Click-coordinate calibration against widget regions.
//!
//! A proposed click that lands outside every widget is moved to the center of
//! the nearest interactive widget. Correction targets that were executed and
//! produced no state change are remembered per screen digest; the next time
//! the same correction would be made on that screen it is skipped and the
//! original point is executed instead.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Point;
use crate::screen::{hash_screen, hit_test, BBox, Screen, ScreenDigest, WidgetRecord};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("failure memory io: {0}")]
    Io(#[from] io::Error),
    #[error("failure memory line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

/// Euclidean distance from `p` to the closed rectangle `b` (zero inside).
pub fn distance_to_box(p: Point, b: &BBox) -> f64 {
    (squared_distance(p, b) as f64).sqrt()
}

/// Exact squared distance, used for comparisons.
pub fn squared_distance(p: Point, b: &BBox) -> i64 {
    let dx = i64::from((b.x1 - p.x).max(0).max(p.x - b.x2));
    let dy = i64::from((b.y1 - p.y).max(0).max(p.y - b.y2));
    dx * dx + dy * dy
}

/// Nearest interactive widget to `p`. Ties go to the smaller box, then the
/// lower widget index.
pub fn nearest_interactive(screen: &Screen, p: Point) -> Option<&WidgetRecord> {
    screen
        .interactive()
        .min_by_key(|w| (squared_distance(p, &w.bbox), w.bbox.area(), w.index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    KeptInside,
    Corrected,
    BypassedByHistory,
    KeptNoWidgets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionOutcome {
    pub final_point: Point,
    pub verdict: Verdict,
    /// Box of the nearest interactive widget, when a correction was computed.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub chosen_box: Option<BBox>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub chosen_index: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub distance: Option<f64>,
}

/// Per-screen set of correction targets that produced no state change.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FailureMemory {
    entries: BTreeMap<ScreenDigest, BTreeSet<Point>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FailureLine {
    digest: ScreenDigest,
    point: Point,
}

impl FailureMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, digest: ScreenDigest, p: Point) -> bool {
        self.entries.get(&digest).is_some_and(|s| s.contains(&p))
    }

    /// Records a failed correction target. Returns `false` if it was already
    /// known.
    pub fn record_failure(&mut self, digest: ScreenDigest, executed: Point) -> bool {
        self.entries.entry(digest).or_default().insert(executed)
    }

    pub fn points(&self, digest: ScreenDigest) -> impl Iterator<Item = Point> + '_ {
        self.entries.get(&digest).into_iter().flatten().copied()
    }

    /// Number of stored points across all digests.
    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes one `{"digest":..,"point":[x,y]}` line per stored point.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (digest, points) in &self.entries {
            for point in points {
                let line = FailureLine {
                    digest: *digest,
                    point: *point,
                };
                serde_json::to_writer(&mut out, &line)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, CalibrationError> {
        let mut fm = Self::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FailureLine = serde_json::from_str(&line)
                .map_err(|source| CalibrationError::Json { line: i + 1, source })?;
            fm.record_failure(rec.digest, rec.point);
        }
        Ok(fm)
    }
}

/// Calibrates a proposed click on `screen`.
pub fn correct_point(p: Point, screen: &Screen, fm: &FailureMemory) -> CorrectionOutcome {
    if !hit_test(screen, p).is_empty() {
        return CorrectionOutcome {
            final_point: p,
            verdict: Verdict::KeptInside,
            chosen_box: None,
            chosen_index: None,
            distance: None,
        };
    }
    let Some(best) = nearest_interactive(screen, p) else {
        return CorrectionOutcome {
            final_point: p,
            verdict: Verdict::KeptNoWidgets,
            chosen_box: None,
            chosen_index: None,
            distance: None,
        };
    };
    let candidate = best.bbox.center();
    let (final_point, verdict) = if fm.contains(hash_screen(screen), candidate) {
        (p, Verdict::BypassedByHistory)
    } else {
        (candidate, Verdict::Corrected)
    };
    CorrectionOutcome {
        final_point,
        verdict,
        chosen_box: Some(best.bbox),
        chosen_index: Some(best.index),
        distance: Some(distance_to_box(p, &best.bbox)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::screen::ingest_json;

    fn single_box() -> Screen {
        Screen::new(
            "s",
            vec![WidgetRecord {
                index: 0,
                widget_type: "button".into(),
                content: "ok".into(),
                interactive: true,
                bbox: BBox::new(20, 20, 40, 40),
            }],
        )
        .unwrap()
    }

    // Independent route: clamp to the rectangle, then measure.
    fn nearest_point_distance(p: Point, b: &BBox) -> f64 {
        let nx = f64::from(p.x.clamp(b.x1, b.x2));
        let ny = f64::from(p.y.clamp(b.y1, b.y2));
        ((f64::from(p.x) - nx).powi(2) + (f64::from(p.y) - ny).powi(2)).sqrt()
    }

    #[test]
    fn distance_examples() {
        let b = BBox::new(20, 20, 40, 40);
        assert_eq!(distance_to_box(Point::new(30, 30), &b), 0.0);
        let d = distance_to_box(Point::new(10, 10), &b);
        assert!((d - 200f64.sqrt()).abs() < 1e-12);
        assert!((d - 14.1421).abs() < 1e-4);
        assert!((d - nearest_point_distance(Point::new(10, 10), &b)).abs() < 1e-12);
        assert_eq!(distance_to_box(Point::new(30, 5), &b), 15.0);
        assert_eq!(nearest_point_distance(Point::new(30, 5), &b), 15.0);
    }

    #[test]
    fn kept_inside_on_home_screen() {
        let s = ingest_json("home", include_str!("../fixtures/home_widgets.json")).unwrap();
        let out = correct_point(Point::new(800, 700), &s, &FailureMemory::new());
        assert_eq!(out.verdict, Verdict::KeptInside);
        assert_eq!(out.final_point, Point::new(800, 700));
    }

    #[test]
    fn corrects_then_bypasses() {
        let s = single_box();
        let mut fm = FailureMemory::new();
        let out = correct_point(Point::new(10, 10), &s, &fm);
        assert_eq!(out.verdict, Verdict::Corrected);
        assert_eq!(out.final_point, Point::new(30, 30));
        assert_eq!(out.chosen_box, Some(BBox::new(20, 20, 40, 40)));

        assert!(fm.record_failure(hash_screen(&s), Point::new(30, 30)));
        let again = correct_point(Point::new(10, 10), &s, &fm);
        assert_eq!(again.verdict, Verdict::BypassedByHistory);
        assert_eq!(again.final_point, Point::new(10, 10));
    }

    #[test]
    fn no_interactive_widgets_keeps_point() {
        let mut s = single_box();
        s.widgets[0].interactive = false;
        let out = correct_point(Point::new(10, 10), &s, &FailureMemory::new());
        assert_eq!(out.verdict, Verdict::KeptNoWidgets);
        assert_eq!(out.final_point, Point::new(10, 10));
    }

    #[test]
    fn ties_prefer_smaller_then_lower_index() {
        let w = |i, b| WidgetRecord {
            index: i,
            widget_type: "button".into(),
            content: format!("w{i}"),
            interactive: true,
            bbox: b,
        };
        // Both boxes 10 away from (50, 50); the right one is smaller.
        let s = Screen::new(
            "s",
            vec![
                w(3, BBox::new(0, 0, 40, 100)),
                w(7, BBox::new(60, 40, 80, 60)),
            ],
        )
        .unwrap();
        assert_eq!(nearest_interactive(&s, Point::new(50, 50)).unwrap().index, 7);
        let s = Screen::new(
            "s",
            vec![
                w(9, BBox::new(60, 40, 80, 60)),
                w(4, BBox::new(20, 40, 40, 60)),
            ],
        )
        .unwrap();
        assert_eq!(nearest_interactive(&s, Point::new(50, 50)).unwrap().index, 4);
    }

    #[test]
    fn record_failure_is_idempotent() {
        let mut fm = FailureMemory::new();
        let d = ScreenDigest(42);
        assert!(fm.record_failure(d, Point::new(1, 2)));
        assert!(!fm.record_failure(d, Point::new(1, 2)));
        assert_eq!(fm.len(), 1);
        assert_eq!(fm.points(d).collect::<Vec<_>>(), vec![Point::new(1, 2)]);
        assert_eq!(fm.points(ScreenDigest(7)).count(), 0);
    }

    #[test]
    fn jsonl_reload() {
        let mut fm = FailureMemory::new();
        fm.record_failure(ScreenDigest(0xabc), Point::new(30, 30));
        fm.record_failure(ScreenDigest(0xabc), Point::new(5, 6));
        fm.record_failure(ScreenDigest(1), Point::new(999, 0));
        let mut buf = Vec::new();
        fm.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"digest":"0000000000000001","point":[999,0]}"#));
        let back = FailureMemory::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, fm);
    }
}
