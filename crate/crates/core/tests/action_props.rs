use guikernel::action::{
    combination_allowed, parse_action, serialize_action, Action, ActionKind, Direction, Key,
    KeySet, Point, Status, SwipeTarget,
};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Point> {
    (0..=1000i32, 0..=1000i32).prop_map(|(x, y)| Point::new(x, y))
}

fn status() -> impl Strategy<Value = Status> {
    prop::sample::select(Status::ALL.to_vec())
}

fn action() -> impl Strategy<Value = Action> {
    let dur = 1..=600_000u64;
    prop_oneof![
        point().prop_map(Action::click),
        (point(), prop::sample::select(Direction::ALL.to_vec()))
            .prop_map(|(p, d)| Action::swipe(p, SwipeTarget::Direction(d))),
        (point(), point()).prop_map(|(p, q)| Action::swipe(p, SwipeTarget::Point(q))),
        (point(), dur.clone()).prop_map(|(p, d)| Action::long_press(p, d)),
        (point(), status()).prop_map(|(p, s)| Action::click(p).with_status(s)),
        any::<String>().prop_map(Action::type_text),
        prop::sample::select(Key::ALL.to_vec()).prop_map(Action::press),
        status().prop_map(Action::status),
        dur.clone().prop_map(Action::wait),
        (dur, status()).prop_map(|(d, s)| Action::wait(d).with_status(s)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4000))]

    #[test]
    fn roundtrip(a in action()) {
        let s = serialize_action(&a);
        prop_assert!(!s.contains('\n'));
        prop_assert!(a.validate().is_ok());
        prop_assert_eq!(parse_action(&s).unwrap(), a);
    }

    #[test]
    fn whitespace_is_insignificant(a in action()) {
        let value: serde_json::Value = serde_json::from_str(&serialize_action(&a)).unwrap();
        let pretty = serde_json::to_string_pretty(&value).unwrap();
        prop_assert_eq!(parse_action(&pretty).unwrap(), a);
    }

    #[test]
    fn kind_matches_key_set(a in action()) {
        let keys = a.key_set();
        prop_assert!(combination_allowed(keys));
        let expect = if keys.contains(KeySet::TO) {
            ActionKind::Swipe
        } else if keys.contains(KeySet::POINT) && keys.contains(KeySet::DURATION) {
            ActionKind::LongPress
        } else if keys.contains(KeySet::POINT) {
            ActionKind::Click
        } else if keys.contains(KeySet::TYPE) {
            ActionKind::Type
        } else if keys.contains(KeySet::PRESS) {
            ActionKind::Press
        } else if keys.contains(KeySet::DURATION) {
            ActionKind::Wait
        } else {
            ActionKind::Status
        };
        prop_assert_eq!(a.kind(), expect);
    }

    #[test]
    fn out_of_range_points_are_rejected(x in 1001..5000i32, y in 0..=1000i32) {
        let wide = format!(r#"{{"POINT":[{x},{y}]}}"#);
        let negative = format!(r#"{{"POINT":[{y},-{x}]}}"#);
        prop_assert!(parse_action(&wide).is_err());
        prop_assert!(parse_action(&negative).is_err());
    }
}

#[test]
fn printed_examples_are_short() {
    for text in [
        r#"{"POINT": [87, 445], "STATUS": "start"}"#,
        r#"{"POINT": [123, 456], "to": "left"}"#,
        r#"{"TYPE": "  交费"}"#,
        r#"{"PRESS": "BACK"}"#,
        r#"{"STATUS": "finish"}"#,
    ] {
        let compact = serialize_action(&parse_action(text).unwrap());
        let tokens = compact
            .split(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
            .filter(|t| !t.is_empty())
            .count();
        assert!(tokens <= 12, "{compact} has {tokens} tokens");
        assert!(compact.len() < text.len());
    }
}
