use std::fs;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_guikernel"))
        .args(args)
        .output()
        .expect("spawn guikernel")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_repeat_then_metrics_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let exp = dir.path().join("exp.jsonl");
    let o = bin(&[
        "run",
        "youtube-search",
        "--repeat",
        "2",
        "--trace",
        trace.to_str().unwrap(),
        "--experience",
        exp.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&trace).unwrap().lines().count(), 14);

    let m = bin(&["metrics", trace.to_str().unwrap()]);
    assert!(m.status.success());
    let csv = stdout(&m);
    assert!(csv.starts_with("run,device,task,route,steps,policy_calls,ticks\n"));
    assert!(csv.contains(",standard,7,21,42\n"));
    assert!(csv.contains(",replay,7,0,7\n"));
    assert!(csv.contains("# H,0.500000\n"));
    assert!(csv.contains("# eta,0.833333\n"));

    let r = bin(&["replay", exp.to_str().unwrap(), "--scenario", "youtube-search"]);
    assert!(r.status.success());
    assert!(stdout(&r).contains("\"result\":\"completed\""));
    // The same log diverges on a scenario whose screens differ.
    let r = bin(&["replay", exp.to_str().unwrap(), "--scenario", "email", "--device", "phone"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(stdout(&r).contains("\"result\":\"diverged\""));
}

#[test]
fn run_is_deterministic_and_honours_flags() {
    let a = bin(&["run", "gift-purchase"]);
    let b = bin(&["run", "gift-purchase"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);

    let seeded = bin(&["run", "youtube-search", "--seed", "99", "--ensemble", "5"]);
    assert!(seeded.status.success());
    let first = stdout(&seeded).lines().next().unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["proposals"].as_array().unwrap().len(), 5);

    let paused = bin(&["run", "payment-pause"]);
    assert_eq!(paused.status.code(), Some(1));

    let gui = bin(&["run", "email", "--no-function"]);
    assert!(gui.status.success());
    assert!(stdout(&gui).lines().count() >= 5);
    let call = bin(&["run", "email"]);
    assert_eq!(stdout(&call).lines().count(), 1);
    assert!(stdout(&call).contains("\"CALL\":\"send_email\""));
}

#[test]
fn plan_dry_run_and_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    fs::write(
        &plan,
        r#"{"subtasks":[{"id":"a","description":"first"},{"id":"b","description":"second"}],
            "edges":[["a","b"]],
            "allocation":{"a":"d1","b":"d2"},
            "endpoints":[{"id":"d1","kind":"device"},{"id":"d2","kind":"device"}]}"#,
    )
    .unwrap();
    let o = bin(&["plan", plan.to_str().unwrap()]);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].contains("\"subtask\":\"a\"") && lines[0].contains("started"));
    assert!(lines[3].contains("\"subtask\":\"b\"") && lines[3].contains("completed"));

    // That plan names tasks the gift scenario lacks.
    let o = bin(&["plan", plan.to_str().unwrap(), "--scenario", "gift-purchase"]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(
        &plan,
        r#"{"subtasks":[{"id":"a","description":"x"},{"id":"b","description":"y"}],
            "edges":[["a","b"],["b","a"]],"allocation":{"a":"d","b":"d"},
            "endpoints":[{"id":"d","kind":"device"}]}"#,
    )
    .unwrap();
    let o = bin(&["plan", plan.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cycle"));
}

#[test]
fn vote_demo_prints_round() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("proposals.json");
    fs::write(
        &p,
        r#"[{"agent_index":0,"action":{"POINT":[100,200]},"thought":"a"},
            {"agent_index":1,"action":{"POINT":[110,210]},"thought":"b"},
            {"agent_index":2,"action":{"PRESS":"BACK"},"thought":"c"}]"#,
    )
    .unwrap();
    let o = bin(&["vote-demo", p.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["tally"]["click"], 2);
    assert_eq!(v["tally"]["press"], 1);
    assert_eq!(v["decision"]["action"]["POINT"], serde_json::json!([100, 200]));
    assert_eq!(v["source_agent"], 0);

    fs::write(&p, "[]").unwrap();
    assert_eq!(bin(&["vote-demo", p.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn grpo_train_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = dir.path().join("metrics.csv");
    fs::write(&cfg, r#"{"iterations": 5, "seed": 3}"#).unwrap();
    let o = bin(&["grpo-train", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iteration,mean_reward,J,KL,expected_reward");
    assert_eq!(lines.len(), 6);

    fs::write(&cfg, r#"{"group_size": 1}"#).unwrap();
    assert_eq!(bin(&["grpo-train", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let o = bin(&["run", "no-such-scenario"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["run", "youtube-search", "--instruction", "Do something unknown"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no task"));
    let o = bin(&["run", "youtube-search", "--ensemble", "0"]);
    assert_eq!(o.status.code(), Some(2));
}
