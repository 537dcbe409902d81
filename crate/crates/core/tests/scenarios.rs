use guikernel::action::Status;
use guikernel::calibration::Verdict;
use guikernel::harness::{
    bundled_scenario, trace_metrics, trace_to_string, verify_trace, Executed, RunRoute,
    ScenarioFile, StepKind, World,
};
use guikernel::planner::{check_log, PlanOutcome, SubtaskState};

fn scenario(name: &str) -> ScenarioFile {
    ScenarioFile::from_json(bundled_scenario(name).unwrap()).unwrap()
}

const YT: &str = "Search for mr-beast on YouTube and play the video";

#[test]
fn youtube_second_run_replays() {
    let mut w = World::open("youtube-search").unwrap();
    let cfg = w.pipeline_config();
    let first = w.run_pipeline("phone", YT, &cfg).unwrap();
    let second = w.run_pipeline("phone", YT, &cfg).unwrap();
    assert_eq!(second.route, RunRoute::Replay);
    assert_eq!(second.policy_invocations, 0);
    assert_eq!(second.final_digest, first.final_digest);
    assert_eq!(second.steps(), 7);
    assert!(second.trace.iter().all(|r| r.replayed));
    let eta = 1.0 - second.duration() as f64 / first.duration() as f64;
    assert!((eta - 35.0 / 42.0).abs() < 1e-12);
    assert_eq!(w.experience.counters(), (1, 2));

    let mut all = first.trace.clone();
    all.extend(second.trace.clone());
    verify_trace(&scenario("youtube-search"), &all).unwrap();
    let m = trace_metrics(&all);
    assert_eq!(m.hit_rate, Some(0.5));
    assert!((m.efficiency_gain.unwrap() - 35.0 / 42.0).abs() < 1e-12);
}

#[test]
fn mutated_screen_forces_fallback() {
    let mut w = World::open("youtube-search").unwrap();
    let cfg = w.pipeline_config();
    w.run_pipeline("phone", YT, &cfg).unwrap();
    w.mutate_widget("youtube", "results", 2, "MrBeast Shorts").unwrap();
    let out = w.run_pipeline("phone", YT, &cfg).unwrap();
    assert_eq!(out.route, RunRoute::ReplayFallback { step: 5 });
    assert_eq!(out.status, Status::Finish);
    assert!(out.trace[..5].iter().all(|r| r.replayed));
    assert!(out.trace[5..].iter().all(|r| !r.replayed));
    assert!(out.policy_invocations > 0);
}

#[test]
fn payment_pauses_without_password() {
    let mut w = World::open("payment-pause").unwrap();
    let cfg = w.pipeline_config();
    let out = w
        .run_pipeline("phone", "Recharge 100 yuan for my mobile number", &cfg)
        .unwrap();
    assert_eq!(out.status, Status::Impossible);
    let last = out.trace.last().unwrap();
    assert_eq!(last.kind, StepKind::Feedback);
    assert_eq!(last.feedback.as_ref().unwrap().key, "payment_password");
    assert_eq!(last.feedback.as_ref().unwrap().reply, None);
    // The number came from memory and was typed into the top-up form.
    let typed = out.trace.iter().find_map(|r| match &r.executed {
        Some(Executed::Action(a)) => a.type_text.clone(),
        _ => None,
    });
    assert_eq!(typed.as_deref(), Some("13951696300"));
    assert_eq!(w.location("phone").unwrap().1, "password");
    assert!(w.experience.is_empty());
}

#[test]
fn calls_use_memory_and_feedback() {
    let mut w = World::open("call-mom").unwrap();
    let cfg = w.pipeline_config();
    let mom = w.run_pipeline("phone", "Call Mom", &cfg).unwrap();
    assert_eq!(mom.status, Status::Finish);
    assert_eq!(mom.steps(), 4);
    assert!(mom.trace.iter().all(|r| r.kind == StepKind::Gui));

    let dad = w.run_pipeline("phone", "Call Dad", &cfg).unwrap();
    assert_eq!(dad.status, Status::Finish);
    let fb: Vec<_> = dad.trace.iter().filter(|r| r.kind == StepKind::Feedback).collect();
    assert_eq!(fb.len(), 1);
    assert_eq!(fb[0].feedback.as_ref().unwrap().reply.as_deref(), Some("13800000000"));
    assert_eq!(w.memory.retrieve("father", "phone_number"), Some("13800000000"));

    let grandson = w.run_pipeline("phone", "Call my grandson", &cfg).unwrap();
    assert_eq!(grandson.status, Status::Impossible);
    assert_eq!(w.memory.retrieve("grandson", "phone_number"), None);
}

#[test]
fn email_function_route_is_one_step() {
    let mut w = World::open("email").unwrap();
    let mut cfg = w.pipeline_config();
    let instr = "Email the weekly report to boss@example.com";
    let call = w.run_pipeline("phone", instr, &cfg).unwrap();
    assert_eq!(call.route, RunRoute::Function);
    assert_eq!(call.steps(), 1);
    assert_eq!(call.status, Status::Finish);
    assert_eq!(w.tools.mailbox.len(), 1);
    assert_eq!(call.trace[0].kind, StepKind::FunctionCall);

    cfg.select_function = false;
    let gui = w.run_pipeline("phone", instr, &cfg).unwrap();
    assert_eq!(gui.route, RunRoute::Standard);
    assert_eq!(gui.status, Status::Finish);
    assert!(gui.steps() >= 5, "gui route took {} steps", gui.steps());
}

#[test]
fn calibration_trap_learns_from_failure() {
    let mut w = World::open("calibration-trap").unwrap();
    let cfg = w.pipeline_config();
    let out = w
        .run_pipeline("phone", "Open the news app and continue reading the lead story", &cfg)
        .unwrap();
    assert_eq!(out.status, Status::Finish);
    let cal: Vec<_> = out.trace.iter().filter_map(|r| r.calibration.as_ref().map(|c| (r, c))).collect();
    let (bad, c1) = cal.iter().find(|(_, c)| c.verdict == Verdict::Corrected).unwrap();
    assert!(!bad.state_changed);
    assert!(w.failures.contains(bad.digest, c1.final_point));
    let (good, c2) = cal
        .iter()
        .find(|(_, c)| c.verdict == Verdict::BypassedByHistory)
        .unwrap();
    assert!(good.state_changed);
    assert_eq!(Some(c2.final_point), good.decision.as_ref().unwrap().action.point);
    assert!(good.step > bad.step);
}

#[test]
fn gift_plan_moves_tags_between_phones() {
    let mut w = World::open("gift-purchase").unwrap();
    let cfg = w.pipeline_config();
    let out = w.run_cross_device(&cfg).unwrap();
    assert_eq!(out.plan.outcome, PlanOutcome::Completed);
    let graph = w.plan().unwrap().clone().into_plan().unwrap().graph;
    assert!(check_log(&graph, out.plan.log()).is_ok());
    assert_eq!(out.runs.len(), 5);
    let cross: Vec<_> = out.plan.bus.iter().filter(|m| m.from_endpoint != m.to_endpoint).collect();
    assert_eq!(cross.len(), 1);
    assert_eq!(cross[0].from_subtask, "st3");
    assert_eq!(cross[0].to_subtask, "st4");
    assert_eq!(cross[0].payload.get("tags").map(String::as_str), Some("Crayon Shin-chan, anime"));
    let st5 = &out.runs[4];
    let typed = st5.trace.iter().find_map(|r| match &r.executed {
        Some(Executed::Action(a)) => a.type_text.clone(),
        _ => None,
    });
    assert_eq!(typed.as_deref(), Some("Crayon Shin-chan, anime"));
    verify_trace(&scenario("gift-purchase"), &out.trace()).unwrap();
}

#[test]
fn gift_plan_fault_blocks_descendants() {
    let mut w = World::open("gift-purchase").unwrap();
    w.injected_faults.insert("st2".into());
    let cfg = w.pipeline_config();
    let out = w.run_cross_device(&cfg).unwrap();
    assert_ne!(out.plan.outcome, PlanOutcome::Completed);
    assert_eq!(out.plan.status.state("st2"), Some(SubtaskState::Failed));
    for id in ["st3", "st4", "st5"] {
        assert_eq!(out.plan.status.state(id), Some(SubtaskState::Skipped), "{id}");
    }
    assert!(out.runs.iter().all(|r| r.device == "lily_phone"));
}

#[test]
fn identical_runs_are_byte_identical() {
    for name in ["youtube-search", "payment-pause", "gift-purchase"] {
        let run = || {
            let mut w = World::open(name).unwrap();
            let cfg = w.pipeline_config();
            trace_to_string(&w.run_default(&cfg).unwrap())
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b, "{name}");
        assert!(!a.is_empty());
    }
}
