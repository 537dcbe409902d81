use std::collections::{BTreeMap, BTreeSet};

use guikernel::planner::{
    check_log, run_plan, AllocatedPlan, Endpoint, ExecutorError, Payload, PlanOutcome,
    PlannerError, Subtask, SubtaskState, TaskGraph, Transition,
};
use proptest::prelude::*;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("t{i}")).collect()
}

/// Forward edges over `n` nodes, so always acyclic.
fn dag() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1..9usize).prop_flat_map(|n| {
        let edge = (0..n, 0..n).prop_map(|(a, b)| (a.min(b), a.max(b)));
        let edges = prop::collection::vec(edge, 0..16)
            .prop_map(|es| es.into_iter().filter(|(a, b)| a != b).collect::<Vec<_>>());
        (Just(n), edges)
    })
}

fn graph(n: usize, edges: &[(usize, usize)]) -> Result<TaskGraph, PlannerError> {
    let ids = ids(n);
    TaskGraph::build(
        ids.iter().map(|i| Subtask::new(i.as_str(), "")).collect(),
        edges.iter().map(|&(a, b)| (ids[a].clone(), ids[b].clone())),
    )
}

fn kahn_acyclic(n: usize, edges: &[(usize, usize)]) -> bool {
    let edges: BTreeSet<_> = edges.iter().copied().collect();
    let mut indeg = vec![0; n];
    for &(_, b) in &edges {
        indeg[b] += 1;
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(v) = queue.pop() {
        seen += 1;
        for &(a, b) in &edges {
            if a == v {
                indeg[b] -= 1;
                if indeg[b] == 0 {
                    queue.push(b);
                }
            }
        }
    }
    seen == n
}

fn ancestors(n: usize, edges: &[(usize, usize)], v: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut stack = vec![v];
    while let Some(x) = stack.pop() {
        for &(a, b) in edges {
            if b == x && out.insert(a) {
                stack.push(a);
            }
        }
    }
    debug_assert!(out.iter().all(|&a| a < n));
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1500))]

    #[test]
    fn cycle_detection_matches_kahn(n in 1..8usize, raw in prop::collection::vec((0..8usize, 0..8usize), 0..14)) {
        let edges: Vec<_> = raw.into_iter().map(|(a, b)| (a % n, b % n)).collect();
        let built = graph(n, &edges);
        prop_assert_eq!(built.is_ok(), kahn_acyclic(n, &edges));
        if let Err(PlannerError::CycleDetected { witness }) = built {
            let set: BTreeSet<(String, String)> = edges.iter().map(|&(a, b)| (format!("t{a}"), format!("t{b}"))).collect();
            prop_assert!(witness.len() >= 2);
            prop_assert_eq!(witness.first(), witness.last());
            for w in witness.windows(2) {
                prop_assert!(set.contains(&(w[0].clone(), w[1].clone())));
            }
        }
    }

    #[test]
    fn execution_is_safe_live_and_skips_exactly_the_blocked(
        (n, edges) in dag(),
        devices in prop::collection::vec(0..3usize, 8),
        failing in prop::collection::btree_set(0..8usize, 0..3),
    ) {
        let g = graph(n, &edges).unwrap();
        let names = ids(n);
        let mapping: BTreeMap<String, String> =
            names.iter().enumerate().map(|(i, id)| (id.clone(), format!("d{}", devices[i]))).collect();
        let endpoints: Vec<Endpoint> = (0..3).map(|d| Endpoint::device(format!("d{d}"))).collect();
        let plan = AllocatedPlan::allocate(g, mapping, endpoints).unwrap();
        let failing_ids: BTreeSet<String> = failing.iter().map(|i| format!("t{i}")).collect();
        let mut exec = |_: &Endpoint, s: &Subtask, _: &Payload| -> Result<Payload, ExecutorError> {
            if failing_ids.contains(&s.id) {
                Err(ExecutorError("injected".into()))
            } else {
                Ok(Payload::new())
            }
        };
        let res = run_plan(&plan, &mut exec);
        prop_assert!(check_log(&plan.graph, res.log()).is_ok());

        // A node runs iff no ancestor is a failing node.
        for v in 0..n {
            let blocked = ancestors(n, &edges, v).iter().any(|a| failing.contains(a));
            let expect = if blocked {
                SubtaskState::Skipped
            } else if failing.contains(&v) {
                SubtaskState::Failed
            } else {
                SubtaskState::Completed
            };
            prop_assert_eq!(res.status.state(&names[v]), Some(expect), "t{}", v);
        }
        let started = res.log().iter().filter(|e| e.transition == Transition::Started).count();
        if failing.iter().all(|&f| f >= n) {
            prop_assert_eq!(res.outcome, PlanOutcome::Completed);
            prop_assert_eq!(started, n);
        } else {
            prop_assert_eq!(res.outcome, PlanOutcome::Failed);
        }
    }
}
