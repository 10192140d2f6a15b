use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{Duration, TimeZone, Utc};
use http_body_util::BodyExt;
use pel_core::corpus::TermGroup;
use pel_core::evalkit::{EvaluationKind, EvaluationTask};
use pel_core::model::{AnnotationStore, Phase};
use pel_core::tasker::{AssessmentItem, AssessmentSet, SteppingClock, Tasker, TaskerConfig};
use pel_core::MainClass;
use pel_server::{router, AppState, Shared};
use serde_json::{json, Value};
use tower::ServiceExt;

fn state(pool: usize, cap: u32) -> Shared {
    let mut groups = Vec::new();
    let mut items = Vec::new();
    for i in 0..10 {
        let id = format!("assess{i}");
        groups.push(TermGroup::new(id.clone(), BTreeSet::from([id.clone()]), 1));
        let class = match i {
            8 => MainClass::Intensifying,
            9 => MainClass::None,
            _ => MainClass::Emotion,
        };
        items.push(AssessmentItem { group_id: id, dominant_main_class: class });
    }
    for i in 0..pool {
        let id = format!("term{i:04}");
        groups.push(TermGroup::new(id.clone(), BTreeSet::from([id.clone(), format!("{id}s")]), 2));
    }
    let store = AnnotationStore::in_memory(groups.iter().map(|g| g.id.clone()));
    let clock = SteppingClock::new(Utc.with_ymd_and_hms(2017, 2, 1, 0, 0, 0).unwrap(), Duration::seconds(1));
    let config = TaskerConfig { cap, ..Default::default() };
    let tasker = Tasker::new(config, groups, AssessmentSet::from_items(items), store, Box::new(clock)).unwrap();
    Arc::new(AppState::new(tasker))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value =
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

async fn register(app: &Router, worker: &str) {
    let (s, _) = call(app, "POST", "/api/workers", Some(json!({ "worker": worker }))).await;
    assert_eq!(s, StatusCode::OK);
}

fn correct(group: &str) -> &'static str {
    match group {
        "assess8" => "weakening",
        "assess9" => "none",
        _ => "sadness",
    }
}

/// Answer the assessment, getting the first `right` answers correct.
async fn pass_assessment(app: &Router, worker: &str, right: usize) -> Value {
    let mut last = Value::Null;
    for i in 0..10 {
        let (_, task) = call(app, "GET", &format!("/api/task?worker={worker}"), None).await;
        assert_eq!(task["kind"], "assessment");
        let group = task["group_id"].as_str().unwrap().to_string();
        let answer = if i < right {
            correct(&group)
        } else if group == "assess9" {
            "joy"
        } else {
            "none"
        };
        let (s, body) =
            call(app, "POST", "/api/annotation", Some(json!({ "worker": worker, "group": group, "subclass": answer })))
                .await;
        assert_eq!(s, StatusCode::OK, "{body}");
        last = body;
    }
    last
}

#[tokio::test]
async fn assessment_then_gate_then_acquisition() {
    let app = router(state(5, 660));
    register(&app, "w1").await;
    let (s, status) = call(&app, "GET", "/api/worker/w1/status", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(status["gate"], "pending");
    assert_eq!(status["assessment_required"], 10);

    let last = pass_assessment(&app, "w1", 8).await;
    assert_eq!(last["status"]["gate"], "pass");

    let (_, task) = call(&app, "GET", "/api/task?worker=w1", None).await;
    assert_eq!(task["status"], "assigned");
    assert_eq!(task["kind"], "acquisition");
    let group = task["group_id"].as_str().unwrap();
    let (s, body) = call(
        &app,
        "POST",
        "/api/annotation",
        Some(json!({ "worker": "w1", "group": group, "subclass": "Amplifying" })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["phase"], "acquisition");
    assert_eq!(body["main_class"], "intensifying");
    assert_eq!(body["status"]["acquisition_count"], 1);
}

#[tokio::test]
async fn failed_gate_blocks_acquisition() {
    let app = router(state(5, 660));
    register(&app, "w").await;
    let last = pass_assessment(&app, "w", 7).await;
    assert_eq!(last["status"]["gate"], "fail");
    let (s, task) = call(&app, "GET", "/api/task?worker=w", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(task["status"], "gate_failed");
}

#[tokio::test]
async fn error_statuses() {
    let app = router(state(3, 660));
    let (s, body) = call(&app, "GET", "/api/task?worker=nobody", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nobody"));
    assert_eq!(call(&app, "GET", "/api/worker/nobody/status", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/groups/missing", None).await.0, StatusCode::NOT_FOUND);

    register(&app, "w").await;
    let unassigned = json!({ "worker": "w", "group": "term0000", "subclass": "joy" });
    assert_eq!(call(&app, "POST", "/api/annotation", Some(unassigned)).await.0, StatusCode::FORBIDDEN);
    let bad = json!({ "worker": "w", "group": "term0000", "subclass": "happiness" });
    assert_eq!(call(&app, "POST", "/api/annotation", Some(bad)).await.0, StatusCode::BAD_REQUEST);

    let (_, task) = call(&app, "GET", "/api/task?worker=w", None).await;
    let group = task["group_id"].as_str().unwrap().to_string();
    let submit = json!({ "worker": "w", "group": group, "subclass": "none" });
    assert_eq!(call(&app, "POST", "/api/annotation", Some(submit.clone())).await.0, StatusCode::OK);
    assert_eq!(call(&app, "POST", "/api/annotation", Some(submit)).await.0, StatusCode::CONFLICT);
    assert_eq!(call(&app, "GET", "/api/task?worker=w&kind=other", None).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn group_lookup_includes_dictionary_link() {
    let app = router(state(2, 660));
    let (s, g) = call(&app, "GET", "/api/groups/term0001", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(g["stem"], "term0001");
    assert_eq!(g["terms"], json!(["term0001", "term0001s"]));
    assert!(g["dictionary_link"].as_str().unwrap().starts_with("https://"));
}

#[tokio::test]
async fn evaluation_round_trip() {
    let shared = state(2, 660);
    shared.tasker().set_evaluation_tasks(vec![
        EvaluationTask { group_id: "term0000".into(), summary: "summary".into(), kind: EvaluationKind::Validity },
        EvaluationTask { group_id: "term0001".into(), summary: "other".into(), kind: EvaluationKind::IntensifierCheck },
    ]);
    let app = router(shared.clone());
    let (s, _) = call(&app, "POST", "/api/workers", Some(json!({ "worker": "ex", "evaluator_kind": "expert" }))).await;
    assert_eq!(s, StatusCode::OK);
    register(&app, "plain").await;
    assert_eq!(call(&app, "GET", "/api/task?worker=plain&kind=evaluation", None).await.0, StatusCode::FORBIDDEN);

    let (_, task) = call(&app, "GET", "/api/task?worker=ex&kind=evaluation", None).await;
    assert_eq!(task["kind"], "evaluation");
    assert_eq!(task["evaluation"]["summary"], "summary");
    let both = json!({ "worker": "ex", "group": "term0000", "score": 4, "intensifier_valid": true });
    assert_eq!(call(&app, "POST", "/api/evaluation", Some(both)).await.0, StatusCode::BAD_REQUEST);
    let out_of_range = json!({ "worker": "ex", "group": "term0000", "score": 9 });
    assert_eq!(call(&app, "POST", "/api/evaluation", Some(out_of_range)).await.0, StatusCode::BAD_REQUEST);
    let ok = json!({ "worker": "ex", "group": "term0000", "score": 4 });
    let (s, status) = call(&app, "POST", "/api/evaluation", Some(ok.clone())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(status["evaluations_done"], 1);
    assert_eq!(call(&app, "POST", "/api/evaluation", Some(ok)).await.0, StatusCode::CONFLICT);

    let (_, task) = call(&app, "GET", "/api/task?worker=ex&kind=evaluation", None).await;
    assert_eq!(task["group_id"], "term0001");
    let judgment = json!({ "worker": "ex", "group": "term0001", "intensifier_valid": false });
    assert_eq!(call(&app, "POST", "/api/evaluation", Some(judgment)).await.0, StatusCode::OK);
    let (_, task) = call(&app, "GET", "/api/task?worker=ex&kind=evaluation", None).await;
    assert_eq!(task["status"], "exhausted");
    assert_eq!(shared.tasker().evaluations().len(), 2);
}

#[tokio::test]
async fn lexicon_export_over_http() {
    let shared = state(3, 660);
    let app = router(shared.clone());
    let (s, body) = call(&app, "GET", "/api/lexicon.csv", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(body.as_str().unwrap().starts_with("stem,terms,joy,"));
    assert_eq!(body.as_str().unwrap().lines().count(), 1);

    for w in ["a", "b"] {
        register(&app, w).await;
        pass_assessment(&app, w, 10).await;
        for _ in 0..3 {
            let (_, task) = call(&app, "GET", &format!("/api/task?worker={w}"), None).await;
            let group = task["group_id"].as_str().unwrap();
            let submit = json!({ "worker": w, "group": group, "subclass": "joy" });
            assert_eq!(call(&app, "POST", "/api/annotation", Some(submit)).await.0, StatusCode::OK);
        }
    }
    let (_, body) = call(&app, "GET", "/api/lexicon.csv", None).await;
    let csv = body.as_str().unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");
    assert!(csv.lines().nth(1).unwrap().starts_with("term0000,term0000;term0000s,2,"), "{csv}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_clients_never_exceed_cap() {
    let cap = 660;
    let shared = state(700, cap);
    let app = router(shared.clone());
    register(&app, "solo").await;
    pass_assessment(&app, "solo", 10).await;

    // Four clients hammer the same worker id; each fetches and submits.
    let mut handles = Vec::new();
    for c in 0..4 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let subclasses = ["joy", "fear", "none", "weakening"];
            let mut accepted = 0;
            loop {
                let (_, task) = call(&app, "GET", "/api/task?worker=solo", None).await;
                if task["status"] != "assigned" {
                    return accepted;
                }
                let group = task["group_id"].as_str().unwrap().to_string();
                let submit = json!({ "worker": "solo", "group": group, "subclass": subclasses[c] });
                let (s, _) = call(&app, "POST", "/api/annotation", Some(submit)).await;
                match s {
                    StatusCode::OK => accepted += 1,
                    StatusCode::CONFLICT | StatusCode::FORBIDDEN => {}
                    other => panic!("unexpected {other}"),
                }
            }
        }));
    }
    let mut accepted = 0;
    for h in handles {
        accepted += h.await.unwrap();
    }
    assert_eq!(accepted, cap);
    let tasker = shared.tasker();
    assert_eq!(tasker.status("solo").unwrap().acquisition_count, cap);
    let snap = tasker.snapshot();
    let triples: HashSet<(&str, &str, Phase)> =
        snap.annotations().iter().map(|a| (a.worker_id.as_str(), a.group_id.as_str(), a.phase)).collect();
    assert_eq!(triples.len(), snap.annotations().len());
}
