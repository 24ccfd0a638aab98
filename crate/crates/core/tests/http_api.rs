mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pvta::kb::CourseKB;
use pvta::nlu::Workspace;
use pvta::service::{router, Engine, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

use common::*;

fn app_with(token: Option<&str>) -> Router {
    let config = ServiceConfig {
        smoothing: 1.0,
        admin_token: token.map(str::to_string),
        ..ServiceConfig::default()
    };
    let ws = Workspace::from_json_str(MINI_WORKSPACE).unwrap();
    let kb = CourseKB::from_json_str(MINI_KB).unwrap();
    router(Arc::new(Engine::ephemeral(config, ws, kb).unwrap()))
}

fn app() -> Router {
    app_with(Some(ADMIN_TOKEN))
}

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
    token: Option<&str>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("x-admin-token", t);
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| panic!("non-JSON body: {}", String::from_utf8_lossy(&bytes)))
    };
    (status, value)
}

async fn new_session(app: &Router, student: &str) -> String {
    let (status, body) = call(
        app,
        "POST",
        "/api/sessions",
        Some(json!({ "student_id": student })),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

async fn say(app: &Router, session: &str, text: &str) -> Value {
    let (status, body) = call(
        app,
        "POST",
        &format!("/api/sessions/{session}/messages"),
        Some(json!({ "text": text })),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body
}

#[tokio::test]
async fn greeting_round_trip() {
    let app = app();
    let s = new_session(&app, "alice").await;
    let reply = say(&app, &s, "hello").await;
    assert_eq!(
        reply["answer"],
        "Hi! I am the course assistant. Ask me about exams."
    );
    assert_eq!(reply["pending"], false);
    assert_eq!(reply["escalated"], false);
    assert_eq!(reply["intent"], "greeting");
    assert!((reply["confidence"].as_f64().unwrap() - 0.6875).abs() < 1e-12);
    assert!(reply.get("escalation_id").is_none());

    let (status, turns) = call(&app, "GET", &format!("/api/sessions/{s}/turns"), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(turns.as_array().unwrap().len(), 1);
    assert_eq!(turns[0]["raw_question"], "hello");
}

#[tokio::test]
async fn sessions_are_distinct() {
    let app = app();
    let a = new_session(&app, "alice").await;
    let b = new_session(&app, "alice").await;
    assert_ne!(a, b);
}

#[tokio::test]
async fn client_errors_are_json() {
    let app = app();
    let (status, body) = call(
        &app,
        "POST",
        "/api/sessions",
        Some(json!({ "student_id": "" })),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "invalid_student_id");

    let (status, body) = call(
        &app,
        "POST",
        "/api/sessions",
        Some(json!({ "student": "x" })),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "malformed_body");

    let req = Request::post("/api/sessions")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let (status, body) = call(&app, "GET", "/api/nope", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not_found");

    let (status, body) = call(
        &app,
        "POST",
        "/api/sessions/missing/messages",
        Some(json!({ "text": "hi" })),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "unknown_session");

    let (status, body) = call(&app, "GET", "/api/sessions/missing/turns", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "unknown_session");

    let (status, body) = call(&app, "DELETE", "/api/health", None, None).await;
    assert_eq!(status, StatusCode::METHOD_NOT_ALLOWED);
    assert_eq!(body["error"], "method_not_allowed");
}

#[tokio::test]
async fn admin_routes_need_the_token() {
    let app = app();
    let (status, body) = call(&app, "GET", "/api/escalations", None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["error"], "unauthorized");
    let (status, _) = call(&app, "POST", "/api/admin/retrain", None, Some("wrong")).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call(&app, "GET", "/api/escalations", None, Some(ADMIN_TOKEN)).await;
    assert_eq!(status, StatusCode::OK);

    let req = Request::get("/api/escalations")
        .header(header::AUTHORIZATION, format!("Bearer {ADMIN_TOKEN}"))
        .body(Body::empty())
        .unwrap();
    assert_eq!(
        app.clone().oneshot(req).await.unwrap().status(),
        StatusCode::OK
    );

    let closed = app_with(None);
    let (status, body) = call(&closed, "GET", "/api/escalations", None, Some("anything")).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["error"], "admin_disabled");
}

#[tokio::test]
async fn escalation_resolution_and_retrain() {
    let app = app();
    let t = Some(ADMIN_TOKEN);
    let s = new_session(&app, "bob").await;
    let reply = say(&app, &s, "is there a makeup session").await;
    assert_eq!(reply["pending"], true);
    assert_eq!(reply["escalated"], true);
    assert!(reply.get("answer").is_none());
    let id = reply["escalation_id"].as_u64().unwrap();

    let (_, health) = call(&app, "GET", "/api/health", None, None).await;
    let first_revision = health["revision"].as_u64().unwrap();
    assert_eq!(health["pending_escalations"], 1);
    assert_eq!(
        health["intents"],
        json!(["greeting", "exam_date", "exam_location"])
    );
    assert_eq!(health["entities"], json!(["assessment"]));

    let (status, items) = call(&app, "GET", "/api/escalations?status=pending", None, t).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(items.as_array().unwrap().len(), 1);
    assert_eq!(items[0]["question"], "is there a makeup session");
    assert_eq!(items[0]["proposed_intent"], "greeting");
    let (status, body) = call(&app, "GET", "/api/escalations?status=weird", None, t).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "malformed_query");

    let resolve =
        |intent: &str| json!({ "final_answer": "Yes, on July 1st.", "corrected_intent": intent });
    let uri = format!("/api/escalations/{id}/resolve");
    let (status, body) = call(&app, "POST", &uri, Some(resolve("holidays")), t).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "unknown_intent");
    let (status, body) = call(
        &app,
        "POST",
        "/api/escalations/999/resolve",
        Some(resolve("exam_date")),
        t,
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "escalation_not_found");

    let (status, item) = call(&app, "POST", &uri, Some(resolve("exam_date")), t).await;
    assert_eq!(status, StatusCode::OK, "{item}");
    assert_eq!(item["status"], "resolved");
    assert_eq!(item["resolution"]["corrected_intent"], "exam_date");
    let (status, body) = call(&app, "POST", &uri, Some(resolve("exam_date")), t).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "already_resolved");

    // The student's view picks up the TA answer on the next poll.
    let (_, turns) = call(&app, "GET", &format!("/api/sessions/{s}/turns"), None, None).await;
    let last = turns.as_array().unwrap().last().unwrap();
    assert_eq!(last["author"], "teaching_assistant");
    assert_eq!(last["answer"]["text"], "Yes, on July 1st.");

    let (_, health) = call(&app, "GET", "/api/health", None, None).await;
    assert_eq!(health["stale"], true);

    let (status, report) = call(&app, "POST", "/api/admin/retrain", None, t).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["example_count"], 7);
    assert_eq!(report["intent_count"], 3);
    assert!(report["revision"].as_u64().unwrap() > first_revision);

    let (_, health) = call(&app, "GET", "/api/health", None, None).await;
    assert_eq!(health["stale"], false);
    assert_eq!(health["revision"], report["revision"]);

    let reply = say(&app, &s, "is there a makeup session").await;
    assert_eq!(reply["intent"], "exam_date");
    assert_eq!(reply["escalated"], false);

    let (status, report2) = call(&app, "POST", "/api/admin/retrain", None, t).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report2["example_count"], 7);
    assert!(report2["revision"].as_u64().unwrap() > report["revision"].as_u64().unwrap());
}

#[tokio::test]
async fn clusters_endpoint() {
    let app = app();
    let t = Some(ADMIN_TOKEN);
    let a = new_session(&app, "alice").await;
    say(&app, &a, "hello").await;
    let (status, body) = call(&app, "GET", "/api/students/clusters?k=3&seed=42", None, t).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "too_few_distinct_points");

    let b = new_session(&app, "bob").await;
    say(&app, &b, "when is the exam").await;
    let (status, body) = call(&app, "GET", "/api/students/clusters?k=2&seed=42", None, t).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_ne!(body["assignments"]["alice"], body["assignments"]["bob"]);
    assert_eq!(body["centroids"].as_array().unwrap().len(), 2);
    assert_eq!(body["inertia"], 0.0);

    let (status, body) = call(&app, "GET", "/api/students/clusters?k=0", None, t).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "invalid_k");
    let (status, _) = call(&app, "GET", "/api/students/clusters?k=two", None, t).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn reload_kb_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let config = mini_deployment(dir.path(), 8080);
    let engine = Engine::open(ServiceConfig::load(&config).unwrap()).unwrap();
    let app = router(Arc::new(engine));
    let t = Some(ADMIN_TOKEN);

    let mut kb: Value = serde_json::from_str(MINI_KB).unwrap();
    kb["exams"]["midterm"]["date"] = json!("2024-06-19 10:00");
    std::fs::write(dir.path().join("kb.json"), kb.to_string()).unwrap();
    let (status, body) = call(&app, "POST", "/api/admin/reload-kb", None, t).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["paths"]
        .as_array()
        .unwrap()
        .contains(&json!("exams.midterm.date")));

    let s = new_session(&app, "eve").await;
    assert_eq!(
        say(&app, &s, "when is the midterm exam").await["answer"],
        "The midterm exam is on 2024-06-19 10:00."
    );

    std::fs::write(
        dir.path().join("kb.json"),
        r#"{"exams": {"midterm": {"date": [1, 2]}}}"#,
    )
    .unwrap();
    let (status, body) = call(&app, "POST", "/api/admin/reload-kb", None, t).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "malformed_kb");
    // the previous KB stays published
    assert_eq!(
        say(&app, &s, "when is the midterm exam").await["answer"],
        "The midterm exam is on 2024-06-19 10:00."
    );
}

#[tokio::test]
async fn concurrent_sessions() {
    let app = app();
    let mut handles = Vec::new();
    for i in 0..16 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let s = new_session(&app, &format!("student{i}")).await;
            for _ in 0..5 {
                assert_eq!(say(&app, &s, "hello").await["intent"], "greeting");
            }
            let (_, turns) =
                call(&app, "GET", &format!("/api/sessions/{s}/turns"), None, None).await;
            turns.as_array().unwrap().len()
        }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap(), 5);
    }
}
