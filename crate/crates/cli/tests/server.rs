use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use wildcensus::datastore::{Dataset, ImageRecord};
use wildcensus::geometry::CameraRegistry;
use wildcensus::review::{Candidate, ReviewService};
use wildcensus::{BBox, Class};
use wildcensus_cli::server::{router, AppState};

fn clock() -> f64 {
    1000.0
}

fn app(images: &[&str]) -> (Router, Arc<ReviewService>) {
    let svc = Arc::new(ReviewService::new(900.0));
    let tasks = images.iter().map(|id| {
        let cand = Candidate {
            id: 0,
            class: Class::Deer,
            bbox: BBox::new(10.0, 10.0, 40.0, 40.0),
            confidence: 0.8,
        };
        (id.to_string(), vec![cand])
    });
    svc.create_tasks(tasks, 0.0).unwrap();
    let mut state = AppState::new(svc.clone());
    state.clock = clock;
    (router(state), svc)
}

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
    observer: Option<&str>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(o) = observer {
        req = req.header("x-observer-id", o);
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

fn confirm() -> Value {
    json!({
        "boxes": [{"bbox": [10.0, 10.0, 40.0, 40.0], "class": "deer", "action": "confirm_model", "candidate_id": 0}],
        "duration": 30.0
    })
}

fn empty() -> Value {
    json!({"boxes": [], "declared_empty": true, "duration": 12.0})
}

#[tokio::test]
async fn two_observers_agree() {
    let (app, _) = app(&["a"]);
    let (s, task) = call(&app, "GET", "/api/tasks/next?observer=o1", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(task["image_id"], "a");
    assert_eq!(task["candidates"][0]["confidence"], 0.8);
    let (s, t) = call(
        &app,
        "POST",
        "/api/tasks/a/verdict",
        Some(confirm()),
        Some("o1"),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(t["state"], "single_reviewed");

    // a second verdict by the same observer is refused
    let (s, _) = call(
        &app,
        "POST",
        "/api/tasks/a/verdict",
        Some(confirm()),
        Some("o1"),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    // o1 gets nothing more to do
    let (s, _) = call(&app, "GET", "/api/tasks/next", None, Some("o1")).await;
    assert_eq!(s, StatusCode::NO_CONTENT);

    let (s, _) = call(&app, "GET", "/api/tasks/next?observer=o2", None, None).await;
    assert_eq!(s, StatusCode::OK);
    let body = json!({"observer_id": "o2", "image_id": "a", "boxes": confirm()["boxes"], "duration": 20.0});
    let (s, t) = call(&app, "POST", "/api/tasks/a/verdict", Some(body), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(t["state"], "double_reviewed");
    assert_eq!(t["agreement"], true);

    let (s, stats) = call(&app, "GET", "/api/stats", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(stats["agreements"], 1);
    assert_eq!(stats["agreement_rate"], 1.0);
    assert_eq!(stats["observers"]["o1"]["verdicts"], 1);
    assert_eq!(stats["observers"]["o2"]["mean_seconds"], 20.0);
}

#[tokio::test]
async fn disagreement_goes_to_adjudication() {
    let (app, svc) = app(&["a"]);
    call(&app, "GET", "/api/tasks/next", None, Some("o1")).await;
    call(
        &app,
        "POST",
        "/api/tasks/a/verdict",
        Some(confirm()),
        Some("o1"),
    )
    .await;
    // adjudicating before a conflict exists is refused
    let (s, _) = call(
        &app,
        "POST",
        "/api/tasks/a/adjudicate",
        Some(confirm()),
        Some("lead"),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    call(&app, "GET", "/api/tasks/next", None, Some("o2")).await;
    let (_, t) = call(
        &app,
        "POST",
        "/api/tasks/a/verdict",
        Some(empty()),
        Some("o2"),
    )
    .await;
    assert_eq!(t["state"], "conflict");
    assert_eq!(t["agreement"], false);
    let (s, t) = call(
        &app,
        "POST",
        "/api/tasks/a/adjudicate",
        Some(confirm()),
        Some("lead"),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(t["state"], "adjudicated");
    assert!(svc.task("a").unwrap().census_ready());
}

#[tokio::test]
async fn request_errors() {
    let (app, _) = app(&["a"]);
    let (s, _) = call(&app, "GET", "/api/tasks/next", None, None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "GET", "/api/tasks/zzz", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(
        &app,
        "POST",
        "/api/tasks/zzz/verdict",
        Some(empty()),
        Some("o1"),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    // verdict on a task leased to someone else
    call(&app, "GET", "/api/tasks/next", None, Some("o1")).await;
    let (s, e) = call(
        &app,
        "POST",
        "/api/tasks/a/verdict",
        Some(empty()),
        Some("o2"),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT, "{e}");
    // body image id disagrees with the path
    let body = json!({"image_id": "b", "boxes": [], "declared_empty": true});
    let (s, _) = call(&app, "POST", "/api/tasks/a/verdict", Some(body), Some("o1")).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    // confirming a candidate that does not exist
    let bad = json!({"boxes": [{"bbox": [0, 0, 5, 5], "class": "deer", "action": "confirm_model", "candidate_id": 7}]});
    let (s, _) = call(&app, "POST", "/api/tasks/a/verdict", Some(bad), Some("o1")).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(
        &app,
        "POST",
        "/api/tasks/a/verdict",
        Some(json!("nonsense")),
        Some("o1"),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn task_view_and_image_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    std::fs::write(dir.path().join("images/a.jpg"), b"\xff\xd8jpeg").unwrap();
    let rec = |id: &str, file: &str| ImageRecord {
        image_id: id.into(),
        file: file.into(),
        transect_id: 1,
        pose: None,
        camera_id: "phantom4pro".into(),
        census_eligible: false,
    };
    let ds = Dataset::new(
        vec![
            rec("a", "images/a.jpg"),
            rec("b", "images/b.jpg"),
            rec("c", "../c.jpg"),
        ],
        CameraRegistry::with_defaults(),
    )
    .unwrap();
    let svc = Arc::new(ReviewService::new(900.0));
    svc.create_tasks([("a".to_string(), vec![])], 0.0).unwrap();
    let mut state = AppState::new(svc);
    state.dataset = Some(Arc::new(ds));
    state.images_root = Some(dir.path().to_path_buf());
    let app = router(state);

    let (s, t) = call(&app, "GET", "/api/tasks/a", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(t["image"]["file"], "images/a.jpg");
    assert_eq!(t["image_url"], "/api/images/a/file");
    assert_eq!(t["state"], "pending");

    let resp = app
        .clone()
        .oneshot(
            Request::get("/api/images/a/file")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/jpeg");
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"\xff\xd8jpeg");

    let (s, _) = call(&app, "GET", "/api/images/b/file", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/api/images/c/file", None, None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = call(&app, "GET", "/api/images/nope/file", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn log_written_through_the_api_replays() {
    let dir = tempfile::tempdir().unwrap();
    {
        let svc = Arc::new(ReviewService::open(dir.path(), 900.0).unwrap());
        svc.create_tasks([("a".to_string(), vec![]), ("b".to_string(), vec![])], 0.0)
            .unwrap();
        let mut state = AppState::new(svc.clone());
        state.clock = clock;
        let app = router(state);
        for o in ["o1", "o2"] {
            call(&app, "GET", "/api/tasks/next", None, Some(o)).await;
            let (s, _) = call(&app, "POST", "/api/tasks/a/verdict", Some(empty()), Some(o)).await;
            assert_eq!(s, StatusCode::OK);
        }
    }
    let reopened = ReviewService::open(dir.path(), 900.0).unwrap();
    let events = wildcensus::review::read_events(&dir.path().join("events.jsonl")).unwrap();
    assert_eq!(
        wildcensus::review::replay(&events).unwrap().tasks,
        reopened.state().tasks
    );
    assert_eq!(reopened.task("a").unwrap().distinct_observers(), 2);
}
