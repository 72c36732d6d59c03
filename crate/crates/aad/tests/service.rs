use aad::config::{Arm, RunConfig};
use aad::harness::{load_dataset, run_seed};
use aad::service::{
    router, AppState, CreateRequest, CreateResponse, LabelRequest, LabelResponse, ProgressPayload, QueryPayload, RelevancePayload,
    RulesPayload, SessionStatus, SessionStore,
};
use aad_core::data::Label;
use aad_core::rules::RuleSet;
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(b) => builder.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn parse<T: DeserializeOwned>(v: Value) -> T {
    serde_json::from_value(v).unwrap()
}

fn small_config(arm: Arm, budget: usize) -> RunConfig {
    RunConfig { arm, budget, trees: 40, ..RunConfig::default() }
}

async fn create(app: &Router, config: &RunConfig, seed: u64) -> CreateResponse {
    let (status, body) = send(app, "POST", "/sessions", Some(json!({ "config": config, "seed": seed }))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    parse(body)
}

/// Labels every query from ground truth through HTTP and returns the final progress.
async fn drive(app: &Router, id: &str, config: &RunConfig, seed: u64) -> ProgressPayload {
    let truth = load_dataset(config, seed).unwrap().dataset;
    loop {
        let (status, body) = send(app, "GET", &format!("/sessions/{id}/query"), None).await;
        assert_eq!(status, StatusCode::OK);
        let query: QueryPayload = parse(body);
        let Some(instance_id) = query.instance_id else { break };
        let label = truth.ground_truth().label(instance_id).unwrap();
        let (status, body) = send(app, "POST", &format!("/sessions/{id}/label"), Some(json!({ "instance_id": instance_id, "label": label }))).await;
        assert_eq!(status, StatusCode::OK, "{body}");
    }
    let (_, body) = send(app, "GET", &format!("/sessions/{id}/progress"), None).await;
    parse(body)
}

fn app() -> Router {
    router(AppState::new(SessionStore::in_memory()))
}

#[tokio::test]
async fn scripted_sessions_match_harness_runs() {
    let app = app();
    let cases = [
        (small_config(Arm::Bal, 25), 2),
        (small_config(Arm::BalD, 12), 3),
        (small_config(Arm::Unsupervised, 10), 1),
        (RunConfig { dataset: "synthetic:stream-shift".into(), queries_per_window: 3, ..small_config(Arm::SalKl, 40) }, 4),
        (small_config(Arm::Glad, 8), 5),
        (small_config(Arm::Loda, 10), 6),
        (small_config(Arm::LodaGlobal, 10), 7),
    ];
    for (config, seed) in cases {
        let created = create(&app, &config, seed).await;
        let progress = drive(&app, &created.session_id, &config, seed).await;
        let data = load_dataset(&config, seed).unwrap().dataset;
        let expected = run_seed(&config, &data, seed).unwrap();
        assert_eq!(progress.history, expected.history, "arm {}", config.arm);
        assert_eq!(progress.curve, expected.curve);
        assert_eq!(progress.drift, expected.drift);
        assert!(progress.progress.completed);
        assert_eq!(progress.progress.remaining, 0);
    }
}

#[tokio::test]
async fn fresh_session_has_full_budget_and_idempotent_query() {
    let app = app();
    let config = small_config(Arm::Bal, 7);
    let created = create(&app, &config, 0).await;
    assert_eq!(created.query.progress.budget, 7);
    assert_eq!(created.query.progress.spent, 0);
    assert_eq!(created.query.status, SessionStatus::Pending);
    assert_eq!(created.feature_names.len(), created.query.features.as_ref().unwrap().len());

    let uri = format!("/sessions/{}/query", created.session_id);
    let (_, first) = send(&app, "GET", &uri, None).await;
    let (_, second) = send(&app, "GET", &uri, None).await;
    assert_eq!(first, second);
    let first: QueryPayload = parse(first);
    assert_eq!(first, created.query);
    assert!(first.score.is_some());
    let rules: RuleSet = first.rules.clone().unwrap();
    assert!(!rules.is_empty());
    assert_eq!(RuleSet::parse(first.rules_text.as_deref().unwrap()).unwrap().to_text(), rules.to_text());
    let (_, progress) = send(&app, "GET", &format!("/sessions/{}/progress", created.session_id), None).await;
    assert_eq!(parse::<ProgressPayload>(progress).curve, vec![0]);

    let other = create(&app, &config, 0).await;
    assert_ne!(other.session_id, created.session_id);
    let (_, list) = send(&app, "GET", "/sessions", None).await;
    assert_eq!(list.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn first_query_is_the_top_scored_instance() {
    let app = app();
    let config = small_config(Arm::Bal, 3);
    let created = create(&app, &config, 9).await;
    let data = load_dataset(&config, 9).unwrap().dataset;
    let mut engine = aad::engine::Engine::build(&config, data.features(), 9).unwrap();
    let best = (0..data.len()).max_by(|&a, &b| engine.score(a).unwrap().total_cmp(&engine.score(b).unwrap()).then(b.cmp(&a))).unwrap();
    assert_eq!(created.query.instance_id, Some(best));
    assert_eq!(engine.next_query().unwrap(), Some(best));
}

#[tokio::test]
async fn stale_and_duplicate_labels_conflict_without_mutation() {
    let app = app();
    let config = small_config(Arm::Bal, 5);
    let created = create(&app, &config, 1).await;
    let id = created.session_id;
    let pending = created.query.instance_id.unwrap();
    let label_uri = format!("/sessions/{id}/label");

    let wrong = (pending + 1) % created.instances;
    let (status, body) = send(&app, "POST", &label_uri, Some(json!({ "instance_id": wrong, "label": "anomaly" }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["pending"], json!(pending));
    let (_, after) = send(&app, "GET", &format!("/sessions/{id}/query"), None).await;
    assert_eq!(parse::<QueryPayload>(after), created.query);

    let (status, body) = send(&app, "POST", &label_uri, Some(json!({ "instance_id": pending, "label": "anomaly" }))).await;
    assert_eq!(status, StatusCode::OK);
    let labeled: LabelResponse = parse(body);
    assert_eq!(labeled.progress.spent, 1);
    assert_eq!(labeled.progress.anomalies_found, 1);
    let (status, _) = send(&app, "POST", &label_uri, Some(json!({ "instance_id": pending, "label": "anomaly" }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, progress) = send(&app, "GET", &format!("/sessions/{id}/progress"), None).await;
    let progress: ProgressPayload = parse(progress);
    assert_eq!(progress.progress.spent, 1);
    assert_eq!(progress.curve, vec![0, 1]);
}

#[tokio::test]
async fn nominal_labels_leave_the_anomaly_count_alone() {
    let app = app();
    let created = create(&app, &small_config(Arm::Bal, 3), 4).await;
    let id = created.session_id;
    let pending = created.query.instance_id.unwrap();
    let (_, body) = send(&app, "POST", &format!("/sessions/{id}/label"), Some(json!({ "instance_id": pending, "label": "nominal" }))).await;
    let labeled: LabelResponse = parse(body);
    assert_eq!(labeled.progress.anomalies_found, 0);
    assert_eq!(labeled.progress.spent, 1);
    assert_ne!(labeled.query.instance_id, Some(pending));
}

#[tokio::test]
async fn zero_budget_session_is_completed_at_once() {
    let app = app();
    let created = create(&app, &small_config(Arm::Bal, 0), 0).await;
    assert_eq!(created.query.status, SessionStatus::Completed);
    assert!(created.query.progress.completed);
    assert_eq!(created.query.instance_id, None);
    let (status, _) =
        send(&app, "POST", &format!("/sessions/{}/label", created.session_id), Some(json!({ "instance_id": 0, "label": "nominal" }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn budget_exhaustion_completes_the_session() {
    let app = app();
    let config = small_config(Arm::Bal, 2);
    let created = create(&app, &config, 0).await;
    let progress = drive(&app, &created.session_id, &config, 0).await;
    assert!(progress.progress.completed);
    assert_eq!(progress.history.len(), 2);
    let (_, body) = send(&app, "GET", &format!("/sessions/{}/query", created.session_id), None).await;
    assert_eq!(parse::<QueryPayload>(body).status, SessionStatus::Completed);
}

#[tokio::test]
async fn unknown_sessions_and_bad_configs_are_client_errors() {
    let app = app();
    for uri in ["/sessions/nope/query", "/sessions/nope/progress", "/sessions/nope/rules"] {
        let (status, body) = send(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_eq!(body["error"], "not-found");
    }
    let (status, _) = send(&app, "POST", "/sessions/nope/label", Some(json!({ "instance_id": 0, "label": "anomaly" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let bad = RunConfig { tau: 2.0, ..RunConfig::default() };
    let (status, body) = send(&app, "POST", "/sessions", Some(json!({ "config": bad, "seed": 0 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "bad-request");
    let (status, _) = send(&app, "POST", "/sessions", Some(json!({ "config": { "dataset": "/no/such/file.csv" } }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = send(&app, "POST", "/sessions", Some(json!({ "config": { "arm": "nonsense" } }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["message"].as_str().unwrap().contains("nonsense"));
    let created = create(&app, &small_config(Arm::Bal, 2), 0).await;
    let (status, _) = send(&app, "POST", &format!("/sessions/{}/label", created.session_id), Some(json!({ "instance_id": 0, "label": "maybe" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn rules_describe_labeled_anomalies() {
    let app = app();
    let config = RunConfig { dataset: "synthetic:toy".into(), ..small_config(Arm::Bal, 15) };
    let created = create(&app, &config, 0).await;
    let (_, before) = send(&app, "GET", &format!("/sessions/{}/rules", created.session_id), None).await;
    let before: RulesPayload = parse(before);
    assert_eq!(before.rules, Some(RuleSet::default()));

    drive(&app, &created.session_id, &config, 0).await;
    let (status, body) = send(&app, "GET", &format!("/sessions/{}/rules", created.session_id), None).await;
    assert_eq!(status, StatusCode::OK);
    let rules: RulesPayload = parse(body);
    let set = rules.rules.unwrap();
    assert!(!set.is_empty());
    assert_eq!(rules.rules_text.unwrap(), set.to_text());
    assert_eq!(rules.feature_names, vec!["x0", "x1"]);
}

#[tokio::test]
async fn glad_sessions_expose_relevance() {
    let app = app();
    let config = small_config(Arm::Glad, 3);
    let created = create(&app, &config, 0).await;
    let p = created.query.relevance.clone().unwrap();
    assert_eq!(p.len(), config.members);
    assert!(p.iter().all(|v| (v - 0.5).abs() <= 0.01));
    assert!(created.query.most_relevant_member.is_some());
    assert_eq!(created.query.rules, None);
    let (status, body) = send(&app, "GET", &format!("/sessions/{}/relevance", created.session_id), None).await;
    assert_eq!(status, StatusCode::OK);
    let dump: RelevancePayload = parse(body);
    assert_eq!(dump.relevance.len(), created.instances);

    let batch = create(&app, &small_config(Arm::Bal, 3), 0).await;
    let (status, _) = send(&app, "GET", &format!("/sessions/{}/relevance", batch.session_id), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[test]
fn sessions_replay_from_their_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(Arm::Bal, 12);
    let truth = load_dataset(&config, 3).unwrap().dataset;
    let oracle = |id: usize| truth.ground_truth().label(id).unwrap();

    let store = SessionStore::open(dir.path()).unwrap();
    let created = store.create(CreateRequest { config: config.clone(), seed: 3 }).unwrap();
    let id = created.session_id.clone();
    let mut pending = created.query.instance_id.unwrap();
    for _ in 0..5 {
        pending = store.label(&id, LabelRequest { instance_id: pending, label: oracle(pending) }).unwrap().query.instance_id.unwrap();
    }
    let before_query = store.query(&id).unwrap();
    let before_progress = store.progress(&id).unwrap();
    drop(store);

    let reopened = SessionStore::open(dir.path()).unwrap();
    assert_eq!(reopened.query(&id).unwrap(), before_query);
    assert_eq!(reopened.progress(&id).unwrap(), before_progress);
    while let Some(next) = reopened.query(&id).unwrap().instance_id {
        reopened.label(&id, LabelRequest { instance_id: next, label: oracle(next) }).unwrap();
    }
    let expected = run_seed(&config, &truth, 3).unwrap();
    assert_eq!(reopened.progress(&id).unwrap().history, expected.history);

    let fresh = reopened.create(CreateRequest { config, seed: 0 }).unwrap();
    assert_ne!(fresh.session_id, id);
    let log = std::fs::read_to_string(dir.path().join(&id).join("events.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1 + 12);
}

#[test]
fn corrupt_logs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let session = dir.path().join("00000001");
    std::fs::create_dir_all(&session).unwrap();
    std::fs::write(session.join("events.jsonl"), "{\"event\":\"label\",\"instance_id\":0,\"label\":\"anomaly\"}\n").unwrap();
    assert!(SessionStore::open(dir.path()).is_err());
}

#[test]
fn label_events_round_trip() {
    let event = aad::service::Event::Label { instance_id: 4, label: Label::Anomaly };
    let text = serde_json::to_string(&event).unwrap();
    assert_eq!(text, r#"{"event":"label","instance_id":4,"label":"anomaly"}"#);
    assert_eq!(serde_json::from_str::<aad::service::Event>(&text).unwrap(), event);
}
