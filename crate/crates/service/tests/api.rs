use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use policy_manager_service::{build_state, router, AppState, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn service(config: ServiceConfig) -> (Router, AppState) {
    let state = build_state(&config).unwrap();
    (router(state.clone()), state)
}

fn default_service() -> Router {
    service(ServiceConfig::default()).0
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    call_with(app, method, uri, body, &[]).await
}

async fn call_with(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
    headers: &[(&str, &str)],
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

fn mopub_app() -> Value {
    json!({
        "descriptor": {
            "app_id": "com.example.weather",
            "category": "Weather",
            "permissions": ["ACCESS_FINE_LOCATION", "CAMERA"]
        },
        "policy": [
            {"uses": "ACCESS_FINE_LOCATION", "purpose": "Advertisement",
             "class": "com.mopub.*", "method": "*", "for": "Show nearby ads"},
            {"uses": "CAMERA", "purpose": "Adding Location to Photo",
             "class": "com.example.weather.Snap", "method": "take", "for": "Geotag photos"}
        ]
    })
}

async fn install(app: &Router, body: Value) -> Value {
    let (status, plan) = call(app, Method::POST, "/apps", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{plan}");
    plan
}

#[tokio::test]
async fn install_then_read_back() {
    let app = default_service();
    let plan = install(&app, mopub_app()).await;
    assert_eq!(plan["policy"]["provenance"], "developer_embedded");
    assert_eq!(plan["cards"].as_array().unwrap().len(), 2);
    let ad = plan["cards"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["purpose"] == "Displaying Advertisements")
        .unwrap_or_else(|| panic!("{plan}"));
    assert_eq!(ad["origin"]["third_party"], "MoPub");

    let (status, apps) = call(&app, Method::GET, "/apps", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(apps.as_array().unwrap().len(), 1);

    let (status, policy) = call(&app, Method::GET, "/apps/com.example.weather/policy", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(policy["clauses"].as_array().unwrap().len(), 2);

    let (status, settings) = call(&app, Method::GET, "/apps/com.example.weather/settings", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(settings["internal"].as_array().unwrap().len(), 1);
    assert_eq!(settings["third_party"].as_array().unwrap().len(), 1);

    let (status, err) = call(&app, Method::POST, "/apps", Some(mopub_app())).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "already_installed");

    let (status, err) = call(&app, Method::GET, "/apps/nope/policy", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "unknown_app");
}

#[tokio::test]
async fn dry_run_and_bad_embedded_policy() {
    let app = default_service();
    let mut body = mopub_app();
    body["dry_run"] = json!(true);
    let (status, plan) = call(&app, Method::POST, "/apps", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(plan["app_id"], "com.example.weather");
    let (_, apps) = call(&app, Method::GET, "/apps", None).await;
    assert!(apps.as_array().unwrap().is_empty());

    let mut body = mopub_app();
    body["policy"][0]["purpose"] = json!("Mind Reading");
    let (status, err) = call(&app, Method::POST, "/apps", Some(body)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "invalid_policy");

    let (status, err) = call(&app, Method::POST, "/apps", Some(json!({"nope": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "bad_request");
}

#[tokio::test]
async fn prompt_answer_is_remembered() {
    let app = default_service();
    install(&app, mopub_app()).await;
    let req = json!({"app_id": "com.example.weather", "permission": "CAMERA",
                     "class_name": "com.example.weather.Snap", "method_name": "take"});
    let (status, r) = call(&app, Method::POST, "/requests", Some(req.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["status"], "needs_prompt");
    let id = r["prompt_id"].as_u64().unwrap();

    let (_, outstanding) = call(&app, Method::GET, "/prompts/outstanding", None).await;
    assert_eq!(outstanding.as_array().unwrap().len(), 1);

    let uri = format!("/prompts/prompt-{id}/answer");
    let (status, d) = call(
        &app,
        Method::POST,
        &uri,
        Some(json!({"action": "allow", "remember": "this_app"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{d}");
    assert_eq!(d["action"], "allow");
    assert_eq!(d["source"]["kind"], "runtime_prompt");

    let (status, err) = call(&app, Method::POST, &uri, Some(json!({"action": "deny"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "already_answered");

    let (_, r) = call(&app, Method::POST, "/requests", Some(req)).await;
    assert_eq!(r["status"], "decided");
    assert_eq!(r["source"]["kind"], "user_policy");

    let (_, settings) = call(&app, Method::GET, "/apps/com.example.weather/settings", None).await;
    assert_eq!(settings["internal"][0]["action"], "allow");

    // prompt answers are not automated decisions
    let (_, n) = call(&app, Method::GET, "/notifications", None).await;
    assert_eq!(n.as_array().unwrap().len(), 1);
    assert_eq!(n[0]["source"]["kind"], "user_policy");

    let (status, _) = call(
        &app,
        Method::POST,
        "/prompts/999/answer",
        Some(json!({"action": "deny"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(
        &app,
        Method::POST,
        "/prompts/xyz/answer",
        Some(json!({"action": "deny"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn late_answer_reports_the_timeout() {
    let mut config = ServiceConfig::default();
    config.engine.prompt_timeout = Duration::from_millis(1);
    let (app, state) = service(config);
    install(&app, mopub_app()).await;
    let req = json!({"app_id": "com.example.weather", "permission": "CAMERA"});
    let (_, r) = call(&app, Method::POST, "/requests", Some(req)).await;
    let id = r["prompt_id"].as_u64().unwrap();
    tokio::time::sleep(Duration::from_millis(20)).await;
    let (status, err) = call(
        &app,
        Method::POST,
        &format!("/prompts/{id}/answer"),
        Some(json!({"action": "allow"})),
    )
    .await;
    assert_eq!(status, StatusCode::GONE, "{err}");
    assert_eq!(err["decision"]["action"], "deny");
    assert_eq!(err["decision"]["source"]["kind"], "prompt_timeout");
    assert!(state.device.store().state().user_policies.is_empty());
}

#[tokio::test]
async fn waiting_request_gets_the_answer() {
    let (app, state) = service(ServiceConfig::default());
    install(&app, mopub_app()).await;
    let mut events = state.device.engine().subscribe();
    let waiter = {
        let app = app.clone();
        tokio::spawn(async move {
            call(
                &app,
                Method::POST,
                "/requests?wait=true",
                Some(json!({"app_id": "com.example.weather", "permission": "CAMERA", "kind": "private_data"})),
            )
            .await
        })
    };
    let policy_manager::engine::PromptEvent::Issued { ticket } = events.recv().await.unwrap() else {
        panic!("expected an issued prompt");
    };
    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/prompts/{}/answer", ticket.prompt_id.0),
        Some(json!({"action": "deny"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (status, r) = waiter.await.unwrap();
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["status"], "decided");
    assert_eq!(r["action"], "deny");
}

#[tokio::test]
async fn prompt_stream_replays_outstanding_prompts() {
    let app = default_service();
    install(&app, mopub_app()).await;
    call(
        &app,
        Method::POST,
        "/requests",
        Some(json!({"app_id": "com.example.weather", "permission": "CAMERA"})),
    )
    .await;

    let req = Request::get("/prompts").body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();
    let frame = tokio::time::timeout(Duration::from_secs(5), body.frame())
        .await
        .unwrap()
        .unwrap()
        .unwrap();
    let text = String::from_utf8(frame.into_data().unwrap().to_vec()).unwrap();
    assert!(text.starts_with("event: issued\n"), "{text}");
    let data = text.lines().find_map(|l| l.strip_prefix("data: ")).unwrap();
    let event: Value = serde_json::from_str(data).unwrap();
    assert_eq!(event["event"], "issued");
    assert_eq!(event["ticket"]["request"]["app_id"], "com.example.weather");
}

#[tokio::test]
async fn user_policies_and_global_settings() {
    let app = default_service();
    install(&app, mopub_app()).await;
    let (status, p) = call(
        &app,
        Method::PUT,
        "/policies",
        Some(json!({"scope": "global", "permission": "ACCESS_FINE_LOCATION",
                    "purpose": "Advertisement", "action": "deny"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{p}");
    assert!(p["id"].is_u64());
    assert_eq!(p["purpose"], "Displaying Advertisements");

    let (status, g) = call(&app, Method::GET, "/global/ACCESS_FINE_LOCATION", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(g["permission"], "android.permission.ACCESS_FINE_LOCATION");
    let ad = g["purposes"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["purpose"] == "Displaying Advertisements")
        .unwrap();
    assert_eq!(ad["action"], "deny");

    let (status, _) = call(&app, Method::GET, "/global/INTERNET", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, err) = call(
        &app,
        Method::PUT,
        "/policies",
        Some(json!({"scope": "global", "permission": "INTERNET", "action": "deny"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{err}");
}

#[tokio::test]
async fn quick_settings_and_org_profile_locks() {
    let config = ServiceConfig {
        admin_token: Some("letmein".into()),
        ..Default::default()
    };
    let app = service(config).0;
    install(&app, mopub_app()).await;

    let (status, q) = call(
        &app,
        Method::PUT,
        "/quick-settings",
        Some(json!({"sensor": "camera", "state": "off"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(q["sensors"]["camera"], "off");
    let (_, r) = call(
        &app,
        Method::POST,
        "/requests",
        Some(json!({"app_id": "com.example.weather", "permission": "CAMERA"})),
    )
    .await;
    assert_eq!(r["action"], "deny");
    assert_eq!(r["source"]["kind"], "quick_settings");
    let (_, n) = call(&app, Method::GET, "/notifications", None).await;
    assert_eq!(n[0]["deep_link"], "/quick-settings");

    let profile = json!({"id": "corp", "name": "Corp", "issuer": "IT",
        "rules": [{"app": "*", "permission": "ACCESS_FINE_LOCATION", "action": "deny"}],
        "sensors": {"microphone": "off"}});
    let (status, p) = call(&app, Method::POST, "/org-profile", Some(profile.clone())).await;
    assert_eq!(status, StatusCode::CREATED, "{p}");
    assert_eq!(p["active"], true);
    let (status, _) = call(&app, Method::POST, "/org-profile", Some(profile)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, active) = call(&app, Method::GET, "/org-profile", None).await;
    assert_eq!(active["id"], "corp");

    let (status, err) = call(
        &app,
        Method::PUT,
        "/quick-settings",
        Some(json!({"sensor": "microphone", "state": "on"})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "locked");
    assert_eq!(err["mandated"], "off");

    let (_, settings) = call(&app, Method::GET, "/apps/com.example.weather/settings", None).await;
    let ad = &settings["third_party"][0];
    assert_eq!(ad["locked"], true);
    assert_eq!(ad["action"], "deny");

    let (status, _) = call(&app, Method::DELETE, "/org-profile/corp", None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = call_with(
        &app,
        Method::DELETE,
        "/org-profile/corp",
        None,
        &[("x-admin-token", "wrong")],
    )
    .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = call_with(
        &app,
        Method::DELETE,
        "/org-profile/corp",
        None,
        &[("x-admin-token", "letmein")],
    )
    .await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call_with(
        &app,
        Method::DELETE,
        "/org-profile/corp",
        None,
        &[("x-admin-token", "letmein")],
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (_, active) = call(&app, Method::GET, "/org-profile", None).await;
    assert!(active.is_null());
}

#[tokio::test]
async fn notifications_are_rate_limited_and_dismissable() {
    let app = default_service();
    install(&app, mopub_app()).await;
    call(
        &app,
        Method::PUT,
        "/quick-settings",
        Some(json!({"sensor": "camera", "state": "off"})),
    )
    .await;
    for _ in 0..10 {
        call(
            &app,
            Method::POST,
            "/requests",
            Some(json!({"app_id": "com.example.weather", "permission": "CAMERA"})),
        )
        .await;
    }
    let (_, n) = call(&app, Method::GET, "/notifications", None).await;
    assert_eq!(n.as_array().unwrap().len(), 1);
    assert_eq!(n[0]["count"], 10);
    assert_eq!(n[0]["silent"], true);
    let id = n[0]["id"].as_u64().unwrap();

    let (status, _) = call(&app, Method::POST, &format!("/notifications/{id}/dismiss"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (_, n) = call(&app, Method::GET, "/notifications", None).await;
    assert!(n.as_array().unwrap().is_empty());
    let (_, all) = call(&app, Method::GET, "/notifications?all=true", None).await;
    assert_eq!(all[0]["dismissed"], true);
    let (status, _) = call(&app, Method::POST, "/notifications/99/dismiss", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = call(&app, Method::POST, "/apps/com.example.weather/session", None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, Method::POST, "/apps/ghost/session", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn summary_groups_and_recommendations() {
    let dir = tempfile::tempdir().unwrap();
    let blacklist = dir.path().join("spouseware.txt");
    std::fs::write(&blacklist, "# known stalkerware\ncom.spy.tracker\n").unwrap();
    let config = ServiceConfig {
        blacklist: Some(blacklist),
        ..Default::default()
    };
    let app = service(config).0;
    install(&app, mopub_app()).await;
    install(
        &app,
        json!({"descriptor": {"app_id": "com.spy.tracker", "permissions": ["RECORD_AUDIO"]}}),
    )
    .await;

    call(
        &app,
        Method::PUT,
        "/quick-settings",
        Some(json!({"sensor": "camera", "state": "off"})),
    )
    .await;
    call(
        &app,
        Method::POST,
        "/requests",
        Some(json!({"app_id": "com.example.weather", "permission": "CAMERA"})),
    )
    .await;

    let (status, s) = call(&app, Method::GET, "/summary?window=hour", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["window"], "hour");
    assert_eq!(s["rows"][0]["denied"], 1);
    assert_eq!(s["by_group"]["CAMERA"]["denied"], 1);
    let (status, _) = call(&app, Method::GET, "/summary?window=month", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::GET, "/summary", None).await;
    assert_eq!(status, StatusCode::OK);

    let (_, g) = call(&app, Method::GET, "/app-groups", None).await;
    assert_eq!(g["most_used"][0], "com.example.weather");
    assert_eq!(g["recently_installed"].as_array().unwrap().len(), 2);

    let (_, r) = call(&app, Method::GET, "/recommendations", None).await;
    assert_eq!(r[0]["kind"], "spouseware", "{r}");
    assert_eq!(r[0]["app_id"], "com.spy.tracker");

    let (_, log) = call(&app, Method::GET, "/decisions", None).await;
    assert_eq!(log.as_array().unwrap().len(), 1);
}

const SCENARIO: &str = r#"{
    "name": "api batch",
    "apps": [{"descriptor": {"app_id": "cam", "permissions": ["CAMERA"]}}],
    "trace": [
        {"at_ms": 0, "type": "install", "app_id": "cam"},
        {"at_ms": 10, "type": "request", "app_id": "cam", "permission": "CAMERA"},
        {"at_ms": 20, "type": "prompt_answer", "action": "deny", "remember": "this_app"},
        {"at_ms": 30, "type": "request", "app_id": "cam", "permission": "CAMERA"}
    ],
    "expect": {"decisions": [
        {"action": "deny", "source": "runtime_prompt"},
        {"action": "deny", "source": "user_policy"}
    ]}
}"#;

#[tokio::test]
async fn batch_scenario_leaves_the_live_device_alone() {
    let app = default_service();
    let scenario: Value = serde_json::from_str(SCENARIO).unwrap();
    let (status, report) = call(&app, Method::POST, "/scenario/run", Some(scenario.clone())).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["mode"], "batch");
    assert!(report["expectation_failures"].as_array().unwrap().is_empty());
    assert_eq!(report["decisions"].as_array().unwrap().len(), 2);
    let (_, apps) = call(&app, Method::GET, "/apps", None).await;
    assert!(apps.as_array().unwrap().is_empty());

    let (_, again) = call(&app, Method::POST, "/scenario/run?mode=batch", Some(scenario)).await;
    assert_eq!(again, report);

    let bad = json!({"trace": [{"at_ms": 0, "type": "session_start", "app_id": "x"}]});
    let (status, err) = call(&app, Method::POST, "/scenario/run", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["index"], 0);
}

#[tokio::test]
async fn interactive_scenario_runs_on_the_live_device() {
    let (app, state) = service(ServiceConfig::default());
    let scenario = json!({
        "apps": [{"descriptor": {"app_id": "cam", "permissions": ["CAMERA"]}}],
        "trace": [
            {"at_ms": 0, "type": "install", "app_id": "cam"},
            {"at_ms": 1, "type": "request", "app_id": "cam", "permission": "CAMERA"}
        ]
    });
    let mut events = state.device.engine().subscribe();
    let run = {
        let app = app.clone();
        let scenario = scenario.clone();
        tokio::spawn(async move { call(&app, Method::POST, "/scenario/run?mode=interactive", Some(scenario)).await })
    };
    let policy_manager::engine::PromptEvent::Issued { ticket } = events.recv().await.unwrap() else {
        panic!("expected an issued prompt");
    };
    let (status, err) = call(&app, Method::POST, "/scenario/run?mode=interactive", Some(json!({}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "scenario_running");

    call(
        &app,
        Method::POST,
        &format!("/prompts/{}/answer", ticket.prompt_id.0),
        Some(json!({"action": "allow"})),
    )
    .await;
    let (status, report) = run.await.unwrap();
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["mode"], "interactive");
    assert_eq!(report["decisions"][0]["decision"]["action"], "allow");
    let (_, apps) = call(&app, Method::GET, "/apps", None).await;
    assert_eq!(apps.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn persistent_store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig::default();
    config.store.mode = policy_manager_service::config::StoreKind::Persistent;
    config.store.path = dir.path().join("store.log");
    {
        let app = service(config.clone()).0;
        install(&app, mopub_app()).await;
        call(
            &app,
            Method::PUT,
            "/policies",
            Some(json!({"scope": "global", "permission": "CAMERA", "action": "allow"})),
        )
        .await;
    }
    let app = service(config).0;
    let (_, apps) = call(&app, Method::GET, "/apps", None).await;
    assert_eq!(apps.as_array().unwrap().len(), 1);
    let (_, r) = call(
        &app,
        Method::POST,
        "/requests",
        Some(json!({"app_id": "com.example.weather", "permission": "CAMERA"})),
    )
    .await;
    assert_eq!(r["action"], "allow");
}

#[tokio::test]
async fn repository_policies_are_used_at_install() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("com.example.notes.policy.json"),
        r#"[{"uses": "RECORD_AUDIO", "purpose": "Voice Memos", "class": "*", "method": "*", "for": "Dictation"}]"#,
    )
    .unwrap();
    let config = ServiceConfig {
        repository: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let app = service(config).0;
    let plan = install(
        &app,
        json!({"descriptor": {"app_id": "com.example.notes", "permissions": ["RECORD_AUDIO"]}}),
    )
    .await;
    assert_eq!(plan["policy"]["provenance"], "pre_generated");
    let plan = install(
        &app,
        json!({"descriptor": {"app_id": "com.example.other", "permissions": ["RECORD_AUDIO"]}}),
    )
    .await;
    assert_eq!(plan["policy"]["provenance"], "fallback");
    assert_eq!(plan["cards"][0]["purpose"], "Running Other Features");
}
