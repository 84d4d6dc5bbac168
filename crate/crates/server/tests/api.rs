use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use pselab_core::observer::ObserverModel;
use pselab_core::protocol::persist::{load_session, replay, RESULTS_FILE, TRIALS_FILE};
use pselab_core::protocol::{IntervalResponse, NextStep, SessionResults, TrialPhase};
use pselab_server::{bind, serve, AppState, Clock, CreatedSession, ResponseAck, ServerError};
use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio::sync::oneshot;

struct Harness {
    base: String,
    client: reqwest::Client,
    data: tempfile::TempDir,
    clock: Arc<AtomicU64>,
    stop: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<Result<(), ServerError>>>,
}

impl Harness {
    async fn start() -> Self {
        let data = tempfile::tempdir().unwrap();
        let clock = Arc::new(AtomicU64::new(1_000_000));
        let c = Arc::clone(&clock);
        let clock_fn: Clock = Arc::new(move || c.load(Ordering::SeqCst));
        let state = AppState::new(data.path(), clock_fn).unwrap();
        let listener = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(serve(listener, state, async {
            let _ = rx.await;
        }));
        Self {
            base: format!("http://{addr}"),
            client: reqwest::Client::new(),
            data,
            clock,
            stop: Some(tx),
            task: Some(task),
        }
    }

    async fn create(&self, body: Value) -> CreatedSession {
        let r = self.client.post(format!("{}/sessions", self.base)).json(&body).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::CREATED);
        r.json().await.unwrap()
    }

    async fn next(&self, id: &str) -> reqwest::Response {
        self.client.get(format!("{}/sessions/{id}/next-trial", self.base)).send().await.unwrap()
    }

    async fn submit(&self, id: &str, response: IntervalResponse) -> reqwest::Response {
        self.client
            .post(format!("{}/sessions/{id}/responses", self.base))
            .json(&json!({ "response": response, "latency_ms": 420.0 }))
            .send()
            .await
            .unwrap()
    }

    async fn shutdown(mut self) -> tempfile::TempDir {
        self.stop.take().unwrap().send(()).unwrap();
        self.task.take().unwrap().await.unwrap().unwrap();
        self.data
    }
}

#[tokio::test]
async fn scripted_session_yields_four_pses() {
    let h = Harness::start().await;
    let created = h.create(json!({ "participant_id": "p01", "seed": 5, "rest_s": 0.0 })).await;
    assert_eq!(created.planned_trials, 163);
    let observer = ObserverModel::uniform(5.4, 9);

    let (mut practice, mut main, mut rests) = (0, 0, 0);
    loop {
        let r = h.next(&created.session_id).await;
        assert_eq!(r.status(), StatusCode::OK);
        match r.json::<NextStep>().await.unwrap() {
            NextStep::Trial(plan) => {
                let truth = observer.respond(plan.curve, plan.variable_duration_s, plan.trial_index).unwrap();
                let ans = IntervalResponse::expressing(truth, plan.standard_first);
                let ack: ResponseAck = h.submit(&created.session_id, ans).await.json().await.unwrap();
                assert_eq!(ack.trial_index, plan.trial_index);
                match plan.phase {
                    TrialPhase::Practice => {
                        practice += 1;
                        assert!(ack.feedback.is_some());
                    }
                    TrialPhase::Main => {
                        main += 1;
                        assert!(ack.feedback.is_none());
                    }
                }
                h.clock.fetch_add(9_000, Ordering::SeqCst);
            }
            NextStep::Rest { .. } => rests += 1,
            NextStep::Done => break,
        }
    }
    assert_eq!((practice, main), (3, 160));
    assert!(rests <= 3);

    let r = h.client.get(format!("{}/sessions/{}/results", h.base, created.session_id)).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let res: SessionResults = r.json().await.unwrap();
    assert!(res.complete);
    assert_eq!(res.per_curve.len(), 4);
    assert!(res.per_curve.iter().all(|c| c.trials == 40 && c.pse > 4.0 && c.pse < 7.0));
    assert_eq!(res.log.len(), 163);

    let data = h.shutdown().await;
    let dir = data.path().join(&created.session_id);
    let lines = std::fs::read_to_string(dir.join(TRIALS_FILE)).unwrap().lines().count();
    assert_eq!(lines, 163);
    assert!(dir.join(RESULTS_FILE).exists());
    let report = replay(&load_session(&dir).unwrap()).unwrap();
    assert!(report.is_clean(), "{:?}", report.diffs);
    assert!(report.max_abs_pse_diff <= 1e-9);
}

#[tokio::test]
async fn double_submit_conflicts() {
    let h = Harness::start().await;
    let s = h.create(json!({ "seed": 1 })).await;
    assert_eq!(h.next(&s.session_id).await.status(), StatusCode::OK);
    assert_eq!(h.submit(&s.session_id, IntervalResponse::FirstShorter).await.status(), StatusCode::OK);
    let again = h.submit(&s.session_id, IntervalResponse::FirstShorter).await;
    assert_eq!(again.status(), StatusCode::CONFLICT);
    let body: Value = again.json().await.unwrap();
    assert_eq!(body["error"], "no_trial_in_flight");
    h.shutdown().await;
}

#[tokio::test]
async fn next_trial_twice_reports_plan_in_flight() {
    let h = Harness::start().await;
    let s = h.create(json!({})).await;
    let first: Value = h.next(&s.session_id).await.json().await.unwrap();
    let r = h.next(&s.session_id).await;
    assert_eq!(r.status(), StatusCode::CONFLICT);
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["error"], "trial_in_flight");
    assert_eq!(body["in_flight"]["trial_index"], first["trial_index"]);

    let stale = h
        .client
        .post(format!("{}/sessions/{}/responses", h.base, s.session_id))
        .json(&json!({ "response": "first_shorter", "latency_ms": 1.0, "trial_index": 7 }))
        .send()
        .await
        .unwrap();
    assert_eq!(stale.status(), StatusCode::CONFLICT);
    h.shutdown().await;
}

#[tokio::test]
async fn unknown_session_is_404() {
    let h = Harness::start().await;
    for path in ["next-trial", "results"] {
        let r = h.client.get(format!("{}/sessions/nope/{path}", h.base)).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::NOT_FOUND);
    }
    assert_eq!(h.submit("nope", IntervalResponse::FirstShorter).await.status(), StatusCode::NOT_FOUND);
    h.shutdown().await;
}

#[tokio::test]
async fn bad_payloads_are_400() {
    let h = Harness::start().await;
    let url = format!("{}/sessions", h.base);
    for body in [
        r#"{"trials_per_curve": 0}"#,
        r#"{"curves": ["bezier", "bezier", "speed_up", "slow_down"]}"#,
        r#"{"unknown_field": 1}"#,
        r#"{"quest": {"grain": 0}}"#,
        "not json",
        "[]",
    ] {
        let r = h.client.post(&url).header("content-type", "application/json").body(body).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::BAD_REQUEST, "{body}");
        let v: Value = r.json().await.unwrap();
        assert_eq!(v["error"], "invalid_config");
    }
    let s = h.create(json!({})).await;
    h.next(&s.session_id).await;
    let r = h
        .client
        .post(format!("{}/sessions/{}/responses", h.base, s.session_id))
        .body(r#"{"response": "both", "latency_ms": 3}"#)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    h.shutdown().await;
}

#[tokio::test]
async fn results_require_completion_unless_partial() {
    let h = Harness::start().await;
    let s = h.create(json!({ "seed": 3 })).await;
    let url = format!("{}/sessions/{}/results", h.base, s.session_id);
    assert_eq!(h.client.get(&url).send().await.unwrap().status(), StatusCode::CONFLICT);
    let r = h.client.get(format!("{url}?partial=true")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let res: SessionResults = r.json().await.unwrap();
    assert!(!res.complete);
    h.shutdown().await;
}

#[tokio::test]
async fn rest_is_enforced_until_elapsed_or_ended() {
    let h = Harness::start().await;
    let s = h
        .create(json!({ "seed": 2, "practice_trials": 0, "trials_per_curve": 2, "rest_s": 60.0 }))
        .await;
    for _ in 0..2 {
        h.next(&s.session_id).await;
        h.submit(&s.session_id, IntervalResponse::SecondShorter).await;
    }
    let step: NextStep = h.next(&s.session_id).await.json().await.unwrap();
    assert_eq!(step, NextStep::Rest { block: 0, remaining_s: 60.0 });
    h.clock.fetch_add(30_000, Ordering::SeqCst);
    let step: NextStep = h.next(&s.session_id).await.json().await.unwrap();
    assert_eq!(step, NextStep::Rest { block: 0, remaining_s: 30.0 });
    let r = h
        .client
        .post(format!("{}/sessions/{}/end-rest", h.base, s.session_id))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert!(matches!(h.next(&s.session_id).await.json::<NextStep>().await.unwrap(), NextStep::Trial(_)));

    // a second block's rest expires on its own
    h.submit(&s.session_id, IntervalResponse::SecondShorter).await;
    h.next(&s.session_id).await;
    h.submit(&s.session_id, IntervalResponse::SecondShorter).await;
    h.clock.fetch_add(60_000, Ordering::SeqCst);
    assert!(matches!(h.next(&s.session_id).await.json::<NextStep>().await.unwrap(), NextStep::Trial(_)));
    h.shutdown().await;
}

#[tokio::test]
async fn unseeded_sessions_get_distinct_seeds() {
    let h = Harness::start().await;
    let a = h.create(json!({})).await;
    let b = h.create(json!({})).await;
    assert_ne!(a.seed, b.seed);
    assert_ne!(a.session_id, b.session_id);
    h.shutdown().await;
}

#[tokio::test]
async fn shutdown_keeps_partial_logs() {
    let h = Harness::start().await;
    let s = h.create(json!({ "seed": 4 })).await;
    for _ in 0..5 {
        h.next(&s.session_id).await;
        h.submit(&s.session_id, IntervalResponse::FirstShorter).await;
    }
    let data = h.shutdown().await;
    let loaded = load_session(&data.path().join(&s.session_id)).unwrap();
    assert_eq!(loaded.records.len(), 5);
    assert!(!loaded.is_complete());
}

#[tokio::test]
async fn port_in_use_and_unwritable_dir() {
    let first = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr: SocketAddr = first.local_addr().unwrap();
    assert!(matches!(bind(addr).await, Err(ServerError::PortInUse { .. })));

    let file = tempfile::NamedTempFile::new().unwrap();
    let clock = pselab_server::system_clock();
    assert!(matches!(
        AppState::new(file.path().join("sessions"), clock),
        Err(ServerError::UnwritableDir { .. })
    ));
}
