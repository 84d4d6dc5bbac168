//! Every serialized payload and log record uses exactly the field names
//! documented in `schema/session.schema.json`.

use pselab_core::observer::{run_protocol_session, ObserverModel};
use pselab_core::protocol::persist::{SessionManifest, StoredResults};
use pselab_core::protocol::{create_session, NextStep, SessionConfig};
use pselab_server::{CreatedSession, ResponseAck, ResponseSubmission};
use serde::Serialize;
use serde_json::Value;

fn schema() -> Value {
    serde_json::from_str(include_str!("../../../schema/session.schema.json")).unwrap()
}

fn check<T: Serialize>(def: &str, value: &T) {
    let schema = schema();
    let def_v = &schema["$defs"][def];
    assert!(def_v.is_object(), "schema has no definition {def}");
    let json = serde_json::to_value(value).unwrap();
    let obj = json.as_object().unwrap_or_else(|| panic!("{def} serializes to an object"));
    let props = def_v["properties"].as_object().unwrap();
    for key in obj.keys() {
        assert!(props.contains_key(key), "{def}: field {key} is not documented");
    }
    for req in def_v["required"].as_array().into_iter().flatten() {
        let req = req.as_str().unwrap();
        assert!(obj.contains_key(req), "{def}: required field {req} missing from payload");
    }
    for (key, v) in obj {
        if let Some(e) = props[key]["enum"].as_array() {
            assert!(e.contains(v), "{def}.{key}: {v} is not an allowed value");
        }
    }
}

#[test]
fn payloads_match_schema() {
    let observer = ObserverModel::uniform(5.3, 4);
    let config = SessionConfig {
        seed: 8,
        trials_per_curve: 3,
        ..SessionConfig::default()
    };
    let state = run_protocol_session(&observer, config.clone(), 0).unwrap();
    check("SessionConfig", &SessionConfig::default());
    check("SessionConfig", state.config());
    check("QuestConfig", &state.config().quest);
    check("PsychometricParams", &state.config().quest.params);
    check("SessionManifest", &SessionManifest::new("abc", 1, &state));
    for r in state.log() {
        check("TrialRecord", r);
        check("TrialPlan", &r.plan);
    }
    let results = state.session_results(false).unwrap();
    check("SessionResults", &results);
    for c in &results.per_curve {
        check("CurveResult", c);
    }
    check(
        "StoredResults",
        &StoredResults {
            session_id: "abc".into(),
            complete: true,
            per_curve: results.per_curve.clone(),
        },
    );

    let mut fresh = create_session(config).unwrap();
    let NextStep::Trial(plan) = fresh.poll(0).unwrap() else {
        panic!("first step is a trial")
    };
    let mut step = serde_json::to_value(NextStep::Trial(plan)).unwrap();
    assert_eq!(step["kind"], "trial");
    step.as_object_mut().unwrap().remove("kind");
    check("TrialPlan", &step);
    let rest = serde_json::to_value(NextStep::Rest { block: 1, remaining_s: 3.0 }).unwrap();
    assert_eq!(rest, serde_json::json!({ "kind": "rest", "block": 1, "remaining_s": 3.0 }));

    check(
        "ResponseSubmission",
        &ResponseSubmission {
            response: pselab_core::protocol::IntervalResponse::FirstShorter,
            latency_ms: 1.0,
            trial_index: Some(0),
        },
    );
    check(
        "ResponseAck",
        &ResponseAck {
            trial_index: 0,
            feedback: None,
            phase: pselab_core::protocol::Phase::Block(1),
        },
    );
    check(
        "CreatedSession",
        &CreatedSession {
            session_id: "x".into(),
            participant_id: "p".into(),
            block_order: vec![],
            planned_trials: 0,
            seed: 0,
        },
    );
}
