use super::*;
use crate::dataio::ArtifactStore;

fn request() -> ChatRequest {
    ChatRequest::new("m", vec![Message::user("hello")], 0.6, Some(1), 64).unwrap()
}

#[test]
fn record_then_replay_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let recorder = Gateway::record_with_mock(
        MockProvider::constant("scripted answer"),
        ArtifactStore::open(dir.path()).unwrap(),
    );
    let live = recorder.complete(&request()).unwrap();
    assert!(!live.cached);

    let replayer = Gateway::replay(ArtifactStore::open(dir.path()).unwrap());
    let replayed = replayer.complete(&request()).unwrap();
    assert_eq!(replayed.text, "scripted answer");
    assert!(replayed.cached);
}

#[test]
fn replay_of_unrecorded_request_names_the_digest() {
    let dir = tempfile::tempdir().unwrap();
    let gw = Gateway::replay(ArtifactStore::open(dir.path()).unwrap());
    let expected = gw.cache_key(&request());
    match gw.complete(&request()) {
        Err(GatewayError::ReplayMiss { digest }) => assert_eq!(digest, expected.digest()),
        other => panic!("expected ReplayMiss, got {other:?}"),
    }
}

#[test]
fn temperature_change_changes_the_cache_key() {
    let a = request();
    let mut b = request();
    b.temperature = 0.7;
    assert_ne!(
        CacheKey::compute(&a, "v1").digest(),
        CacheKey::compute(&b, "v1").digest()
    );
}

#[test]
fn every_field_perturbation_changes_the_key() {
    let base = request();
    let base_key = CacheKey::compute(&base, "v1");
    let mut variants = Vec::new();

    let mut v = base.clone();
    v.model_name = "m2".into();
    variants.push(v);
    let mut v = base.clone();
    v.messages.push(Message::assistant("x"));
    variants.push(v);
    let mut v = base.clone();
    v.messages[0].text = "hello!".into();
    variants.push(v);
    let mut v = base.clone();
    v.temperature = 0.61;
    variants.push(v);
    let mut v = base.clone();
    v.seed = Some(2);
    variants.push(v);
    let mut v = base.clone();
    v.seed = None;
    variants.push(v);
    let mut v = base.clone();
    v.max_tokens = 65;
    variants.push(v);

    let mut keys: Vec<String> = variants
        .iter()
        .map(|r| CacheKey::compute(r, "v1").digest().to_string())
        .collect();
    keys.push(CacheKey::compute(&base, "v2").digest().to_string());
    keys.push(base_key.digest().to_string());
    let distinct: std::collections::BTreeSet<&String> = keys.iter().collect();
    assert_eq!(distinct.len(), keys.len(), "cache keys collided");
}

#[test]
fn mock_passthrough_answers_from_script() {
    let gw = Gateway::with_mock(MockProvider::constant("ok"));
    assert_eq!(gw.complete(&request()).unwrap().text, "ok");
}

#[test]
fn capture_log_records_requests_in_order() {
    let mock = MockProvider::sequence(vec!["a".into(), "b".into(), "c".into()]);
    let capture = mock.capture();
    let gw = Gateway::with_mock(mock);
    for text in ["one", "two", "three"] {
        let req = ChatRequest::new("m", vec![Message::user(text)], 0.0, None, 16).unwrap();
        gw.complete(&req).unwrap();
    }
    assert_eq!(capture.len(), 3);
    let prompts = capture.prompts();
    assert_eq!(prompts, vec!["one", "two", "three"]);
    assert!(capture.any_contains("two"));
    assert!(!capture.any_contains("forbidden"));
}

#[test]
fn unscripted_request_fails_with_request_dump() {
    let gw = Gateway::with_mock(MockProvider::sequence(vec![]));
    match gw.complete(&request()) {
        Err(GatewayError::Unscripted(dump)) => assert!(dump.contains("hello")),
        other => panic!("expected Unscripted, got {other:?}"),
    }
}

#[test]
fn transport_failures_are_retried_within_budget() {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    let attempts = Arc::new(AtomicUsize::new(0));
    let counter = attempts.clone();
    let mock = MockProvider::with_responder(move |_| {
        if counter.fetch_add(1, Ordering::SeqCst) < 2 {
            MockReply::TransportError("connection reset".into())
        } else {
            MockReply::Text("finally".into())
        }
    });
    let gw = Gateway::with_mock(mock);
    assert_eq!(gw.complete(&request()).unwrap().text, "finally");
    assert_eq!(attempts.load(Ordering::SeqCst), 3);
}

#[test]
fn retry_budget_is_capped() {
    let mock = MockProvider::with_responder(|_| MockReply::TransportError("down".into()));
    let count_handle = mock.capture();
    let gw = Gateway::with_mock(mock);
    match gw.complete(&request()) {
        Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected Transport, got {other:?}"),
    }
    assert_eq!(count_handle.len(), 3);
}

#[test]
fn invalid_requests_are_rejected_at_construction() {
    assert!(ChatRequest::new("m", vec![], 0.5, None, 16).is_err());
    assert!(ChatRequest::new("m", vec![Message::user("x")], 2.5, None, 16).is_err());
    assert!(ChatRequest::new("m", vec![Message::user("x")], 0.5, None, 0).is_err());
}
