//! Scripted provider for tests and offline runs, with prompt capture.
//!
//! Every request the mock receives is appended to a shared [`CaptureLog`]
//! before the script runs, so tests can assert exactly what each agent,
//! narrator, and observer prompt contained.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::{ChatRequest, Provider, ProviderFailure};

/// What the script wants the provider to do for one request.
pub enum MockReply {
    Text(String),
    /// Simulated network failure; the gateway's retry loop sees this.
    TransportError(String),
    /// Explicitly unscripted; fails the request with a full dump.
    Unscripted,
}

type Responder = Box<dyn Fn(&ChatRequest) -> MockReply + Send + Sync>;

/// Shared view of every request a mock has received, in arrival order.
#[derive(Clone)]
pub struct CaptureLog(Arc<Mutex<Vec<ChatRequest>>>);

impl CaptureLog {
    fn new() -> CaptureLog {
        CaptureLog(Arc::new(Mutex::new(Vec::new())))
    }

    fn push(&self, request: ChatRequest) {
        self.0.lock().expect("capture lock poisoned").push(request);
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("capture lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.0.lock().expect("capture lock poisoned").clone()
    }

    /// Flattened prompt text of every captured request.
    pub fn prompts(&self) -> Vec<String> {
        self.requests().iter().map(ChatRequest::flat_text).collect()
    }

    /// True when any captured prompt contains `needle`.
    pub fn any_contains(&self, needle: &str) -> bool {
        self.prompts().iter().any(|p| p.contains(needle))
    }
}

pub struct MockProvider {
    id: String,
    responder: Responder,
    capture: CaptureLog,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn with_responder(
        f: impl Fn(&ChatRequest) -> MockReply + Send + Sync + 'static,
    ) -> MockProvider {
        MockProvider {
            id: "mock".into(),
            responder: Box::new(f),
            capture: CaptureLog::new(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Answers every request with the same text.
    pub fn constant(text: impl Into<String>) -> MockProvider {
        let text = text.into();
        MockProvider::with_responder(move |_| MockReply::Text(text.clone()))
    }

    /// Answers requests in order; requests past the end are unscripted.
    pub fn sequence(texts: Vec<String>) -> MockProvider {
        let texts = Arc::new(texts);
        let cursor = Arc::new(AtomicUsize::new(0));
        MockProvider::with_responder(move |_| {
            let i = cursor.fetch_add(1, Ordering::SeqCst);
            match texts.get(i) {
                Some(t) => MockReply::Text(t.clone()),
                None => MockReply::Unscripted,
            }
        })
    }

    pub fn capture(&self) -> CaptureLog {
        self.capture.clone()
    }

    /// Total provider attempts observed, including retried ones.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Provider for MockProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.capture.push(request.clone());
        match (self.responder)(request) {
            MockReply::Text(t) => Ok(t),
            MockReply::TransportError(msg) => Err(ProviderFailure::Transport(msg)),
            MockReply::Unscripted => Err(ProviderFailure::Unscripted(format!("{request:#?}"))),
        }
    }
}
