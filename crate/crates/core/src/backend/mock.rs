use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatRequest, ChatResponse};

/// One canned reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Special(SpecialReply),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialReply {
    /// The model declined to answer. Written `{"refusal": {}}` in script files.
    Refusal {},
    /// The provider failed with this HTTP status.
    Fail { status: u16 },
}

impl MockReply {
    fn respond(&self) -> Result<ChatResponse, BackendError> {
        match self {
            MockReply::Text(t) => Ok(ChatResponse::text(t.clone())),
            MockReply::Special(SpecialReply::Refusal {}) => Ok(ChatResponse::refusal()),
            MockReply::Special(SpecialReply::Fail { status }) => {
                Err(BackendError::ProviderError { status: *status, body: "scripted failure".into() })
            }
        }
    }

    pub fn refusal() -> Self {
        MockReply::Special(SpecialReply::Refusal {})
    }

    pub fn fail(status: u16) -> Self {
        MockReply::Special(SpecialReply::Fail { status })
    }
}

impl From<&str> for MockReply {
    fn from(s: &str) -> Self {
        MockReply::Text(s.to_string())
    }
}

impl From<String> for MockReply {
    fn from(s: String) -> Self {
        MockReply::Text(s)
    }
}

enum Script {
    List { replies: Vec<MockReply>, next: usize },
    Keyed(HashMap<String, MockReply>),
}

/// Deterministic backend that replays a script and records every request.
///
/// List mode answers in order; keyed mode answers by
/// [`ChatRequest::fingerprint`]. Calls are serialized internally.
pub struct ScriptedBackend {
    state: Mutex<(Script, Vec<ChatRequest>)>,
}

impl ScriptedBackend {
    pub fn list<I, R>(replies: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: Into<MockReply>,
    {
        let replies = replies.into_iter().map(Into::into).collect();
        ScriptedBackend { state: Mutex::new((Script::List { replies, next: 0 }, Vec::new())) }
    }

    pub fn keyed<I, K, R>(map: I) -> Self
    where
        I: IntoIterator<Item = (K, R)>,
        K: Into<String>,
        R: Into<MockReply>,
    {
        let map = map.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        ScriptedBackend { state: Mutex::new((Script::Keyed(map), Vec::new())) }
    }

    /// Every request received so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.state.lock().unwrap().1.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().unwrap().1.len()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let mut guard = self.state.lock().unwrap();
        let (script, log) = &mut *guard;
        log.push(request.clone());
        match script {
            Script::List { replies, next } => {
                let reply = replies.get(*next).ok_or(BackendError::ScriptExhausted(*next))?;
                *next += 1;
                reply.respond()
            }
            Script::Keyed(map) => {
                let fp = request.fingerprint();
                map.get(&fp).ok_or(BackendError::UnknownFingerprint(fp))?.respond()
            }
        }
    }
}

/// Wraps a backend and keeps `fingerprint -> content` for every successful
/// reply, so a live run can later be replayed with [`ScriptedBackend::keyed`].
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<Vec<(String, String)>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend { inner, recorded: Mutex::new(Vec::new()) }
    }

    pub fn recorded(&self) -> Vec<(String, String)> {
        self.recorded.lock().unwrap().clone()
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let resp = self.inner.complete(request)?;
        if resp.has_content() {
            self.recorded.lock().unwrap().push((request.fingerprint(), resp.content.clone()));
        }
        Ok(resp)
    }
}
