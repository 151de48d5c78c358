//! Completion backends and prompt templates.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("completion backend failed (status {status:?}): {message}")]
    Backend { status: Option<u16>, message: String },
    #[error("llm configuration: {0}")]
    Config(String),
    #[error("prompt template {name} is missing placeholder {{{placeholder}}}")]
    MissingPlaceholder { name: String, placeholder: String },
    #[error("reading prompt template: {0}")]
    Io(#[from] std::io::Error),
}

impl LlmError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, LlmError::Backend { .. })
    }
}

/// A prompt with `{name}` placeholders. Braces that do not enclose a supplied
/// variable name are left untouched, so templates may contain literal JSON.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
}

const SEED_GENERATION: &str = include_str!("../assets/prompts/seed_generation.txt");
const QUESTION_VALIDATION: &str = include_str!("../assets/prompts/question_validation.txt");
const ANSWER_EDITING: &str = include_str!("../assets/prompts/answer_editing.txt");
const LOCATION_RELEVANCE: &str = include_str!("../assets/prompts/location_relevance.txt");
const STRUCTURED_ANNOTATION: &str = include_str!("../assets/prompts/structured_annotation.txt");

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            text: text.into(),
        }
    }

    /// Templates bundled with the crate: `seed_generation`,
    /// `question_validation`, `answer_editing`, `location_relevance` and
    /// `structured_annotation`.
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "seed_generation" => SEED_GENERATION,
            "question_validation" => QUESTION_VALIDATION,
            "answer_editing" => ANSWER_EDITING,
            "location_relevance" => LOCATION_RELEVANCE,
            "structured_annotation" => STRUCTURED_ANNOTATION,
            _ => return None,
        };
        Some(Self::new(name, text))
    }

    pub fn from_file(name: impl Into<String>, path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(name, std::fs::read_to_string(path)?))
    }

    pub fn require(&self, placeholders: &[&str]) -> Result<(), LlmError> {
        for p in placeholders {
            if !self.text.contains(&format!("{{{p}}}")) {
                return Err(LlmError::MissingPlaceholder {
                    name: self.name.clone(),
                    placeholder: (*p).to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn render(&self, vars: &BTreeMap<String, String>) -> String {
        let mut out = self.text.clone();
        for (k, v) in vars {
            out = out.replace(&format!("{{{k}}}"), v);
        }
        out
    }
}

/// A rendered prompt plus the variables it was rendered from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRequest {
    pub task: String,
    pub prompt: String,
    pub vars: BTreeMap<String, String>,
}

impl CompletionRequest {
    pub fn render(template: &PromptTemplate, vars: BTreeMap<String, String>) -> Self {
        Self {
            task: template.name.clone(),
            prompt: template.render(&vars),
            vars,
        }
    }

    pub fn var(&self, name: &str) -> &str {
        self.vars.get(name).map(String::as_str).unwrap_or("")
    }
}

pub trait CompletionBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Whether the backend reliably answers the combined annotation prompt
    /// with one JSON object.
    fn supports_structured(&self) -> bool {
        false
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

type Responder = Box<dyn Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync>;

const ECHO_LEADS: [&str; 12] = [
    "what to know about",
    "where to find",
    "best time for",
    "how much does it cost for",
    "history of",
    "is it safe to try",
    "opening hours for",
    "cheap options for",
    "traditional",
    "family friendly",
    "rules and etiquette for",
    "popular places for",
];

/// Offline backend: either replays a script of canned completions or answers
/// through a closure.
pub struct StubBackend {
    id: String,
    structured: bool,
    script: Mutex<VecDeque<Result<String, LlmError>>>,
    responder: Option<Responder>,
    calls: Mutex<Vec<CompletionRequest>>,
}

impl StubBackend {
    pub fn scripted<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            id: "stub".into(),
            structured: false,
            script: Mutex::new(responses.into_iter().map(|s| Ok(s.into())).collect()),
            responder: None,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn scripted_results(responses: Vec<Result<String, LlmError>>) -> Self {
        let mut s = Self::scripted(Vec::<String>::new());
        s.script = Mutex::new(responses.into());
        s
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync + 'static,
    {
        let mut s = Self::scripted(Vec::<String>::new());
        s.responder = Some(Box::new(f));
        s
    }

    /// Deterministic backend for dry runs: seed generation yields `count`
    /// numbered queries on the topic; annotation keeps every question, echoes
    /// the answer as the edit and marks it location relevant.
    pub fn echo() -> Self {
        Self::from_fn(|req| {
            Ok(match req.task.as_str() {
                "seed_generation" => {
                    let count: usize = req.var("count").parse().unwrap_or(1);
                    (1..=count)
                        .map(|i| {
                            let lead = ECHO_LEADS[(i - 1) % ECHO_LEADS.len()];
                            format!("{i}. {lead} {} in {}", req.var("topic"), req.var("location"))
                        })
                        .collect::<Vec<_>>()
                        .join("\n")
                }
                "question_validation" => json!({"question_label": "good"}).to_string(),
                "answer_editing" => json!({"edited_answer": req.var("answer")}).to_string(),
                "location_relevance" => json!({"location_relevant": true}).to_string(),
                _ => json!({
                    "question_label": "good",
                    "edited_answer": req.var("answer"),
                    "location_relevant": true
                })
                .to_string(),
            })
        })
    }

    pub fn with_structured(mut self, structured: bool) -> Self {
        self.structured = structured;
        self
    }

    pub fn calls(&self) -> Vec<CompletionRequest> {
        self.calls.lock().unwrap().clone()
    }
}

impl CompletionBackend for StubBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports_structured(&self) -> bool {
        self.structured
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        self.calls.lock().unwrap().push(request.clone());
        if let Some(f) = &self.responder {
            return f(request);
        }
        self.script.lock().unwrap().pop_front().unwrap_or_else(|| {
            Err(LlmError::Backend {
                status: None,
                message: "stub script exhausted".into(),
            })
        })
    }
}

/// Chat-completions client for OpenAI-compatible endpoints.
///
/// Env keys: `LLM_API_KEY`, `LLM_MODEL`, optional `LLM_ENDPOINT`
/// (defaults to the OpenAI chat completions URL).
pub struct OpenAiChatBackend {
    http: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    model: String,
    id: String,
}

pub const DEFAULT_CHAT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

impl OpenAiChatBackend {
    pub fn new(endpoint: &str, api_key: &str, model: &str) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            http,
            endpoint: endpoint.to_string(),
            api_key: api_key.to_string(),
            model: model.to_string(),
            id: format!("openai:{model}"),
        })
    }

    pub fn from_env(env: &BTreeMap<String, String>) -> Result<Self, LlmError> {
        let key = env
            .get("LLM_API_KEY")
            .ok_or_else(|| LlmError::Config("LLM_API_KEY missing from env file".into()))?;
        let model = env
            .get("LLM_MODEL")
            .ok_or_else(|| LlmError::Config("LLM_MODEL missing from env file".into()))?;
        let endpoint = env
            .get("LLM_ENDPOINT")
            .map(String::as_str)
            .unwrap_or(DEFAULT_CHAT_ENDPOINT);
        Self::new(endpoint, key, model)
    }
}

impl CompletionBackend for OpenAiChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports_structured(&self) -> bool {
        true
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let resp = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| LlmError::Backend {
                status: e.status().map(|s| s.as_u16()),
                message: e.to_string(),
            })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| LlmError::Backend {
            status: Some(status.as_u16()),
            message: e.to_string(),
        })?;
        if !status.is_success() {
            return Err(LlmError::Backend {
                status: Some(status.as_u16()),
                message: text.chars().take(200).collect(),
            });
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| LlmError::Backend {
            status: Some(status.as_u16()),
            message: format!("unparseable completion payload: {e}"),
        })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Backend {
                status: Some(status.as_u16()),
                message: "completion payload has no choices[0].message.content".into(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn builtin_templates_have_required_placeholders() {
        let seed = PromptTemplate::builtin("seed_generation").unwrap();
        seed.require(&["location", "topic", "language", "count"]).unwrap();
        for name in [
            "question_validation",
            "answer_editing",
            "location_relevance",
            "structured_annotation",
        ] {
            PromptTemplate::builtin(name)
                .unwrap()
                .require(&["question", "answer", "location", "source_url"])
                .unwrap();
        }
        assert!(PromptTemplate::builtin("nope").is_none());
    }

    #[test]
    fn render_leaves_literal_json_alone() {
        let t = PromptTemplate::new("t", r#"Q: {question} -> {"question_label": "good"} {unknown}"#);
        let out = t.render(&vars(&[("question", "why?")]));
        assert_eq!(out, r#"Q: why? -> {"question_label": "good"} {unknown}"#);
        assert!(matches!(
            t.require(&["answer"]),
            Err(LlmError::MissingPlaceholder { .. })
        ));
    }

    #[test]
    fn scripted_stub_replays_then_fails() {
        let stub = StubBackend::scripted(["a", "b"]);
        let req = CompletionRequest::render(&PromptTemplate::new("t", "x"), BTreeMap::new());
        assert_eq!(stub.complete(&req).unwrap(), "a");
        assert_eq!(stub.complete(&req).unwrap(), "b");
        assert!(stub.complete(&req).unwrap_err().is_retriable());
        assert_eq!(stub.calls().len(), 3);
    }
}
