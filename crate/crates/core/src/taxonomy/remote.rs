//! Chat-completion backed clusterer.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ClusterProposal, Clusterer, Group, TaxonomyError};

pub const URL_ENV: &str = "HIERSPLAT_LLM_URL";
pub const KEY_ENV: &str = "HIERSPLAT_LLM_KEY";

pub const DEFAULT_SYSTEM_PROMPT: &str = "You organise semantic class labels of indoor scenes into a taxonomy. \
Answer with a single JSON object mapping each coarser parent class name to the list of input labels it contains. \
Use every input label exactly once and do not add labels that were not given.";

pub const DEFAULT_USER_PROMPT: &str = "Group these labels into coarser classes, considering both semantic meaning and geometric shape.\n\
Labels: {labels}\n\
Existing groups (you may extend them or create new ones): {reference}";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteChatConfig {
    /// Full chat-completion endpoint URL.
    pub url: String,
    #[serde(default)]
    pub api_key: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_system")]
    pub system_prompt: String,
    /// `{labels}` and `{reference}` are substituted with JSON.
    #[serde(default = "default_user")]
    pub user_prompt: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_model() -> String {
    "gpt-4o-mini".to_string()
}
fn default_system() -> String {
    DEFAULT_SYSTEM_PROMPT.to_string()
}
fn default_user() -> String {
    DEFAULT_USER_PROMPT.to_string()
}
fn default_timeout() -> u64 {
    60
}

impl RemoteChatConfig {
    pub fn new(url: impl Into<String>) -> Self {
        RemoteChatConfig {
            url: url.into(),
            api_key: String::new(),
            model: default_model(),
            system_prompt: default_system(),
            user_prompt: default_user(),
            timeout_secs: default_timeout(),
        }
    }

    /// Reads the endpoint and key from `HIERSPLAT_LLM_URL` / `HIERSPLAT_LLM_KEY`.
    pub fn from_env() -> Result<Self, TaxonomyError> {
        let url = std::env::var(URL_ENV)
            .map_err(|_| TaxonomyError::Clusterer(format!("{URL_ENV} is not set")))?;
        let mut cfg = RemoteChatConfig::new(url);
        cfg.api_key = std::env::var(KEY_ENV).unwrap_or_default();
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: String,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

pub struct RemoteChat {
    config: RemoteChatConfig,
    http: reqwest::blocking::Client,
}

impl RemoteChat {
    pub fn new(config: RemoteChatConfig) -> Result<Self, TaxonomyError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| TaxonomyError::Clusterer(e.to_string()))?;
        Ok(RemoteChat { config, http })
    }

    fn user_message(&self, labels: &[String], reference: &[Group]) -> String {
        let reference: serde_json::Map<String, serde_json::Value> = reference
            .iter()
            .map(|g| (g.name.clone(), serde_json::json!(g.members)))
            .collect();
        self.config
            .user_prompt
            .replace("{labels}", &serde_json::to_string(labels).unwrap())
            .replace("{reference}", &serde_json::Value::Object(reference).to_string())
    }
}

/// Extracts the JSON object from a model reply, tolerating code fences and
/// surrounding prose.
pub(crate) fn parse_proposal(content: &str) -> Result<ClusterProposal, TaxonomyError> {
    let start = content.find('{');
    let end = content.rfind('}');
    let body = match (start, end) {
        (Some(s), Some(e)) if e > s => &content[s..=e],
        _ => return Err(TaxonomyError::Clusterer(format!("no JSON object in reply: {content:?}"))),
    };
    serde_json::from_str(body).map_err(|e| TaxonomyError::Clusterer(format!("malformed proposal: {e}")))
}

impl Clusterer for RemoteChat {
    fn propose(
        &mut self,
        _stage: usize,
        labels: &[String],
        reference: &[Group],
    ) -> Result<ClusterProposal, TaxonomyError> {
        let request = ChatRequest {
            model: &self.config.model,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: self.config.system_prompt.clone(),
                },
                ChatMessage {
                    role: "user",
                    content: self.user_message(labels, reference),
                },
            ],
            temperature: 0.0,
        };
        let mut req = self.http.post(&self.config.url).json(&request);
        if !self.config.api_key.is_empty() {
            req = req.bearer_auth(&self.config.api_key);
        }
        let resp = req.send().map_err(|e| TaxonomyError::Clusterer(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(TaxonomyError::Clusterer(format!("HTTP {status}: {body}")));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| TaxonomyError::Clusterer(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TaxonomyError::Clusterer("empty completion".into()))?;
        parse_proposal(&content)
    }
}
