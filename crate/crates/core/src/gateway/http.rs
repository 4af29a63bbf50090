use serde_json::{json, Value};
use ureq::Agent;

use super::{Backend, ChatRequest, EndpointConfig};
use crate::error::{Error, Result};

/// Client for chat-completions style HTTP endpoints
/// (`POST {base_url}/chat/completions`, `POST {base_url}/embeddings`).
pub struct HttpBackend {
    agent: Agent,
    base_url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: &EndpointConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base_url: config.base_url.trim_end_matches('/').to_string(),
            api_key: config.api_key.clone(),
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let url = format!("{}/{path}", self.base_url);
        let mut request = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let transport = |status: Option<u16>, message: String| Error::Transport {
            context: url.clone(),
            status,
            message,
        };
        let mut response = request.send_json(body).map_err(|e| transport(None, e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| transport(Some(status), e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(transport(Some(status), text));
        }
        serde_json::from_str(&text).map_err(|e| transport(Some(status), format!("bad JSON: {e}")))
    }
}

pub(crate) fn chat_body(model: &str, request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": model,
        "messages": [{"role": "user", "content": request.prompt}],
        "temperature": request.temperature,
    });
    if let Some(seed) = request.seed {
        body["seed"] = json!(seed);
    }
    body
}

pub(crate) fn parse_chat(value: &Value) -> Option<String> {
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
}

pub(crate) fn parse_embeddings(value: &Value) -> Option<Vec<Vec<f64>>> {
    let mut rows: Vec<(u64, Vec<f64>)> = value
        .get("data")?
        .as_array()?
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let index = item.get("index").and_then(Value::as_u64).unwrap_or(i as u64);
            let values = item
                .get("embedding")?
                .as_array()?
                .iter()
                .map(Value::as_f64)
                .collect::<Option<Vec<f64>>>()?;
            Some((index, values))
        })
        .collect::<Option<_>>()?;
    rows.sort_by_key(|(i, _)| *i);
    Some(rows.into_iter().map(|(_, v)| v).collect())
}

impl Backend for HttpBackend {
    fn chat(&self, model: &str, request: &ChatRequest) -> Result<String> {
        let value = self.post("chat/completions", &chat_body(model, request))?;
        parse_chat(&value).ok_or_else(|| Error::Transport {
            context: "chat/completions".into(),
            status: Some(200),
            message: "response has no choices[0].message.content".into(),
        })
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let value = self.post("embeddings", &json!({"model": model, "input": texts}))?;
        parse_embeddings(&value).ok_or_else(|| Error::Transport {
            context: "embeddings".into(),
            status: Some(200),
            message: "response has no data[].embedding".into(),
        })
    }
}
