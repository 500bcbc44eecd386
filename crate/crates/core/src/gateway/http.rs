//! Wire formats for the supported provider APIs.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{ProviderAdapter, ProviderConfig, ProviderKind, TransportError};
use crate::prompt::PromptRequest;

fn data_url(png: &[u8]) -> String {
    format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(png))
}

/// Request body for OpenAI-style `chat/completions` endpoints.
pub fn openai_chat_body(cfg: &ProviderConfig, req: &PromptRequest) -> Value {
    let mut content = vec![json!({"type": "text", "text": req.instruction})];
    content.extend(
        req.images
            .iter()
            .map(|f| json!({"type": "image_url", "image_url": {"url": data_url(&f.png)}})),
    );
    json!({
        "model": cfg.model_id,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
        "messages": [{"role": "user", "content": content}],
    })
}

/// Request body for the Gemini `generateContent` endpoint.
pub fn gemini_body(cfg: &ProviderConfig, req: &PromptRequest) -> Value {
    let mut parts = vec![json!({"text": req.instruction})];
    parts.extend(req.images.iter().map(|f| {
        json!({"inline_data": {
            "mime_type": "image/png",
            "data": base64::engine::general_purpose::STANDARD.encode(&f.png),
        }})
    }));
    json!({
        "contents": [{"role": "user", "parts": parts}],
        "generationConfig": {"temperature": cfg.temperature, "maxOutputTokens": cfg.max_output_tokens},
    })
}

fn malformed(what: &str) -> TransportError {
    TransportError::Malformed(format!("response has no {what}"))
}

pub fn openai_chat_text(body: &Value) -> Result<String, TransportError> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| malformed("choices[0].message.content"))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        // Some servers return a list of typed parts.
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        _ => Err(malformed("text content")),
    }
}

pub fn gemini_text(body: &Value) -> Result<String, TransportError> {
    let parts = body
        .pointer("/candidates/0/content/parts")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("candidates[0].content.parts"))?;
    Ok(parts
        .iter()
        .filter_map(|p| p.get("text").and_then(Value::as_str))
        .collect::<Vec<_>>()
        .join(""))
}

/// Blocking HTTP client for both API styles.
#[derive(Debug, Default)]
pub struct HttpAdapter;

impl HttpAdapter {
    fn client(timeout: Duration) -> Result<reqwest::blocking::Client, TransportError> {
        reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))
    }
}

impl ProviderAdapter for HttpAdapter {
    fn complete(&self, cfg: &ProviderConfig, req: &PromptRequest, api_key: Option<&str>) -> Result<String, TransportError> {
        let client = Self::client(cfg.timeout())?;
        let (url, body) = match cfg.kind {
            ProviderKind::OpenaiChat => (cfg.endpoint.clone(), openai_chat_body(cfg, req)),
            ProviderKind::Gemini => (cfg.endpoint.replace("{model}", &cfg.model_id), gemini_body(cfg, req)),
        };
        let mut rb = client.post(&url).json(&body);
        if let Some(key) = api_key {
            rb = match cfg.kind {
                ProviderKind::OpenaiChat => rb.bearer_auth(key),
                ProviderKind::Gemini => rb.header("x-goog-api-key", key),
            };
        }
        let resp = rb.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Network(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Network(e.to_string())
            }
        })?;
        if !(200..300).contains(&status) {
            return Err(TransportError::from_status(status, text));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| TransportError::Malformed(e.to_string()))?;
        match cfg.kind {
            ProviderKind::OpenaiChat => openai_chat_text(&value),
            ProviderKind::Gemini => gemini_text(&value),
        }
    }
}
