//! JSON-over-HTTP clients.
//!
//! Completion: `POST {model, prompt, max_tokens, temperature}` answered by
//! `{"text": ..}` (an OpenAI-style `{"choices": [{"text": ..}]}` body is also
//! accepted). Entailment: `POST {premise, hypothesis}` answered by
//! `{"score": x}` or `{"entail": e, "contradict": c}`. Extraction:
//! `POST {sentences, aspect, keywords, k}` answered by `{"indices": [..]}`.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::Value;

use super::{
    CallError, CompletionBackend, CompletionRequest, EntailmentBackend, ExtractorBackend, RawScore,
    ScoreConvention,
};

const TIMEOUT: Duration = Duration::from_secs(120);

fn client() -> Client {
    Client::builder()
        .timeout(TIMEOUT)
        .build()
        .expect("http client")
}

fn post_json(
    client: &Client,
    url: &str,
    token: Option<&str>,
    body: &Value,
) -> Result<Value, CallError> {
    let mut req = client.post(url).json(body);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = req
        .send()
        .map_err(|e| CallError::Transport(e.to_string()))?;
    let status = resp.status();
    let text = resp
        .text()
        .map_err(|e| CallError::Transport(e.to_string()))?;
    if status.is_success() {
        return serde_json::from_str(&text)
            .map_err(|e| CallError::Invalid(format!("response is not JSON: {e}")));
    }
    let lower = text.to_lowercase();
    if status == StatusCode::PAYLOAD_TOO_LARGE
        || (status == StatusCode::BAD_REQUEST
            && (lower.contains("context") || lower.contains("too long")))
    {
        return Err(CallError::ContextOverflow(format!("{status}: {text}")));
    }
    if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
        return Err(CallError::Transport(format!("{status}: {text}")));
    }
    Err(CallError::Invalid(format!("{status}: {text}")))
}

#[derive(Debug, Clone)]
pub struct HttpCompletion {
    url: String,
    token: Option<String>,
    client: Client,
}

impl HttpCompletion {
    pub fn new(url: impl Into<String>, token: Option<String>) -> Self {
        Self {
            url: url.into(),
            token,
            client: client(),
        }
    }
}

impl CompletionBackend for HttpCompletion {
    fn id(&self) -> String {
        format!("http-completion:{}", self.url)
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, CallError> {
        let v = post_json(
            &self.client,
            &self.url,
            self.token.as_deref(),
            &req.wire_body(),
        )?;
        v.get("text")
            .or_else(|| v.pointer("/choices/0/text"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| CallError::Invalid("completion response lacks `text`".into()))
    }
}

#[derive(Debug, Clone)]
pub struct HttpEntailment {
    url: String,
    token: Option<String>,
    convention: ScoreConvention,
    client: Client,
}

impl HttpEntailment {
    pub fn new(url: impl Into<String>, token: Option<String>, convention: ScoreConvention) -> Self {
        Self {
            url: url.into(),
            token,
            convention,
            client: client(),
        }
    }
}

impl EntailmentBackend for HttpEntailment {
    fn id(&self) -> String {
        format!("http-entailment:{}:{:?}", self.url, self.convention)
    }

    fn convention(&self) -> ScoreConvention {
        self.convention
    }

    fn raw_score(&self, premise: &str, hypothesis: &str) -> Result<RawScore, CallError> {
        let body = serde_json::json!({"premise": premise, "hypothesis": hypothesis});
        let v = post_json(&self.client, &self.url, self.token.as_deref(), &body)?;
        if let Some(s) = v.get("score").and_then(Value::as_f64) {
            return Ok(RawScore::Scalar(s));
        }
        match (
            v.get("entail").and_then(Value::as_f64),
            v.get("contradict").and_then(Value::as_f64),
        ) {
            (Some(entail), Some(contradict)) => Ok(RawScore::Pair { entail, contradict }),
            _ => Err(CallError::Invalid(
                "entailment response lacks `score`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpExtractor {
    url: String,
    token: Option<String>,
    client: Client,
}

impl HttpExtractor {
    pub fn new(url: impl Into<String>, token: Option<String>) -> Self {
        Self {
            url: url.into(),
            token,
            client: client(),
        }
    }
}

impl ExtractorBackend for HttpExtractor {
    fn id(&self) -> String {
        format!("http-extractor:{}", self.url)
    }

    fn extract(
        &self,
        sentences: &[String],
        aspect: &str,
        keywords: &[String],
        k: usize,
    ) -> Result<Vec<usize>, CallError> {
        let body = serde_json::json!({
            "sentences": sentences, "aspect": aspect, "keywords": keywords, "k": k,
        });
        let v = post_json(&self.client, &self.url, self.token.as_deref(), &body)?;
        let arr = v
            .get("indices")
            .and_then(Value::as_array)
            .ok_or_else(|| CallError::Invalid("extractor response lacks `indices`".into()))?;
        arr.iter()
            .map(|x| {
                x.as_u64()
                    .map(|i| i as usize)
                    .filter(|&i| i < sentences.len())
                    .ok_or_else(|| CallError::Invalid(format!("bad sentence index {x}")))
            })
            .collect()
    }
}
