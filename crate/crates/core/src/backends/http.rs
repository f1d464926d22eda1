//! JSON-over-HTTP client for external model servers.
//!
//! Endpoints (all bodies UTF-8 JSON):
//!
//! - `POST /translate` → `{"candidates": [..]}`
//! - `POST /score` → `{"scores": [..]}`
//! - `POST /detect` → `{"langs": [.. | "unknown"]}`

use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mtp::{LanguageTag, Sentence};

use super::prompt::{default_templates, find_template, render_prompt, PromptTemplate};
use super::{Exemplar, LanguageDetector, Scorer, TranslateRequest, Translator};

pub const BACKEND_URL_ENV: &str = "TRANSZERO_BACKEND_URL";
pub const UNKNOWN_LANG: &str = "unknown";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslateBody {
    pub text: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub exemplars: Vec<Exemplar>,
    pub num_candidates: usize,
    pub temperature: f64,
    pub top_k: usize,
    /// The fully rendered prompt, exemplar blocks included.
    pub instruction: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslateReply {
    pub candidates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub a: String,
    pub b: String,
    pub lang: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBody {
    pub pairs: Vec<ScorePair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReply {
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectBody {
    pub texts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectReply {
    pub langs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_millis: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".to_string(),
            timeout_secs: 120.0,
            max_retries: 2,
            backoff_millis: 500,
        }
    }
}

impl HttpConfig {
    /// Replaces the base URL with `TRANSZERO_BACKEND_URL` when it is set.
    pub fn with_env_override(mut self) -> Self {
        if let Ok(url) = std::env::var(BACKEND_URL_ENV) {
            if !url.trim().is_empty() {
                self.base_url = url;
            }
        }
        self
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    cfg: HttpConfig,
    templates: Vec<PromptTemplate>,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::BackendUnreachable(e.to_string()))?;
        Ok(Self { client, cfg, templates: default_templates() })
    }

    pub fn with_templates(mut self, templates: Vec<PromptTemplate>) -> Self {
        self.templates = templates;
        self
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    fn url(&self, endpoint: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), endpoint)
    }

    /// POSTs `body`, retrying transport failures and 5xx replies with
    /// exponential backoff.
    fn post<Req: Serialize, Rep: DeserializeOwned>(&self, endpoint: &str, body: &Req) -> Result<Rep> {
        let url = self.url(endpoint);
        let mut attempt = 0;
        loop {
            match self.post_once(&url, body) {
                Ok(rep) => return Ok(rep),
                Err(e) if e.is_retryable() && attempt < self.cfg.max_retries => {
                    let wait = Duration::from_millis(self.cfg.backoff_millis << attempt);
                    warn!("{endpoint}: {e}; retry {} in {wait:?}", attempt + 1);
                    thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn post_once<Req: Serialize, Rep: DeserializeOwned>(&self, url: &str, body: &Req) -> Result<Rep> {
        let resp = self
            .client
            .post(url)
            .json(body)
            .send()
            .map_err(|e| Error::BackendUnreachable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Error::BackendUnreachable(format!("{url}: HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Error::Protocol(format!("{url}: HTTP {status}: {text}")));
        }
        let bytes = resp.bytes().map_err(|e| Error::BackendUnreachable(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Protocol(format!("{url}: {e}")))
    }

    pub fn translate_body(&self, req: &TranslateRequest) -> Result<TranslateBody> {
        let tpl = find_template(&self.templates, &req.instruction_id)?;
        Ok(TranslateBody {
            text: req.text.clone(),
            src_lang: req.direction.src().to_string(),
            tgt_lang: req.direction.tgt().to_string(),
            exemplars: req.exemplars.clone(),
            num_candidates: req.num_candidates,
            temperature: req.temperature,
            top_k: req.top_k,
            instruction: render_prompt(tpl, req)?,
            seed: req.seed,
        })
    }
}

impl Translator for HttpBackend {
    fn translate(&self, req: &TranslateRequest) -> Result<Vec<String>> {
        let body = self.translate_body(req)?;
        debug!("translate {} x{}", req.direction, req.num_candidates);
        let rep: TranslateReply = self.post("translate", &body)?;
        Ok(rep.candidates)
    }
}

impl Scorer for HttpBackend {
    fn score_batch(&self, pairs: &[(&Sentence, &Sentence)]) -> Result<Vec<f64>> {
        let body = ScoreBody {
            pairs: pairs
                .iter()
                .map(|(a, b)| ScorePair {
                    a: a.text.clone(),
                    b: b.text.clone(),
                    lang: a.lang.to_string(),
                })
                .collect(),
        };
        let rep: ScoreReply = self.post("score", &body)?;
        Ok(rep.scores)
    }
}

impl LanguageDetector for HttpBackend {
    fn detect(&self, texts: &[&str]) -> Result<Vec<Option<LanguageTag>>> {
        let body = DetectBody { texts: texts.iter().map(|t| t.to_string()).collect() };
        let rep: DetectReply = self.post("detect", &body)?;
        Ok(rep
            .langs
            .into_iter()
            .map(|l| if l == UNKNOWN_LANG { None } else { LanguageTag::new(l).ok() })
            .collect())
    }
}

/// A request/response example for one endpoint, used as a shared contract
/// test between this client and any server implementation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractFixture {
    pub name: String,
    pub endpoint: String,
    pub request: serde_json::Value,
    /// Structural expectations on the reply.
    pub expect: serde_json::Value,
}

/// Fixtures generated from this client's own request encoding.
pub fn contract_fixtures() -> Result<Vec<ContractFixture>> {
    use crate::mtp::Direction;
    use serde_json::json;

    let backend = HttpBackend::new(HttpConfig::default())?;
    let en = LanguageTag::new("en")?;
    let de = LanguageTag::new("de")?;
    let plain = TranslateRequest::new("The weather is nice today.", Direction::new(en.clone(), de.clone())?)
        .sampled(3, 1.0, 50)
        .with_seed(7);
    let merge = plain.clone().sampled(1, 1.0, 50).with_exemplars(vec![
        Exemplar { src: "The weather is nice today.".into(), tgt: "Das Wetter ist heute schön.".into() },
        Exemplar { src: "The weather is nice today.".into(), tgt: "Heute ist das Wetter gut.".into() },
    ]);
    let mut out = Vec::new();
    for (name, req) in [("translate_plain", plain), ("translate_merge", merge)] {
        let n = req.num_candidates;
        out.push(ContractFixture {
            name: name.into(),
            endpoint: "/translate".into(),
            request: serde_json::to_value(backend.translate_body(&req)?)?,
            expect: json!({ "candidates_len": n }),
        });
    }
    let same = "The weather is nice today.";
    out.push(ContractFixture {
        name: "score_identical_and_distinct".into(),
        endpoint: "/score".into(),
        request: serde_json::to_value(ScoreBody {
            pairs: vec![
                ScorePair { a: same.into(), b: same.into(), lang: "en".into() },
                ScorePair { a: same.into(), b: "Cats sleep a lot.".into(), lang: "en".into() },
            ],
        })?,
        expect: json!({ "scores_len": 2, "min": 0.0, "max": 1.0, "identical_min": [0, 0.9] }),
    });
    out.push(ContractFixture {
        name: "detect".into(),
        endpoint: "/detect".into(),
        request: serde_json::to_value(DetectBody {
            texts: vec![same.into(), "Das Wetter ist heute schön.".into(), String::new()],
        })?,
        expect: json!({ "langs_len": 3 }),
    });
    Ok(out)
}
