use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Chunk;
use crate::http::{HttpError, JsonClient, RetryPolicy};
use crate::io::short_hash;
use crate::kb::{
    build_kb_shared, consolidate, sort_facts, ConsolidationConfig, ExtractorConfig, FactExtractor, Ontology,
    RuleExtractor,
};
use crate::squerl::{execute_indices, QueryAst};

/// Fixed reader prompt; `{query}` and `{excerpts}` are substituted.
pub const PROMPT_TEMPLATE: &str = include_str!("reader_prompt.txt");

const REPROMPT: &str = "Your previous reply could not be read. Reply with exactly one word: YES or NO.";

pub fn prompt_hash() -> String {
    short_hash(PROMPT_TEMPLATE.as_bytes())
}

#[derive(Debug, Error)]
pub enum ReaderError {
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("unexpected reader response: {0}")]
    BadResponse(String),
    #[error("this reader needs a parsed query")]
    MissingQueryAst,
}

impl ReaderError {
    pub fn is_external(&self) -> bool {
        matches!(self, ReaderError::Http(_) | ReaderError::BadResponse(_))
    }
}

/// A chunk handed to the reader, with its document date.
#[derive(Debug, Clone, Copy)]
pub struct ContextChunk<'a> {
    pub chunk: &'a Chunk,
    pub authored_at: NaiveDate,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderQuery {
    pub text: String,
    /// Needed by readers that evaluate structure, such as the mock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ast: Option<QueryAst>,
}

/// One reader call: a query plus a slice of one patient's evidence.
pub struct ReadRequest<'a> {
    pub query: &'a ReaderQuery,
    pub chunks: &'a [ContextChunk<'a>],
    pub reprompt: bool,
}

impl ReadRequest<'_> {
    /// `(system, user)` messages rendered from the fixed template.
    pub fn messages(&self) -> (String, String) {
        let excerpts = self
            .chunks
            .iter()
            .enumerate()
            .map(|(i, c)| format!("[{}] ({}, {}) {}", i + 1, c.chunk.doc_id, c.authored_at, c.chunk.text))
            .collect::<Vec<_>>()
            .join("\n");
        let body = PROMPT_TEMPLATE
            .replace("{query}", &self.query.text)
            .replace("{excerpts}", &excerpts);
        let (system, user) = body
            .split_once("USER:\n")
            .expect("prompt template has a USER section");
        let system = system.trim_start_matches("SYSTEM:\n").trim().to_string();
        let mut user = user.trim().to_string();
        if self.reprompt {
            user.push_str("\n\n");
            user.push_str(REPROMPT);
        }
        (system, user)
    }
}

/// Yes/no judge over a single patient's evidence.
pub trait Reader: Sync {
    fn name(&self) -> String;

    fn needs_ast(&self) -> bool {
        false
    }

    /// Raw reply text.
    fn answer(&self, request: &ReadRequest<'_>) -> Result<String, ReaderError>;
}

/// Reads YES/NO off the start of a reply.
pub fn normalize_answer(raw: &str) -> Option<bool> {
    let word: String = raw
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_uppercase();
    match word.as_str() {
        "YES" => Some(true),
        "NO" => Some(false),
        _ => None,
    }
}

/// Offline stand-in for an LLM: runs the rule extractor over only the
/// supplied chunks, consolidates them into a throwaway patient model and
/// evaluates the query on it.
pub struct MockReader {
    ontology: Arc<Ontology>,
    extractor: ExtractorConfig,
    consolidation: ConsolidationConfig,
}

impl MockReader {
    pub fn new(ontology: Arc<Ontology>, extractor: ExtractorConfig, consolidation: ConsolidationConfig) -> Self {
        Self {
            ontology,
            extractor,
            consolidation,
        }
    }

    pub fn decide(&self, ast: &QueryAst, chunks: &[ContextChunk<'_>]) -> bool {
        let Some(first) = chunks.first() else {
            return false;
        };
        let extractor = RuleExtractor::new(&self.ontology, self.extractor.clone());
        let mut facts: Vec<_> = chunks
            .iter()
            .flat_map(|c| extractor.extract_text(&c.chunk.text, &c.chunk.doc_id, c.authored_at))
            .collect();
        sort_facts(&mut facts);
        let model = consolidate(&first.chunk.patient_id, &facts, &self.ontology, &self.consolidation)
            .expect("extracted facts are sorted and use ontology concepts");
        let kb = build_kb_shared(vec![model], Arc::clone(&self.ontology)).expect("single patient");
        !execute_indices(ast, &kb).is_empty()
    }
}

impl Reader for MockReader {
    fn name(&self) -> String {
        "mock".into()
    }

    fn needs_ast(&self) -> bool {
        true
    }

    fn answer(&self, request: &ReadRequest<'_>) -> Result<String, ReaderError> {
        let ast = request.query.ast.as_ref().ok_or(ReaderError::MissingQueryAst)?;
        Ok(if self.decide(ast, request.chunks) { "YES" } else { "NO" }.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReaderConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_top_p() -> f64 {
    0.95
}

/// OpenAI-style chat-completions reader.
pub struct ChatReader {
    config: ChatReaderConfig,
    client: JsonClient,
}

impl ChatReader {
    pub fn new(config: ChatReaderConfig) -> Self {
        let client = JsonClient::new(&config.endpoint, config.auth_env.clone(), config.retry.clone());
        Self { config, client }
    }

    pub fn retries(&self) -> u64 {
        self.client.retries()
    }
}

impl Reader for ChatReader {
    fn name(&self) -> String {
        format!("chat:{}", self.config.model)
    }

    fn answer(&self, request: &ReadRequest<'_>) -> Result<String, ReaderError> {
        let (system, user) = request.messages();
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let resp = self.client.post(&body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| ReaderError::BadResponse("missing choices[0].message.content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answers_normalize() {
        assert_eq!(normalize_answer("YES"), Some(true));
        assert_eq!(normalize_answer(" no."), Some(false));
        assert_eq!(normalize_answer("**Yes**, because"), Some(true));
        assert_eq!(normalize_answer("Nope"), None);
        assert_eq!(normalize_answer(""), None);
    }

    #[test]
    fn prompt_has_both_sections() {
        let chunk = Chunk {
            chunk_id: "d1:00000".into(),
            patient_id: "p".into(),
            doc_id: "d1".into(),
            token_start: 0,
            token_end: 2,
            text: "breast cancer".into(),
        };
        let ctx = [ContextChunk {
            chunk: &chunk,
            authored_at: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            score: 1.0,
        }];
        let q = ReaderQuery {
            text: "patients with breast cancer".into(),
            ast: None,
        };
        let (sys, user) = ReadRequest {
            query: &q,
            chunks: &ctx,
            reprompt: true,
        }
        .messages();
        assert!(sys.contains("YES or NO"));
        assert!(user.contains("Query: patients with breast cancer"));
        assert!(user.contains("[1] (d1, 2020-01-01) breast cancer"));
        assert!(user.ends_with(REPROMPT));
        assert_eq!(prompt_hash().len(), 16);
    }
}
