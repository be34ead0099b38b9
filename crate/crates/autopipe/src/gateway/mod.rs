//! Model-call abstraction: one interface over live chat-completion endpoints
//! and the deterministic scripted playbook, with prompt-budget enforcement,
//! a global call counter, and a cost ledger.

pub mod budget;
pub mod playbook;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::case::{Actor, EventSink};

pub use budget::{
    cap_traceback, compose, estimate_tokens, project_columns, tokenize, BudgetWarning,
    ComposeResult, PromptBlock, CRITICAL_PRIORITY, PROJECTION_CAP,
};
pub use playbook::{Playbook, PlaybookEntry};

pub const DEFAULT_TOKEN_BUDGET: usize = 16_000;
pub const DEFAULT_RETRIES: u32 = 2;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("playbook error: {detail}")]
    Playbook { detail: String },
    #[error("playbook exhausted for call kind {kind} (occurrence {occurrence})")]
    PlaybookExhausted { kind: String, occurrence: usize },
    #[error("endpoint failure for call kind {kind} after {attempts} attempts: {detail}")]
    Endpoint {
        kind: String,
        attempts: u32,
        detail: String,
    },
    #[error("missing API key environment variable {0}")]
    MissingKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    Planning,
    Coding,
}

/// Per-role model configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub endpoint: String,
    pub model: String,
    pub token_budget: usize,
    pub temperature: f64,
    pub role: ModelRole,
    /// Environment variable holding the provider credential.
    pub api_key_env: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "scripted".into(),
            token_budget: DEFAULT_TOKEN_BUDGET,
            temperature: 0.0,
            role: ModelRole::Planning,
            api_key_env: "OPENAI_API_KEY".into(),
        }
    }
}

/// Token and cost accounting for one call.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated_cost: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UsageTotals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated_cost: f64,
}

/// Per-1K-token prices keyed by model name.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Price {
    pub prompt_per_1k: f64,
    pub completion_per_1k: f64,
}

pub enum Backend {
    Scripted(Playbook),
    Live,
}

pub struct CallResult {
    pub text: String,
    pub usage: Usage,
}

pub struct Gateway {
    backend: Backend,
    call_count: AtomicU64,
    totals: Mutex<UsageTotals>,
    price_table: BTreeMap<String, Price>,
    retries: u32,
}

impl Gateway {
    pub fn scripted(playbook: Playbook) -> Gateway {
        Gateway {
            backend: Backend::Scripted(playbook),
            call_count: AtomicU64::new(0),
            totals: Mutex::new(UsageTotals::default()),
            price_table: BTreeMap::new(),
            retries: DEFAULT_RETRIES,
        }
    }

    pub fn live() -> Gateway {
        Gateway {
            backend: Backend::Live,
            call_count: AtomicU64::new(0),
            totals: Mutex::new(UsageTotals::default()),
            price_table: BTreeMap::new(),
            retries: DEFAULT_RETRIES,
        }
    }

    pub fn with_price_table(mut self, table: BTreeMap<String, Price>) -> Gateway {
        self.price_table = table;
        self
    }

    pub fn with_retries(mut self, retries: u32) -> Gateway {
        self.retries = retries;
        self
    }

    /// Global call counter; the monitor's zero-call assertion reads this.
    pub fn call_count(&self) -> u64 {
        self.call_count.load(Ordering::SeqCst)
    }

    pub fn totals(&self) -> UsageTotals {
        *self.totals.lock().expect("usage lock poisoned")
    }

    /// Issue one model call: compose the blocks under the config's budget,
    /// dispatch to the backend, account usage, and append a case event.
    pub fn complete(
        &self,
        config: &ModelConfig,
        blocks: &[PromptBlock],
        call_kind: &str,
        tag: Option<&str>,
        sink: &dyn EventSink,
    ) -> Result<CallResult, GatewayError> {
        let composed = compose(blocks, config.token_budget);
        if let Some(warning) = composed.warning {
            sink.emit(
                Actor::Orchestrator,
                "prompt_budget",
                serde_json::json!({
                    "call_kind": call_kind,
                    "warning": warning,
                    "token_estimate": composed.token_estimate,
                    "budget": config.token_budget,
                    "dropped": composed.dropped,
                }),
            );
        }
        self.call_count.fetch_add(1, Ordering::SeqCst);
        let text = match &self.backend {
            Backend::Scripted(playbook) => playbook.next(call_kind, tag)?,
            Backend::Live => self.live_call(config, &composed.prompt, call_kind)?,
        };
        let usage = self.account(config, &composed.prompt, &text);
        sink.emit(
            Actor::Orchestrator,
            "model_call",
            serde_json::json!({
                "call_kind": call_kind,
                "tag": tag,
                "model": config.model,
                "role": config.role,
                "prompt": composed.prompt,
                "response": text,
                "prompt_tokens": usage.prompt_tokens,
                "completion_tokens": usage.completion_tokens,
            }),
        );
        Ok(CallResult { text, usage })
    }

    fn account(&self, config: &ModelConfig, prompt: &str, response: &str) -> Usage {
        let prompt_tokens = estimate_tokens(prompt) as u64;
        let completion_tokens = estimate_tokens(response) as u64;
        let price = self
            .price_table
            .get(&config.model)
            .copied()
            .unwrap_or_default();
        let estimated_cost = prompt_tokens as f64 / 1000.0 * price.prompt_per_1k
            + completion_tokens as f64 / 1000.0 * price.completion_per_1k;
        let usage = Usage {
            prompt_tokens,
            completion_tokens,
            estimated_cost,
        };
        let mut totals = self.totals.lock().expect("usage lock poisoned");
        totals.calls += 1;
        totals.prompt_tokens += prompt_tokens;
        totals.completion_tokens += completion_tokens;
        totals.estimated_cost += estimated_cost;
        usage
    }

    /// OpenAI-style chat completion with bounded retries and backoff.
    fn live_call(
        &self,
        config: &ModelConfig,
        prompt: &str,
        call_kind: &str,
    ) -> Result<String, GatewayError> {
        let key = std::env::var(&config.api_key_env)
            .map_err(|_| GatewayError::MissingKey(config.api_key_env.clone()))?;
        let body = serde_json::json!({
            "model": config.model,
            "temperature": config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut last_err = String::new();
        let attempts = self.retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(std::time::Duration::from_millis(250 << attempt));
            }
            let sent = ureq::post(&config.endpoint)
                .header("Authorization", &format!("Bearer {key}"))
                .header("Content-Type", "application/json")
                .send_json(&body);
            match sent {
                Ok(mut resp) => {
                    let parsed: Result<serde_json::Value, _> = resp.body_mut().read_json();
                    match parsed {
                        Ok(value) => {
                            if let Some(text) = value
                                .pointer("/choices/0/message/content")
                                .and_then(|v| v.as_str())
                            {
                                return Ok(text.to_string());
                            }
                            last_err = format!("unexpected response shape: {value}");
                        }
                        Err(e) => last_err = format!("invalid JSON response: {e}"),
                    }
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(GatewayError::Endpoint {
            kind: call_kind.to_string(),
            attempts,
            detail: last_err,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::case::NullSink;

    fn scripted(entries: Vec<(&str, &str)>) -> Gateway {
        let entries = entries
            .into_iter()
            .map(|(kind, response)| PlaybookEntry {
                kind: kind.into(),
                tag: None,
                response: response.into(),
            })
            .collect();
        Gateway::scripted(Playbook::new(entries))
    }

    #[test]
    fn scripted_playback_returns_exact_text() {
        let gw = scripted(vec![("plan", "the plan")]);
        let cfg = ModelConfig::default();
        let blocks = [PromptBlock::new("task", 0, "do the thing")];
        let out = gw.complete(&cfg, &blocks, "plan", None, &NullSink).unwrap();
        assert_eq!(out.text, "the plan");
        assert_eq!(gw.call_count(), 1);
    }

    #[test]
    fn two_identical_runs_have_identical_usage() {
        let run = || {
            let gw = scripted(vec![("plan", "p"), ("codegen", "c")]);
            let cfg = ModelConfig::default();
            let blocks = [PromptBlock::new("task", 0, "goal text")];
            gw.complete(&cfg, &blocks, "plan", None, &NullSink).unwrap();
            gw.complete(&cfg, &blocks, "codegen", None, &NullSink).unwrap();
            let t = gw.totals();
            (t.calls, t.prompt_tokens, t.completion_tokens)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn exhausted_playbook_is_an_error_not_a_repeat() {
        let gw = scripted(vec![("plan", "only one")]);
        let cfg = ModelConfig::default();
        let blocks = [PromptBlock::new("task", 0, "x")];
        gw.complete(&cfg, &blocks, "plan", None, &NullSink).unwrap();
        let err = gw.complete(&cfg, &blocks, "plan", None, &NullSink);
        assert!(matches!(err, Err(GatewayError::PlaybookExhausted { .. })));
    }

    #[test]
    fn cost_accounting_uses_price_table() {
        let mut prices = BTreeMap::new();
        prices.insert(
            "m".to_string(),
            Price {
                prompt_per_1k: 1.0,
                completion_per_1k: 2.0,
            },
        );
        let gw = scripted(vec![("plan", "zzzzzzzz")]).with_price_table(prices); // 2 tokens
        let cfg = ModelConfig {
            model: "m".into(),
            ..Default::default()
        };
        let blocks = [PromptBlock::new("task", 0, "xxxx")]; // 1 token
        let out = gw.complete(&cfg, &blocks, "plan", None, &NullSink).unwrap();
        assert!((out.usage.estimated_cost - (0.001 + 0.004)).abs() < 1e-12);
    }
}
