// Scripted mock backend, request budgets, and the HTTP client when
// CLARA_LLM_ENDPOINT / CLARA_LLM_MODEL are set.

use std::error::Error;

use clara::config::Config;
use clara::llm::{complete, Budgeted, ChatMessage, CompletionRequest, LlmError, MockBackend};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mock = MockBackend::from_json(
        r#"{
            "rules": [
                {"last_user_contains": "cancel", "response": "Cancel Order"},
                {"contains": "refund", "response": "Refund Status"}
            ],
            "default": {"response": "Track Package"}
        }"#,
    )?;
    let ask = |q: &str| CompletionRequest::greedy(vec![ChatMessage::user(q), ChatMessage::assistant("The intent title is ")]);
    for q in ["please cancel it", "where is my refund", "hello"] {
        println!("{q:<20} -> {}", complete(&ask(q), &mock)?);
    }

    let capped = Budgeted::new(mock, 2);
    for i in 0..3 {
        match complete(&ask("cancel"), &capped) {
            Ok(r) => println!("request {i}: {r}"),
            Err(LlmError::BudgetExceeded { cap }) => println!("request {i}: budget of {cap} exhausted"),
            Err(e) => return Err(e.into()),
        }
    }

    let mut cfg = Config::from_env();
    if cfg.llm.endpoint.is_some() && cfg.llm.model.is_some() {
        cfg.llm.provider = clara::config::LlmProvider::Openai;
        let live = cfg.backend(&clara::Taxonomy::empty(), &[])?;
        match complete(&ask("I want to cancel my order"), live.as_ref()) {
            Ok(r) => println!("live backend: {r}"),
            Err(e) => println!("live backend error: {e}"),
        }
    } else {
        println!("live backend skipped: set CLARA_LLM_ENDPOINT and CLARA_LLM_MODEL");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
