//! In-context classification prompts.
//!
//! Four template styles share one skeleton: a system preamble, the
//! retrieved demonstrations, the session turns as user messages, and a
//! trailing assistant message holding the generation prefix
//! [`ANSWER_PREFIX`] with no label after it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::Session;
use crate::llm::{ChatMessage, Role};
use crate::retrieval::Demonstration;
use crate::seed;
use crate::taxonomy::Taxonomy;

pub const SYSTEM_PREAMBLE: &str = "A chat between a curious user and an artificial intelligence assistant. \
The assistant provides helpful, detailed, and polite responses to the user's questions.";

pub const ANSWER_PREFIX: &str = "The intent title is ";

const FORMATTED_INSTRUCTION: &str = "Classify the intent of the user's last message in the conversation below. \
Answer with exactly one label from the candidate list.";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("at least one demonstration is required")]
    NoDemonstrations,
    #[error("session has no turns")]
    EmptySession,
    #[error("demonstration intent {0:?} is not in the taxonomy")]
    UnknownIntent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    Base,
    Symbolic,
    Prepend,
    Formatted,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 4] = [
        TemplateKind::Base,
        TemplateKind::Symbolic,
        TemplateKind::Prepend,
        TemplateKind::Formatted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::Base => "base",
            TemplateKind::Symbolic => "symbolic",
            TemplateKind::Prepend => "prepend",
            TemplateKind::Formatted => "formatted",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown template {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderingKind {
    Ascending,
    Descending,
    Random,
}

impl fmt::Display for OrderingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrderingKind::Ascending => "ascending",
            OrderingKind::Descending => "descending",
            OrderingKind::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ordering {
    pub kind: OrderingKind,
    /// Only used by [`OrderingKind::Random`].
    pub seed: u64,
}

impl Ordering {
    pub const ASCENDING: Ordering = Ordering {
        kind: OrderingKind::Ascending,
        seed: 0,
    };
    pub const DESCENDING: Ordering = Ordering {
        kind: OrderingKind::Descending,
        seed: 0,
    };

    pub fn random(seed: u64) -> Self {
        Ordering {
            kind: OrderingKind::Random,
            seed,
        }
    }
}

/// Reorders demonstrations by score. Ties keep their original relative order
/// in both directions.
pub fn order_demos(demos: &[Demonstration], ordering: Ordering) -> Vec<Demonstration> {
    let mut idx: Vec<usize> = (0..demos.len()).collect();
    match ordering.kind {
        OrderingKind::Ascending => idx.sort_by(|&a, &b| demos[a].score.total_cmp(&demos[b].score).then(a.cmp(&b))),
        OrderingKind::Descending => idx.sort_by(|&a, &b| demos[b].score.total_cmp(&demos[a].score).then(a.cmp(&b))),
        OrderingKind::Random => idx.shuffle(&mut seed::rng(ordering.seed)),
    }
    idx.into_iter().map(|i| demos[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub messages: Vec<ChatMessage>,
    /// Flat transcript, one `ROLE: content` block per message.
    pub text: String,
    /// Surface label -> intent id for every label shown in the prompt.
    pub label_map: BTreeMap<String, String>,
}

fn transcript(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| format!("{}: {}", m.role.as_upper(), m.content))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders an in-context prompt. Demonstrations are reordered with
/// `ordering` first; the session's gold intent is never read.
pub fn render(
    template: TemplateKind,
    demos: &[Demonstration],
    session: &Session,
    ordering: Ordering,
    taxonomy: &Taxonomy,
) -> Result<RenderedPrompt, PromptError> {
    if demos.is_empty() {
        return Err(PromptError::NoDemonstrations);
    }
    if session.turns.is_empty() {
        return Err(PromptError::EmptySession);
    }
    let ordered = order_demos(demos, ordering);

    // Distinct labels in demonstration order.
    let mut labels: Vec<(String, String)> = Vec::new();
    let mut demo_label = Vec::with_capacity(ordered.len());
    for d in &ordered {
        let intent = taxonomy
            .get(&d.example.intent_id)
            .ok_or_else(|| PromptError::UnknownIntent(d.example.intent_id.clone()))?;
        let pos = match labels.iter().position(|(id, _)| *id == intent.id) {
            Some(p) => p,
            None => {
                labels.push((intent.id.clone(), intent.surface_label().to_string()));
                labels.len() - 1
            }
        };
        demo_label.push(pos);
    }

    let mut label_map = BTreeMap::new();
    let surface: Vec<String> = labels
        .iter()
        .enumerate()
        .map(|(i, (id, label))| {
            let token = format!("L{}", i + 1);
            match template {
                TemplateKind::Base | TemplateKind::Formatted => {
                    label_map.insert(label.clone(), id.clone());
                    label.clone()
                }
                TemplateKind::Symbolic => {
                    label_map.insert(token.clone(), id.clone());
                    token
                }
                TemplateKind::Prepend => {
                    let full = format!("{token}: {label}");
                    label_map.insert(token, id.clone());
                    label_map.insert(full.clone(), id.clone());
                    full
                }
            }
        })
        .collect();

    let mut messages = Vec::new();
    if template == TemplateKind::Formatted {
        let mut system = format!("{SYSTEM_PREAMBLE}\n\n{FORMATTED_INSTRUCTION}\n\n### Examples\n");
        for (n, (d, &l)) in ordered.iter().zip(&demo_label).enumerate() {
            system.push_str(&format!("{}. Query: {}\n   Label: {}\n", n + 1, d.example.query, surface[l]));
        }
        system.push_str("\n### Candidate labels\n");
        for s in &surface {
            system.push_str(&format!("- {s}\n"));
        }
        system.push_str("\n### Conversation");
        messages.push(ChatMessage::system(system));
    } else {
        messages.push(ChatMessage::system(SYSTEM_PREAMBLE));
        for (d, &l) in ordered.iter().zip(&demo_label) {
            messages.push(ChatMessage::user(d.example.query.clone()));
            messages.push(ChatMessage::assistant(format!("{ANSWER_PREFIX}{}.", surface[l])));
        }
    }
    for turn in &session.turns {
        messages.push(ChatMessage::user(turn.clone()));
    }
    messages.push(ChatMessage::assistant(ANSWER_PREFIX));

    Ok(RenderedPrompt {
        text: transcript(&messages),
        messages,
        label_map,
    })
}

/// The session turns of a rendered prompt: the user messages between the
/// last demonstration and the trailing answer prefix.
pub fn session_turns(messages: &[ChatMessage]) -> Vec<&str> {
    let body = match messages.last() {
        Some(m) if m.role == Role::Assistant => &messages[..messages.len() - 1],
        _ => messages,
    };
    let start = body.iter().rposition(|m| m.role != Role::User).map_or(0, |i| i + 1);
    body[start..].iter().map(|m| m.content.as_str()).collect()
}

/// Demonstration queries of a rendered prompt, in prompt order. Understands
/// both the chat-pair layout and the formatted example block.
pub fn demo_queries(messages: &[ChatMessage]) -> Vec<&str> {
    let mut out = Vec::new();
    for w in messages.windows(2) {
        if w[0].role == Role::User && w[1].role == Role::Assistant && w[1].content.len() > ANSWER_PREFIX.len() {
            out.push(w[0].content.as_str());
        }
    }
    if out.is_empty() {
        if let Some(sys) = messages.iter().find(|m| m.role == Role::System) {
            out.extend(sys.content.lines().filter_map(|line| {
                let (num, rest) = line.split_once(". Query: ")?;
                num.chars().all(|c| c.is_ascii_digit()).then_some(rest)
            }));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabeledExample;
    use crate::taxonomy::Intent;

    fn taxonomy() -> Taxonomy {
        let mk = |id: &str, leaf: &str, label: &str| Intent {
            id: id.into(),
            title: label.into(),
            category_path: vec!["Shop".into(), "Order".into(), leaf.into()],
            rep_query: format!("Request to {label}"),
            compressed_label: Some(label.into()),
            language: "en".into(),
        };
        Taxonomy::from_intents(vec![
            mk("I1", "Cancel", "Cancel Order"),
            mk("I2", "Track", "Track Package"),
            mk("I3", "Refund", "Refund Status"),
        ])
        .unwrap()
    }

    fn demo(q: &str, intent: &str, score: f64) -> Demonstration {
        Demonstration {
            example: LabeledExample {
                query: q.into(),
                intent_id: intent.into(),
                language: "en".into(),
            },
            score,
        }
    }

    fn demos() -> Vec<Demonstration> {
        vec![
            demo("cancel it please", "I1", 0.9),
            demo("where is my parcel", "I2", 0.1),
            demo("refund status?", "I3", 0.5),
        ]
    }

    fn queries(v: &[Demonstration]) -> Vec<&str> {
        v.iter().map(|d| d.example.query.as_str()).collect()
    }

    #[test]
    fn ascending_and_descending() {
        let d = demos();
        let asc = order_demos(&d, Ordering::ASCENDING);
        assert_eq!(queries(&asc), queries(&[d[1].clone(), d[2].clone(), d[0].clone()]));
        let desc = order_demos(&d, Ordering::DESCENDING);
        assert_eq!(queries(&desc), queries(&[d[0].clone(), d[2].clone(), d[1].clone()]));
    }

    #[test]
    fn ties_keep_original_order() {
        let d = vec![demo("a", "I1", 0.5), demo("b", "I2", 0.5), demo("c", "I3", 0.7)];
        assert_eq!(queries(&order_demos(&d, Ordering::ASCENDING)), ["a", "b", "c"]);
        assert_eq!(queries(&order_demos(&d, Ordering::DESCENDING)), ["c", "a", "b"]);
    }

    #[test]
    fn single_demo_all_orderings_equal() {
        let d = vec![demo("a", "I1", 0.3)];
        for o in [Ordering::ASCENDING, Ordering::DESCENDING, Ordering::random(5)] {
            assert_eq!(order_demos(&d, o), d);
        }
    }

    #[test]
    fn random_ordering_is_seeded() {
        let d: Vec<_> = (0..10).map(|i| demo(&format!("q{i}"), "I1", i as f64 / 10.0)).collect();
        assert_eq!(order_demos(&d, Ordering::random(42)), order_demos(&d, Ordering::random(42)));
    }

    #[test]
    fn base_prompt_ends_with_prefix() {
        let t = taxonomy();
        let s = Session::new("s1", vec!["i want to cancel".into()]);
        let p = render(TemplateKind::Base, &[demo("cancel order", "I1", 1.0)], &s, Ordering::DESCENDING, &t).unwrap();
        assert!(p.text.ends_with("The intent title is "));
        assert!(p.text.starts_with("SYSTEM: A chat between a curious user"));
        assert!(p.text.contains("USER: cancel order\nASSISTANT: The intent title is Cancel Order."));
        assert_eq!(p.label_map.get("Cancel Order").map(String::as_str), Some("I1"));
        assert_eq!(p.messages.last().unwrap().content, ANSWER_PREFIX);
    }

    #[test]
    fn symbolic_label_map() {
        let t = taxonomy();
        let s = Session::new("s1", vec!["hello".into()]);
        let p = render(TemplateKind::Symbolic, &demos(), &s, Ordering::DESCENDING, &t).unwrap();
        assert_eq!(p.label_map.keys().collect::<Vec<_>>(), ["L1", "L2", "L3"]);
        // descending: I1 first
        assert_eq!(p.label_map["L1"], "I1");
        assert!(!p.text.contains("Cancel Order"));
        assert!(p.text.contains("The intent title is L2."));
    }

    #[test]
    fn prepend_keeps_semantic_label() {
        let t = taxonomy();
        let s = Session::new("s1", vec!["hello".into()]);
        let p = render(TemplateKind::Prepend, &demos(), &s, Ordering::DESCENDING, &t).unwrap();
        assert!(p.text.contains("The intent title is L1: Cancel Order."));
        assert_eq!(p.label_map["L1"], "I1");
        assert_eq!(p.label_map["L1: Cancel Order"], "I1");
    }

    #[test]
    fn formatted_layout() {
        let t = taxonomy();
        let s = Session::new("s1", vec!["first".into(), "second".into()]);
        let p = render(TemplateKind::Formatted, &demos(), &s, Ordering::ASCENDING, &t).unwrap();
        assert_eq!(p.messages.len(), 4);
        assert!(p.messages[0].content.contains("### Candidate labels\n- Track Package\n"));
        assert_eq!(demo_queries(&p.messages), ["where is my parcel", "refund status?", "cancel it please"]);
        assert_eq!(session_turns(&p.messages), ["first", "second"]);
        assert!(p.text.ends_with(ANSWER_PREFIX));
    }

    #[test]
    fn chat_layout_parsing() {
        let t = taxonomy();
        let s = Session::new("s1", vec!["first".into(), "second".into()]);
        let p = render(TemplateKind::Base, &demos(), &s, Ordering::DESCENDING, &t).unwrap();
        assert_eq!(demo_queries(&p.messages), ["cancel it please", "refund status?", "where is my parcel"]);
        assert_eq!(session_turns(&p.messages), ["first", "second"]);
    }

    #[test]
    fn errors() {
        let t = taxonomy();
        let s = Session::new("s1", vec!["x".into()]);
        assert_eq!(
            render(TemplateKind::Base, &[], &s, Ordering::ASCENDING, &t),
            Err(PromptError::NoDemonstrations)
        );
        let empty = Session::new("s2", vec![]);
        assert_eq!(
            render(TemplateKind::Base, &demos(), &empty, Ordering::ASCENDING, &t),
            Err(PromptError::EmptySession)
        );
    }

    #[test]
    fn template_names_round_trip() {
        for k in TemplateKind::ALL {
            assert_eq!(k.as_str().parse::<TemplateKind>().unwrap(), k);
        }
        assert!("fancy".parse::<TemplateKind>().is_err());
    }
}
