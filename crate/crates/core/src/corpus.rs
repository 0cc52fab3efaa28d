//! Single-turn examples, multi-turn sessions and chat logs.
//!
//! Chat logs provide intent-transition statistics; those drive
//! [`synthesize_sessions`], which stitches single-turn examples into
//! multi-turn sessions.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};
use crate::seed;
use crate::taxonomy::Taxonomy;

/// Default cap on synthesized session length.
pub const DEFAULT_MAX_LEN: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("unknown intent id {0:?}")]
    UnknownIntent(String),
    #[error("chat log is empty or contains an empty sequence")]
    EmptyLog,
    #[error("intent {0:?} has no single-turn examples to draw from")]
    UncoveredIntent(String),
    #[error("requested {requested} validation samples but only {available} available")]
    InsufficientData { requested: usize, available: usize },
    #[error("invalid session {id:?}: {reason}")]
    InvalidSession { id: String, reason: String },
    #[error("invalid example at index {index}: {reason}")]
    InvalidExample { index: usize, reason: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledExample {
    pub query: String,
    pub intent_id: String,
    #[serde(rename = "lang")]
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub turns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_intents: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_intent: Option<String>,
}

impl Session {
    pub fn new(id: impl Into<String>, turns: Vec<String>) -> Self {
        Session {
            id: id.into(),
            turns,
            history_intents: None,
            gold_intent: None,
        }
    }

    pub fn with_gold(mut self, gold: impl Into<String>) -> Self {
        self.gold_intent = Some(gold.into());
        self
    }

    /// The query being classified (`q_n`).
    pub fn last_turn(&self) -> Option<&str> {
        self.turns.last().map(String::as_str)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |reason: &str| CorpusError::InvalidSession {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.turns.is_empty() {
            return Err(bad("session has no turns"));
        }
        if let Some(h) = &self.history_intents {
            if h.len() + 1 != self.turns.len() {
                return Err(bad("history_intents must have one entry per earlier turn"));
            }
        }
        Ok(())
    }
}

/// One line of a chat-log file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatLog {
    pub session_id: String,
    pub intent_sequence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub states: Vec<String>,
    pub start_dist: Vec<f64>,
    /// Row-stochastic: `trans[i][j] = P(states[j] | states[i])`.
    pub trans: Vec<Vec<f64>>,
    /// Session length -> probability.
    pub length_dist: BTreeMap<usize, f64>,
}

impl TransitionModel {
    pub fn state_index(&self, id: &str) -> Option<usize> {
        self.states.iter().position(|s| s == id)
    }

    /// Checks the stochasticity invariants to within `tol`.
    pub fn is_stochastic(&self, tol: f64) -> bool {
        let ok = |row: &[f64]| {
            row.iter().all(|&p| p >= 0.0 && p.is_finite()) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
        };
        let lens: Vec<f64> = self.length_dist.values().copied().collect();
        ok(&self.start_dist) && self.trans.iter().all(|r| ok(r)) && (lens.is_empty() || ok(&lens))
    }
}

fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding leaves `acc` marginally below 1; fall back to the last
    // state with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Estimates start, transition and length distributions from intent
/// sequences with add-`smoothing` counts. Rows without outgoing mass become
/// uniform. Lengths are clamped to `2..=max_len`.
pub fn estimate_transitions(
    logs: &[Vec<String>],
    smoothing: f64,
    max_len: usize,
    taxonomy: Option<&Taxonomy>,
) -> Result<TransitionModel, CorpusError> {
    if logs.is_empty() || logs.iter().any(Vec::is_empty) {
        return Err(CorpusError::EmptyLog);
    }
    assert!(smoothing >= 0.0 && smoothing.is_finite(), "smoothing must be non-negative");
    if let Some(t) = taxonomy {
        if let Some(bad) = logs.iter().flatten().find(|id| !t.contains(id)) {
            return Err(CorpusError::UnknownIntent(bad.clone()));
        }
    }

    let mut states: Vec<String> = logs.iter().flatten().cloned().collect();
    states.sort();
    states.dedup();
    let index: HashMap<&str, usize> = states.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n = states.len();

    let mut start = vec![0.0; n];
    let mut counts = vec![vec![0.0; n]; n];
    let mut lengths: BTreeMap<usize, f64> = BTreeMap::new();
    let max_len = max_len.max(2);
    for seq in logs {
        start[index[seq[0].as_str()]] += 1.0;
        for w in seq.windows(2) {
            counts[index[w[0].as_str()]][index[w[1].as_str()]] += 1.0;
        }
        if seq.len() >= 2 {
            *lengths.entry(seq.len().min(max_len)).or_default() += 1.0;
        }
    }

    let normalize = |row: &[f64]| -> Vec<f64> {
        let total: f64 = row.iter().map(|c| c + smoothing).sum();
        if total > 0.0 {
            row.iter().map(|c| (c + smoothing) / total).collect()
        } else {
            vec![1.0 / row.len() as f64; row.len()]
        }
    };
    let start_dist = normalize(&start);
    let trans = counts.iter().map(|r| normalize(r)).collect();

    let total_len: f64 = lengths.values().sum();
    let length_dist = if total_len > 0.0 {
        lengths.into_iter().map(|(k, c)| (k, c / total_len)).collect()
    } else {
        BTreeMap::from([(2, 1.0)])
    };

    Ok(TransitionModel {
        states,
        start_dist,
        trans,
        length_dist,
    })
}

/// Builds `n` sessions by walking the transition model and drawing one
/// single-turn example per visited intent. Each session gets its own RNG
/// stream derived from `(seed, index)`.
pub fn synthesize_sessions(
    corpus: &[LabeledExample],
    tm: &TransitionModel,
    n: usize,
    seed: u64,
) -> Result<Vec<Session>, CorpusError> {
    let mut by_intent: HashMap<&str, Vec<&LabeledExample>> = HashMap::new();
    for ex in corpus {
        by_intent.entry(ex.intent_id.as_str()).or_default().push(ex);
    }
    let pools: Vec<&Vec<&LabeledExample>> = tm
        .states
        .iter()
        .map(|s| by_intent.get(s.as_str()).ok_or_else(|| CorpusError::UncoveredIntent(s.clone())))
        .collect::<Result<_, _>>()?;

    let lengths: Vec<usize> = tm.length_dist.keys().copied().collect();
    let length_probs: Vec<f64> = tm.length_dist.values().copied().collect();

    let sessions = (0..n)
        .map(|i| {
            let id = format!("syn-{i:06}");
            let mut rng = seed::rng_for(seed, &id);
            let len = if lengths.is_empty() {
                2
            } else {
                lengths[sample_index(&mut rng, &length_probs)]
            };
            let mut path = Vec::with_capacity(len);
            let mut cur = sample_index(&mut rng, &tm.start_dist);
            path.push(cur);
            while path.len() < len {
                cur = sample_index(&mut rng, &tm.trans[cur]);
                path.push(cur);
            }
            let turns = path
                .iter()
                .map(|&s| pools[s].choose(&mut rng).expect("non-empty pool").query.clone())
                .collect();
            let ids: Vec<String> = path.iter().map(|&s| tm.states[s].clone()).collect();
            Session {
                id,
                turns,
                history_intents: Some(ids[..ids.len() - 1].to_vec()),
                gold_intent: ids.last().cloned(),
            }
        })
        .collect();
    Ok(sessions)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    pub lang: String,
    pub intents: usize,
    pub train: usize,
    pub test: usize,
}

/// Per-language counts of intents, single-turn training examples and test
/// sessions. A session's language is that of its gold intent (`und` when
/// unknown).
pub fn corpus_stats(examples: &[LabeledExample], sessions: &[Session], taxonomy: &Taxonomy) -> Vec<StatsRow> {
    let mut rows: BTreeMap<String, StatsRow> = BTreeMap::new();
    fn row<'a>(rows: &'a mut BTreeMap<String, StatsRow>, lang: &str) -> &'a mut StatsRow {
        rows.entry(lang.to_string()).or_insert_with(|| StatsRow {
            lang: lang.to_string(),
            intents: 0,
            train: 0,
            test: 0,
        })
    }
    for it in taxonomy.intents() {
        row(&mut rows, &it.language).intents += 1;
    }
    for ex in examples {
        row(&mut rows, &ex.language).train += 1;
    }
    for s in sessions {
        let lang = s
            .gold_intent
            .as_deref()
            .and_then(|g| taxonomy.get(g))
            .map_or("und", |i| i.language.as_str());
        row(&mut rows, lang).test += 1;
    }
    rows.into_values().collect()
}

/// Seeded disjoint split: `k` items go to validation, the rest to training.
/// Both parts keep the input order.
pub fn split_validation<T>(items: Vec<T>, k: usize, seed: u64) -> Result<(Vec<T>, Vec<T>), CorpusError> {
    if k > items.len() {
        return Err(CorpusError::InsufficientData {
            requested: k,
            available: items.len(),
        });
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut seed::rng_for(seed, "split"));
    let mut in_val = vec![false; items.len()];
    for &i in &idx[..k] {
        in_val[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(items.len() - k), Vec::with_capacity(k));
    for (item, v) in items.into_iter().zip(in_val) {
        if v {
            val.push(item);
        } else {
            train.push(item);
        }
    }
    Ok((train, val))
}

pub fn validate_examples(examples: &[LabeledExample], taxonomy: &Taxonomy) -> Result<(), CorpusError> {
    for (index, ex) in examples.iter().enumerate() {
        if ex.query.trim().is_empty() {
            return Err(CorpusError::InvalidExample {
                index,
                reason: "empty query".into(),
            });
        }
        if !taxonomy.contains(&ex.intent_id) {
            return Err(CorpusError::UnknownIntent(ex.intent_id.clone()));
        }
    }
    Ok(())
}

pub fn load_examples(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>, CorpusError> {
    Ok(jsonl::read_file(path)?)
}

pub fn load_sessions(path: impl AsRef<Path>) -> Result<Vec<Session>, CorpusError> {
    let sessions: Vec<Session> = jsonl::read_file(path)?;
    for s in &sessions {
        s.validate()?;
    }
    Ok(sessions)
}

pub fn load_chat_logs(path: impl AsRef<Path>) -> Result<Vec<ChatLog>, CorpusError> {
    Ok(jsonl::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(v: &[&[&str]]) -> Vec<Vec<String>> {
        v.iter().map(|s| s.iter().map(|x| x.to_string()).collect()).collect()
    }

    #[test]
    fn count_ratio_estimate() {
        let tm = estimate_transitions(&seqs(&[&["A", "B"], &["A", "B"], &["A", "C"]]), 0.0, 6, None).unwrap();
        assert_eq!(tm.states, ["A", "B", "C"]);
        assert!((tm.trans[0][1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((tm.trans[0][2] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(tm.start_dist, vec![1.0, 0.0, 0.0]);
        // absorbing B and C fall back to uniform
        assert_eq!(tm.trans[1], vec![1.0 / 3.0; 3]);
        assert_eq!(tm.length_dist, BTreeMap::from([(2, 1.0)]));
        assert!(tm.is_stochastic(1e-9));
    }

    #[test]
    fn single_state_is_uniform() {
        let tm = estimate_transitions(&seqs(&[&["A"]]), 0.0, 6, None).unwrap();
        assert_eq!(tm.trans, vec![vec![1.0]]);
    }

    #[test]
    fn smoothing_spreads_mass() {
        let tm = estimate_transitions(&seqs(&[&["A", "B"]]), 1.0, 6, None).unwrap();
        assert!((tm.trans[0][1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((tm.trans[0][0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_unknown_rejected() {
        assert!(matches!(estimate_transitions(&[], 0.0, 6, None), Err(CorpusError::EmptyLog)));
        assert!(matches!(
            estimate_transitions(&seqs(&[&[]]), 0.0, 6, None),
            Err(CorpusError::EmptyLog)
        ));
        let t = Taxonomy::empty();
        assert!(matches!(
            estimate_transitions(&seqs(&[&["A"]]), 0.0, 6, Some(&t)),
            Err(CorpusError::UnknownIntent(_))
        ));
    }

    #[test]
    fn lengths_are_capped() {
        let long: Vec<&str> = vec!["A"; 10];
        let tm = estimate_transitions(&seqs(&[&long, &["A", "A", "A"]]), 0.0, 6, None).unwrap();
        assert_eq!(tm.length_dist, BTreeMap::from([(3, 0.5), (6, 0.5)]));
    }

    fn ex(q: &str, i: &str) -> LabeledExample {
        LabeledExample {
            query: q.into(),
            intent_id: i.into(),
            language: "en".into(),
        }
    }

    fn forced_chain() -> TransitionModel {
        TransitionModel {
            states: vec!["A".into(), "B".into()],
            start_dist: vec![1.0, 0.0],
            trans: vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            length_dist: BTreeMap::from([(2, 1.0)]),
        }
    }

    #[test]
    fn forced_path_synthesis() {
        let corpus = vec![ex("a1", "A"), ex("a2", "A"), ex("b1", "B")];
        let out = synthesize_sessions(&corpus, &forced_chain(), 50, 3).unwrap();
        assert_eq!(out.len(), 50);
        for s in &out {
            assert_eq!(s.gold_intent.as_deref(), Some("B"));
            assert!(s.turns[0].starts_with('a'));
            assert_eq!(s.turns[1], "b1");
            assert_eq!(s.history_intents.as_deref(), Some(&["A".to_string()][..]));
            s.validate().unwrap();
        }
        assert!(synthesize_sessions(&corpus, &forced_chain(), 0, 3).unwrap().is_empty());
    }

    #[test]
    fn uncovered_intent_rejected() {
        let corpus = vec![ex("a1", "A")];
        assert!(matches!(
            synthesize_sessions(&corpus, &forced_chain(), 1, 0),
            Err(CorpusError::UncoveredIntent(s)) if s == "B"
        ));
    }

    #[test]
    fn synthesis_is_seeded() {
        let corpus: Vec<_> = (0..20).flat_map(|i| [ex(&format!("a{i}"), "A"), ex(&format!("b{i}"), "B")]).collect();
        let tm = TransitionModel {
            trans: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            start_dist: vec![0.5, 0.5],
            ..forced_chain()
        };
        let a = synthesize_sessions(&corpus, &tm, 20, 1).unwrap();
        let b = synthesize_sessions(&corpus, &tm, 20, 1).unwrap();
        let c = synthesize_sessions(&corpus, &tm, 20, 2).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn stats_rows() {
        let t = Taxonomy::empty();
        assert!(corpus_stats(&[], &[], &t).is_empty());
        let exs = vec![ex("a", "A"), ex("b", "B"), LabeledExample { language: "id".into(), ..ex("c", "C") }];
        let rows = corpus_stats(&exs, &[], &t);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows.iter().map(|r| r.train).sum::<usize>(), 3);
    }

    #[test]
    fn split_sizes() {
        let items: Vec<usize> = (0..10).collect();
        let (tr, va) = split_validation(items.clone(), 10, 0).unwrap();
        assert!(tr.is_empty());
        assert_eq!(va, items);
        assert!(matches!(
            split_validation(items.clone(), 11, 0),
            Err(CorpusError::InsufficientData { requested: 11, available: 10 })
        ));
        let (tr, va) = split_validation(items, 3, 9).unwrap();
        assert_eq!((tr.len(), va.len()), (7, 3));
        let mut all: Vec<_> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn session_validation() {
        assert!(Session::new("x", vec![]).validate().is_err());
        let mut s = Session::new("x", vec!["a".into(), "b".into()]);
        s.history_intents = Some(vec![]);
        assert!(s.validate().is_err());
        s.history_intents = Some(vec!["A".into()]);
        assert!(s.validate().is_ok());
    }
}
