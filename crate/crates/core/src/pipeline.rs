//! Consistency-filtered pseudo-labeling.
//!
//! For each unlabeled session the demonstrations are retrieved once, then
//! rendered under three orderings (ascending, descending, seeded random). A
//! session is kept only when all three generations resolve to the same
//! intent.

use std::cmp::Ordering as CmpOrdering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Session;
use crate::llm::{self, Backend, CompletionRequest, LlmError};
use crate::promptgen::{self, Ordering, OrderingKind, PromptError, TemplateKind, ANSWER_PREFIX};
use crate::retrieval::{self, Embedder, RetrievalError, RetrievalIndex};
use crate::seed;
use crate::taxonomy::Taxonomy;

/// Sessions are only aborted en masse above this error share.
pub const MAX_ERROR_SHARE: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("empty generation")]
    EmptyGeneration,
    #[error("taxonomy has no intents to resolve against")]
    EmptyTaxonomy,
    #[error("session {session_id}: retrieval failed: {source}")]
    Retrieval {
        session_id: String,
        #[source]
        source: RetrievalError,
    },
    #[error("session {session_id}, run {run}: prompt failed: {source}")]
    Prompt {
        session_id: String,
        run: usize,
        #[source]
        source: PromptError,
    },
    #[error("session {session_id}, run {run}: completion failed: {source}")]
    Llm {
        session_id: String,
        run: usize,
        #[source]
        source: LlmError,
    },
    #[error("{failed} of {total} sessions failed; aborting (first error: {first})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("could not start worker pool: {0}")]
    Workers(String),
}

/// Ratcliff-Obershelp similarity `2M / (|a| + |b|)` over Unicode scalar
/// values. `M` sums the lengths of matching blocks found by recursively
/// anchoring on the longest common substring (earliest in `a`, then earliest
/// in `b`, on ties). Two empty strings score 1.
pub fn gestalt_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * matched_chars(&a, &b) as f64 / total as f64
}

fn matched_chars(a: &[char], b: &[char]) -> usize {
    let mut stack = vec![(0, a.len(), 0, b.len())];
    let mut total = 0;
    // Dynamic-programming row of match lengths ending at (i, j).
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    while let Some((alo, ahi, blo, bhi)) = stack.pop() {
        if alo >= ahi || blo >= bhi {
            continue;
        }
        let (mut best_i, mut best_j, mut best_k) = (alo, blo, 0);
        prev[blo..=bhi].iter_mut().for_each(|x| *x = 0);
        for i in alo..ahi {
            cur[blo] = 0;
            for j in blo..bhi {
                let k = if a[i] == b[j] { prev[j] + 1 } else { 0 };
                cur[j + 1] = k;
                if k > best_k {
                    best_k = k;
                    best_i = i + 1 - k;
                    best_j = j + 1 - k;
                }
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        if best_k == 0 {
            continue;
        }
        total += best_k;
        stack.push((alo, best_i, blo, best_j));
        stack.push((best_i + best_k, ahi, best_j + best_k, bhi));
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolutionKind {
    Exact,
    Fuzzy,
    Mapped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub intent_id: String,
    pub kind: ResolutionKind,
}

fn clean_generation(generated: &str) -> &str {
    let g = generated.trim();
    let g = g.strip_prefix(ANSWER_PREFIX.trim_end()).map_or(g, str::trim_start);
    let g = g.lines().next().unwrap_or("").trim();
    g.trim_end_matches('.').trim()
}

/// Maps a raw generation onto an intent id: through the prompt's label map,
/// then by case-insensitive exact match (compressed label, then title, then
/// representative query), and finally by best gestalt similarity against the
/// surface labels.
pub fn resolve_label(
    generated: &str,
    taxonomy: &Taxonomy,
    label_map: Option<&BTreeMap<String, String>>,
) -> Result<Resolution, PipelineError> {
    if taxonomy.is_empty() {
        return Err(PipelineError::EmptyTaxonomy);
    }
    let g = clean_generation(generated);
    if g.is_empty() {
        return Err(PipelineError::EmptyGeneration);
    }
    if let Some(id) = label_map.and_then(|m| m.get(g)) {
        return Ok(Resolution {
            intent_id: id.clone(),
            kind: ResolutionKind::Mapped,
        });
    }
    let lower = g.to_lowercase();
    let intents = taxonomy.intents();
    let fields: [fn(&crate::taxonomy::Intent) -> Option<&str>; 3] = [
        |i| i.compressed_label.as_deref(),
        |i| Some(i.title.as_str()),
        |i| Some(i.rep_query.as_str()),
    ];
    for field in fields {
        if let Some(it) = intents.iter().find(|i| field(i).is_some_and(|s| s.to_lowercase() == lower)) {
            return Ok(Resolution {
                intent_id: it.id.clone(),
                kind: ResolutionKind::Exact,
            });
        }
    }
    let best = intents
        .iter()
        .map(|i| {
            let cand = i.surface_label();
            (gestalt_similarity(&lower, &cand.to_lowercase()), cand, &i.id)
        })
        .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.cmp(a.1)))
        .expect("taxonomy is non-empty");
    Ok(Resolution {
        intent_id: best.2.clone(),
        kind: ResolutionKind::Fuzzy,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub ordering: OrderingKind,
    pub raw: String,
    pub resolved: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<ResolutionKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    pub session_id: String,
    pub per_run: Vec<RunRecord>,
    pub consistent: bool,
    pub final_label: Option<String>,
}

impl ConsistencyVerdict {
    pub fn from_runs(session_id: impl Into<String>, per_run: Vec<RunRecord>) -> Self {
        let first = per_run.first().and_then(|r| r.resolved.clone());
        let consistent = first.is_some() && per_run.iter().all(|r| r.resolved == first);
        ConsistencyVerdict {
            session_id: session_id.into(),
            per_run,
            consistent,
            final_label: if consistent { first } else { None },
        }
    }

    /// The unfiltered single-run prediction: the descending run, which is
    /// how plain retrieval-augmented prompting orders its demonstrations.
    pub fn primary_label(&self) -> Option<&str> {
        self.per_run
            .iter()
            .find(|r| r.ordering == OrderingKind::Descending)
            .or(self.per_run.first())
            .and_then(|r| r.resolved.as_deref())
    }

    pub fn fuzzy_runs(&self) -> usize {
        self.per_run
            .iter()
            .filter(|r| r.resolution == Some(ResolutionKind::Fuzzy))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub session: Session,
    pub intent_id: String,
    pub template: TemplateKind,
    pub k: usize,
    pub provenance: ConsistencyVerdict,
}

/// Line format of a pseudo-label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    pub session: Session,
    pub intent_id: String,
    pub template: TemplateKind,
    pub k: usize,
    pub runs: Vec<RunRecord>,
    pub consistent: bool,
}

impl From<&PseudoLabel> for PseudoLabelRecord {
    fn from(p: &PseudoLabel) -> Self {
        PseudoLabelRecord {
            session: p.session.clone(),
            intent_id: p.intent_id.clone(),
            template: p.template,
            k: p.k,
            runs: p.provenance.per_run.clone(),
            consistent: p.provenance.consistent,
        }
    }
}

impl From<PseudoLabelRecord> for PseudoLabel {
    fn from(r: PseudoLabelRecord) -> Self {
        let provenance = ConsistencyVerdict::from_runs(r.session.id.clone(), r.runs);
        PseudoLabel {
            session: r.session,
            intent_id: r.intent_id,
            template: r.template,
            k: r.k,
            provenance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub total: usize,
    pub kept: usize,
    pub discarded: usize,
    pub errored: usize,
    pub retention_rate: f64,
    pub hallucination_rate: f64,
}

#[derive(Debug, Clone)]
pub struct CorpusLabeling {
    /// One verdict per successfully processed session, in input order.
    pub verdicts: Vec<ConsistencyVerdict>,
    pub labels: Vec<PseudoLabel>,
    pub stats: FilterStats,
    /// `(session id, error)` for discarded-on-error sessions.
    pub failures: Vec<(String, String)>,
}

/// Everything needed to label sessions. Cheap to construct; shareable across
/// threads.
pub struct Labeler<'a> {
    pub taxonomy: &'a Taxonomy,
    pub index: &'a RetrievalIndex,
    pub embedder: &'a dyn Embedder,
    pub backend: &'a dyn Backend,
    pub template: TemplateKind,
    pub k: usize,
    pub seed: u64,
    pub max_tokens: u32,
}

impl<'a> Labeler<'a> {
    pub fn new(
        taxonomy: &'a Taxonomy,
        index: &'a RetrievalIndex,
        embedder: &'a dyn Embedder,
        backend: &'a dyn Backend,
    ) -> Self {
        Labeler {
            taxonomy,
            index,
            embedder,
            backend,
            template: TemplateKind::Base,
            k: retrieval::DEFAULT_K,
            seed: 0,
            max_tokens: llm::DEFAULT_MAX_TOKENS,
        }
    }

    pub fn template(mut self, template: TemplateKind) -> Self {
        self.template = template;
        self
    }

    pub fn k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn orderings(&self, session_id: &str) -> [Ordering; 3] {
        [
            Ordering::ASCENDING,
            Ordering::DESCENDING,
            Ordering::random(seed::derive(self.seed, session_id)),
        ]
    }

    /// Three completions over one retrieval; see the module docs.
    pub fn label_session(&self, session: &Session) -> Result<ConsistencyVerdict, PipelineError> {
        assert!(self.k >= 1, "k must be at least 1");
        let demos = retrieval::retrieve(self.index, session, self.embedder, self.k).map_err(|source| {
            PipelineError::Retrieval {
                session_id: session.id.clone(),
                source,
            }
        })?;
        let mut runs = Vec::with_capacity(3);
        for (run, ordering) in self.orderings(&session.id).into_iter().enumerate() {
            let prompt = promptgen::render(self.template, &demos, session, ordering, self.taxonomy).map_err(|source| {
                PipelineError::Prompt {
                    session_id: session.id.clone(),
                    run,
                    source,
                }
            })?;
            let request = CompletionRequest {
                messages: prompt.messages,
                max_tokens: self.max_tokens,
                temperature: 0.0,
            };
            let raw = llm::complete(&request, self.backend).map_err(|source| PipelineError::Llm {
                session_id: session.id.clone(),
                run,
                source,
            })?;
            let resolution = resolve_label(&raw, self.taxonomy, Some(&prompt.label_map)).ok();
            runs.push(RunRecord {
                ordering: ordering.kind,
                raw,
                resolved: resolution.as_ref().map(|r| r.intent_id.clone()),
                resolution: resolution.map(|r| r.kind),
            });
        }
        Ok(ConsistencyVerdict::from_runs(session.id.clone(), runs))
    }

    /// Labels every session on `workers` threads. Output order and content do
    /// not depend on `workers`.
    pub fn label_corpus(&self, sessions: &[Session], workers: usize) -> Result<CorpusLabeling, PipelineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| PipelineError::Workers(e.to_string()))?;
        let results: Vec<Result<ConsistencyVerdict, PipelineError>> =
            pool.install(|| sessions.par_iter().map(|s| self.label_session(s)).collect());

        let mut verdicts = Vec::with_capacity(sessions.len());
        let mut labels = Vec::new();
        let mut failures = Vec::new();
        for (session, result) in sessions.iter().zip(results) {
            match result {
                Ok(v) => {
                    if let Some(intent) = &v.final_label {
                        labels.push(PseudoLabel {
                            session: session.clone(),
                            intent_id: intent.clone(),
                            template: self.template,
                            k: self.k,
                            provenance: v.clone(),
                        });
                    }
                    verdicts.push(v);
                }
                Err(e) => failures.push((session.id.clone(), e.to_string())),
            }
        }
        let total = sessions.len();
        if total > 0 && failures.len() as f64 > MAX_ERROR_SHARE * total as f64 {
            return Err(PipelineError::TooManyFailures {
                failed: failures.len(),
                total,
                first: failures[0].1.clone(),
            });
        }
        let stats = filter_stats(&verdicts, failures.len());
        Ok(CorpusLabeling {
            verdicts,
            labels,
            stats,
            failures,
        })
    }
}

/// Summary counts; sessions that errored count as discarded.
pub fn filter_stats(verdicts: &[ConsistencyVerdict], errored: usize) -> FilterStats {
    let total = verdicts.len() + errored;
    let kept = verdicts.iter().filter(|v| v.consistent).count();
    let runs: usize = verdicts.iter().map(|v| v.per_run.len()).sum();
    let fuzzy: usize = verdicts.iter().map(ConsistencyVerdict::fuzzy_runs).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    FilterStats {
        total,
        kept,
        discarded: total - kept,
        errored,
        retention_rate: ratio(kept, total),
        hallucination_rate: ratio(fuzzy, runs),
    }
}

/// Sort helper used when comparing outputs from different schedules.
pub fn by_session_id(a: &ConsistencyVerdict, b: &ConsistencyVerdict) -> CmpOrdering {
    a.session_id.cmp(&b.session_id)
}
