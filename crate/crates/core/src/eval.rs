//! Offline metrics, significance testing and the ablation harness.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::corpus::{LabeledExample, Session};
use crate::llm::Backend;
use crate::pipeline::{ConsistencyVerdict, Labeler, PipelineError};
use crate::promptgen::TemplateKind;
use crate::retrieval::{Embedder, RetrievalIndex};
use crate::symboltune::{self, CompressionMode};
use crate::taxonomy::Taxonomy;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{predictions} predictions but {golds} gold labels")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("no rated sessions")]
    NoRatings,
    #[error("session {0:?} has no gold label")]
    MissingGold(String),
    #[error("variant {variant}: {message}")]
    Variant { variant: String, message: String },
}

pub fn accuracy<P: AsRef<str>, G: AsRef<str>>(predictions: &[P], golds: &[G]) -> Result<f64, EvalError> {
    if predictions.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p.as_ref() == g.as_ref()).count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Share of good ratings among rated chatbot-only sessions.
pub fn scsat(good: usize, bad: usize) -> Result<f64, EvalError> {
    if good + bad == 0 {
        return Err(EvalError::NoRatings);
    }
    Ok(good as f64 / (good + bad) as f64)
}

/// One replayed session with its outcome flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub completed_flow: bool,
    pub transferred: bool,
    pub bad_rating: bool,
}

impl ReplayRecord {
    pub fn resolved(&self) -> bool {
        self.completed_flow && !self.transferred && !self.bad_rating
    }
}

pub fn resolution_rate(records: &[ReplayRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(records.iter().filter(|r| r.resolved()).count() as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyPrecision {
    /// Accuracy over consistent verdicts only; 0 when nothing was kept.
    pub precision_kept: f64,
    /// Accuracy of the single-run label over every verdict.
    pub accuracy_all: f64,
    pub removed_fraction: f64,
    pub kept: usize,
    pub total: usize,
}

/// Compares filtered and unfiltered labels against gold intents keyed by
/// session id.
pub fn consistency_precision(
    verdicts: &[ConsistencyVerdict],
    golds: &HashMap<String, String>,
) -> Result<ConsistencyPrecision, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut kept = 0usize;
    let mut kept_hits = 0usize;
    let mut all_hits = 0usize;
    for v in verdicts {
        let gold = golds
            .get(&v.session_id)
            .ok_or_else(|| EvalError::MissingGold(v.session_id.clone()))?;
        if v.primary_label() == Some(gold.as_str()) {
            all_hits += 1;
        }
        if let Some(label) = &v.final_label {
            kept += 1;
            kept_hits += (label == gold) as usize;
        }
    }
    let total = verdicts.len();
    Ok(ConsistencyPrecision {
        precision_kept: if kept == 0 { 0.0 } else { kept_hits as f64 / kept as f64 },
        accuracy_all: all_hits as f64 / total as f64,
        removed_fraction: (total - kept) as f64 / total as f64,
        kept,
        total,
    })
}

/// Gold intents of every session that has one.
pub fn gold_map(sessions: &[Session]) -> HashMap<String, String> {
    sessions
        .iter()
        .filter_map(|s| s.gold_intent.clone().map(|g| (s.id.clone(), g)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    /// Two-sided.
    pub p_value: f64,
}

/// Pooled two-proportion z-test of `hits_a/n_a` against `hits_b/n_b`.
pub fn two_proportion_z(hits_a: usize, n_a: usize, hits_b: usize, n_b: usize) -> Result<ZTest, EvalError> {
    if n_a == 0 || n_b == 0 {
        return Err(EvalError::Empty);
    }
    let (pa, pb) = (hits_a as f64 / n_a as f64, hits_b as f64 / n_b as f64);
    let pooled = (hits_a + hits_b) as f64 / (n_a + n_b) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    if se == 0.0 {
        return Ok(ZTest { z: 0.0, p_value: 1.0 });
    }
    let z = (pa - pb) / se;
    let normal = Normal::standard();
    Ok(ZTest {
        z,
        p_value: 2.0 * (1.0 - normal.cdf(z.abs())),
    })
}

/// Accuracy for one market slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketRow {
    pub market: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Per-market accuracy plus the average weighted by test counts, which is
/// the pooled accuracy.
pub fn market_breakdown(rows: &[(String, bool)]) -> (Vec<MarketRow>, f64) {
    let mut by: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (m, ok) in rows {
        let e = by.entry(m.as_str()).or_default();
        e.0 += 1;
        e.1 += *ok as usize;
    }
    let out: Vec<MarketRow> = by
        .into_iter()
        .map(|(m, (n, c))| MarketRow {
            market: m.to_string(),
            n,
            correct: c,
            accuracy: c as f64 / n as f64,
        })
        .collect();
    let n: usize = out.iter().map(|r| r.n).sum();
    let c: usize = out.iter().map(|r| r.correct).sum();
    (out, if n == 0 { 0.0 } else { c as f64 / n as f64 })
}

/// Whatever metrics the supplied inputs allow; the rest stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hallucination_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency_precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scsat: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub markets: Vec<MarketRow>,
}

/// Settings for [`run_ablation`]. Every combination of template and
/// compression mode is labelled once; self-consistency on and off are both
/// read from that labelling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub templates: Vec<TemplateKind>,
    pub self_consistency: Vec<bool>,
    pub compression: Vec<CompressionMode>,
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            templates: vec![TemplateKind::Base],
            self_consistency: vec![false, true],
            compression: vec![CompressionMode::NWord { n: 2 }],
            k: crate::retrieval::DEFAULT_K,
            alpha: symboltune::DEFAULT_ALPHA,
            seed: 0,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub template: TemplateKind,
    pub self_consistency: bool,
    pub compression: String,
    pub sessions: usize,
    /// Labels produced (all resolved runs without the filter, unanimous ones
    /// with it).
    pub labeled: usize,
    /// Single-run accuracy over all sessions.
    pub accuracy: f64,
    /// Accuracy over produced labels.
    pub precision: f64,
    pub retention: f64,
    pub hallucination_rate: f64,
    /// Precision compared with the first row.
    pub p_value: Option<f64>,
    correct: usize,
}

impl AblationRow {
    pub fn variant(&self) -> String {
        format!(
            "{}/{}/sc-{}",
            self.template,
            self.compression,
            if self.self_consistency { "on" } else { "off" }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

const COLUMNS: [&str; 10] = [
    "template",
    "compression",
    "self_consistency",
    "sessions",
    "labeled",
    "accuracy",
    "precision",
    "retention",
    "hallucination",
    "p_value",
];

impl AblationReport {
    fn cells(r: &AblationRow) -> [String; 10] {
        [
            r.template.to_string(),
            r.compression.clone(),
            if r.self_consistency { "on" } else { "off" }.to_string(),
            r.sessions.to_string(),
            r.labeled.to_string(),
            format!("{:.4}", r.accuracy),
            format!("{:.4}", r.precision),
            format!("{:.4}", r.retention),
            format!("{:.4}", r.hallucination_rate),
            r.p_value.map_or("-".into(), |p| format!("{p:.4}")),
        ]
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("| {} |\n", COLUMNS.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(COLUMNS.len()));
        for r in &self.rows {
            let _ = writeln!(s, "| {} |", Self::cells(r).join(" | "));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", COLUMNS.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", Self::cells(r).join(","));
        }
        s
    }
}

/// Builds a backend for a taxonomy variant; oracle backends need the
/// variant's surface labels.
pub type BackendFactory<'a> = dyn Fn(&Taxonomy) -> Box<dyn Backend> + 'a;

/// Pseudo-labels `sessions` under each configured variant and scores the
/// labels against the sessions' gold intents.
pub fn run_ablation(
    cfg: &AblationConfig,
    taxonomy: &Taxonomy,
    examples: &[LabeledExample],
    sessions: &[Session],
    embedder: &dyn Embedder,
    backend_for: &BackendFactory<'_>,
) -> Result<AblationReport, EvalError> {
    let golds = gold_map(sessions);
    if let Some(s) = sessions.iter().find(|s| !golds.contains_key(&s.id)) {
        return Err(EvalError::MissingGold(s.id.clone()));
    }
    if sessions.is_empty() {
        return Err(EvalError::Empty);
    }
    let index = RetrievalIndex::build(examples, embedder).map_err(|e| EvalError::Variant {
        variant: "index".into(),
        message: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for &mode in &cfg.compression {
        let tax = symboltune::apply_mode(taxonomy, mode, embedder, cfg.alpha).map_err(|e| EvalError::Variant {
            variant: mode.name(),
            message: e.to_string(),
        })?;
        let backend = backend_for(&tax);
        for &template in &cfg.templates {
            let labeling = Labeler::new(&tax, &index, embedder, backend.as_ref())
                .template(template)
                .k(cfg.k)
                .seed(cfg.seed)
                .label_corpus(sessions, cfg.workers)
                .map_err(|e: PipelineError| EvalError::Variant {
                    variant: format!("{template}/{}", mode.name()),
                    message: e.to_string(),
                })?;
            let total = sessions.len();
            let single_hits = labeling
                .verdicts
                .iter()
                .filter(|v| v.primary_label() == Some(golds[&v.session_id].as_str()))
                .count();
            for &sc in &cfg.self_consistency {
                let (labeled, correct) = labeling.verdicts.iter().fold((0, 0), |(n, c), v| {
                    let label = if sc { v.final_label.as_deref() } else { v.primary_label() };
                    match label {
                        Some(l) => (n + 1, c + (l == golds[&v.session_id]) as usize),
                        None => (n, c),
                    }
                });
                rows.push(AblationRow {
                    template,
                    self_consistency: sc,
                    compression: mode.name(),
                    sessions: total,
                    labeled,
                    accuracy: single_hits as f64 / total as f64,
                    precision: if labeled == 0 { 0.0 } else { correct as f64 / labeled as f64 },
                    retention: labeled as f64 / total as f64,
                    hallucination_rate: labeling.stats.hallucination_rate,
                    p_value: None,
                    correct,
                });
            }
        }
    }
    if let Some(first) = rows.first().cloned() {
        for r in rows.iter_mut().skip(1) {
            r.p_value = two_proportion_z(r.correct, r.labeled, first.correct, first.labeled)
                .ok()
                .map(|t| t.p_value);
        }
    }
    Ok(AblationReport { rows })
}
