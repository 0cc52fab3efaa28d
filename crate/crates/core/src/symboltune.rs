//! Label compression.
//!
//! A verbose label `L` is replaced by the `n`-word, order-preserving
//! subsequence `L'` that minimises
//!
//! ```text
//! alpha * tokens(L') + (1 - cos(embed(L'), embed(L)))
//! ```
//!
//! Collisions between compressed labels are resolved by re-compressing only
//! the losing intents with one more word until labels are unique.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::retrieval::{cosine, Embedder, RetrievalError};
use crate::taxonomy::{Intent, Taxonomy, TaxonomyError};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_WORDS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum CompressError {
    #[error("empty text")]
    EmptyText,
    #[error("label {label:?} has {words} words, fewer than {n}")]
    TooShort { label: String, words: usize, n: usize },
    #[error(transparent)]
    Embedding(#[from] RetrievalError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionResult {
    pub original: String,
    pub compressed: String,
    pub compactness: f64,
    pub divergence: f64,
    pub objective: f64,
    pub word_count: usize,
}

pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn compression_objective(
    candidate: &str,
    original: &str,
    embedder: &dyn Embedder,
    alpha: f64,
) -> Result<CompressionResult, CompressError> {
    if candidate.trim().is_empty() || original.trim().is_empty() {
        return Err(CompressError::EmptyText);
    }
    let word_count = token_count(candidate);
    let compactness = alpha * word_count as f64;
    let divergence = 1.0 - cosine(&embedder.embed(candidate)?, &embedder.embed(original)?)?;
    Ok(CompressionResult {
        original: original.to_string(),
        compressed: candidate.to_string(),
        compactness,
        divergence,
        objective: compactness + divergence,
        word_count,
    })
}

/// All order-preserving `n`-subsets of `0..m`, lexicographic.
pub fn subsequences(m: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n > m {
        return out;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        out.push(idx.clone());
        // Advance the rightmost index that still has room.
        let Some(pos) = (0..n).rev().find(|&i| idx[i] < m - n + i) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Exhaustive search over `n`-word subsequences; the earliest candidate wins
/// ties.
pub fn compress_label(
    original: &str,
    embedder: &dyn Embedder,
    n: usize,
    alpha: f64,
) -> Result<CompressionResult, CompressError> {
    let words: Vec<&str> = original.split_whitespace().collect();
    if words.is_empty() {
        return Err(CompressError::EmptyText);
    }
    if words.len() < n || n == 0 {
        return Err(CompressError::TooShort {
            label: original.to_string(),
            words: words.len(),
            n,
        });
    }
    let original_vec = embedder.embed(original)?;
    let mut best: Option<CompressionResult> = None;
    for combo in subsequences(words.len(), n) {
        let cand = combo.iter().map(|&i| words[i]).collect::<Vec<_>>().join(" ");
        let divergence = 1.0 - cosine(&embedder.embed(&cand)?, &original_vec)?;
        let compactness = alpha * n as f64;
        let objective = compactness + divergence;
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(CompressionResult {
                original: original.to_string(),
                compressed: cand,
                compactness,
                divergence,
                objective,
                word_count: n,
            });
        }
    }
    Ok(best.expect("at least one subsequence"))
}

/// Where a compression source string comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    /// The local-language title.
    LocalTitle,
    /// The two leaf-most English category names.
    EnglishCategory,
    /// The representative query.
    RepQuery,
}

/// The text that gets compressed for `intent`.
///
/// `EnglishCategory` first collapses consecutive duplicate names (left by
/// depth padding) and joins the last two that remain.
pub fn cross_lingual_source(intent: &Intent, mode: SourceMode) -> String {
    match mode {
        SourceMode::LocalTitle => intent.title.clone(),
        SourceMode::RepQuery => intent.rep_query.clone(),
        SourceMode::EnglishCategory => {
            let mut path: Vec<&str> = intent.category_path.iter().map(String::as_str).collect();
            path.dedup();
            let start = path.len().saturating_sub(2);
            path[start..].join(" ")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentCompression {
    pub id: String,
    pub source: String,
    pub compressed: String,
    pub words: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collision {
    pub label: String,
    pub intents: Vec<String>,
    /// Word count at which the collision happened.
    pub words: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub intents: Vec<IntentCompression>,
    pub collisions: Vec<Collision>,
    /// Intents that needed a `#k` suffix after running out of words.
    pub suffixed: Vec<String>,
}

impl CompressionReport {
    pub fn mean_words(&self) -> f64 {
        if self.intents.is_empty() {
            return 0.0;
        }
        self.intents.iter().map(|i| token_count(&i.compressed)).sum::<usize>() as f64 / self.intents.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressOptions {
    pub source: SourceMode,
    pub n_start: usize,
    pub alpha: f64,
}

impl Default for CompressOptions {
    fn default() -> Self {
        CompressOptions {
            source: SourceMode::RepQuery,
            n_start: DEFAULT_WORDS,
            alpha: DEFAULT_ALPHA,
        }
    }
}

struct Slot {
    source: String,
    words: usize,
    result: CompressionResult,
}

fn compress_at(source: &str, n: usize, embedder: &dyn Embedder, alpha: f64) -> Result<CompressionResult, CompressError> {
    let available = token_count(source);
    if available <= n {
        // Not enough words to shorten: the source is its own label.
        return compression_objective(source, source, embedder, alpha);
    }
    compress_label(source, embedder, n, alpha)
}

/// Compresses every intent and makes the labels unique.
pub fn compress_all(
    taxonomy: &Taxonomy,
    embedder: &dyn Embedder,
    opts: CompressOptions,
) -> Result<(Taxonomy, CompressionReport), CompressError> {
    let mut slots = taxonomy
        .intents()
        .iter()
        .map(|it| {
            let source = cross_lingual_source(it, opts.source);
            let result = compress_at(&source, opts.n_start, embedder, opts.alpha)?;
            Ok(Slot {
                words: opts.n_start.min(token_count(&source)),
                source,
                result,
            })
        })
        .collect::<Result<Vec<_>, CompressError>>()?;

    let mut report = CompressionReport::default();
    loop {
        let groups = collision_groups(&slots);
        if groups.is_empty() {
            break;
        }
        let mut progressed = false;
        for members in groups {
            report.collisions.push(Collision {
                label: slots[members[0]].result.compressed.clone(),
                intents: members.iter().map(|&i| taxonomy.intents()[i].id.clone()).collect(),
                words: slots[members[0]].words,
            });
            for &i in &members[1..] {
                let slot = &mut slots[i];
                if slot.words < token_count(&slot.source) {
                    slot.words += 1;
                    slot.result = compress_at(&slot.source, slot.words, embedder, opts.alpha)?;
                    progressed = true;
                }
            }
        }
        if !progressed {
            break;
        }
    }

    // Last resort for intents whose sources are exhausted.
    let mut labels: Vec<String> = slots.iter().map(|s| s.result.compressed.clone()).collect();
    for members in collision_groups(&slots) {
        let base = labels[members[0]].clone();
        let mut k = 2;
        for &i in &members[1..] {
            while labels.contains(&format!("{base} #{k}")) {
                k += 1;
            }
            labels[i] = format!("{base} #{k}");
            report.suffixed.push(taxonomy.intents()[i].id.clone());
            k += 1;
        }
    }

    let mut map = HashMap::new();
    for ((it, slot), label) in taxonomy.intents().iter().zip(&slots).zip(labels) {
        report.intents.push(IntentCompression {
            id: it.id.clone(),
            source: slot.source.clone(),
            compressed: label.clone(),
            words: slot.words,
            objective: slot.result.objective,
        });
        map.insert(it.id.clone(), label);
    }
    Ok((taxonomy.with_compressed(&map)?, report))
}

/// Groups of slot indices sharing a label, each ordered so the member that
/// keeps the label (lowest objective, then input order) comes first.
fn collision_groups(slots: &[Slot]) -> Vec<Vec<usize>> {
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in slots.iter().enumerate() {
        by_label.entry(s.result.compressed.as_str()).or_default().push(i);
    }
    by_label
        .into_values()
        .filter(|g| g.len() > 1)
        .map(|mut g| {
            g.sort_by(|&a, &b| {
                slots[a]
                    .result
                    .objective
                    .total_cmp(&slots[b].result.objective)
                    .then(a.cmp(&b))
            });
            g
        })
        .collect()
}

/// Generation-target styles compared by the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CompressionMode {
    /// The uncompressed representative query.
    None,
    /// `n`-word compression via [`compress_all`].
    NWord { n: usize },
    /// Opaque symbols `S1, S2, ...` in intent order.
    SymbolsOnly,
    /// A long target prefixed with a summary of the leaf category.
    LongTarget,
}

impl CompressionMode {
    pub fn name(&self) -> String {
        match self {
            CompressionMode::None => "none".into(),
            CompressionMode::NWord { n } => format!("{n}-word"),
            CompressionMode::SymbolsOnly => "symbols-only".into(),
            CompressionMode::LongTarget => "long-target".into(),
        }
    }
}

/// Rewrites every compressed label according to `mode`.
pub fn apply_mode(
    taxonomy: &Taxonomy,
    mode: CompressionMode,
    embedder: &dyn Embedder,
    alpha: f64,
) -> Result<Taxonomy, CompressError> {
    let labels: Vec<String> = match mode {
        CompressionMode::NWord { n } => {
            let opts = CompressOptions {
                n_start: n,
                alpha,
                ..CompressOptions::default()
            };
            return Ok(compress_all(taxonomy, embedder, opts)?.0);
        }
        CompressionMode::None => taxonomy.intents().iter().map(|i| i.rep_query.clone()).collect(),
        CompressionMode::SymbolsOnly => (1..=taxonomy.len()).map(|i| format!("S{i}")).collect(),
        CompressionMode::LongTarget => taxonomy
            .intents()
            .iter()
            .map(|i| {
                let leaf = i.category_path.last().map_or("", String::as_str);
                format!("You are asking about {leaf}. So, {}", i.rep_query)
            })
            .collect(),
    };
    let mut seen: HashMap<String, usize> = HashMap::new();
    let map = taxonomy
        .intents()
        .iter()
        .zip(labels)
        .map(|(it, label)| {
            let count = seen.entry(label.clone()).or_default();
            *count += 1;
            let label = if *count > 1 { format!("{label} #{count}") } else { label };
            (it.id.clone(), label)
        })
        .collect();
    Ok(taxonomy.with_compressed(&map)?)
}
