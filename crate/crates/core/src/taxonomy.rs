//! The hierarchical intent knowledge base.
//!
//! Every intent hangs off a three-level category path. Raw knowledge bases may
//! contain shallower paths; [`simplify`] pads them by cloning the leaf name
//! downward so that every leaf sits at depth 3 and the classifier can use one
//! head per level.
//!
//! Category nodes are identified by their full path. The class name of a node
//! is the path joined with [`PATH_SEP`], which keeps names unique even when the
//! same category name appears under two different parents.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};

pub const DEPTH: usize = 3;
pub const PATH_SEP: &str = " > ";

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate intent id {0:?}")]
    DuplicateId(String),
    #[error("duplicate compressed label {label:?} on intents {first:?} and {second:?}")]
    DuplicateCompressed {
        label: String,
        first: String,
        second: String,
    },
    #[error("intent {id:?}: category path {path:?} is not a path in the category tree")]
    DanglingCategory { id: String, path: Vec<String> },
    #[error("category path {0:?} is deeper than {DEPTH}")]
    DepthExceeded(Vec<String>),
    #[error("layer {0} out of range 1..={DEPTH}")]
    LayerOutOfRange(usize),
    #[error("io error: {0}")]
    Io(String),
}

impl From<JsonlError> for TaxonomyError {
    fn from(e: JsonlError) -> Self {
        match e {
            JsonlError::Parse { line, message } => TaxonomyError::Parse { line, message },
            JsonlError::Io { path, source } => TaxonomyError::Io(format!("{path}: {source}")),
        }
    }
}

/// One line of the knowledge-base file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentRecord {
    pub id: String,
    pub title: String,
    pub category: Vec<String>,
    pub rep_query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compressed: Option<String>,
    pub lang: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intent {
    pub id: String,
    /// Local-language title.
    pub title: String,
    /// English category path, always [`DEPTH`] long once inside a [`Taxonomy`].
    pub category_path: Vec<String>,
    pub rep_query: String,
    pub compressed_label: Option<String>,
    pub language: String,
}

impl Intent {
    /// The surface string used as a generation target: the compressed label
    /// when present, otherwise the title.
    pub fn surface_label(&self) -> &str {
        self.compressed_label.as_deref().unwrap_or(&self.title)
    }

    pub fn leaf_class(&self) -> String {
        self.category_path.join(PATH_SEP)
    }

    pub fn to_record(&self) -> IntentRecord {
        IntentRecord {
            id: self.id.clone(),
            title: self.title.clone(),
            category: self.category_path.clone(),
            rep_query: self.rep_query.clone(),
            compressed: self.compressed_label.clone(),
            lang: self.language.clone(),
        }
    }
}

impl From<IntentRecord> for Intent {
    fn from(r: IntentRecord) -> Self {
        Intent {
            id: r.id,
            title: r.title,
            category_path: r.category,
            rep_query: r.rep_query,
            compressed_label: r.compressed,
            language: r.lang,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TreeNode {
    name: String,
    parent: Option<usize>,
    children: Vec<usize>,
}

/// A rooted category tree. Index 0 is an unnamed virtual root; sibling names
/// are unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTree {
    nodes: Vec<TreeNode>,
}

impl Default for CategoryTree {
    fn default() -> Self {
        CategoryTree {
            nodes: vec![TreeNode {
                name: String::new(),
                parent: None,
                children: Vec::new(),
            }],
        }
    }
}

impl CategoryTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_paths<I, P>(paths: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[String]>,
    {
        let mut tree = Self::new();
        for p in paths {
            tree.insert_path(p.as_ref());
        }
        tree
    }

    /// Inserts every prefix of `path`; returns the index of the deepest node.
    pub fn insert_path(&mut self, path: &[String]) -> usize {
        let mut cur = 0;
        for name in path {
            cur = match self.child_named(cur, name) {
                Some(c) => c,
                None => {
                    let idx = self.nodes.len();
                    self.nodes.push(TreeNode {
                        name: name.clone(),
                        parent: Some(cur),
                        children: Vec::new(),
                    });
                    self.nodes[cur].children.push(idx);
                    idx
                }
            };
        }
        cur
    }

    fn child_named(&self, node: usize, name: &str) -> Option<usize> {
        self.nodes[node]
            .children
            .iter()
            .copied()
            .find(|&c| self.nodes[c].name == name)
    }

    pub fn contains_path(&self, path: &[String]) -> bool {
        let mut cur = 0;
        for name in path {
            match self.child_named(cur, name) {
                Some(c) => cur = c,
                None => return false,
            }
        }
        true
    }

    /// Number of named nodes (the virtual root excluded).
    pub fn len(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn path_of(&self, mut node: usize) -> Vec<String> {
        let mut out = Vec::new();
        while let Some(p) = self.nodes[node].parent {
            out.push(self.nodes[node].name.clone());
            node = p;
        }
        out.reverse();
        out
    }

    /// Every root-to-node path, in depth-first insertion order.
    pub fn paths(&self) -> Vec<Vec<String>> {
        (1..self.nodes.len()).map(|i| self.path_of(i)).collect()
    }

    /// Every root-to-leaf path, sorted.
    pub fn leaf_paths(&self) -> Vec<Vec<String>> {
        let mut out: Vec<_> = (1..self.nodes.len())
            .filter(|&i| self.nodes[i].children.is_empty())
            .map(|i| self.path_of(i))
            .collect();
        out.sort();
        out
    }

    pub fn max_depth(&self) -> usize {
        self.paths().iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Pads a single path to [`DEPTH`] by repeating its last name.
pub fn pad_path(path: &[String]) -> Result<Vec<String>, TaxonomyError> {
    if path.len() > DEPTH {
        return Err(TaxonomyError::DepthExceeded(path.to_vec()));
    }
    let mut out = path.to_vec();
    if let Some(last) = path.last() {
        while out.len() < DEPTH {
            out.push(last.clone());
        }
    }
    Ok(out)
}

/// Equalises leaf depth: every leaf shallower than [`DEPTH`] gets a chain of
/// clones of itself appended.
pub fn simplify(raw: &CategoryTree) -> Result<CategoryTree, TaxonomyError> {
    let leaves = raw.leaf_paths();
    if let Some(p) = leaves.iter().find(|p| p.len() > DEPTH) {
        return Err(TaxonomyError::DepthExceeded(p.clone()));
    }
    let mut out = CategoryTree::new();
    // Walk all nodes (not just leaves) so sibling order matches the input.
    for path in raw.paths() {
        out.insert_path(&path);
    }
    for leaf in leaves {
        out.insert_path(&pad_path(&leaf)?);
    }
    Ok(out)
}

/// Per-layer view of one category node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassNode {
    pub name: String,
    /// Index of the parent class in the previous layer; `None` at layer 1.
    pub parent: Option<usize>,
    /// Indices of child classes in the next layer.
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    intents: Vec<Intent>,
    by_id: HashMap<String, usize>,
    tree: CategoryTree,
    layers: [Vec<ClassNode>; DEPTH],
    class_index: [HashMap<String, usize>; DEPTH],
    /// Intent indices hosted by each leaf class, sorted by id.
    leaf_intents: Vec<Vec<usize>>,
}

impl Taxonomy {
    pub fn empty() -> Self {
        Self::from_intents(Vec::new()).expect("empty taxonomy is valid")
    }

    /// Builds and validates a taxonomy. Intent paths shallower than
    /// [`DEPTH`] are padded.
    pub fn from_intents(intents: Vec<Intent>) -> Result<Self, TaxonomyError> {
        let mut raw = CategoryTree::new();
        for it in &intents {
            if it.category_path.is_empty() || it.category_path.iter().any(|c| c.trim().is_empty()) {
                return Err(TaxonomyError::DanglingCategory {
                    id: it.id.clone(),
                    path: it.category_path.clone(),
                });
            }
            if it.category_path.len() > DEPTH {
                return Err(TaxonomyError::DepthExceeded(it.category_path.clone()));
            }
            raw.insert_path(&it.category_path);
        }
        let tree = simplify(&raw)?;
        let intents = intents
            .into_iter()
            .map(|mut it| {
                it.category_path = pad_path(&it.category_path)?;
                Ok(it)
            })
            .collect::<Result<Vec<_>, TaxonomyError>>()?;
        Self::from_parts(intents, tree)
    }

    /// Validates intents against an already simplified tree.
    pub fn from_parts(intents: Vec<Intent>, tree: CategoryTree) -> Result<Self, TaxonomyError> {
        let mut by_id = HashMap::new();
        let mut compressed: HashMap<&str, &str> = HashMap::new();
        for (i, it) in intents.iter().enumerate() {
            if by_id.insert(it.id.clone(), i).is_some() {
                return Err(TaxonomyError::DuplicateId(it.id.clone()));
            }
            if let Some(c) = &it.compressed_label {
                if let Some(first) = compressed.insert(c, &it.id) {
                    return Err(TaxonomyError::DuplicateCompressed {
                        label: c.clone(),
                        first: first.to_string(),
                        second: it.id.clone(),
                    });
                }
            }
        }
        for it in &intents {
            if it.category_path.len() != DEPTH || !tree.contains_path(&it.category_path) {
                return Err(TaxonomyError::DanglingCategory {
                    id: it.id.clone(),
                    path: it.category_path.clone(),
                });
            }
        }

        // Class names per layer, lexicographic.
        let mut per_layer: [BTreeMap<String, Vec<String>>; DEPTH] = Default::default();
        for path in tree.paths() {
            if path.len() > DEPTH {
                return Err(TaxonomyError::DepthExceeded(path));
            }
            per_layer[path.len() - 1].insert(path.join(PATH_SEP), path);
        }
        if let Some(short) = tree.leaf_paths().into_iter().find(|p| p.len() < DEPTH) {
            // Shallow leaves mean the tree was not simplified.
            return Err(TaxonomyError::DanglingCategory {
                id: String::new(),
                path: short,
            });
        }
        let class_index: [HashMap<String, usize>; DEPTH] = std::array::from_fn(|l| {
            per_layer[l]
                .keys()
                .enumerate()
                .map(|(i, k)| (k.clone(), i))
                .collect()
        });
        let mut layers: [Vec<ClassNode>; DEPTH] = std::array::from_fn(|l| {
            per_layer[l]
                .values()
                .map(|path| ClassNode {
                    name: path.join(PATH_SEP),
                    parent: (l > 0).then(|| class_index[l - 1][&path[..l].join(PATH_SEP)]),
                    children: Vec::new(),
                })
                .collect()
        });
        for l in 1..DEPTH {
            for i in 0..layers[l].len() {
                let p = layers[l][i].parent.expect("non-root layer has parent");
                layers[l - 1][p].children.push(i);
            }
        }

        let mut leaf_intents = vec![Vec::new(); layers[DEPTH - 1].len()];
        for (i, it) in intents.iter().enumerate() {
            leaf_intents[class_index[DEPTH - 1][&it.leaf_class()]].push(i);
        }
        for hosted in &mut leaf_intents {
            hosted.sort_by(|&a, &b| intents[a].id.cmp(&intents[b].id));
        }

        Ok(Taxonomy {
            intents,
            by_id,
            tree,
            layers,
            class_index,
            leaf_intents,
        })
    }

    pub fn intents(&self) -> &[Intent] {
        &self.intents
    }

    pub fn len(&self) -> usize {
        self.intents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Intent> {
        self.by_id.get(id).map(|&i| &self.intents[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn tree(&self) -> &CategoryTree {
        &self.tree
    }

    pub fn layer_sizes(&self) -> [usize; DEPTH] {
        std::array::from_fn(|l| self.layers[l].len())
    }

    /// Total number of category nodes over all layers.
    pub fn node_count(&self) -> usize {
        self.layer_sizes().iter().sum()
    }

    /// Class names of layer `l` (1-based), lexicographically ordered.
    pub fn layer_classes(&self, l: usize) -> Result<Vec<String>, TaxonomyError> {
        Ok(self.layer(l)?.iter().map(|c| c.name.clone()).collect())
    }

    /// Class nodes of layer `l` (1-based) with parent/child links.
    pub fn layer(&self, l: usize) -> Result<&[ClassNode], TaxonomyError> {
        if !(1..=DEPTH).contains(&l) {
            return Err(TaxonomyError::LayerOutOfRange(l));
        }
        Ok(&self.layers[l - 1])
    }

    /// Per-layer class indices along an intent's path.
    pub fn targets(&self, intent_id: &str) -> Option<[usize; DEPTH]> {
        let it = self.get(intent_id)?;
        Some(std::array::from_fn(|l| {
            self.class_index[l][&it.category_path[..=l].join(PATH_SEP)]
        }))
    }

    /// The intent an leaf-class prediction resolves to: the lowest id hosted
    /// by that leaf.
    pub fn intent_for_leaf(&self, leaf: usize) -> Option<&Intent> {
        self.leaf_intents
            .get(leaf)
            .and_then(|v| v.first())
            .map(|&i| &self.intents[i])
    }

    pub fn intents_for_leaf(&self, leaf: usize) -> impl Iterator<Item = &Intent> {
        self.leaf_intents
            .get(leaf)
            .into_iter()
            .flatten()
            .map(|&i| &self.intents[i])
    }

    /// Replaces compressed labels by id; re-validates uniqueness.
    pub fn with_compressed(&self, labels: &HashMap<String, String>) -> Result<Self, TaxonomyError> {
        let intents = self
            .intents
            .iter()
            .cloned()
            .map(|mut it| {
                if let Some(c) = labels.get(&it.id) {
                    it.compressed_label = Some(c.clone());
                }
                it
            })
            .collect();
        Self::from_parts(intents, self.tree.clone())
    }

    pub fn languages(&self) -> Vec<String> {
        let set: HashSet<&str> = self.intents.iter().map(|i| i.language.as_str()).collect();
        let mut v: Vec<String> = set.into_iter().map(str::to_string).collect();
        v.sort();
        v
    }

    pub fn records(&self) -> Vec<IntentRecord> {
        self.intents.iter().map(Intent::to_record).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TaxonomyError> {
        jsonl::write_file(path, &self.records()).map_err(Into::into)
    }
}

/// Reads a knowledge-base stream (one JSON object per line).
pub fn load_taxonomy_from<R: Read>(reader: R) -> Result<Taxonomy, TaxonomyError> {
    let records: Vec<IntentRecord> = jsonl::read_records(reader)?;
    Taxonomy::from_intents(records.into_iter().map(Intent::from).collect())
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Taxonomy, TaxonomyError> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| TaxonomyError::Io(format!("{}: {e}", path.as_ref().display())))?;
    load_taxonomy_from(file)
}
