//! Hierarchical intent classifier head.
//!
//! Two parts share the frozen text representation `H` (dimension `d`):
//!
//! * a label-attention stack with one head per layer,
//!   `L_1 = H W1_1 + b1_1`, `L_l = (H ⊕ L_{l-1}) W1_l + b1_l`, and local logits
//!   `L_l W2_l + b2_l`;
//! * a tree encoder over the three-level taxonomy: leaves receive `H`, each
//!   parent becomes `relu(mean(children) A + c)` bottom-up, the per-level
//!   means are concatenated (`3d`) and one linear layer scores every node.
//!
//! Layer probabilities are `softmax(local_l + global_l)`. Gradients of the
//! summed per-layer cross-entropy are derived by hand in [`loss_and_grads`].

mod model;
mod tensor;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::retrieval::RetrievalError;
use crate::seed;
use crate::taxonomy::{Taxonomy, DEPTH};

pub use model::{input_text, HtcModel, Prediction, Strategy, CONCAT_SEP};
pub use tensor::{argmax, log_sum_exp, softmax, Matrix};
pub use train::{train, EpochStats, TrainConfig, TrainSample, TrainedModel};

#[derive(Debug, thiserror::Error)]
pub enum HtcError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("taxonomy is not simplified: {0}")]
    UnsimplifiedTaxonomy(String),
    #[error("target {index} out of range for layer {layer} with {size} classes")]
    InvalidTarget { layer: usize, index: usize, size: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("session has no turns")]
    EmptySession,
    #[error(transparent)]
    Embedding(#[from] RetrievalError),
    #[error("model file: {0}")]
    Format(String),
    #[error("intent {0:?} is not in the taxonomy")]
    UnknownIntent(String),
}

/// The category tree as the classifier sees it: class counts per layer and
/// child lists for the two parent layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeShape {
    pub sizes: [usize; DEPTH],
    /// `children[0][i]`: layer-2 children of layer-1 class `i`;
    /// `children[1][j]`: layer-3 children of layer-2 class `j`.
    pub children: [Vec<Vec<usize>>; 2],
}

impl TreeShape {
    pub fn new(sizes: [usize; DEPTH], children: [Vec<Vec<usize>>; 2]) -> Result<Self, HtcError> {
        let shape = TreeShape { sizes, children };
        shape.validate()?;
        Ok(shape)
    }

    pub fn from_taxonomy(taxonomy: &Taxonomy) -> Result<Self, HtcError> {
        let layer = |l: usize| taxonomy.layer(l).expect("layer in range");
        let children = [
            layer(1).iter().map(|c| c.children.clone()).collect(),
            layer(2).iter().map(|c| c.children.clone()).collect(),
        ];
        Self::new(taxonomy.layer_sizes(), children)
    }

    fn validate(&self) -> Result<(), HtcError> {
        if self.sizes.contains(&0) {
            return Err(HtcError::UnsimplifiedTaxonomy("every layer needs at least one class".into()));
        }
        for p in 0..2 {
            if self.children[p].len() != self.sizes[p] {
                return Err(HtcError::ShapeMismatch(format!(
                    "layer {} has {} classes but {} child lists",
                    p + 1,
                    self.sizes[p],
                    self.children[p].len()
                )));
            }
            let mut seen = vec![false; self.sizes[p + 1]];
            for (i, kids) in self.children[p].iter().enumerate() {
                if kids.is_empty() {
                    return Err(HtcError::UnsimplifiedTaxonomy(format!(
                        "layer {} class {i} has no children",
                        p + 1
                    )));
                }
                for &k in kids {
                    if k >= seen.len() || std::mem::replace(&mut seen[k], true) {
                        return Err(HtcError::ShapeMismatch(format!("layer {} child {k} invalid or shared", p + 2)));
                    }
                }
            }
            if seen.contains(&false) {
                return Err(HtcError::ShapeMismatch(format!("layer {} has orphan classes", p + 2)));
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Offset of layer `l` (0-based) in the global node ordering.
    pub fn offset(&self, l: usize) -> usize {
        self.sizes[..l].iter().sum()
    }
}

/// Trainable parameters. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HtcParams {
    pub d: usize,
    pub w1: [Matrix; DEPTH],
    pub b1: [Vec<f64>; DEPTH],
    pub w2: [Matrix; DEPTH],
    pub b2: [Vec<f64>; DEPTH],
    /// Aggregation weights for layer-1 and layer-2 parents.
    pub agg: [Matrix; 2],
    pub agg_bias: [Vec<f64>; 2],
    pub wg: Matrix,
    pub bg: Vec<f64>,
}

impl HtcParams {
    pub fn zeros(d: usize, shape: &TreeShape) -> Self {
        let n = shape.node_count();
        HtcParams {
            d,
            w1: std::array::from_fn(|l| Matrix::zeros(if l == 0 { d } else { 2 * d }, d)),
            b1: std::array::from_fn(|_| vec![0.0; d]),
            w2: std::array::from_fn(|l| Matrix::zeros(d, shape.sizes[l])),
            b2: std::array::from_fn(|l| vec![0.0; shape.sizes[l]]),
            agg: std::array::from_fn(|_| Matrix::zeros(d, d)),
            agg_bias: std::array::from_fn(|_| vec![0.0; d]),
            wg: Matrix::zeros(3 * d, n),
            bg: vec![0.0; n],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(d: usize, shape: &TreeShape, seed: u64) -> Self {
        let mut p = Self::zeros(d, shape);
        let mut rng = seed::rng_for(seed, "htc-init");
        let mut fill = |m: &mut Matrix| {
            let limit = (6.0 / (m.rows + m.cols) as f64).sqrt();
            m.data.iter_mut().for_each(|v| *v = rng.gen_range(-limit..limit));
        };
        p.w1.iter_mut().for_each(&mut fill);
        p.w2.iter_mut().for_each(&mut fill);
        p.agg.iter_mut().for_each(&mut fill);
        fill(&mut p.wg);
        p
    }

    /// Every tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for l in 0..DEPTH {
            v.push(&self.w1[l].data);
            v.push(&self.b1[l]);
            v.push(&self.w2[l].data);
            v.push(&self.b2[l]);
        }
        for p in 0..2 {
            v.push(&self.agg[p].data);
            v.push(&self.agg_bias[p]);
        }
        v.push(&self.wg.data);
        v.push(&self.bg);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        let HtcParams {
            w1,
            b1,
            w2,
            b2,
            agg,
            agg_bias,
            wg,
            bg,
            ..
        } = self;
        for (((w1, b1), w2), b2) in w1.iter_mut().zip(b1.iter_mut()).zip(w2.iter_mut()).zip(b2.iter_mut()) {
            v.push(&mut w1.data);
            v.push(b1);
            v.push(&mut w2.data);
            v.push(b2);
        }
        for (a, b) in agg.iter_mut().zip(agg_bias.iter_mut()) {
            v.push(&mut a.data);
            v.push(b);
        }
        v.push(&mut wg.data);
        v.push(bg);
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other * scale`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &HtcParams, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y * scale;
            }
        }
    }

    /// Checks every tensor against `d` and `shape`.
    pub fn check_shapes(&self, shape: &TreeShape) -> Result<(), HtcError> {
        let d = self.d;
        let n = shape.node_count();
        let bad = |what: &str| Err(HtcError::ShapeMismatch(what.to_string()));
        for l in 0..DEPTH {
            let in_dim = if l == 0 { d } else { 2 * d };
            if (self.w1[l].rows, self.w1[l].cols) != (in_dim, d) || self.w1[l].data.len() != in_dim * d {
                return bad(&format!("W1_{}", l + 1));
            }
            if self.b1[l].len() != d {
                return bad(&format!("b1_{}", l + 1));
            }
            if (self.w2[l].rows, self.w2[l].cols) != (d, shape.sizes[l]) || self.w2[l].data.len() != d * shape.sizes[l] {
                return bad(&format!("W2_{}", l + 1));
            }
            if self.b2[l].len() != shape.sizes[l] {
                return bad(&format!("b2_{}", l + 1));
            }
        }
        for p in 0..2 {
            if (self.agg[p].rows, self.agg[p].cols) != (d, d) || self.agg[p].data.len() != d * d || self.agg_bias[p].len() != d {
                return bad(&format!("A_{}", p + 1));
            }
        }
        if (self.wg.rows, self.wg.cols) != (3 * d, n) || self.wg.data.len() != 3 * d * n || self.bg.len() != n {
            return bad("W_g");
        }
        Ok(())
    }
}

/// Intermediates of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct HtcOutput {
    pub h: Vec<f64>,
    /// `L_1..L_3`.
    pub layer_repr: [Vec<f64>; DEPTH],
    pub local_logits: [Vec<f64>; DEPTH],
    pub global_logits: [Vec<f64>; DEPTH],
    pub probs: [Vec<f64>; DEPTH],
    tree: TreeCache,
}

impl HtcOutput {
    pub fn predicted(&self) -> [usize; DEPTH] {
        std::array::from_fn(|l| argmax(&self.probs[l]))
    }

    /// `Σ_l -ln P_l[target_l]`, computed stably from the logits.
    pub fn loss(&self, targets: &[usize; DEPTH]) -> f64 {
        (0..DEPTH)
            .map(|l| {
                let s: Vec<f64> = self.local_logits[l]
                    .iter()
                    .zip(&self.global_logits[l])
                    .map(|(a, b)| a + b)
                    .collect();
                log_sum_exp(&s) - s[targets[l]]
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TreeCache {
    /// Per parent layer (0 = layer 1, 1 = layer 2): child means and
    /// pre-activations of each node.
    means: [Vec<Vec<f64>>; 2],
    pre: [Vec<Vec<f64>>; 2],
    /// `g_1 ⊕ g_2 ⊕ g_3`.
    pooled: Vec<f64>,
}

/// Label-attention stack: returns `(L_l, local logits)` per layer.
pub fn local_forward(h: &[f64], params: &HtcParams) -> Result<([Vec<f64>; DEPTH], [Vec<f64>; DEPTH]), HtcError> {
    if h.len() != params.d {
        return Err(HtcError::ShapeMismatch(format!("H has {} values, expected {}", h.len(), params.d)));
    }
    let mut reprs: [Vec<f64>; DEPTH] = Default::default();
    for l in 0..DEPTH {
        reprs[l] = if l == 0 {
            params.w1[0].affine(h, &params.b1[0])
        } else {
            let x: Vec<f64> = h.iter().chain(&reprs[l - 1]).copied().collect();
            params.w1[l].affine(&x, &params.b1[l])
        };
    }
    let logits = std::array::from_fn(|l| params.w2[l].affine(&reprs[l], &params.b2[l]));
    Ok((reprs, logits))
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, d: usize) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    let mut n = 0usize;
    for r in rows {
        tensor::add_into(&mut acc, r);
        n += 1;
    }
    acc.iter_mut().for_each(|v| *v /= n as f64);
    acc
}

fn tree_forward(h: &[f64], params: &HtcParams, shape: &TreeShape) -> ([Vec<f64>; DEPTH], TreeCache) {
    let d = params.d;
    let leaves: Vec<Vec<f64>> = vec![h.to_vec(); shape.sizes[2]];

    // Layer 2 from leaves, then layer 1 from layer 2.
    let mut means: [Vec<Vec<f64>>; 2] = Default::default();
    let mut pre: [Vec<Vec<f64>>; 2] = Default::default();
    let mut emb: [Vec<Vec<f64>>; 2] = Default::default();
    for p in [1usize, 0] {
        let below: &Vec<Vec<f64>> = if p == 1 { &leaves } else { &emb[1] };
        let m: Vec<Vec<f64>> = shape.children[p]
            .iter()
            .map(|kids| mean_of(kids.iter().map(|&k| &below[k]), d))
            .collect();
        let u: Vec<Vec<f64>> = m.iter().map(|mv| params.agg[p].affine(mv, &params.agg_bias[p])).collect();
        emb[p] = u.iter().cloned().map(relu).collect();
        means[p] = m;
        pre[p] = u;
    }
    let pooled: Vec<f64> = [&emb[0], &emb[1], &leaves]
        .into_iter()
        .flat_map(|nodes| mean_of(nodes.iter(), d))
        .collect();
    let all = params.wg.affine(&pooled, &params.bg);
    let split = std::array::from_fn(|l| all[shape.offset(l)..shape.offset(l) + shape.sizes[l]].to_vec());
    (split, TreeCache { means, pre, pooled })
}

/// Tree-encoder logits per layer.
pub fn global_forward(h: &[f64], params: &HtcParams, shape: &TreeShape) -> Result<[Vec<f64>; DEPTH], HtcError> {
    if h.len() != params.d {
        return Err(HtcError::ShapeMismatch(format!("H has {} values, expected {}", h.len(), params.d)));
    }
    params.check_shapes(shape)?;
    Ok(tree_forward(h, params, shape).0)
}

/// Full forward pass from a precomputed representation `H`.
pub fn forward_repr(h: &[f64], params: &HtcParams, shape: &TreeShape) -> Result<HtcOutput, HtcError> {
    params.check_shapes(shape)?;
    let (layer_repr, local_logits) = local_forward(h, params)?;
    let (global_logits, tree) = tree_forward(h, params, shape);
    let probs = std::array::from_fn(|l| {
        let s: Vec<f64> = local_logits[l].iter().zip(&global_logits[l]).map(|(a, b)| a + b).collect();
        softmax(&s)
    });
    Ok(HtcOutput {
        h: h.to_vec(),
        layer_repr,
        local_logits,
        global_logits,
        probs,
        tree,
    })
}

/// Embeds `text` with the frozen encoder, then runs [`forward_repr`].
pub fn forward(
    text: &str,
    embedder: &dyn crate::retrieval::Embedder,
    params: &HtcParams,
    shape: &TreeShape,
) -> Result<HtcOutput, HtcError> {
    if embedder.dim() != params.d {
        return Err(HtcError::ShapeMismatch(format!(
            "embedder dimension {} but model dimension {}",
            embedder.dim(),
            params.d
        )));
    }
    let h = embedder.embed(text)?;
    forward_repr(h.values(), params, shape)
}

fn check_targets(targets: &[usize; DEPTH], shape: &TreeShape) -> Result<(), HtcError> {
    for l in 0..DEPTH {
        if targets[l] >= shape.sizes[l] {
            return Err(HtcError::InvalidTarget {
                layer: l + 1,
                index: targets[l],
                size: shape.sizes[l],
            });
        }
    }
    Ok(())
}

/// Loss and gradients for one sample, added into `grads`.
pub fn accumulate_grads(
    out: &HtcOutput,
    targets: &[usize; DEPTH],
    params: &HtcParams,
    shape: &TreeShape,
    grads: &mut HtcParams,
) -> f64 {
    let d = params.d;
    // dLoss/d(local_l + global_l) = P_l - onehot(t_l)
    let ds: [Vec<f64>; DEPTH] = std::array::from_fn(|l| {
        let mut g = out.probs[l].clone();
        g[targets[l]] -= 1.0;
        g
    });

    // Label-attention stack.
    let mut d_repr: [Vec<f64>; DEPTH] = std::array::from_fn(|l| {
        grads.w2[l].add_outer(&out.layer_repr[l], &ds[l]);
        tensor::add_into(&mut grads.b2[l], &ds[l]);
        params.w2[l].back(&ds[l])
    });
    for l in (0..DEPTH).rev() {
        let g = std::mem::take(&mut d_repr[l]);
        if l == 0 {
            grads.w1[0].add_outer(&out.h, &g);
        } else {
            let x: Vec<f64> = out.h.iter().chain(&out.layer_repr[l - 1]).copied().collect();
            grads.w1[l].add_outer(&x, &g);
            let dx = params.w1[l].back(&g);
            tensor::add_into(&mut d_repr[l - 1], &dx[d..]);
        }
        tensor::add_into(&mut grads.b1[l], &g);
    }

    // Tree encoder.
    let dglob: Vec<f64> = ds.iter().flatten().copied().collect();
    grads.wg.add_outer(&out.tree.pooled, &dglob);
    tensor::add_into(&mut grads.bg, &dglob);
    let dpooled = params.wg.back(&dglob);

    let mut d_emb2: Vec<Vec<f64>> = {
        let n2 = shape.sizes[1] as f64;
        vec![dpooled[d..2 * d].iter().map(|v| v / n2).collect(); shape.sizes[1]]
    };
    let n1 = shape.sizes[0] as f64;
    let d_emb1: Vec<f64> = dpooled[..d].iter().map(|v| v / n1).collect();
    for (p, kids) in shape.children[0].iter().enumerate() {
        let du: Vec<f64> = d_emb1
            .iter()
            .zip(&out.tree.pre[0][p])
            .map(|(g, u)| if *u > 0.0 { *g } else { 0.0 })
            .collect();
        grads.agg[0].add_outer(&out.tree.means[0][p], &du);
        tensor::add_into(&mut grads.agg_bias[0], &du);
        let dm = params.agg[0].back(&du);
        let share = 1.0 / kids.len() as f64;
        for &k in kids {
            for (a, v) in d_emb2[k].iter_mut().zip(&dm) {
                *a += v * share;
            }
        }
    }
    for (p, g) in d_emb2.iter().enumerate() {
        let du: Vec<f64> = g
            .iter()
            .zip(&out.tree.pre[1][p])
            .map(|(g, u)| if *u > 0.0 { *g } else { 0.0 })
            .collect();
        grads.agg[1].add_outer(&out.tree.means[1][p], &du);
        tensor::add_into(&mut grads.agg_bias[1], &du);
        // Leaves carry the frozen H; nothing further to update.
    }

    out.loss(targets)
}

/// Mean loss over `batch` and the matching mean gradients.
pub fn loss_and_grads(
    batch: &[(Vec<f64>, [usize; DEPTH])],
    params: &HtcParams,
    shape: &TreeShape,
) -> Result<(f64, HtcParams), HtcError> {
    if batch.is_empty() {
        return Err(HtcError::EmptyDataset);
    }
    let mut grads = HtcParams::zeros(params.d, shape);
    let mut loss = 0.0;
    for (h, t) in batch {
        check_targets(t, shape)?;
        let out = forward_repr(h, params, shape)?;
        loss += accumulate_grads(&out, t, params, shape, &mut grads);
    }
    let scale = 1.0 / batch.len() as f64;
    for t in grads.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, grads))
}
