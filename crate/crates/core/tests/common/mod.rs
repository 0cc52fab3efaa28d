// Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use clara::htc::{HtcParams, Matrix, TreeShape};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Ratcliff-Obershelp by brute force: scan every start pair for the longest
/// run, keep the first one found in (i, j) order, recurse on both sides.
pub fn reference_gestalt(a: &str, b: &str) -> f64 {
    fn matches(a: &[char], b: &[char]) -> usize {
        let mut best = (0, 0, 0);
        for i in 0..a.len() {
            for j in 0..b.len() {
                let mut k = 0;
                while i + k < a.len() && j + k < b.len() && a[i + k] == b[j + k] {
                    k += 1;
                }
                if k > best.2 {
                    best = (i, j, k);
                }
            }
        }
        let (i, j, k) = best;
        if k == 0 {
            return 0;
        }
        k + matches(&a[..i], &b[..j]) + matches(&a[i + k..], &b[j + k..])
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * matches(&a, &b) as f64 / (a.len() + b.len()) as f64
}

/// Short strings over a small alphabet so that matches are common.
pub fn random_string(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'c', 'd', ' ', 'e', 'O', 'é'];
    let n = rng.gen_range(0..=max_len);
    (0..n).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
}

/// A random three-level tree with at most `max_nodes` nodes, described by
/// parent indices.
pub struct RandomTree {
    pub parents2: Vec<usize>,
    pub parents3: Vec<usize>,
    pub n1: usize,
}

impl RandomTree {
    pub fn generate(rng: &mut ChaCha8Rng, max_nodes: usize) -> Self {
        loop {
            let n1 = rng.gen_range(1..=3);
            let mut parents2 = Vec::new();
            for p in 0..n1 {
                for _ in 0..rng.gen_range(1..=2) {
                    parents2.push(p);
                }
            }
            let mut parents3 = Vec::new();
            for p in 0..parents2.len() {
                for _ in 0..rng.gen_range(1..=3) {
                    parents3.push(p);
                }
            }
            if n1 + parents2.len() + parents3.len() <= max_nodes {
                return RandomTree { parents2, parents3, n1 };
            }
        }
    }

    pub fn children(parents: &[usize], n: usize) -> Vec<Vec<usize>> {
        let mut c = vec![Vec::new(); n];
        for (child, &p) in parents.iter().enumerate() {
            c[p].push(child);
        }
        c
    }

    pub fn shape(&self) -> TreeShape {
        TreeShape::new(
            [self.n1, self.parents2.len(), self.parents3.len()],
            [
                Self::children(&self.parents2, self.n1),
                Self::children(&self.parents3, self.parents2.len()),
            ],
        )
        .unwrap()
    }
}

/// Parameters with every entry, biases included, drawn from U(-1, 1).
pub fn random_params(rng: &mut ChaCha8Rng, d: usize, shape: &TreeShape) -> HtcParams {
    let mut p = HtcParams::zeros(d, shape);
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    p
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn times(x: &[f64], m: &Matrix, b: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    for (c, o) in out.iter_mut().enumerate() {
        for (r, xv) in x.iter().enumerate() {
            *o += xv * m.data[r * m.cols + c];
        }
    }
    out
}

/// Label-attention logits written out layer by layer.
pub fn reference_local(h: &[f64], p: &HtcParams) -> [Vec<f64>; 3] {
    let l1 = times(h, &p.w1[0], &p.b1[0]);
    let x2: Vec<f64> = h.iter().chain(l1.iter()).copied().collect();
    let l2 = times(&x2, &p.w1[1], &p.b1[1]);
    let x3: Vec<f64> = h.iter().chain(l2.iter()).copied().collect();
    let l3 = times(&x3, &p.w1[2], &p.b1[2]);
    [
        times(&l1, &p.w2[0], &p.b2[0]),
        times(&l2, &p.w2[1], &p.b2[1]),
        times(&l3, &p.w2[2], &p.b2[2]),
    ]
}

/// Tree-encoder logits by recursive node evaluation.
pub fn reference_global(h: &[f64], p: &HtcParams, tree: &RandomTree) -> [Vec<f64>; 3] {
    let kids2 = RandomTree::children(&tree.parents2, tree.n1);
    let kids3 = RandomTree::children(&tree.parents3, tree.parents2.len());
    fn node(layer: usize, idx: usize, h: &[f64], p: &HtcParams, kids: [&Vec<Vec<usize>>; 2]) -> Vec<f64> {
        if layer == 3 {
            return h.to_vec();
        }
        let children = &kids[layer - 1][idx];
        let mut mean = vec![0.0; h.len()];
        for &c in children {
            for (m, v) in mean.iter_mut().zip(node(layer + 1, c, h, p, kids)) {
                *m += v / children.len() as f64;
            }
        }
        times(&mean, &p.agg[layer - 1], &p.agg_bias[layer - 1])
            .into_iter()
            .map(|v| if v > 0.0 { v } else { 0.0 })
            .collect()
    }
    let sizes = [tree.n1, tree.parents2.len(), tree.parents3.len()];
    let mut pooled = Vec::new();
    for layer in 1..=3 {
        let mut mean = vec![0.0; h.len()];
        for i in 0..sizes[layer - 1] {
            for (m, v) in mean.iter_mut().zip(node(layer, i, h, p, [&kids2, &kids3])) {
                *m += v;
            }
        }
        pooled.extend(mean.into_iter().map(|v| v / sizes[layer - 1] as f64));
    }
    let all = times(&pooled, &p.wg, &p.bg);
    let (a, rest) = all.split_at(sizes[0]);
    let (b, c) = rest.split_at(sizes[1]);
    [a.to_vec(), b.to_vec(), c.to_vec()]
}

/// Relative error with a floor: gradients below 1e-5 are compared on an
/// absolute scale, since central differences carry ~1e-10 rounding noise.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// Largest relative error between analytic gradients and central finite
/// differences of the batch loss.
pub fn max_gradient_error(
    batch: &[(Vec<f64>, [usize; 3])],
    params: &HtcParams,
    shape: &TreeShape,
    step: f64,
) -> f64 {
    let (_, grads) = clara::htc::loss_and_grads(batch, params, shape).unwrap();
    let analytic: Vec<f64> = grads.tensors().concat();
    let mut worst = 0.0f64;
    let mut flat = 0;
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let len = params.tensors()[t].len();
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t][i] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[t][i] -= step;
            let lp = clara::htc::loss_and_grads(batch, &plus, shape).unwrap().0;
            let lm = clara::htc::loss_and_grads(batch, &minus, shape).unwrap().0;
            let numeric = (lp - lm) / (2.0 * step);
            worst = worst.max(rel_err(analytic[flat], numeric));
            flat += 1;
        }
    }
    worst
}

pub fn random_instance(seed: u64) -> (usize, RandomTree, HtcParams, Vec<(Vec<f64>, [usize; 3])>) {
    let mut r = rng(seed);
    let d = r.gen_range(2..=8);
    let tree = RandomTree::generate(&mut r, 15);
    let shape = tree.shape();
    let params = random_params(&mut r, d, &shape);
    let batch = (0..2)
        .map(|_| {
            let h = random_vec(&mut r, d);
            let t = [
                r.gen_range(0..shape.sizes[0]),
                r.gen_range(0..shape.sizes[1]),
                r.gen_range(0..shape.sizes[2]),
            ];
            (h, t)
        })
        .collect();
    (d, tree, params, batch)
}
