mod common;

use std::collections::HashSet;

use clara::symboltune::{compress_all, compress_label, compression_objective, CompressOptions, SourceMode};
use clara::{Embedder, HashingEmbedder, Intent, Taxonomy};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "request", "to", "cancel", "order", "track", "package", "refund", "my", "change", "address", "payment", "card",
    "voucher", "seller", "return", "item", "the", "delivery", "status", "update",
];

fn random_label(r: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = r.gen_range(min..=max);
    (0..n).map(|_| *WORDS.choose(r).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Every order-preserving choice of `n` positions, by recursion.
fn choose(m: usize, n: usize, from: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if acc.len() == n {
        out.push(acc.clone());
        return;
    }
    for i in from..m {
        acc.push(i);
        choose(m, n, i + 1, acc, out);
        acc.pop();
    }
}

fn candidates(label: &str, n: usize) -> Vec<String> {
    let words: Vec<&str> = label.split_whitespace().collect();
    let mut idx = Vec::new();
    choose(words.len(), n, 0, &mut Vec::new(), &mut idx);
    idx.iter()
        .map(|c| c.iter().map(|&i| words[i]).collect::<Vec<_>>().join(" "))
        .collect()
}

fn brute_force_objective(label: &str, n: usize, e: &dyn Embedder, alpha: f64) -> f64 {
    candidates(label, n)
        .iter()
        .map(|c| compression_objective(c, label, e, alpha).unwrap().objective)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn compress_label_attains_brute_force_minimum() {
    let e = HashingEmbedder::default();
    let mut r = common::rng(21);
    for _ in 0..100 {
        let label = random_label(&mut r, 2, 7);
        let n = r.gen_range(1..=label.split_whitespace().count().min(3));
        let got = compress_label(&label, &e, n, 0.05).unwrap();
        let best = brute_force_objective(&label, n, &e, 0.05);
        assert!((got.objective - best).abs() < 1e-12, "{label:?} n={n}");
        assert_eq!(got.word_count, n);
        assert!((got.objective - got.compactness - got.divergence).abs() < 1e-15);
        assert!((0.0..=2.0).contains(&got.divergence));
    }
}

#[test]
fn figure_mapping_holds() {
    let e = HashingEmbedder::default();
    let got = compress_label("Request to Cancel Order", &e, 2, 0.05).unwrap();
    assert_eq!(got.compressed, "Cancel Order");
}

#[test]
fn larger_alpha_never_picks_longer_candidates() {
    let e = HashingEmbedder::default();
    let mut r = common::rng(22);
    for _ in 0..30 {
        let label = random_label(&mut r, 3, 6);
        let m = label.split_whitespace().count();
        let pool: Vec<String> = (1..=m).flat_map(|n| candidates(&label, n)).collect();
        let mut last = usize::MAX;
        for alpha in [0.0, 0.01, 0.05, 0.1, 0.3, 1.0] {
            let best = pool
                .iter()
                .map(|c| compression_objective(c, &label, &e, alpha).unwrap())
                .min_by(|a, b| a.objective.total_cmp(&b.objective))
                .unwrap();
            assert!(best.word_count <= last);
            last = best.word_count;
        }
    }
}

fn fuzzed_kb(r: &mut ChaCha8Rng, n: usize) -> Taxonomy {
    let intents = (0..n)
        .map(|i| Intent {
            id: format!("I{i:03}"),
            title: random_label(r, 1, 5),
            category_path: vec![
                format!("D{}", r.gen_range(0..2)),
                format!("O{}", r.gen_range(0..3)),
                format!("A{}", r.gen_range(0..4)),
            ],
            rep_query: random_label(r, 1, 6),
            compressed_label: None,
            language: "en".into(),
        })
        .collect();
    Taxonomy::from_intents(intents).unwrap()
}

#[test]
fn compressed_labels_are_unique_on_fuzzed_kbs() {
    let e = HashingEmbedder::default();
    let mut r = common::rng(23);
    for round in 0..40 {
        let n = r.gen_range(2..40);
        let kb = fuzzed_kb(&mut r, n);
        let source = if round % 2 == 0 { SourceMode::RepQuery } else { SourceMode::LocalTitle };
        let opts = CompressOptions {
            source,
            ..CompressOptions::default()
        };
        let (out, _) = compress_all(&kb, &e, opts).unwrap();
        let labels: Vec<&str> = out.intents().iter().map(|i| i.compressed_label.as_deref().unwrap()).collect();
        let unique: HashSet<&&str> = labels.iter().collect();
        assert_eq!(unique.len(), labels.len(), "{labels:?}");

        let (again, _) = compress_all(&out, &e, opts).unwrap();
        assert_eq!(again.intents(), out.intents());
    }
}

#[test]
fn fifty_intent_kb_stays_short() {
    let e = HashingEmbedder::default();
    let bench = clara::bench::Benchmark::generate(&clara::bench::BenchSpec {
        domains: 3,
        objects: 3,
        actions: 6,
        max_intents: Some(50),
        n_train: 10,
        n_unlabeled: 0,
        n_test: 0,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(bench.taxonomy.len(), 50);
    let (_, report) = compress_all(&bench.taxonomy, &e, CompressOptions::default()).unwrap();
    assert!(report.mean_words() <= 4.0);
}
