// Validate a knowledge base and compress its representative queries into
// short, unique generation targets.

use std::error::Error;

use clara::bench::{BenchSpec, Benchmark};
use clara::symboltune::{compress_all, compress_label, cross_lingual_source, CompressOptions, SourceMode};
use clara::taxonomy::Intent;
use clara::HashingEmbedder;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let embedder = HashingEmbedder::default();

    let one = compress_label("Request to Cancel Order", &embedder, 2, 0.05)?;
    println!(
        "{:?} -> {:?} (compactness {:.3}, divergence {:.3})",
        one.original, one.compressed, one.compactness, one.divergence
    );

    let local = Intent {
        id: "ID-1".into(),
        title: "Cara membatalkan pesanan".into(),
        category_path: vec!["Order".into(), "Order".into(), "Cancellation".into()],
        rep_query: "Cara membatalkan pesanan saya".into(),
        compressed_label: None,
        language: "id".into(),
    };
    println!("english source: {:?}", cross_lingual_source(&local, SourceMode::EnglishCategory));

    let bench = Benchmark::generate(&BenchSpec::default())?;
    let (kb, report) = compress_all(&bench.taxonomy, &embedder, CompressOptions::default())?;
    println!("{} intents, mean {:.2} words", kb.len(), report.mean_words());
    for it in kb.intents().iter().take(6) {
        println!("  {}  {:<28} -> {}", it.id, it.rep_query, it.surface_label());
    }
    for c in &report.collisions {
        println!("  collision on {:?} among {:?}", c.label, c.intents);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
