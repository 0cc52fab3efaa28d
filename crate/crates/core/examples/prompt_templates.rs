// Render the four prompt templates for one session and show how the
// demonstration order changes between orderings.

use std::error::Error;

use clara::bench::{BenchSpec, Benchmark};
use clara::promptgen::{demo_queries, render, Ordering, TemplateKind};
use clara::retrieval::retrieve;
use clara::symboltune::{compress_all, CompressOptions};
use clara::{HashingEmbedder, RetrievalIndex};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let bench = Benchmark::generate(&BenchSpec::default())?;
    let embedder = HashingEmbedder::default();
    let (kb, _) = compress_all(&bench.taxonomy, &embedder, CompressOptions::default())?;
    let index = RetrievalIndex::build(&bench.train, &embedder)?;
    let session = &bench.test[3];
    let demos = retrieve(&index, session, &embedder, 3)?;

    for template in TemplateKind::ALL {
        let p = render(template, &demos, session, Ordering::DESCENDING, &kb)?;
        println!("===== {template} ({} label tokens)", p.label_map.len());
        println!("{}", p.text);
    }
    for ordering in [Ordering::ASCENDING, Ordering::DESCENDING, Ordering::random(3)] {
        let p = render(TemplateKind::Base, &demos, session, ordering, &kb)?;
        println!("{:<10} {:?}", ordering.kind.to_string(), demo_queries(&p.messages));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
