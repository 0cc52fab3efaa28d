// Retrieve the nearest single-turn demonstrations for a multi-turn session.

use std::error::Error;

use clara::bench::{BenchSpec, Benchmark};
use clara::retrieval::retrieve;
use clara::{HashingEmbedder, RetrievalIndex};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let bench = Benchmark::generate(&BenchSpec::default())?;
    let embedder = HashingEmbedder::default();
    let index = RetrievalIndex::build(&bench.train, &embedder)?;

    let session = &bench.test[0];
    println!("session: {}", session.turns.join(" || "));
    for d in retrieve(&index, session, &embedder, 5)? {
        println!("  {:.3}  {:<50} {}", d.score, d.example.query, d.example.intent_id);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
