// End-to-end run on the synthetic benchmark: pseudo-label unlabeled
// sessions with the oracle backend, train a single-turn baseline and a
// model that also sees the pseudo-labels, and compare them on multi-turn
// test sessions.

use std::error::Error;
use std::time::Instant;

use clara::bench::{lift_experiment, BenchSpec, Benchmark, LiftConfig};
use clara::HashingEmbedder;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let seed = 7;
    let started = Instant::now();
    let bench = Benchmark::generate(&BenchSpec {
        seed,
        ..BenchSpec::default()
    })?;
    let report = lift_experiment(&bench, &HashingEmbedder::default(), &LiftConfig::new(seed))?;

    println!("intents            {}", bench.taxonomy.len());
    println!("single-turn train  {}", bench.train.len());
    println!("unlabeled sessions {}", bench.unlabeled.len());
    println!("test sessions      {}", report.test_sessions);
    println!("retention          {:.4}", report.filter.retention_rate);
    println!(
        "label precision    {:.4} (unfiltered {:.4})",
        report.precision.precision_kept, report.precision.accuracy_all
    );
    println!("baseline           {:.4}", report.baseline_accuracy);
    println!("baseline + concat  {:.4}", report.baseline_concat_accuracy);
    println!("with pseudo-labels {:.4}", report.clara_accuracy);
    println!("lift               {:+.4}", report.lift);
    println!("elapsed            {:.1?}", started.elapsed());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
