// Pseudo-label unlabeled sessions under three demonstration orderings with
// the gold oracle backend and keep only unanimous labels.

use std::error::Error;

use clara::bench::{BenchSpec, Benchmark};
use clara::eval::{consistency_precision, gold_map};
use clara::llm::{GoldOracleBackend, OracleConfig};
use clara::pipeline::Labeler;
use clara::{HashingEmbedder, RetrievalIndex};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let bench = Benchmark::generate(&BenchSpec {
        n_unlabeled: 2000,
        ..BenchSpec::default()
    })?;
    let embedder = HashingEmbedder::default();
    let index = RetrievalIndex::build(&bench.train, &embedder)?;
    let oracle = GoldOracleBackend::new(&bench.taxonomy, &bench.unlabeled, OracleConfig::new(0.0, 0.12, 7));

    let labeling = Labeler::new(&bench.taxonomy, &index, &embedder, &oracle)
        .k(8)
        .seed(7)
        .label_corpus(&bench.unlabeled_view(), 4)?;
    let s = &labeling.stats;
    println!("sessions {}  kept {}  discarded {}  retention {:.4}", s.total, s.kept, s.discarded, s.retention_rate);

    let cp = consistency_precision(&labeling.verdicts, &gold_map(&bench.unlabeled))?;
    println!(
        "precision over kept {:.4}  single-run accuracy {:.4}  removed {:.4}",
        cp.precision_kept, cp.accuracy_all, cp.removed_fraction
    );
    if let Some(v) = labeling.verdicts.iter().find(|v| !v.consistent) {
        println!("an inconsistent session ({}):", v.session_id);
        for r in &v.per_run {
            println!("  {:<10} {:<22} {:?}", r.ordering.to_string(), r.raw, r.resolved);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
