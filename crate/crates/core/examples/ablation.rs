// Compare self-consistency on/off and label compression modes under an
// oracle that drops characters from some answers.

use std::error::Error;

use clara::bench::{BenchSpec, Benchmark};
use clara::eval::{run_ablation, AblationConfig};
use clara::llm::{Backend, GoldOracleBackend, OracleConfig};
use clara::symboltune::CompressionMode;
use clara::{HashingEmbedder, Taxonomy};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let bench = Benchmark::generate(&BenchSpec {
        n_unlabeled: 500,
        ..BenchSpec::default()
    })?;
    let embedder = HashingEmbedder::default();
    let sessions = bench.unlabeled.clone();
    let oracle = OracleConfig::new(0.0, 0.12, 7).with_typos(0.3);
    let factory = |t: &Taxonomy| -> Box<dyn Backend> { Box::new(GoldOracleBackend::new(t, &sessions, oracle)) };
    let cfg = AblationConfig {
        compression: vec![
            CompressionMode::None,
            CompressionMode::NWord { n: 2 },
            CompressionMode::SymbolsOnly,
            CompressionMode::LongTarget,
        ],
        seed: 7,
        ..AblationConfig::default()
    };
    let report = run_ablation(&cfg, &bench.taxonomy, &bench.train, &sessions, &embedder, &factory)?;
    print!("{}", report.to_markdown());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
