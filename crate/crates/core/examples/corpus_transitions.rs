// Estimate an intent transition model from chat logs, synthesize multi-turn
// sessions from single-turn examples, and print per-language corpus counts
// for market-shaped corpora.

use std::error::Error;

use clara::bench::{BenchSpec, Benchmark, MARKETS};
use clara::corpus::{corpus_stats, estimate_transitions, synthesize_sessions, DEFAULT_MAX_LEN};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let bench = Benchmark::generate(&BenchSpec::default())?;
    let logs: Vec<Vec<String>> = bench.chat_logs().into_iter().map(|l| l.intent_sequence).collect();
    let tm = estimate_transitions(&logs, 0.1, DEFAULT_MAX_LEN, Some(&bench.taxonomy))?;
    println!("{} states, rows stochastic: {}", tm.states.len(), tm.is_stochastic(1e-9));
    println!("length distribution {:?}", tm.length_dist);

    for s in synthesize_sessions(&bench.train, &tm, 3, 11)? {
        println!("{} -> {:?}", s.turns.join(" || "), s.gold_intent);
    }

    println!("market lang intents train test");
    for m in MARKETS.iter().take(3) {
        let b = Benchmark::generate(&BenchSpec::for_market(m, 1000, 7))?;
        for row in corpus_stats(&b.train, &b.test, &b.taxonomy) {
            println!("{:<6} {:<4} {:>7} {:>5} {:>4}", m.code, row.lang, row.intents, row.train, row.test);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
