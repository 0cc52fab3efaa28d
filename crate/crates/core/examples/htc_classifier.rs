// Train the hierarchical classifier on single-turn queries, compare input
// strategies on multi-turn sessions, and round-trip the model file.

use std::error::Error;

use clara::bench::{BenchSpec, Benchmark};
use clara::htc::{HtcModel, Strategy, TrainConfig};
use clara::HashingEmbedder;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let bench = Benchmark::generate(&BenchSpec {
        n_train: 600,
        n_test: 200,
        ..BenchSpec::default()
    })?;
    let embedder = HashingEmbedder::default();
    let data: Vec<(String, String)> = bench.train.iter().map(|e| (e.query.clone(), e.intent_id.clone())).collect();
    let (train, val) = data.split_at(540);
    let cfg = TrainConfig {
        epochs: 30,
        seed: 7,
        workers: 2,
        ..TrainConfig::default()
    };
    let (model, trained) = HtcModel::fit(&bench.taxonomy, train, val, &embedder, &cfg)?;
    for h in trained.history.iter().step_by(5) {
        println!(
            "epoch {:>3}  train loss {:.4}  val loss {:.4}  val acc {:.3}",
            h.epoch,
            h.train_loss,
            h.val_loss.unwrap_or(f64::NAN),
            h.val_accuracy.unwrap_or(f64::NAN)
        );
    }

    for strategy in Strategy::ALL {
        let hits = bench
            .test
            .iter()
            .filter(|s| model.predict(s, strategy, &embedder).map(|p| Some(p.intent_id) == s.gold_intent).unwrap_or(false))
            .count();
        println!("{strategy:<17} accuracy {:.3}", hits as f64 / bench.test.len() as f64);
    }

    let p = model.predict_text("i want to cancel my package", &embedder)?;
    println!("{:?} -> {} ({:.3})", p.class_names, p.intent_id, p.confidence);

    let path = std::env::temp_dir().join(format!("htc-example-{}.json", std::process::id()));
    model.save(&path)?;
    let back = HtcModel::load(&path)?;
    std::fs::remove_file(&path)?;
    println!("reloaded model identical: {}", back == model);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
