//! One line per acceptance criterion. Run with `--nocapture` to see them.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use clara::bench::{lift_experiment, BenchSpec, Benchmark, LiftConfig};
use clara::corpus::estimate_transitions;
use clara::eval::{consistency_precision, gold_map, resolution_rate, scsat, ReplayRecord};
use clara::htc::{forward_repr, HtcParams, TreeShape};
use clara::llm::{GoldOracleBackend, OracleConfig};
use clara::pipeline::{gestalt_similarity, Labeler};
use clara::symboltune::{compress_all, compress_label, compression_objective, subsequences, CompressOptions};
use clara::{Embedder, HashingEmbedder, Intent, RetrievalIndex, Taxonomy};
use common::*;
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn gestalt_equivalence() -> Outcome {
    let mut r = rng(1001);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let a = random_string(&mut r, 16);
        let b = random_string(&mut r, 16);
        if gestalt_similarity(&a, &b).to_bits() != reference_gestalt(&a, &b).to_bits() {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(mismatches == 0, format!("{mismatches} of 1000 pairs differ"))?;
    ensure(secs < 5.0, format!("took {secs:.2}s"))?;
    Ok(format!("1000/1000 identical, {secs:.3}s"))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (d, tree, params, batch) = random_instance(2000 + seed);
        let shape = tree.shape();
        ensure(d <= 8 && shape.node_count() <= 15, "instance too large")?;
        worst = worst.max(max_gradient_error(&batch, &params, &shape, 1e-5));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-4, format!("max relative error {worst:.3e}"))?;
    ensure(secs < 30.0, format!("took {secs:.2}s"))?;
    Ok(format!("max relative error {worst:.2e}, {secs:.3}s"))
}

fn normalization_and_shapes() -> Outcome {
    let mut worst_sum = 0.0f64;
    for seed in 0..200 {
        let (d, tree, params, _) = random_instance(3000 + seed);
        let shape = tree.shape();
        let h: Vec<f64> = random_vec(&mut rng(seed), d).iter().map(|v| v * 20.0).collect();
        let out = forward_repr(&h, &params, &shape).map_err(|e| e.to_string())?;
        for l in 0..3 {
            let n = shape.sizes[l];
            ensure(out.probs[l].len() == n && out.local_logits[l].len() == n && out.global_logits[l].len() == n, "logit width")?;
            ensure(out.layer_repr[l].len() == d, "layer representation width")?;
            ensure(params.w1[l].rows == if l == 0 { d } else { 2 * d } && params.w1[l].cols == d, "W1 shape")?;
            ensure(params.w2[l].rows == d && params.w2[l].cols == n, "W2 shape")?;
            worst_sum = worst_sum.max((out.probs[l].iter().sum::<f64>() - 1.0).abs());
        }
        ensure(params.wg.rows == 3 * d && params.wg.cols == shape.node_count(), "global weight shape")?;
        ensure(params.agg.iter().all(|m| m.rows == d && m.cols == d), "aggregation shape")?;
    }
    ensure(worst_sum <= 1e-9, format!("probability sum off by {worst_sum:.2e}"))?;

    let bench = Benchmark::generate(&BenchSpec::default())?;
    let shape = TreeShape::from_taxonomy(&bench.taxonomy).map_err(|e| e.to_string())?;
    let zero = HtcParams::zeros(64, &shape);
    let out = forward_repr(&HashingEmbedder::default().embed("where is my parcel").unwrap().into_inner(), &zero, &shape)
        .map_err(|e| e.to_string())?;
    for l in 0..3 {
        let u = 1.0 / shape.sizes[l] as f64;
        ensure(out.probs[l].iter().all(|p| (p - u).abs() <= 1e-12), "zero model is not uniform")?;
    }
    let want: f64 = shape.sizes.iter().map(|&n| (n as f64).ln()).sum();
    let loss = out.loss(&[0, 0, 0]);
    ensure((loss - want).abs() <= 1e-9, format!("zero-model loss {loss} vs {want}"))?;
    Ok(format!("max |ΣP-1| {worst_sum:.1e}; zero-model loss {loss:.6} = ln{}+ln{}+ln{}", shape.sizes[0], shape.sizes[1], shape.sizes[2]))
}

fn self_consistency_filter() -> Outcome {
    let start = Instant::now();
    let bench = Benchmark::generate(&BenchSpec {
        n_unlabeled: 5000,
        n_test: 10,
        ..BenchSpec::default()
    })?;
    let embedder = HashingEmbedder::default();
    let index = RetrievalIndex::build(&bench.train, &embedder).map_err(|e| e.to_string())?;
    let oracle = GoldOracleBackend::new(&bench.taxonomy, &bench.unlabeled, OracleConfig::new(0.0, 0.12, 7));
    let labeling = Labeler::new(&bench.taxonomy, &index, &embedder, &oracle)
        .seed(7)
        .label_corpus(&bench.unlabeled_view(), 4)
        .map_err(|e| e.to_string())?;
    let cp = consistency_precision(&labeling.verdicts, &gold_map(&bench.unlabeled)).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let retention = labeling.stats.retention_rate;
    let gain = cp.precision_kept - cp.accuracy_all;
    ensure(labeling.stats.total == 5000, "not every session was labelled")?;
    ensure((retention - 0.88).abs() <= 0.01, format!("retention {retention:.4}"))?;
    ensure(gain >= 0.03, format!("precision gain {gain:.4}"))?;
    ensure(secs < 120.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "retention {retention:.4}, precision {:.4} vs unfiltered {:.4} (+{:.2} pts), {secs:.1}s",
        cp.precision_kept,
        cp.accuracy_all,
        gain * 100.0
    ))
}

fn pipeline_lift() -> Outcome {
    let start = Instant::now();
    let spec = BenchSpec::default();
    ensure(spec.seed == 7 && spec.n_train == 2000 && spec.n_test == 800, "benchmark defaults changed")?;
    let bench = Benchmark::generate(&spec)?;
    ensure(bench.taxonomy.len() == 24, "expected 24 leaf intents")?;
    let report = lift_experiment(&bench, &HashingEmbedder::default(), &LiftConfig::new(7))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(report.lift >= 0.05, format!("lift {:.4}", report.lift))?;
    ensure(secs < 300.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "single-turn {:.4} -> with pseudo-labels {:.4} (+{:.2} pts), {secs:.1}s",
        report.baseline_accuracy,
        report.clara_accuracy,
        report.lift * 100.0
    ))
}

fn compression_optimality() -> Outcome {
    const WORDS: &[&str] = &["request", "to", "cancel", "order", "track", "my", "refund", "package", "change", "the", "card"];
    let e = HashingEmbedder::default();
    let mut r = rng(6006);
    for _ in 0..100 {
        let n_words = r.gen_range(2..=7);
        let words: Vec<&str> = (0..n_words).map(|_| *WORDS.choose(&mut r).unwrap()).collect();
        let label = words.join(" ");
        let n = r.gen_range(1..=n_words.min(3));
        let got = compress_label(&label, &e, n, 0.05).map_err(|x| x.to_string())?;
        let mut best = f64::INFINITY;
        for combo in subsequences(n_words, n) {
            let cand: Vec<&str> = combo.iter().map(|&i| words[i]).collect();
            best = best.min(compression_objective(&cand.join(" "), &label, &e, 0.05).unwrap().objective);
        }
        ensure((got.objective - best).abs() < 1e-12, format!("{label:?}: {} > {best}", got.objective))?;
    }
    let fig = compress_label("Request to Cancel Order", &e, 2, 0.05).map_err(|x| x.to_string())?;
    ensure(fig.compressed == "Cancel Order", format!("got {:?}", fig.compressed))?;

    for round in 0..30 {
        let intents: Vec<Intent> = (0..r.gen_range(2..40))
            .map(|i| {
                let q: Vec<&str> = (0..r.gen_range(1..6)).map(|_| *WORDS.choose(&mut r).unwrap()).collect();
                Intent {
                    id: format!("I{i:03}"),
                    title: q.join(" "),
                    category_path: vec![format!("D{}", i % 2), format!("O{}", i % 3), format!("A{}", i % 5)],
                    rep_query: q.join(" "),
                    compressed_label: None,
                    language: "en".into(),
                }
            })
            .collect();
        let kb = Taxonomy::from_intents(intents).map_err(|x| x.to_string())?;
        let (out, _) = compress_all(&kb, &e, CompressOptions::default()).map_err(|x| x.to_string())?;
        let labels: HashSet<_> = out.intents().iter().map(|i| i.compressed_label.clone()).collect();
        ensure(labels.len() == out.len(), format!("duplicate labels in fuzzed KB {round}"))?;
    }
    Ok("100/100 optimal; \"Request to Cancel Order\" -> \"Cancel Order\"; 30 fuzzed KBs unique".into())
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_clara")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let p = |name: &str| d.join(name).display().to_string();
    run_cli(&["--seed", "7", "bench", "--out-dir", &d.display().to_string()])?;
    for w in ["1", "4"] {
        run_cli(&[
            "--seed", "7", "--workers", w, "pseudo-label", "--kb", &p("kb.jsonl"), "--train", &p("train.jsonl"),
            "--sessions", &p("unlabeled.jsonl"), "--out", &p(&format!("pseudo-{w}.jsonl")),
        ])?;
        run_cli(&[
            "--seed", "7", "--workers", w, "train", "--kb", &p("kb.jsonl"), "--train", &p("train.jsonl"),
            "--pseudo", &p(&format!("pseudo-{w}.jsonl")), "--out", &p(&format!("model-{w}.json")),
        ])?;
    }
    let same = |a: &str, b: &str| -> Result<bool, String> {
        let read = |f: &str| std::fs::read(Path::new(&p(f))).map_err(|e| e.to_string());
        Ok(read(a)? == read(b)?)
    };
    ensure(same("pseudo-1.jsonl", "pseudo-4.jsonl")?, "pseudo-labels differ")?;
    ensure(same("model-1.json", "model-4.json")?, "models differ")?;
    Ok("pseudo-label and train artifacts byte-identical for 1 and 4 workers".into())
}

fn metric_formulas() -> Outcome {
    ensure(scsat(84, 16).map_err(|e| e.to_string())? == 0.84, "scsat(84,16)")?;
    let mut r = rng(8008);
    for _ in 0..200 {
        let logs: Vec<[bool; 3]> = (0..r.gen_range(1..200)).map(|_| [r.gen(), r.gen(), r.gen()]).collect();
        let records: Vec<ReplayRecord> = logs
            .iter()
            .map(|f| ReplayRecord {
                completed_flow: f[0],
                transferred: f[1],
                bad_rating: f[2],
            })
            .collect();
        let hits = logs.iter().filter(|f| f[0] && !f[1] && !f[2]).count();
        ensure(resolution_rate(&records).unwrap() == hits as f64 / logs.len() as f64, "resolution rate")?;
    }
    for _ in 0..200 {
        let logs: Vec<Vec<String>> = (0..r.gen_range(1..50))
            .map(|_| (0..r.gen_range(1..7)).map(|_| format!("I{}", r.gen_range(0..8))).collect())
            .collect();
        let smoothing = if r.gen_bool(0.3) { 0.0 } else { r.gen_range(0.0..2.0) };
        let tm = estimate_transitions(&logs, smoothing, 6, None).map_err(|e| e.to_string())?;
        for row in &tm.trans {
            ensure((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9, "transition row does not sum to 1")?;
        }
    }
    Ok("scsat(84,16)=0.84; 200 fuzzed replay logs; 200 fuzzed transition matrices".into())
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gestalt oracle equivalence", gestalt_equivalence),
        ("gradient correctness", gradient_correctness),
        ("normalization and shapes", normalization_and_shapes),
        ("self-consistency filter", self_consistency_filter),
        ("pipeline lift", pipeline_lift),
        ("compression optimality", compression_optimality),
        ("determinism across workers", determinism),
        ("metric formulas", metric_formulas),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                println!("criterion {} FAIL {name}: {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
