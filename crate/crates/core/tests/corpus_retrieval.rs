mod common;

use clara::corpus::{estimate_transitions, synthesize_sessions, LabeledExample, Session};
use clara::retrieval::{cosine, retrieve, session_embedding, Embedder, HashingEmbedder, RetrievalIndex};
use proptest::prelude::*;
use rand::Rng;

fn example(q: &str, id: &str) -> LabeledExample {
    LabeledExample {
        query: q.into(),
        intent_id: id.into(),
        language: "en".into(),
    }
}

const CHAIN: [[f64; 4]; 4] = [
    [0.1, 0.6, 0.2, 0.1],
    [0.3, 0.1, 0.5, 0.1],
    [0.25, 0.25, 0.25, 0.25],
    [0.7, 0.0, 0.1, 0.2],
];

fn walk(r: &mut impl Rng, len: usize) -> Vec<String> {
    let draw = |r: &mut dyn rand::RngCore, p: &[f64]| {
        let u: f64 = r.gen();
        let mut acc = 0.0;
        for (i, v) in p.iter().enumerate() {
            acc += v;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    };
    let mut s = draw(r, &[0.25; 4]);
    let mut out = vec![format!("S{s}")];
    while out.len() < len {
        s = draw(r, &CHAIN[s]);
        out.push(format!("S{s}"));
    }
    out
}

#[test]
fn four_state_chain_is_recovered() {
    let mut r = common::rng(3);
    let logs: Vec<Vec<String>> = (0..4000).map(|_| walk(&mut r, 6)).collect();
    let tm = estimate_transitions(&logs, 0.0, 6, None).unwrap();
    assert_eq!(tm.states, vec!["S0", "S1", "S2", "S3"]);
    for i in 0..4 {
        for j in 0..4 {
            assert!((tm.trans[i][j] - CHAIN[i][j]).abs() < 0.02, "P[{i}][{j}] = {}", tm.trans[i][j]);
        }
    }
    assert_eq!(tm.length_dist.get(&6), Some(&1.0));
}

#[test]
fn synthesized_two_step_marginal_matches_matrix_square() {
    let mut r = common::rng(4);
    let logs: Vec<Vec<String>> = (0..3000).map(|_| walk(&mut r, 3)).collect();
    let tm = estimate_transitions(&logs, 0.5, 6, None).unwrap();
    let corpus: Vec<LabeledExample> = (0..4).map(|i| example(&format!("query {i}"), &format!("S{i}"))).collect();
    let sessions = synthesize_sessions(&corpus, &tm, 20_000, 9).unwrap();

    let n = tm.states.len();
    let mut want = vec![0.0; n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                want[c] += tm.start_dist[a] * tm.trans[a][b] * tm.trans[b][c];
            }
        }
    }
    let mut seen = vec![0.0; n];
    for s in &sessions {
        assert_eq!(s.turns.len(), 3);
        let third = s.gold_intent.as_deref().unwrap();
        seen[tm.state_index(third).unwrap()] += 1.0 / sessions.len() as f64;
    }
    for c in 0..n {
        assert!((seen[c] - want[c]).abs() < 0.015, "state {c}: {} vs {}", seen[c], want[c]);
    }
}

#[test]
fn single_turn_logs_do_not_shape_length_distribution() {
    let logs = vec![vec!["A".to_string()], vec!["A".into(), "B".into(), "A".into()]];
    let tm = estimate_transitions(&logs, 1.0, 6, None).unwrap();
    assert_eq!(tm.length_dist.len(), 1);
    assert_eq!(tm.length_dist.get(&3), Some(&1.0));
}

proptest! {
    #[test]
    fn transition_rows_are_stochastic(
        logs in prop::collection::vec(prop::collection::vec(0u8..6, 1..8), 1..40),
        smoothing in prop_oneof![Just(0.0), 0.01f64..3.0],
    ) {
        let logs: Vec<Vec<String>> = logs.iter().map(|l| l.iter().map(|s| format!("I{s}")).collect()).collect();
        let tm = estimate_transitions(&logs, smoothing, 6, None).unwrap();
        prop_assert!(tm.is_stochastic(1e-9));
        for row in &tm.trans {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn search_agrees_with_exhaustive_scan(
        queries in prop::collection::vec("[a-e ]{1,12}", 1..25),
        probe in "[a-e ]{1,12}",
        k in 1usize..10,
    ) {
        let embedder = HashingEmbedder::new(32);
        let examples: Vec<LabeledExample> = queries
            .iter()
            .enumerate()
            .map(|(i, q)| example(&format!("{q}x"), &format!("I{i}")))
            .collect();
        let index = RetrievalIndex::build(&examples, &embedder).unwrap();
        let session = Session::new("p", vec![format!("{probe}y")]);
        let got = retrieve(&index, &session, &embedder, k).unwrap();

        let q = session_embedding(&session, &embedder).unwrap();
        let mut scan: Vec<(usize, f64)> = examples
            .iter()
            .enumerate()
            .map(|(i, e)| (i, cosine(&q, &embedder.embed(&e.query).unwrap()).unwrap()))
            .collect();
        scan.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scan.truncate(k);
        prop_assert_eq!(got.len(), scan.len());
        for (d, (i, s)) in got.iter().zip(&scan) {
            prop_assert_eq!(&d.example, &examples[*i]);
            prop_assert!((d.score - s).abs() < 1e-12);
        }
    }
}
