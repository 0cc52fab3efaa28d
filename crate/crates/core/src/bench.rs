//! Synthetic multi-turn benchmark.
//!
//! Intents are `(domain, object, action)` triples laid out as a three-level
//! category tree. Single-turn training queries always name both the object
//! and the action. Multi-turn sessions often follow up on the same object
//! with an elliptical turn ("what about cancelling it?") that names only the
//! action, so the final query alone under-determines the intent and the
//! earlier turns carry the missing object.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_validation, ChatLog, LabeledExample, Session};
use crate::eval::{self, ConsistencyPrecision};
use crate::htc::{HtcModel, Strategy, TrainConfig};
use crate::llm::{GoldOracleBackend, OracleConfig};
use crate::pipeline::{FilterStats, Labeler};
use crate::promptgen::TemplateKind;
use crate::retrieval::{Embedder, RetrievalIndex};
use crate::seed;
use crate::taxonomy::{Intent, Taxonomy};

const DOMAINS: [&str; 8] = [
    "Order",
    "Payment",
    "Shipping",
    "Account",
    "Returns",
    "Promotions",
    "Seller",
    "Wallet",
];

const OBJECTS: [[&str; 8]; 8] = [
    ["package", "parcel", "purchase", "basket", "invoice", "receipt", "bundle", "preorder"],
    ["card", "transfer", "installment", "bill", "charge", "deposit", "coupon", "credit"],
    ["courier", "pickup", "address", "shipment", "label", "locker", "route", "schedule"],
    ["password", "profile", "email", "phone", "username", "login", "avatar", "membership"],
    ["refund", "exchange", "claim", "warranty", "return", "replacement", "dispute", "complaint"],
    ["discount", "cashback", "reward", "points", "campaign", "giveaway", "bonus", "streak"],
    ["shop", "listing", "storefront", "stock", "catalog", "review", "rating", "chat"],
    ["balance", "topup", "withdrawal", "statement", "limit", "pin", "payout", "transaction"],
];

struct Action {
    name: &'static str,
    explicit: [&'static str; 4],
    elliptical: [&'static str; 3],
}

const ACTIONS: [Action; 12] = [
    Action {
        name: "Cancel",
        explicit: ["cancel my {o}", "i want to cancel the {o}", "how do i cancel my {o}", "please cancel this {o}"],
        elliptical: ["what about cancelling it", "can i call it off instead", "actually just scrap it"],
    },
    Action {
        name: "Track",
        explicit: ["track my {o}", "where is my {o} now", "how can i track the {o}", "status of my {o}"],
        elliptical: ["and where is it right now", "can you follow it for me", "any news on its whereabouts"],
    },
    Action {
        name: "Change",
        explicit: ["change my {o}", "i need to change the {o}", "how to change my {o}", "update the {o} details"],
        elliptical: ["can i edit it", "what about changing it", "i would like to amend that"],
    },
    Action {
        name: "Report",
        explicit: ["report a problem with my {o}", "my {o} has an issue", "there is something wrong with the {o}", "report my {o}"],
        elliptical: ["it seems broken", "something went wrong with it", "i want to complain about it"],
    },
    Action {
        name: "Confirm",
        explicit: ["confirm my {o}", "how do i confirm the {o}", "i want to confirm this {o}", "is my {o} confirmed"],
        elliptical: ["can you approve it", "is it finalised yet", "please make it official"],
    },
    Action {
        name: "Delete",
        explicit: ["delete my {o}", "remove the {o}", "how do i delete my {o}", "erase this {o}"],
        elliptical: ["just get rid of it", "can it be wiped", "i want it gone"],
    },
    Action {
        name: "Renew",
        explicit: ["renew my {o}", "extend the {o}", "how to renew my {o}", "i want to renew this {o}"],
        elliptical: ["can it be prolonged", "keep it going longer", "what about renewing it"],
    },
    Action {
        name: "Verify",
        explicit: ["verify my {o}", "how do i verify the {o}", "my {o} needs verification", "validate this {o}"],
        elliptical: ["is it authentic", "can you double check it", "make sure it is legit"],
    },
    Action {
        name: "Split",
        explicit: ["split my {o}", "divide the {o} in two", "can i split this {o}", "break up my {o}"],
        elliptical: ["can it be divided", "share it in parts", "separate it please"],
    },
    Action {
        name: "Reset",
        explicit: ["reset my {o}", "how do i reset the {o}", "restore the {o} to default", "i need a {o} reset"],
        elliptical: ["start it over", "can you wipe and restart it", "back to default please"],
    },
    Action {
        name: "Share",
        explicit: ["share my {o}", "send the {o} to a friend", "how to share this {o}", "forward my {o}"],
        elliptical: ["can others see it", "let my friend have it", "pass it along"],
    },
    Action {
        name: "Download",
        explicit: ["download my {o}", "get a copy of the {o}", "how do i download the {o}", "save the {o} as pdf"],
        elliptical: ["can i keep a copy", "save it offline", "export it for me"],
    },
];

const OPENERS: [&str; 5] = ["", "hi, ", "hello ", "excuse me, ", "quick question: "];
const CLOSERS: [&str; 4] = ["", " please", " asap", " thanks"];

/// Size and behaviour of a generated benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSpec {
    pub domains: usize,
    pub objects: usize,
    pub actions: usize,
    /// Leaves beyond this count are dropped; all leaves when absent.
    pub max_intents: Option<usize>,
    pub languages: Vec<String>,
    pub n_train: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    /// Chance that a follow-up turn stays on the previous object.
    pub same_object: f64,
    /// Chance that a same-object follow-up is phrased elliptically.
    pub elliptical: f64,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            domains: 2,
            objects: 3,
            actions: 4,
            max_intents: None,
            languages: vec!["en".into()],
            n_train: 2000,
            n_unlabeled: 1200,
            n_test: 800,
            same_object: 0.75,
            elliptical: 0.8,
            seed: 7,
        }
    }
}

/// One row of the per-market dataset table the benchmark shapes mimic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarketShape {
    pub code: &'static str,
    pub languages: &'static [&'static str],
    pub intents: usize,
    pub train: usize,
    pub test: usize,
}

pub const MARKETS: [MarketShape; 8] = [
    MarketShape { code: "BR", languages: &["pt"], intents: 316, train: 66_000, test: 372 },
    MarketShape { code: "ID", languages: &["id"], intents: 481, train: 161_000, test: 1145 },
    MarketShape { code: "MY", languages: &["en", "ms"], intents: 473, train: 74_000, test: 1417 },
    MarketShape { code: "PH", languages: &["en", "fil"], intents: 237, train: 33_000, test: 189 },
    MarketShape { code: "SG", languages: &["en"], intents: 360, train: 76_000, test: 737 },
    MarketShape { code: "TH", languages: &["th"], intents: 359, train: 60_000, test: 502 },
    MarketShape { code: "TW", languages: &["zh-tw"], intents: 373, train: 31_000, test: 353 },
    MarketShape { code: "VN", languages: &["vi"], intents: 389, train: 178_000, test: 525 },
];

impl BenchSpec {
    /// A market-shaped spec with the training corpus divided by `train_scale`.
    pub fn for_market(m: &MarketShape, train_scale: usize, seed: u64) -> Self {
        let actions = ACTIONS.len();
        let objects = OBJECTS[0].len();
        let domains = m.intents.div_ceil(actions * objects).min(DOMAINS.len());
        BenchSpec {
            domains,
            objects,
            actions,
            max_intents: Some(m.intents),
            languages: m.languages.iter().map(|s| s.to_string()).collect(),
            n_train: m.train / train_scale.max(1),
            n_unlabeled: m.test,
            n_test: m.test,
            seed: seed::derive(seed, m.code),
            ..BenchSpec::default()
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.domains == 0 || self.domains > DOMAINS.len() {
            return Err(format!("domains must be in 1..={}", DOMAINS.len()));
        }
        if self.objects == 0 || self.objects > OBJECTS[0].len() {
            return Err(format!("objects must be in 1..={}", OBJECTS[0].len()));
        }
        if self.actions < 2 || self.actions > ACTIONS.len() {
            return Err(format!("actions must be in 2..={}", ACTIONS.len()));
        }
        if self.languages.is_empty() {
            return Err("at least one language is required".into());
        }
        for p in [self.same_object, self.elliptical] {
            if !(0.0..=1.0).contains(&p) {
                return Err("probabilities must be in [0, 1]".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Leaf {
    domain: usize,
    object: usize,
    action: usize,
}

/// A generated benchmark. Unlabeled and test sessions carry gold intents
/// so the oracle backend and the metrics can use them; pipelines that must
/// not see gold should pass [`Benchmark::unlabeled_view`].
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub taxonomy: Taxonomy,
    pub train: Vec<LabeledExample>,
    pub unlabeled: Vec<Session>,
    pub test: Vec<Session>,
    leaves: Vec<Leaf>,
}

fn title_case(w: &str) -> String {
    let mut c = w.chars();
    c.next().map_or_else(String::new, |f| f.to_uppercase().chain(c).collect())
}

impl Benchmark {
    pub fn generate(spec: &BenchSpec) -> Result<Self, String> {
        spec.validate()?;
        let mut leaves = Vec::new();
        for domain in 0..spec.domains {
            for object in 0..spec.objects {
                for action in 0..spec.actions {
                    leaves.push(Leaf { domain, object, action });
                }
            }
        }
        if let Some(max) = spec.max_intents {
            leaves.truncate(max.max(1));
        }
        let intents: Vec<Intent> = leaves
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let obj = OBJECTS[l.domain][l.object];
                let act = &ACTIONS[l.action];
                Intent {
                    id: format!("I{:03}", i + 1),
                    title: format!("How to {} my {obj}", act.name.to_lowercase()),
                    category_path: vec![DOMAINS[l.domain].into(), title_case(obj), act.name.into()],
                    rep_query: format!("Request to {} {}", act.name, title_case(obj)),
                    compressed_label: None,
                    language: spec.languages[i % spec.languages.len()].clone(),
                }
            })
            .collect();
        let taxonomy = Taxonomy::from_intents(intents).map_err(|e| e.to_string())?;

        let mut bench = Benchmark {
            taxonomy,
            train: Vec::new(),
            unlabeled: Vec::new(),
            test: Vec::new(),
            leaves,
        };
        let mut rng = seed::rng_for(spec.seed, "bench-train");
        bench.train = (0..spec.n_train)
            .map(|i| {
                // Cover every intent before sampling freely.
                let leaf = if i < bench.leaves.len() {
                    i
                } else {
                    rng.gen_range(0..bench.leaves.len())
                };
                let it = &bench.taxonomy.intents()[leaf];
                LabeledExample {
                    query: bench.explicit(leaf, &mut rng),
                    intent_id: it.id.clone(),
                    language: it.language.clone(),
                }
            })
            .collect();
        bench.unlabeled = bench.sessions("mt-train", spec.n_unlabeled, spec, &mut seed::rng_for(spec.seed, "bench-unlabeled"));
        bench.test = bench.sessions("mt-test", spec.n_test, spec, &mut seed::rng_for(spec.seed, "bench-test"));
        Ok(bench)
    }

    fn intent_id(&self, leaf: usize) -> &str {
        &self.taxonomy.intents()[leaf].id
    }

    fn explicit(&self, leaf: usize, rng: &mut ChaCha8Rng) -> String {
        let l = self.leaves[leaf];
        let body = ACTIONS[l.action]
            .explicit
            .choose(rng)
            .expect("non-empty")
            .replace("{o}", OBJECTS[l.domain][l.object]);
        format!("{}{body}{}", OPENERS.choose(rng).unwrap(), CLOSERS.choose(rng).unwrap())
    }

    fn elliptical(&self, leaf: usize, rng: &mut ChaCha8Rng) -> String {
        let body = ACTIONS[self.leaves[leaf].action].elliptical.choose(rng).expect("non-empty");
        format!("{body}{}", CLOSERS.choose(rng).unwrap())
    }

    fn sessions(&self, prefix: &str, n: usize, spec: &BenchSpec, rng: &mut ChaCha8Rng) -> Vec<Session> {
        let same_object: Vec<Vec<usize>> = (0..self.leaves.len())
            .map(|i| {
                (0..self.leaves.len())
                    .filter(|&j| {
                        j != i
                            && self.leaves[j].domain == self.leaves[i].domain
                            && self.leaves[j].object == self.leaves[i].object
                    })
                    .collect()
            })
            .collect();
        (0..n)
            .map(|i| {
                let len = if rng.gen::<f64>() < 0.6 { 2 } else { 3 };
                let mut seq = vec![rng.gen_range(0..self.leaves.len())];
                let mut turns = vec![self.explicit(seq[0], rng)];
                while seq.len() < len {
                    let prev = *seq.last().unwrap();
                    let stay = rng.gen::<f64>() < spec.same_object && !same_object[prev].is_empty();
                    let next = if stay {
                        *same_object[prev].choose(rng).unwrap()
                    } else {
                        rng.gen_range(0..self.leaves.len())
                    };
                    let ellipsis = stay && rng.gen::<f64>() < spec.elliptical;
                    turns.push(if ellipsis {
                        self.elliptical(next, rng)
                    } else {
                        self.explicit(next, rng)
                    });
                    seq.push(next);
                }
                let ids: Vec<String> = seq.iter().map(|&l| self.intent_id(l).to_string()).collect();
                let mut s = Session::new(format!("{prefix}-{i:05}"), turns).with_gold(ids[len - 1].clone());
                s.history_intents = Some(ids[..len - 1].to_vec());
                s
            })
            .collect()
    }

    /// Unlabeled sessions with gold and history labels removed.
    pub fn unlabeled_view(&self) -> Vec<Session> {
        self.unlabeled.iter().map(|s| Session::new(s.id.clone(), s.turns.clone())).collect()
    }

    /// Intent sequences of the unlabeled sessions, as chat logs.
    pub fn chat_logs(&self) -> Vec<ChatLog> {
        self.unlabeled
            .iter()
            .map(|s| {
                let mut seq = s.history_intents.clone().unwrap_or_default();
                seq.extend(s.gold_intent.clone());
                ChatLog {
                    session_id: s.id.clone(),
                    intent_sequence: seq,
                }
            })
            .collect()
    }
}

/// Settings for [`lift_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct LiftConfig {
    pub oracle: OracleConfig,
    pub template: TemplateKind,
    pub k: usize,
    pub train: TrainConfig,
    /// Share of each training set held out for early stopping.
    pub validation_share: f64,
    pub workers: usize,
}

impl LiftConfig {
    pub fn new(seed: u64) -> Self {
        LiftConfig {
            oracle: OracleConfig::new(0.0, 0.12, seed),
            template: TemplateKind::Base,
            k: crate::retrieval::DEFAULT_K,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            validation_share: 0.1,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftReport {
    /// Single-turn model, final query only.
    pub baseline_accuracy: f64,
    /// Single-turn model fed the concatenated session.
    pub baseline_concat_accuracy: f64,
    /// Model trained with pseudo-labels, concatenated session input.
    pub clara_accuracy: f64,
    pub lift: f64,
    pub filter: FilterStats,
    pub precision: ConsistencyPrecision,
    pub test_sessions: usize,
}

fn fit_split(
    bench: &Benchmark,
    data: Vec<(String, String)>,
    embedder: &dyn Embedder,
    cfg: &LiftConfig,
    key: &str,
) -> Result<HtcModel, String> {
    let k = (data.len() as f64 * cfg.validation_share).round() as usize;
    let (train, val) = split_validation(data, k, seed::derive(cfg.train.seed, key)).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        workers: cfg.workers,
        ..cfg.train.clone()
    };
    HtcModel::fit(&bench.taxonomy, &train, &val, embedder, &tc)
        .map(|(m, _)| m)
        .map_err(|e| e.to_string())
}

fn session_accuracy(model: &HtcModel, sessions: &[Session], strategy: Strategy, embedder: &dyn Embedder) -> Result<f64, String> {
    let mut preds = Vec::with_capacity(sessions.len());
    let mut golds = Vec::with_capacity(sessions.len());
    for s in sessions {
        preds.push(model.predict(s, strategy, embedder).map_err(|e| e.to_string())?.intent_id);
        golds.push(s.gold_intent.clone().ok_or_else(|| format!("session {} has no gold", s.id))?);
    }
    eval::accuracy(&preds, &golds).map_err(|e| e.to_string())
}

/// Trains a single-turn baseline and a model that also sees pseudo-labelled
/// sessions, then compares them on the multi-turn test sessions.
pub fn lift_experiment(bench: &Benchmark, embedder: &dyn Embedder, cfg: &LiftConfig) -> Result<LiftReport, String> {
    let single: Vec<(String, String)> = bench.train.iter().map(|e| (e.query.clone(), e.intent_id.clone())).collect();
    let baseline = fit_split(bench, single.clone(), embedder, cfg, "baseline")?;

    let index = RetrievalIndex::build(&bench.train, embedder).map_err(|e| e.to_string())?;
    let backend = GoldOracleBackend::new(&bench.taxonomy, &bench.unlabeled, cfg.oracle);
    let labeling = Labeler::new(&bench.taxonomy, &index, embedder, &backend)
        .template(cfg.template)
        .k(cfg.k)
        .seed(cfg.oracle.seed)
        .label_corpus(&bench.unlabeled_view(), cfg.workers)
        .map_err(|e| e.to_string())?;
    let precision =
        eval::consistency_precision(&labeling.verdicts, &eval::gold_map(&bench.unlabeled)).map_err(|e| e.to_string())?;

    let mut augmented = single;
    for p in &labeling.labels {
        let text = crate::htc::input_text(&p.session, Strategy::NaiveConcat, embedder).map_err(|e| e.to_string())?;
        augmented.push((text, p.intent_id.clone()));
    }
    let clara = fit_split(bench, augmented, embedder, cfg, "clara")?;

    let baseline_accuracy = session_accuracy(&baseline, &bench.test, Strategy::SingleTurn, embedder)?;
    let baseline_concat_accuracy = session_accuracy(&baseline, &bench.test, Strategy::NaiveConcat, embedder)?;
    let clara_accuracy = session_accuracy(&clara, &bench.test, Strategy::NaiveConcat, embedder)?;
    Ok(LiftReport {
        baseline_accuracy,
        baseline_concat_accuracy,
        clara_accuracy,
        lift: clara_accuracy - baseline_accuracy,
        filter: labeling.stats,
        precision,
        test_sessions: bench.test.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_benchmark_shape() {
        let b = Benchmark::generate(&BenchSpec::default()).unwrap();
        assert_eq!(b.taxonomy.len(), 24);
        assert_eq!(b.taxonomy.layer_sizes(), [2, 6, 24]);
        assert_eq!(b.train.len(), 2000);
        assert_eq!(b.test.len(), 800);
        assert!(b.test.iter().all(|s| (2..=3).contains(&s.turns.len()) && s.validate().is_ok()));
        let covered: std::collections::HashSet<_> = b.train.iter().map(|e| &e.intent_id).collect();
        assert_eq!(covered.len(), 24);
        assert!(b.unlabeled_view().iter().all(|s| s.gold_intent.is_none()));
        assert_eq!(b.chat_logs()[0].intent_sequence.len(), b.unlabeled[0].turns.len());
    }

    #[test]
    fn generation_is_seeded() {
        let a = Benchmark::generate(&BenchSpec::default()).unwrap();
        let b = Benchmark::generate(&BenchSpec::default()).unwrap();
        assert_eq!(a.test, b.test);
        let c = Benchmark::generate(&BenchSpec {
            seed: 8,
            ..BenchSpec::default()
        })
        .unwrap();
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn market_shapes() {
        let br = BenchSpec::for_market(&MARKETS[0], 1000, 1);
        let b = Benchmark::generate(&br).unwrap();
        assert_eq!(b.taxonomy.len(), 316);
        assert_eq!(b.train.len(), 66);
        assert_eq!(b.test.len(), 372);
        let my = Benchmark::generate(&BenchSpec::for_market(&MARKETS[2], 1000, 1)).unwrap();
        assert_eq!(my.taxonomy.languages(), vec!["en".to_string(), "ms".to_string()]);
        assert!(Benchmark::generate(&BenchSpec {
            actions: 1,
            ..BenchSpec::default()
        })
        .is_err());
    }

    #[test]
    fn elliptical_turns_omit_the_object() {
        let b = Benchmark::generate(&BenchSpec::default()).unwrap();
        let objects: Vec<&str> = OBJECTS.iter().flatten().copied().collect();
        let elliptical = b
            .test
            .iter()
            .filter(|s| !objects.iter().any(|o| s.last_turn().unwrap().contains(o)))
            .count();
        let share = elliptical as f64 / b.test.len() as f64;
        assert!(share > 0.3 && share < 0.8, "elliptical share {share}");
    }
}
