//! Command-line entry point. Exit codes: 0 success, 2 invalid input, 1 any
//! other failure.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use clara::bench::{BenchSpec, Benchmark};
use clara::config::{Config, ConfigError, LlmProvider};
use clara::corpus::{self, ChatLog, CorpusError, LabeledExample, Session};
use clara::eval::{self, MetricsReport, ReplayRecord};
use clara::htc::{input_text, HtcModel, Strategy};
use clara::jsonl::{self, JsonlError};
use clara::pipeline::{ConsistencyVerdict, Labeler, PseudoLabel, PseudoLabelRecord};
use clara::promptgen::TemplateKind;
use clara::retrieval::{Embedder, RetrievalIndex};
use clara::symboltune::{self, CompressOptions, SourceMode};
use clara::taxonomy::{load_taxonomy, Taxonomy, TaxonomyError};

/// Marks an error as bad input (exit code 2).
#[derive(Debug)]
struct Invalid(String);

impl Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(e: impl Display) -> anyhow::Error {
    Invalid(e.to_string()).into()
}

#[derive(Parser)]
#[command(name = "clara", version, about = "Multi-turn intent classification toolkit")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge-base checks and label compression.
    #[command(subcommand)]
    Taxonomy(TaxonomyCmd),
    /// Corpus statistics, transition estimation and session synthesis.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Write a synthetic benchmark to a directory.
    Bench(BenchArgs),
    /// Label sessions with three-ordering self-consistency.
    PseudoLabel(PseudoLabelArgs),
    /// Train the hierarchical classifier.
    Train(TrainArgs),
    /// Classify sessions with a trained model.
    Predict(PredictArgs),
    /// Compute metrics from predictions, verdicts and replay logs.
    Eval(EvalArgs),
    /// Compare templates, self-consistency and compression modes.
    Ablate(AblateArgs),
}

#[derive(Subcommand)]
enum TaxonomyCmd {
    Validate {
        #[arg(long)]
        kb: PathBuf,
    },
    Compress {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// rep_query, local_title or english_category.
        #[arg(long, default_value = "rep_query")]
        source: String,
        #[arg(long, default_value_t = symboltune::DEFAULT_WORDS)]
        words: usize,
        #[arg(long, default_value_t = symboltune::DEFAULT_ALPHA)]
        alpha: f64,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    Stats {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        sessions: Option<PathBuf>,
    },
    Transitions {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
        #[arg(long, default_value_t = corpus::DEFAULT_MAX_LEN)]
        max_len: usize,
    },
    Synth {
        #[arg(long)]
        train: PathBuf,
        /// Transition model written by `corpus transitions`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Market code (BR, ID, ...) with training data divided by --scale.
    #[arg(long)]
    market: Option<String>,
    #[arg(long, default_value_t = 1000)]
    scale: usize,
}

#[derive(Args)]
struct PseudoLabelArgs {
    #[arg(long)]
    kb: PathBuf,
    /// Single-turn examples used as demonstrations.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    sessions: PathBuf,
    /// Kept pseudo-labels.
    #[arg(long)]
    out: PathBuf,
    /// Every verdict, kept or not.
    #[arg(long)]
    verdicts: Option<PathBuf>,
    /// Filter statistics as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    template: Option<TemplateKind>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    train: PathBuf,
    /// Pseudo-labelled sessions to add to the training data.
    #[arg(long)]
    pseudo: Option<PathBuf>,
    /// How pseudo-labelled sessions are turned into text.
    #[arg(long, default_value = "naive_concat")]
    strategy: Strategy,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
    /// Share of training data held out for early stopping.
    #[arg(long, default_value_t = 0.1)]
    val_share: f64,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    sessions: PathBuf,
    #[arg(long, default_value = "single_turn")]
    strategy: Strategy,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Sessions carrying gold intents.
    #[arg(long)]
    sessions: Option<PathBuf>,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    verdicts: Option<PathBuf>,
    /// Replay records with completed_flow / transferred / bad_rating flags.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    good: Option<usize>,
    #[arg(long)]
    bad: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    train: PathBuf,
    /// Sessions with gold intents.
    #[arg(long)]
    sessions: PathBuf,
    #[arg(long)]
    markdown: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    session_id: String,
    intent_id: String,
    classes: Vec<String>,
    confidence: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<Invalid>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(|e| match e {
            ConfigError::Io { .. } => anyhow::Error::new(e),
            other => invalid(other),
        })?,
        None => Config::from_env(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w.max(1);
    }
    cfg.sync_globals();
    Ok(cfg)
}

fn jsonl_err(e: JsonlError) -> anyhow::Error {
    match e {
        JsonlError::Io { .. } => anyhow::Error::new(e),
        parse => invalid(parse),
    }
}

fn corpus_err(e: CorpusError) -> anyhow::Error {
    match e {
        CorpusError::Jsonl(j) => jsonl_err(j),
        other => invalid(other),
    }
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    jsonl::read_file(path).map_err(jsonl_err)
}

fn write<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    jsonl::write_file(path, records).map_err(anyhow::Error::new)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| path.display().to_string())
}

fn kb(path: &Path) -> Result<Taxonomy> {
    load_taxonomy(path).map_err(|e| match e {
        TaxonomyError::Io(_) => anyhow::anyhow!(e),
        other => invalid(other),
    })
}

fn examples(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<LabeledExample>> {
    let ex = corpus::load_examples(path).map_err(corpus_err)?;
    corpus::validate_examples(&ex, taxonomy).map_err(corpus_err)?;
    Ok(ex)
}

fn sessions(path: &Path) -> Result<Vec<Session>> {
    corpus::load_sessions(path).map_err(corpus_err)
}

fn embedder(cfg: &Config) -> Result<Box<dyn Embedder>> {
    cfg.embedder().map_err(invalid)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Taxonomy(TaxonomyCmd::Validate { kb: path }) => {
            let t = kb(&path)?;
            println!(
                "ok: {} intents, layer sizes {:?}, languages {}",
                t.len(),
                t.layer_sizes(),
                t.languages().join(",")
            );
        }
        Command::Taxonomy(TaxonomyCmd::Compress {
            kb: path,
            out,
            report,
            source,
            words,
            alpha,
        }) => {
            let source: SourceMode = serde_json::from_value(serde_json::Value::String(source.clone()))
                .map_err(|_| invalid(format!("unknown source mode {source:?}")))?;
            let t = kb(&path)?;
            let e = embedder(&cfg)?;
            let opts = CompressOptions {
                source,
                n_start: words,
                alpha,
            };
            let (compressed, rep) = symboltune::compress_all(&t, e.as_ref(), opts).map_err(invalid)?;
            compressed.save(&out)?;
            if let Some(r) = report {
                write_json(&r, &rep)?;
            }
            println!(
                "compressed {} labels, mean {:.2} words, {} collisions resolved",
                compressed.len(),
                rep.mean_words(),
                rep.collisions.len()
            );
        }
        Command::Corpus(CorpusCmd::Stats {
            kb: path,
            train,
            sessions: sess,
        }) => {
            let t = kb(&path)?;
            let ex = examples(&train, &t)?;
            let s = match sess {
                Some(p) => sessions(&p)?,
                None => Vec::new(),
            };
            println!("lang\tintents\ttrain\ttest");
            for r in corpus::corpus_stats(&ex, &s, &t) {
                println!("{}\t{}\t{}\t{}", r.lang, r.intents, r.train, r.test);
            }
        }
        Command::Corpus(CorpusCmd::Transitions {
            logs,
            kb: path,
            out,
            smoothing,
            max_len,
        }) => {
            let t = path.map(|p| kb(&p)).transpose()?;
            if !(smoothing >= 0.0 && smoothing.is_finite()) {
                return Err(invalid("smoothing must be a non-negative number"));
            }
            let logs: Vec<ChatLog> = corpus::load_chat_logs(&logs).map_err(corpus_err)?;
            let seqs: Vec<Vec<String>> = logs.into_iter().map(|l| l.intent_sequence).collect();
            let tm = corpus::estimate_transitions(&seqs, smoothing, max_len, t.as_ref()).map_err(corpus_err)?;
            write_json(&out, &tm)?;
            println!("{} states, lengths {:?}", tm.states.len(), tm.length_dist.keys().collect::<Vec<_>>());
        }
        Command::Corpus(CorpusCmd::Synth { train, model, n, out }) => {
            let ex = corpus::load_examples(&train).map_err(corpus_err)?;
            let text = std::fs::read_to_string(&model).with_context(|| model.display().to_string())?;
            let tm: corpus::TransitionModel = serde_json::from_str(&text).map_err(invalid)?;
            if !tm.is_stochastic(1e-9) {
                return Err(invalid("transition model rows do not sum to one"));
            }
            let s = corpus::synthesize_sessions(&ex, &tm, n, cfg.seed).map_err(corpus_err)?;
            write(&out, &s)?;
            println!("wrote {} sessions", s.len());
        }
        Command::Bench(a) => {
            let spec = match &a.market {
                Some(code) => {
                    let m = clara::bench::MARKETS
                        .iter()
                        .find(|m| m.code.eq_ignore_ascii_case(code))
                        .ok_or_else(|| invalid(format!("unknown market {code:?}")))?;
                    BenchSpec::for_market(m, a.scale, cfg.seed)
                }
                None => BenchSpec {
                    seed: cfg.seed,
                    ..BenchSpec::default()
                },
            };
            let b = Benchmark::generate(&spec).map_err(invalid)?;
            std::fs::create_dir_all(&a.out_dir).with_context(|| a.out_dir.display().to_string())?;
            b.taxonomy.save(a.out_dir.join("kb.jsonl"))?;
            write(&a.out_dir.join("train.jsonl"), &b.train)?;
            write(&a.out_dir.join("unlabeled.jsonl"), &b.unlabeled)?;
            write(&a.out_dir.join("test.jsonl"), &b.test)?;
            write(&a.out_dir.join("logs.jsonl"), &b.chat_logs())?;
            println!(
                "{} intents, {} train, {} unlabeled, {} test",
                b.taxonomy.len(),
                b.train.len(),
                b.unlabeled.len(),
                b.test.len()
            );
        }
        Command::PseudoLabel(a) => {
            let t = kb(&a.kb)?;
            let ex = examples(&a.train, &t)?;
            let s = sessions(&a.sessions)?;
            for x in &s {
                x.validate().map_err(invalid)?;
            }
            let e = embedder(&cfg)?;
            let backend = cfg.backend(&t, &s).map_err(invalid)?;
            let index = RetrievalIndex::build(&ex, e.as_ref())?;
            // The oracle provider already holds the gold labels; the labeler never sees them.
            let blind: Vec<Session> = s.iter().map(|x| Session::new(x.id.clone(), x.turns.clone())).collect();
            let k = a.k.unwrap_or(cfg.k);
            if k == 0 {
                return Err(invalid("k must be at least 1"));
            }
            let labeling = Labeler::new(&t, &index, e.as_ref(), backend.as_ref())
                .template(a.template.unwrap_or(cfg.template))
                .k(k)
                .seed(cfg.seed)
                .label_corpus(&blind, cfg.workers)?;
            let records: Vec<PseudoLabelRecord> = labeling.labels.iter().map(PseudoLabelRecord::from).collect();
            write(&a.out, &records)?;
            if let Some(p) = a.verdicts {
                write(&p, &labeling.verdicts)?;
            }
            if let Some(p) = a.stats {
                write_json(&p, &labeling.stats)?;
            }
            for (id, err) in &labeling.failures {
                eprintln!("warning: session {id} discarded: {err}");
            }
            println!("{}", serde_json::to_string(&labeling.stats)?);
        }
        Command::Train(a) => {
            if !(0.0..1.0).contains(&a.val_share) {
                return Err(invalid("val-share must be in [0, 1)"));
            }
            let t = kb(&a.kb)?;
            let e = embedder(&cfg)?;
            let mut data: Vec<(String, String)> = examples(&a.train, &t)?
                .into_iter()
                .map(|x| (x.query, x.intent_id))
                .collect();
            if let Some(p) = &a.pseudo {
                let labels: Vec<PseudoLabelRecord> = read(p)?;
                for r in labels {
                    let label = PseudoLabel::from(r);
                    if !t.contains(&label.intent_id) {
                        return Err(invalid(format!("pseudo-label intent {:?} not in the taxonomy", label.intent_id)));
                    }
                    data.push((input_text(&label.session, a.strategy, e.as_ref())?, label.intent_id));
                }
            }
            let k = (data.len() as f64 * a.val_share).round() as usize;
            let (train, val) = corpus::split_validation(data, k, cfg.seed).map_err(corpus_err)?;
            let mut tc = cfg.train.clone();
            if let Some(ep) = a.epochs {
                tc.epochs = ep;
            }
            let (model, trained) = HtcModel::fit(&t, &train, &val, e.as_ref(), &tc)?;
            model.save(&a.out)?;
            if let Some(h) = a.history {
                write(&h, &trained.history)?;
            }
            let last = trained.history.last();
            println!(
                "trained on {} samples, {} epochs, kept epoch {}, train accuracy {:.4}",
                train.len(),
                trained.history.len(),
                trained.best_epoch,
                last.map_or(0.0, |h| h.train_accuracy)
            );
        }
        Command::Predict(a) => {
            let model = HtcModel::load(&a.model).map_err(invalid)?;
            let e = embedder(&cfg)?;
            let s = sessions(&a.sessions)?;
            let preds: Vec<PredictionRecord> = s
                .iter()
                .map(|x| {
                    let p = model.predict(x, a.strategy, e.as_ref())?;
                    Ok(PredictionRecord {
                        session_id: x.id.clone(),
                        intent_id: p.intent_id,
                        classes: p.class_names.to_vec(),
                        confidence: p.confidence,
                    })
                })
                .collect::<Result<_>>()?;
            write(&a.out, &preds)?;
            println!("wrote {} predictions", preds.len());
        }
        Command::Eval(a) => {
            let golds = match &a.sessions {
                Some(p) => eval::gold_map(&sessions(p)?),
                None => HashMap::new(),
            };
            let t = a.kb.as_ref().map(|p| kb(p)).transpose()?;
            let mut report = MetricsReport::default();
            if let Some(p) = &a.predictions {
                let preds: Vec<PredictionRecord> = read(p)?;
                let mut rows = Vec::with_capacity(preds.len());
                let mut hyp = Vec::new();
                let mut gold = Vec::new();
                for r in &preds {
                    let g = golds
                        .get(&r.session_id)
                        .ok_or_else(|| invalid(format!("no gold label for session {:?}", r.session_id)))?;
                    let market = t
                        .as_ref()
                        .and_then(|t| t.get(g))
                        .map_or_else(|| "all".to_string(), |i| i.language.clone());
                    rows.push((market, &r.intent_id == g));
                    hyp.push(r.intent_id.as_str());
                    gold.push(g.as_str());
                }
                report.accuracy = Some(eval::accuracy(&hyp, &gold).map_err(invalid)?);
                report.markets = eval::market_breakdown(&rows).0;
            }
            if let Some(p) = &a.verdicts {
                let verdicts: Vec<ConsistencyVerdict> = read(p)?;
                let stats = clara::pipeline::filter_stats(&verdicts, 0);
                report.hallucination_rate = Some(stats.hallucination_rate);
                report.retention_rate = Some(stats.retention_rate);
                report.consistency_precision = Some(
                    eval::consistency_precision(&verdicts, &golds)
                        .map_err(invalid)?
                        .precision_kept,
                );
            }
            if let Some(p) = &a.replay {
                let recs: Vec<ReplayRecord> = read(p)?;
                report.rr = Some(eval::resolution_rate(&recs).map_err(invalid)?);
            }
            if a.good.is_some() || a.bad.is_some() {
                report.scsat = Some(eval::scsat(a.good.unwrap_or(0), a.bad.unwrap_or(0)).map_err(invalid)?);
            }
            let text = serde_json::to_string_pretty(&report)?;
            match a.out {
                Some(p) => std::fs::write(&p, text + "\n").with_context(|| p.display().to_string())?,
                None => println!("{text}"),
            }
        }
        Command::Ablate(a) => {
            let t = kb(&a.kb)?;
            let ex = examples(&a.train, &t)?;
            let s = sessions(&a.sessions)?;
            let e = embedder(&cfg)?;
            if cfg.llm.provider == LlmProvider::Oracle && s.iter().any(|x| x.gold_intent.is_none()) {
                return Err(invalid("the oracle provider needs gold intents on every session"));
            }
            let factory = |tax: &Taxonomy| cfg.backend(tax, &s).expect("backend settings validated");
            cfg.backend(&t, &s).map_err(invalid)?;
            let report = eval::run_ablation(&cfg.ablation, &t, &ex, &s, e.as_ref(), &factory)?;
            let md = report.to_markdown();
            if let Some(p) = a.markdown {
                std::fs::write(&p, &md).with_context(|| p.display().to_string())?;
            }
            if let Some(p) = a.csv {
                std::fs::write(&p, report.to_csv()).with_context(|| p.display().to_string())?;
            }
            print!("{md}");
        }
    }
    Ok(())
}
