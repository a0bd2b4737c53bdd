use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use vertsearch::corpus::{ingest, write_passages, Segmenter, DEFAULT_MAX_TERMS};
use vertsearch::eval::{evaluate, Qrels, Run, RunEntry};
use vertsearch::index::{load_index, save_index, Bm25Params, Index, DEFAULT_NUM_SHARDS};
use vertsearch::l1::{retrieve, retrieve_fused, SaliencyTable, DEFAULT_K};
use vertsearch::l2::{rerank, train, CrossScorer, IndexResolver, TrainConfig};
use vertsearch::loadgen::{read_query_pool, run_load, LoadConfig, Warmup};
use vertsearch::selfsup::{
    generate, index_collection, read_collection, read_positive_qrels, read_queries, read_triples, write_triples,
    DomainLexicon, GenerateConfig, DEFAULT_NEGATIVES, DEFAULT_SEED,
};
use vertsearch::service::{fusion_split, serve, SearchRequest, SearchService, ServiceConfig};
use vertsearch::textproc::{Analyzer, BpeVocabulary};

#[derive(Parser)]
#[command(name = "vertsearch", version, about = "Passage-level vertical search engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and segment a corpus, printing statistics.
    Ingest(IngestArgs),
    /// Train a BPE vocabulary on corpus text.
    BpeTrain(BpeTrainArgs),
    /// Build a sharded BM25 index.
    Index(IndexArgs),
    /// Generate self-supervised training triples.
    GenTrain(GenTrainArgs),
    /// Train the reranker on triples.
    Train(TrainArgs),
    /// Search an index from the command line, or write a run file.
    Search(SearchArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Score a run file against qrels.
    Eval(EvalArgs),
    /// Load-test a running service.
    Loadtest(LoadtestArgs),
}

#[derive(Args)]
struct CorpusOpts {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_TERMS)]
    max_terms: usize,
    /// Fail on the first malformed record instead of skipping it.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    corpus: CorpusOpts,
    /// Write passages as JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BpeTrainArgs {
    #[command(flatten)]
    corpus: CorpusOpts,
    #[arg(long, default_value_t = 8000)]
    vocab_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IndexArgs {
    #[command(flatten)]
    corpus: CorpusOpts,
    #[arg(long, default_value_t = DEFAULT_NUM_SHARDS)]
    shards: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenTrainArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    collection: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NEGATIVES)]
    negatives: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    shards: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    triples: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    collection: PathBuf,
    /// BPE vocabulary for the subword feature.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Saliency table; enables fused retrieval.
    #[arg(long)]
    saliency: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long)]
    answers: bool,
    /// Query text; prints the full response as JSON.
    #[arg(long, conflicts_with = "queries")]
    query: Option<String>,
    /// `qid<TAB>text` file; ranks every query and writes a run file.
    #[arg(long, requires = "run_out")]
    queries: Option<PathBuf>,
    #[arg(long)]
    run_out: Option<PathBuf>,
    #[arg(long, default_value = "vertsearch")]
    tag: String,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value_t = 10)]
    k_ndcg: usize,
    #[arg(long, default_value_t = 5)]
    k_p: usize,
    /// Print per-topic lines as well as means.
    #[arg(long)]
    per_topic: bool,
}

#[derive(Args)]
struct LoadtestArgs {
    #[arg(long)]
    url: String,
    #[arg(long, default_value_t = 50)]
    users: usize,
    /// Think time range in seconds, `min:max`.
    #[arg(long, default_value = "15:60")]
    think: String,
    #[arg(long, default_value_t = 600.0)]
    duration: f64,
    #[arg(long, default_value_t = 0.5)]
    warmup_qps: f64,
    /// Warm-up length in seconds; 0 disables it.
    #[arg(long, default_value_t = 600.0)]
    warmup_duration: f64,
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    /// Bypass the service cache.
    #[arg(long)]
    no_cache: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Reads and segments the corpus; returns the summary line alongside.
fn segment(opts: &CorpusOpts) -> Result<(Vec<vertsearch::corpus::Passage>, Analyzer, String)> {
    let analyzer = Analyzer::default();
    let segmenter = Segmenter::new(analyzer.clone(), opts.max_terms)?;
    let (passages, stats, skipped) = ingest(&opts.corpus, &segmenter, opts.strict)
        .with_context(|| format!("reading {}", opts.corpus.display()))?;
    Ok((passages, analyzer, format!("{stats} skipped={skipped}")))
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let (passages, _, summary) = segment(&a.corpus)?;
    println!("{summary}");
    if let Some(out) = a.out {
        write_passages(&out, &passages)?;
    }
    Ok(())
}

fn cmd_bpe_train(a: BpeTrainArgs) -> Result<()> {
    let (passages, _, summary) = segment(&a.corpus)?;
    eprintln!("{summary}");
    let vocab = BpeVocabulary::train(passages.iter().map(|p| p.text.as_str()), a.vocab_size)?;
    vocab.save(&a.out)?;
    eprintln!("vocab_size={} merges={}", vocab.vocab_size(), vocab.merges().len());
    Ok(())
}

fn cmd_index(a: IndexArgs) -> Result<()> {
    let (passages, analyzer, summary) = segment(&a.corpus)?;
    eprintln!("{summary}");
    let index = Index::build(passages, a.shards, analyzer, Bm25Params::default())?;
    save_index(&index, &a.out)?;
    let m = index.meta();
    eprintln!(
        "passages={} shards={} avgdl={:.2} terms={}",
        m.num_passages,
        m.num_shards,
        m.avgdl,
        m.vocabulary_size()
    );
    Ok(())
}

fn cmd_gen_train(a: GenTrainArgs) -> Result<()> {
    let analyzer = Analyzer::default();
    let queries = read_queries(&a.queries)?;
    let collection = read_collection(&a.collection)?;
    let qrels = read_positive_qrels(&a.qrels)?;
    let lexicon = DomainLexicon::load(&a.lexicon, analyzer.clone())?;
    let index = index_collection(&collection, a.shards, analyzer)?;
    let config = GenerateConfig {
        negatives: a.negatives,
        seed: a.seed,
    };
    let (triples, report) = generate(queries, &qrels, &lexicon, &index, &config)?;
    write_triples(&a.out, &triples)?;
    let b = &report.balance;
    eprintln!(
        "queries={} domain={} annotated={} positives={} negatives={} imbalanced={}",
        report.input_queries,
        report.domain_queries,
        report.annotated_queries,
        b.positives,
        b.negatives,
        b.imbalanced.len()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let analyzer = Analyzer::default();
    let triples = read_triples(&a.triples)?;
    let queries: HashMap<String, String> = read_queries(&a.queries)?.into_iter().collect();
    let collection = read_collection(&a.collection)?;
    let index = index_collection(&collection, 1, analyzer.clone())?;
    let vocab = a.vocab.as_deref().map(BpeVocabulary::load).transpose()?;
    let config = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let resolver = IndexResolver {
        queries: &queries,
        index: &index,
    };
    let (model, report) = train(&triples, &resolver, index.meta(), &analyzer, vocab.as_ref(), &config)?;
    model.save(&a.out)?;
    eprintln!(
        "examples={} positives={} loss={:?} model={}",
        report.examples,
        report.positives,
        report.epoch_loss,
        model.version()
    );
    Ok(())
}

fn cmd_search(a: SearchArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let model = match &a.model {
        Some(p) => CrossScorer::load(p)?,
        None => CrossScorer::bm25_only(),
    };
    let vocab = a.vocab.as_deref().map(BpeVocabulary::load).transpose()?;
    let saliency = a.saliency.as_deref().map(SaliencyTable::load).transpose()?;

    if let Some(query) = a.query {
        let mut svc = SearchService::new(index, model, 0);
        if let Some(v) = vocab {
            svc = svc.with_vocab(v);
        }
        let fusion = saliency.is_some();
        if let Some(s) = saliency {
            svc = svc.with_saliency(s);
        }
        let req = SearchRequest {
            k: a.k,
            fusion,
            answers: a.answers,
            ..SearchRequest::new(query)
        };
        let result = svc.handle_search(&req)?;
        println!("{}", serde_json::to_string_pretty(&result)?);
        return Ok(());
    }

    let (Some(queries), Some(run_out)) = (a.queries, a.run_out) else {
        bail!("pass either --query or --queries with --run-out");
    };
    let mut run = Run::new();
    for (qid, text) in read_queries(&queries)? {
        let cands = match &saliency {
            Some(s) => {
                let (kb, ks) = fusion_split(a.k);
                retrieve_fused(&index, s, &text, kb, ks, None)?
            }
            None => retrieve(&index, &text, a.k, None)?,
        };
        let ranked = rerank(&model, &index, vocab.as_ref(), &cands);
        let entries = ranked
            .into_iter()
            .map(|r| RunEntry {
                id: r.passage_id,
                score: r.l2_score,
                tag: a.tag.clone(),
            })
            .collect();
        run.set_topic(qid, entries)?;
    }
    run.write(&run_out)?;
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let cfg = ServiceConfig::load(&a.config)?;
    let svc = Arc::new(SearchService::from_config(&cfg)?);
    let addr: SocketAddr = format!("{}:{}", cfg.host, cfg.port)
        .parse()
        .with_context(|| format!("bad listen address {}:{}", cfg.host, cfg.port))?;
    let h = svc.health();
    eprintln!("serving {} passages from {} shards on http://{addr}", h.passages, h.shards);
    tokio::runtime::Runtime::new()?.block_on(serve(svc, addr))?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let run = Run::read(&a.run)?;
    let qrels = Qrels::read(&a.qrels)?;
    let report = evaluate(&run, &qrels, a.k_ndcg, a.k_p)?;
    let text = report.to_text();
    for line in text.lines() {
        let per_topic_line = !line.starts_with('#') && line.split('\t').nth(1) != Some("all");
        if a.per_topic || !per_topic_line {
            println!("{line}");
        }
    }
    Ok(())
}

fn parse_think(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s.split_once(':').context("--think must look like MIN:MAX")?;
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}

fn cmd_loadtest(a: LoadtestArgs) -> Result<()> {
    let (think_min_s, think_max_s) = parse_think(&a.think)?;
    let cfg = LoadConfig {
        url: a.url,
        num_users: a.users,
        think_min_s,
        think_max_s,
        duration_s: a.duration,
        warmup: (a.warmup_duration > 0.0).then_some(Warmup {
            qps: a.warmup_qps,
            duration_s: a.warmup_duration,
        }),
        time_scale: a.time_scale,
        request_timeout_s: a.timeout,
        extra_params: if a.no_cache {
            vec![("no_cache".into(), "1".into())]
        } else {
            Vec::new()
        },
        seed: a.seed,
    };
    let pool = read_query_pool(&a.queries)?;
    let report = run_load(&cfg, pool)?;
    let tsv = report.to_tsv();
    match &a.out {
        Some(p) => report.write(p)?,
        None => print!("{tsv}"),
    }
    if a.out.is_some() {
        eprint!("{tsv}");
    }
    if !report.valid {
        bail!("run aborted early; the report is partial");
    }
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::BpeTrain(a) => cmd_bpe_train(a),
        Command::Index(a) => cmd_index(a),
        Command::GenTrain(a) => cmd_gen_train(a),
        Command::Train(a) => cmd_train(a),
        Command::Search(a) => cmd_search(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Loadtest(a) => cmd_loadtest(a),
    }
}
