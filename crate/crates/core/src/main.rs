use std::fs;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use setcomp::benchgen::{self, Buckets, GenConfig};
use setcomp::corpus::{self, build_attribute_index, SynthConfig};
use setcomp::eval::{self, StratumKey};
use setcomp::pipeline::{self, base_name, write_meta, ArtifactMeta, PipelineConfig, Stage};
use setcomp::rerank::{self, PoolConfig, PredicateScorer, ScorerProtocolConfig, Transport};
use setcomp::retrieval::{self, Bm25Index, Bm25Params, Model, SearchIndexes, SetCompConfig};
use setcomp::trec::{self, Qrels};
use setcomp::{par, Parallelism};

/// Set-compositional retrieval benchmarks: generate, search, re-rank, evaluate.
#[derive(Parser)]
#[command(name = "setcomp", version)]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "SETCOMP_THREADS")]
    threads: Option<usize>,

    /// Log filter, e.g. `info` or `setcomp=debug`.
    #[arg(long, global = true, default_value = "info")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize or inspect attribute-list corpora.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Generate or summarize a benchmark.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// First-stage retrieval into a TREC run file.
    Search(SearchArgs),
    /// Curated re-ranking pools.
    #[command(subcommand)]
    Pool(PoolCmd),
    /// Re-rank pools into a TREC run file.
    Rerank(RerankArgs),
    /// Score a run against qrels.
    Eval(EvalArgs),
    /// Run several stages from one config file.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Subcommand)]
enum CorpusCmd {
    Synth(SynthArgs),
    Inspect {
        corpus: PathBuf,
        /// How many of the most frequent attributes to list.
        #[arg(long, default_value_t = 20)]
        top: usize,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long = "entities", alias = "n-entities", default_value_t = 5000)]
    n_entities: usize,
    #[arg(long = "attributes", alias = "n-attributes", default_value_t = 200)]
    n_attributes: usize,
    /// Zipf exponent of attribute popularity.
    #[arg(long, default_value_t = 1.0)]
    skew: f64,
    #[arg(long, default_value_t = 1)]
    min_attrs: usize,
    #[arg(long, default_value_t = 5)]
    max_attrs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum BenchCmd {
    Generate(GenerateArgs),
    Stats {
        /// Benchmark directory or queries file.
        queries: PathBuf,
        #[arg(long, default_value = "1-3,4-10,11-35,36-100,101-200")]
        buckets: Buckets,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Queries per template.
    #[arg(long = "per-template", alias = "limit", default_value_t = 100)]
    limit: usize,
    #[arg(long, default_value = "1-3,4-10,11-35,36-100,101-200")]
    buckets: Buckets,
    /// Per-bucket quota (default: limit / number of buckets).
    #[arg(long)]
    quota: Option<usize>,
    /// Draw budget per template (default: 200 × limit).
    #[arg(long)]
    max_attempts: Option<usize>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory for queries.jsonl, qrels.txt and generation_report.json.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Bm25,
    Setcomp,
    Oracle,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 1000)]
    k: usize,
    #[arg(long, default_value_t = 0.9)]
    k1: f64,
    #[arg(long, default_value_t = 0.4)]
    b: f64,
    /// Negation weight for setcomp.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum PoolCmd {
    Build(PoolArgs),
}

#[derive(Args)]
struct PoolArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// First-stage (BM25) run to cut pools from.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 5)]
    n_noise: usize,
    #[arg(long, default_value_t = 5)]
    n_irrelevant: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Method {
    Symbolic,
    External,
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    pools: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Plausibility scorer for symbolic re-ranking: exact[:eps] or overlap[:eps].
    #[arg(long, default_value = "exact:0.05")]
    scorer: PredicateScorer,
    /// External scorer: subprocess:CMD or http:URL.
    #[arg(long)]
    transport: Option<Transport>,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 2)]
    retries: usize,
    #[arg(long, default_value_t = 1)]
    in_flight: usize,
    /// Fail on malformed scorer responses instead of scoring them 0.
    #[arg(long)]
    strict: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Queries file with template metadata, needed for strata.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "5,20,100")]
    cutoffs: Vec<usize>,
    /// Comma list of template, depth, operator_family.
    #[arg(long)]
    strata: Option<String>,
    /// Reject runs containing unjudged queries.
    #[arg(long)]
    strict: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum PipelineCmd {
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma list of synth, generate, search, pool, rerank, eval, or `all`.
        #[arg(long, default_value = "all")]
        stages: String,
        #[arg(long)]
        outdir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the default config as TOML.
    DefaultConfig,
}

fn main() {
    let cli = Cli::parse();
    let filter = EnvFilter::try_new(&cli.log).unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_target(false)
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    match cli.command {
        Command::Pipeline(cmd) => pipeline_cmd(cmd, threads),
        other => par::with_threads(threads.unwrap_or(0), || dispatch(other)),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    let mode = Parallelism::default();
    match cmd {
        Command::Corpus(CorpusCmd::Synth(a)) => {
            let cfg = SynthConfig {
                n_entities: a.n_entities,
                n_attributes: a.n_attributes,
                popularity_skew: a.skew,
                min_attrs: a.min_attrs,
                max_attrs: a.max_attrs,
                seed: a.seed,
            };
            let docs = corpus::synth_corpus(&cfg)?;
            ensure_parent(&a.output)?;
            corpus::write_corpus(&a.output, &docs)?;
            write_meta(
                &a.output,
                &ArtifactMeta::new(&a.output, "synth", Some(a.seed)).params(&cfg)?,
            )?;
            tracing::info!("wrote {} entities to {}", docs.len(), a.output.display());
        }
        Command::Corpus(CorpusCmd::Inspect { corpus, top, json }) => {
            let docs = pipeline::load_docs(&corpus)?;
            let stats = corpus::corpus_stats(&build_attribute_index(&docs)?, top);
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                println!("documents:              {}", stats.doc_count);
                println!("attributes:             {}", stats.attribute_count);
                println!(
                    "attributes per doc:     {:.3}",
                    stats.mean_attributes_per_doc
                );
                println!("top attributes:");
                for (a, n) in &stats.top_attributes {
                    println!("  {n:>7}  {a}");
                }
            }
        }
        Command::Bench(BenchCmd::Generate(a)) => {
            let docs = pipeline::load_docs(&a.corpus)?;
            let index = build_attribute_index(&docs)?;
            let mut cfg = GenConfig::with_limit(a.limit, a.seed);
            cfg.per_bucket_quota = a.quota.unwrap_or(a.limit / a.buckets.len());
            cfg.max_attempts = a.max_attempts.unwrap_or(cfg.max_attempts);
            cfg.buckets = a.buckets;
            let bench = benchgen::generate_benchmark(&index, &cfg, mode)?;
            benchgen::write_benchmark(&a.output, &bench)?;
            for name in [
                benchgen::QUERIES_FILE,
                benchgen::QRELS_FILE,
                benchgen::REPORT_FILE,
            ] {
                let out = a.output.join(name);
                let meta = ArtifactMeta::new(&out, "benchgen", Some(a.seed))
                    .params(&cfg)?
                    .inputs([a.corpus.as_path()]);
                write_meta(&out, &meta)?;
            }
            for t in &bench.report.templates {
                if t.underfilled() {
                    tracing::warn!(
                        "template {} underfilled: {} of {}",
                        t.template,
                        t.accepted,
                        t.limit
                    );
                }
            }
            tracing::info!(
                "{} queries, mean gold size {:.2}",
                bench.queries.len(),
                bench.mean_gold_size()
            );
        }
        Command::Bench(BenchCmd::Stats { queries, buckets }) => {
            let path = if queries.is_dir() {
                queries.join(benchgen::QUERIES_FILE)
            } else {
                queries
            };
            let records = benchgen::load_queries(&path)?;
            print!(
                "{}",
                benchgen::format_stats(&benchgen::bench_stats(&records, &buckets), &buckets)
            );
        }
        Command::Search(a) => {
            let docs = pipeline::load_docs(&a.corpus)?;
            let queries = benchgen::load_queries(&a.queries)?;
            let params = Bm25Params { k1: a.k1, b: a.b };
            let model = match a.model {
                ModelArg::Bm25 => Model::Bm25,
                ModelArg::Setcomp => Model::SetComp(SetCompConfig {
                    neg_weight: a.alpha,
                    top_k: a.k,
                }),
                ModelArg::Oracle => Model::Oracle,
            };
            let (bm25, attrs) = match model {
                Model::Oracle => (None, Some(build_attribute_index(&docs)?)),
                _ => (Some(Bm25Index::build(&docs, params, mode)?), None),
            };
            let indexes = SearchIndexes {
                bm25: bm25.as_ref(),
                attributes: attrs.as_ref(),
            };
            let runs = retrieval::search_all(model, &queries, &indexes, a.k, mode)?;
            ensure_parent(&a.output)?;
            trec::write_run(&a.output, &runs)?;
            let tag = runs
                .first()
                .map_or_else(|| model.to_string(), |r| r.run_tag.clone());
            let meta = ArtifactMeta::new(&a.output, tag, None)
                .params(serde_json::json!({
                    "model": model.to_string(), "k": a.k, "k1": a.k1, "b": a.b, "alpha": a.alpha,
                }))?
                .inputs([a.corpus.as_path(), a.queries.as_path()]);
            write_meta(&a.output, &meta)?;
        }
        Command::Pool(PoolCmd::Build(a)) => {
            let docs = pipeline::load_docs(&a.corpus)?;
            let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
            let queries = benchgen::load_queries(&a.queries)?;
            let qrels = Qrels::read(&a.qrels)?;
            let run = trec::read_run(&a.run)?;
            let cfg = PoolConfig {
                n_noise: a.n_noise,
                n_irrelevant: a.n_irrelevant,
                seed: a.seed,
            };
            let pools = rerank::build_pools(&queries, &qrels, &run, &ids, &cfg, mode);
            ensure_parent(&a.output)?;
            rerank::write_pools(&a.output, &pools)?;
            let meta = ArtifactMeta::new(&a.output, "pool", Some(a.seed))
                .params(cfg)?
                .inputs([
                    a.corpus.as_path(),
                    a.queries.as_path(),
                    a.qrels.as_path(),
                    a.run.as_path(),
                ]);
            write_meta(&a.output, &meta)?;
            tracing::info!("wrote {} pools", pools.len());
        }
        Command::Rerank(a) => {
            let docs = pipeline::load_docs(&a.corpus)?;
            let lookup = rerank::doc_lookup(&docs);
            let queries = benchgen::load_queries(&a.queries)?;
            let pools = rerank::read_pools(&a.pools)?;
            let (runs, params) = match a.method {
                Method::Symbolic => (
                    rerank::symbolic_rerank_all(&pools, &queries, &lookup, &a.scorer, mode)?,
                    serde_json::json!({ "scorer": a.scorer.to_string() }),
                ),
                Method::External => {
                    let Some(transport) = a.transport.clone() else {
                        bail!("--method external needs --transport subprocess:CMD or http:URL");
                    };
                    let cfg = ScorerProtocolConfig {
                        transport,
                        timeout: Duration::from_millis(a.timeout_ms),
                        retries: a.retries,
                        in_flight: a.in_flight,
                        strict: a.strict,
                    };
                    let (runs, warnings) =
                        rerank::external_rerank_all(&pools, &queries, &lookup, &cfg)?;
                    if !warnings.is_empty() {
                        tracing::warn!("{} scoring calls fell back to 0", warnings.len());
                    }
                    (
                        runs,
                        serde_json::json!({
                            "transport": format!("{:?}", cfg.transport),
                            "timeout_ms": a.timeout_ms,
                            "retries": a.retries,
                            "strict": a.strict,
                        }),
                    )
                }
            };
            ensure_parent(&a.output)?;
            trec::write_run(&a.output, &runs)?;
            let tag = runs
                .first()
                .map_or_else(|| "rerank".to_string(), |r| r.run_tag.clone());
            let meta = ArtifactMeta::new(&a.output, tag, None)
                .params(params)?
                .inputs([a.corpus.as_path(), a.queries.as_path(), a.pools.as_path()]);
            write_meta(&a.output, &meta)?;
        }
        Command::Eval(a) => {
            let run = trec::read_run(&a.run)?;
            let qrels = Qrels::read(&a.qrels)?;
            let report = eval::evaluate_run(&run, &qrels, &a.cutoffs, a.strict, mode)?;
            let keys = match (&a.strata, &a.queries) {
                (Some(s), _) => StratumKey::parse_list(s)?,
                (None, Some(_)) => vec![
                    StratumKey::Template,
                    StratumKey::Depth,
                    StratumKey::OperatorFamily,
                ],
                (None, None) => Vec::new(),
            };
            let report = if keys.is_empty() {
                report
            } else {
                let Some(qpath) = &a.queries else {
                    bail!("--strata needs --queries for template metadata");
                };
                let meta = eval::meta_from_queries(&benchgen::load_queries(qpath)?);
                eval::stratified_report(report, &meta, &keys)?
            };
            let provenance = vec![
                ("run".to_string(), report.run_tag.clone()),
                ("run file".to_string(), base_name(&a.run)),
                ("qrels".to_string(), base_name(&a.qrels)),
            ];
            eval::write_report(&a.output, &report, &provenance)?;
            for (name, value) in report.metric_names().iter().zip(&report.aggregate.means) {
                println!("{name}\t{value:.4}");
            }
        }
        Command::Pipeline(_) => unreachable!("handled in run"),
    }
    Ok(())
}

fn pipeline_cmd(cmd: PipelineCmd, threads: Option<usize>) -> Result<()> {
    match cmd {
        PipelineCmd::DefaultConfig => {
            print!("{}", PipelineConfig::default().to_toml());
            Ok(())
        }
        PipelineCmd::Run {
            config,
            stages,
            outdir,
            seed,
        } => {
            let mut cfg = match &config {
                Some(p) => PipelineConfig::from_toml_file(p)?,
                None => PipelineConfig::default(),
            };
            if let Some(o) = outdir {
                cfg.outdir = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let stages = Stage::parse_list(&stages)?;
            pipeline::run_pipeline(&cfg, &stages)
                .with_context(|| format!("pipeline into {}", cfg.outdir.display()))?;
            Ok(())
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}
