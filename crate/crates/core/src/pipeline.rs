//! End-to-end orchestration over a fixed output layout.
//!
//! ```text
//! outdir/
//!   corpus.jsonl
//!   queries.jsonl  qrels.txt  generation_report.json
//!   runs/{bm25,setcomp,oracle,rerank_symbolic,rerank_external}.trec
//!   pools.jsonl
//!   eval/<run>/{report.csv,strata.csv,report.md}  eval/summary.csv
//! ```
//!
//! Every artifact gets a `<name>.meta.json` sidecar with its run tag, seed,
//! parameters and input file names.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::benchgen::{self, Buckets, GenConfig};
use crate::corpus::{self, build_attribute_index, EntityDoc, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{self, StratumKey};
use crate::par::{self, Parallelism};
use crate::rerank::{self, PoolConfig, PredicateScorer, ScorerProtocolConfig, Transport};
use crate::retrieval::{self, Bm25Index, Bm25Params, Model, SearchIndexes, SetCompConfig};
use crate::trec::{self, Qrels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Generate,
    Search,
    Pool,
    Rerank,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Synth,
        Stage::Generate,
        Stage::Search,
        Stage::Pool,
        Stage::Rerank,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Generate => "generate",
            Stage::Search => "search",
            Stage::Pool => "pool",
            Stage::Rerank => "rerank",
            Stage::Eval => "eval",
        }
    }

    /// Comma list or `all`; the result is in pipeline order without repeats.
    pub fn parse_list(s: &str) -> Result<Vec<Stage>> {
        if s.trim() == "all" {
            return Ok(Stage::ALL.to_vec());
        }
        let mut v = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Stage>>>()?;
        v.sort();
        v.dedup();
        Ok(v)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Existing corpus; used when the synth stage is not run.
    pub path: Option<PathBuf>,
    pub n_entities: usize,
    pub n_attributes: usize,
    pub popularity_skew: f64,
    pub min_attrs: usize,
    pub max_attrs: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        CorpusSection {
            path: None,
            n_entities: s.n_entities,
            n_attributes: s.n_attributes,
            popularity_skew: s.popularity_skew,
            min_attrs: s.min_attrs,
            max_attrs: s.max_attrs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub limit: usize,
    pub buckets: String,
    pub quota: Option<usize>,
    pub max_attempts: Option<usize>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            limit: 100,
            buckets: "1-3,4-10,11-35,36-100,101-200".into(),
            quota: None,
            max_attempts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub models: Vec<String>,
    pub k: usize,
    pub k1: f64,
    pub b: f64,
    pub alpha: f64,
}

impl Default for SearchSection {
    fn default() -> Self {
        let p = Bm25Params::default();
        SearchSection {
            models: vec!["bm25".into(), "setcomp".into(), "oracle".into()],
            k: 1000,
            k1: p.k1,
            b: p.b,
            alpha: SetCompConfig::default().neg_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolSection {
    /// First-stage run the pools are cut from.
    pub run: String,
    pub n_noise: usize,
    pub n_irrelevant: usize,
}

impl Default for PoolSection {
    fn default() -> Self {
        PoolSection {
            run: "bm25".into(),
            n_noise: 5,
            n_irrelevant: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankSection {
    pub methods: Vec<String>,
    pub scorer: String,
    pub transport: Option<String>,
    pub timeout_ms: u64,
    pub retries: usize,
    pub in_flight: usize,
    pub strict: bool,
}

impl Default for RerankSection {
    fn default() -> Self {
        RerankSection {
            methods: vec!["symbolic".into()],
            scorer: "exact:0.05".into(),
            transport: None,
            timeout_ms: 30_000,
            retries: 2,
            in_flight: 1,
            strict: false,
        }
    }
}

impl RerankSection {
    pub fn protocol(&self) -> Result<ScorerProtocolConfig> {
        let transport: Transport = self
            .transport
            .as_deref()
            .ok_or_else(|| Error::Config("external re-ranking needs a transport".into()))?
            .parse()?;
        let cfg = ScorerProtocolConfig {
            transport,
            timeout: Duration::from_millis(self.timeout_ms),
            retries: self.retries,
            in_flight: self.in_flight,
            strict: self.strict,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub cutoffs: Vec<usize>,
    pub strata: Vec<String>,
    pub strict: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            cutoffs: eval::DEFAULT_CUTOFFS.to_vec(),
            strata: vec!["template".into(), "depth".into(), "operator_family".into()],
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub outdir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 = one per core.
    pub threads: usize,
    /// Existing queries/qrels; used when the generate stage is not run.
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub corpus: CorpusSection,
    pub generate: GenerateSection,
    pub search: SearchSection,
    pub pool: PoolSection,
    pub rerank: RerankSection,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            outdir: PathBuf::from("out"),
            seed: 7,
            threads: 0,
            queries: None,
            qrels: None,
            corpus: CorpusSection::default(),
            generate: GenerateSection::default(),
            search: SearchSection::default(),
            pool: PoolSection::default(),
            rerank: RerankSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.outdir)
    }

    pub fn synth_config(&self) -> SynthConfig {
        let c = &self.corpus;
        SynthConfig {
            n_entities: c.n_entities,
            n_attributes: c.n_attributes,
            popularity_skew: c.popularity_skew,
            min_attrs: c.min_attrs,
            max_attrs: c.max_attrs,
            seed: self.seed,
        }
    }

    pub fn gen_config(&self) -> Result<GenConfig> {
        let g = &self.generate;
        let buckets: Buckets = g.buckets.parse()?;
        let mut cfg = GenConfig::with_limit(g.limit, self.seed);
        cfg.per_bucket_quota = g.quota.unwrap_or(g.limit / buckets.len());
        cfg.max_attempts = g.max_attempts.unwrap_or(cfg.max_attempts);
        cfg.buckets = buckets;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bm25_params(&self) -> Bm25Params {
        Bm25Params {
            k1: self.search.k1,
            b: self.search.b,
        }
    }

    pub fn setcomp_config(&self) -> SetCompConfig {
        SetCompConfig {
            neg_weight: self.search.alpha,
            top_k: self.search.k,
        }
    }

    pub fn model(&self, name: &str) -> Result<Model> {
        match name {
            "bm25" => Ok(Model::Bm25),
            "setcomp" => Ok(Model::SetComp(self.setcomp_config())),
            "oracle" => Ok(Model::Oracle),
            _ => Err(Error::Config(format!("unknown model {name:?}"))),
        }
    }

    pub fn pool_config(&self) -> PoolConfig {
        PoolConfig {
            n_noise: self.pool.n_noise,
            n_irrelevant: self.pool.n_irrelevant,
            seed: self.seed,
        }
    }

    /// Names of the runs the eval stage scores, in output order.
    pub fn run_names(&self) -> Vec<String> {
        let mut v = self.search.models.clone();
        v.extend(self.rerank.methods.iter().map(|m| format!("rerank_{m}")));
        v
    }

    fn corpus_input(&self, stages: &[Stage]) -> PathBuf {
        match (&self.corpus.path, stages.contains(&Stage::Synth)) {
            (Some(p), false) => p.clone(),
            _ => self.layout().corpus(),
        }
    }

    fn queries_input(&self, stages: &[Stage]) -> PathBuf {
        match (&self.queries, stages.contains(&Stage::Generate)) {
            (Some(p), false) => p.clone(),
            _ => self.layout().queries(),
        }
    }

    fn qrels_input(&self, stages: &[Stage]) -> PathBuf {
        match (&self.qrels, stages.contains(&Stage::Generate)) {
            (Some(p), false) => p.clone(),
            _ => self.layout().qrels(),
        }
    }

    /// Explicitly configured inputs must exist.
    pub fn validate_inputs(&self, stages: &[Stage]) -> Result<()> {
        let explicit = [
            (&self.corpus.path, Stage::Synth),
            (&self.queries, Stage::Generate),
            (&self.qrels, Stage::Generate),
        ];
        for (path, producer) in explicit {
            if let Some(p) = path {
                if !stages.contains(&producer) && !p.exists() {
                    return Err(Error::Config(format!(
                        "input {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }

    pub fn queries(&self) -> PathBuf {
        self.root.join(benchgen::QUERIES_FILE)
    }

    pub fn qrels(&self) -> PathBuf {
        self.root.join(benchgen::QRELS_FILE)
    }

    pub fn generation_report(&self) -> PathBuf {
        self.root.join(benchgen::REPORT_FILE)
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run(&self, name: &str) -> PathBuf {
        self.runs().join(format!("{name}.trec"))
    }

    pub fn pools(&self) -> PathBuf {
        self.root.join("pools.jsonl")
    }

    pub fn eval(&self, run_name: &str) -> PathBuf {
        self.root.join("eval").join(run_name)
    }

    pub fn eval_summary(&self) -> PathBuf {
        self.root.join("eval").join("summary.csv")
    }
}

/// Provenance sidecar written next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub artifact: String,
    pub generator: String,
    pub run_tag: String,
    pub seed: Option<u64>,
    pub params: serde_json::Value,
    /// Input file names (base names only, so outputs do not depend on where
    /// the pipeline ran).
    pub inputs: Vec<String>,
}

impl ArtifactMeta {
    pub fn new(artifact: &Path, run_tag: impl Into<String>, seed: Option<u64>) -> Self {
        ArtifactMeta {
            artifact: base_name(artifact),
            generator: concat!("setcomp ", env!("CARGO_PKG_VERSION")).to_string(),
            run_tag: run_tag.into(),
            seed,
            params: serde_json::Value::Null,
            inputs: Vec::new(),
        }
    }

    pub fn params(mut self, params: impl Serialize) -> Result<Self> {
        self.params = serde_json::to_value(params)?;
        Ok(self)
    }

    pub fn inputs<'a>(mut self, paths: impl IntoIterator<Item = &'a Path>) -> Self {
        self.inputs = paths.into_iter().map(base_name).collect();
        self
    }
}

pub fn base_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

pub fn meta_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn write_meta(artifact: &Path, meta: &ArtifactMeta) -> Result<()> {
    let path = meta_path(artifact);
    let json = serde_json::to_string_pretty(meta)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn load_docs(path: &Path) -> Result<Vec<EntityDoc>> {
    let loaded = corpus::load_corpus(path)?;
    if !loaded.skipped.is_empty() {
        tracing::warn!("{}: {} lines skipped", path.display(), loaded.skipped.len());
    }
    if loaded.docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(loaded.docs)
}

/// Run the requested stages in pipeline order inside a pool of
/// `cfg.threads` workers. An empty stage list is a no-op.
pub fn run_pipeline(cfg: &PipelineConfig, stages: &[Stage]) -> Result<()> {
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    if stages.is_empty() {
        return Ok(());
    }
    cfg.validate_inputs(&stages)?;
    ensure_dir(&cfg.outdir)?;
    par::with_threads(cfg.threads, || {
        for &stage in &stages {
            tracing::info!("stage {stage}");
            run_stage(cfg, stage, &stages).map_err(|e| Error::Stage {
                stage: stage.name(),
                source: Box::new(e),
            })?;
        }
        Ok(())
    })
}

fn run_stage(cfg: &PipelineConfig, stage: Stage, stages: &[Stage]) -> Result<()> {
    let mode = Parallelism::default();
    let layout = cfg.layout();
    match stage {
        Stage::Synth => {
            let synth = cfg.synth_config();
            let docs = corpus::synth_corpus(&synth)?;
            let out = layout.corpus();
            corpus::write_corpus(&out, &docs)?;
            write_meta(
                &out,
                &ArtifactMeta::new(&out, "synth", Some(cfg.seed)).params(&synth)?,
            )
        }
        Stage::Generate => {
            let input = cfg.corpus_input(stages);
            let docs = load_docs(&input)?;
            let index = build_attribute_index(&docs)?;
            let gen = cfg.gen_config()?;
            let bench = benchgen::generate_benchmark(&index, &gen, mode)?;
            for t in bench.report.templates.iter().filter(|t| t.underfilled()) {
                tracing::warn!(
                    "template {} underfilled: {} of {} queries",
                    t.template,
                    t.accepted,
                    t.limit
                );
            }
            benchgen::write_benchmark(layout.root(), &bench)?;
            for out in [layout.queries(), layout.qrels(), layout.generation_report()] {
                let meta = ArtifactMeta::new(&out, "benchgen", Some(cfg.seed))
                    .params(&gen)?
                    .inputs([input.as_path()]);
                write_meta(&out, &meta)?;
            }
            Ok(())
        }
        Stage::Search => {
            let corpus_path = cfg.corpus_input(stages);
            let queries_path = cfg.queries_input(stages);
            let docs = load_docs(&corpus_path)?;
            let queries = benchgen::load_queries(&queries_path)?;
            let models = cfg
                .search
                .models
                .iter()
                .map(|m| cfg.model(m))
                .collect::<Result<Vec<_>>>()?;
            let lexical = models.iter().any(|m| !matches!(m, Model::Oracle));
            let bm25 = if lexical {
                Some(Bm25Index::build(&docs, cfg.bm25_params(), mode)?)
            } else {
                None
            };
            let attrs = if models.contains(&Model::Oracle) {
                Some(build_attribute_index(&docs)?)
            } else {
                None
            };
            let indexes = SearchIndexes {
                bm25: bm25.as_ref(),
                attributes: attrs.as_ref(),
            };
            ensure_dir(&layout.runs())?;
            for (name, model) in cfg.search.models.iter().zip(models) {
                let runs = retrieval::search_all(model, &queries, &indexes, cfg.search.k, mode)?;
                let out = layout.run(name);
                trec::write_run(&out, &runs)?;
                let tag = runs
                    .first()
                    .map_or_else(|| name.clone(), |r| r.run_tag.clone());
                let meta = ArtifactMeta::new(&out, tag, None)
                    .params(&cfg.search)?
                    .inputs([corpus_path.as_path(), queries_path.as_path()]);
                write_meta(&out, &meta)?;
            }
            Ok(())
        }
        Stage::Pool => {
            let corpus_path = cfg.corpus_input(stages);
            let queries_path = cfg.queries_input(stages);
            let qrels_path = cfg.qrels_input(stages);
            let run_path = layout.run(&cfg.pool.run);
            let docs = load_docs(&corpus_path)?;
            let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
            let queries = benchgen::load_queries(&queries_path)?;
            let qrels = Qrels::read(&qrels_path)?;
            let run = trec::read_run(&run_path)?;
            let pcfg = cfg.pool_config();
            let pools = rerank::build_pools(&queries, &qrels, &run, &ids, &pcfg, mode);
            let out = layout.pools();
            rerank::write_pools(&out, &pools)?;
            let meta = ArtifactMeta::new(&out, "pool", Some(cfg.seed))
                .params(pcfg)?
                .inputs([
                    corpus_path.as_path(),
                    queries_path.as_path(),
                    qrels_path.as_path(),
                    run_path.as_path(),
                ]);
            write_meta(&out, &meta)
        }
        Stage::Rerank => {
            let corpus_path = cfg.corpus_input(stages);
            let queries_path = cfg.queries_input(stages);
            let docs = load_docs(&corpus_path)?;
            let lookup = rerank::doc_lookup(&docs);
            let queries = benchgen::load_queries(&queries_path)?;
            let pools = rerank::read_pools(&layout.pools())?;
            ensure_dir(&layout.runs())?;
            for method in &cfg.rerank.methods {
                let (runs, params) = match method.as_str() {
                    "symbolic" => {
                        let scorer: PredicateScorer = cfg.rerank.scorer.parse()?;
                        let runs =
                            rerank::symbolic_rerank_all(&pools, &queries, &lookup, &scorer, mode)?;
                        (runs, serde_json::json!({ "scorer": scorer.to_string() }))
                    }
                    "external" => {
                        let pcfg = cfg.rerank.protocol()?;
                        let (runs, warnings) =
                            rerank::external_rerank_all(&pools, &queries, &lookup, &pcfg)?;
                        if !warnings.is_empty() {
                            tracing::warn!("{} scoring calls fell back to 0", warnings.len());
                        }
                        (
                            runs,
                            serde_json::json!({
                                "transport": cfg.rerank.transport,
                                "timeout_ms": cfg.rerank.timeout_ms,
                                "retries": cfg.rerank.retries,
                                "strict": cfg.rerank.strict,
                            }),
                        )
                    }
                    other => return Err(Error::Config(format!("unknown rerank method {other:?}"))),
                };
                let out = layout.run(&format!("rerank_{method}"));
                trec::write_run(&out, &runs)?;
                let tag = runs
                    .first()
                    .map_or_else(|| method.clone(), |r| r.run_tag.clone());
                let meta = ArtifactMeta::new(&out, tag, Some(cfg.seed))
                    .params(params)?
                    .inputs([
                        corpus_path.as_path(),
                        queries_path.as_path(),
                        layout.pools().as_path(),
                    ]);
                write_meta(&out, &meta)?;
            }
            Ok(())
        }
        Stage::Eval => {
            let queries_path = cfg.queries_input(stages);
            let qrels_path = cfg.qrels_input(stages);
            let qrels = Qrels::read(&qrels_path)?;
            let meta = eval::meta_from_queries(&benchgen::load_queries(&queries_path)?);
            let keys = cfg
                .eval
                .strata
                .iter()
                .map(|s| s.parse())
                .collect::<Result<Vec<StratumKey>>>()?;
            let mut summary = String::new();
            for name in cfg.run_names() {
                let run_path = layout.run(&name);
                let run = trec::read_run(&run_path)?;
                let report =
                    eval::evaluate_run(&run, &qrels, &cfg.eval.cutoffs, cfg.eval.strict, mode)?;
                let report = eval::stratified_report(report, &meta, &keys)?;
                if summary.is_empty() {
                    summary = format!("run,{}\n", report.metric_names().join(","));
                }
                let means: Vec<String> =
                    report.aggregate.means.iter().map(f64::to_string).collect();
                summary.push_str(&format!("{name},{}\n", means.join(",")));
                let provenance = vec![
                    ("run".to_string(), report.run_tag.clone()),
                    ("run file".to_string(), base_name(&run_path)),
                    ("qrels".to_string(), base_name(&qrels_path)),
                    ("seed".to_string(), cfg.seed.to_string()),
                ];
                let dir = layout.eval(&name);
                eval::write_report(&dir, &report, &provenance)?;
            }
            let out = layout.eval_summary();
            ensure_dir(out.parent().expect("eval dir"))?;
            fs::write(&out, summary).map_err(|e| Error::io(&out, e))?;
            let meta = ArtifactMeta::new(&out, "eval", Some(cfg.seed))
                .params(&cfg.eval)?
                .inputs([qrels_path.as_path(), queries_path.as_path()]);
            write_meta(&out, &meta)
        }
    }
}
