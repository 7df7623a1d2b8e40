//! Curated re-ranking pools, the symbolic probabilistic re-ranker, and the
//! external pointwise scorer protocol.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchgen::QueryRecord;
use crate::corpus::EntityDoc;
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::query::LogicalExpr;
use crate::retrieval::tokenize;
use crate::trec::{Qrels, Ranking};

/// The prompt template documented for LLM-backed external scorers.
pub const LLM_PROMPT_TEMPLATE: &str = "From a scale of 0 to 4, judge the relevance between the query and the document.  Return ONLY the integer score. \nQuery: {query_text}\nDocument: {document_text}\nOutput:";

pub fn render_prompt(query_text: &str, document_text: &str) -> String {
    LLM_PROMPT_TEMPLATE
        .replace("{query_text}", query_text)
        .replace("{document_text}", document_text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gold,
    Noise,
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolCandidate {
    pub doc_id: String,
    pub provenance: Provenance,
    /// Rank in the first-stage run; `None` for random fill.
    pub bm25_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePool {
    pub query_id: String,
    pub candidates: Vec<PoolCandidate>,
}

impl CandidatePool {
    pub fn count(&self, p: Provenance) -> usize {
        self.candidates.iter().filter(|c| c.provenance == p).count()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub n_noise: usize,
    pub n_irrelevant: usize,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            n_noise: 5,
            n_irrelevant: 5,
            seed: 0,
        }
    }
}

/// Seeded stream for the pool of the `index`-th query.
pub fn pool_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Build a curated pool: all gold docs, the first `n_noise` non-gold docs of
/// the run, and the last `n_irrelevant` non-gold docs of the run. Shortfalls
/// are filled with seeded uniform draws from the remaining non-gold corpus
/// docs. The pool is shuffled before it is returned.
pub fn build_candidate_pool(
    query_id: &str,
    gold: &BTreeSet<String>,
    bm25_run: &Ranking,
    corpus_ids: &[String],
    n_noise: usize,
    n_irrelevant: usize,
    rng: &mut ChaCha8Rng,
) -> CandidatePool {
    let mut candidates: Vec<PoolCandidate> = gold
        .iter()
        .map(|d| PoolCandidate {
            doc_id: d.clone(),
            provenance: Provenance::Gold,
            bm25_rank: bm25_run.rank_of(d),
        })
        .collect();
    let mut chosen: HashSet<&str> = gold.iter().map(String::as_str).collect();

    let non_gold: Vec<_> = bm25_run
        .entries
        .iter()
        .filter(|e| !gold.contains(&e.doc_id))
        .collect();
    let mut noise = 0;
    for e in non_gold.iter().take(n_noise) {
        chosen.insert(&e.doc_id);
        candidates.push(PoolCandidate {
            doc_id: e.doc_id.clone(),
            provenance: Provenance::Noise,
            bm25_rank: Some(e.rank),
        });
        noise += 1;
    }
    let mut irrelevant = 0;
    for e in non_gold.iter().rev() {
        if irrelevant == n_irrelevant {
            break;
        }
        if chosen.insert(&e.doc_id) {
            candidates.push(PoolCandidate {
                doc_id: e.doc_id.clone(),
                provenance: Provenance::Irrelevant,
                bm25_rank: Some(e.rank),
            });
            irrelevant += 1;
        }
    }

    let shortfall = (n_noise - noise) + (n_irrelevant - irrelevant);
    if shortfall > 0 {
        let mut eligible: Vec<&String> = corpus_ids
            .iter()
            .filter(|d| !chosen.contains(d.as_str()))
            .collect();
        if eligible.len() < shortfall {
            tracing::warn!(
                "query {query_id}: only {} docs available to fill {shortfall} pool slots",
                eligible.len()
            );
        }
        let mut fill = Vec::new();
        while fill.len() < shortfall && !eligible.is_empty() {
            let i = rng.random_range(0..eligible.len());
            fill.push(eligible.swap_remove(i).clone());
        }
        tracing::debug!(
            "query {query_id}: filled {} pool slots at random",
            fill.len()
        );
        let mut fill = fill.into_iter();
        for (provenance, missing) in [
            (Provenance::Noise, n_noise - noise),
            (Provenance::Irrelevant, n_irrelevant - irrelevant),
        ] {
            for doc_id in fill.by_ref().take(missing) {
                candidates.push(PoolCandidate {
                    doc_id,
                    provenance,
                    bm25_rank: None,
                });
            }
        }
    }

    candidates.shuffle(rng);
    CandidatePool {
        query_id: query_id.to_string(),
        candidates,
    }
}

#[derive(Serialize, Deserialize)]
struct PoolLine {
    query_id: String,
    doc_id: String,
    provenance: Provenance,
    #[serde(default)]
    bm25_rank: Option<usize>,
}

pub fn write_pools(path: &Path, pools: &[CandidatePool]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in pools {
        for c in &p.candidates {
            let line = PoolLine {
                query_id: p.query_id.clone(),
                doc_id: c.doc_id.clone(),
                provenance: c.provenance,
                bm25_rank: c.bm25_rank,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read pools back, preserving candidate order and first-seen query order.
pub fn read_pools(path: &Path) -> Result<Vec<CandidatePool>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pools: Vec<CandidatePool> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoolLine = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        let idx = *slot.entry(rec.query_id.clone()).or_insert_with(|| {
            pools.push(CandidatePool {
                query_id: rec.query_id.clone(),
                candidates: Vec::new(),
            });
            pools.len() - 1
        });
        pools[idx].candidates.push(PoolCandidate {
            doc_id: rec.doc_id,
            provenance: rec.provenance,
            bm25_rank: rec.bm25_rank,
        });
    }
    Ok(pools)
}

/// Per-document predicate plausibility in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredicateScorer {
    /// `1 - ε` when the attribute is in the entity's list, else `ε`.
    ExactAttr { epsilon: f64 },
    /// Fraction of the attribute's tokens present in the text, clamped to
    /// `[ε, 1 - ε]`.
    LexicalOverlap { epsilon: f64 },
}

impl Default for PredicateScorer {
    fn default() -> Self {
        PredicateScorer::ExactAttr { epsilon: 0.05 }
    }
}

impl PredicateScorer {
    pub fn epsilon(&self) -> f64 {
        match *self {
            PredicateScorer::ExactAttr { epsilon }
            | PredicateScorer::LexicalOverlap { epsilon } => epsilon,
        }
    }
}

impl fmt::Display for PredicateScorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredicateScorer::ExactAttr { epsilon } => write!(f, "exact:{epsilon}"),
            PredicateScorer::LexicalOverlap { epsilon } => write!(f, "overlap:{epsilon}"),
        }
    }
}

impl FromStr for PredicateScorer {
    type Err = Error;

    /// `exact`, `exact:0.05`, `overlap`, `overlap:0.1`.
    fn from_str(s: &str) -> Result<Self> {
        let (mode, eps) = match s.split_once(':') {
            Some((m, e)) => (
                m,
                e.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad epsilon in {s:?}")))?,
            ),
            None => (s, 0.05),
        };
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::Config(format!(
                "epsilon must be in (0, 0.5), got {eps}"
            )));
        }
        match mode {
            "exact" | "exact_attr" => Ok(PredicateScorer::ExactAttr { epsilon: eps }),
            "overlap" | "lexical_overlap" => Ok(PredicateScorer::LexicalOverlap { epsilon: eps }),
            _ => Err(Error::Config(format!("unknown scorer {s:?}"))),
        }
    }
}

/// Unclamped token overlap `|tok(atom) ∩ tok(text)| / |tok(atom)|`.
pub fn lexical_overlap(atom: &str, text: &str) -> f64 {
    let atom_tokens: BTreeSet<String> = tokenize(atom).into_iter().collect();
    if atom_tokens.is_empty() {
        return 0.0;
    }
    let text_tokens: HashSet<String> = tokenize(text).into_iter().collect();
    atom_tokens
        .iter()
        .filter(|t| text_tokens.contains(*t))
        .count() as f64
        / atom_tokens.len() as f64
}

pub fn predicate_plausibility(atom: &str, doc: &EntityDoc, scorer: &PredicateScorer) -> f64 {
    match *scorer {
        PredicateScorer::ExactAttr { epsilon } => {
            if doc.has_attribute(atom) {
                1.0 - epsilon
            } else {
                epsilon
            }
        }
        PredicateScorer::LexicalOverlap { epsilon } => {
            lexical_overlap(atom, &doc.text).clamp(epsilon, 1.0 - epsilon)
        }
    }
}

/// Bottom-up aggregation: product for conjunction, noisy-or for
/// disjunction, complement for negation.
pub fn aggregate(expr: &LogicalExpr, leaf: &mut impl FnMut(&str) -> f64) -> f64 {
    match expr {
        LogicalExpr::Atom(a) => leaf(a),
        LogicalExpr::And(cs) => cs.iter().map(|c| aggregate(c, leaf)).product(),
        LogicalExpr::Or(cs) => 1.0 - cs.iter().map(|c| 1.0 - aggregate(c, leaf)).product::<f64>(),
        LogicalExpr::Not(c) => 1.0 - aggregate(c, leaf),
    }
}

pub fn symbolic_score(expr: &LogicalExpr, doc: &EntityDoc, scorer: &PredicateScorer) -> f64 {
    aggregate(expr, &mut |a| predicate_plausibility(a, doc, scorer))
}

pub fn symbolic_run_tag(scorer: &PredicateScorer) -> String {
    format!("symbolic_{}", scorer.to_string().replace(':', "_eps="))
}

/// Doc id → document lookup.
pub type DocLookup<'a> = HashMap<&'a str, &'a EntityDoc>;

pub fn doc_lookup(docs: &[EntityDoc]) -> DocLookup<'_> {
    docs.iter().map(|d| (d.doc_id.as_str(), d)).collect()
}

fn resolve<'a>(docs: &DocLookup<'a>, id: &str) -> Result<&'a EntityDoc> {
    docs.get(id)
        .copied()
        .ok_or_else(|| Error::Config(format!("pool document {id} is not in the corpus")))
}

/// Rank a pool by aggregated plausibility, descending, ties by doc id.
pub fn symbolic_rerank(
    expr: &LogicalExpr,
    pool: &CandidatePool,
    docs: &DocLookup<'_>,
    scorer: &PredicateScorer,
    mode: Parallelism,
) -> Result<Ranking> {
    let scored = par::try_map(mode, &pool.candidates, |c| {
        let doc = resolve(docs, &c.doc_id)?;
        Ok::<_, Error>((c.doc_id.clone(), symbolic_score(expr, doc, scorer)))
    })?;
    Ok(Ranking::from_scored(
        pool.query_id.clone(),
        symbolic_run_tag(scorer),
        scored,
        None,
    ))
}

/// Pools for every query with judgments, in query order. The `i`-th query
/// draws from its own seeded stream, so pools do not depend on each other.
pub fn build_pools(
    queries: &[QueryRecord],
    qrels: &Qrels,
    bm25_run: &[Ranking],
    corpus_ids: &[String],
    cfg: &PoolConfig,
    mode: Parallelism,
) -> Vec<CandidatePool> {
    let runs: HashMap<&str, &Ranking> = bm25_run.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let pools = par::map_indexed(mode, queries, |i, q| {
        let Some(gold) = qrels.get(&q.query_id) else {
            tracing::warn!("query {} has no judgments; no pool built", q.query_id);
            return None;
        };
        let empty;
        let run = match runs.get(q.query_id.as_str()) {
            Some(r) => *r,
            None => {
                tracing::warn!("query {} missing from the first-stage run", q.query_id);
                empty = Ranking::empty(q.query_id.clone(), "none");
                &empty
            }
        };
        let mut rng = pool_rng(cfg.seed, i);
        Some(build_candidate_pool(
            &q.query_id,
            gold,
            run,
            corpus_ids,
            cfg.n_noise,
            cfg.n_irrelevant,
            &mut rng,
        ))
    });
    pools.into_iter().flatten().collect()
}

fn query_index(queries: &[QueryRecord]) -> HashMap<&str, &QueryRecord> {
    queries.iter().map(|q| (q.query_id.as_str(), q)).collect()
}

fn query_for<'a>(index: &HashMap<&str, &'a QueryRecord>, qid: &str) -> Result<&'a QueryRecord> {
    index
        .get(qid)
        .copied()
        .ok_or_else(|| Error::Config(format!("pool query {qid} is not in the queries file")))
}

/// Symbolic re-ranking of every pool, in pool order.
pub fn symbolic_rerank_all(
    pools: &[CandidatePool],
    queries: &[QueryRecord],
    docs: &DocLookup<'_>,
    scorer: &PredicateScorer,
    mode: Parallelism,
) -> Result<Vec<Ranking>> {
    let index = query_index(queries);
    par::try_map(mode, pools, |pool| {
        let expr = query_for(&index, &pool.query_id)?.expr()?;
        symbolic_rerank(&expr, pool, docs, scorer, Parallelism::Sequential)
    })
}

// ---------------------------------------------------------------------------
// External pointwise scorers

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    /// Shell command; one JSON request per line on its stdin, one response
    /// per line on its stdout.
    Subprocess(String),
    /// Base URL; requests are POSTed to `{url}/score`.
    Http(String),
}

impl FromStr for Transport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("subprocess:") {
            Ok(Transport::Subprocess(cmd.to_string()))
        } else if let Some(url) = s.strip_prefix("http:") {
            // Accept both "http:URL" and a bare "http://..." URL.
            let url = if url.starts_with("//") {
                format!("http:{url}")
            } else {
                url.to_string()
            };
            Ok(Transport::Http(url))
        } else if s.starts_with("https://") {
            Ok(Transport::Http(s.to_string()))
        } else {
            Err(Error::Config(format!(
                "transport must be subprocess:CMD or http:URL, got {s:?}"
            )))
        }
    }
}

impl Transport {
    fn label(&self) -> &'static str {
        match self {
            Transport::Subprocess(_) => "subprocess",
            Transport::Http(_) => "http",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScorerProtocolConfig {
    pub transport: Transport,
    pub timeout: Duration,
    /// Reconnect attempts after a transport failure before giving up.
    pub retries: usize,
    /// Concurrent scoring connections.
    pub in_flight: usize,
    /// Fail on malformed responses instead of scoring them 0.
    pub strict: bool,
}

impl ScorerProtocolConfig {
    pub fn new(transport: Transport) -> Self {
        ScorerProtocolConfig {
            transport,
            timeout: Duration::from_secs(30),
            retries: 2,
            in_flight: 1,
            strict: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(Error::Config("scorer timeout must be positive".into()));
        }
        if self.in_flight == 0 {
            return Err(Error::Config("in-flight limit must be at least 1".into()));
        }
        Ok(())
    }

    pub fn run_tag(&self) -> String {
        format!("external_{}", self.transport.label())
    }
}

pub const MAX_SCORE: i64 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub qid: String,
    pub query: String,
    pub docid: String,
    pub doc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub qid: String,
    pub docid: String,
    pub score: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScoreOutcome {
    Scored(u8),
    Malformed(String),
    TimedOut,
}

/// Validate a raw response payload against a request.
pub fn parse_response(req: &ScoreRequest, payload: &str) -> ScoreOutcome {
    let resp: ScoreResponse = match serde_json::from_str(payload.trim()) {
        Ok(r) => r,
        Err(e) => return ScoreOutcome::Malformed(format!("unparseable response: {e}")),
    };
    if resp.qid != req.qid || resp.docid != req.docid {
        return ScoreOutcome::Malformed(format!(
            "response for ({}, {}) does not match request",
            resp.qid, resp.docid
        ));
    }
    score_value(&resp.score)
}

fn score_value(v: &serde_json::Value) -> ScoreOutcome {
    match v.as_i64() {
        Some(s) if (0..=MAX_SCORE).contains(&s) => ScoreOutcome::Scored(s as u8),
        Some(s) => ScoreOutcome::Malformed(format!("score {s} outside 0..={MAX_SCORE}")),
        None => ScoreOutcome::Malformed(format!("score {v} is not an integer")),
    }
}

/// One connection to an external scorer.
pub trait PointwiseScorer: Send {
    /// `Err` only for transport failures that survived the retry budget.
    fn score(&mut self, req: &ScoreRequest) -> Result<ScoreOutcome>;
}

pub struct SubprocessScorer {
    command: String,
    timeout: Duration,
    retries: usize,
    child: Option<(Child, ChildStdin, Receiver<String>)>,
}

impl SubprocessScorer {
    pub fn new(command: &str, timeout: Duration, retries: usize) -> Self {
        SubprocessScorer {
            command: command.to_string(),
            timeout,
            retries,
            child: None,
        }
    }

    fn spawn(&mut self) -> Result<()> {
        self.shutdown();
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport(format!("spawning {:?}: {e}", self.command)))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        self.child = Some((child, stdin, rx));
        Ok(())
    }

    fn shutdown(&mut self) {
        if let Some((mut child, stdin, _)) = self.child.take() {
            drop(stdin);
            let _ = child.kill();
            let _ = child.wait();
        }
    }

    /// `Ok(None)` means the child went away and should be restarted.
    fn exchange(&mut self, req: &ScoreRequest) -> Result<Option<ScoreOutcome>> {
        if self.child.is_none() {
            self.spawn()?;
        }
        let (_, stdin, rx) = self.child.as_mut().expect("spawned");
        let mut line = serde_json::to_string(req)?;
        line.push('\n');
        if stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .is_err()
        {
            return Ok(None);
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(left) {
                Ok(payload) => {
                    // Late answers to earlier timed-out requests are dropped.
                    if let Ok(r) = serde_json::from_str::<ScoreResponse>(&payload) {
                        if r.qid != req.qid || r.docid != req.docid {
                            continue;
                        }
                    }
                    return Ok(Some(parse_response(req, &payload)));
                }
                Err(RecvTimeoutError::Timeout) => return Ok(Some(ScoreOutcome::TimedOut)),
                Err(RecvTimeoutError::Disconnected) => return Ok(None),
            }
        }
    }
}

impl PointwiseScorer for SubprocessScorer {
    fn score(&mut self, req: &ScoreRequest) -> Result<ScoreOutcome> {
        for _ in 0..=self.retries {
            match self.exchange(req)? {
                Some(outcome) => return Ok(outcome),
                None => {
                    tracing::warn!("scorer process {:?} exited; restarting", self.command);
                    self.shutdown();
                }
            }
        }
        Err(Error::Transport(format!(
            "scorer process {:?} failed {} times",
            self.command,
            self.retries + 1
        )))
    }
}

impl Drop for SubprocessScorer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub struct HttpScorer {
    agent: ureq::Agent,
    url: String,
    retries: usize,
}

impl HttpScorer {
    pub fn new(base_url: &str, timeout: Duration, retries: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let base = base_url.trim_end_matches('/');
        let url = if base.ends_with("/score") {
            base.to_string()
        } else {
            format!("{base}/score")
        };
        HttpScorer {
            agent,
            url,
            retries,
        }
    }
}

impl PointwiseScorer for HttpScorer {
    fn score(&mut self, req: &ScoreRequest) -> Result<ScoreOutcome> {
        let mut last = String::new();
        for _ in 0..=self.retries {
            match self.agent.post(&self.url).send_json(req) {
                Ok(mut resp) => {
                    let status = resp.status();
                    let body = resp.body_mut().read_to_string().unwrap_or_default();
                    if !status.is_success() {
                        return Ok(ScoreOutcome::Malformed(format!("HTTP {status}: {body}")));
                    }
                    return Ok(parse_response(req, &body));
                }
                Err(ureq::Error::Timeout(_)) => return Ok(ScoreOutcome::TimedOut),
                Err(e) => {
                    tracing::warn!("POST {} failed: {e}", self.url);
                    last = e.to_string();
                }
            }
        }
        Err(Error::Transport(format!("POST {}: {last}", self.url)))
    }
}

pub fn connect(cfg: &ScorerProtocolConfig) -> Box<dyn PointwiseScorer> {
    match &cfg.transport {
        Transport::Subprocess(cmd) => {
            Box::new(SubprocessScorer::new(cmd, cfg.timeout, cfg.retries))
        }
        Transport::Http(url) => Box::new(HttpScorer::new(url, cfg.timeout, cfg.retries)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoringWarning {
    pub query_id: String,
    pub doc_id: String,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct RerankOutcome {
    pub ranking: Ranking,
    pub warnings: Vec<ScoringWarning>,
}

/// Reusable set of scorer connections, one per in-flight slot.
pub struct ExternalReranker {
    cfg: ScorerProtocolConfig,
    scorers: Vec<Mutex<Box<dyn PointwiseScorer>>>,
}

impl ExternalReranker {
    pub fn new(cfg: ScorerProtocolConfig) -> Result<Self> {
        cfg.validate()?;
        let scorers = (0..cfg.in_flight)
            .map(|_| Mutex::new(connect(&cfg)))
            .collect();
        Ok(ExternalReranker { cfg, scorers })
    }

    /// With custom scorer connections (e.g. in-process test doubles).
    pub fn with_scorers(cfg: ScorerProtocolConfig, scorers: Vec<Box<dyn PointwiseScorer>>) -> Self {
        ExternalReranker {
            cfg,
            scorers: scorers.into_iter().map(Mutex::new).collect(),
        }
    }

    /// Score every candidate once and rank by score descending, ties by
    /// first-stage rank (unranked last) then doc id. Timeouts and malformed
    /// responses score 0 and are reported as warnings.
    pub fn rerank(
        &self,
        pool: &CandidatePool,
        query_text: &str,
        docs: &DocLookup<'_>,
    ) -> Result<RerankOutcome> {
        let requests = pool
            .candidates
            .iter()
            .map(|c| {
                Ok(ScoreRequest {
                    qid: pool.query_id.clone(),
                    query: query_text.to_string(),
                    docid: c.doc_id.clone(),
                    doc: resolve(docs, &c.doc_id)?.text.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let next = AtomicUsize::new(0);
        let results: Vec<Mutex<Option<Result<ScoreOutcome>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.scorers.len().min(requests.len());
        thread::scope(|s| {
            for slot in &self.scorers[..workers] {
                s.spawn(|| {
                    let mut scorer = slot.lock().expect("scorer lock");
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= requests.len() {
                            break;
                        }
                        let r = scorer.score(&requests[i]);
                        let failed = r.is_err();
                        *results[i].lock().expect("result lock") = Some(r);
                        if failed {
                            break;
                        }
                    }
                });
            }
        });

        let mut warnings = Vec::new();
        let mut scored = Vec::with_capacity(requests.len());
        for (c, r) in pool.candidates.iter().zip(results) {
            let outcome = match r.into_inner().expect("result lock") {
                Some(r) => r?,
                None => {
                    return Err(Error::Transport(
                        "scoring stopped after a transport failure".into(),
                    ))
                }
            };
            let score = match outcome {
                ScoreOutcome::Scored(s) => s,
                ScoreOutcome::Malformed(why) => {
                    if self.cfg.strict {
                        return Err(Error::Protocol(format!(
                            "query {} doc {}: {why}",
                            pool.query_id, c.doc_id
                        )));
                    }
                    tracing::warn!("query {} doc {}: {why}; scored 0", pool.query_id, c.doc_id);
                    warnings.push(ScoringWarning {
                        query_id: pool.query_id.clone(),
                        doc_id: c.doc_id.clone(),
                        detail: why,
                    });
                    0
                }
                ScoreOutcome::TimedOut => {
                    tracing::warn!(
                        "query {} doc {}: timed out; scored 0",
                        pool.query_id,
                        c.doc_id
                    );
                    warnings.push(ScoringWarning {
                        query_id: pool.query_id.clone(),
                        doc_id: c.doc_id.clone(),
                        detail: "timed out".into(),
                    });
                    0
                }
            };
            scored.push((c, score));
        }
        scored.sort_by(|(a, sa), (b, sb)| {
            sb.cmp(sa)
                .then_with(|| {
                    a.bm25_rank
                        .unwrap_or(usize::MAX)
                        .cmp(&b.bm25_rank.unwrap_or(usize::MAX))
                })
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        let ordered = scored
            .into_iter()
            .map(|(c, s)| (c.doc_id.clone(), s as f64))
            .collect();
        Ok(RerankOutcome {
            ranking: Ranking::from_ordered(pool.query_id.clone(), self.cfg.run_tag(), ordered),
            warnings,
        })
    }
}

/// External re-ranking of every pool over one set of scorer connections.
pub fn external_rerank_all(
    pools: &[CandidatePool],
    queries: &[QueryRecord],
    docs: &DocLookup<'_>,
    cfg: &ScorerProtocolConfig,
) -> Result<(Vec<Ranking>, Vec<ScoringWarning>)> {
    let index = query_index(queries);
    let reranker = ExternalReranker::new(cfg.clone())?;
    let mut rankings = Vec::with_capacity(pools.len());
    let mut warnings = Vec::new();
    for pool in pools {
        let q = query_for(&index, &pool.query_id)?;
        let out = reranker.rerank(pool, &q.text, docs)?;
        rankings.push(out.ranking);
        warnings.extend(out.warnings);
    }
    Ok((rankings, warnings))
}

pub fn external_rerank(
    pool: &CandidatePool,
    query_text: &str,
    docs: &DocLookup<'_>,
    cfg: &ScorerProtocolConfig,
) -> Result<RerankOutcome> {
    ExternalReranker::new(cfg.clone())?.rerank(pool, query_text, docs)
}
