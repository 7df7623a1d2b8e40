//! Benchmark generation: template instantiation over the attribute index,
//! exact gold sets by posting-list algebra, and stratified acceptance
//! sampling over gold-set size.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::AttributeIndex;
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::postings;
use crate::query::{render_query_text, LogicalExpr, OperatorFamily, TemplateKind};
use crate::trec::Qrels;

pub const MIN_GOLD: usize = 1;
pub const MAX_GOLD: usize = 200;

pub const QUERIES_FILE: &str = "queries.jsonl";
pub const QRELS_FILE: &str = "qrels.txt";
pub const REPORT_FILE: &str = "generation_report.json";

/// Evaluate an expression to the ascending ordinals of satisfying entities.
pub fn eval_set_expr(expr: &LogicalExpr, index: &AttributeIndex) -> Result<Vec<u32>> {
    match expr {
        LogicalExpr::Atom(a) => index
            .posting(a)
            .map(<[u32]>::to_vec)
            .ok_or_else(|| Error::UnknownAttribute(a.clone())),
        LogicalExpr::Or(children) => {
            if children.is_empty() {
                return Err(Error::InvalidExpr("empty disjunction".into()));
            }
            let mut acc: Vec<u32> = Vec::new();
            for c in children {
                if matches!(c, LogicalExpr::Not(_)) {
                    return Err(Error::InvalidExpr("negation inside a disjunction".into()));
                }
                acc = postings::union(&acc, &eval_set_expr(c, index)?);
            }
            Ok(acc)
        }
        LogicalExpr::And(children) => {
            let mut positive = Vec::new();
            let mut negative = Vec::new();
            for c in children {
                match c {
                    LogicalExpr::Not(inner) => negative.push(eval_set_expr(inner, index)?),
                    other => positive.push(eval_set_expr(other, index)?),
                }
            }
            if positive.is_empty() {
                return Err(Error::InvalidExpr(
                    "conjunction without a positive conjunct".into(),
                ));
            }
            positive.sort_by_key(Vec::len);
            let mut acc = positive[0].clone();
            for p in &positive[1..] {
                acc = postings::intersect(&acc, p);
            }
            for n in &negative {
                acc = postings::difference(&acc, n);
            }
            Ok(acc)
        }
        LogicalExpr::Not(_) => Err(Error::InvalidExpr("bare negation".into())),
    }
}

/// Gold set as doc ids in ascending order.
pub fn eval_set_expr_ids(expr: &LogicalExpr, index: &AttributeIndex) -> Result<Vec<String>> {
    Ok(eval_set_expr(expr, index)?
        .into_iter()
        .map(|o| index.docs().id(o).to_string())
        .collect())
}

/// Inclusive gold-size ranges that partition `[MIN_GOLD, MAX_GOLD]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buckets(Vec<(usize, usize)>);

impl Default for Buckets {
    fn default() -> Self {
        Buckets(vec![(1, 3), (4, 10), (11, 35), (36, 100), (101, 200)])
    }
}

impl Buckets {
    pub fn new(ranges: Vec<(usize, usize)>) -> Result<Self> {
        let b = Buckets(ranges);
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("buckets {:?}: {m}", self.0)));
        let Some(first) = self.0.first() else {
            return bad("no buckets");
        };
        if first.0 != MIN_GOLD || self.0.last().map(|b| b.1) != Some(MAX_GOLD) {
            return bad("must cover [1, 200]");
        }
        if self.0.iter().any(|&(lo, hi)| lo > hi) {
            return bad("empty range");
        }
        if self.0.windows(2).any(|w| w[1].0 != w[0].1 + 1) {
            return bad("gaps or overlaps between ranges");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ranges(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn bucket_of(&self, size: usize) -> Option<usize> {
        self.0.iter().position(|&(lo, hi)| lo <= size && size <= hi)
    }
}

impl std::str::FromStr for Buckets {
    type Err = Error;

    /// Parses `"1-3,4-10,11-35,36-100,101-200"`.
    fn from_str(s: &str) -> Result<Self> {
        let ranges = s
            .split(',')
            .map(|part| {
                let (lo, hi) = part
                    .trim()
                    .split_once('-')
                    .ok_or_else(|| Error::Config(format!("bad bucket {part:?}")))?;
                let num = |x: &str| {
                    x.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad bucket {part:?}")))
                };
                Ok((num(lo)?, num(hi)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Buckets::new(ranges)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub per_template_limit: usize,
    pub buckets: Buckets,
    pub per_bucket_quota: usize,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig::with_limit(100, 0)
    }
}

impl GenConfig {
    /// Defaults derived from the per-template limit: quota `limit / buckets`
    /// and an attempt budget of `200 × limit`.
    pub fn with_limit(per_template_limit: usize, seed: u64) -> Self {
        let buckets = Buckets::default();
        GenConfig {
            per_template_limit,
            per_bucket_quota: per_template_limit / buckets.len(),
            max_attempts: 200 * per_template_limit,
            buckets,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.buckets.validate()
    }
}

/// One generated query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchQuery {
    pub query_id: String,
    pub template: TemplateKind,
    pub attributes: Vec<String>,
    pub text: String,
    /// Ascending doc ids.
    pub gold: Vec<String>,
    pub bucket: usize,
}

impl BenchQuery {
    pub fn gold_size(&self) -> usize {
        self.gold.len()
    }

    pub fn expr(&self) -> LogicalExpr {
        LogicalExpr::from_template(self.template, &self.attributes)
            .expect("generated queries have matching arity")
    }

    pub fn record(&self) -> QueryRecord {
        QueryRecord {
            query_id: self.query_id.clone(),
            text: self.text.clone(),
            template: Some(self.template),
            depth: Some(self.template.depth()),
            operator_family: Some(self.template.operator_family()),
            attributes: Some(self.attributes.clone()),
            gold_size: Some(self.gold_size()),
            bucket: Some(self.bucket),
        }
    }
}

/// Per-template acceptance statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateReport {
    pub template: TemplateKind,
    pub limit: usize,
    pub quota: usize,
    pub accepted: usize,
    /// Queries accepted during the bucket-filling phase; they come first in
    /// the template's output order.
    pub phase1_accepted: usize,
    pub phase1_bucket_counts: Vec<usize>,
    pub bucket_counts: Vec<usize>,
    pub attempts: usize,
    pub out_of_range: usize,
    pub duplicates: usize,
}

impl TemplateReport {
    pub fn underfilled(&self) -> bool {
        self.accepted < self.limit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub seed: u64,
    pub config: GenConfig,
    pub doc_count: usize,
    pub attribute_count: usize,
    pub templates: Vec<TemplateReport>,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub queries: Vec<BenchQuery>,
    pub report: GenerationReport,
}

impl Benchmark {
    pub fn qrels(&self) -> Qrels {
        let mut q = Qrels::default();
        for bq in &self.queries {
            q.insert(&bq.query_id, bq.gold.iter().cloned());
        }
        q
    }

    pub fn mean_gold_size(&self) -> f64 {
        if self.queries.is_empty() {
            return 0.0;
        }
        self.queries
            .iter()
            .map(BenchQuery::gold_size)
            .sum::<usize>() as f64
            / self.queries.len() as f64
    }
}

struct Candidate {
    attrs: Vec<usize>,
    gold: Vec<u32>,
    bucket: usize,
}

fn n_choose_k(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn draw_tuple(rng: &mut ChaCha8Rng, vocab_len: usize, depth: usize) -> Vec<usize> {
    let mut t = Vec::with_capacity(depth);
    while t.len() < depth {
        let a = rng.random_range(0..vocab_len);
        if !t.contains(&a) {
            t.push(a);
        }
    }
    t
}

/// Stratified acceptance sampling for one template.
///
/// Phase 1 fills every size bucket up to the quota; valid tuples that land in
/// a full bucket are held back. Phase 2 tops up to the per-template limit,
/// first from the held-back tuples in draw order, then from fresh draws.
/// Both phases share the `max_attempts` draw budget.
pub fn sample_template_queries(
    kind: TemplateKind,
    index: &AttributeIndex,
    cfg: &GenConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<BenchQuery>, TemplateReport)> {
    cfg.validate()?;
    let vocab: Vec<&str> = index.attributes().collect();
    let depth = kind.depth();
    let nb = cfg.buckets.len();
    let mut report = TemplateReport {
        template: kind,
        limit: cfg.per_template_limit,
        quota: cfg.per_bucket_quota,
        accepted: 0,
        phase1_accepted: 0,
        phase1_bucket_counts: vec![0; nb],
        bucket_counts: vec![0; nb],
        attempts: 0,
        out_of_range: 0,
        duplicates: 0,
    };
    if cfg.per_template_limit == 0 || vocab.len() < depth {
        return Ok((Vec::new(), report));
    }

    let distinct_tuples = n_choose_k(vocab.len(), depth);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut accepted: Vec<Candidate> = Vec::new();
    let mut held: Vec<Candidate> = Vec::new();

    // Ok(None) means every distinct tuple has been tried.
    let mut draw =
        |rng: &mut ChaCha8Rng, report: &mut TemplateReport| -> Result<Option<Option<Candidate>>> {
            if seen.len() as u128 >= distinct_tuples {
                return Ok(None);
            }
            report.attempts += 1;
            let attrs = draw_tuple(rng, vocab.len(), depth);
            let mut key = attrs.clone();
            key.sort_unstable();
            if !seen.insert(key) {
                report.duplicates += 1;
                return Ok(Some(None));
            }
            let names: Vec<&str> = attrs.iter().map(|&i| vocab[i]).collect();
            let gold = eval_set_expr(&LogicalExpr::from_template(kind, &names)?, index)?;
            match cfg.buckets.bucket_of(gold.len()) {
                Some(bucket) => Ok(Some(Some(Candidate {
                    attrs,
                    gold,
                    bucket,
                }))),
                None => {
                    report.out_of_range += 1;
                    Ok(Some(None))
                }
            }
        };

    let mut counts = vec![0usize; nb];
    while report.attempts < cfg.max_attempts
        && accepted.len() < cfg.per_template_limit
        && counts.iter().any(|&c| c < cfg.per_bucket_quota)
    {
        match draw(rng, &mut report)? {
            None => break,
            Some(None) => {}
            Some(Some(c)) if counts[c.bucket] < cfg.per_bucket_quota => {
                counts[c.bucket] += 1;
                accepted.push(c);
            }
            Some(Some(c)) => held.push(c),
        }
    }
    report.phase1_accepted = accepted.len();
    report.phase1_bucket_counts = counts.clone();

    let mut held = held.into_iter();
    while accepted.len() < cfg.per_template_limit {
        match held.next() {
            Some(c) => accepted.push(c),
            None => break,
        }
    }
    while accepted.len() < cfg.per_template_limit && report.attempts < cfg.max_attempts {
        match draw(rng, &mut report)? {
            None => break,
            Some(None) => {}
            Some(Some(c)) => accepted.push(c),
        }
    }

    let docs = index.docs();
    let queries = accepted
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let attributes: Vec<String> = c.attrs.iter().map(|&a| vocab[a].to_string()).collect();
            report.bucket_counts[c.bucket] += 1;
            Ok(BenchQuery {
                query_id: format!("{}-{i:05}", kind.name()),
                template: kind,
                text: render_query_text(kind, &attributes)?,
                attributes,
                gold: c.gold.iter().map(|&o| docs.id(o).to_string()).collect(),
                bucket: c.bucket,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    report.accepted = queries.len();
    if report.underfilled() {
        tracing::warn!(
            "template {kind}: accepted {} of {} queries after {} attempts",
            report.accepted,
            report.limit,
            report.attempts
        );
    }
    Ok((queries, report))
}

/// Independent RNG substream for a template.
pub fn template_rng(seed: u64, kind: TemplateKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = TemplateKind::ALL
        .iter()
        .position(|&k| k == kind)
        .expect("listed") as u64;
    rng.set_stream(stream + 1);
    rng
}

pub fn generate_benchmark(
    index: &AttributeIndex,
    cfg: &GenConfig,
    mode: Parallelism,
) -> Result<Benchmark> {
    cfg.validate()?;
    let per_template = par::try_map(mode, &TemplateKind::ALL, |&kind| {
        let mut rng = template_rng(cfg.seed, kind);
        sample_template_queries(kind, index, cfg, &mut rng)
    })?;
    let mut queries = Vec::new();
    let mut templates = Vec::new();
    for (q, r) in per_template {
        queries.extend(q);
        templates.push(r);
    }
    Ok(Benchmark {
        queries,
        report: GenerationReport {
            seed: cfg.seed,
            config: cfg.clone(),
            doc_count: index.doc_count(),
            attribute_count: index.attribute_count(),
            templates,
        },
    })
}

/// A line of a queries file. Only `query_id` and `text` are required, so
/// third-party query sets (BEIR `_id`/`text`) load too.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    #[serde(alias = "_id")]
    pub query_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<TemplateKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_family: Option<OperatorFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<usize>,
}

impl QueryRecord {
    /// The query's logical form: from metadata when present, else parsed
    /// from the text.
    pub fn expr(&self) -> Result<LogicalExpr> {
        match (&self.template, &self.attributes) {
            (Some(kind), Some(attrs)) => LogicalExpr::from_template(*kind, attrs),
            _ => crate::query::parse_query_text(&self.text),
        }
    }

    /// Template from metadata, falling back to parsing the text.
    pub fn template_kind(&self) -> Option<TemplateKind> {
        self.template.or_else(|| {
            crate::query::parse_template_instance(&self.text)
                .ok()
                .map(|(k, _)| k)
        })
    }
}

pub fn write_queries(path: &Path, queries: &[QueryRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for q in queries {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Write `queries.jsonl`, `qrels.txt` and `generation_report.json`.
pub fn write_benchmark(outdir: &Path, bench: &Benchmark) -> Result<()> {
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let records: Vec<QueryRecord> = bench.queries.iter().map(BenchQuery::record).collect();
    write_queries(&outdir.join(QUERIES_FILE), &records)?;
    bench.qrels().write(&outdir.join(QRELS_FILE))?;
    let path = outdir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&bench.report)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateStats {
    pub template: String,
    pub count: usize,
    pub mean_gold_size: f64,
    pub bucket_counts: Vec<usize>,
}

/// Per-template mean gold sizes and bucket fill counts.
pub fn bench_stats(queries: &[QueryRecord], buckets: &Buckets) -> Vec<TemplateStats> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for q in queries {
        let key = q
            .template_kind()
            .map(|k| k.name().to_string())
            .unwrap_or_else(|| "unknown".into());
        groups
            .entry(key)
            .or_default()
            .push(q.gold_size.unwrap_or(0));
    }
    let order = |name: &str| {
        TemplateKind::ALL
            .iter()
            .position(|k| k.name() == name)
            .unwrap_or(usize::MAX)
    };
    let mut rows: Vec<TemplateStats> = groups
        .into_iter()
        .map(|(template, sizes)| {
            let mut bucket_counts = vec![0; buckets.len()];
            for &s in &sizes {
                if let Some(b) = buckets.bucket_of(s) {
                    bucket_counts[b] += 1;
                }
            }
            TemplateStats {
                count: sizes.len(),
                mean_gold_size: sizes.iter().sum::<usize>() as f64 / sizes.len().max(1) as f64,
                bucket_counts,
                template,
            }
        })
        .collect();
    rows.sort_by_key(|r| order(&r.template));
    rows
}

pub fn format_stats(rows: &[TemplateStats], buckets: &Buckets) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<12} {:>6} {:>10}", "template", "count", "mean_gold");
    for (lo, hi) in buckets.ranges() {
        let _ = write!(s, " {:>9}", format!("[{lo},{hi}]"));
    }
    s.push('\n');
    let (mut n, mut total) = (0usize, 0.0f64);
    for r in rows {
        let _ = write!(
            s,
            "{:<12} {:>6} {:>10.2}",
            r.template, r.count, r.mean_gold_size
        );
        for c in &r.bucket_counts {
            let _ = write!(s, " {c:>9}");
        }
        s.push('\n');
        n += r.count;
        total += r.mean_gold_size * r.count as f64;
    }
    let _ = writeln!(
        s,
        "{:<12} {:>6} {:>10.2}",
        "all",
        n,
        total / n.max(1) as f64
    );
    s
}
