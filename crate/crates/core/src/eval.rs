//! Recall@k, nDCG@k and AP over binary relevance, with per-query rows,
//! macro-averaged aggregates, and strata by template, depth and operator
//! family.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::benchgen::QueryRecord;
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::query::{OperatorFamily, TemplateKind};
use crate::trec::{Qrels, Ranking};

pub const DEFAULT_CUTOFFS: [usize; 3] = [5, 20, 100];

fn check(gold: &BTreeSet<String>, k: Option<usize>) -> Result<()> {
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    if k == Some(0) {
        return Err(Error::Config("cutoff must be at least 1".into()));
    }
    Ok(())
}

/// `|top-k ∩ gold| / |gold|`
pub fn recall_at_k(ranking: &Ranking, gold: &BTreeSet<String>, k: usize) -> Result<f64> {
    check(gold, Some(k))?;
    let hits = ranking
        .doc_ids()
        .take(k)
        .filter(|d| gold.contains(*d))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Binary-gain nDCG with a `log2(i + 1)` discount.
pub fn ndcg_at_k(ranking: &Ranking, gold: &BTreeSet<String>, k: usize) -> Result<f64> {
    check(gold, Some(k))?;
    let dcg: f64 = ranking
        .doc_ids()
        .take(k)
        .enumerate()
        .filter(|(_, d)| gold.contains(*d))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(gold.len()))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    Ok(dcg / idcg)
}

/// Average precision over the full ranking depth.
///
/// The precision sum is kept as an exact fraction while it stays below
/// 2^53, so small cases are correctly rounded (one division at the end).
pub fn average_precision(ranking: &Ranking, gold: &BTreeSet<String>) -> Result<f64> {
    check(gold, None)?;
    let mut hits = 0u64;
    let mut sum = 0.0;
    let mut exact = Some((0u64, 1u64));
    for (i, d) in ranking.doc_ids().enumerate() {
        if gold.contains(d) {
            hits += 1;
            let rank = i as u64 + 1;
            sum += hits as f64 / rank as f64;
            exact = exact.and_then(|(n, m)| add_fraction(n, m, hits, rank));
        }
    }
    const EXACT_LIMIT: u64 = 1 << 53;
    if let Some((n, m)) = exact {
        if let Some(den) = m
            .checked_mul(gold.len() as u64)
            .filter(|&d| d <= EXACT_LIMIT)
        {
            if n <= EXACT_LIMIT {
                return Ok(n as f64 / den as f64);
            }
        }
    }
    Ok(sum / gold.len() as f64)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `n/m + p/q` in lowest terms, `None` on overflow.
fn add_fraction(n: u64, m: u64, p: u64, q: u64) -> Option<(u64, u64)> {
    let g = gcd(m, q);
    let den = (m / g).checked_mul(q)?;
    let num = n.checked_mul(q / g)?.checked_add(p.checked_mul(m / g)?)?;
    let r = gcd(num, den);
    Some((num / r, den / r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    /// Aligned with the report's cutoffs.
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub ap: f64,
}

impl QueryMetrics {
    fn zero(n: usize) -> Self {
        QueryMetrics {
            recall: vec![0.0; n],
            ndcg: vec![0.0; n],
            ap: 0.0,
        }
    }

    /// Values in [`metric_names`] order.
    pub fn values(&self) -> Vec<f64> {
        let mut v = self.recall.clone();
        v.extend(&self.ndcg);
        v.push(self.ap);
        v
    }
}

pub fn metric_names(cutoffs: &[usize]) -> Vec<String> {
    let mut n: Vec<String> = cutoffs.iter().map(|k| format!("recall@{k}")).collect();
    n.extend(cutoffs.iter().map(|k| format!("ndcg@{k}")));
    n.push("map".into());
    n
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub count: usize,
    /// Means in [`metric_names`] order.
    pub means: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StratumKey {
    Template,
    Depth,
    OperatorFamily,
}

impl StratumKey {
    pub fn name(self) -> &'static str {
        match self {
            StratumKey::Template => "template",
            StratumKey::Depth => "depth",
            StratumKey::OperatorFamily => "operator_family",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<StratumKey>> {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse())
            .collect()
    }
}

impl FromStr for StratumKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "template" => Ok(StratumKey::Template),
            "depth" => Ok(StratumKey::Depth),
            "operator_family" | "operator" => Ok(StratumKey::OperatorFamily),
            other => Err(Error::Config(format!("unknown stratum key {other:?}"))),
        }
    }
}

/// Template metadata used for stratification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryMeta {
    pub template: TemplateKind,
    pub depth: usize,
    pub operator_family: OperatorFamily,
}

impl QueryMeta {
    fn value(&self, key: StratumKey) -> String {
        match key {
            StratumKey::Template => self.template.name().to_string(),
            StratumKey::Depth => self.depth.to_string(),
            StratumKey::OperatorFamily => self.operator_family.name().to_string(),
        }
    }
}

/// Metadata for every query whose template is known (from its fields, or by
/// parsing its text).
pub fn meta_from_queries(queries: &[QueryRecord]) -> BTreeMap<String, QueryMeta> {
    queries
        .iter()
        .filter_map(|q| {
            let template = q.template_kind()?;
            Some((
                q.query_id.clone(),
                QueryMeta {
                    template,
                    depth: q.depth.unwrap_or(template.depth()),
                    operator_family: q.operator_family.unwrap_or(template.operator_family()),
                },
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub run_tag: String,
    pub cutoffs: Vec<usize>,
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub aggregate: Stratum,
    /// Stratum key name → stratum value → stratum.
    pub strata: BTreeMap<String, BTreeMap<String, Stratum>>,
    /// Run query ids without judgments, skipped.
    pub unjudged: Vec<String>,
}

impl EvalReport {
    pub fn metric_names(&self) -> Vec<String> {
        metric_names(&self.cutoffs)
    }

    /// Mean of the named metric (`"recall@100"`, `"ndcg@5"`, `"map"`).
    pub fn mean(&self, metric: &str) -> Option<f64> {
        let i = self.metric_names().iter().position(|m| m == metric)?;
        Some(self.aggregate.means[i])
    }

    pub fn stratum(&self, key: StratumKey, value: &str) -> Option<&Stratum> {
        self.strata.get(key.name())?.get(value)
    }

    pub fn stratum_mean(&self, key: StratumKey, value: &str, metric: &str) -> Option<f64> {
        let i = self.metric_names().iter().position(|m| m == metric)?;
        Some(self.stratum(key, value)?.means[i])
    }
}

fn mean_rows<'a>(rows: impl Iterator<Item = &'a QueryMetrics>, width: usize) -> Stratum {
    let mut sums = vec![0.0; width];
    let mut count = 0;
    for r in rows {
        for (s, v) in sums.iter_mut().zip(r.values()) {
            *s += v;
        }
        count += 1;
    }
    let means = sums
        .into_iter()
        .map(|s| if count == 0 { 0.0 } else { s / count as f64 })
        .collect();
    Stratum { count, means }
}

/// Evaluate rankings against qrels.
///
/// Every judged query is evaluated; judged queries with no ranking score 0.
/// Rankings for unjudged queries are skipped with a warning, or rejected when
/// `strict` is set.
pub fn evaluate_run(
    run: &[Ranking],
    qrels: &Qrels,
    cutoffs: &[usize],
    strict: bool,
    mode: Parallelism,
) -> Result<EvalReport> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::Config(format!("invalid cutoffs {cutoffs:?}")));
    }
    let by_query: BTreeMap<&str, &Ranking> = run.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let mut unjudged = Vec::new();
    for qid in by_query.keys() {
        if qrels.get(qid).is_none() {
            if strict {
                return Err(Error::MissingQrels(qid.to_string()));
            }
            tracing::warn!("query {qid} has no judgments; skipped");
            unjudged.push(qid.to_string());
        }
    }

    let judged: Vec<(&str, &BTreeSet<String>)> = qrels.iter().collect();
    let rows = par::try_map(mode, &judged, |&(qid, gold)| {
        let metrics = match by_query.get(qid) {
            None => QueryMetrics::zero(cutoffs.len()),
            Some(r) => QueryMetrics {
                recall: cutoffs
                    .iter()
                    .map(|&k| recall_at_k(r, gold, k))
                    .collect::<Result<_>>()?,
                ndcg: cutoffs
                    .iter()
                    .map(|&k| ndcg_at_k(r, gold, k))
                    .collect::<Result<_>>()?,
                ap: average_precision(r, gold)?,
            },
        };
        Ok::<_, Error>((qid.to_string(), metrics))
    })?;
    let per_query: BTreeMap<String, QueryMetrics> = rows.into_iter().collect();
    let width = 2 * cutoffs.len() + 1;
    let aggregate = mean_rows(per_query.values(), width);
    Ok(EvalReport {
        run_tag: run
            .first()
            .map_or_else(|| "empty".to_string(), |r| r.run_tag.clone()),
        cutoffs: cutoffs.to_vec(),
        per_query,
        aggregate,
        strata: BTreeMap::new(),
        unjudged,
    })
}

/// Add strata blocks grouped by each of `keys`.
pub fn stratified_report(
    mut report: EvalReport,
    meta: &BTreeMap<String, QueryMeta>,
    keys: &[StratumKey],
) -> Result<EvalReport> {
    if let Some(q) = report.per_query.keys().find(|q| !meta.contains_key(*q)) {
        return Err(Error::MissingMetadata(q.clone()));
    }
    let width = report.metric_names().len();
    for &key in keys {
        let mut groups: BTreeMap<String, Vec<&QueryMetrics>> = BTreeMap::new();
        for (qid, m) in &report.per_query {
            groups.entry(meta[qid].value(key)).or_default().push(m);
        }
        let block = groups
            .into_iter()
            .map(|(v, rows)| (v, mean_rows(rows.into_iter(), width)))
            .collect();
        report.strata.insert(key.name().to_string(), block);
    }
    Ok(report)
}

fn stratum_order(key: &str, value: &str) -> (usize, String) {
    let pos = match key {
        "template" => TemplateKind::ALL.iter().position(|k| k.name() == value),
        "operator_family" => ["atomic", "disjunction", "conjunction", "exclusion"]
            .iter()
            .position(|f| *f == value),
        _ => value.parse::<usize>().ok(),
    };
    (pos.unwrap_or(usize::MAX), value.to_string())
}

pub fn report_csv(report: &EvalReport) -> String {
    let mut s = String::from("query_id");
    for m in report.metric_names() {
        let _ = write!(s, ",{m}");
    }
    s.push('\n');
    for (qid, m) in &report.per_query {
        s.push_str(qid);
        for v in m.values() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn strata_csv(report: &EvalReport) -> String {
    let mut s = String::from("key,value,count");
    for m in report.metric_names() {
        let _ = write!(s, ",{m}");
    }
    s.push('\n');
    let mut row = |key: &str, value: &str, st: &Stratum| {
        let _ = write!(s, "{key},{value},{}", st.count);
        for v in &st.means {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    };
    row("all", "all", &report.aggregate);
    for (key, block) in &report.strata {
        let mut values: Vec<_> = block.iter().collect();
        values.sort_by_key(|(v, _)| stratum_order(key, v));
        for (value, st) in values {
            row(key, value, st);
        }
    }
    s
}

pub fn report_markdown(report: &EvalReport, provenance: &[(String, String)]) -> String {
    let names = report.metric_names();
    let mut s = format!("# Evaluation: {}\n\n", report.run_tag);
    for (k, v) in provenance {
        let _ = writeln!(s, "- {k}: `{v}`");
    }
    let _ = writeln!(s, "- queries: {}", report.aggregate.count);
    s.push('\n');

    let header = |s: &mut String, first: &str| {
        let _ = write!(s, "| {first} | n |");
        for m in &names {
            let _ = write!(s, " {m} |");
        }
        s.push('\n');
        s.push_str("|---|---:|");
        for _ in &names {
            s.push_str("---:|");
        }
        s.push('\n');
    };
    let line = |s: &mut String, label: &str, st: &Stratum| {
        let _ = write!(s, "| {label} | {} |", st.count);
        for v in &st.means {
            let _ = write!(s, " {v:.4} |");
        }
        s.push('\n');
    };

    let keys: Vec<&String> = {
        let mut k: Vec<&String> = report.strata.keys().collect();
        k.sort_by_key(|k| match k.as_str() {
            "template" => 0,
            "operator_family" => 1,
            "depth" => 2,
            _ => 3,
        });
        k
    };
    for key in keys {
        let _ = writeln!(s, "## By {key}\n");
        header(&mut s, key);
        let mut values: Vec<_> = report.strata[key].iter().collect();
        values.sort_by_key(|(v, _)| stratum_order(key, v));
        for (value, st) in values {
            let label = match value.parse::<TemplateKind>() {
                Ok(t) if key == "template" => format!("{value} ({})", t.notation()),
                _ => value.clone(),
            };
            line(&mut s, &label, st);
        }
        line(&mut s, "**all**", &report.aggregate);
        s.push('\n');
    }
    if report.strata.is_empty() {
        header(&mut s, "run");
        line(&mut s, "all", &report.aggregate);
    }
    s
}

/// Write `report.csv`, `strata.csv` and `report.md` into `outdir`.
pub fn write_report(
    outdir: &Path,
    report: &EvalReport,
    provenance: &[(String, String)],
) -> Result<()> {
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    for (name, body) in [
        ("report.csv", report_csv(report)),
        ("strata.csv", strata_csv(report)),
        ("report.md", report_markdown(report, provenance)),
    ] {
        let p = outdir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
