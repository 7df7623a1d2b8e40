//! First-stage retrieval: BM25 over an inverted index, algebraic
//! set-compositional sparse retrieval, and the exact symbolic oracle.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::benchgen::{eval_set_expr, QueryRecord};
use crate::corpus::{AttributeIndex, DocTable, EntityDoc};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::query::LogicalExpr;
use crate::trec::Ranking;

/// Lowercase and split on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let (n, df) = (doc_count as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Per-term document weight `idf · tf(k1+1) / (tf + k1(1 - b + b·len/avgdl))`.
pub fn term_weight(idf: f64, tf: f64, doc_len: f64, avg_len: f64, p: Bm25Params) -> f64 {
    let norm = p.k1 * (1.0 - p.b + p.b * doc_len / avg_len);
    idf * tf * (p.k1 + 1.0) / (tf + norm)
}

#[derive(Debug, Clone)]
struct TermPostings {
    idf: f64,
    /// `(ordinal, tf, weight)`, ascending by ordinal.
    entries: Vec<(u32, u32, f64)>,
}

/// Frozen BM25 index with precomputed per-posting weights.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    docs: DocTable,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    terms: HashMap<String, TermPostings>,
    params: Bm25Params,
}

impl Bm25Index {
    pub fn build(corpus: &[EntityDoc], params: Bm25Params, mode: Parallelism) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let docs = DocTable::new(corpus.iter().map(|d| d.doc_id.as_str()))?;
        let mut by_ord: Vec<&EntityDoc> = corpus.iter().collect();
        by_ord.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

        let tokenized = par::map(mode, &by_ord, |d| {
            let toks = tokenize(&d.text);
            let len = toks.len() as u32;
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1;
            }
            (len, tf)
        });

        let doc_lengths: Vec<u32> = tokenized.iter().map(|(l, _)| *l).collect();
        let avg_doc_length =
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64;

        let mut raw: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        for (ord, (_, tf)) in tokenized.into_iter().enumerate() {
            for (term, count) in tf {
                raw.entry(term).or_default().push((ord as u32, count));
            }
        }
        let n = docs.len();
        let terms = raw
            .into_iter()
            .map(|(term, list)| {
                let idf = idf(n, list.len());
                let entries = list
                    .into_iter()
                    .map(|(ord, tf)| {
                        let w = term_weight(
                            idf,
                            tf as f64,
                            doc_lengths[ord as usize] as f64,
                            avg_doc_length,
                            params,
                        );
                        (ord, tf, w)
                    })
                    .collect();
                (term, TermPostings { idf, entries })
            })
            .collect();

        Ok(Bm25Index {
            docs,
            doc_lengths,
            avg_doc_length,
            terms,
            params,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn docs(&self) -> &DocTable {
        &self.docs
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.docs
            .ordinal(doc_id)
            .map(|o| self.doc_lengths[o as usize])
    }

    pub fn df(&self, term: &str) -> usize {
        self.terms.get(term).map_or(0, |t| t.entries.len())
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.terms.get(term).map(|t| t.idf)
    }

    pub fn term_frequency(&self, term: &str, doc_id: &str) -> u32 {
        self.lookup(term, doc_id).map_or(0, |e| e.1)
    }

    /// `w(t, d)`; zero when the term does not occur in the document.
    pub fn weight(&self, term: &str, doc_id: &str) -> f64 {
        self.lookup(term, doc_id).map_or(0.0, |e| e.2)
    }

    fn lookup(&self, term: &str, doc_id: &str) -> Option<(u32, u32, f64)> {
        let ord = self.docs.ordinal(doc_id)?;
        let list = &self.terms.get(term)?.entries;
        list.binary_search_by_key(&ord, |e| e.0)
            .ok()
            .map(|i| list[i])
    }

    /// Score every document that contains a query term and keep the top `k`.
    pub fn score(&self, query: &SparseVector, k: usize) -> Vec<(String, f64)> {
        let mut acc = vec![0.0f64; self.docs.len()];
        let mut touched = vec![false; self.docs.len()];
        let mut hits: Vec<u32> = Vec::new();
        for (term, &qw) in query.iter() {
            let Some(p) = self.terms.get(term) else {
                continue;
            };
            for &(ord, _, w) in &p.entries {
                let i = ord as usize;
                acc[i] += qw * w;
                if !touched[i] {
                    touched[i] = true;
                    hits.push(ord);
                }
            }
        }
        let mut scored: Vec<(u32, f64)> = hits.into_iter().map(|o| (o, acc[o as usize])).collect();
        let by_score = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if k == 0 {
            return Vec::new();
        }
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, by_score);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_score);
        scored
            .into_iter()
            .map(|(o, s)| (self.docs.id(o).to_string(), s))
            .collect()
    }
}

/// Term → weight map. Stored weights are nonzero; they may be negative after
/// composition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector(BTreeMap<String, f64>);

impl SparseVector {
    /// Token counts of `text`.
    pub fn from_text(text: &str) -> Self {
        let mut v = SparseVector::default();
        for t in tokenize(text) {
            v.add_term(&t, 1.0);
        }
        v
    }

    pub fn add_term(&mut self, term: &str, w: f64) {
        let slot = self.0.entry(term.to_string()).or_insert(0.0);
        *slot += w;
        if *slot == 0.0 {
            self.0.remove(term);
        }
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &SparseVector, scale: f64) {
        for (t, &w) in &other.0 {
            self.add_term(t, scale * w);
        }
    }

    pub fn get(&self, term: &str) -> f64 {
        self.0.get(term).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &f64)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<const N: usize> From<[(&str, f64); N]> for SparseVector {
    fn from(items: [(&str, f64); N]) -> Self {
        let mut v = SparseVector::default();
        for (t, w) in items {
            v.add_term(t, w);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetCompConfig {
    /// Scale of subtracted (negated) sub-query vectors.
    pub neg_weight: f64,
    pub top_k: usize,
}

impl Default for SetCompConfig {
    fn default() -> Self {
        SetCompConfig {
            neg_weight: 1.0,
            top_k: 1000,
        }
    }
}

impl SetCompConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !(self.neg_weight.is_finite() && self.neg_weight >= 0.0) {
            return Err(Error::Config(format!(
                "negation weight must be >= 0, got {}",
                self.neg_weight
            )));
        }
        Ok(())
    }
}

/// Compose a query vector: atoms are token-count vectors, conjunction and
/// disjunction both add their children, negation subtracts `neg_weight ×`
/// its child.
pub fn compose_query_vector(expr: &LogicalExpr, cfg: &SetCompConfig) -> SparseVector {
    match expr {
        LogicalExpr::Atom(a) => SparseVector::from_text(a),
        LogicalExpr::And(cs) | LogicalExpr::Or(cs) => {
            let mut v = SparseVector::default();
            for c in cs {
                v.add_scaled(&compose_query_vector(c, cfg), 1.0);
            }
            v
        }
        LogicalExpr::Not(c) => {
            let mut v = SparseVector::default();
            v.add_scaled(&compose_query_vector(c, cfg), -cfg.neg_weight);
            v
        }
    }
}

pub fn bm25_run_tag(p: Bm25Params) -> String {
    format!("bm25_k1={}_b={}", p.k1, p.b)
}

pub fn setcomp_run_tag(p: Bm25Params, cfg: &SetCompConfig) -> String {
    format!(
        "setcomp_and=add_alpha={}_k1={}_b={}",
        cfg.neg_weight, p.k1, p.b
    )
}

pub const ORACLE_RUN_TAG: &str = "oracle";

pub fn bm25_search(index: &Bm25Index, query_id: &str, query_text: &str, k: usize) -> Ranking {
    let v = SparseVector::from_text(query_text);
    Ranking::from_ordered(query_id, bm25_run_tag(index.params()), index.score(&v, k))
}

pub fn setcomp_search(
    index: &Bm25Index,
    query_id: &str,
    expr: &LogicalExpr,
    k: usize,
    cfg: &SetCompConfig,
) -> Ranking {
    let v = compose_query_vector(expr, cfg);
    Ranking::from_ordered(
        query_id,
        setcomp_run_tag(index.params(), cfg),
        index.score(&v, k),
    )
}

/// All satisfying entities, score 1.0, ascending doc id.
pub fn oracle_search(
    query_id: &str,
    expr: &LogicalExpr,
    index: &AttributeIndex,
) -> Result<Ranking> {
    let docs = eval_set_expr(expr, index)?;
    Ok(Ranking::from_ordered(
        query_id,
        ORACLE_RUN_TAG,
        docs.into_iter()
            .map(|o| (index.docs().id(o).to_string(), 1.0))
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model {
    Bm25,
    SetComp(SetCompConfig),
    Oracle,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Bm25 => "bm25",
            Model::SetComp(_) => "setcomp",
            Model::Oracle => "oracle",
        })
    }
}

/// Indexes a batch search may need; only the one the model uses is required.
pub struct SearchIndexes<'a> {
    pub bm25: Option<&'a Bm25Index>,
    pub attributes: Option<&'a AttributeIndex>,
}

/// Run `model` over every query, in query order.
pub fn search_all(
    model: Model,
    queries: &[QueryRecord],
    indexes: &SearchIndexes<'_>,
    k: usize,
    mode: Parallelism,
) -> Result<Vec<Ranking>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let need = |what: &str| Error::Config(format!("{model} search needs the {what} index"));
    match model {
        Model::Bm25 => {
            let idx = indexes.bm25.ok_or_else(|| need("BM25"))?;
            Ok(par::map(mode, queries, |q| {
                bm25_search(idx, &q.query_id, &q.text, k)
            }))
        }
        Model::SetComp(cfg) => {
            cfg.validate()?;
            let idx = indexes.bm25.ok_or_else(|| need("BM25"))?;
            par::try_map(mode, queries, |q| {
                Ok(setcomp_search(idx, &q.query_id, &q.expr()?, k, &cfg))
            })
        }
        Model::Oracle => {
            let idx = indexes.attributes.ok_or_else(|| need("attribute"))?;
            par::try_map(mode, queries, |q| {
                let mut r = oracle_search(&q.query_id, &q.expr()?, idx)?;
                r.entries.truncate(k);
                Ok(r)
            })
        }
    }
}
