//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};

use setcomp::benchgen::{generate_benchmark, Benchmark, GenConfig};
use setcomp::corpus::{
    build_attribute_index, synth_corpus, AttributeIndex, EntityDoc, SynthConfig,
};
use setcomp::query::LogicalExpr;
use setcomp::Parallelism;

pub struct Fixture {
    pub docs: Vec<EntityDoc>,
    pub index: AttributeIndex,
    pub bench: Benchmark,
}

/// 5,000 entities, 200 attributes, 100 queries per template.
pub fn desk_fixture() -> Fixture {
    fixture(&SynthConfig::default(), 100)
}

pub fn fixture(cfg: &SynthConfig, limit: usize) -> Fixture {
    let docs = synth_corpus(cfg).unwrap();
    let index = build_attribute_index(&docs).unwrap();
    let bench = generate_benchmark(
        &index,
        &GenConfig::with_limit(limit, cfg.seed),
        Parallelism::default(),
    )
    .unwrap();
    Fixture { docs, index, bench }
}

/// Direct truth value of `e` on one entity's attribute list.
pub fn holds(e: &LogicalExpr, attrs: &HashSet<&str>) -> bool {
    match e {
        LogicalExpr::Atom(a) => attrs.contains(a.as_str()),
        LogicalExpr::And(cs) => cs.iter().all(|c| holds(c, attrs)),
        LogicalExpr::Or(cs) => cs.iter().any(|c| holds(c, attrs)),
        LogicalExpr::Not(c) => !holds(c, attrs),
    }
}

/// Brute-force scan over every entity, ascending doc id.
pub fn scan(e: &LogicalExpr, docs: &[EntityDoc]) -> Vec<String> {
    let mut out: Vec<String> = docs
        .iter()
        .filter(|d| holds(e, &d.attribute_set()))
        .map(|d| d.doc_id.clone())
        .collect();
    out.sort();
    out
}

pub fn naive_recall(ranking: &[String], gold: &BTreeSet<String>, k: usize) -> f64 {
    let mut hits = 0;
    for (i, d) in ranking.iter().enumerate() {
        if i >= k {
            break;
        }
        if gold.contains(d) {
            hits += 1;
        }
    }
    hits as f64 / gold.len() as f64
}

pub fn naive_ndcg(ranking: &[String], gold: &BTreeSet<String>, k: usize) -> f64 {
    let mut dcg = 0.0;
    for i in 0..k.min(ranking.len()) {
        if gold.contains(&ranking[i]) {
            dcg += 1.0 / ((i + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for i in 0..k.min(gold.len()) {
        idcg += 1.0 / ((i + 2) as f64).log2();
    }
    dcg / idcg
}

pub fn naive_ap(ranking: &[String], gold: &BTreeSet<String>) -> f64 {
    let mut sum = 0.0;
    for i in 0..ranking.len() {
        if gold.contains(&ranking[i]) {
            let rel_so_far = ranking[..=i].iter().filter(|d| gold.contains(*d)).count();
            sum += rel_so_far as f64 / (i + 1) as f64;
        }
    }
    sum / gold.len() as f64
}

fn toks(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Textbook BM25 by full scan, every doc with a positive score.
pub fn naive_bm25(docs: &[EntityDoc], query: &str, k1: f64, b: f64) -> HashMap<String, f64> {
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| toks(&d.text)).collect();
    let n = docs.len() as f64;
    let avg = tokenized.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut out = HashMap::new();
    for (d, dt) in docs.iter().zip(&tokenized) {
        let mut s = 0.0;
        for q in toks(query) {
            let tf = dt.iter().filter(|t| **t == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = tokenized.iter().filter(|t| t.contains(&q)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dt.len() as f64 / avg));
        }
        if s > 0.0 {
            out.insert(d.doc_id.clone(), s);
        }
    }
    out
}
