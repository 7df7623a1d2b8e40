//! Rankings, TREC run files and qrels.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub doc_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// A ranked result list for one query.
///
/// Scores are non-increasing, ranks are contiguous from 1 and doc ids are
/// unique.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub query_id: String,
    pub entries: Vec<RankEntry>,
    pub run_tag: String,
}

impl Ranking {
    pub fn empty(query_id: impl Into<String>, run_tag: impl Into<String>) -> Self {
        Ranking {
            query_id: query_id.into(),
            entries: Vec::new(),
            run_tag: run_tag.into(),
        }
    }

    /// Sort by descending score, ties by ascending doc id, and keep the top
    /// `k` (all when `k` is `None`).
    pub fn from_scored(
        query_id: impl Into<String>,
        run_tag: impl Into<String>,
        mut scored: Vec<(String, f64)>,
        k: Option<usize>,
    ) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut seen = HashSet::new();
        scored.retain(|(d, _)| seen.insert(d.clone()));
        if let Some(k) = k {
            scored.truncate(k);
        }
        Ranking::from_ordered(query_id, run_tag, scored)
    }

    /// Take an already ordered list as is and number it.
    pub fn from_ordered(
        query_id: impl Into<String>,
        run_tag: impl Into<String>,
        ordered: Vec<(String, f64)>,
    ) -> Self {
        Ranking {
            query_id: query_id.into(),
            entries: ordered
                .into_iter()
                .enumerate()
                .map(|(i, (doc_id, score))| RankEntry {
                    doc_id,
                    score,
                    rank: i + 1,
                })
                .collect(),
            run_tag: run_tag.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// Rank of `doc_id`, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| e.doc_id == doc_id)
            .map(|e| e.rank)
    }
}

/// Write rankings as `query_id Q0 doc_id rank score run_tag`, scores with six
/// decimals.
pub fn write_run(path: &Path, rankings: &[Ranking]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_run_to(&mut w, rankings).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_run_to(w: &mut impl Write, rankings: &[Ranking]) -> std::io::Result<()> {
    for r in rankings {
        for e in &r.entries {
            writeln!(
                w,
                "{} Q0 {} {} {:.6} {}",
                r.query_id, e.doc_id, e.rank, e.score, r.run_tag
            )?;
        }
    }
    Ok(())
}

/// Read a TREC run file into per-query rankings, ordered by query id.
///
/// Entries are ordered by the file's rank column (then descending score and
/// doc id) and renumbered from 1; repeated doc ids keep their first entry.
pub fn read_run(path: &Path) -> Result<Vec<Ranking>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut by_query: BTreeMap<String, (String, Vec<(usize, f64, String)>)> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        if fields.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", fields.len())));
        }
        let rank: usize = fields[3]
            .parse()
            .map_err(|_| bad(format!("bad rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| bad(format!("bad score {:?}", fields[4])))?;
        let entry = by_query
            .entry(fields[0].to_string())
            .or_insert_with(|| (fields[5].to_string(), Vec::new()));
        entry.1.push((rank, score, fields[2].to_string()));
    }
    Ok(by_query
        .into_iter()
        .map(|(qid, (tag, mut rows))| {
            rows.sort_by(|a, b| {
                a.0.cmp(&b.0)
                    .then_with(|| b.1.total_cmp(&a.1))
                    .then_with(|| a.2.cmp(&b.2))
            });
            let mut seen = HashSet::new();
            let ordered = rows
                .into_iter()
                .filter(|r| seen.insert(r.2.clone()))
                .map(|(_, s, d)| (d, s))
                .collect();
            Ranking::from_ordered(qid, tag, ordered)
        })
        .collect())
}

/// Binary relevance judgments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn insert(&mut self, query_id: &str, docs: impl IntoIterator<Item = String>) {
        self.map
            .entry(query_id.to_string())
            .or_default()
            .extend(docs);
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.map.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.map.iter().map(|(q, d)| (q.as_str(), d))
    }

    /// Lines `query_id 0 doc_id 1`, sorted by query then doc id.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (q, docs) in &self.map {
            for d in docs {
                writeln!(w, "{q} 0 {d} 1").map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Read TREC qrels (`qid iter doc rel`) or BEIR TSV (`qid doc score`, with
    /// an optional header). Judgments with relevance ≤ 0 are dropped.
    pub fn read(path: &Path) -> Result<Qrels> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut q = Qrels::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            let (qid, doc, rel) = match f.as_slice() {
                [] => continue,
                [qid, _, doc, rel] => (*qid, *doc, *rel),
                [qid, doc, rel] => (*qid, *doc, *rel),
                _ => {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        line: i + 1,
                        reason: format!("expected 3 or 4 fields, found {}", f.len()),
                    })
                }
            };
            let rel: f64 = match rel.parse() {
                Ok(r) => r,
                Err(_) if i == 0 => continue,
                Err(_) => {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        line: i + 1,
                        reason: format!("bad relevance {rel:?}"),
                    })
                }
            };
            if rel > 0.0 {
                q.map
                    .entry(qid.to_string())
                    .or_default()
                    .insert(doc.to_string());
            }
        }
        Ok(q)
    }
}
