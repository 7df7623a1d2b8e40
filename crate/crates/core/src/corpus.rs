//! Attribute-list corpora: parsing, synthesis, loading and the attribute
//! inverted index.
//!
//! Documents follow the surface form `"{name} likes {a1}, {a2}, and {a3}."`.
//! Attribute strings are compared case-sensitively after trimming.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Parallelism};

/// A corpus entity together with its extracted attribute set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityDoc {
    pub doc_id: String,
    pub name: String,
    pub text: String,
    /// Attributes in order of first appearance in `text`, deduplicated.
    pub attributes: Vec<String>,
}

impl EntityDoc {
    pub fn has_attribute(&self, attr: &str) -> bool {
        self.attributes.iter().any(|a| a == attr)
    }

    pub fn attribute_set(&self) -> HashSet<&str> {
        self.attributes.iter().map(String::as_str).collect()
    }
}

/// Surface-form rules for splitting `"X likes A, B, and C."` into parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListSplitter {
    pub marker: String,
    pub separator: String,
    pub conjunction: String,
    pub terminator: String,
}

impl Default for ListSplitter {
    fn default() -> Self {
        ListSplitter {
            marker: " likes ".into(),
            separator: ", ".into(),
            conjunction: "and ".into(),
            terminator: ".".into(),
        }
    }
}

impl ListSplitter {
    pub fn parse(&self, doc_id: &str, text: &str) -> Result<EntityDoc> {
        let parse_err = |reason: &str| Error::Parse {
            doc_id: doc_id.to_string(),
            reason: reason.to_string(),
        };
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(parse_err("empty text"));
        }
        let (name, list) = trimmed
            .split_once(self.marker.as_str())
            .ok_or_else(|| parse_err("missing list marker"))?;

        let mut seen = HashSet::new();
        let mut attributes = Vec::new();
        for item in list.split(self.separator.as_str()) {
            let mut item = item.trim();
            if let Some(rest) = item.strip_prefix(self.conjunction.as_str()) {
                item = rest.trim_start();
            }
            let item = item
                .strip_suffix(self.terminator.as_str())
                .unwrap_or(item)
                .trim();
            if !item.is_empty() && seen.insert(item) {
                attributes.push(item.to_string());
            }
        }
        if attributes.is_empty() {
            return Err(parse_err("empty attribute list"));
        }
        Ok(EntityDoc {
            doc_id: doc_id.to_string(),
            name: name.trim().to_string(),
            text: text.to_string(),
            attributes,
        })
    }

    pub fn render(&self, name: &str, attributes: &[String]) -> String {
        let list = match attributes {
            [] => String::new(),
            [only] => only.clone(),
            [init @ .., last] => format!(
                "{}{}{}{}",
                init.join(&self.separator),
                self.separator,
                self.conjunction,
                last
            ),
        };
        format!("{name}{}{list}{}", self.marker, self.terminator)
    }
}

/// Parse a `"{name} likes {list}."` description with the default splitter.
pub fn parse_entity_text(doc_id: &str, text: &str) -> Result<EntityDoc> {
    ListSplitter::default().parse(doc_id, text)
}

pub fn render_entity_text(name: &str, attributes: &[String]) -> String {
    ListSplitter::default().render(name, attributes)
}

/// Dense document ordinals assigned in ascending `doc_id` order, so ordinal
/// order and doc id order coincide.
#[derive(Debug, Clone, Default)]
pub struct DocTable {
    ids: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl DocTable {
    pub fn new<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut ids: Vec<String> = ids.into_iter().map(str::to_string).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateDocId(w[0].clone()));
        }
        let lookup = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Ok(DocTable { ids, lookup })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, ord: u32) -> &str {
        &self.ids[ord as usize]
    }

    pub fn ordinal(&self, doc_id: &str) -> Option<u32> {
        self.lookup.get(doc_id).copied()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Inverted index from attribute to the ascending ordinals of the entities
/// that carry it. Immutable once built.
#[derive(Debug, Clone)]
pub struct AttributeIndex {
    postings: BTreeMap<String, Vec<u32>>,
    docs: DocTable,
}

impl AttributeIndex {
    pub fn attribute_count(&self) -> usize {
        self.postings.len()
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn docs(&self) -> &DocTable {
        &self.docs
    }

    pub fn posting(&self, attribute: &str) -> Option<&[u32]> {
        self.postings.get(attribute).map(Vec::as_slice)
    }

    /// Posting list as doc id strings.
    pub fn posting_ids(&self, attribute: &str) -> Option<Vec<&str>> {
        self.posting(attribute)
            .map(|p| p.iter().map(|&o| self.docs.id(o)).collect())
    }

    pub fn contains(&self, attribute: &str) -> bool {
        self.postings.contains_key(attribute)
    }

    /// Attributes in ascending lexical order.
    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn postings(&self) -> impl Iterator<Item = (&str, &[u32])> {
        self.postings
            .iter()
            .map(|(a, p)| (a.as_str(), p.as_slice()))
    }
}

pub fn build_attribute_index(corpus: &[EntityDoc]) -> Result<AttributeIndex> {
    let docs = DocTable::new(corpus.iter().map(|d| d.doc_id.as_str()))?;
    let mut postings: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for doc in corpus {
        let ord = docs.ordinal(&doc.doc_id).expect("doc registered above");
        for attr in &doc.attributes {
            postings.entry(attr.clone()).or_default().push(ord);
        }
    }
    for list in postings.values_mut() {
        list.sort_unstable();
        list.dedup();
    }
    Ok(AttributeIndex { postings, docs })
}

/// Parameters of the desk-scale synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_entities: usize,
    pub n_attributes: usize,
    /// Zipf exponent of attribute popularity.
    pub popularity_skew: f64,
    pub min_attrs: usize,
    pub max_attrs: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_entities: 5000,
            n_attributes: 200,
            popularity_skew: 1.0,
            min_attrs: 1,
            max_attrs: 5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_entities == 0 {
            return fail("n_entities must be at least 1".into());
        }
        if self.n_attributes == 0 {
            return fail("n_attributes must be at least 1".into());
        }
        if !(self.popularity_skew.is_finite() && self.popularity_skew > 0.0) {
            return fail(format!(
                "popularity_skew must be positive, got {}",
                self.popularity_skew
            ));
        }
        if !(1 <= self.min_attrs
            && self.min_attrs <= self.max_attrs
            && self.max_attrs <= self.n_attributes)
        {
            return fail(format!(
                "need 1 <= min_attrs ({}) <= max_attrs ({}) <= n_attributes ({})",
                self.min_attrs, self.max_attrs, self.n_attributes
            ));
        }
        Ok(())
    }

    /// Unnormalized popularity weight of the attribute at 0-based rank `rank`.
    pub fn popularity(&self, rank: usize) -> f64 {
        ((rank + 1) as f64).powf(-self.popularity_skew)
    }
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st", "ch",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "l", "m", "x"];
// Words that occur in query templates or the list surface form.
const RESERVED: &[&str] = &[
    "who", "likes", "and", "also", "both", "or", "but", "not", "the",
];

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    loop {
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
            w.push_str(CODAS[rng.random_range(0..CODAS.len())]);
        }
        if !RESERVED.contains(&w.as_str()) {
            let mut chars = w.chars();
            let first = chars.next().expect("non-empty").to_ascii_uppercase();
            return std::iter::once(first).chain(chars).collect();
        }
    }
}

fn synth_vocabulary(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<String> {
    // A lexicon smaller than the attribute count makes some attributes share
    // words, like "Hot Chocolate" and "Chocolate Cake".
    let lexicon_size = (cfg.n_attributes * 3 / 4).max(8);
    let mut lexicon = Vec::with_capacity(lexicon_size);
    let mut seen = HashSet::new();
    while lexicon.len() < lexicon_size {
        let syllables = rng.random_range(1..=3);
        let w = pseudo_word(rng, syllables);
        if seen.insert(w.clone()) {
            lexicon.push(w);
        }
    }
    let mut attrs = Vec::with_capacity(cfg.n_attributes);
    let mut seen = HashSet::new();
    while attrs.len() < cfg.n_attributes {
        let words = if rng.random_bool(0.5) { 1 } else { 2 };
        let a = (0..words)
            .map(|_| lexicon[rng.random_range(0..lexicon.len())].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        if seen.insert(a.clone()) {
            attrs.push(a);
        }
    }
    attrs
}

/// Generate a synthetic attribute-list corpus.
///
/// Each entity draws its attribute count uniformly from
/// `[min_attrs, max_attrs]` and samples that many distinct attributes by
/// weighted sampling without replacement, with Zipf weights
/// `1 / (rank + 1)^skew`. The draw uses exponential order keys (smallest
/// `Exp(1) / w` wins).
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Vec<EntityDoc>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = synth_vocabulary(cfg, &mut rng);
    let weights: Vec<f64> = (0..cfg.n_attributes).map(|r| cfg.popularity(r)).collect();
    let width = cfg.n_entities.saturating_sub(1).to_string().len().max(5);
    let splitter = ListSplitter::default();

    let mut docs = Vec::with_capacity(cfg.n_entities);
    let mut keys: Vec<(f64, usize)> = Vec::with_capacity(cfg.n_attributes);
    for i in 0..cfg.n_entities {
        let first = pseudo_word(&mut rng, 2);
        let syllables = rng.random_range(2..=3);
        let last = pseudo_word(&mut rng, syllables);
        let name = format!("{first} {last}");
        let count = rng.random_range(cfg.min_attrs..=cfg.max_attrs);

        keys.clear();
        for (rank, w) in weights.iter().enumerate() {
            // 1 - u lies in (0, 1], so the log is finite.
            let u: f64 = rng.random();
            keys.push((-(1.0 - u).ln() / w, rank));
        }
        keys.select_nth_unstable_by(count - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut chosen = keys[..count].to_vec();
        chosen.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let attributes: Vec<String> = chosen.iter().map(|&(_, r)| vocab[r].clone()).collect();

        let text = splitter.render(&name, &attributes);
        docs.push(EntityDoc {
            doc_id: format!("e{i:0width$}"),
            name,
            text,
            attributes,
        });
    }
    Ok(docs)
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusLine {
    #[serde(rename = "_id")]
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<String>,
    text: String,
}

/// A line of a corpus file that could not be turned into a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub docs: Vec<EntityDoc>,
    pub skipped: Vec<SkippedLine>,
}

/// Load a BEIR-style JSONL corpus (`_id`, optional `title`, `text`).
///
/// Malformed lines are skipped, logged, and reported in
/// [`LoadedCorpus::skipped`] with 1-based line numbers.
pub fn load_corpus(path: &Path) -> Result<LoadedCorpus> {
    load_corpus_with(path, &ListSplitter::default(), Parallelism::default())
}

pub fn load_corpus_with(
    path: &Path,
    splitter: &ListSplitter,
    mode: Parallelism,
) -> Result<LoadedCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;

    let parsed = par::map_indexed(mode, &lines, |i, line| {
        if line.trim().is_empty() {
            return None;
        }
        Some(
            serde_json::from_str::<CorpusLine>(line)
                .map_err(|e| SkippedLine {
                    line: i + 1,
                    reason: format!("invalid JSON: {e}"),
                })
                .and_then(|rec| {
                    splitter.parse(&rec.id, &rec.text).map_err(|e| SkippedLine {
                        line: i + 1,
                        reason: e.to_string(),
                    })
                }),
        )
    });

    let mut out = LoadedCorpus::default();
    for r in parsed.into_iter().flatten() {
        match r {
            Ok(doc) => out.docs.push(doc),
            Err(skip) => {
                tracing::warn!("{}:{}: skipped: {}", path.display(), skip.line, skip.reason);
                out.skipped.push(skip);
            }
        }
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, docs: &[EntityDoc]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        let line = CorpusLine {
            id: d.doc_id.clone(),
            title: Some(d.name.clone()),
            text: d.text.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Summary printed by `corpus inspect`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub attribute_count: usize,
    pub mean_attributes_per_doc: f64,
    /// Most frequent attributes, by descending document frequency then name.
    pub top_attributes: Vec<(String, usize)>,
}

pub fn corpus_stats(index: &AttributeIndex, top: usize) -> CorpusStats {
    let mut freq: Vec<(String, usize)> = index
        .postings()
        .map(|(a, p)| (a.to_string(), p.len()))
        .collect();
    let memberships: usize = freq.iter().map(|(_, n)| n).sum();
    freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    freq.truncate(top);
    CorpusStats {
        doc_count: index.doc_count(),
        attribute_count: index.attribute_count(),
        mean_attributes_per_doc: if index.doc_count() == 0 {
            0.0
        } else {
            memberships as f64 / index.doc_count() as f64
        },
        top_attributes: freq,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_quoted_limit_document() {
        let d = parse_entity_text(
            "d1",
            "Olinda Posso likes Bagels, Hot Chocolate, Pumpkin Seeds.",
        )
        .unwrap();
        assert_eq!(d.name, "Olinda Posso");
        assert_eq!(
            d.attributes,
            attrs(&["Bagels", "Hot Chocolate", "Pumpkin Seeds"])
        );
    }

    #[test]
    fn parses_single_and_oxford_lists() {
        assert_eq!(
            parse_entity_text("d2", "X likes Tea.").unwrap().attributes,
            attrs(&["Tea"])
        );
        let d = parse_entity_text("d3", "A B likes P, Q, and R.").unwrap();
        assert_eq!(d.name, "A B");
        assert_eq!(d.attributes, attrs(&["P", "Q", "R"]));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_entity_text("x", "no marker here"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_entity_text("x", "Bob likes ."),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_entity_text("x", "   "),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn duplicates_and_case() {
        let d = parse_entity_text("d", "Z likes Tea, tea, Tea, and  Milk .").unwrap();
        assert_eq!(d.attributes, attrs(&["Tea", "tea", "Milk"]));
    }

    #[test]
    fn render_matches_surface_form() {
        assert_eq!(render_entity_text("X", &attrs(&["Tea"])), "X likes Tea.");
        assert_eq!(
            render_entity_text("A B", &attrs(&["P", "Q", "R"])),
            "A B likes P, Q, and R."
        );
    }

    #[test]
    fn two_doc_index() {
        let corpus = vec![
            parse_entity_text("d1", "A likes P.").unwrap(),
            parse_entity_text("d2", "B likes P, and Q.").unwrap(),
        ];
        let idx = build_attribute_index(&corpus).unwrap();
        assert_eq!(idx.posting_ids("P").unwrap(), vec!["d1", "d2"]);
        assert_eq!(idx.posting_ids("Q").unwrap(), vec!["d2"]);
        assert_eq!(idx.attribute_count(), 2);
        assert_eq!(idx.doc_count(), 2);
    }

    #[test]
    fn duplicate_doc_ids_rejected() {
        let corpus = vec![
            parse_entity_text("d1", "A likes P.").unwrap(),
            parse_entity_text("d1", "B likes Q.").unwrap(),
        ];
        assert!(
            matches!(build_attribute_index(&corpus), Err(Error::DuplicateDocId(id)) if id == "d1")
        );
    }

    #[test]
    fn forced_single_doc_synth() {
        let cfg = SynthConfig {
            n_entities: 1,
            n_attributes: 1,
            popularity_skew: 1.0,
            min_attrs: 1,
            max_attrs: 1,
            seed: 3,
        };
        let docs = synth_corpus(&cfg).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].attributes.len(), 1);
    }

    #[test]
    fn synth_config_validation() {
        let ok = SynthConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            SynthConfig {
                n_entities: 0,
                ..ok.clone()
            },
            SynthConfig {
                n_attributes: 0,
                min_attrs: 0,
                max_attrs: 0,
                ..ok.clone()
            },
            SynthConfig {
                popularity_skew: 0.0,
                ..ok.clone()
            },
            SynthConfig {
                min_attrs: 0,
                ..ok.clone()
            },
            SynthConfig {
                min_attrs: 5,
                max_attrs: 4,
                ..ok.clone()
            },
            SynthConfig {
                min_attrs: 1,
                max_attrs: 201,
                ..ok.clone()
            },
        ] {
            assert!(
                matches!(synth_corpus(&bad), Err(Error::Config(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn synthesized_text_round_trips() {
        let cfg = SynthConfig {
            n_entities: 300,
            ..SynthConfig::default()
        };
        for doc in synth_corpus(&cfg).unwrap() {
            let back = parse_entity_text(&doc.doc_id, &doc.text).unwrap();
            assert_eq!(back.attributes, doc.attributes);
            assert_eq!(back.name, doc.name);
        }
    }

    #[test]
    fn load_skips_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"_id\":\"a\",\"title\":\"A\",\"text\":\"A likes P.\"}\n",
                "not json\n",
                "{\"_id\":\"b\",\"text\":\"no marker\"}\n",
                "\n",
                "{\"_id\":\"c\",\"text\":\"C likes Q, and P.\"}\n",
            ),
        )
        .unwrap();
        let loaded = load_corpus(&path).unwrap();
        let ids: Vec<_> = loaded.docs.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        let lines: Vec<_> = loaded.skipped.iter().map(|s| s.line).collect();
        assert_eq!(lines, [2, 3]);
    }

    #[test]
    fn load_missing_file_is_io_error() {
        assert!(matches!(
            load_corpus(Path::new("/nonexistent/x.jsonl")),
            Err(Error::Io { .. })
        ));
    }
}
